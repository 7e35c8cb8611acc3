use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{grad_check_many, Tape, Tensor};

fn random_table(rng: &mut ChaCha8Rng, k: usize, e: usize) -> ScenePosteriorTable {
    let rows: Vec<(usize, Vec<f64>)> = (0..3 * k)
        .map(|i| (i % k, (0..e).map(|_| rng.random_range(0.02..0.98)).collect()))
        .collect();
    ScenePosteriorTable::from_rows(&rows, k, &[]).unwrap()
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn row(t: &Tensor, i: usize) -> Vec<f64> {
    t.row(i).to_vec()
}

#[test]
fn tape_losses_match_scalar_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let (b, k, e) = (4, 3, 5);
    let table = random_table(&mut rng, k, e);
    let logits = rand_matrix(&mut rng, b, k, -2.0, 2.0);
    let ev_logits = rand_matrix(&mut rng, b, e, -3.0, 3.0);
    let teacher = rand_matrix(&mut rng, b, e, 0.01, 0.99);
    let labels = [0, 2, 1, 2];

    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone(), true);
    let ze = tape.leaf(ev_logits.clone(), true);
    let ce = scene_ce_mean(&mut tape, z, &labels).unwrap();
    let kl = kl_distill_mean(&mut tape, &teacher, ze, 2.0).unwrap();
    let sq = sq_distill_mean(&mut tape, &teacher_pre_activations(&teacher), ze).unwrap();
    let le = l_e_mean(&mut tape, &teacher, z, &labels, &table, 0.3).unwrap();

    let mean = |f: &dyn Fn(usize) -> f64| (0..b).map(f).sum::<f64>() / b as f64;
    let ce_ref = mean(&|i| scene_ce(&row(&logits, i), labels[i]).unwrap());
    let kl_ref = mean(&|i| kl_distill(&row(&teacher, i), &row(&ev_logits, i), 2.0).unwrap());
    let sq_ref = mean(&|i| {
        let pre: Vec<f64> = row(&teacher, i).iter().map(|&p| logit(p)).collect();
        sq_distill(&pre, &row(&ev_logits, i)).unwrap()
    });
    let le_ref = mean(&|i| l_e(&row(&teacher, i), &softmax(&row(&logits, i)), labels[i], &table, 0.3).unwrap());
    for (v, r) in [(ce, ce_ref), (kl, kl_ref), (sq, sq_ref), (le, le_ref)] {
        let got = tape.value(v).item().unwrap();
        assert!((got - r).abs() < 1e-12, "{got} vs {r}");
    }
}

#[test]
fn losses_pass_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (b, k, e) = (3, 4, 5);
    let table = random_table(&mut rng, k, e);
    let teacher = rand_matrix(&mut rng, b, e, 0.05, 0.95);
    let labels = [1, 3, 0];
    let logits = rand_matrix(&mut rng, b, k, -2.0, 2.0);
    let ev = rand_matrix(&mut rng, b, e, -2.0, 2.0);

    let err = grad_check_many(|t, v| scene_ce_mean(t, v[0], &labels), &[logits.clone()], 1e-5).unwrap();
    assert!(err < 1e-5, "ce {err}");
    let err = grad_check_many(|t, v| kl_distill_mean(t, &teacher, v[0], 2.0), &[ev.clone()], 1e-5).unwrap();
    assert!(err < 1e-5, "kl {err}");
    let pre = teacher_pre_activations(&teacher);
    let err = grad_check_many(|t, v| sq_distill_mean(t, &pre, v[0]), &[ev.clone()], 1e-5).unwrap();
    assert!(err < 1e-5, "sq {err}");
    let err = grad_check_many(|t, v| l_e_mean(t, &teacher, v[0], &labels, &table, 0.0), &[logits.clone()], 1e-5).unwrap();
    assert!(err < 1e-5, "le1 {err}");
    let err = grad_check_many(|t, v| l_e_mean(t, &teacher, v[0], &labels, &table, 0.5), &[logits], 1e-5).unwrap();
    assert!(err < 1e-5, "le {err}");
}

#[test]
fn compound_jacobian_is_table_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (k, e) = (3, 4);
    let table = random_table(&mut rng, k, e);
    for j in 0..e {
        let mut tape = Tape::new();
        let probs = tape.leaf(Tensor::new(vec![1, k], vec![0.2, 0.3, 0.5]).unwrap(), true);
        let pe = compound_event_dist_graph(&mut tape, probs, &table).unwrap();
        let mut sel = vec![0.0; e];
        sel[j] = 1.0;
        let sel = tape.constant(Tensor::new(vec![1, e], sel).unwrap());
        let picked = tape.mul(pe, sel).unwrap();
        let s = tape.sum(picked).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(probs).unwrap();
        for (kk, gv) in g.data().iter().enumerate() {
            assert_eq!(*gv, table.p[kk][j]);
        }
    }
}

#[test]
fn total_loss_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let (b, k, e) = (5, 3, 4);
    let table = random_table(&mut rng, k, e);
    let logits = rand_matrix(&mut rng, b, k, -1.0, 1.0);
    let fusion = rand_matrix(&mut rng, b, e, -2.0, 2.0);
    let audio = rand_matrix(&mut rng, b, e, -2.0, 2.0);
    let teacher = rand_matrix(&mut rng, b, e, 0.05, 0.95);
    let labels = [0, 1, 2, 1, 0];

    let eval = |cfg: &LossConfig, audio_logits: &Tensor| {
        let mut tape = Tape::new();
        let z = tape.leaf(logits.clone(), true);
        let f = tape.leaf(fusion.clone(), true);
        let a = tape.leaf(audio_logits.clone(), true);
        let inp = LossInputs {
            scene_logits: z,
            fusion_event_logits: Some(f),
            audio_event_logits: Some(a),
            labels: &labels,
            teacher_probs: Some(&teacher),
            table: Some(&table),
        };
        let v = total_loss(&mut tape, &inp, cfg).unwrap();
        tape.value(v).item().unwrap()
    };
    let ls = (0..b).map(|i| scene_ce(&row(&logits, i), labels[i]).unwrap()).sum::<f64>() / b as f64;
    for approach in Approach::ALL {
        let zero_alpha = LossConfig {
            approach,
            alpha: 0.0,
            ..LossConfig::default()
        };
        assert!((eval(&zero_alpha, &audio) - ls).abs() < 1e-12, "{approach}");
    }

    // a student sitting exactly on the teacher adds nothing
    let at_teacher = teacher_pre_activations(&teacher);
    let kl = LossConfig {
        approach: Approach::KlNa,
        tau: 1.0,
        ..LossConfig::default()
    };
    assert!((eval(&kl, &at_teacher) - ls).abs() < 1e-12);

    let cfg = LossConfig {
        approach: Approach::SqNva,
        alpha: 0.7,
        ..LossConfig::default()
    };
    let sq: f64 = (0..b)
        .map(|i| {
            let pre: Vec<f64> = row(&teacher, i).iter().map(|&p| logit(p)).collect();
            sq_distill(&pre, &row(&fusion, i)).unwrap()
        })
        .sum::<f64>()
        / b as f64;
    assert!((eval(&cfg, &audio) - (ls + 0.7 * sq)).abs() < 1e-12);

    let ablation = LossConfig {
        approach: Approach::Le,
        scene_loss: false,
        ..LossConfig::default()
    };
    let le: f64 = (0..b)
        .map(|i| l_e(&row(&teacher, i), &softmax(&row(&logits, i)), labels[i], &table, 0.001).unwrap())
        .sum::<f64>()
        / b as f64;
    assert!((eval(&ablation, &audio) - le).abs() < 1e-12);
}

#[test]
fn missing_table_is_reported() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::zeros(&[1, 2]), true);
    let teacher = Tensor::full(&[1, 2], 0.5);
    let inp = LossInputs {
        scene_logits: z,
        fusion_event_logits: None,
        audio_event_logits: None,
        labels: &[0],
        teacher_probs: Some(&teacher),
        table: None,
    };
    let cfg = LossConfig {
        approach: Approach::Le,
        ..LossConfig::default()
    };
    let err = total_loss(&mut tape, &inp, &cfg).unwrap_err();
    assert_eq!(err.class(), "MISSING_POSTERIORS");
}

#[test]
fn high_temperature_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let tau = 100.0;
    for _ in 0..50 {
        let z0: Vec<f64> = (0..32).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z: Vec<f64> = (0..32).map(|_| rng.random_range(-3.0..3.0)).collect();
        let teacher: Vec<f64> = z0.iter().map(|v| sigmoid(v / tau)).collect();
        let kl = kl_distill(&teacher, &z, tau).unwrap();
        let sq = sq_distill(&z0, &z).unwrap();
        assert!((8.0 * tau * tau * kl - sq).abs() / sq < 0.02);
    }
}

proptest! {
    #[test]
    fn binary_kl_is_nonnegative_and_zero_on_equal(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let v = binary_kl(p, q).unwrap();
        prop_assert!(v >= -1e-15);
        prop_assert!(binary_kl(p, p).unwrap().abs() < 1e-12);
        if (p - q).abs() > 1e-3 {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn compound_stays_within_row_bounds(w in proptest::collection::vec(0.01f64..1.0, 4), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_table(&mut rng, 4, 3);
        let s: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / s).collect();
        let pe = compound_event_dist(&probs, &table).unwrap();
        for (i, v) in pe.iter().enumerate() {
            let col: Vec<f64> = table.p.iter().map(|r| r[i]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn relevance_is_unit_and_nonnegative(seed in 0u64..500, n in 1usize..6, e in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..e).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let d = event_relevance(&rows).unwrap();
        prop_assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(d.iter().all(|&x| x >= 0.0));
    }
}
