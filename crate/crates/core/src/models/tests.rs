use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::losses::scene_ce_mean;
use crate::numcore::grad_check_many;

fn tiny() -> ModelConfig {
    ModelConfig {
        scenes: 3,
        events: 2,
        image_widths: vec![2, 4],
        audio_widths: vec![2, 4],
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn randomize_heads(m: &mut FusionModel, rng: &mut ChaCha8Rng) {
    for name in ["fs.w", "fs.b", "fe.w", "fe.b", "fa.w", "fa.b"] {
        let shape = m.params.get(name).unwrap().shape().to_vec();
        m.params.set(name, random(rng, &shape)).unwrap();
    }
}

#[test]
fn zero_heads_give_uniform_scene_probabilities() {
    let m = FusionModel::new(ModelConfig::default(), 1).unwrap();
    let mut tape = Tape::new();
    let images = Tensor::zeros(&[1, 3, 64, 64]);
    let audio = Tensor::zeros(&[1, 1, 400, 64]);
    let out = m.forward(&mut tape, &images, &audio, ModalityMask::None, false).unwrap();
    let p = tape.softmax(out.scene_logits).unwrap();
    for &v in tape.value(p).data() {
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
    }
    assert_eq!(tape.shape(out.visual_maps.unwrap()), &[1, 64, 4, 4]);
}

#[test]
fn encoder_width_matches_config() {
    let m = FusionModel::new(tiny(), 3).unwrap();
    for (h, w) in [(8, 8), (16, 12), (33, 9)] {
        let mut tape = Tape::new();
        let out = m
            .forward(&mut tape, &Tensor::zeros(&[2, 3, h, w]), &Tensor::zeros(&[2, 1, h, w]), ModalityMask::None, false)
            .unwrap();
        assert_eq!(tape.shape(out.scene_logits), &[2, 3]);
    }
    let bad = ModelConfig {
        audio_widths: vec![2, 5],
        ..tiny()
    };
    assert!(matches!(FusionModel::new(bad, 0), Err(Error::Config(_))));
}

#[test]
fn mismatched_inputs_are_shape_errors() {
    let m = FusionModel::new(tiny(), 3).unwrap();
    let mut tape = Tape::new();
    let r = m.forward(&mut tape, &Tensor::zeros(&[2, 1, 8, 8]), &Tensor::zeros(&[2, 1, 8, 8]), ModalityMask::None, false);
    assert!(matches!(r, Err(Error::Shape(_))));
    let r = m.forward(&mut tape, &Tensor::zeros(&[2, 3, 8, 8]), &Tensor::zeros(&[3, 1, 8, 8]), ModalityMask::None, false);
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn fusion_scene_loss_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = FusionModel::new(tiny(), 5).unwrap();
    randomize_heads(&mut m, &mut rng);
    let images = random(&mut rng, &[2, 3, 8, 8]);
    let audio = random(&mut rng, &[2, 1, 12, 8]);
    let labels = [2, 0];
    let err = grad_check_many(
        |tape, vars| {
            let out = m.forward_with(tape, vars.to_vec(), &images, &audio, ModalityMask::None)?;
            scene_ce_mean(tape, out.scene_logits, &labels)
        },
        m.params.tensors(),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn masking_audio_matches_image_pathway() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut m = FusionModel::new(tiny(), 6).unwrap();
    randomize_heads(&mut m, &mut rng);
    let d = m.config.feature_dim();
    let mut fs = m.params.get("fs.w").unwrap().clone();
    for row in fs.data_mut().chunks_mut(2 * d) {
        row[d..].iter_mut().for_each(|v| *v = 0.0);
    }
    m.params.set("fs.w", fs).unwrap();
    let images = random(&mut rng, &[3, 3, 8, 8]);
    let audio = random(&mut rng, &[3, 1, 8, 8]);
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &images, &audio, ModalityMask::ImageOnly, false).unwrap();
    let expected = m.image_only_logits(&images).unwrap();
    assert_eq!(tape.value(out.scene_logits), &expected);

    // masking is the same as feeding zeros
    let mut t2 = Tape::new();
    let zeros = m.forward(&mut t2, &images, &Tensor::zeros(&[3, 1, 8, 8]), ModalityMask::None, false).unwrap();
    assert_eq!(tape.value(out.scene_logits), t2.value(zeros.scene_logits));
}

#[test]
fn masked_branch_gets_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut m = FusionModel::new(tiny(), 7).unwrap();
    randomize_heads(&mut m, &mut rng);
    let images = random(&mut rng, &[2, 3, 8, 8]);
    let audio = random(&mut rng, &[2, 1, 8, 8]);
    for (mask, prefix) in [(ModalityMask::ImageOnly, "a."), (ModalityMask::SoundOnly, "v.")] {
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &images, &audio, mask, true).unwrap();
        let loss = scene_ce_mean(&mut tape, out.scene_logits, &[0, 1]).unwrap();
        tape.backward(loss).unwrap();
        let mut other_moved = false;
        for (name, &v) in m.params.names().iter().zip(&out.params) {
            let nonzero = tape.grad(v).is_some_and(|g| g.data().iter().any(|&x| x != 0.0));
            if name.starts_with(prefix) {
                assert!(!nonzero, "{name} under {mask}");
            } else if name.contains("conv") {
                other_moved |= nonzero;
            }
        }
        assert!(other_moved, "unmasked encoder should learn under {mask}");
    }
}

#[test]
fn teacher_is_deterministic_and_initializes_students() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut t = TeacherModel::new(tiny(), 8).unwrap();
    for name in ["fa.w", "fa.b"] {
        let shape = t.params.get(name).unwrap().shape().to_vec();
        t.params.set(name, random(&mut rng, &shape)).unwrap();
    }
    let frozen = t.freeze();
    let audio = random(&mut rng, &[4, 1, 12, 8]);
    let a = frozen.predict(&audio).unwrap();
    let b = frozen.predict(&audio).unwrap();
    assert_eq!(a, b);
    assert!(a.data().iter().all(|&p| p > 0.0 && p < 1.0));
    let z1 = frozen.predict(&Tensor::zeros(&[1, 1, 12, 8])).unwrap();
    assert_eq!(z1, frozen.predict(&Tensor::zeros(&[1, 1, 12, 8])).unwrap());

    let mut student = FusionModel::new(tiny(), 99).unwrap();
    student.init_from_teacher(&frozen).unwrap();
    let images = random(&mut rng, &[4, 3, 8, 8]);
    let mut tape = Tape::new();
    let out = student.forward(&mut tape, &images, &audio, ModalityMask::None, false).unwrap();
    let fe = tape.value(out.fusion_event_logits).map(crate::losses::sigmoid);
    let fa = tape.value(out.audio_event_logits).map(crate::losses::sigmoid);
    assert!(fe.max_abs_diff(&a) < 1e-15);
    assert_eq!(fa, a);
}

#[test]
fn cam_examples() {
    let map = Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 2.0, 5.0]).unwrap();
    let w = Tensor::new(vec![1, 2], vec![1.0, 7.0]).unwrap();
    let c = cam(0, &map, &w).unwrap();
    assert_eq!(c.data(), &[0.0, 0.5, 0.25, 1.0]);

    let flat = Tensor::full(&[2, 3, 3], 0.4);
    let w = Tensor::new(vec![2, 4], vec![1.0, -2.0, 5.0, 5.0, 0.5, 0.5, 0.0, 0.0]).unwrap();
    assert!(cam(1, &flat, &w).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(matches!(cam(2, &flat, &w), Err(Error::Range(_))));
}

#[test]
fn checkpoints_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut m = FusionModel::new(tiny(), 9).unwrap();
    randomize_heads(&mut m, &mut rng);
    Checkpoint::save_fusion(&dir.path().join("student"), &m, 2.0, Some("abc"), 9).unwrap();
    let (back, desc) = Checkpoint::load_fusion(&dir.path().join("student")).unwrap();
    assert_eq!(back, m);
    assert_eq!(desc.snapshot_id.as_deref(), Some("abc"));
    assert_eq!(desc.tau, 2.0);

    let frozen = TeacherModel::new(tiny(), 4).unwrap().freeze();
    Checkpoint::save_teacher(&dir.path().join("teacher"), &frozen, 4).unwrap();
    let t = Checkpoint::load_teacher(&dir.path().join("teacher")).unwrap();
    assert_eq!(t.snapshot_id(), frozen.snapshot_id());
    assert_eq!(t.checksum(), frozen.checksum());

    assert!(matches!(Checkpoint::load_teacher(&dir.path().join("student")), Err(Error::State(_))));
    assert!(matches!(Checkpoint::load_teacher(&dir.path().join("missing")), Err(Error::State(_))));
}
