//! Differentiable batch versions of the objectives, recorded on a [`Tape`].
//! Every batch loss is the mean over samples of a per-sample sum.

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

use super::scalar::{logit, PROB_CLAMP};
use super::table::ScenePosteriorTable;
use super::{Approach, LossConfig};

fn batch_rows(tape: &Tape, x: Var, what: &str) -> Result<(usize, usize)> {
    match *tape.shape(x) {
        [b, n] => Ok((b, n)),
        ref s => Err(Error::Shape(format!("{what} expects [batch, width], got {s:?}"))),
    }
}

fn expect_shape(t: &Tensor, shape: &[usize], what: &str) -> Result<()> {
    if t.shape() == shape {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: {:?} vs {shape:?}", t.shape())))
    }
}

/// Mean cross-entropy of `[B, K]` logits against integer labels.
pub fn scene_ce_mean(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, k) = batch_rows(tape, logits, "scene_ce")?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for batch {b}", labels.len())));
    }
    let mut onehot = vec![0.0; b * k];
    for (i, &t) in labels.iter().enumerate() {
        if t >= k {
            return Err(Error::Range(format!("class {t} with {k} logits")));
        }
        onehot[i * k + t] = 1.0;
    }
    let onehot = tape.constant(Tensor::new(vec![b, k], onehot)?);
    let ls = tape.log_softmax(logits)?;
    let picked = tape.mul(onehot, ls)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / b as f64)
}

/// Mean over rows of `Σ_i C(p_i ‖ q_i)` given `ln q` and `ln(1 - q)`.
fn binary_kl_from_logs(tape: &mut Tape, p: &Tensor, log_q: Var, log_1mq: Var) -> Result<Var> {
    let b = p.shape()[0] as f64;
    let entropy_part: f64 = p
        .data()
        .iter()
        .map(|&v| {
            let v = v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            v * v.ln() + (1.0 - v) * (1.0 - v).ln()
        })
        .sum();
    let pc = tape.constant(p.map(|v| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)));
    let qc = tape.constant(p.map(|v| 1.0 - v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)));
    let a = tape.mul(pc, log_q)?;
    let c = tape.mul(qc, log_1mq)?;
    let cross = tape.add(a, c)?;
    let s = tape.sum(cross)?;
    let s = tape.scale(s, -1.0 / b)?;
    tape.shift(s, entropy_part / b)
}

/// Binary-KL distillation from teacher probabilities to `sigmoid(z / τ)`.
///
/// Log-probabilities come from softplus, which is exact wherever the scalar
/// version's clamp is inactive (|z/τ| below about 27).
pub fn kl_distill_mean(tape: &mut Tape, teacher: &Tensor, logits: Var, tau: f64) -> Result<Var> {
    let (b, e) = batch_rows(tape, logits, "kl_distill")?;
    expect_shape(teacher, &[b, e], "kl_distill teacher")?;
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature {tau}")));
    }
    let x = tape.scale(logits, 1.0 / tau)?;
    let neg = tape.scale(x, -1.0)?;
    let sp_neg = tape.pointwise(crate::numcore::Pointwise::Softplus, neg)?;
    let log_q = tape.scale(sp_neg, -1.0)?;
    let sp = tape.pointwise(crate::numcore::Pointwise::Softplus, x)?;
    let log_1mq = tape.scale(sp, -1.0)?;
    binary_kl_from_logs(tape, teacher, log_q, log_1mq)
}

/// Mean squared distance between teacher and student pre-activations.
pub fn sq_distill_mean(tape: &mut Tape, teacher_pre: &Tensor, student_pre: Var) -> Result<Var> {
    let (b, e) = batch_rows(tape, student_pre, "sq_distill")?;
    expect_shape(teacher_pre, &[b, e], "sq_distill teacher")?;
    let t = tape.constant(teacher_pre.clone());
    let d = tape.sub(student_pre, t)?;
    let d2 = tape.pointwise(crate::numcore::Pointwise::Square, d)?;
    let s = tape.sum(d2)?;
    tape.scale(s, 1.0 / b as f64)
}

/// `[B, K]` scene probabilities times the fixed `[K, E]` table.
pub fn compound_event_dist(tape: &mut Tape, scene_probs: Var, table: &ScenePosteriorTable) -> Result<Var> {
    let (_, k) = batch_rows(tape, scene_probs, "compound_event_dist")?;
    if k != table.scenes() {
        return Err(Error::Shape(format!("{k} scene probabilities for a {}-scene table", table.scenes())));
    }
    let p = tape.constant(table.p_tensor());
    tape.matmul(scene_probs, p)
}

pub fn l_e1_mean(tape: &mut Tape, teacher: &Tensor, p_e: Var) -> Result<Var> {
    let (b, e) = batch_rows(tape, p_e, "l_e1")?;
    expect_shape(teacher, &[b, e], "l_e1 teacher")?;
    let log_q = tape.log(p_e)?;
    let one_minus = tape.one_minus(p_e)?;
    let log_1mq = tape.log(one_minus)?;
    binary_kl_from_logs(tape, teacher, log_q, log_1mq)
}

/// Mean cosine distance between each row of `p_e` and its relevance row.
pub fn l_e2_mean(tape: &mut Tape, relevance_rows: &Tensor, p_e: Var) -> Result<Var> {
    let (b, e) = batch_rows(tape, p_e, "l_e2")?;
    expect_shape(relevance_rows, &[b, e], "l_e2 relevance")?;
    if tape.value(p_e).data().chunks(e).any(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate("event distribution is all zeros".into()));
    }
    let mut d = relevance_rows.clone();
    for row in d.data_mut().chunks_mut(e) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::Degenerate("zero relevance vector".into()));
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    let d = tape.constant(d);
    let prod = tape.mul(d, p_e)?;
    let dot = tape.sum_last(prod)?;
    let sq = tape.pointwise(crate::numcore::Pointwise::Square, p_e)?;
    let sq = tape.sum_last(sq)?;
    let norm = tape.pointwise(crate::numcore::Pointwise::Sqrt, sq)?;
    let cos = tape.div(dot, norm)?;
    let m = tape.mean(cos)?;
    tape.one_minus(m)
}

/// `L_E1 + β·L_E2` from scene logits; gradients reach only the logits.
pub fn l_e_mean(
    tape: &mut Tape,
    teacher: &Tensor,
    scene_logits: Var,
    labels: &[usize],
    table: &ScenePosteriorTable,
    beta: f64,
) -> Result<Var> {
    let probs = tape.softmax(scene_logits)?;
    let p_e = compound_event_dist(tape, probs, table)?;
    let l1 = l_e1_mean(tape, teacher, p_e)?;
    if beta == 0.0 {
        return Ok(l1);
    }
    let e = table.events();
    let mut rows = Vec::with_capacity(labels.len() * e);
    for &t in labels {
        let d = table
            .relevance
            .get(t)
            .ok_or_else(|| Error::Range(format!("scene {t} with {} scenes", table.scenes())))?;
        rows.extend_from_slice(d);
    }
    let rows = Tensor::new(vec![labels.len(), e], rows)?;
    let l2 = l_e2_mean(tape, &rows, p_e)?;
    let l2 = tape.scale(l2, beta)?;
    tape.add(l1, l2)
}

/// Network outputs and targets for one mini-batch.
pub struct LossInputs<'a> {
    pub scene_logits: Var,
    /// Event head on the concatenated representation.
    pub fusion_event_logits: Option<Var>,
    /// Event head on the audio representation alone.
    pub audio_event_logits: Option<Var>,
    pub labels: &'a [usize],
    pub teacher_probs: Option<&'a Tensor>,
    pub table: Option<&'a ScenePosteriorTable>,
}

/// Teacher pre-activations recovered from cached probabilities.
pub fn teacher_pre_activations(probs: &Tensor) -> Tensor {
    probs.map(logit)
}

/// `L_s + α·L_Ω`, or `L_Ω` alone when the scene loss is disabled.
pub fn total_loss(tape: &mut Tape, inp: &LossInputs<'_>, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let transfer = match cfg.approach {
        Approach::None => None,
        approach => {
            let teacher = inp
                .teacher_probs
                .ok_or_else(|| Error::State("transfer loss needs cached teacher probabilities".into()))?;
            let need = |v: Option<Var>, what: &str| {
                v.ok_or_else(|| Error::State(format!("approach {approach} needs the {what} event head")))
            };
            Some(match approach {
                Approach::KlNa => kl_distill_mean(tape, teacher, need(inp.audio_event_logits, "audio")?, cfg.tau)?,
                Approach::KlNva => kl_distill_mean(tape, teacher, need(inp.fusion_event_logits, "fusion")?, cfg.tau)?,
                Approach::SqNa => {
                    sq_distill_mean(tape, &teacher_pre_activations(teacher), need(inp.audio_event_logits, "audio")?)?
                }
                Approach::SqNva => {
                    sq_distill_mean(tape, &teacher_pre_activations(teacher), need(inp.fusion_event_logits, "fusion")?)?
                }
                Approach::Le => {
                    let table = inp.table.ok_or(Error::MissingPosteriors)?;
                    l_e_mean(tape, teacher, inp.scene_logits, inp.labels, table, cfg.beta)?
                }
                Approach::None => unreachable!(),
            })
        }
    };
    match (cfg.scene_loss, transfer) {
        (true, None) => scene_ce_mean(tape, inp.scene_logits, inp.labels),
        (true, Some(t)) => {
            let ls = scene_ce_mean(tape, inp.scene_logits, inp.labels)?;
            let t = tape.scale(t, cfg.alpha)?;
            tape.add(ls, t)
        }
        (false, Some(t)) => Ok(t),
        (false, None) => Err(Error::Config("scene loss disabled and no transfer approach selected".into())),
    }
}
