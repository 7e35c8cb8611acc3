use crate::error::{Error, Result};

use super::table::ScenePosteriorTable;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside every log.
pub const PROB_CLAMP: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {p} is not a probability")))
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: lengths {a} and {b}")))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse sigmoid of the clamped probability.
pub fn logit(p: f64) -> f64 {
    let p = clamp_prob(p);
    (p / (1.0 - p)).ln()
}

/// KL divergence between Bernoulli(p) and Bernoulli(q).
pub fn binary_kl(p: f64, q: f64) -> Result<f64> {
    check_prob("p", p)?;
    check_prob("q", q)?;
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    Ok(p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln())
}

/// `-log softmax(logits)[t]`.
pub fn scene_ce(logits: &[f64], t: usize) -> Result<f64> {
    if t >= logits.len() {
        return Err(Error::Range(format!("class {t} with {} logits", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[t])
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Summed binary KL from recorded teacher probabilities to the tempered
/// student sigmoid. The teacher side is not re-tempered.
pub fn kl_distill(teacher: &[f64], student_logits: &[f64], tau: f64) -> Result<f64> {
    same_len(teacher.len(), student_logits.len(), "kl_distill")?;
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature {tau}")));
    }
    teacher
        .iter()
        .zip(student_logits)
        .map(|(&t, &z)| binary_kl(t, sigmoid(z / tau)))
        .sum()
}

/// Squared Euclidean distance between pre-activation vectors.
pub fn sq_distill(teacher_pre: &[f64], student_pre: &[f64]) -> Result<f64> {
    same_len(teacher_pre.len(), student_pre.len(), "sq_distill")?;
    Ok(teacher_pre.iter().zip(student_pre).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `p(e) = Σ_k p(s_k) · P[k]`.
pub fn compound_event_dist(scene_probs: &[f64], table: &ScenePosteriorTable) -> Result<Vec<f64>> {
    same_len(scene_probs.len(), table.scenes(), "compound_event_dist")?;
    let total: f64 = scene_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || scene_probs.iter().any(|&p| p < 0.0) {
        return Err(Error::Domain(format!("scene probabilities sum to {total}")));
    }
    let mut out = vec![0.0; table.events()];
    for (s, row) in scene_probs.iter().zip(&table.p) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += s * v;
        }
    }
    Ok(out)
}

pub fn l_e1(teacher: &[f64], scene_probs: &[f64], table: &ScenePosteriorTable) -> Result<f64> {
    let pe = compound_event_dist(scene_probs, table)?;
    same_len(teacher.len(), pe.len(), "l_e1")?;
    teacher.iter().zip(&pe).map(|(&t, &q)| binary_kl(t, q.clamp(0.0, 1.0))).sum()
}

/// Cosine distance `1 - cos(d, p_e)`.
pub fn l_e2(d: &[f64], p_e: &[f64]) -> Result<f64> {
    same_len(d.len(), p_e.len(), "l_e2")?;
    let norm_p = p_e.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_d = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_p == 0.0 || norm_d == 0.0 {
        return Err(Error::Degenerate("cosine with a zero vector".into()));
    }
    let dot: f64 = d.iter().zip(p_e).map(|(a, b)| a * b).sum();
    Ok(1.0 - dot / (norm_d * norm_p))
}

pub fn l_e(teacher: &[f64], scene_probs: &[f64], t: usize, table: &ScenePosteriorTable, beta: f64) -> Result<f64> {
    if t >= table.scenes() {
        return Err(Error::Range(format!("scene {t} with {} scenes", table.scenes())));
    }
    let pe = compound_event_dist(scene_probs, table)?;
    Ok(l_e1(teacher, scene_probs, table)? + beta * l_e2(&table.relevance[t], &pe)?)
}
