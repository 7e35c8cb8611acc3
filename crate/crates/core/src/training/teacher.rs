use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_rng, Manifest, Split};
use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::models::{FrozenTeacher, ModelConfig, TeacherModel};
use crate::numcore::{Pointwise, Tape, Tensor, Var};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::data::Prepared;
use super::EVAL_BATCH;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    /// Upper bound on pretraining epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Stop as soon as the mean per-event accuracy reaches this.
    pub target_accuracy: f64,
    /// Below this after the last epoch, pretraining is declared failed.
    pub min_accuracy: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            epochs: 20,
            batch_size: 32,
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            target_accuracy: 0.85,
            min_accuracy: 0.60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherReport {
    pub epochs_run: usize,
    /// Mean per-event accuracy on the training split after each epoch.
    pub accuracy: Vec<f64>,
    pub snapshot_id: String,
}

/// Mean over rows of `Σ_e softplus(z) − y·z`, the multi-label binary cross-entropy.
pub fn bce_with_logits_mean(tape: &mut Tape, targets: &Tensor, logits: Var) -> Result<Var> {
    if tape.shape(logits) != targets.shape() {
        return Err(Error::Shape(format!("bce {:?} vs {:?}", tape.shape(logits), targets.shape())));
    }
    let b = targets.shape()[0] as f64;
    let sp = tape.pointwise(Pointwise::Softplus, logits)?;
    let y = tape.constant(targets.clone());
    let yz = tape.mul(y, logits)?;
    let d = tape.sub(sp, yz)?;
    let s = tape.sum(d)?;
    tape.scale(s, 1.0 / b)
}

/// Fraction of (sample, event) pairs where `p > 0.5` agrees with the target.
pub fn event_accuracy(teacher: &TeacherModel, data: &Prepared, idx: &[usize]) -> Result<f64> {
    let mut hits = 0usize;
    for chunk in idx.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let (logits, _) = teacher.forward(&mut tape, &data.batch_audio(chunk)?, false)?;
        let z = tape.value(logits);
        for (row, &i) in z.data().chunks(data.event_count).zip(chunk) {
            hits += row
                .iter()
                .zip(&data.events[i])
                .filter(|(&v, &y)| (sigmoid(v) > 0.5) == (y == 1))
                .count();
        }
    }
    Ok(hits as f64 / (idx.len() * data.event_count) as f64)
}

/// Train the audio encoder and event head on the training split with binary
/// cross-entropy, stopping at the target accuracy or the epoch cap.
pub fn pretrain_teacher(cfg: &TeacherConfig, model: &ModelConfig, data: &Prepared, seed: u64) -> Result<(FrozenTeacher, TeacherReport)> {
    let train = data.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("teacher batch size must be positive".into()));
    }
    let mut t = TeacherModel::new(
        ModelConfig {
            events: data.event_count,
            ..model.clone()
        },
        seed,
    )?;
    let mut state = AdamState::new(t.params.tensors());
    let mut accuracy = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order = train.clone();
        order.shuffle(&mut sample_rng(seed, "teacher-batches", &epoch.to_string()));
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let (logits, vars) = t.forward(&mut tape, &data.batch_audio(batch)?, true)?;
            let loss = bce_with_logits_mean(&mut tape, &data.batch_events(batch)?, logits)?;
            tape.backward(loss)?;
            let grads: Vec<Option<&Tensor>> = vars.iter().map(|&v| tape.grad(v)).collect();
            adam_step(t.params.tensors_mut(), &grads, &mut state, &cfg.optimizer)?;
        }
        let acc = event_accuracy(&t, data, &train)?;
        accuracy.push(acc);
        if acc >= cfg.target_accuracy {
            break;
        }
    }
    let epochs_run = accuracy.len();
    if accuracy.is_empty() {
        accuracy.push(event_accuracy(&t, data, &train)?);
    }
    let last = accuracy[accuracy.len() - 1];
    if last < cfg.min_accuracy {
        return Err(Error::Pretrain(format!(
            "per-event accuracy {last:.4} is below {} after {} epochs",
            cfg.min_accuracy,
            cfg.epochs
        )));
    }
    let frozen = t.freeze();
    let report = TeacherReport {
        epochs_run,
        accuracy,
        snapshot_id: frozen.snapshot_id().to_owned(),
    };
    Ok((frozen, report))
}

/// Teacher probabilities for every record, in record order.
pub fn teacher_outputs(teacher: &FrozenTeacher, data: &Prepared) -> Result<Vec<Vec<f64>>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(all.len());
    for chunk in all.chunks(EVAL_BATCH) {
        let p = teacher.predict(&data.batch_audio(chunk)?)?;
        out.extend(p.data().chunks(data.event_count).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Store teacher probabilities in both the manifest and the in-memory cache.
pub fn cache_teacher_outputs(teacher: &FrozenTeacher, data: &mut Prepared, m: &mut Manifest) -> Result<()> {
    let probs = teacher_outputs(teacher, data)?;
    if m.records.len() != probs.len() {
        return Err(Error::Shape("manifest and prepared data differ in length".into()));
    }
    for ((r, slot), p) in m.records.iter_mut().zip(data.teacher.iter_mut()).zip(probs) {
        r.teacher = Some(p.clone());
        *slot = Some(p);
    }
    Ok(())
}
