use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_rng, Split};
use crate::error::{Error, Result};
use crate::evaluation::{argmax, weighted_prf, ConfusionMatrix, Metrics};
use crate::losses::{compound_event_dist, sigmoid, total_loss, Approach, LossConfig, LossInputs, ScenePosteriorTable};
use crate::models::{FrozenTeacher, FusionModel, ModalityMask};
use crate::numcore::{Tape, Tensor};

use super::adam::{adam_step, AdamState};
use super::data::Prepared;
use super::{ExperimentConfig, Init, EVAL_BATCH};

/// Everything that distinguishes one training run inside an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub loss: LossConfig,
    pub mask: ModalityMask,
    pub init: Init,
    pub seed: u64,
}

/// One line of the per-epoch metrics log. Epoch 0 is the untrained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the batch losses; absent for epoch 0.
    pub train_loss: Option<f64>,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_fscore: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// Parameters from the epoch with the best validation F.
    pub model: FusionModel,
    pub log: Vec<EpochLog>,
    pub epoch_best: usize,
    pub test: Metrics,
    pub confusion: ConfusionMatrix,
}

impl RunResult {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|l| serde_json::to_string(l).expect("log line serializes") + "\n")
            .collect()
    }
}

/// Network outputs for a set of samples, in the order requested.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub scene_probs: Vec<Vec<f64>>,
    pub fusion_events: Vec<Vec<f64>>,
    pub audio_events: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn predicted_scenes(&self) -> Vec<usize> {
        self.scene_probs.iter().map(|p| argmax(p)).collect()
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let w = t.shape()[1];
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}

pub fn predict(model: &FusionModel, data: &Prepared, idx: &[usize], mask: ModalityMask) -> Result<Predictions> {
    let mut p = Predictions {
        scene_probs: Vec::with_capacity(idx.len()),
        fusion_events: Vec::with_capacity(idx.len()),
        audio_events: Vec::with_capacity(idx.len()),
    };
    for chunk in idx.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &data.batch_images(chunk)?, &data.batch_audio(chunk)?, mask, false)?;
        let probs = tape.softmax(out.scene_logits)?;
        p.scene_probs.extend(rows(tape.value(probs)));
        p.fusion_events.extend(rows(&tape.value(out.fusion_event_logits).map(sigmoid)));
        p.audio_events.extend(rows(&tape.value(out.audio_event_logits).map(sigmoid)));
    }
    Ok(p)
}

/// Confusion matrix and weighted metrics of the argmax scene predictions.
pub fn evaluate(model: &FusionModel, data: &Prepared, split: Split, mask: ModalityMask) -> Result<(ConfusionMatrix, Metrics)> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::Config(format!("the {split} split is empty")));
    }
    let preds = predict(model, data, &idx, mask)?;
    let cm = ConfusionMatrix::from_pairs(data.scenes, &data.batch_labels(&idx), &preds.predicted_scenes())?;
    let m = weighted_prf(&cm)?;
    Ok((cm, m))
}

/// The event distribution a run exposes: the compound distribution for `le`,
/// the audio event head for the audio-only distillation approaches, and the
/// joint event head otherwise.
pub fn event_embeddings(
    preds: &Predictions,
    approach: Approach,
    table: Option<&ScenePosteriorTable>,
) -> Result<Vec<Vec<f64>>> {
    match approach {
        Approach::Le => {
            let table = table.ok_or(Error::MissingPosteriors)?;
            preds.scene_probs.iter().map(|p| compound_event_dist(p, table)).collect()
        }
        Approach::KlNa | Approach::SqNa => Ok(preds.audio_events.clone()),
        _ => Ok(preds.fusion_events.clone()),
    }
}

/// Check the inputs a run needs before any compute is spent.
pub fn check_run(spec: &RunSpec, data: &Prepared, teacher: Option<&FrozenTeacher>, table: Option<&ScenePosteriorTable>) -> Result<()> {
    spec.loss.validate()?;
    if !spec.loss.scene_loss && spec.loss.approach == Approach::None {
        return Err(Error::Config("scene loss disabled and no transfer approach selected".into()));
    }
    if spec.loss.approach == Approach::Le {
        let t = table.ok_or(Error::MissingPosteriors)?;
        if t.scenes() != data.scenes || t.events() != data.event_count {
            return Err(Error::Config(format!(
                "posterior table is {}x{}, data has {} scenes and {} events",
                t.scenes(),
                t.events(),
                data.scenes,
                data.event_count
            )));
        }
    }
    if spec.init == Init::PretrainedTeacher && teacher.is_none() {
        return Err(Error::State("pretrained initialization needs a teacher snapshot".into()));
    }
    for split in Split::ALL {
        if data.indices(split).is_empty() {
            return Err(Error::Config(format!("the {split} split is empty")));
        }
    }
    if spec.loss.approach.needs_teacher() && !data.has_teacher(&data.indices(Split::Train)) {
        return Err(Error::State("transfer approaches need cached teacher outputs; run pretrain-teacher first".into()));
    }
    Ok(())
}

/// Train one network: seeded shuffles, `total_loss`, Adam, and keep the
/// parameters with the best validation F (ties keep the earlier epoch).
pub fn train(
    cfg: &ExperimentConfig,
    spec: &RunSpec,
    data: &Prepared,
    teacher: Option<&FrozenTeacher>,
    table: Option<&ScenePosteriorTable>,
) -> Result<RunResult> {
    cfg.validate()?;
    check_run(spec, data, teacher, table)?;
    let mut model = FusionModel::new(cfg.model.clone(), spec.seed)?;
    if spec.init == Init::PretrainedTeacher {
        model.init_from_teacher(teacher.expect("checked above"))?;
    }
    let train_idx = data.indices(Split::Train);
    let needs_teacher = spec.loss.approach.needs_teacher();

    let (_, m0) = evaluate(&model, data, Split::Val, spec.mask)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: None,
        val_precision: m0.precision,
        val_recall: m0.recall,
        val_fscore: m0.fscore,
    }];
    let mut best = (m0.fscore, 0usize, model.params.clone());
    let mut state = AdamState::new(model.params.tensors());

    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut sample_rng(spec.seed, "batches", &epoch.to_string()));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &data.batch_images(batch)?, &data.batch_audio(batch)?, spec.mask, true)?;
            let labels = data.batch_labels(batch);
            let teacher_probs = if needs_teacher { Some(data.batch_teacher(batch)?) } else { None };
            let inputs = LossInputs {
                scene_logits: out.scene_logits,
                fusion_event_logits: Some(out.fusion_event_logits),
                audio_event_logits: Some(out.audio_event_logits),
                labels: &labels,
                teacher_probs: teacher_probs.as_ref(),
                table,
            };
            let loss = total_loss(&mut tape, &inputs, &spec.loss)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss became {value} in epoch {epoch}")));
            }
            tape.backward(loss)?;
            let grads: Vec<Option<&Tensor>> = out.params.iter().map(|&v| tape.grad(v)).collect();
            adam_step(model.params.tensors_mut(), &grads, &mut state, &cfg.optimizer)?;
            loss_sum += value;
            batches += 1;
        }
        let (_, m) = evaluate(&model, data, Split::Val, spec.mask)?;
        log.push(EpochLog {
            epoch,
            train_loss: Some(loss_sum / batches as f64),
            val_precision: m.precision,
            val_recall: m.recall,
            val_fscore: m.fscore,
        });
        if m.fscore > best.0 {
            best = (m.fscore, epoch, model.params.clone());
        }
    }

    model.params = best.2;
    let (confusion, test) = evaluate(&model, data, Split::Test, spec.mask)?;
    Ok(RunResult {
        model,
        log,
        epoch_best: best.1,
        test,
        confusion,
    })
}
