use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{FrozenTeacher, FusionModel, ModelConfig, ParamSet, TeacherModel};

pub const DESCRIPTOR_FILE: &str = "model.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Fusion,
    Teacher,
}

/// JSON descriptor stored next to the parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub model: ModelConfig,
    pub tau: f64,
    /// For a teacher, its own snapshot id; for a student, the teacher it learned from.
    pub snapshot_id: Option<String>,
    pub seed: u64,
    pub params: Vec<String>,
}

impl Checkpoint {
    fn write(&self, dir: &Path, params: &ParamSet) -> Result<()> {
        params.save_dir(dir)?;
        let path = dir.join(DESCRIPTOR_FILE);
        let text = serde_json::to_string_pretty(self).expect("descriptor serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(DESCRIPTOR_FILE);
        if !path.exists() {
            return Err(Error::State(format!("no model snapshot at {}", dir.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    fn expect(&self, kind: CheckpointKind, dir: &Path) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::State(format!("{} holds a {:?} checkpoint, not {kind:?}", dir.display(), self.kind)))
        }
    }

    pub fn save_fusion(dir: &Path, model: &FusionModel, tau: f64, teacher: Option<&str>, seed: u64) -> Result<()> {
        Checkpoint {
            kind: CheckpointKind::Fusion,
            model: model.config.clone(),
            tau,
            snapshot_id: teacher.map(str::to_owned),
            seed,
            params: model.params.names().to_vec(),
        }
        .write(dir, &model.params)
    }

    pub fn load_fusion(dir: &Path) -> Result<(FusionModel, Checkpoint)> {
        let c = Self::read(dir)?;
        c.expect(CheckpointKind::Fusion, dir)?;
        let params = ParamSet::load_dir(dir, &c.params)?;
        let fresh = FusionModel::new(c.model.clone(), 0)?;
        check_layout(&fresh.params, &params, dir)?;
        Ok((
            FusionModel {
                config: c.model.clone(),
                params,
            },
            c,
        ))
    }

    pub fn save_teacher(dir: &Path, teacher: &FrozenTeacher, seed: u64) -> Result<()> {
        Checkpoint {
            kind: CheckpointKind::Teacher,
            model: teacher.model().config.clone(),
            tau: 1.0,
            snapshot_id: Some(teacher.snapshot_id().to_owned()),
            seed,
            params: teacher.model().params.names().to_vec(),
        }
        .write(dir, &teacher.model().params)
    }

    /// Load a teacher and verify that its parameters still hash to the recorded snapshot id.
    pub fn load_teacher(dir: &Path) -> Result<FrozenTeacher> {
        let c = Self::read(dir)?;
        c.expect(CheckpointKind::Teacher, dir)?;
        let params = ParamSet::load_dir(dir, &c.params)?;
        let fresh = TeacherModel::new(c.model.clone(), 0)?;
        check_layout(&fresh.params, &params, dir)?;
        let frozen = TeacherModel {
            config: c.model,
            params,
        }
        .freeze();
        if c.snapshot_id.as_deref() != Some(frozen.snapshot_id()) {
            return Err(Error::State(format!(
                "teacher snapshot in {} does not match its recorded id",
                dir.display()
            )));
        }
        Ok(frozen)
    }
}

fn check_layout(expected: &ParamSet, got: &ParamSet, dir: &Path) -> Result<()> {
    let same = expected.names() == got.names()
        && expected
            .tensors()
            .iter()
            .zip(got.tensors())
            .all(|(a, b)| a.shape() == b.shape());
    if same {
        Ok(())
    } else {
        Err(Error::format(dir, "parameter layout does not match the descriptor"))
    }
}
