//! Scene cross-entropy, event distillation, compound event distributions and
//! event-relevance alignment, in scalar form and as tape graphs.

mod graph;
mod scalar;
mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use graph::{
    compound_event_dist as compound_event_dist_graph, kl_distill_mean, l_e1_mean, l_e2_mean, l_e_mean,
    scene_ce_mean, sq_distill_mean, teacher_pre_activations, total_loss, LossInputs,
};
pub use scalar::{
    binary_kl, compound_event_dist, kl_distill, l_e, l_e1, l_e2, logit, scene_ce, sigmoid, softmax, sq_distill,
    PROB_CLAMP,
};
pub use table::{event_relevance, ScenePosteriorTable, POWER_MAX_ITER, POWER_TOL};

/// Which transfer term accompanies the scene loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    None,
    KlNa,
    KlNva,
    SqNa,
    SqNva,
    Le,
}

impl Approach {
    pub const ALL: [Approach; 6] = [
        Approach::None,
        Approach::SqNa,
        Approach::KlNa,
        Approach::SqNva,
        Approach::KlNva,
        Approach::Le,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::None => "none",
            Approach::KlNa => "kl_na",
            Approach::KlNva => "kl_nva",
            Approach::SqNa => "sq_na",
            Approach::SqNva => "sq_nva",
            Approach::Le => "le",
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != Approach::None
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown approach {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub approach: Approach,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    /// Include the scene cross-entropy; off only for the transfer-only ablations.
    pub scene_loss: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            approach: Approach::None,
            alpha: 0.1,
            beta: 0.001,
            tau: 2.0,
            scene_loss: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) || !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "alpha {} and beta {} must be >= 0, tau {} > 0",
                self.alpha, self.beta, self.tau
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
