use rand::Rng;

use crate::audiofeat::SAMPLE_RATE;

/// Recordings shorter than this are discarded rather than tiled.
pub const MIN_SOURCE_SECS: f64 = 2.0;
pub const CLIP_SECS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub enum ClipOutcome {
    Extended {
        samples: Vec<f64>,
        /// Copies of the source laid end to end before windowing.
        tiles: usize,
        start: usize,
    },
    Rejected {
        duration_secs: f64,
    },
}

impl ClipOutcome {
    pub fn samples(&self) -> Option<&[f64]> {
        match self {
            ClipOutcome::Extended { samples, .. } => Some(samples),
            ClipOutcome::Rejected { .. } => None,
        }
    }
}

/// Tile a 16 kHz recording until it lasts at least `min_secs`, then cut a
/// random contiguous `min_secs` window.
pub fn extend_clip<R: Rng + ?Sized>(samples: &[f64], min_secs: f64, rng: &mut R) -> ClipOutcome {
    let rate = SAMPLE_RATE as f64;
    let duration_secs = samples.len() as f64 / rate;
    if duration_secs < MIN_SOURCE_SECS {
        return ClipOutcome::Rejected { duration_secs };
    }
    let target = (min_secs * rate).round() as usize;
    let tiles = target.div_ceil(samples.len()).max(1);
    let total = tiles * samples.len();
    let start = if total > target {
        rng.random_range(0..=total - target)
    } else {
        0
    };
    let out = (start..start + target)
        .map(|i| samples[i % samples.len()])
        .collect();
    ClipOutcome::Extended {
        samples: out,
        tiles,
        start,
    }
}
