use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::LogMelFeatures;

/// Per-mel-bin standardization fitted on a training corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Bins whose variance was zero; their std is clamped to 1.
    #[serde(default)]
    pub clamped: Vec<usize>,
}

const MIN_VARIANCE: f64 = 1e-20;

impl Normalizer {
    /// Population statistics over every frame of every clip, in corpus order.
    pub fn fit<'a, I>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LogMelFeatures>,
        I::IntoIter: Clone,
    {
        let iter = corpus.into_iter();
        let mut bins = None;
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        for f in iter.clone() {
            let t = f.tensor();
            let b = t.shape()[1];
            if *bins.get_or_insert(b) != b {
                return Err(Error::Shape("corpus mixes feature widths".into()));
            }
            sum.resize(b, 0.0);
            for row in t.data().chunks(b) {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            count += t.shape()[0];
        }
        let Some(bins) = bins else {
            return Err(Error::Input("cannot fit a normalizer on an empty corpus".into()));
        };
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; bins];
        for f in iter {
            for row in f.tensor().data().chunks(bins) {
                for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let mut clamped = Vec::new();
        let std = sq
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let var = s / count as f64;
                if var <= MIN_VARIANCE {
                    clamped.push(i);
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Ok(Normalizer { mean, std, clamped })
    }

    pub fn apply(&self, x: &LogMelFeatures) -> Result<LogMelFeatures> {
        let t = x.tensor();
        let bins = t.shape()[1];
        if bins != self.mean.len() {
            return Err(Error::Shape(format!(
                "features have {bins} bins, normalizer {}",
                self.mean.len()
            )));
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(bins) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        LogMelFeatures::new(Tensor::new(t.shape().to_vec(), data)?)
    }

    pub fn has_warnings(&self) -> bool {
        !self.clamped.is_empty()
    }
}
