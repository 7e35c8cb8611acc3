use std::path::Path;

use rayon::prelude::*;

use crate::audiofeat::{FeatureExtractor, LogMelFeatures, Normalizer};
use crate::dataset::{load_audio, load_image, Manifest, Split};
use crate::error::{Error, Result};
use crate::models::normalize_pixels;
use crate::numcore::Tensor;

/// Every record decoded into network inputs, held in memory.
///
/// Images are normalized pixels `[3, H, W]`; audio is the standardized log-mel
/// matrix as a one-channel map `[1, T, F]`. The normalizer is fitted on the
/// training split only.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub events: Vec<Vec<u8>>,
    pub splits: Vec<Option<Split>>,
    pub teacher: Vec<Option<Vec<f64>>>,
    pub images: Vec<Tensor>,
    pub audio: Vec<Tensor>,
    pub normalizer: Normalizer,
    pub scenes: usize,
    pub event_count: usize,
}

impl Prepared {
    pub fn load(root: &Path, m: &Manifest) -> Result<Self> {
        let fx = FeatureExtractor::new();
        let decoded: Vec<(Tensor, LogMelFeatures)> = m
            .records
            .par_iter()
            .map(|r| {
                let img = normalize_pixels(&load_image(root, r)?);
                let feats = fx.extract(&load_audio(root, r)?)?;
                Ok((img, feats))
            })
            .collect::<Result<_>>()?;
        let train: Vec<&LogMelFeatures> = m
            .records
            .iter()
            .zip(&decoded)
            .filter(|(r, _)| r.split == Some(Split::Train))
            .map(|(_, (_, f))| f)
            .collect();
        if train.is_empty() {
            return Err(Error::Config("the training split is empty".into()));
        }
        let normalizer = Normalizer::fit(train.iter().copied())?;
        let mut images = Vec::with_capacity(decoded.len());
        let mut audio = Vec::with_capacity(decoded.len());
        for (img, f) in decoded {
            images.push(img);
            let t = normalizer.apply(&f)?.into_tensor();
            let (frames, bins) = (t.shape()[0], t.shape()[1]);
            audio.push(t.reshape(&[1, frames, bins])?);
        }
        Ok(Prepared {
            ids: m.records.iter().map(|r| r.id.clone()).collect(),
            labels: m.records.iter().map(|r| r.scene).collect(),
            events: m.records.iter().map(|r| r.events.clone()).collect(),
            splits: m.records.iter().map(|r| r.split).collect(),
            teacher: m.records.iter().map(|r| r.teacher.clone()).collect(),
            images,
            audio,
            normalizer,
            scenes: m.meta.scenes,
            event_count: m.meta.events,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == Some(split)).collect()
    }

    fn stack(items: &[Tensor], idx: &[usize]) -> Result<Tensor> {
        let first = items[*idx.first().ok_or_else(|| Error::Input("empty batch".into()))?].shape().to_vec();
        let mut data = Vec::with_capacity(idx.len() * items[idx[0]].len());
        for &i in idx {
            if items[i].shape() != first.as_slice() {
                return Err(Error::Shape(format!("sample {i} has shape {:?}, expected {first:?}", items[i].shape())));
            }
            data.extend_from_slice(items[i].data());
        }
        let mut shape = vec![idx.len()];
        shape.extend(first);
        Tensor::new(shape, data)
    }

    pub fn batch_images(&self, idx: &[usize]) -> Result<Tensor> {
        Self::stack(&self.images, idx)
    }

    pub fn batch_audio(&self, idx: &[usize]) -> Result<Tensor> {
        Self::stack(&self.audio, idx)
    }

    pub fn batch_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// Multi-hot event targets `[B, E]`.
    pub fn batch_events(&self, idx: &[usize]) -> Result<Tensor> {
        let data = idx
            .iter()
            .flat_map(|&i| self.events[i].iter().map(|&b| b as f64))
            .collect();
        Tensor::new(vec![idx.len(), self.event_count], data)
    }

    /// Cached teacher probabilities `[B, E]`.
    pub fn batch_teacher(&self, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * self.event_count);
        for &i in idx {
            let t = self.teacher[i]
                .as_ref()
                .ok_or_else(|| Error::State(format!("record {} has no cached teacher output", self.ids[i])))?;
            data.extend_from_slice(t);
        }
        Tensor::new(vec![idx.len(), self.event_count], data)
    }

    pub fn has_teacher(&self, idx: &[usize]) -> bool {
        idx.iter().all(|&i| self.teacher[i].is_some())
    }
}
