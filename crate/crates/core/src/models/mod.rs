//! Convolutional encoders for images and log-mel matrices, the fusion network
//! with scene and event heads, the frozen event teacher, and class activation maps.
//!
//! Every encoder block is a stride-2 3×3 convolution followed by ReLU; the last
//! block's maps are averaged into a `D`-vector. Heads start at zero so an
//! untrained network predicts uniform scene probabilities.

mod checkpoint;
mod params;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dataset::sample_seed;
use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::numcore::{Tape, Tensor, Var};

pub use checkpoint::{Checkpoint, CheckpointKind, DESCRIPTOR_FILE};
pub use params::ParamSet;

/// Mean and scale applied to `[0, 1]` pixel values before the visual encoder.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_SCALE: f64 = 0.25;

/// Map pixels in `[0, 1]` to the encoder's input range.
pub fn normalize_pixels(t: &Tensor) -> Tensor {
    t.map(|v| (v - PIXEL_MEAN) / PIXEL_SCALE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub scenes: usize,
    pub events: usize,
    /// Output channels of each visual block; the last one is the feature width `D`.
    pub image_widths: Vec<usize>,
    pub audio_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scenes: 6,
            events: 10,
            image_widths: vec![16, 32, 64, 64],
            audio_widths: vec![16, 32, 32, 64, 64],
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        self.image_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes < 2 || self.events < 1 {
            return Err(Error::Config(format!(
                "need at least 2 scenes and 1 event, got {} and {}",
                self.scenes, self.events
            )));
        }
        if self.image_widths.is_empty() || self.audio_widths.is_empty() {
            return Err(Error::Config("encoders need at least one block".into()));
        }
        if self.image_widths.iter().chain(&self.audio_widths).any(|&w| w == 0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.image_widths.last() != self.audio_widths.last() {
            return Err(Error::Config(format!(
                "visual and audio feature widths differ: {:?} vs {:?}",
                self.image_widths.last(),
                self.audio_widths.last()
            )));
        }
        Ok(())
    }
}

/// Which input is replaced by zeros.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityMask {
    #[default]
    None,
    ImageOnly,
    SoundOnly,
}

impl ModalityMask {
    pub const ALL: [ModalityMask; 3] = [ModalityMask::None, ModalityMask::ImageOnly, ModalityMask::SoundOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityMask::None => "none",
            ModalityMask::ImageOnly => "image_only",
            ModalityMask::SoundOnly => "sound_only",
        }
    }

    /// Name used in result tables, where the unmasked network is "fusion".
    pub fn label(self) -> &'static str {
        match self {
            ModalityMask::None => "fusion",
            other => other.as_str(),
        }
    }

    pub fn uses_image(self) -> bool {
        self != ModalityMask::SoundOnly
    }

    pub fn uses_audio(self) -> bool {
        self != ModalityMask::ImageOnly
    }
}

impl fmt::Display for ModalityMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(ModalityMask::None),
            _ => ModalityMask::ALL
                .into_iter()
                .find(|m| m.as_str() == s)
                .ok_or_else(|| Error::Config(format!("unknown modality mask {s:?}"))),
        }
    }
}

fn conv_names(prefix: &str, i: usize) -> (String, String) {
    (format!("{prefix}.conv{i}.w"), format!("{prefix}.conv{i}.b"))
}

fn push_encoder(p: &mut ParamSet, prefix: &str, in_ch: usize, widths: &[usize], seed: u64) {
    let mut c = in_ch;
    for (i, &w) in widths.iter().enumerate() {
        let (wn, bn) = conv_names(prefix, i);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, "init", &wn));
        p.push(wn, params::he_conv(&mut rng, w, c));
        p.push(bn, Tensor::zeros(&[w]));
        c = w;
    }
}

fn push_head(p: &mut ParamSet, name: &str, out: usize, inp: usize) {
    p.push(format!("{name}.w"), Tensor::zeros(&[out, inp]));
    p.push(format!("{name}.b"), Tensor::zeros(&[out]));
}

/// Run a conv stack on `[B, C, H, W]`; returns the pooled `[B, D]` features
/// and the last block's maps.
fn encode(tape: &mut Tape, x: Var, layers: &[(Var, Var)]) -> Result<(Var, Var)> {
    let mut h = x;
    for &(w, b) in layers {
        let c = tape.conv2d(h, w, Some(b), 2)?;
        h = tape.relu(c)?;
    }
    let pooled = tape.global_avg_pool(h)?;
    Ok((pooled, h))
}

fn layer_vars(p: &ParamSet, vars: &[Var], prefix: &str, depth: usize) -> Vec<(Var, Var)> {
    (0..depth)
        .map(|i| {
            let (wn, bn) = conv_names(prefix, i);
            (vars[p.index(&wn).expect("weight")], vars[p.index(&bn).expect("bias")])
        })
        .collect()
}

fn expect_batch(t: &Tensor, channels: usize, what: &str) -> Result<usize> {
    match *t.shape() {
        [b, c, h, w] if c == channels && h >= 3 && w >= 3 && b > 0 => Ok(b),
        ref s => Err(Error::Shape(format!("{what} batch must be [B, {channels}, H, W], got {s:?}"))),
    }
}

/// Features of an all-zero input, computed off the main tape and tiled to the batch.
fn masked_features(p: &ParamSet, prefix: &str, depth: usize, sample_shape: &[usize], batch: usize) -> Result<Tensor> {
    let mut scratch = Tape::new();
    let vars = p.register(&mut scratch, false);
    let mut shape = vec![1];
    shape.extend_from_slice(sample_shape);
    let x = scratch.constant(Tensor::zeros(&shape));
    let (f, _) = encode(&mut scratch, x, &layer_vars(p, &vars, prefix, depth))?;
    let row = scratch.value(f).data().to_vec();
    let d = row.len();
    Tensor::new(vec![batch, d], row.repeat(batch))
}

/// Tape handles produced by one fusion forward pass.
pub struct FusionOutputs {
    /// `[B, K]`
    pub scene_logits: Var,
    /// `[B, E]` from the concatenated representation.
    pub fusion_event_logits: Var,
    /// `[B, E]` from the audio representation alone.
    pub audio_event_logits: Var,
    /// Last visual maps `[B, D, H', W']`; absent when the image is masked.
    pub visual_maps: Option<Var>,
    /// One handle per model parameter, in [`ParamSet`] order.
    pub params: Vec<Var>,
}

/// Visual and audio encoders joined by concatenation, with a scene head on
/// the joint features, an event head on the joint features and an event head
/// on the audio features.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl FusionModel {
    /// He-normal convolutions seeded per parameter name, zero biases and heads.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.feature_dim();
        let mut p = ParamSet::new();
        push_encoder(&mut p, "v", 3, &config.image_widths, seed);
        push_encoder(&mut p, "a", 1, &config.audio_widths, seed);
        push_head(&mut p, "fs", config.scenes, 2 * d);
        push_head(&mut p, "fe", config.events, 2 * d);
        push_head(&mut p, "fa", config.events, d);
        Ok(FusionModel { config, params: p })
    }

    /// Start the audio side from the teacher: its encoder and event head are
    /// copied, and the joint event head reads the audio half with the teacher's weights.
    pub fn init_from_teacher(&mut self, teacher: &FrozenTeacher) -> Result<()> {
        let t = teacher.model();
        if t.config.audio_widths != self.config.audio_widths || t.config.events != self.config.events {
            return Err(Error::Config(format!(
                "teacher architecture (widths {:?}, {} events) does not match the model (widths {:?}, {} events)",
                t.config.audio_widths, t.config.events, self.config.audio_widths, self.config.events
            )));
        }
        for (name, tensor) in t.params.names().iter().zip(t.params.tensors()) {
            self.params.set(name, tensor.clone())?;
        }
        let d = self.config.feature_dim();
        let e = self.config.events;
        let wa = t.params.get("fa.w")?;
        let mut fe = vec![0.0; e * 2 * d];
        for (row, src) in fe.chunks_mut(2 * d).zip(wa.data().chunks(d)) {
            row[d..].copy_from_slice(src);
        }
        self.params.set("fe.w", Tensor::new(vec![e, 2 * d], fe)?)?;
        self.params.set("fe.b", t.params.get("fa.b")?.clone())?;
        Ok(())
    }

    /// Record the forward pass. `images` is `[B, 3, H, W]` (already
    /// normalized), `audio` is `[B, 1, T, F]`. A masked input is replaced by
    /// zeros, and its encoder output is recorded as a constant so its
    /// parameters receive exactly zero gradient.
    pub fn forward(
        &self,
        tape: &mut Tape,
        images: &Tensor,
        audio: &Tensor,
        mask: ModalityMask,
        trainable: bool,
    ) -> Result<FusionOutputs> {
        let vars = self.params.register(tape, trainable);
        self.forward_with(tape, vars, images, audio, mask)
    }

    /// [`FusionModel::forward`] with caller-supplied parameter handles, one per
    /// entry of `self.params` in order. Masked branches still read `self.params`.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        vars: Vec<Var>,
        images: &Tensor,
        audio: &Tensor,
        mask: ModalityMask,
    ) -> Result<FusionOutputs> {
        let b = expect_batch(images, 3, "image")?;
        if expect_batch(audio, 1, "audio")? != b {
            return Err(Error::Shape(format!(
                "image batch {b} and audio batch {} differ",
                audio.shape()[0]
            )));
        }
        if vars.len() != self.params.len() {
            return Err(Error::Shape(format!("{} parameter handles for {} parameters", vars.len(), self.params.len())));
        }
        let p = &self.params;
        let (vi, ai) = (self.config.image_widths.len(), self.config.audio_widths.len());

        let (fv, maps) = if mask.uses_image() {
            let x = tape.constant(images.clone());
            let (f, m) = encode(tape, x, &layer_vars(p, &vars, "v", vi))?;
            (f, Some(m))
        } else {
            let t = masked_features(p, "v", vi, &images.shape()[1..], b)?;
            (tape.constant(t), None)
        };
        let fa = if mask.uses_audio() {
            let x = tape.constant(audio.clone());
            encode(tape, x, &layer_vars(p, &vars, "a", ai))?.0
        } else {
            let t = masked_features(p, "a", ai, &audio.shape()[1..], b)?;
            tape.constant(t)
        };
        if tape.shape(fv)[1] != self.config.feature_dim() || tape.shape(fa)[1] != self.config.feature_dim() {
            return Err(Error::Shape("encoder output width differs from the configured D".into()));
        }
        let joint = tape.concat(&[fv, fa], 1)?;
        let v = |n: &str| vars[p.index(n).expect("head parameter")];
        let scene_logits = tape.linear(joint, v("fs.w"), v("fs.b"))?;
        let fusion_event_logits = tape.linear(joint, v("fe.w"), v("fe.b"))?;
        let audio_event_logits = tape.linear(fa, v("fa.w"), v("fa.b"))?;
        Ok(FusionOutputs {
            scene_logits,
            fusion_event_logits,
            audio_event_logits,
            visual_maps: maps,
            params: vars,
        })
    }

    /// Scene logits of the image pathway alone, using the visual half of `f_s`.
    pub fn image_only_logits(&self, images: &Tensor) -> Result<Tensor> {
        expect_batch(images, 3, "image")?;
        let d = self.config.feature_dim();
        let k = self.config.scenes;
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let x = tape.constant(images.clone());
        let (f, _) = encode(&mut tape, x, &layer_vars(&self.params, &vars, "v", self.config.image_widths.len()))?;
        let fs = self.params.get("fs.w")?;
        let half: Vec<f64> = fs.data().chunks(2 * d).flat_map(|r| r[..d].to_vec()).collect();
        let w = tape.constant(Tensor::new(vec![k, d], half)?);
        let b = tape.constant(self.params.get("fs.b")?.clone());
        let out = tape.linear(f, w, b)?;
        Ok(tape.value(out).clone())
    }
}

/// Audio encoder plus event head; trained once, then frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl TeacherModel {
    /// Only `events` and `audio_widths` of the config matter here.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        push_encoder(&mut p, "a", 1, &config.audio_widths, seed);
        push_head(&mut p, "fa", config.events, config.feature_dim());
        Ok(TeacherModel { config, params: p })
    }

    /// `[B, E]` event logits and the parameter handles.
    pub fn forward(&self, tape: &mut Tape, audio: &Tensor, trainable: bool) -> Result<(Var, Vec<Var>)> {
        expect_batch(audio, 1, "audio")?;
        let vars = self.params.register(tape, trainable);
        let x = tape.constant(audio.clone());
        let (f, _) = encode(tape, x, &layer_vars(&self.params, &vars, "a", self.config.audio_widths.len()))?;
        let v = |n: &str| vars[self.params.index(n).expect("head parameter")];
        let logits = tape.linear(f, v("fa.w"), v("fa.b"))?;
        Ok((logits, vars))
    }

    pub fn freeze(self) -> FrozenTeacher {
        let snapshot_id = format!("{:016x}", self.params.checksum());
        FrozenTeacher {
            model: self,
            snapshot_id,
        }
    }
}

/// A teacher whose parameters can no longer change.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenTeacher {
    model: TeacherModel,
    snapshot_id: String,
}

impl FrozenTeacher {
    pub fn model(&self) -> &TeacherModel {
        &self.model
    }

    /// Hex checksum of the frozen parameters.
    pub fn snapshot_id(&self) -> &str {
        &self.snapshot_id
    }

    pub fn checksum(&self) -> u64 {
        self.model.params.checksum()
    }

    /// Sigmoid event probabilities `[B, E]` for normalized audio `[B, 1, T, F]`.
    pub fn predict(&self, audio: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (logits, _) = self.model.forward(&mut tape, audio, false)?;
        Ok(tape.value(logits).map(sigmoid))
    }
}

/// Class activation map for class `k`: the feature maps `[D, H, W]` weighted
/// by the first `D` columns of the scene head, then min-max scaled to [0, 1].
/// A flat map becomes all zeros.
pub fn cam(k: usize, maps: &Tensor, scene_w: &Tensor) -> Result<Tensor> {
    let [d, h, w] = *maps.shape() else {
        return Err(Error::Shape(format!("cam expects [D, H, W] maps, got {:?}", maps.shape())));
    };
    let [classes, cols] = *scene_w.shape() else {
        return Err(Error::Shape(format!("cam expects a [K, D'] weight matrix, got {:?}", scene_w.shape())));
    };
    if k >= classes {
        return Err(Error::Range(format!("class {k} with {classes} scene classes")));
    }
    if cols < d {
        return Err(Error::Shape(format!("{d} feature maps but only {cols} weight columns")));
    }
    let weights = &scene_w.row(k)[..d];
    let area = h * w;
    let mut out = vec![0.0; area];
    for (c, &wc) in weights.iter().enumerate() {
        for (o, &f) in out.iter_mut().zip(&maps.data()[c * area..(c + 1) * area]) {
            *o += wc * f;
        }
    }
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        out.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    Tensor::new(vec![h, w], out)
}

#[cfg(test)]
mod tests;
