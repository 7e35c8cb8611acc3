//! Synthetic paired image/audio corpora: generation, clip extension,
//! offset balancing and coordinate-disjoint splitting.

mod balance;
mod extend;
mod generate;
mod image;
mod manifest;
mod split;

use std::path::Path;

use crate::audiofeat::{read_wav, AudioClip};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use balance::{balance_by_offset, BalanceReport, DEFAULT_FLOOR, DEFAULT_LOW, OFFSET_DEG};
pub use extend::{extend_clip, ClipOutcome, CLIP_SECS, MIN_SOURCE_SECS};
pub use generate::{
    class_quota, draw_events, event_tone_hz, generate_synthetic, media_stem, render_image, sample_id, sample_rng,
    sample_seed, scene_specs, synthesize_source, GeneratorConfig, SceneSpec, VisualSignature,
};
pub use image::{read_png, write_png, RgbImage};
pub use manifest::{DatasetMeta, Manifest, SampleRecord, Split, MANIFEST_FILE, META_FILE};
pub use split::{split_disjoint, DEFAULT_RATIOS, RATIO_SLACK};

/// Generate, optionally balance, split, and write `manifest.jsonl` under `root`.
pub fn build_dataset(cfg: &GeneratorConfig, root: &Path, balance: bool) -> Result<Manifest> {
    let mut m = generate_synthetic(cfg, root)?;
    if balance {
        balance_by_offset(&mut m, root, DEFAULT_LOW, DEFAULT_FLOOR)?;
    }
    split_disjoint(&mut m, DEFAULT_RATIOS, cfg.seed)?;
    m.save(root)?;
    Ok(m)
}

/// Image of a record as a `[3, H, W]` tensor in [0, 1].
pub fn load_image(root: &Path, r: &SampleRecord) -> Result<Tensor> {
    read_png(&root.join(&r.image))
        .map(|img| img.to_tensor())
        .map_err(|e| name_record(e, r))
}

pub fn load_audio(root: &Path, r: &SampleRecord) -> Result<AudioClip> {
    read_wav(&root.join(&r.audio)).map_err(|e| name_record(e, r))
}

fn name_record(e: Error, r: &SampleRecord) -> Error {
    match e {
        Error::Io { path, source } => Error::Io {
            path,
            source: std::io::Error::new(source.kind(), format!("record {}: {source}", r.id)),
        },
        other => other,
    }
}
