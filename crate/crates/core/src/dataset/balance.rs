use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::generate::{clip_for, media_stem, render_image, round6, write_media};
use super::manifest::{Manifest, SampleRecord};

/// Offset applied to coordinates of balancing clones, degrees.
pub const OFFSET_DEG: f64 = 0.01;
pub const DEFAULT_LOW: usize = 100;
pub const DEFAULT_FLOOR: usize = 10;

const DIRECTIONS: [(&str, f64, f64); 4] = [("n", 1.0, 0.0), ("s", -1.0, 0.0), ("e", 0.0, 1.0), ("w", 0.0, -1.0)];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub removed: Vec<usize>,
    pub augmented: Vec<usize>,
    pub added_records: usize,
}

/// Drop classes under `floor` samples and give every original record of a
/// class under `low` samples four offset clones. Each clone re-cuts a fresh
/// 10 s window from its origin's recording and renders a new image.
pub fn balance_by_offset(m: &mut Manifest, root: &Path, low: usize, floor: usize) -> Result<BalanceReport> {
    let counts = m.class_counts();
    let mut report = BalanceReport::default();
    for (k, &c) in counts.iter().enumerate() {
        if c < floor && !m.meta.removed_scenes.contains(&k) {
            report.removed.push(k);
        }
    }
    m.records.retain(|r| !report.removed.contains(&r.scene));
    m.meta.removed_scenes.extend(&report.removed);
    m.meta.removed_scenes.sort_unstable();

    report.augmented = (0..counts.len())
        .filter(|&k| counts[k] >= floor && counts[k] < low)
        .collect();
    let originals: Vec<&SampleRecord> = m
        .records
        .iter()
        .filter(|r| !r.is_clone() && report.augmented.contains(&r.scene))
        .collect();
    let cfg = &m.meta.generator;
    let specs = &m.meta.scene_specs;
    let clones: Vec<Result<Vec<SampleRecord>>> = originals
        .par_iter()
        .map(|orig| {
            DIRECTIONS
                .iter()
                .map(|&(dir, dlat, dlon)| {
                    let id = format!("{}~{dir}", orig.id);
                    let (audio, _) = clip_for(cfg, orig.group(), &id, &orig.events)?;
                    let image = render_image(cfg, &specs[orig.scene], &id);
                    let (image, audio) = write_media(root, &media_stem(&id), &image, audio)?;
                    Ok(SampleRecord {
                        id,
                        scene: orig.scene,
                        lat: round6(orig.lat + dlat * OFFSET_DEG),
                        lon: round6(orig.lon + dlon * OFFSET_DEG),
                        image,
                        audio,
                        events: orig.events.clone(),
                        split: None,
                        teacher: None,
                    })
                })
                .collect()
        })
        .collect();

    // clones follow their origin so related records stay adjacent
    let mut by_origin: BTreeMap<String, Vec<SampleRecord>> = BTreeMap::new();
    for batch in clones {
        let batch = batch?;
        report.added_records += batch.len();
        if let Some(first) = batch.first() {
            by_origin.insert(first.group().to_string(), batch);
        }
    }
    let mut records = Vec::with_capacity(m.records.len() + report.added_records);
    for r in m.records.drain(..) {
        let extra = by_origin.remove(&r.id);
        records.push(r);
        records.extend(extra.into_iter().flatten());
    }
    m.records = records;
    m.refresh_counts();
    Ok(report)
}
