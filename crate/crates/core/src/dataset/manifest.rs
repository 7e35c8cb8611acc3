use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::generate::{GeneratorConfig, SceneSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One paired image/audio example. Field names are the on-disk JSONL schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub scene: usize,
    pub lat: f64,
    pub lon: f64,
    /// Path relative to the manifest directory.
    pub image: String,
    pub audio: String,
    pub events: Vec<u8>,
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<Vec<f64>>,
}

impl SampleRecord {
    /// Offset clones carry `~<direction>` after the id of the record they were
    /// derived from; the part before it identifies the source coordinate.
    pub fn group(&self) -> &str {
        self.id.split('~').next().unwrap_or(&self.id)
    }

    pub fn is_clone(&self) -> bool {
        self.id.contains('~')
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenes: usize,
    pub events: usize,
    pub seed: u64,
    pub class_counts: Vec<usize>,
    pub scene_specs: Vec<SceneSpec>,
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub rejected_short_clips: usize,
    /// Scenes dropped by balancing; their indices stay reserved so no label changes.
    #[serde(default)]
    pub removed_scenes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub meta: DatasetMeta,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const META_FILE: &str = "dataset.json";

impl Manifest {
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.meta.scenes];
        for r in &self.records {
            counts[r.scene] += 1;
        }
        counts
    }

    pub fn refresh_counts(&mut self) {
        self.meta.class_counts = self.class_counts();
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, e) = (self.meta.scenes, self.meta.events);
        for r in &self.records {
            if r.scene >= k {
                return Err(Error::Input(format!("record {} has scene {} >= {k}", r.id, r.scene)));
            }
            if r.events.len() != e || r.events.iter().any(|&b| b > 1) {
                return Err(Error::Input(format!("record {} has a bad event vector", r.id)));
            }
            if let Some(t) = &r.teacher {
                if t.len() != e || t.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Input(format!("record {} has a bad teacher vector", r.id)));
                }
            }
        }
        if self.class_counts() != self.meta.class_counts {
            return Err(Error::Input("class counts disagree with the record list".into()));
        }
        Ok(())
    }

    /// Write `manifest.jsonl` and `dataset.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let meta_path = dir.join(META_FILE);
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: SampleRecord = serde_json::from_str(&line)
                .map_err(|e| Error::format(&path, format!("line {}: {e}", n + 1)))?;
            records.push(r);
        }
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        let m = Manifest { records, meta };
        m.validate()?;
        Ok(m)
    }
}
