use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, Split};
use crate::error::{Error, Result};
use crate::numcore::{gram, power_iteration, Tensor};

pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITER: usize = 10_000;

/// Per-scene event marginals `P[k] = p(e | s_k)` and relevance directions `d_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePosteriorTable {
    pub p: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    pub relevance: Vec<Vec<f64>>,
    pub events: usize,
}

/// Dominant unit eigenvector of `RᵀR` for stacked probability rows `R`,
/// oriented entrywise nonnegative.
pub fn event_relevance(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let r = Tensor::from_rows(rows)?;
    let pair = power_iteration(&gram(&r)?, POWER_TOL, POWER_MAX_ITER)?;
    let mut v = pair.vector;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-9 {
        return Err(Error::Numeric(format!("relevance vector has entry {min}")));
    }
    if min < 0.0 {
        v.iter_mut().for_each(|x| *x = x.max(0.0));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(v)
}

impl ScenePosteriorTable {
    /// Build from `(scene, teacher probabilities)` pairs in order. Scenes listed
    /// in `absent` may have no samples; any other empty scene is an error.
    pub fn from_rows(rows: &[(usize, Vec<f64>)], scenes: usize, absent: &[usize]) -> Result<Self> {
        let events = rows
            .first()
            .map(|(_, v)| v.len())
            .ok_or_else(|| Error::Table("no training samples".into()))?;
        let mut grouped: Vec<Vec<Vec<f64>>> = vec![Vec::new(); scenes];
        for (k, v) in rows {
            if *k >= scenes {
                return Err(Error::Range(format!("scene {k} with {scenes} scenes")));
            }
            if v.len() != events || v.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Table(format!("bad teacher vector for scene {k}")));
            }
            grouped[*k].push(v.clone());
        }
        let mut p = Vec::with_capacity(scenes);
        let mut relevance = Vec::with_capacity(scenes);
        for (k, g) in grouped.iter().enumerate() {
            if g.is_empty() {
                if !absent.contains(&k) {
                    return Err(Error::Table(format!("scene {k} has no training samples")));
                }
                p.push(vec![0.0; events]);
                relevance.push(vec![1.0 / (events as f64).sqrt(); events]);
                continue;
            }
            let mut mean = vec![0.0; events];
            for v in g {
                mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
            }
            mean.iter_mut().for_each(|m| *m /= g.len() as f64);
            p.push(mean);
            relevance.push(event_relevance(g)?);
        }
        Ok(ScenePosteriorTable {
            p,
            counts: grouped.iter().map(Vec::len).collect(),
            relevance,
            events,
        })
    }

    /// Table from the cached teacher outputs of the training split.
    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let rows = m
            .records
            .iter()
            .filter(|r| r.split == Some(Split::Train))
            .map(|r| {
                r.teacher
                    .clone()
                    .map(|t| (r.scene, t))
                    .ok_or_else(|| Error::State(format!("record {} has no cached teacher output", r.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows, m.meta.scenes, &m.meta.removed_scenes)
    }

    pub fn scenes(&self) -> usize {
        self.p.len()
    }

    pub fn events(&self) -> usize {
        self.events
    }

    /// `P` as a `[K, E]` tensor.
    pub fn p_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.p).expect("rectangular table")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("table serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if t.p.len() != t.relevance.len() || t.p.len() != t.counts.len() || t.p.iter().any(|r| r.len() != t.events) {
            return Err(Error::format(path, "inconsistent table dimensions"));
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_scene() {
        let t = ScenePosteriorTable::from_rows(&[(0, vec![0.3, 0.4]), (1, vec![0.5, 0.5])], 2, &[]).unwrap();
        assert_eq!(t.p[0], vec![0.3, 0.4]);
        assert!((t.relevance[0][0] - 0.6).abs() < 1e-12 && (t.relevance[0][1] - 0.8).abs() < 1e-12);
        assert_eq!(t.counts, vec![1, 1]);
    }

    #[test]
    fn two_sample_closed_form() {
        let t = ScenePosteriorTable::from_rows(&[(0, vec![1.0, 0.0]), (0, vec![1.0, 1.0])], 1, &[]).unwrap();
        assert_eq!(t.p[0], vec![1.0, 0.5]);
        assert!((t.relevance[0][0] - 0.850651).abs() < 1e-6);
        assert!((t.relevance[0][1] - 0.525731).abs() < 1e-6);
    }

    #[test]
    fn identical_samples_give_their_direction() {
        let v = vec![0.2, 0.1, 0.6];
        let rows: Vec<_> = (0..5).map(|_| (0, v.clone())).collect();
        let t = ScenePosteriorTable::from_rows(&rows, 1, &[]).unwrap();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (d, x) in t.relevance[0].iter().zip(&v) {
            assert!((d - x / n).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_scene_is_a_table_error_unless_removed() {
        let rows = [(0, vec![0.5, 0.5])];
        assert!(matches!(ScenePosteriorTable::from_rows(&rows, 2, &[]), Err(Error::Table(_))));
        let t = ScenePosteriorTable::from_rows(&rows, 2, &[1]).unwrap();
        assert_eq!(t.counts, vec![1, 0]);
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("posteriors.json");
        let t = ScenePosteriorTable::from_rows(&[(0, vec![0.25, 0.5]), (1, vec![0.125, 1.0])], 2, &[]).unwrap();
        t.save(&path).unwrap();
        assert_eq!(ScenePosteriorTable::load(&path).unwrap(), t);
    }
}
