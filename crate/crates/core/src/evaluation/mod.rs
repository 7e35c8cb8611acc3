//! Confusion matrices, support-weighted precision/recall/F, and CSV exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K × K` counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_pairs(k: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!("{} labels and {} predictions", truth.len(), pred.len())));
        }
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    /// Build from a row-major `K × K` count table.
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::Range(format!("pair ({truth}, {pred}) with {} classes", self.k)));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.k).map(|i| self.get(i, i)).sum();
        diag as f64 / self.total() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|j| self.get(i, j).to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub per_class: Vec<ClassScores>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-class scores averaged with true-class support as weights. Any 0/0 is 0.
pub fn weighted_prf(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Input("no samples in the confusion matrix".into()));
    }
    let k = cm.classes();
    let mut per_class = Vec::with_capacity(k);
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = cm.get(c, c);
        let support: u64 = (0..k).map(|j| cm.get(c, j)).sum();
        let predicted: u64 = (0..k).map(|i| cm.get(i, c)).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let fscore = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let w = support as f64 / n as f64;
        p += w * precision;
        r += w * recall;
        f += w * fscore;
        per_class.push(ClassScores {
            precision,
            recall,
            fscore,
            support,
        });
    }
    Ok(Metrics {
        precision: p,
        recall: r,
        fscore: f,
        per_class,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub const EMBEDDING_SCENE_COLUMN: &str = "scene";

pub fn embedding_header(events: usize) -> String {
    let mut h = EMBEDDING_SCENE_COLUMN.to_string();
    for i in 0..events {
        write!(h, ",e_{i}").expect("string write");
    }
    h
}

/// CSV with one row per sample: the scene label then the event distribution.
pub fn embedding_csv(scenes: &[usize], rows: &[Vec<f64>]) -> Result<String> {
    if scenes.len() != rows.len() {
        return Err(Error::Shape(format!("{} labels for {} rows", scenes.len(), rows.len())));
    }
    let e = rows.first().map_or(0, Vec::len);
    let mut s = embedding_header(e);
    s.push('\n');
    for (t, r) in scenes.iter().zip(rows) {
        if r.len() != e {
            return Err(Error::Shape("embedding rows differ in width".into()));
        }
        write!(s, "{t}").expect("string write");
        for v in r {
            write!(s, ",{v}").expect("string write");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Parse an embedding CSV back into labels and rows, checking the header.
pub fn read_embedding_csv(text: &str) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Input("empty embedding file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let e = cols.len().saturating_sub(1);
    if header != embedding_header(e) {
        return Err(Error::Input(format!("unexpected embedding header {header:?}")));
    }
    let mut scenes = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::Input(format!("malformed embedding row {}", i + 1));
        if fields.len() != e + 1 {
            return Err(bad());
        }
        scenes.push(fields[0].parse().map_err(|_| bad())?);
        rows.push(fields[1..].iter().map(|f| f.parse().map_err(|_| bad())).collect::<Result<Vec<f64>>>()?);
    }
    Ok((scenes, rows))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        // A: TP 2, FN 1; B: TP 1, FP 1
        let cm = ConfusionMatrix::from_counts(&[vec![2, 1], vec![0, 1]]).unwrap();
        let m = weighted_prf(&cm).unwrap();
        assert!((m.precision - 0.875).abs() < 1e-15);
        assert!((m.recall - 0.75).abs() < 1e-15);
        assert!((m.fscore - 0.766_666_666_666_666_6).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_single_class() {
        let cm = ConfusionMatrix::from_pairs(3, &[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        let m = weighted_prf(&cm).unwrap();
        assert_eq!((m.precision, m.recall, m.fscore), (1.0, 1.0, 1.0));
        let cm = ConfusionMatrix::from_pairs(4, &[2, 2, 2], &[2, 2, 2]).unwrap();
        let m = weighted_prf(&cm).unwrap();
        assert_eq!((m.precision, m.recall, m.fscore), (1.0, 1.0, 1.0));
        assert_eq!(m.per_class[0].precision, 0.0);
        assert!(matches!(weighted_prf(&ConfusionMatrix::new(3)), Err(Error::Input(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn embedding_csv_roundtrip() {
        let text = embedding_csv(&[1, 0], &[vec![0.25, 1.0], vec![0.1, 0.0]]).unwrap();
        assert!(text.starts_with("scene,e_0,e_1\n1,0.25,1\n"));
        let (s, r) = read_embedding_csv(&text).unwrap();
        assert_eq!(s, vec![1, 0]);
        assert_eq!(r[1], vec![0.1, 0.0]);
        assert!(read_embedding_csv("label,e_0\n1,2\n").is_err());
    }

    proptest! {
        #[test]
        fn recall_equals_accuracy(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = ConfusionMatrix::from_pairs(5, &t, &p).unwrap();
            let m = weighted_prf(&cm).unwrap();
            prop_assert!((m.recall - cm.accuracy()).abs() < 1e-12);
        }
    }
}
