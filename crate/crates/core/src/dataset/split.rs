use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};

use super::generate::sample_rng;
use super::manifest::{Manifest, Split};

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];
/// Allowed deviation of each split from its target, as a share of all records.
/// Tiny corpora get at least one group's worth of slack.
pub const RATIO_SLACK: f64 = 0.02;

/// Assign whole coordinate groups to train/val/test. Within each class the
/// groups are shuffled and each goes to the split furthest below its
/// per-class target; ties go to the split furthest below its global target.
pub fn split_disjoint(m: &mut Manifest, ratios: [f64; 3], seed: u64) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let n = m.records.len();
    if n == 0 {
        return Err(Error::Split("no records to split".into()));
    }
    let capacity = ratios.iter().map(|r| r * n as f64).fold(0.0, f64::max) + RATIO_SLACK * n as f64;

    // group -> (class, member indices), in manifest order
    let mut groups: BTreeMap<&str, (usize, Vec<usize>)> = BTreeMap::new();
    for (i, r) in m.records.iter().enumerate() {
        let g = groups.entry(r.group()).or_insert((r.scene, Vec::new()));
        if g.0 != r.scene {
            return Err(Error::Split(format!("group {} mixes scenes {} and {}", r.group(), g.0, r.scene)));
        }
        g.1.push(i);
    }
    if let Some((name, (_, members))) = groups.iter().find(|(_, (_, v))| v.len() as f64 > capacity) {
        return Err(Error::Split(format!(
            "group {name} has {} records, more than any split can take ({capacity:.1})",
            members.len()
        )));
    }

    let largest = groups.values().map(|(_, v)| v.len()).max().unwrap_or(1);
    let slack = (RATIO_SLACK * n as f64).max(largest as f64);

    let mut rng = sample_rng(seed, "split", "");
    let mut by_class: BTreeMap<usize, Vec<(&str, &Vec<usize>)>> = BTreeMap::new();
    for (name, (class, members)) in &groups {
        by_class.entry(*class).or_default().push((name, members));
    }
    let mut assignment = vec![Split::Train; n];
    let mut global = [0usize; 3];
    for (_, mut class_groups) in by_class {
        class_groups.shuffle(&mut rng);
        let class_n: usize = class_groups.iter().map(|(_, v)| v.len()).sum();
        let mut local = [0usize; 3];
        for (_, members) in class_groups {
            let deficit = |s: usize, have: &[usize; 3], total: usize| ratios[s] * total as f64 - have[s] as f64;
            let best = (0..3)
                .max_by(|&a, &b| {
                    deficit(a, &local, class_n)
                        .total_cmp(&deficit(b, &local, class_n))
                        .then(deficit(a, &global, n).total_cmp(&deficit(b, &global, n)))
                        .then(b.cmp(&a))
                })
                .expect("three splits");
            for &i in members {
                assignment[i] = Split::ALL[best];
            }
            local[best] += members.len();
            global[best] += members.len();
        }
    }
    for (s, (&have, &r)) in global.iter().zip(&ratios).enumerate() {
        if (have as f64 - r * n as f64).abs() > slack {
            return Err(Error::Split(format!(
                "{} split holds {have} of {n} records, target {:.1} ± {slack:.1}",
                Split::ALL[s],
                r * n as f64
            )));
        }
    }
    for (r, s) in m.records.iter_mut().zip(assignment) {
        r.split = Some(s);
    }
    Ok(())
}
