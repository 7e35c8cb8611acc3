use std::fmt::Write as _;
use std::time::Instant;

use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::losses::{Approach, LossConfig, ScenePosteriorTable};
use crate::models::{FrozenTeacher, ModalityMask};

use super::data::Prepared;
use super::train::{train, RunResult, RunSpec};
use super::{ExperimentConfig, Init};

pub const RESULTS_HEADER: &str = "run_id,approach,modality,init,seed,epoch_best,precision,recall,fscore,wall_seconds";

pub const GRID_ALPHAS: [f64; 3] = [0.01, 0.1, 1.0];
pub const GRID_BETAS: [f64; 3] = [1e-4, 1e-3, 1e-2];

/// One column of the experiment matrix, repeated over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// Value of the `approach` column; the approach name or an ablation name.
    pub label: String,
    pub loss: LossConfig,
    pub mask: ModalityMask,
    pub init: Init,
}

impl Cell {
    pub fn run_id(&self, seed: &str) -> String {
        format!("{}-{}-{}-{}", self.label, self.mask.label(), self.init, seed)
    }
}

/// Every approach combined with the scene loss, for each modality.
pub fn standard_cells(base: &LossConfig, masks: &[ModalityMask], init: Init) -> Vec<Cell> {
    masks
        .iter()
        .flat_map(|&mask| {
            Approach::ALL.into_iter().map(move |approach| Cell {
                label: approach.as_str().to_owned(),
                loss: LossConfig {
                    approach,
                    scene_loss: true,
                    ..base.clone()
                },
                mask,
                init,
            })
        })
        .collect()
}

/// Transfer terms trained without the scene loss.
pub fn ablation_cells(base: &LossConfig, init: Init) -> Vec<Cell> {
    let cell = |label: &str, approach, beta| Cell {
        label: label.to_owned(),
        loss: LossConfig {
            approach,
            beta,
            scene_loss: false,
            ..base.clone()
        },
        mask: ModalityMask::None,
        init,
    };
    vec![
        cell("le1_only", Approach::Le, 0.0),
        cell("le_only", Approach::Le, base.beta),
        cell("kl_nva_only", Approach::KlNva, base.beta),
        cell("sq_nva_only", Approach::SqNva, base.beta),
    ]
}

/// One result line. Numeric fields are kept as text so aggregate rows can
/// carry `mean` in the seed column and leave `epoch_best` empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub approach: String,
    pub modality: String,
    pub init: String,
    pub seed: String,
    pub epoch_best: String,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub wall_seconds: f64,
}

impl ResultRow {
    pub fn is_aggregate(&self) -> bool {
        self.seed == "mean"
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.3}",
            self.run_id,
            self.approach,
            self.modality,
            self.init,
            self.seed,
            self.epoch_best,
            self.precision,
            self.recall,
            self.fscore,
            self.wall_seconds
        )
    }
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.to_line()).expect("string write");
    }
    s
}

pub fn read_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Input("results file does not start with the expected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Input(format!("malformed results row {}", i + 1));
            if f.len() != 10 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(ResultRow {
                run_id: f[0].to_owned(),
                approach: f[1].to_owned(),
                modality: f[2].to_owned(),
                init: f[3].to_owned(),
                seed: f[4].to_owned(),
                epoch_best: f[5].to_owned(),
                precision: num(f[6])?,
                recall: num(f[7])?,
                fscore: num(f[8])?,
                wall_seconds: num(f[9])?,
            })
        })
        .collect()
}

/// One `seed = mean` row per (approach, modality, init) group, in first-seen order.
pub fn aggregate_rows(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in rows.iter().filter(|r| !r.is_aggregate()) {
        let k = (r.approach.clone(), r.modality.clone(), r.init.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(approach, modality, init)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| !r.is_aggregate() && r.approach == approach && r.modality == modality && r.init == init)
                .collect();
            let n = group.len() as f64;
            let mean = |f: fn(&ResultRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            ResultRow {
                run_id: format!("{approach}-{modality}-{init}-mean"),
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                fscore: mean(|r| r.fscore),
                wall_seconds: group.iter().map(|r| r.wall_seconds).sum(),
                approach,
                modality,
                init,
                seed: "mean".into(),
                epoch_best: String::new(),
            }
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct SweepOutput {
    /// Per-seed rows followed by the aggregate rows.
    pub rows: Vec<ResultRow>,
    /// `(run_id, error class, message)` for every run that failed.
    pub failures: Vec<(String, String, String)>,
}

/// Train every cell for every seed. A failing run is recorded and skipped.
/// `on_run` sees each finished run, e.g. to write its artifacts.
pub fn sweep<F>(
    cfg: &ExperimentConfig,
    cells: &[Cell],
    data: &Prepared,
    teacher: Option<&FrozenTeacher>,
    table: Option<&ScenePosteriorTable>,
    mut on_run: F,
) -> Result<SweepOutput>
where
    F: FnMut(&str, &Cell, &RunSpec, &RunResult) -> Result<()>,
{
    cfg.validate()?;
    let mut out = SweepOutput::default();
    for cell in cells {
        for &seed in &cfg.seeds {
            let run_id = cell.run_id(&seed.to_string());
            let spec = RunSpec {
                loss: cell.loss.clone(),
                mask: cell.mask,
                init: cell.init,
                seed,
            };
            let start = Instant::now();
            match train(cfg, &spec, data, teacher, table) {
                Ok(result) => {
                    let wall = start.elapsed().as_secs_f64();
                    on_run(&run_id, cell, &spec, &result)?;
                    out.rows.push(ResultRow {
                        run_id,
                        approach: cell.label.clone(),
                        modality: cell.mask.label().to_owned(),
                        init: cell.init.to_string(),
                        seed: seed.to_string(),
                        epoch_best: result.epoch_best.to_string(),
                        precision: result.test.precision,
                        recall: result.test.recall,
                        fscore: result.test.fscore,
                        wall_seconds: wall,
                    });
                }
                Err(e) => out.failures.push((run_id, e.class().to_owned(), e.to_string())),
            }
        }
    }
    let agg = aggregate_rows(&out.rows);
    out.rows.extend(agg);
    Ok(out)
}

/// The α × β grid for the `le` approach.
pub fn grid_cells(base: &LossConfig, mask: ModalityMask, init: Init) -> Vec<Cell> {
    GRID_ALPHAS
        .iter()
        .flat_map(|&alpha| {
            GRID_BETAS.iter().map(move |&beta| Cell {
                label: format!("le_a{alpha}_b{beta}"),
                loss: LossConfig {
                    approach: Approach::Le,
                    alpha,
                    beta,
                    scene_loss: true,
                    ..base.clone()
                },
                mask,
                init,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    /// Best validation F averaged over the configured seeds.
    pub val_fscore: f64,
}

/// Score every grid point on the validation split; returns all points and
/// the index of the best one (ties keep the earlier point).
pub fn grid_search(
    cfg: &ExperimentConfig,
    data: &Prepared,
    teacher: Option<&FrozenTeacher>,
    table: Option<&ScenePosteriorTable>,
) -> Result<(Vec<GridPoint>, usize)> {
    cfg.validate()?;
    if data.indices(Split::Val).is_empty() {
        return Err(Error::Config("grid search needs a validation split".into()));
    }
    let mut points = Vec::new();
    for cell in grid_cells(&cfg.loss, cfg.modality_mask, cfg.init) {
        let mut total = 0.0;
        for &seed in &cfg.seeds {
            let spec = RunSpec {
                loss: cell.loss.clone(),
                mask: cell.mask,
                init: cell.init,
                seed,
            };
            let r = train(cfg, &spec, data, teacher, table)?;
            total += r.log[r.epoch_best].val_fscore;
        }
        points.push(GridPoint {
            alpha: cell.loss.alpha,
            beta: cell.loss.beta,
            val_fscore: total / cfg.seeds.len() as f64,
        });
    }
    let best = (0..points.len()).fold(0, |b, i| if points[i].val_fscore > points[b].val_fscore { i } else { b });
    Ok((points, best))
}
