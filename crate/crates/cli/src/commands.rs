use std::fs;
use std::path::{Path, PathBuf};

use avtl_core::dataset::{build_dataset, load_image, write_png, Manifest, RgbImage, Split};
use avtl_core::evaluation::{argmax, embedding_csv, write_text, Metrics};
use avtl_core::losses::{Approach, ScenePosteriorTable};
use avtl_core::models::{cam, Checkpoint, FrozenTeacher, FusionModel, ModalityMask};
use avtl_core::numcore::{Tape, Tensor};
use avtl_core::training::{
    ablation_cells, cache_teacher_outputs, evaluate, event_embeddings, grid_search, predict, pretrain_teacher,
    results_csv, standard_cells, sweep, train, Cell, ExperimentConfig, Init, Prepared, RunResult, RunSpec,
};
use avtl_core::{Error, Result};
use serde::Serialize;

use crate::{CamArgs, Cli, Command, Common, EvaluateArgs, GenerateArgs, RunArgs, SweepArgs, TrainArgs};

pub const TEACHER_DIR: &str = "teacher";
pub const POSTERIORS_FILE: &str = "posteriors.json";
pub const RUNS_DIR: &str = "runs";
pub const RESULTS_FILE: &str = "results.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("AVTL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("AVTL_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))
}

pub fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Generate(a) => generate(c, &a),
        Command::PretrainTeacher => pretrain(c),
        Command::BuildPosteriors => build_posteriors(c),
        Command::Train(a) => train_one(c, &a),
        Command::Evaluate(a) => evaluate_run(c, &a),
        Command::Sweep(a) => sweep_cmd(c, &a),
        Command::ExportEmbeddings(a) => export_embeddings(c, &a),
        Command::Cam(a) => cam_cmd(c, &a),
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let Some(path) = &c.config else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("value serializes") + "\n"))
}

/// Load the dataset under `--out` and align the config with what was generated.
fn load_manifest(c: &Common, cfg: &mut ExperimentConfig) -> Result<Manifest> {
    let m = Manifest::load(&c.out)?;
    cfg.dataset = m.meta.generator.clone();
    cfg.model.scenes = m.meta.scenes;
    cfg.model.events = m.meta.events;
    cfg.validate()?;
    Ok(m)
}

fn load_teacher(c: &Common) -> Result<Option<FrozenTeacher>> {
    let dir = c.out.join(TEACHER_DIR);
    if dir.exists() {
        Checkpoint::load_teacher(&dir).map(Some)
    } else {
        Ok(None)
    }
}

fn load_table(c: &Common) -> Result<Option<ScenePosteriorTable>> {
    let path = c.out.join(POSTERIORS_FILE);
    if path.exists() {
        ScenePosteriorTable::load(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
}

fn generate(c: &Common, a: &GenerateArgs) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(k) = a.scenes {
        cfg.dataset.scenes = k;
    }
    if let Some(e) = a.events {
        cfg.dataset.events = e;
    }
    if let Some(n) = a.pairs {
        cfg.dataset.pairs = n;
    }
    if let Some(s) = c.seed {
        cfg.dataset.seed = s;
    }
    cfg.balance &= !a.no_balance;
    cfg.model.scenes = cfg.dataset.scenes;
    cfg.model.events = cfg.dataset.events;
    cfg.validate()?;
    let m = build_dataset(&cfg.dataset, &c.out, cfg.balance)?;
    write_json(&c.out.join(CONFIG_FILE), &cfg)?;
    let count = |s| m.split_indices(s).len();
    println!(
        "generated {} records (train {}, val {}, test {}), class counts {:?}",
        m.records.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        m.class_counts()
    );
    Ok(())
}

fn pretrain(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    let mut m = load_manifest(c, &mut cfg)?;
    let seed = c.seed.unwrap_or(cfg.dataset.seed);
    let mut data = Prepared::load(&c.out, &m)?;
    let (teacher, report) = pretrain_teacher(&cfg.teacher, &cfg.model, &data, seed)?;
    let dir = c.out.join(TEACHER_DIR);
    Checkpoint::save_teacher(&dir, &teacher, seed)?;
    cache_teacher_outputs(&teacher, &mut data, &mut m)?;
    m.save(&c.out)?;
    // A table built from an earlier teacher no longer matches the cache.
    let stale = c.out.join(POSTERIORS_FILE);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::Io { path: stale.clone(), source: e })?;
    }
    write_json(&dir.join("report.json"), &report)?;
    write_json(&dir.join(CONFIG_FILE), &cfg)?;
    println!(
        "teacher {} after {} epochs, per-event accuracy {:.4}",
        report.snapshot_id,
        report.epochs_run,
        report.accuracy.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn build_posteriors(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    let m = load_manifest(c, &mut cfg)?;
    let table = ScenePosteriorTable::from_manifest(&m)?;
    table.save(&c.out.join(POSTERIORS_FILE))?;
    write_json(&c.out.join("posteriors.config.json"), &cfg)?;
    println!("posterior table {}x{} written", table.scenes(), table.events());
    Ok(())
}

fn apply_train_args(cfg: &mut ExperimentConfig, a: &TrainArgs) -> Result<()> {
    if let Some(s) = &a.approach {
        cfg.loss.approach = s.parse()?;
    }
    if let Some(s) = &a.modality {
        cfg.modality_mask = s.parse()?;
    }
    if let Some(s) = &a.init {
        cfg.init = s.parse()?;
    }
    if let Some(v) = a.alpha {
        cfg.loss.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.loss.beta = v;
    }
    if let Some(v) = a.tau {
        cfg.loss.tau = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.optimizer.lr = v;
    }
    if a.no_scene_loss {
        cfg.loss.scene_loss = false;
    }
    Ok(())
}

/// Teacher and table for a set of runs, failing fast on missing prerequisites.
fn prerequisites(
    c: &Common,
    specs: impl IntoIterator<Item = (Approach, Init)>,
) -> Result<(Option<FrozenTeacher>, Option<ScenePosteriorTable>)> {
    let table = load_table(c)?;
    let teacher = load_teacher(c)?;
    for (approach, init) in specs {
        if approach == Approach::Le && table.is_none() {
            return Err(Error::MissingPosteriors);
        }
        if (init == Init::PretrainedTeacher || approach.needs_teacher()) && teacher.is_none() {
            return Err(Error::State(format!(
                "no teacher snapshot under {}; run pretrain-teacher first",
                c.out.display()
            )));
        }
    }
    Ok((teacher, table))
}

/// The config of a single run: the experiment with this run's loss, modality, init and seed.
fn run_config(cfg: &ExperimentConfig, spec: &RunSpec) -> ExperimentConfig {
    ExperimentConfig {
        loss: spec.loss.clone(),
        modality_mask: spec.mask,
        init: spec.init,
        seeds: vec![spec.seed],
        ..cfg.clone()
    }
}

#[derive(Serialize)]
struct TestReport<'a> {
    run_id: &'a str,
    epoch_best: usize,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

fn write_run(
    dir: &Path,
    run_id: &str,
    cfg: &ExperimentConfig,
    spec: &RunSpec,
    r: &RunResult,
    teacher: Option<&FrozenTeacher>,
) -> Result<()> {
    let snapshot = teacher.filter(|_| spec.init == Init::PretrainedTeacher || spec.loss.approach.needs_teacher());
    Checkpoint::save_fusion(
        &dir.join(CHECKPOINT_DIR),
        &r.model,
        spec.loss.tau,
        snapshot.map(FrozenTeacher::snapshot_id),
        spec.seed,
    )?;
    write_json(&dir.join(CONFIG_FILE), &run_config(cfg, spec))?;
    write_text(&dir.join("metrics.jsonl"), &r.log_jsonl())?;
    write_text(&dir.join("confusion.csv"), &r.confusion.to_csv())?;
    write_json(
        &dir.join("test.json"),
        &TestReport {
            run_id,
            epoch_best: r.epoch_best,
            metrics: &r.test,
        },
    )
}

fn train_one(c: &Common, a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(c)?;
    apply_train_args(&mut cfg, a)?;
    let seed = match c.seed {
        Some(s) => s,
        None => *cfg.seeds.first().ok_or_else(|| Error::Config("at least one seed is required".into()))?,
    };
    cfg.seeds = vec![seed];
    cfg.validate()?;
    let (teacher, table) = prerequisites(c, [(cfg.loss.approach, cfg.init)])?;
    let m = load_manifest(c, &mut cfg)?;
    let data = Prepared::load(&c.out, &m)?;
    let spec = cfg.run_spec(seed);
    let cell = Cell {
        label: spec.loss.approach.as_str().to_owned(),
        loss: spec.loss.clone(),
        mask: spec.mask,
        init: spec.init,
    };
    let run_id = cell.run_id(&seed.to_string());
    let r = train(&cfg, &spec, &data, teacher.as_ref(), table.as_ref())?;
    let dir = c.out.join(RUNS_DIR).join(&run_id);
    write_run(&dir, &run_id, &cfg, &spec, &r, teacher.as_ref())?;
    println!(
        "{run_id}: best epoch {}, test P {:.4} R {:.4} F {:.4}",
        r.epoch_best, r.test.precision, r.test.recall, r.test.fscore
    );
    Ok(())
}

fn run_dir(c: &Common, a: &RunArgs) -> PathBuf {
    let p = PathBuf::from(&a.run);
    if p.join(CONFIG_FILE).exists() {
        p
    } else {
        c.out.join(RUNS_DIR).join(&a.run)
    }
}

/// A trained run: its directory, config and model.
fn load_run(c: &Common, a: &RunArgs) -> Result<(PathBuf, ExperimentConfig, FusionModel)> {
    let dir = run_dir(c, a);
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(Error::State(format!("no trained run at {}", dir.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.clone(), message: e.to_string() })?;
    let (model, _) = Checkpoint::load_fusion(&dir.join(CHECKPOINT_DIR))?;
    Ok((dir, cfg, model))
}

fn evaluate_run(c: &Common, a: &EvaluateArgs) -> Result<()> {
    let split = parse_split(&a.split)?;
    let (dir, mut cfg, model) = load_run(c, &a.run)?;
    let m = load_manifest(c, &mut cfg)?;
    let data = Prepared::load(&c.out, &m)?;
    let (cm, metrics) = evaluate(&model, &data, split, cfg.modality_mask)?;
    write_json(&dir.join(format!("eval_{split}.json")), &metrics)?;
    write_text(&dir.join(format!("confusion_{split}.csv")), &cm.to_csv())?;
    println!(
        "{split}: P {:.4} R {:.4} F {:.4} over {} samples",
        metrics.precision,
        metrics.recall,
        metrics.fscore,
        cm.total()
    );
    Ok(())
}

fn sweep_cmd(c: &Common, a: &SweepArgs) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.optimizer.lr = v;
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;

    if a.grid {
        let (teacher, table) = prerequisites(c, [(Approach::Le, cfg.init)])?;
        let m = load_manifest(c, &mut cfg)?;
        let data = Prepared::load(&c.out, &m)?;
        let (points, best) = grid_search(&cfg, &data, teacher.as_ref(), table.as_ref())?;
        let mut csv = String::from("alpha,beta,val_fscore\n");
        for p in &points {
            csv.push_str(&format!("{},{},{}\n", p.alpha, p.beta, p.val_fscore));
        }
        write_text(&c.out.join("grid.csv"), &csv)?;
        write_json(&c.out.join("grid.config.json"), &cfg)?;
        let b = &points[best];
        println!("best alpha {} beta {} (mean val F {:.4})", b.alpha, b.beta, b.val_fscore);
        return Ok(());
    }

    let masks = a
        .modalities
        .iter()
        .map(|s| s.parse::<ModalityMask>())
        .collect::<Result<Vec<_>>>()?;
    let mut cells = standard_cells(&cfg.loss, &masks, cfg.init);
    if a.ablations {
        cells.extend(ablation_cells(&cfg.loss, cfg.init));
    }
    let (teacher, table) = prerequisites(c, cells.iter().map(|cell| (cell.loss.approach, cell.init)))?;
    let m = load_manifest(c, &mut cfg)?;
    let data = Prepared::load(&c.out, &m)?;
    let runs = c.out.join(RUNS_DIR);
    let out = sweep(&cfg, &cells, &data, teacher.as_ref(), table.as_ref(), |run_id, _, spec, r| {
        eprintln!("{run_id}: test F {:.4}", r.test.fscore);
        write_run(&runs.join(run_id), run_id, &cfg, spec, r, teacher.as_ref())
    })?;
    write_text(&c.out.join(RESULTS_FILE), &results_csv(&out.rows))?;
    write_json(&c.out.join("sweep.config.json"), &cfg)?;
    for (run_id, class, msg) in &out.failures {
        eprintln!("warning[{class}]: {run_id}: {}", msg.replace('\n', " "));
    }
    println!(
        "{} runs finished, {} failed; results in {}",
        out.rows.iter().filter(|r| !r.is_aggregate()).count(),
        out.failures.len(),
        c.out.join(RESULTS_FILE).display()
    );
    Ok(())
}

fn export_embeddings(c: &Common, a: &RunArgs) -> Result<()> {
    let (dir, mut cfg, model) = load_run(c, a)?;
    let table = load_table(c)?;
    if cfg.loss.approach == Approach::Le && table.is_none() {
        return Err(Error::MissingPosteriors);
    }
    let m = load_manifest(c, &mut cfg)?;
    let data = Prepared::load(&c.out, &m)?;
    let idx = data.indices(Split::Test);
    let preds = predict(&model, &data, &idx, cfg.modality_mask)?;
    let rows = event_embeddings(&preds, cfg.loss.approach, table.as_ref())?;
    let path = dir.join("embeddings.csv");
    write_text(&path, &embedding_csv(&data.batch_labels(&idx), &rows)?)?;
    println!("{} rows written to {}", rows.len(), path.display());
    Ok(())
}

fn cam_cmd(c: &Common, a: &CamArgs) -> Result<()> {
    let (dir, mut cfg, model) = load_run(c, &a.run)?;
    if !cfg.modality_mask.uses_image() {
        return Err(Error::Config("class activation maps need a run that sees the image".into()));
    }
    let m = load_manifest(c, &mut cfg)?;
    let i = match &a.sample {
        Some(id) => m
            .records
            .iter()
            .position(|r| &r.id == id)
            .ok_or_else(|| Error::Input(format!("no record with id {id:?}")))?,
        None => *m
            .split_indices(Split::Test)
            .first()
            .ok_or_else(|| Error::Config("the test split is empty".into()))?,
    };
    let record = &m.records[i];
    let data = Prepared::load(&c.out, &m)?;
    let mut tape = Tape::new();
    let out = model.forward(
        &mut tape,
        &data.batch_images(&[i])?,
        &data.batch_audio(&[i])?,
        cfg.modality_mask,
        false,
    )?;
    let k = match a.class {
        Some(k) => k,
        None => argmax(tape.value(out.scene_logits).data()),
    };
    let maps = tape.value(out.visual_maps.expect("image branch is active")).clone();
    let shape = maps.shape()[1..].to_vec();
    let heat = cam(k, &maps.reshape(&shape)?, model.params.get("fs.w")?)?;
    let image = load_image(&c.out, record)?;
    let png = overlay(&image, &heat)?;
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| dir.join(format!("cam_{}.png", record.id.replace('~', "_"))));
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
    }
    write_png(&path, &png)?;
    println!("class {k} map for {} written to {}", record.id, path.display());
    Ok(())
}

/// Blend a nearest-neighbour upsampled `[h, w]` heat map over a `[3, H, W]`
/// image: red grows with activation, blue with its absence.
fn overlay(image: &Tensor, heat: &Tensor) -> Result<RgbImage> {
    let (big_h, big_w) = (image.shape()[1], image.shape()[2]);
    let (h, w) = (heat.shape()[0], heat.shape()[1]);
    let plane = big_h * big_w;
    let mut out = vec![0.0; 3 * plane];
    for y in 0..big_h {
        for x in 0..big_w {
            let v = heat.data()[(y * h / big_h) * w + x * w / big_w];
            let p = y * big_w + x;
            out[p] = 0.5 * image.data()[p] + 0.5 * v;
            out[plane + p] = 0.5 * image.data()[plane + p];
            out[2 * plane + p] = 0.5 * image.data()[2 * plane + p] + 0.5 * (1.0 - v);
        }
    }
    RgbImage::from_tensor(&Tensor::new(vec![3, big_h, big_w], out)?)
}
