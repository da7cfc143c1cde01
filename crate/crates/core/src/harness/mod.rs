//! Experiment plumbing behind the `handseg` command: data generation,
//! training, evaluation, the ablation matrix and reports.
//!
//! Every file written here starts with (or contains) a provenance line of the
//! form `handseg <version> config <sha256>`.

pub mod ablate;
pub mod config;
pub mod eval;
pub mod train;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use ablate::{run_ablation, summarize, AblationRow, Arm, ArmSummary, ARMS};
pub use config::{AblationConfig, DataConfig, RunConfig, TrainConfig};
pub use eval::{evaluate, mean_mpjpe, score_sample};
pub use train::{read_log, train, train_with, write_log, EpochLog, Stage, TrainOutcome};

use crate::error::{Error, Result};
use crate::metrics::{binned_report, write_records, EvalRecord, Report};
use crate::network::Model;
use crate::synthdata::{generate, read_dataset, stratify, write_dataset, SampleRecord};

/// Environment variable that relocates relative output paths.
pub const OUT_ROOT_ENV: &str = "HANDSEG_OUT";

/// Resolves `out` against the output root from [`OUT_ROOT_ENV`] when it is relative.
pub fn resolve_out(out: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if out.is_relative() && !root.is_empty() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

pub struct Splits {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
}

/// Generates both splits in memory. The validation split uses the bitwise
/// complement of the data seed as its master seed.
pub fn generate_splits(cfg: &RunConfig) -> Result<Splits> {
    cfg.validate()?;
    Ok(Splits {
        train: generate(&cfg.gen, cfg.data.seed, cfg.data.train)?,
        val: generate(&cfg.gen, !cfg.data.seed, cfg.data.val)?,
    })
}

/// Reads `dir/train` and `dir/val`, checking that sizes fit the model.
pub fn load_splits(dir: &Path, cfg: &RunConfig) -> Result<Splits> {
    let mut out = Vec::new();
    for name in ["train", "val"] {
        let (manifest, records) = read_dataset(&dir.join(name))?;
        if manifest.count > 0
            && (manifest.crop_size != cfg.model.crop_size || manifest.seg_size != cfg.model.segmentation_size())
        {
            return Err(Error::Config(format!(
                "{name} split has {}px crops and {}px labels; the model wants {} and {}",
                manifest.crop_size,
                manifest.seg_size,
                cfg.model.crop_size,
                cfg.model.segmentation_size()
            )));
        }
        out.push(records);
    }
    let val = out.pop().expect("two splits");
    let train = out.pop().expect("two splits");
    Ok(Splits { train, val })
}

/// Loads `data` when given, generates from the config otherwise.
pub fn obtain_splits(cfg: &RunConfig, data: Option<&Path>) -> Result<Splits> {
    match data {
        Some(dir) => load_splits(dir, cfg),
        None => generate_splits(cfg),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join("config.toml"), |b| {
        writeln!(b, "# {}", cfg.provenance()).map_err(|e| Error::io("config", e))?;
        b.extend_from_slice(cfg.to_toml().as_bytes());
        Ok(())
    })
}

/// Writes both splits below `out` and returns a short summary.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<String> {
    let splits = generate_splits(cfg)?;
    create_dir(out)?;
    write_config(cfg, out)?;
    let mut summary = String::new();
    for (name, records) in [("train", &splits.train), ("val", &splits.val)] {
        let m = write_dataset(records, &out.join(name), Some(&cfg.gen), &cfg.provenance())?;
        let best_effort = records.iter().filter(|r| r.best_effort).count();
        summary += &format!(
            "{name}: {} samples in {} chunks, {best_effort} best-effort, checksum {}\n",
            m.count,
            m.chunks.len(),
            &m.checksum[..16]
        );
        for s in stratify(records) {
            summary += &format!("  {:>10} {}\n", s.label, s.indices.len());
        }
    }
    Ok(summary)
}

/// Trains and writes `config.toml`, `train_log.csv` and `model.hsck` into `dir`.
pub fn train_to_dir(
    cfg: &RunConfig,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    dir: &Path,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Model> {
    create_dir(dir)?;
    write_config(cfg, dir)?;
    let log_path = dir.join("train_log.csv");
    let mut rows = Vec::new();
    let outcome = train_with(cfg, train_set, val_set, Some(dir), |row| {
        rows.push(row.clone());
        // rewritten every epoch so progress is visible on disk
        let _ = write_file(&log_path, |b| write_log(cfg, &rows, b));
        on_epoch(row);
    })?;
    write_file(&log_path, |b| write_log(cfg, &outcome.log, b))?;
    let mut model = outcome.model;
    model.provenance = cfg.provenance();
    model.save(&dir.join("model.hsck"))?;
    Ok(model)
}

/// Writes `records.csv` and `report.csv` for `model` on `records` into `dir`.
pub fn run_eval_to_dir(model: &Model, cfg: &RunConfig, records: &[SampleRecord], dir: &Path) -> Result<Report> {
    let evals = evaluate(model, records)?;
    write_eval(&evals, &cfg.provenance(), dir)
}

/// Writes per-sample rows and the binned report, both headed by `provenance`.
pub fn write_eval(evals: &[EvalRecord], provenance: &str, dir: &Path) -> Result<Report> {
    create_dir(dir)?;
    let report = binned_report(evals)?;
    let header = |b: &mut Vec<u8>| writeln!(b, "# {provenance}").map_err(|e| Error::io("csv", e));
    write_file(&dir.join("records.csv"), |b| {
        header(b)?;
        write_records(evals, b)
    })?;
    write_file(&dir.join("report.csv"), |b| {
        header(b)?;
        report.write_csv(b)
    })?;
    Ok(report)
}

pub fn cmd_train(cfg: &RunConfig, data: Option<&Path>, out: &Path, on_epoch: impl FnMut(&EpochLog)) -> Result<Model> {
    let splits = obtain_splits(cfg, data)?;
    train_to_dir(cfg, &splits.train, &splits.val, out, on_epoch)
}

/// Evaluates a checkpoint on a stored dataset split.
///
/// When `expected` is given its model section must match the checkpoint.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path, out: &Path, expected: Option<&RunConfig>) -> Result<Report> {
    let model = Model::load(checkpoint)?;
    if let Some(cfg) = expected {
        if cfg.model != model.config {
            return Err(Error::Config(format!(
                "{} was trained with a different model config than the one given",
                checkpoint.display()
            )));
        }
    }
    let (manifest, records) = read_dataset(dataset)?;
    if manifest.count > 0
        && (manifest.crop_size != model.config.crop_size || manifest.seg_size != model.config.segmentation_size())
    {
        return Err(Error::Config(format!(
            "dataset crops are {}px with {}px labels; the checkpoint expects {} and {}",
            manifest.crop_size,
            manifest.seg_size,
            model.config.crop_size,
            model.config.segmentation_size()
        )));
    }
    let evals = evaluate(&model, &records)?;
    write_eval(&evals, &model.provenance, out)
}

/// Runs the ablation matrix into `out` and writes `ablation.csv` and `ablation_summary.csv`.
pub fn cmd_ablate(
    cfg: &RunConfig,
    data: Option<&Path>,
    out: &Path,
    progress: impl FnMut(&str),
) -> Result<Vec<ArmSummary>> {
    let splits = obtain_splits(cfg, data)?;
    create_dir(out)?;
    write_config(cfg, out)?;
    let rows = run_ablation(cfg, &splits.train, &splits.val, out, progress)?;
    let summary = summarize(&rows);
    write_table(cfg, &rows, &out.join("ablation.csv"))?;
    write_table(cfg, &summary, &out.join("ablation_summary.csv"))?;
    Ok(summary)
}

fn write_table<T: serde::Serialize>(cfg: &RunConfig, rows: &[T], path: &Path) -> Result<()> {
    write_file(path, |b| {
        writeln!(b, "# {}", cfg.provenance()).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(b);
        for r in rows {
            w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    })
}

pub fn read_table<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(f)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Rebuilds the report of an evaluation directory from its `records.csv`, or
/// the summary of an ablation directory from its `ablation.csv`, and renders
/// it as a text table.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let records_path = dir.join("records.csv");
    if records_path.exists() {
        let text = std::fs::read_to_string(&records_path).map_err(|e| Error::io(&records_path, e))?;
        let provenance = text.lines().next().and_then(|l| l.strip_prefix("# ")).unwrap_or("").to_string();
        let evals = crate::metrics::read_records(text.as_bytes())?;
        let report = write_eval(&evals, &provenance, dir)?;
        return Ok(render_report(&report));
    }
    let table = dir.join("ablation.csv");
    if table.exists() {
        let rows: Vec<AblationRow> = read_table(&table)?;
        return Ok(render_summary(&summarize(&rows)));
    }
    Err(Error::Config(format!(
        "{} holds neither records.csv nor ablation.csv",
        dir.display()
    )))
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.3}"))
}

pub fn render_report(report: &Report) -> String {
    let mut s = format!("{:<16} {:<22} {:>6} {:>10} {:>10}\n", "section", "name", "count", "mean", "std");
    for r in &report.rows {
        s += &format!(
            "{:<16} {:<22} {:>6} {:>10} {:>10}\n",
            r.section,
            r.name,
            r.count,
            opt(r.mean),
            opt(r.std)
        );
    }
    s
}

pub fn render_summary(rows: &[ArmSummary]) -> String {
    let mut s = format!(
        "{:<18} {:>5} {:>14} {:>10} {:>12} {:>10} {:>8}\n",
        "arm", "seeds", "ih_mpjpe_med", "ih_std", "mpjpe_med", "mrrpe_med", "miou"
    );
    for r in rows {
        s += &format!(
            "{:<18} {:>5} {:>14} {:>10} {:>12} {:>10} {:>8}\n",
            r.arm,
            r.seeds,
            opt(r.median_mpjpe_interacting_mm),
            opt(r.std_mpjpe_interacting_mm),
            opt(r.median_mpjpe_mm),
            opt(r.median_mrrpe_mm),
            opt(r.median_miou)
        );
    }
    s
}
