//! The ablation matrix: every arm is trained from scratch on the same data
//! with the same list of seeds, then scored on the validation split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::{run_eval_to_dir, train_to_dir};
use crate::error::{Error, Result};
use crate::metrics::{read_records, Report};
use crate::network::Variant;
use crate::synthdata::SampleRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arm {
    pub name: &'static str,
    pub variant: Variant,
    pub bone_loss: bool,
    pub staged: bool,
}

const fn arm(name: &'static str, variant: Variant, bone_loss: bool, staged: bool) -> Arm {
    Arm { name, variant, bone_loss, staged }
}

pub const ARMS: [Arm; 10] = [
    arm("baseline", Variant::Baseline, false, false),
    arm("baseline+bl", Variant::Baseline, true, false),
    arm("baseline+bl+sl", Variant::BaselineSl, true, false),
    arm("baseline+bl+sf*", Variant::FullNoSl, true, false),
    arm("baseline+bl+sf", Variant::Full, true, false),
    arm("segm-only-prob", Variant::SegmOnly, true, false),
    arm("segm-only-label", Variant::SegmOnlyLabel, true, false),
    arm("segm-only-staged", Variant::SegmOnly, true, true),
    arm("lr-prob", Variant::LrProb, true, false),
    arm("lr-mask", Variant::LrMask, true, false),
];

pub fn find_arm(name: &str) -> Result<Arm> {
    ARMS.iter().copied().find(|a| a.name == name).ok_or_else(|| {
        let names: Vec<&str> = ARMS.iter().map(|a| a.name).collect();
        Error::Config(format!("unknown arm {name:?}; known arms: {}", names.join(", ")))
    })
}

/// The run configuration of one arm and seed.
pub fn arm_config(base: &RunConfig, arm: &Arm, seed: u64) -> RunConfig {
    let mut c = base.clone().with_variant(arm.variant);
    c.seed = seed;
    c.train.staged = arm.staged;
    if !arm.bone_loss {
        c.loss.lambda_b = 0.0;
    } else if c.loss.lambda_b == 0.0 {
        c.loss.lambda_b = 1.0;
    }
    c
}

/// One arm and seed of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub variant: Variant,
    pub bone_loss: bool,
    pub staged: bool,
    pub seed: u64,
    pub mpjpe_mm: Option<f64>,
    pub mpjpe_interacting_mm: Option<f64>,
    pub mpjpe_single_mm: Option<f64>,
    pub mrrpe_mm: Option<f64>,
    pub miou: Option<f64>,
    pub handedness_ap: Option<f64>,
}

impl AblationRow {
    pub fn from_report(arm: &Arm, seed: u64, report: &Report) -> Self {
        let m = |name: &str| report.get("metric", name).and_then(|r| r.mean);
        AblationRow {
            arm: arm.name.into(),
            variant: arm.variant,
            bone_loss: arm.bone_loss,
            staged: arm.staged,
            seed,
            mpjpe_mm: m("mpjpe_mm"),
            mpjpe_interacting_mm: m("mpjpe_interacting_mm"),
            mpjpe_single_mm: m("mpjpe_single_mm"),
            mrrpe_mm: m("mrrpe_mm"),
            miou: m("miou"),
            handedness_ap: m("handedness_ap"),
        }
    }
}

/// Per-arm aggregate over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: usize,
    pub median_mpjpe_interacting_mm: Option<f64>,
    pub mean_mpjpe_interacting_mm: Option<f64>,
    pub std_mpjpe_interacting_mm: Option<f64>,
    pub median_mpjpe_mm: Option<f64>,
    pub median_mrrpe_mm: Option<f64>,
    pub median_miou: Option<f64>,
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

pub fn summarize(rows: &[AblationRow]) -> Vec<ArmSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.arm.as_str()) {
            names.push(&r.arm);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.arm == name).collect();
            let col = |f: fn(&AblationRow) -> Option<f64>| mine.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
            let inter = col(|r| r.mpjpe_interacting_mm);
            ArmSummary {
                arm: name.into(),
                seeds: mine.len(),
                median_mpjpe_interacting_mm: median(&inter),
                mean_mpjpe_interacting_mm: (!inter.is_empty()).then(|| inter.iter().sum::<f64>() / inter.len() as f64),
                std_mpjpe_interacting_mm: std_dev(&inter),
                median_mpjpe_mm: median(&col(|r| r.mpjpe_mm)),
                median_mrrpe_mm: median(&col(|r| r.mrrpe_mm)),
                median_miou: median(&col(|r| r.miou)),
            }
        })
        .collect()
}

/// Arms selected by the config, in table order.
pub fn selected_arms(cfg: &RunConfig) -> Result<Vec<Arm>> {
    if cfg.ablation.arms.is_empty() {
        return Ok(ARMS.to_vec());
    }
    let mut out = Vec::new();
    for a in ARMS {
        if cfg.ablation.arms.iter().any(|n| n == a.name) {
            out.push(a);
        }
    }
    for n in &cfg.ablation.arms {
        find_arm(n)?;
    }
    Ok(out)
}

/// Directory of one arm and seed below the ablation root.
pub fn arm_dir(root: &Path, arm: &Arm, seed: u64) -> std::path::PathBuf {
    root.join(arm.name.replace('*', "_star")).join(format!("seed{seed}"))
}

/// Trains and evaluates every selected arm for every seed.
///
/// An arm whose report already carries the same provenance line is reused,
/// so an interrupted run picks up where it stopped.
pub fn run_ablation(
    cfg: &RunConfig,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    root: &Path,
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRow>> {
    if cfg.ablation.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for arm in selected_arms(cfg)? {
        for &seed in &cfg.ablation.seeds {
            let c = arm_config(cfg, &arm, seed);
            let dir = arm_dir(root, &arm, seed);
            let report = match cached_report(&dir, &c) {
                Some(r) => {
                    progress(&format!("{} seed {seed}: reusing {}", arm.name, dir.display()));
                    r
                }
                None => {
                    progress(&format!("{} seed {seed}: training", arm.name));
                    let model = train_to_dir(&c, train_set, val_set, &dir, |_| {})?;
                    run_eval_to_dir(&model, &c, val_set, &dir)?
                }
            };
            rows.push(AblationRow::from_report(&arm, seed, &report));
        }
    }
    Ok(rows)
}

fn cached_report(dir: &Path, cfg: &RunConfig) -> Option<Report> {
    let text = std::fs::read_to_string(dir.join("report.csv")).ok()?;
    let first = text.lines().next()?;
    if first.trim_start_matches('#').trim() != cfg.provenance() {
        return None;
    }
    Report::read_csv(text.as_bytes()).ok()
}

/// Recomputes an arm's row from its per-sample CSV.
pub fn row_from_records(arm: &Arm, seed: u64, records_csv: &Path) -> Result<AblationRow> {
    let f = std::fs::File::open(records_csv).map_err(|e| Error::io(records_csv, e))?;
    let records = read_records(f)?;
    let report = crate::metrics::binned_report(&records)?;
    Ok(AblationRow::from_report(arm, seed, &report))
}
