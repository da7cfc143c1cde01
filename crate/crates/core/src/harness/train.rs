//! Mini-batch training with Adam and a step-decayed learning rate.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate, mean_mpjpe};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::Pose25D;
use crate::losses::{bone_loss_node, handedness_loss_node, in_z_units, pose25d_loss_node, rel_depth_loss_node, LossReport, Reduction};
use crate::network::{ForwardVars, Model};
use crate::nn::Ctx;
use crate::optim::{Adam, StepDecay};
use crate::segmentation::{segmentation_loss_node, PartLabelMap, PartTaxonomy};
use crate::synthdata::SampleRecord;
use crate::tensor::Tensor;

/// Which losses drive an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Everything at once.
    Joint,
    /// Staged training, part one: image to segmentation only.
    Segmentation,
    /// Staged training, part two: the segmentation path is frozen.
    Pose,
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub lr: f64,
    pub total: f64,
    pub handedness: f64,
    pub pose25d: f64,
    pub rel_depth: f64,
    pub segmentation: f64,
    pub bone: f64,
    pub train_mpjpe_mm: Option<f64>,
    pub val_mpjpe_mm: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Stacked inputs and targets for one mini-batch.
pub struct Batch<'a> {
    pub records: Vec<&'a SampleRecord>,
    pub images: Tensor,
    pub labels: Vec<PartLabelMap>,
}

impl<'a> Batch<'a> {
    pub fn new(records: Vec<&'a SampleRecord>, taxonomy: &PartTaxonomy) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
        let c = first.crop_size;
        let mut data = Vec::with_capacity(records.len() * 3 * c * c);
        for r in &records {
            if r.crop_size != c {
                return Err(Error::Contract("batch mixes crop sizes".into()));
            }
            data.extend_from_slice(&r.image);
        }
        let labels = records.iter().map(|r| taxonomy.relabel(&r.part_labels)).collect();
        Ok(Batch {
            images: Tensor::new(&[records.len(), 3, c, c], data),
            records,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Moves predictions and targets into the units the pose and bone terms use.
fn in_loss_units(tape: &mut Tape, pred: Var, records: &[&SampleRecord], unit_mm: f64) -> (Var, Vec<Pose25D>) {
    let targets: Vec<Pose25D> = records.iter().map(|r| in_z_units(&r.pose25d, unit_mm)).collect();
    if unit_mm == 1.0 {
        return (pred, targets);
    }
    let shape = tape.value(pred).shape().to_vec();
    let factors = [1.0, 1.0, (1.0 / unit_mm) as f32];
    let data = (0..shape.iter().product::<usize>()).map(|i| factors[i % 3]).collect();
    let c = tape.constant(Tensor::new(&shape, data));
    (tape.mul(pred, c), targets)
}

/// Builds the weighted objective of one batch on `tape`.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    vars: &ForwardVars,
    batch: &Batch,
    cfg: &RunConfig,
    stage: Stage,
) -> Result<(Var, LossReport)> {
    let w = &cfg.loss;
    let variant = model.config.variant;
    let mut terms: Vec<(Var, f32)> = Vec::new();
    let mut values = [0.0f64; 5];
    let mut add = |tape: &mut Tape, slot: usize, v: Var, weight: f64| {
        values[slot] = tape.value(v).item() as f64;
        terms.push((v, weight as f32));
    };
    if stage != Stage::Segmentation {
        let presence: Vec<[bool; 2]> = batch.records.iter().map(|r| r.presence).collect();
        let (pred, targets) = in_loss_units(tape, vars.pose25d, &batch.records, w.z_unit_mm);
        let poses: Vec<&Pose25D> = targets.iter().collect();
        let rel: Vec<f64> = batch.records.iter().map(|r| r.rel_depth_mm(&model.tree)).collect();
        let both: Vec<bool> = batch.records.iter().map(|r| r.interacting()).collect();
        let h = handedness_loss_node(tape, vars.hand_logits, &presence)?;
        add(tape, 0, h, 1.0);
        let p = pose25d_loss_node(tape, pred, &poses, w.reduction)?;
        add(tape, 1, p, 1.0);
        let z = rel_depth_loss_node(tape, vars.rel_depth, &rel, &both)?;
        add(tape, 2, z, 1.0);
        if w.lambda_b > 0.0 {
            let b = bone_loss_node(tape, pred, &poses, &model.tree)?;
            add(tape, 4, b, w.lambda_b);
        }
    }
    if stage != Stage::Pose && variant.supervises_segmentation() && w.lambda_s > 0.0 {
        let logits = vars
            .seg_logits
            .ok_or_else(|| Error::Contract(format!("{variant} has no segmentation output")))?;
        let labels: Vec<&PartLabelMap> = batch.labels.iter().collect();
        let mut s = segmentation_loss_node(tape, logits, &labels)?;
        if w.reduction == Reduction::Sum {
            let pixels = batch.labels.first().map_or(0, |l| l.labels.len());
            s = tape.scale(s, pixels as f32);
        }
        add(tape, 3, s, w.lambda_s);
    }
    if terms.is_empty() {
        return Err(Error::Config(format!("no loss terms are active for {variant} in stage {stage:?}")));
    }
    let total = tape.weighted_sum(&terms);
    let [h, p, z, s, b] = values;
    Ok((total, LossReport::from_terms(h, p, z, s, b, w)))
}

/// Trains a fresh model. `dump_dir` receives a diagnostic file if the loss stops being finite.
pub fn train(
    cfg: &RunConfig,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    dump_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_with(cfg, train_set, val_set, dump_dir, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    cfg: &RunConfig,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    dump_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let t = &cfg.train;
    let stages: Vec<(Stage, usize)> = if t.staged {
        vec![
            (Stage::Segmentation, t.segmentation_epochs.unwrap_or(t.epochs)),
            (Stage::Pose, t.epochs),
        ]
    } else {
        vec![(Stage::Joint, t.epochs)]
    };
    if train_set.is_empty() && stages.iter().any(|s| s.1 > 0) {
        return Err(Error::Config("training set is empty".into()));
    }
    let taxonomy = PartTaxonomy::new(cfg.model.variant.taxonomy());
    let total_epochs: usize = stages.iter().map(|s| s.1).sum();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut epoch = 0;
    for (stage, epochs) in stages {
        model.freeze_segmentation_path(stage == Stage::Pose);
        let schedule = StepDecay {
            base_lr: t.lr,
            decay_epochs: t.decay_epochs.clone(),
            factor: t.decay_factor,
        };
        let mut adam = Adam::new(t.lr);
        for stage_epoch in 0..epochs {
            epoch += 1;
            adam.lr = schedule.lr_at(stage_epoch);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            order.shuffle(&mut rng);
            let mut sum = LossReport::default();
            for (bi, chunk) in order.chunks(t.batch_size).enumerate() {
                let batch = Batch::new(chunk.iter().map(|&i| &train_set[i]).collect(), &taxonomy)?;
                let mut tape = Tape::new();
                let mut ctx = Ctx::new(&mut tape, &model.params, true);
                let x = ctx.tape.constant(batch.images.clone());
                let vars = match model.forward(&mut ctx, x) {
                    Ok(v) => v,
                    Err(Error::Domain(m)) => {
                        let path = dump_batch(dump_dir, epoch, bi, &batch, &LossReport::default())?;
                        return Err(Error::Numeric(format!(
                            "non-finite activations at epoch {epoch}, batch {bi} ({m}){}",
                            path.map(|p| format!("; batch dumped to {}", p.display())).unwrap_or_default()
                        )));
                    }
                    Err(e) => return Err(e),
                };
                let updates = std::mem::take(&mut ctx.buffer_updates);
                let (total, report) = batch_loss(&model, &mut tape, &vars, &batch, cfg, stage)?;
                if !report.is_finite() {
                    let path = dump_batch(dump_dir, epoch, bi, &batch, &report)?;
                    return Err(Error::Numeric(format!(
                        "loss became non-finite at epoch {epoch}, batch {bi}{}",
                        path.map(|p| format!("; batch dumped to {}", p.display())).unwrap_or_default()
                    )));
                }
                let grads = tape.backward(total);
                adam.step(&mut model.params, grads.param_grads());
                for (id, v) in updates {
                    *model.params.value_mut(id) = v;
                }
                sum.accumulate(&report, batch.len() as f64);
            }
            let n = train_set.len().max(1) as f64;
            let evaluate_now = epoch == total_epochs || (t.eval_every > 0 && epoch % t.eval_every == 0);
            let (train_mpjpe_mm, val_mpjpe_mm) = if evaluate_now {
                let tr = mean_mpjpe(&evaluate(&model, train_set)?);
                let va = if val_set.is_empty() { None } else { mean_mpjpe(&evaluate(&model, val_set)?) };
                (tr, va)
            } else {
                (None, None)
            };
            let row = EpochLog {
                epoch,
                stage,
                lr: adam.lr,
                total: sum.total / n,
                handedness: sum.handedness / n,
                pose25d: sum.pose25d / n,
                rel_depth: sum.rel_depth / n,
                segmentation: sum.segmentation / n,
                bone: sum.bone / n,
                train_mpjpe_mm,
                val_mpjpe_mm,
            };
            on_epoch(&row);
            log.push(row);
        }
    }
    model.freeze_segmentation_path(false);
    Ok(TrainOutcome { model, log })
}

fn dump_batch(
    dir: Option<&Path>,
    epoch: usize,
    batch_index: usize,
    batch: &Batch,
    report: &LossReport,
) -> Result<Option<std::path::PathBuf>> {
    let Some(dir) = dir else { return Ok(None) };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("nonfinite_batch.json");
    let seeds: Vec<u64> = batch.records.iter().map(|r| r.seed).collect();
    let body = serde_json::json!({
        "epoch": epoch,
        "batch": batch_index,
        "sample_seeds": seeds,
        "loss": report,
        "image_finite": batch.images.all_finite(),
    });
    std::fs::write(&path, serde_json::to_vec_pretty(&body).expect("json"))
        .map_err(|e| Error::io(&path, e))?;
    Ok(Some(path))
}

/// Writes the training log with the provenance line and loss weights as `#` comments.
pub fn write_log(cfg: &RunConfig, log: &[EpochLog], mut out: impl Write) -> Result<()> {
    let w = &cfg.loss;
    let header = format!(
        "# {}\n# lambda_s={} lambda_b={} reduction={} z_unit_mm={}\n",
        cfg.provenance(),
        w.lambda_s,
        w.lambda_b,
        match w.reduction {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        },
        w.z_unit_mm
    );
    out.write_all(header.as_bytes()).map_err(|e| Error::io("training log", e))?;
    let mut csv = csv::Writer::from_writer(out);
    for row in log {
        csv.serialize(row).map_err(|e| Error::Config(e.to_string()))?;
    }
    csv.flush().map_err(|e| Error::io("training log", e))
}

pub fn read_log(input: impl std::io::Read) -> Result<Vec<EpochLog>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<EpochLog>, _>>()
        .map_err(|e| Error::format("training log", e.to_string()))
}
