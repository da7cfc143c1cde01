//! Training objective terms.
//!
//! Every term has an `f64` per-sample form returning its value and gradient,
//! and a batched tape node that averages the per-sample values over the batch.
//! Handedness pairs are indexed by [`Hand::index`]: `[right, left]`.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{Hand, KinematicTree, Pose25D};
use crate::segmentation::{segmentation_loss, PartLabelMap, SegmentationVolume};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_b: f64,
    pub reduction: Reduction,
    /// Millimetres per unit of relative depth inside the pose and bone terms.
    pub z_unit_mm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_s: 10.0,
            lambda_b: 1.0,
            reduction: Reduction::Sum,
            z_unit_mm: 6.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_unit_mm > 0.0 && self.z_unit_mm.is_finite()) {
            return Err(Error::Config(format!("z_unit_mm must be positive, got {}", self.z_unit_mm)));
        }
        if !(self.lambda_s >= 0.0 && self.lambda_b >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got lambda_s={} lambda_b={}",
                self.lambda_s, self.lambda_b
            )));
        }
        Ok(())
    }
}

/// Value of a masked term and how many elements it supervised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Masked {
    pub value: f64,
    pub supervised: usize,
}

impl Masked {
    /// True when nothing was supervised and the value defaulted to zero.
    pub fn is_empty(&self) -> bool {
        self.supervised == 0
    }
}

/// Binary cross-entropy summed over the two hands.
pub fn handedness_loss(pred: [f64; 2], gt: [bool; 2]) -> Result<f64> {
    if pred.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Contract(format!("handedness scores {pred:?} outside (0, 1)")));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(&p, y)| if y { -p.ln() } else { -(1.0 - p).ln() })
        .sum())
}

pub fn handedness_loss_grad(pred: [f64; 2], gt: [bool; 2]) -> [f64; 2] {
    let g = |p: f64, y: bool| if y { -1.0 / p } else { 1.0 / (1.0 - p) };
    [g(pred[0], gt[0]), g(pred[1], gt[1])]
}

/// Same loss taking pre-sigmoid logits; stable for saturated scores.
pub fn handedness_loss_logits(logits: [f64; 2], gt: [bool; 2]) -> (f64, [f64; 2]) {
    let mut value = 0.0;
    let mut grad = [0.0; 2];
    for i in 0..2 {
        let x = logits[i];
        let y = if gt[i] { 1.0 } else { 0.0 };
        // log(1 + e^x) - y x, written to avoid overflow
        value += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        grad[i] = 1.0 / (1.0 + (-x).exp()) - y;
    }
    (value, grad)
}

fn check_pair(pred: &Pose25D, gt: &Pose25D) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("pose sizes differ: {} vs {}", pred.len(), gt.len())));
    }
    Ok(())
}

/// L1 error over joints valid in `gt`, all three coordinates.
pub fn pose25d_loss(pred: &Pose25D, gt: &Pose25D, reduction: Reduction) -> Result<Masked> {
    check_pair(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0;
    for (i, (p, g)) in pred.joints.iter().zip(&gt.joints).enumerate() {
        if gt.valid[i] {
            sum += (0..3).map(|c| (p[c] - g[c]).abs()).sum::<f64>();
            n += 3;
        }
    }
    let value = match (reduction, n) {
        (_, 0) => 0.0,
        (Reduction::Mean, n) => sum / n as f64,
        (Reduction::Sum, _) => sum,
    };
    Ok(Masked { value, supervised: n })
}

pub fn pose25d_loss_grad(pred: &Pose25D, gt: &Pose25D, reduction: Reduction) -> Vec<[f64; 3]> {
    let n = 3 * gt.valid.iter().filter(|&&v| v).count();
    let scale = match reduction {
        Reduction::Mean if n > 0 => 1.0 / n as f64,
        _ => 1.0,
    };
    pred.joints
        .iter()
        .zip(&gt.joints)
        .zip(&gt.valid)
        .map(|((p, g), &v)| {
            let mut out = [0.0; 3];
            if v {
                for c in 0..3 {
                    out[c] = scale * sign(p[c] - g[c]);
                }
            }
            out
        })
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `|pred - gt|` when both hands are present, otherwise zero.
pub fn rel_depth_loss(pred: f64, gt: f64, both_present: bool) -> f64 {
    if both_present {
        (pred - gt).abs()
    } else {
        0.0
    }
}

pub fn rel_depth_loss_grad(pred: f64, gt: f64, both_present: bool) -> f64 {
    if both_present {
        sign(pred - gt)
    } else {
        0.0
    }
}

fn bone_residual(pred: &Pose25D, gt: &Pose25D, parent: usize, child: usize) -> [f64; 3] {
    let (pp, pc, gp, gc) = (pred.joints[parent], pred.joints[child], gt.joints[parent], gt.joints[child]);
    [0, 1, 2].map(|c| (pc[c] - pp[c]) - (gc[c] - gp[c]))
}

fn edge_supervised(gt: &Pose25D, parent: usize, child: usize) -> bool {
    gt.valid[parent] && gt.valid[child]
}

/// Sum over tree edges of the L2 norm of the bone-vector residual.
///
/// Coordinates are used as they come, so `x, y` in pixels and `z` in mm mix.
pub fn bone_loss(pred: &Pose25D, gt: &Pose25D, tree: &KinematicTree) -> Result<f64> {
    check_pair(pred, gt)?;
    if gt.len() != tree.joint_count() {
        return Err(Error::Contract(format!(
            "pose has {} joints, tree expects {}",
            gt.len(),
            tree.joint_count()
        )));
    }
    Ok(tree
        .edges
        .iter()
        .filter(|&&(p, c)| edge_supervised(gt, p, c))
        .map(|&(p, c)| norm(bone_residual(pred, gt, p, c)))
        .sum())
}

pub fn bone_loss_grad(pred: &Pose25D, gt: &Pose25D, tree: &KinematicTree) -> Vec<[f64; 3]> {
    let mut g = vec![[0.0; 3]; pred.len()];
    for &(p, c) in &tree.edges {
        if !edge_supervised(gt, p, c) {
            continue;
        }
        let r = bone_residual(pred, gt, p, c);
        let n = norm(r);
        if n == 0.0 {
            continue;
        }
        for k in 0..3 {
            g[c][k] += r[k] / n;
            g[p][k] -= r[k] / n;
        }
    }
    g
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[derive(Clone, Debug)]
pub struct SamplePrediction {
    pub handedness: [f64; 2],
    pub rel_depth: f64,
    pub pose25d: Pose25D,
    pub segmentation: Option<SegmentationVolume>,
}

#[derive(Clone, Debug)]
pub struct SampleTargets {
    pub presence: [bool; 2],
    pub rel_depth: f64,
    pub pose25d: Pose25D,
    pub labels: Option<PartLabelMap>,
}

impl SampleTargets {
    pub fn both_present(&self) -> bool {
        self.presence[Hand::Right.index()] && self.presence[Hand::Left.index()]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct LossReport {
    pub total: f64,
    pub handedness: f64,
    pub pose25d: f64,
    pub rel_depth: f64,
    pub segmentation: f64,
    pub bone: f64,
}

impl LossReport {
    pub fn from_terms(h: f64, pose: f64, z: f64, s: f64, b: f64, w: &LossWeights) -> Self {
        LossReport {
            total: h + pose + z + w.lambda_s * s + w.lambda_b * b,
            handedness: h,
            pose25d: pose,
            rel_depth: z,
            segmentation: s,
            bone: b,
        }
    }

    pub fn accumulate(&mut self, other: &LossReport, weight: f64) {
        self.total += weight * other.total;
        self.handedness += weight * other.handedness;
        self.pose25d += weight * other.pose25d;
        self.rel_depth += weight * other.rel_depth;
        self.segmentation += weight * other.segmentation;
        self.bone += weight * other.bone;
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.handedness, self.pose25d, self.rel_depth, self.segmentation, self.bone]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `pose` with relative depths divided by `unit_mm`, the space the pose and
/// bone terms are measured in.
pub fn in_z_units(pose: &Pose25D, unit_mm: f64) -> Pose25D {
    let joints = pose.joints.iter().map(|j| [j[0], j[1], j[2] / unit_mm]).collect();
    Pose25D::new(joints, pose.valid.clone())
}

/// Weighted objective for one sample. The segmentation term is skipped when
/// either the prediction or the labels are absent.
///
/// With [`Reduction::Sum`] the pose term sums over joints and coordinates and
/// the segmentation term sums over pixels.
pub fn total_loss(
    pred: &SamplePrediction,
    target: &SampleTargets,
    tree: &KinematicTree,
    weights: &LossWeights,
) -> Result<LossReport> {
    weights.validate()?;
    let p25 = in_z_units(&pred.pose25d, weights.z_unit_mm);
    let t25 = in_z_units(&target.pose25d, weights.z_unit_mm);
    let h = handedness_loss(pred.handedness, target.presence)?;
    let pose = pose25d_loss(&p25, &t25, weights.reduction)?.value;
    let z = rel_depth_loss(pred.rel_depth, target.rel_depth, target.both_present());
    let s = match (&pred.segmentation, &target.labels) {
        (Some(v), Some(l)) => {
            let mean = segmentation_loss(v, l)?;
            match weights.reduction {
                Reduction::Mean => mean,
                Reduction::Sum => mean * l.labels.len() as f64,
            }
        }
        _ => 0.0,
    };
    let b = bone_loss(&p25, &t25, tree)?;
    Ok(LossReport::from_terms(h, pose, z, s, b, weights))
}

// ----------------------------------------------------------------------
// Batched tape nodes

/// Applies a per-sample `(value, gradient)` function to each row of the
/// leading axis and returns the batch mean as a scalar node.
pub fn per_sample_mean_node(
    tape: &mut Tape,
    input: Var,
    mut f: impl FnMut(usize, &[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<Var> {
    let t = tape.value(input);
    let n = t.shape()[0];
    let row = t.len() / n.max(1);
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(t.len());
    for s in 0..n {
        let x: Vec<f64> = t.data()[s * row..(s + 1) * row].iter().map(|&v| v as f64).collect();
        let (v, g) = f(s, &x)?;
        if g.len() != row {
            return Err(Error::Contract("per-sample gradient has the wrong size".into()));
        }
        total += v;
        grad.extend(g.into_iter().map(|v| (v / n as f64) as f32));
    }
    let grad = Tensor::new(t.shape(), grad);
    let value = if n == 0 { 0.0 } else { total / n as f64 };
    Ok(tape.custom(
        &[input],
        Tensor::scalar(value as f32),
        Box::new(move |g, _, _, _| {
            let mut d = grad.clone();
            d.scale_in_place(g.item());
            vec![Some(d)]
        }),
    ))
}

fn pose_of(row: &[f64], valid: &[bool]) -> Pose25D {
    Pose25D::new(row.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(), valid.to_vec())
}

fn flatten(g: Vec<[f64; 3]>) -> Vec<f64> {
    g.into_iter().flatten().collect()
}

/// Handedness BCE on `[N, 2]` logits.
pub fn handedness_loss_node(tape: &mut Tape, logits: Var, gt: &[[bool; 2]]) -> Result<Var> {
    per_sample_mean_node(tape, logits, |s, x| {
        let (v, g) = handedness_loss_logits([x[0], x[1]], gt[s]);
        Ok((v, g.to_vec()))
    })
}

/// L1 pose loss on `[N, K, 3]` predictions.
pub fn pose25d_loss_node(tape: &mut Tape, pred: Var, gt: &[&Pose25D], reduction: Reduction) -> Result<Var> {
    per_sample_mean_node(tape, pred, |s, x| {
        let p = pose_of(x, &gt[s].valid);
        let v = pose25d_loss(&p, gt[s], reduction)?.value;
        Ok((v, flatten(pose25d_loss_grad(&p, gt[s], reduction))))
    })
}

/// Relative root depth L1 on `[N]` predictions, masked per sample.
pub fn rel_depth_loss_node(tape: &mut Tape, pred: Var, gt: &[f64], both: &[bool]) -> Result<Var> {
    per_sample_mean_node(tape, pred, |s, x| {
        Ok((
            rel_depth_loss(x[0], gt[s], both[s]),
            vec![rel_depth_loss_grad(x[0], gt[s], both[s])],
        ))
    })
}

/// Bone-vector loss on `[N, K, 3]` predictions.
pub fn bone_loss_node(tape: &mut Tape, pred: Var, gt: &[&Pose25D], tree: &KinematicTree) -> Result<Var> {
    per_sample_mean_node(tape, pred, |s, x| {
        let p = pose_of(x, &gt[s].valid);
        Ok((bone_loss(&p, gt[s], tree)?, flatten(bone_loss_grad(&p, gt[s], tree))))
    })
}
