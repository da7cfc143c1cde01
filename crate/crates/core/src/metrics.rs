//! Evaluation metrics and the binned error reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Hand, KinematicTree, Pose3D};
use crate::segmentation::PartLabelMap;

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Mean joint error after aligning each hand's root on its own.
///
/// A joint counts when it and its hand's root are valid in `gt`.
/// Returns `None` when no joint counts.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D, tree: &KinematicTree) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for hand in Hand::BOTH {
        let root = tree.root(hand);
        if !gt.valid[root] {
            continue;
        }
        for j in tree.hand_joints(hand) {
            if gt.valid[j] {
                let p = sub(pred.joints[j], pred.joints[root]);
                let g = sub(gt.joints[j], gt.joints[root]);
                sum += dist(p, g);
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Error of the left root relative to the right root. `None` unless both roots are valid.
pub fn mrrpe(pred: &Pose3D, gt: &Pose3D, tree: &KinematicTree) -> Option<f64> {
    let (r, l) = (tree.root(Hand::Right), tree.root(Hand::Left));
    if !(gt.valid[r] && gt.valid[l]) {
        return None;
    }
    let p = sub(pred.joints[l], pred.joints[r]);
    let g = sub(gt.joints[l], gt.joints[r]);
    Some(dist(p, g))
}

/// Area under the interpolated precision-recall curve, in percent.
///
/// Tied scores form one threshold. With no positives the score is 100 when
/// every score is below 0.5 and 0 otherwise.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::Contract("average precision needs matching non-empty inputs".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Ok(if scores.iter().all(|&s| s < 0.5) { 100.0 } else { 0.0 });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // (recall, precision) after each distinct threshold
    let mut curve = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        curve.push((tp as f64 / positives as f64, tp as f64 / seen as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..curve.len() {
        let interp = curve[k..].iter().map(|c| c.1).fold(0.0, f64::max);
        ap += (curve[k].0 - prev_recall) * interp;
        prev_recall = curve[k].0;
    }
    Ok(100.0 * ap)
}

/// Handedness AP averaged over the two hands. Pairs are indexed `[right, left]`.
pub fn handedness_ap(scores: &[[f64; 2]], labels: &[[bool; 2]]) -> Result<f64> {
    let mut total = 0.0;
    for h in 0..2 {
        let s: Vec<f64> = scores.iter().map(|p| p[h]).collect();
        let l: Vec<bool> = labels.iter().map(|p| p[h]).collect();
        total += average_precision(&s, &l)?;
    }
    Ok(total / 2.0)
}

/// Mean IoU over classes present in either map.
pub fn miou(pred: &PartLabelMap, gt: &PartLabelMap) -> Result<f64> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Contract("mIoU of maps with different sizes".into()));
    }
    let mut inter = [0usize; 256];
    let mut union = [0usize; 256];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if p == g {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[g as usize] += 1;
        }
    }
    let present: Vec<usize> = (0..256).filter(|&c| union[c] > 0).collect();
    if present.is_empty() {
        return Ok(1.0);
    }
    Ok(present.iter().map(|&c| inter[c] as f64 / union[c] as f64).sum::<f64>() / present.len() as f64)
}

/// IoU of the two full-hand masks; zero when both are empty.
pub fn interaction_iou(left: &[bool], right: &[bool]) -> f64 {
    let inter = left.iter().zip(right).filter(|(a, b)| **a && **b).count();
    let union = left.iter().zip(right).filter(|(a, b)| **a || **b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean absolute difference between each left bone's length and its right counterpart.
pub fn bone_asymmetry(pred: &Pose3D, tree: &KinematicTree) -> f64 {
    let right = tree.hand_edges(Hand::Right);
    let left = tree.hand_edges(Hand::Left);
    let len = |(a, b): (usize, usize)| dist(pred.joints[a], pred.joints[b]);
    right.iter().zip(left).map(|(&r, &l)| (len(l) - len(r)).abs()).sum::<f64>() / right.len() as f64
}

/// Per-sample evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample: u64,
    pub right_present: bool,
    pub left_present: bool,
    pub interaction_iou: f64,
    pub mpjpe_mm: Option<f64>,
    pub mrrpe_mm: Option<f64>,
    pub miou: Option<f64>,
    pub bone_asymmetry_mm: Option<f64>,
    pub score_right: f64,
    pub score_left: f64,
}

impl EvalRecord {
    pub fn interacting(&self) -> bool {
        self.right_present && self.left_present
    }
}

/// A half-open bin `[lo, hi)`; the last bin of an axis also holds `hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub label: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl Bin {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && (x < self.hi || (self.closed && x == self.hi))
    }
}

/// Interaction-IoU bins for interacting samples. Single-hand samples get their own category.
pub const INTERACTION_BINS: [Bin; 5] = [
    Bin { label: "[0,0.1)", lo: 0.0, hi: 0.1, closed: false },
    Bin { label: "[0.1,0.3)", lo: 0.1, hi: 0.3, closed: false },
    Bin { label: "[0.3,0.5)", lo: 0.3, hi: 0.5, closed: false },
    Bin { label: "[0.5,0.67)", lo: 0.5, hi: 0.67, closed: false },
    Bin { label: "[0.67,1]", lo: 0.67, hi: 1.0, closed: true },
];

pub const MIOU_BINS: [Bin; 5] = [
    Bin { label: "[0,0.2)", lo: 0.0, hi: 0.2, closed: false },
    Bin { label: "[0.2,0.4)", lo: 0.2, hi: 0.4, closed: false },
    Bin { label: "[0.4,0.6)", lo: 0.4, hi: 0.6, closed: false },
    Bin { label: "[0.6,0.8)", lo: 0.6, hi: 0.8, closed: false },
    Bin { label: "[0.8,1]", lo: 0.8, hi: 1.0, closed: true },
];

pub const SINGLE_HAND_BIN: &str = "single";

/// Interaction bin label of a sample.
pub fn interaction_bin(interacting: bool, iou: f64) -> &'static str {
    if !interacting {
        return SINGLE_HAND_BIN;
    }
    INTERACTION_BINS
        .iter()
        .find(|b| b.contains(iou))
        .map_or(INTERACTION_BINS[4].label, |b| b.label)
}

/// One row of the report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `metric`, `interaction_iou`, or `miou`.
    pub section: String,
    pub name: String,
    pub count: usize,
    /// Mean of the metric, or MPJPE in mm for bin rows.
    pub mean: Option<f64>,
    /// Population standard deviation for bin rows.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (Some(m), Some(v.sqrt()))
}

fn mpjpe_of<'a>(records: impl Iterator<Item = &'a EvalRecord>) -> Vec<f64> {
    records.filter_map(|r| r.mpjpe_mm).collect()
}

/// Summary metrics followed by MPJPE mean and spread per interaction and mIoU bin.
/// Empty bins are kept with a zero count and no values.
pub fn binned_report(records: &[EvalRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::Contract("binned report of no records".into()));
    }
    let mut rows = Vec::new();
    let mut metric = |name: &str, xs: Vec<f64>| {
        let (mean, _) = mean_std(&xs);
        rows.push(ReportRow {
            section: "metric".into(),
            name: name.into(),
            count: xs.len(),
            mean,
            std: None,
        });
    };
    metric("mpjpe_mm", mpjpe_of(records.iter()));
    metric("mpjpe_interacting_mm", mpjpe_of(records.iter().filter(|r| r.interacting())));
    metric("mpjpe_single_mm", mpjpe_of(records.iter().filter(|r| !r.interacting())));
    metric("mrrpe_mm", records.iter().filter_map(|r| r.mrrpe_mm).collect());
    metric("miou", records.iter().filter_map(|r| r.miou).collect());
    metric("bone_asymmetry_mm", records.iter().filter_map(|r| r.bone_asymmetry_mm).collect());
    let scores: Vec<[f64; 2]> = records.iter().map(|r| [r.score_right, r.score_left]).collect();
    let labels: Vec<[bool; 2]> = records.iter().map(|r| [r.right_present, r.left_present]).collect();
    rows.push(ReportRow {
        section: "metric".into(),
        name: "handedness_ap".into(),
        count: records.len(),
        mean: Some(handedness_ap(&scores, &labels)?),
        std: None,
    });

    let mut bin_row = |section: &str, name: &str, xs: Vec<f64>| {
        let (mean, std) = mean_std(&xs);
        rows.push(ReportRow {
            section: section.into(),
            name: name.into(),
            count: xs.len(),
            mean,
            std,
        });
    };
    bin_row(
        "interaction_iou",
        SINGLE_HAND_BIN,
        mpjpe_of(records.iter().filter(|r| !r.interacting())),
    );
    for b in INTERACTION_BINS {
        let xs = mpjpe_of(records.iter().filter(|r| interaction_bin(r.interacting(), r.interaction_iou) == b.label));
        bin_row("interaction_iou", b.label, xs);
    }
    for b in MIOU_BINS {
        let xs = mpjpe_of(records.iter().filter(|r| r.miou.is_some_and(|m| b.contains(m))));
        bin_row("miou", b.label, xs);
    }
    Ok(Report { rows })
}

impl Report {
    pub fn get(&self, section: &str, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.section == section && r.name == name)
    }

    pub fn section(&self, section: &str) -> impl Iterator<Item = &ReportRow> {
        let s = section.to_string();
        self.rows.iter().filter(move |r| r.section == s)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("report", e))
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ReportRow>, _>>()
            .map_err(|e| Error::format("report", e.to_string()))?;
        Ok(Report { rows })
    }
}

pub fn write_records(records: &[EvalRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("records", e))
}

pub fn read_records(input: impl std::io::Read) -> Result<Vec<EvalRecord>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<EvalRecord>, _>>()
        .map_err(|e| Error::format("records", e.to_string()))
}

/// True when the values that are present never decrease (or never increase when `rising` is false)
/// and at least two are present.
pub fn is_monotone(values: &[Option<f64>], rising: bool) -> bool {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    v.len() >= 2 && v.windows(2).all(|w| if rising { w[1] >= w[0] } else { w[1] <= w[0] })
}
