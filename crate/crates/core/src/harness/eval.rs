//! Per-sample evaluation against generated ground truth.
//!
//! Back-projection uses the ground-truth root depth of every present hand.
//! MRRPE is the exception: there the left root is placed at the true right
//! root depth plus the predicted relative depth.

use crate::error::{Error, Result};
use crate::geometry::{backproject_25d_to_3d, Hand, KinematicTree, Pose25D, Pose3D, RootDepths};
use crate::metrics::{bone_asymmetry, miou, mpjpe, mrrpe, EvalRecord};
use crate::network::{Model, ModelOutput};
use crate::segmentation::{argmax_labels, PartTaxonomy};
use crate::synthdata::SampleRecord;

use super::train::Batch;

const EVAL_BATCH: usize = 64;

/// Runs the model in inference mode over `records` and scores every sample.
pub fn evaluate(model: &Model, records: &[SampleRecord]) -> Result<Vec<EvalRecord>> {
    let taxonomy = PartTaxonomy::new(model.config.variant.taxonomy());
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(EVAL_BATCH) {
        let batch = Batch::new(chunk.iter().collect(), &taxonomy)?;
        let outputs = model.predict(&batch.images)?;
        for (o, r) in outputs.iter().zip(chunk) {
            out.push(score_sample(o, r, &model.tree, &taxonomy)?);
        }
    }
    Ok(out)
}

fn root_z(pose: &Pose3D, tree: &KinematicTree, hand: Hand) -> f64 {
    pose.joints[tree.root(hand)][2]
}

/// Closest a predicted joint may come to the camera plane, in mm. An untrained
/// network can put joints behind the camera, where back-projection is undefined.
const MIN_DEPTH_MM: f64 = 1.0;

fn in_front_of_camera(pose: &Pose25D, tree: &KinematicTree, roots: &RootDepths) -> Pose25D {
    let mut out = pose.clone();
    for (i, j) in out.joints.iter_mut().enumerate() {
        let floor = MIN_DEPTH_MM - roots.get(tree.hand_of(i));
        j[2] = j[2].max(floor);
    }
    out
}

/// Scores one prediction. Joints of absent hands are ignored.
pub fn score_sample(
    out: &ModelOutput,
    rec: &SampleRecord,
    tree: &KinematicTree,
    taxonomy: &PartTaxonomy,
) -> Result<EvalRecord> {
    let gt = &rec.pose3d;
    let truth = RootDepths {
        right: root_z(gt, tree, Hand::Right),
        left: root_z(gt, tree, Hand::Left),
    };
    let pred25 = Pose25D::new(out.pose25d.joints.clone(), rec.pose25d.valid.clone());
    let in_front = |roots: &RootDepths| in_front_of_camera(&pred25, tree, roots);
    let numeric = |e: Error| match e {
        Error::Domain(m) => Error::Numeric(format!("sample {}: {m}", rec.seed)),
        other => other,
    };
    let pred3d = backproject_25d_to_3d(&in_front(&truth), &rec.cam, &rec.crop, tree, &truth).map_err(numeric)?;
    let interacting = rec.interacting();
    let mrrpe_mm = if interacting {
        let roots = RootDepths {
            right: truth.right,
            left: truth.right + out.rel_depth_mm,
        };
        let placed = backproject_25d_to_3d(&in_front(&roots), &rec.cam, &rec.crop, tree, &roots).map_err(numeric)?;
        mrrpe(&placed, gt, tree)
    } else {
        None
    };
    let miou_value = match &out.segmentation {
        Some(vol) => Some(miou(&argmax_labels(vol), &taxonomy.relabel(&rec.part_labels))?),
        None => None,
    };
    Ok(EvalRecord {
        sample: rec.seed,
        right_present: rec.presence[Hand::Right.index()],
        left_present: rec.presence[Hand::Left.index()],
        interaction_iou: rec.interaction_iou,
        mpjpe_mm: mpjpe(&pred3d, gt, tree),
        mrrpe_mm,
        miou: miou_value,
        bone_asymmetry_mm: interacting.then(|| bone_asymmetry(&pred3d, tree)),
        score_right: out.handedness[Hand::Right.index()],
        score_left: out.handedness[Hand::Left.index()],
    })
}

/// Mean per-sample MPJPE, the `mpjpe_mm` row of the report.
pub fn mean_mpjpe(records: &[EvalRecord]) -> Option<f64> {
    let xs: Vec<f64> = records.iter().filter_map(|r| r.mpjpe_mm).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}
