//! The weighted training objective for one sample as its 2D prediction drifts.

use handseg::geometry::KinematicTree;
use handseg::harness::RunConfig;
use handseg::losses::{total_loss, LossWeights, Reduction, SamplePrediction, SampleTargets};
use handseg::synthdata::sample_scene;

fn main() -> handseg::Result<()> {
    let tree = KinematicTree::hand21();
    let rec = sample_scene(3, &RunConfig::default().gen)?;
    let targets = SampleTargets {
        presence: rec.presence,
        rel_depth: rec.rel_depth_mm(&tree),
        pose25d: rec.pose25d.clone(),
        labels: Some(rec.part_labels.clone()),
    };
    for (name, shift) in [("exact", 0.0), ("1 px right", 1.0), ("4 px right", 4.0)] {
        let mut pose = rec.pose25d.clone();
        for j in &mut pose.joints {
            j[0] += shift;
        }
        let pred = SamplePrediction {
            handedness: [0.9, 0.9],
            pose25d: pose,
            rel_depth: targets.rel_depth + 10.0,
            segmentation: None,
        };
        for reduction in [Reduction::Sum, Reduction::Mean] {
            let w = LossWeights { reduction, ..LossWeights::default() };
            let r = total_loss(&pred, &targets, &tree, &w)?;
            println!(
                "{name:<11} {reduction:?}: total {:8.3}  pose {:7.3}  bone {:7.3}  depth {:5.1}  handedness {:.3}",
                r.total, r.pose25d, r.bone, r.rel_depth, r.handedness
            );
        }
    }
    Ok(())
}
