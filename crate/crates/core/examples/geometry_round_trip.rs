//! Projects a synthetic two-hand pose into a crop, lifts it back to 3D with
//! the true root depths, and shows how a wrong right-root depth moves the hand.

use handseg::geometry::{backproject_25d_to_3d, pose3d_to_25d, Hand, KinematicTree, RootDepths};
use handseg::harness::RunConfig;
use handseg::synthdata::sample_scene;

fn main() -> handseg::Result<()> {
    let cfg = RunConfig::default();
    let tree = KinematicTree::hand21();
    let rec = sample_scene(42, &cfg.gen)?;

    println!("camera fx {:.1} fy {:.1}, crop scale {:.4}", rec.cam.fx, rec.cam.fy, rec.crop.scale_x);
    let p25 = pose3d_to_25d(&rec.pose3d, &rec.cam, &rec.crop, &tree)?;
    for hand in Hand::BOTH {
        if !rec.presence[hand.index()] {
            println!("{:>5} hand absent", hand.name());
            continue;
        }
        let tip = tree.hand_joints(hand).start + 8;
        let [x, y, z] = p25.joints[tip];
        println!("{:>5} index tip: crop ({x:.2}, {y:.2}) px, {z:+.1} mm from the wrist", hand.name());
    }

    let root = |h: Hand| rec.pose3d.joints[tree.root(h)][2];
    let truth = RootDepths { right: root(Hand::Right), left: root(Hand::Left) };
    let back = backproject_25d_to_3d(&p25, &rec.cam, &rec.crop, &tree, &truth)?;
    let worst = (0..42)
        .filter(|&j| rec.pose3d.valid[j])
        .map(|j| (0..3).map(|c| (back.joints[j][c] - rec.pose3d.joints[j][c]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    println!("round trip error {worst:.2e} mm");

    let off = RootDepths { right: truth.right + 50.0, ..truth };
    let shifted = backproject_25d_to_3d(&p25, &rec.cam, &rec.crop, &tree, &off)?;
    let w = tree.root(Hand::Right);
    println!(
        "right wrist at {:?} mm; with the root 50 mm deeper: {:?} mm",
        rec.pose3d.joints[w].map(|v| v.round()),
        shifted.joints[w].map(|v| v.round())
    );
    Ok(())
}
