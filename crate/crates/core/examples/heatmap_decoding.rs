//! Decodes a joint location, its relative depth and the right-to-left root
//! depth from raw network-style maps.

use handseg::heatmap::{
    compose_depth, expected_rel_depth, heatmap_to_crop, per_joint_depth, soft_argmax_2d, spatial_softmax, HeatmapKind,
    HeatmapStack, RelDepthDistribution,
};

fn main() -> handseg::Result<()> {
    let (w, h) = (8, 8);
    // a blob centred between cells (5, 2) and (6, 2)
    let latent: Vec<f64> = (0..w * h)
        .map(|i| {
            let (m, n) = ((i % w) as f64, (i / w) as f64);
            -((m - 5.5).powi(2) + (n - 2.0).powi(2)) * 2.0
        })
        .collect();
    let probs = spatial_softmax(&HeatmapStack::new(w, h, 1, latent, HeatmapKind::Latent2d)?)?;
    let xy = soft_argmax_2d(&probs)?[0];
    println!("soft-argmax {:.3?} cells -> {:.2?} crop px", xy, heatmap_to_crop(xy, 4.0));

    let depth_map = HeatmapStack::new(w, h, 1, vec![-1.4; w * h], HeatmapKind::LatentDepth)?;
    let z = per_joint_depth(&compose_depth(&depth_map, &probs)?)?[0];
    println!("relative depth {z:.3} (in units of the depth scale)");

    let mut p = vec![0.0; 64];
    p[40] = 0.5;
    p[44] = 0.5;
    let dist = RelDepthDistribution { p, min_mm: -400.0, max_mm: 400.0 };
    println!(
        "root depth distribution: expected bin {:.1}, {:.1} mm",
        dist.expected_bin()?,
        expected_rel_depth(&dist)?
    );
    Ok(())
}
