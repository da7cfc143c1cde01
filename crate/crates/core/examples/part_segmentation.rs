//! The part taxonomy and the segmentation metrics on a rendered label map.

use handseg::harness::RunConfig;
use handseg::metrics::miou;
use handseg::segmentation::{argmax_labels, segmentation_loss, PartTaxonomy, SegmentationVolume};
use handseg::synthdata::sample_scene;

fn main() -> handseg::Result<()> {
    let taxonomy = PartTaxonomy::hand_parts();
    print!("{}", taxonomy.to_manifest().lines().take(8).map(|l| format!("{l}\n")).collect::<String>());
    println!("... {} classes", taxonomy.len());

    let rec = sample_scene(7, &RunConfig::default().gen)?;
    let gt = &rec.part_labels;
    for y in 0..gt.height {
        let row: String = (0..gt.width)
            .map(|x| match gt.get(x, y) {
                0 => '.',
                c if c <= 16 => (b'a' + c - 1) as char,
                c => (b'A' + c - 17) as char,
            })
            .collect();
        println!("  {row}");
    }

    // confident logits that agree with the labels, except on one column
    let (s, classes) = (gt.width, taxonomy.len());
    let mut logits = vec![0.0; classes * s * s];
    for (px, &c) in gt.labels.iter().enumerate() {
        let c = if px % s == s / 2 { 0 } else { c as usize };
        logits[c * s * s + px] = 6.0;
    }
    let vol = SegmentationVolume::new(s, s, classes, logits)?;
    println!("cross-entropy {:.4}", segmentation_loss(&vol, gt)?);
    println!("mIoU {:.3}", miou(&argmax_labels(&vol), gt)?);
    let lr = PartTaxonomy::left_right();
    println!("left/right mIoU {:.3}", miou(&lr.relabel(&argmax_labels(&vol)), &lr.relabel(gt))?);
    Ok(())
}
