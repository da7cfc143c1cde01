//! Generates a small dataset, writes it to disk, reads it back and writes one
//! image as a PPM file.
//!
//!     cargo run --release --example synthetic_dataset -- /tmp/hands

use std::io::Write;
use std::path::PathBuf;

use handseg::harness::RunConfig;
use handseg::synthdata::{generate, read_dataset, stratify, write_dataset};

fn main() -> handseg::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("handseg-example"));
    let cfg = RunConfig::default();
    let records = generate(&cfg.gen, 11, 64)?;
    for s in stratify(&records) {
        println!("{:>10}: {}", s.label, s.indices.len());
    }
    let best_effort = records.iter().filter(|r| r.best_effort).count();
    println!("{best_effort} samples missed their IoU target");

    let manifest = write_dataset(&records, &dir.join("data"), Some(&cfg.gen), &cfg.provenance())?;
    println!("wrote {} records, checksum {}", manifest.count, manifest.checksum);
    let (_, back) = read_dataset(&dir.join("data"))?;
    assert_eq!(back, records);

    let r = records.iter().max_by(|a, b| a.interaction_iou.total_cmp(&b.interaction_iou)).unwrap();
    let c = r.crop_size;
    let path = dir.join("most_overlapping.ppm");
    let mut f = std::fs::File::create(&path).unwrap();
    write!(f, "P6\n{c} {c}\n255\n").unwrap();
    for i in 0..c * c {
        let px: Vec<u8> = (0..3).map(|ch| (r.image[ch * c * c + i] * 255.0).round() as u8).collect();
        f.write_all(&px).unwrap();
    }
    println!("sample {} with interaction IoU {:.2} -> {}", r.seed, r.interaction_iou, path.display());
    Ok(())
}
