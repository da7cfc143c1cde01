//! A two-arm, two-seed ablation on a tiny dataset, written below a directory
//! of your choice and summarised from its CSV files.
//!
//!     cargo run --release --example mini_ablation -- /tmp/ablation

use std::path::PathBuf;

use handseg::harness::{self, render_summary, AblationRow, RunConfig};

fn main() -> handseg::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("handseg-ablation"));
    let mut cfg = RunConfig::default();
    cfg.data.train = 200;
    cfg.data.val = 60;
    cfg.train.epochs = 3;
    cfg.train.decay_epochs = vec![];
    cfg.ablation.seeds = vec![1, 2];
    cfg.ablation.arms = vec!["baseline+bl".into(), "baseline+bl+sf".into()];

    let summary = harness::cmd_ablate(&cfg, None, &out, |m| eprintln!("{m}"))?;
    print!("{}", render_summary(&summary));

    let rows: Vec<AblationRow> = harness::read_table(&out.join("ablation.csv"))?;
    for r in rows {
        println!("{:<16} seed {}  interacting MPJPE {:.2} mm", r.arm, r.seed, r.mpjpe_interacting_mm.unwrap_or(f64::NAN));
    }
    println!("rerunning reuses the trained arms in {}", out.display());
    Ok(())
}
