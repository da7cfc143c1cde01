//! Trains the full model for a few epochs on a small generated set, then
//! prints the binned validation report.
//!
//!     cargo run --release --example train_and_evaluate -- [epochs]

use handseg::harness::{self, evaluate, render_report, train_with, RunConfig};
use handseg::metrics::binned_report;

fn main() -> handseg::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let mut cfg = RunConfig::default();
    cfg.data.train = 400;
    cfg.data.val = 100;
    cfg.train.epochs = epochs;
    cfg.train.decay_epochs = vec![epochs * 3 / 4];
    cfg.train.eval_every = 1;

    let splits = harness::generate_splits(&cfg)?;
    let out = train_with(&cfg, &splits.train, &splits.val, None, |r| {
        println!(
            "epoch {:>2}  loss {:8.2}  train {:6.2} mm  val {:6.2} mm",
            r.epoch,
            r.total,
            r.train_mpjpe_mm.unwrap_or(f64::NAN),
            r.val_mpjpe_mm.unwrap_or(f64::NAN)
        );
    })?;
    let report = binned_report(&evaluate(&out.model, &splits.val)?)?;
    print!("{}", render_report(&report));
    Ok(())
}
