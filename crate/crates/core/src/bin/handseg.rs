use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use handseg::harness::{self, render_report, render_summary, resolve_out, RunConfig};
use handseg::network::Variant;
use handseg::{Error, Result};

/// Synthetic interacting-hand data, training, evaluation and ablations.
///
/// Relative `--out` paths are placed below $HANDSEG_OUT when it is set.
#[derive(Parser)]
#[command(name = "handseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys take the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data seed for `gen`, model seed for `train`, first of three model seeds for `ablate`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model variant, e.g. `full`, `baseline`, `segm-only-label`.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and val splits.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `gen`; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split directory, e.g. `runs/gen/val`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train and evaluate the ablation arms.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Rebuild and print the report of an eval or ablation directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &common.variant {
        cfg = cfg.with_variant(Variant::parse(v)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    resolve_out(common.out.as_deref().unwrap_or(Path::new(default)))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.data.seed = s;
            }
            let out = out_dir(&common, "runs/data");
            print!("{}", harness::cmd_gen(&cfg, &out)?);
            println!("wrote {}", out.display());
        }
        Command::Train { common, data } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let out = out_dir(&common, &format!("runs/train-{}", cfg.model.variant));
            let model = harness::cmd_train(&cfg, data.as_deref(), &out, |r| {
                eprintln!(
                    "epoch {:>3} {:?} lr {:.1e} loss {:.4} train mpjpe {} val mpjpe {}",
                    r.epoch,
                    r.stage,
                    r.lr,
                    r.total,
                    r.train_mpjpe_mm.map_or("-".into(), |v| format!("{v:.2}")),
                    r.val_mpjpe_mm.map_or("-".into(), |v| format!("{v:.2}")),
                );
            })?;
            println!("{} parameters; wrote {}", model.params.weight_count(), out.display());
        }
        Command::Eval { common, checkpoint, data } => {
            let expected = match &common.config {
                Some(_) => Some(load_config(&common)?),
                None => None,
            };
            let out = out_dir(&common, "runs/eval");
            let report = harness::cmd_eval(&checkpoint, &data, &out, expected.as_ref())?;
            print!("{}", render_report(&report));
            println!("wrote {}", out.display());
        }
        Command::Ablate { common, data } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.ablation.seeds = vec![s, s + 1, s + 2];
            }
            let out = out_dir(&common, "runs/ablate");
            let summary = harness::cmd_ablate(&cfg, data.as_deref(), &out, |m| eprintln!("{m}"))?;
            print!("{}", render_summary(&summary));
            println!("wrote {}", out.display());
        }
        Command::Report { common } => {
            let dir = common
                .out
                .as_deref()
                .map(resolve_out)
                .ok_or_else(|| Error::Config("report needs --out <dir>".into()))?;
            print!("{}", harness::cmd_report(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
