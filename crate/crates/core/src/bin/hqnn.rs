use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hqnn::checks::{selftest, SelftestOptions};
use hqnn::harness::{report, run_single, run_sweep, ConfigOverrides, Dataset, SweepSpec};
use hqnn::models::ModelKind;
use hqnn::noise::NoiseKind;
use hqnn::{Error, Result};

/// Noisy hybrid quantum neural network experiments.
#[derive(Parser, Debug)]
#[command(name = "hqnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model under one noise setting.
    Train(RunArgs),
    /// Noise-free baseline plus every kind × prob cell.
    Sweep(RunArgs),
    /// Compare a sweep directory against its baselines.
    Report {
        /// Sweep output directory.
        dir: PathBuf,
    },
    /// Dataset-free invariant checks.
    Selftest {
        /// Perturb the Kraus operators to demonstrate a failing check.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

/// Flags take precedence over `--config`, which takes precedence over
/// defaults. Sweep flags accept comma-separated lists.
#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_delimiter = ',')]
    model: Vec<ModelKind>,
    #[arg(long, value_delimiter = ',')]
    dataset: Vec<Dataset>,
    /// none, bitflip, phaseflip, depolarizing, phasedamping, amplitudedamping
    #[arg(long, value_delimiter = ',')]
    noise: Vec<NoiseKind>,
    #[arg(long, value_delimiter = ',')]
    prob: Vec<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "train-samples")]
    train_samples: Option<usize>,
    #[arg(long = "val-samples")]
    val_samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long = "image-size")]
    image_size: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding the IDX training files.
    #[arg(long = "data-dir")]
    data_dir: Option<PathBuf>,
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn single<T: Copy>(name: &str, values: &[T]) -> Result<Option<T>> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ => Err(Error::Config(format!("--{name} takes one value for `train`"))),
    }
}

impl RunArgs {
    fn layered(&self, cli: ConfigOverrides) -> Result<ConfigOverrides> {
        let cli = ConfigOverrides {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            n_train: self.train_samples,
            n_val: self.val_samples,
            image_size: self.image_size,
            out_dir: self.out.clone(),
            data_dir: self.data_dir.clone(),
            ..cli
        };
        let file = match &self.config {
            Some(p) => ConfigOverrides::from_file(p)?,
            None => ConfigOverrides::default(),
        };
        Ok(cli.over(&file))
    }

    fn train_overrides(&self) -> Result<ConfigOverrides> {
        self.layered(ConfigOverrides {
            model: single("model", &self.model)?,
            dataset: single("dataset", &self.dataset)?,
            noise: single("noise", &self.noise)?,
            prob: single("prob", &self.prob)?,
            seed: single("seed", &self.seed)?,
            ..Default::default()
        })
    }
}

fn train(args: &RunArgs) -> Result<()> {
    let cfg = args.train_overrides()?.resolve()?;
    eprintln!("run {} -> {}", cfg.run_id(), cfg.run_dir().display());
    let out = run_single(&cfg)?;
    for m in &out.history {
        println!(
            "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  val_acc {:.4}",
            m.epoch + 1,
            m.train_loss,
            m.train_acc,
            m.val_acc
        );
    }
    eprintln!("wrote {}", out.run_dir.display());
    Ok(())
}

fn sweep(args: &RunArgs) -> Result<()> {
    let template = args.layered(ConfigOverrides::default())?;
    let resolved = template.clone().resolve()?;
    let spec = SweepSpec {
        models: if args.model.is_empty() {
            vec![resolved.model]
        } else {
            args.model.clone()
        },
        datasets: if args.dataset.is_empty() {
            vec![resolved.dataset]
        } else {
            args.dataset.clone()
        },
        kinds: if args.noise.is_empty() {
            NoiseKind::ALL_CHANNELS.to_vec()
        } else {
            args.noise.iter().copied().filter(|k| *k != NoiseKind::None).collect()
        },
        probs: if args.prob.is_empty() {
            hqnn::checks::prob_grid()[1..].to_vec()
        } else {
            args.prob.clone()
        },
        seeds: if args.seed.is_empty() {
            vec![resolved.seed]
        } else {
            args.seed.clone()
        },
    };
    let outcome = run_sweep(&template, &spec, |id, res| match res {
        Ok(o) => eprintln!("ok     {id}  val_acc={:.4}", o.summary.final_val_acc),
        Err(e) => eprintln!("FAILED {id}: {e}"),
    })?;
    println!(
        "planned {} runs: {} succeeded, {} skipped (already done), {} failed",
        outcome.planned,
        outcome.succeeded,
        outcome.skipped,
        outcome.failed.len()
    );
    if outcome.failed.is_empty() {
        Ok(())
    } else {
        Err(Error::EmptyResult(format!(
            "{} sweep runs failed",
            outcome.failed.len()
        )))
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => train(&args)?,
        Command::Sweep(args) => sweep(&args)?,
        Command::Report { dir } => {
            let rep = report(&dir)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", rep.table());
        }
        Command::Selftest { inject_fault } => {
            let results = selftest(SelftestOptions { inject_fault });
            let mut failed = 0;
            for r in &results {
                println!(
                    "{} {:<28} {:>8.3}s  {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.seconds,
                    r.detail
                );
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                println!("{failed} of {} checks failed", results.len());
                return Ok(ExitCode::from(3));
            }
            println!("all {} checks passed", results.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
