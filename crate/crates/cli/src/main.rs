use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imc_harness::config::Recipe;
use imc_harness::{calibrate, characterize, evaluate, fetch, mvm_check, train};
use imc_harness::{ExperimentConfig, HarnessError, Result, RunDir};

#[derive(Parser, Debug)]
#[command(name = "imcsim", version)]
#[command(about = "In-memory-computing readout simulator and ADC-aware training harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set adc.supply_scale=0.8` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `<output_dir>/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transfer curves, INL/DNL and Monte-Carlo spread across supplies.
    Characterize {
        #[command(flatten)]
        common: Common,
    },
    /// Calibrate a CCO population and report pre/post spread.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Check bit-sliced crossbar MVMs against the integer oracle.
    MvmCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Run a training recipe.
    Train {
        /// bitwidth-sweep, adc-retrain, vat or weight-noise.
        #[arg(long)]
        recipe: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// ideal_float, ideal_quantized, curves or pool.
        #[arg(long)]
        mode: Option<String>,
        /// Population directory written by `characterize`.
        #[arg(long)]
        curves: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the digits dataset to a local cache directory.
    FetchData {
        #[command(flatten)]
        common: Common,
    },
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn resolve(common: &Common, extra: Vec<String>) -> Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend(extra);
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(j) = common.jobs {
        overrides.push(format!("jobs={j}"));
    }
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, name: &str) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(name))
}

/// Echoes the summary table; a closed stdout is not an error.
fn print_summary(dir: &RunDir) {
    let mut out = std::io::stdout().lock();
    if let Ok(text) = std::fs::read_to_string(dir.join("summary.txt")) {
        let _ = out.write_all(text.as_bytes());
    }
    let _ = writeln!(out, "outputs in {}", dir.path().display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Characterize { common } => {
            let cfg = resolve(&common, vec![])?;
            let dir = RunDir::create(
                &out_dir(&common, &cfg, "characterize"),
                &cfg,
                "characterize",
            )?;
            characterize::run(&cfg, &dir)?;
            print_summary(&dir);
        }
        Command::Calibrate { common } => {
            let cfg = resolve(&common, vec![])?;
            let dir = RunDir::create(&out_dir(&common, &cfg, "calibrate"), &cfg, "calibrate")?;
            calibrate::run(&cfg, &dir)?;
            print_summary(&dir);
        }
        Command::MvmCheck { common } => {
            let cfg = resolve(&common, vec![])?;
            let dir = RunDir::create(&out_dir(&common, &cfg, "mvm-check"), &cfg, "mvm-check")?;
            let res = mvm_check::run(&cfg, &dir);
            print_summary(&dir);
            res?;
        }
        Command::Train { recipe, common } => {
            let mut extra = vec![];
            if let Some(r) = recipe {
                let r = Recipe::parse(&r)?;
                let name =
                    toml::Value::try_from(r).map_err(|e| HarnessError::Config(e.to_string()))?;
                extra.push(format!("training.recipe={name}"));
            }
            let cfg = resolve(&common, extra)?;
            let name = format!("train-{}", cfg.training.recipe.name());
            let dir = RunDir::create(&out_dir(&common, &cfg, &name), &cfg, &name)?;
            train::run(&cfg, &dir)?;
            print_summary(&dir);
        }
        Command::Evaluate {
            checkpoint,
            mode,
            curves,
            common,
        } => {
            let mut extra = vec![];
            if let Some(c) = checkpoint {
                extra.push(format!(
                    "evaluate.checkpoint={}",
                    toml_string(&c.to_string_lossy())
                ));
            }
            if let Some(m) = mode {
                extra.push(format!("evaluate.mode={}", toml_string(&m)));
            }
            if let Some(c) = curves {
                extra.push(format!(
                    "evaluate.curves={}",
                    toml_string(&c.to_string_lossy())
                ));
            }
            let cfg = resolve(&common, extra)?;
            let dir = RunDir::create(&out_dir(&common, &cfg, "evaluate"), &cfg, "evaluate")?;
            evaluate::run(&cfg, &dir)?;
            print_summary(&dir);
        }
        Command::FetchData { common } => {
            let cfg = resolve(&common, vec![])?;
            let dir = RunDir::create(&out_dir(&common, &cfg, "data"), &cfg, "fetch-data")?;
            let path = fetch::run(&dir)?;
            println!("dataset written to {}", path.display());
            println!(
                "use it with --set data.path={}",
                toml_string(&path.to_string_lossy())
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
