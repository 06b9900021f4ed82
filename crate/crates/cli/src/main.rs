//! `deepcost`: dataset generation, training, evaluation and diagnostics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numerical
//! failure (including failed self-checks).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deepcost_core::arch::ArchitectureId;
use deepcost_core::config::Config;
use deepcost_core::eval::{self, EvalReport};
use deepcost_core::export::export_pgm;
use deepcost_core::io::{self, load_checkpoint, load_dataset, save_checkpoint, save_dataset};
use deepcost_core::nn::gradcheck::FaultInjection;
use deepcost_core::synth::{generate_dataset, Dataset};
use deepcost_core::train::{infer_costmap, train, Checkpoint, StepRecord};
use deepcost_core::{baseline, verify, Error};

#[derive(Parser)]
#[command(name = "deepcost", version, about = "Cost maps from demonstrations with maximum-entropy deep IRL")]
struct Cli {
    /// TOML configuration; defaults apply to everything not set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its worlds.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Pitch error of the right sensor in degrees.
        #[arg(long)]
        pitch_error_deg: Option<f64>,
    },
    /// Train a network; writes `checkpoint/` and `history.csv` under `--out`.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        arch: Option<ArchitectureId>,
    },
    /// Evaluate a checkpoint on the dataset's test split.
    Eval {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate the handcrafted cost on the dataset's test split.
    BaselineEval {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare checkpoint and baseline on a miscalibrated rescan of the test split.
    Robustness {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        pitch_error_deg: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write one map of one sample as an 8-bit PGM with a bounds sidecar.
    ExportMap {
        #[command(flatten)]
        data: DataArg,
        /// Required for `--map cost`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, value_enum, default_value_t = MapKind::Cost)]
        map: MapKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every layer, network and the full objective.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Brute-force enumeration checks of the solver and the tabular fixed point.
    OracleCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory; falls back to `train.dataset` from the config.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MapKind {
    Cost,
    Baseline,
    MeanHeight,
    HeightVariance,
    Visibility,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn dataset(arg: &DataArg, cfg: &Config) -> Result<Dataset, Error> {
    let dir = arg
        .data
        .clone()
        .or_else(|| cfg.train.dataset.clone())
        .ok_or_else(|| Error::InvalidArgument("no dataset: pass --data or set train.dataset".into()))?;
    load_dataset(&dir)
}

fn write_report(out: &Path, name: &str, r: &EvalReport) -> Result<(), Error> {
    io::write_file(&out.join(format!("{name}.csv")), r.to_csv())?;
    io::write_file(&out.join(format!("{name}.txt")), r.to_text())?;
    print!("{}", r.to_text());
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::GenData {
            out,
            seed,
            pitch_error_deg,
        } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = pitch_error_deg {
                cfg.sensor.pitch_error_deg = p;
            }
            cfg.validate()?;
            let data = generate_dataset(&cfg.dataset_config())?;
            data.audit()?;
            save_dataset(&out, &data)?;
            println!(
                "wrote {} samples ({} train, {} test) to {}",
                data.samples.len(),
                data.train.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Train { data, out, seed, arch } => {
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(a) = arch {
                cfg.train.architecture = a;
            }
            let ds = dataset(&data, &cfg)?;
            let interval = cfg.train.checkpoint_interval;
            let mut hook = |step: usize, ck: &Checkpoint, rec: &StepRecord| {
                if step.is_multiple_of(50) {
                    println!("step {step:>6}  nll {:>9.4}  reg {:.3e}  |g| {:.3e}", rec.nll, rec.reg, rec.grad_norm);
                }
                if interval > 0 && step.is_multiple_of(interval) {
                    save_checkpoint(&out.join("checkpoints").join(format!("step_{step:06}")), ck)?;
                }
                Ok(())
            };
            match train(&cfg.train, &ds, Some(&mut hook)) {
                Ok((ck, history)) => {
                    save_checkpoint(&out.join("checkpoint"), &ck)?;
                    io::write_file(&out.join("history.csv"), history.to_csv())?;
                    println!("wrote {}", out.join("checkpoint").display());
                }
                Err(Error::Numerical(dump)) => {
                    let path = out.join("numerical_dump.txt");
                    io::write_file(&path, &dump)?;
                    return Err(Error::Numerical(format!("training aborted; diagnostics in {}", path.display())));
                }
                Err(e) => return Err(e),
            }
        }
        Command::Eval {
            data,
            checkpoint,
            out,
            seed,
        } => {
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
            let ds = dataset(&data, &cfg)?;
            let ck = load_checkpoint(&checkpoint)?;
            let r = eval::evaluate(&ck.architecture.to_string(), &ck, &ds, &ds.test, &cfg.eval)?;
            write_report(&out, "eval", &r)?;
        }
        Command::BaselineEval { data, out, seed } => {
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
            let ds = dataset(&data, &cfg)?;
            let r = eval::evaluate("baseline", &cfg.baseline, &ds, &ds.test, &cfg.eval)?;
            write_report(&out, "baseline_eval", &r)?;
        }
        Command::Robustness {
            data,
            checkpoint,
            out,
            pitch_error_deg,
            seed,
        } => {
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
            let ds = dataset(&data, &cfg)?;
            let ck = load_checkpoint(&checkpoint)?;
            let r = eval::robustness_experiment(&ck, &cfg.baseline, &ds, &ds.test, pitch_error_deg, &cfg.eval)?;
            io::write_file(&out.join("robustness.csv"), r.to_csv())?;
            io::write_file(&out.join("robustness.txt"), r.to_text())?;
            print!("{}", r.to_text());
        }
        Command::ExportMap {
            data,
            checkpoint,
            sample,
            map,
            out,
        } => {
            let ds = dataset(&data, &cfg)?;
            let s = ds
                .samples
                .get(sample)
                .ok_or_else(|| Error::InvalidArgument(format!("dataset has no sample {sample}")))?;
            let f = &s.features;
            let values = match map {
                MapKind::Cost => {
                    let path = checkpoint
                        .ok_or_else(|| Error::InvalidArgument("--map cost needs --checkpoint".into()))?;
                    infer_costmap(&load_checkpoint(&path)?, f)?.values
                }
                MapKind::Baseline => baseline::handcrafted_cost(f, &cfg.baseline)?.values,
                MapKind::MeanHeight => f.mean_height.clone(),
                MapKind::HeightVariance => f.height_variance.clone(),
                MapKind::Visibility => f.visibility.clone(),
            };
            let side = export_pgm(&out, &values, f.spec.height_cells, f.spec.width_cells)?;
            println!("wrote {} (range {} .. {})", out.display(), side.min, side.max);
        }
        Command::Gradcheck { seed } => {
            let results = verify::gradcheck_suite(seed, FaultInjection::default())?;
            for r in &results {
                println!(
                    "{} {:<32} max rel {:.3e} (tol {:.0e}, {} coords)",
                    if r.passed() { "ok  " } else { "FAIL" },
                    r.name,
                    r.max_rel_error,
                    r.tolerance,
                    r.checked
                );
            }
            return Ok(results.iter().all(|r| r.passed()));
        }
        Command::OracleCheck { seeds } => {
            let r = verify::oracle_suite(seeds)?;
            println!(
                "{} enumeration: {} problems, max |error| {:.3e} (tol {:.0e}), {:.2} s",
                if r.passed() { "ok  " } else { "FAIL" },
                r.cases.len(),
                r.max_error(),
                verify::ORACLE_TOL,
                r.seconds
            );
            let f = verify::tabular_fixed_point(5, 3, 2000, 0.1, 5000, 1e-3)?;
            let fp_ok = f.max_gap < 1e-3;
            println!(
                "{} tabular fixed point: max gap {:.3e} after {} steps",
                if fp_ok { "ok  " } else { "FAIL" },
                f.max_gap,
                f.steps
            );
            return Ok(r.passed() && fp_ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
