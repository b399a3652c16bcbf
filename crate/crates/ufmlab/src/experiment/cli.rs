//! Command-line front end.
//!
//! ```text
//! ufmlab train   <config> [--output-dir DIR] [--seed S]
//! ufmlab analyze <checkpoint> <config> [--output-dir DIR] [--tol-scale X]
//! ufmlab verify  <checkpoint> <config> [--output-dir DIR] [--tol-scale X]
//! ufmlab report  <dir>
//! ```
//!
//! Exit codes: 0 success, 1 usage or input error, 2 verification failure,
//! 3 divergence or non-collapse refusal.

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::report::cmd_report;
use super::run::{cmd_analyze, cmd_train};
use super::verify::cmd_verify;
use super::ExperimentError;
use crate::training::TrainError;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;

const USAGE: &str = "\
usage: ufmlab <command> [args]

commands:
  train   <config> [--output-dir DIR] [--seed S]
  analyze <checkpoint> <config> [--output-dir DIR] [--seed S] [--tol-scale X]
  verify  <checkpoint> <config> [--output-dir DIR] [--seed S] [--tol-scale X]
  report  <dir>

exit codes: 0 ok, 1 usage/input error, 2 verification failure,
            3 divergence or non-collapse
";

struct Flags {
    positional: Vec<String>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    tol_scale: Option<f64>,
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let mut flags = Flags {
        positional: Vec::new(),
        output_dir: None,
        seed: None,
        tol_scale: None,
    };
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--output-dir" => {
                let v = it.next().ok_or("--output-dir needs a value")?;
                flags.output_dir = Some(PathBuf::from(v));
            }
            "--seed" => {
                let v = it.next().ok_or("--seed needs a value")?;
                flags.seed = Some(v.parse().map_err(|_| "bad --seed value")?);
            }
            "--tol-scale" => {
                let v = it.next().ok_or("--tol-scale needs a value")?;
                flags.tol_scale = Some(v.parse().map_err(|_| "bad --tol-scale value")?);
            }
            other if other.starts_with("--") => {
                return Err(format!("unknown flag {other}"));
            }
            other => flags.positional.push(other.to_string()),
        }
    }
    Ok(flags)
}

fn load_config(path: &str, flags: &Flags) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(Path::new(path))?;
    if let Some(dir) = &flags.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = flags.seed {
        cfg.hyper.seed = seed;
    }
    if let Some(ts) = flags.tol_scale {
        cfg.tol_scale = ts;
    }
    Ok(cfg)
}

fn exit_code_for(err: &ExperimentError) -> i32 {
    match err {
        ExperimentError::Refused { .. } => EXIT_REFUSED,
        ExperimentError::Train(TrainError::Diverged { .. }) => EXIT_REFUSED,
        _ => EXIT_USAGE,
    }
}

/// Dispatches a full CLI invocation; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn dispatch(args: &[String]) -> Result<i32, ExperimentError> {
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        return Ok(EXIT_USAGE);
    };
    let flags = parse_flags(&args[1..]).map_err(|message| ExperimentError::Usage { message })?;
    match command.as_str() {
        "train" => {
            let [config] = positional::<1>(&flags)?;
            let cfg = load_config(&config, &flags)?;
            let out = cmd_train(&cfg)?;
            println!(
                "trained {} epochs (converged={}), final grad norm {:e}, loss {:e}",
                out.log.epochs_run, out.log.converged, out.log.final_grad_norm, out.log.final_loss
            );
            for (l, m) in cfg.probe_layers.iter().map(|l| (*l, out.log.final_m[*l - 1])) {
                println!("  dnc1 m at layer {l}: {m:e}");
            }
            println!("wrote {}", out.trainlog_csv.display());
            println!("wrote {}", out.final_checkpoint.display());
            for s in &out.snapshots {
                println!("wrote {}", s.display());
            }
            Ok(EXIT_OK)
        }
        "analyze" => {
            let [ckpt_path, config] = positional::<2>(&flags)?;
            let cfg = load_config(&config, &flags)?;
            let ckpt = Checkpoint::load(Path::new(&ckpt_path))?;
            let written = cmd_analyze(&ckpt, &cfg)?;
            for p in &written {
                println!("wrote {}", p.display());
            }
            Ok(EXIT_OK)
        }
        "verify" => {
            let [ckpt_path, config] = positional::<2>(&flags)?;
            let cfg = load_config(&config, &flags)?;
            let ckpt = Checkpoint::load(Path::new(&ckpt_path))?;
            let report = cmd_verify(&ckpt, &cfg)?;
            let csv = report.to_csv(cfg.hash());
            print!("{csv}");
            std::fs::create_dir_all(&cfg.output_dir)?;
            std::fs::write(cfg.output_dir.join("verify_report.csv"), &csv)?;
            if report.all_required_passed() {
                println!("# verdict: pass");
                Ok(EXIT_OK)
            } else {
                println!("# verdict: FAIL ({} required checks)", report.failures().len());
                Ok(EXIT_VERIFY_FAILED)
            }
        }
        "report" => {
            let [dir] = positional::<1>(&flags)?;
            let table = cmd_report(Path::new(&dir))?;
            print!("{table}");
            Ok(EXIT_OK)
        }
        other => {
            eprintln!("unknown command `{other}`");
            eprint!("{USAGE}");
            Ok(EXIT_USAGE)
        }
    }
}

fn positional<const N: usize>(flags: &Flags) -> Result<[String; N], ExperimentError> {
    let got = flags.positional.len();
    flags
        .positional
        .clone()
        .try_into()
        .map_err(|_| ExperimentError::Usage {
            message: format!("expected {N} positional arguments, got {got}"),
        })
}
