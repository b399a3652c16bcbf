//! The `train` and `analyze` pipeline stages.

use super::checkpoint::Checkpoint;
use super::config::{Analysis, ExperimentConfig};
use super::csvout::{fmt_f64, Csv};
use super::ExperimentError;
use crate::analysis::{
    backprop_error_moment, dense_spectral_summary, factored_spectral_summary, feature_gram,
    frame_diagnostics, gradient_alignment_empirical, gradient_alignment_natural,
    gradient_covariance_factors, hessian_alignment, hessian_spectrum, knockout_spectra,
    weight_gram, AlignmentGrid, SpectralSummary,
};
use crate::model::{forward, init_state_with, LayerCache};
use crate::numerics::{Matrix, Rng};
use crate::training::{dnc1_metric, train_with, TrainLog};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

pub struct TrainOutput {
    pub log: TrainLog,
    pub final_checkpoint: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub trainlog_csv: PathBuf,
}

/// Trains per the config, writing checkpoints at the requested snapshot
/// epochs plus the final state, and the training log as CSV.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutput, ExperimentError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let hyper = &cfg.hyper;
    hyper.validate()?;
    let gate = crate::model::reg_gate(hyper);
    if !gate.pass {
        eprintln!(
            "warning: regularization gate fails (lhs {} >= rhs {}); collapse is not guaranteed",
            fmt_f64(gate.lhs),
            fmt_f64(gate.rhs)
        );
    }
    let mut rng = Rng::new(hyper.seed);
    let mut state = init_state_with(hyper, &mut rng);
    let rng_state = rng.state();

    let wanted: BTreeSet<usize> = cfg.snapshot_epochs.iter().copied().collect();
    let mut snapshots = Vec::new();
    if wanted.contains(&0) {
        let path = checkpoint_path(&cfg.output_dir, Some(0));
        save_checkpoint(hyper, 0, rng_state, &state, &path)?;
        snapshots.push(path);
    }
    let mut snapshot_err = None;
    let log = train_with(hyper, &mut state, |epoch, st| {
        if wanted.contains(&epoch) && snapshot_err.is_none() {
            let path = checkpoint_path(&cfg.output_dir, Some(epoch));
            match save_checkpoint(hyper, epoch, rng_state, st, &path) {
                Ok(()) => snapshots.push(path),
                Err(e) => snapshot_err = Some(e),
            }
        }
    })?;
    if let Some(e) = snapshot_err {
        return Err(e);
    }
    let final_checkpoint = checkpoint_path(&cfg.output_dir, None);
    save_checkpoint(hyper, log.epochs_run, rng_state, &state, &final_checkpoint)?;

    let trainlog_csv = cfg.output_dir.join("trainlog.csv");
    let mut columns = vec!["epoch".to_string(), "loss".into(), "grad_norm".into()];
    for l in &cfg.probe_layers {
        columns.push(format!("m_l{l}"));
    }
    let column_refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new(cfg.hash(), &column_refs);
    csv.comment(&format!(
        "reg_gate pass={} lhs={} rhs={}",
        log.gate.pass,
        fmt_f64(log.gate.lhs),
        fmt_f64(log.gate.rhs)
    ));
    csv.comment(&format!(
        "converged={} epochs_run={} loss_increase_events={}",
        log.converged, log.epochs_run, log.loss_increase_events
    ));
    for rec in &log.records {
        let mut row = vec![
            rec.epoch.to_string(),
            fmt_f64(rec.loss),
            fmt_f64(rec.grad_norm),
        ];
        for l in &cfg.probe_layers {
            row.push(fmt_f64(rec.m[l - 1]));
        }
        csv.row(&row);
    }
    csv.write(&trainlog_csv)?;
    Ok(TrainOutput {
        log,
        final_checkpoint,
        snapshots,
        trainlog_csv,
    })
}

pub fn checkpoint_path(dir: &Path, epoch: Option<usize>) -> PathBuf {
    match epoch {
        Some(e) => dir.join(format!("checkpoint_epoch_{e}.ckpt")),
        None => dir.join("checkpoint_final.ckpt"),
    }
}

fn save_checkpoint(
    hyper: &crate::model::HyperConfig,
    epoch: usize,
    rng_state: [u64; 4],
    state: &crate::model::ModelState,
    path: &Path,
) -> Result<(), ExperimentError> {
    Checkpoint {
        hyper: hyper.clone(),
        epoch,
        rng_state,
        state: state.clone(),
    }
    .save(path)
}

/// Runs the requested analyses on a checkpoint, one CSV per analysis and
/// probed layer. The checkpoint's hyperparameters must match the config.
pub fn cmd_analyze(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
) -> Result<Vec<PathBuf>, ExperimentError> {
    if ckpt.hyper != cfg.hyper {
        return Err(ExperimentError::HyperMismatch);
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let cache = forward(&ckpt.state, &cfg.hyper);
    let hash = cfg.hash();
    let mut written = Vec::new();

    for analysis in &cfg.analyses {
        match analysis {
            Analysis::DncMetrics => {
                let mut csv = Csv::new(hash, &["layer", "m", "degenerate"]);
                for l in &cfg.probe_layers {
                    let m = dnc1_metric(&cache, *l);
                    csv.row(&[
                        l.to_string(),
                        fmt_f64(m.m),
                        (m.degenerate as u8).to_string(),
                    ]);
                }
                written.push(write_file(csv, &cfg.output_dir, "dnc_metrics.csv")?);
            }
            _ => {
                for l in &cfg.probe_layers {
                    written.extend(analyze_layer(&cache, ckpt, cfg, *analysis, *l, hash)?);
                }
            }
        }
    }
    Ok(written)
}

fn analyze_layer(
    cache: &LayerCache,
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    analysis: Analysis,
    l: usize,
    hash: u64,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let dir = &cfg.output_dir;
    let rule = cfg.outlier_rule;
    let mut written = Vec::new();
    match analysis {
        Analysis::Hessian => {
            let spec = hessian_spectrum(cache, l, rule, 0)?;
            written.push(write_spectrum(
                &spec,
                hash,
                dir,
                &format!("spectrum_hessian_l{l}.csv"),
            )?);
        }
        Analysis::Knockout => {
            let report = knockout_spectra(cache, l, rule)?;
            let mut csv = Csv::new(hash, &["component", "index", "eigenvalue", "outlier_flag"]);
            csv.comment(&format!(
                "residual={} hessian_norm={}",
                fmt_f64(report.residual),
                fmt_f64(report.hessian_norm)
            ));
            for (name, spec) in [
                ("full", &report.full),
                ("minus_class", &report.minus_class),
                ("minus_cross", &report.minus_cross),
                ("minus_within", &report.minus_within),
            ] {
                push_spectrum_rows(&mut csv, spec, Some(name));
            }
            written.push(write_file(csv, dir, &format!("knockout_l{l}.csv"))?);
        }
        Analysis::Align => {
            let grid = hessian_alignment(cache, l)?;
            written.push(write_grid(&grid, hash, dir, &format!("align_f_l{l}.csv"))?);
        }
        Analysis::GradAlign => {
            let nat = gradient_alignment_natural(cache, l)?;
            let mut csv = Csv::new(hash, &["c", "c_prime", "value"]);
            csv.comment(&format!("gradient_zero={}", nat.gradient_zero));
            for (c, cp, v) in nat.grid.iter() {
                csv.row(&[
                    (c + 1).to_string(),
                    (cp + 1).to_string(),
                    v.map_or_else(|| "nan".to_string(), fmt_f64),
                ]);
            }
            written.push(write_file(csv, dir, &format!("grad_align_natural_l{l}.csv"))?);

            let emp = gradient_alignment_empirical(cache, l)?;
            let mut csv = Csv::new(hash, &["rank", "eigenvalue", "coefficient"]);
            csv.comment(&format!(
                "gradient_zero={} residual_mass={}",
                emp.gradient_zero,
                fmt_f64(emp.residual_mass)
            ));
            for (i, (ev, coeff)) in emp.eigenvalues.iter().zip(&emp.coefficients).enumerate() {
                csv.row(&[(i + 1).to_string(), fmt_f64(*ev), fmt_f64(*coeff)]);
            }
            written.push(write_file(
                csv,
                dir,
                &format!("grad_align_empirical_l{l}.csv"),
            )?);
        }
        Analysis::WeightGram => {
            let gram = weight_gram(&ckpt.state, l);
            let spec = dense_spectral_summary(&gram, rule)?;
            written.push(write_spectrum(
                &spec,
                hash,
                dir,
                &format!("spectrum_weight_gram_l{l}.csv"),
            )?);
        }
        Analysis::GradCov => {
            let f = gradient_covariance_factors(cache, l)?;
            let spec = factored_spectral_summary(&f, rule, 0)?;
            written.push(write_spectrum(
                &spec,
                hash,
                dir,
                &format!("spectrum_grad_cov_l{l}.csv"),
            )?);
        }
        Analysis::Backprop => {
            let delta = backprop_error_moment(cache, l)?;
            let spec = dense_spectral_summary(&delta, rule)?;
            written.push(write_spectrum(
                &spec,
                hash,
                dir,
                &format!("spectrum_backprop_l{l}.csv"),
            )?);
        }
        Analysis::FeatureGram => {
            let gram = feature_gram(cache, l)?;
            let spec = dense_spectral_summary(&gram, rule)?;
            written.push(write_spectrum(
                &spec,
                hash,
                dir,
                &format!("spectrum_feature_gram_l{l}.csv"),
            )?);
        }
        Analysis::Frames => {
            let grids = frame_diagnostics(cache, l)?;
            written.push(write_matrix_grid(
                &grids.r,
                hash,
                dir,
                &format!("frames_r_l{l}.csv"),
            )?);
            if let Some(rt) = &grids.r_tilde {
                written.push(write_matrix_grid(
                    rt,
                    hash,
                    dir,
                    &format!("frames_r_tilde_l{l}.csv"),
                )?);
            }
        }
        Analysis::DncMetrics => unreachable!("handled by caller"),
    }
    Ok(written)
}

fn push_spectrum_rows(csv: &mut Csv, spec: &SpectralSummary, component: Option<&str>) {
    for (i, v) in spec.values.iter().enumerate() {
        let flag = (i < spec.outlier_count) as u8;
        match component {
            Some(name) => csv.row(&[
                name.to_string(),
                i.to_string(),
                fmt_f64(*v),
                flag.to_string(),
            ]),
            None => csv.row(&[i.to_string(), fmt_f64(*v), flag.to_string()]),
        }
    }
}

fn write_spectrum(
    spec: &SpectralSummary,
    hash: u64,
    dir: &Path,
    name: &str,
) -> Result<PathBuf, ExperimentError> {
    let mut csv = Csv::new(hash, &["index", "eigenvalue", "outlier_flag"]);
    csv.comment(&format!(
        "outlier_count={} bulk_edge={}",
        spec.outlier_count,
        fmt_f64(spec.bulk_edge)
    ));
    push_spectrum_rows(&mut csv, spec, None);
    write_file(csv, dir, name)
}

fn write_grid(
    grid: &AlignmentGrid,
    hash: u64,
    dir: &Path,
    name: &str,
) -> Result<PathBuf, ExperimentError> {
    let mut csv = Csv::new(hash, &["c", "c_prime", "value"]);
    for (c, cp, v) in grid.iter() {
        csv.row(&[
            (c + 1).to_string(),
            (cp + 1).to_string(),
            v.map_or_else(|| "nan".to_string(), fmt_f64),
        ]);
    }
    write_file(csv, dir, name)
}

fn write_matrix_grid(
    m: &Matrix,
    hash: u64,
    dir: &Path,
    name: &str,
) -> Result<PathBuf, ExperimentError> {
    let mut csv = Csv::new(hash, &["c", "c_prime", "value"]);
    for c in 0..m.rows() {
        for cp in 0..m.cols() {
            csv.row(&[
                (c + 1).to_string(),
                (cp + 1).to_string(),
                fmt_f64(m.get(c, cp)),
            ]);
        }
    }
    write_file(csv, dir, name)
}

fn write_file(csv: Csv, dir: &Path, name: &str) -> Result<PathBuf, ExperimentError> {
    let path = dir.join(name);
    csv.write(&path)?;
    Ok(path)
}
