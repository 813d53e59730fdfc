use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use khorder::diagnostics::{
    rel_l2, slice_errors, spectrum, write_report_csv, write_slice_csv, write_spectrum_csv, EvalReport,
};
use khorder::models::{count_params, load_checkpoint, save_checkpoint, scientific, Architecture};
use khorder::theory::{rate_experiment, synthetic_rates, write_rates_csv, RateStudy};
use khorder::training::{train, write_train_csv, TrainError};
use khorder::{Model, ModelSpec, Problem, Scalar};

use crate::config::{Precision, RunConfig};

/// Training hit a non-finite value; maps to exit code 2.
#[derive(Debug)]
pub struct Aborted {
    pub seed: u64,
    pub message: String,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seed {}: {}", self.seed, self.message)
    }
}

impl std::error::Error for Aborted {}

fn lift<T: Scalar>(seed: u64, err: TrainError<T>) -> anyhow::Error {
    match err {
        TrainError::Setup(e) => e.into(),
        TrainError::Aborted(a) => Aborted { seed, message: format!("training aborted at epoch {}: {}", a.epoch, a.reason) }.into(),
    }
}

/// `count (d.dddde+XX)`, flagged when an HOrderDNN is too large to build.
pub fn count_line(spec: &ModelSpec) -> String {
    let n = count_params(spec);
    let mut line = format!("{n} ({})", scientific(&n));
    if !spec.is_tractable() {
        line.push_str(" intractable");
    }
    line
}

fn write_manifest(dir: &Path, config: &RunConfig, command: &str) -> Result<()> {
    let text = format!(
        "# khorder {} {command}; rerun with --config on this file\n{}",
        env!("CARGO_PKG_VERSION"),
        config.to_toml()?
    );
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

fn prepare_out(config: &mut RunConfig) -> Result<PathBuf> {
    let out = config.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    config.out = Some(out.clone());
    Ok(out)
}

/// `fit` and `solve`: one training run per seed.
pub fn train_runs(mut config: RunConfig, want_fit: bool) -> Result<()> {
    let problem = config.build_problem()?;
    match (want_fit, problem.is_fit()) {
        (true, false) => bail!("`{}` is a PDE problem; use `solve`", problem.id),
        (false, true) => bail!("`{}` is a fitting problem; use `fit`", problem.id),
        _ => {}
    }
    let out = prepare_out(&mut config)?;
    write_manifest(&out, &config, if want_fit { "fit" } else { "solve" })?;
    let mut reports = Vec::new();
    for &seed in &config.seeds {
        let report = match config.precision {
            Precision::F64 => train_seed::<f64>(&config, &problem, seed, &out)?,
            Precision::F32 => train_seed::<f32>(&config, &problem, seed, &out)?,
        };
        eprintln!("seed {seed}: rel_final {:.4e} rel_min {:.4e}", report.rel_final, report.rel_min);
        reports.push(report);
    }
    write_report_csv(&out.join("report.csv"), &reports)?;
    Ok(())
}

fn train_seed<T: Scalar>(config: &RunConfig, problem: &Problem, seed: u64, out: &Path) -> Result<EvalReport> {
    let dir = out.join(format!("seed_{seed}"));
    fs::create_dir_all(&dir)?;
    let spec = config.model_spec(problem.d());
    let train_config = config.train_config(problem, seed);
    let outcome = match train::<T>(&spec, problem, &train_config) {
        Ok(outcome) => outcome,
        Err(TrainError::Aborted(abort)) => {
            write_train_csv(&dir.join("train.csv"), &abort.record)?;
            save_checkpoint(&dir.join("checkpoint.json"), &abort.model)?;
            return Err(lift::<T>(seed, TrainError::Aborted(abort)));
        }
        Err(e) => return Err(lift(seed, e)),
    };
    let record = &outcome.record;
    write_train_csv(&dir.join("train.csv"), record)?;
    save_checkpoint(&dir.join("checkpoint.json"), &outcome.model)?;
    let rel_final = record.rel_final.context("training produced no grid evaluation")?;
    let report = EvalReport {
        problem: problem.id.clone(),
        method: spec.label(),
        p: spec.order(),
        d: problem.d(),
        params: count_params(&spec).to_string(),
        seed,
        epochs: train_config.epochs,
        rel_final,
        rel_min: record.rel_min.unwrap_or(rel_final),
    };
    write_report_csv(&dir.join("report.csv"), std::slice::from_ref(&report))?;
    if problem.is_fit() {
        let s = spectrum(&outcome.model, problem, config.spectrum.n, &config.spectrum.gammas)?;
        write_spectrum_csv(&dir.join("spectrum.csv"), &s)?;
    }
    if problem.d() > 2 {
        write_slice_csv(&dir.join("slice.csv"), &slice_errors(&outcome.model, problem)?)?;
    }
    Ok(report)
}

pub fn rates(mut config: RunConfig) -> Result<()> {
    let out = prepare_out(&mut config)?;
    write_manifest(&out, &config, "rates")?;
    let sizes: Vec<f64> = config.rates.sizes.iter().map(|&s| s as f64).collect();
    let table = match &config.rates.errors {
        Some(errors) => synthetic_rates(&sizes, errors)?,
        None => {
            let problem = config.build_problem()?;
            let base = config.model_spec(problem.d());
            if !matches!(base.arch, Architecture::KHOrder { .. }) {
                bail!("rate sweeps train K-HOrderDNNs; set model.family = \"khorder\"");
            }
            let study = RateStudy {
                kind: config.rates.sweep,
                sizes: config.rates.sizes.clone(),
                base,
                seeds: config.seeds.clone(),
                train: config.train_config(&problem, 0),
            };
            let seed = config.seeds[0];
            match config.precision {
                Precision::F64 => rate_experiment::<f64>(&problem, &study).map_err(|e| lift(seed, e))?,
                Precision::F32 => rate_experiment::<f32>(&problem, &study).map_err(|e| lift(seed, e))?,
            }
        }
    };
    write_rates_csv(&out.join("rates.csv"), &table)?;
    match table.slope {
        Some(s) => eprintln!("slope {s:.4}"),
        None => eprintln!("slope undefined (fewer than 3 points)"),
    }
    Ok(())
}

enum Loaded {
    F64(Model<f64>),
    F32(Model<f32>),
}

fn load_any(path: &Path) -> Result<Loaded> {
    match load_checkpoint::<f64>(path) {
        Ok(m) => Ok(Loaded::F64(m)),
        Err(first) => load_checkpoint::<f32>(path)
            .map(Loaded::F32)
            .map_err(|_| anyhow::Error::from(first).context(format!("loading {}", path.display()))),
    }
}

fn checked_problem<T: Scalar>(config: &RunConfig, model: &Model<T>) -> Result<Problem> {
    let problem = config.build_problem()?;
    if problem.d() != model.d() {
        bail!("checkpoint has d = {}, problem `{}` has d = {}", model.d(), problem.id, problem.d());
    }
    Ok(problem)
}

pub fn spectrum_cmd(mut config: RunConfig, checkpoint: &Path) -> Result<()> {
    let model = load_any(checkpoint)?;
    let out = prepare_out(&mut config)?;
    let (n, gammas) = (config.spectrum.n, config.spectrum.gammas.clone());
    let report = match &model {
        Loaded::F64(m) => spectrum(m, &checked_problem(&config, m)?, n, &gammas)?,
        Loaded::F32(m) => spectrum(m, &checked_problem(&config, m)?, n, &gammas)?,
    };
    write_spectrum_csv(&out.join("spectrum.csv"), &report)?;
    Ok(())
}

pub fn slice_cmd(mut config: RunConfig, checkpoint: &Path) -> Result<()> {
    let model = load_any(checkpoint)?;
    let out = prepare_out(&mut config)?;
    let (points, rel) = match &model {
        Loaded::F64(m) => {
            let problem = checked_problem(&config, m)?;
            (slice_errors(m, &problem)?, rel_l2(m, &problem)?)
        }
        Loaded::F32(m) => {
            let problem = checked_problem(&config, m)?;
            (slice_errors(m, &problem)?, rel_l2(m, &problem)?)
        }
    };
    write_slice_csv(&out.join("slice.csv"), &points)?;
    eprintln!("REL {rel:.4e}");
    Ok(())
}
