//! The ε sweep: for every budget in the grid and every repeat, train with
//! FedAvg under LDP, attack the held-out split with FGSM, and record ψ.
//!
//! Output is a CSV with one detail row per (ε, repeat) followed by one
//! aggregate row per ε (seed column `mean`). Means and sample standard
//! deviations also go to a companion `<stem>.summary.csv`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;

use crate::adversarial::AttackConfig;
use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federated::run_training;
use crate::mechanisms::PrivacyBudget;
use crate::metrics::{aggregate_runs, psi_robustness, RobustnessReport, SummaryRow};
use crate::seed::derive;

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub reports: Vec<RobustnessReport>,
    pub summary: Vec<SummaryRow>,
    pub detail_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Seed of the run at grid position `eps_index`, repeat `repeat`. Adding grid
/// points or repeats never changes the seeds of existing cells.
pub fn cell_seed(master_seed: u64, eps_index: usize, repeat: usize) -> u64 {
    derive(master_seed, &[eps_index as u64, repeat as u64])
}

pub fn summary_path_for(detail: &Path) -> PathBuf {
    let stem = detail.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    detail.with_file_name(format!("{stem}.summary.csv"))
}

fn run_cell(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    budget: PrivacyBudget,
    seed: u64,
) -> Result<RobustnessReport> {
    let attack = AttackConfig::linf(config.alpha)?;
    let run = run_training(&train.data, &config.round_config(budget), seed)?;
    let measurement = psi_robustness(&run.params, &test.data, &attack)?;
    if !(measurement.psi.is_finite() && measurement.mean_kl.is_finite()) {
        return Err(Error::Numeric(format!("non-finite robustness score at epsilon {budget}, seed {seed}")));
    }
    Ok(RobustnessReport { epsilon: budget, seed, measurement })
}

/// Loads the configured data and runs the sweep.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let (train, test) = config.load_splits()?;
    run_sweep_on(config, &train, &test)
}

/// Runs the sweep on already-loaded splits. Cells run concurrently; rows are
/// written in grid order and flushed one at a time.
pub fn run_sweep_on(config: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<SweepOutcome> {
    config.validate()?;
    let detail_path = config.output.clone();
    if let Some(dir) = detail_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(&detail_path)?);
    writeln!(out, "{}", RobustnessReport::CSV_HEADER)?;
    out.flush()?;

    let cells: Vec<(PrivacyBudget, u64)> = config
        .epsilon_grid
        .iter()
        .enumerate()
        .flat_map(|(ei, &eps)| (0..config.n_repeats).map(move |r| (eps, cell_seed(config.master_seed, ei, r))))
        .collect();

    let (tx, rx) = mpsc::channel::<(usize, Result<RobustnessReport>)>();
    let mut reports = Vec::with_capacity(cells.len());
    let mut first_error = None;
    std::thread::scope(|scope| {
        scope.spawn(|| {
            cells.par_iter().enumerate().for_each_with(tx, |tx, (i, &(eps, seed))| {
                let _ = tx.send((i, run_cell(config, train, test, eps, seed)));
            });
        });
        let mut pending = BTreeMap::new();
        for (i, result) in rx.iter() {
            pending.insert(i, result);
            while first_error.is_none() {
                let Some(result) = pending.remove(&reports.len()) else {
                    break;
                };
                let written = result.and_then(|report| {
                    writeln!(out, "{}", report.csv_row())?;
                    out.flush()?;
                    Ok(report)
                });
                match written {
                    Ok(report) => reports.push(report),
                    Err(e) => first_error = Some(e),
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }

    let summary = aggregate_runs(&reports)?;
    for row in &summary {
        writeln!(out, "{}", row.detail_csv_row())?;
    }
    out.flush()?;

    let summary_path = summary_path_for(&detail_path);
    let mut s = BufWriter::new(File::create(&summary_path)?);
    writeln!(s, "{}", SummaryRow::CSV_HEADER)?;
    for row in &summary {
        writeln!(s, "{}", row.csv_row())?;
    }
    s.flush()?;

    Ok(SweepOutcome { reports, summary, detail_path, summary_path })
}

/// Human-readable ψ-versus-ε profile, noting where the peak sits.
pub fn describe_trend(summary: &[SummaryRow]) -> String {
    let mut lines: Vec<String> = summary
        .iter()
        .map(|r| format!("  eps = {:>5}: psi = {:.4} ± {:.4}", r.epsilon.to_string(), r.mean.psi, r.std.psi))
        .collect();
    let psi: Vec<f64> = summary.iter().map(|r| r.mean.psi).collect();
    if let Some((peak, _)) = psi.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
        let rising = psi.windows(2).all(|w| w[1] >= w[0]);
        let falling = psi.windows(2).all(|w| w[1] <= w[0]);
        let rises_then_falls =
            psi[..=peak].windows(2).all(|w| w[1] >= w[0]) && psi[peak..].windows(2).all(|w| w[1] <= w[0]);
        let shape = if psi.len() < 2 {
            "single grid point"
        } else if rising {
            "monotone increase"
        } else if falling {
            "monotone decrease"
        } else if rises_then_falls {
            "rises to an interior peak, then falls"
        } else {
            "non-monotone"
        };
        lines.push(format!("  max psi at eps = {}; shape: {shape}", summary[peak].epsilon));
    }
    lines.join("\n")
}
