//! Robustness score ψ = 1 / mean KL(f(x) ‖ f(x_adv)) and aggregation over
//! repeated runs.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::adversarial::{clean_and_adversarial, AttackConfig};
use crate::error::{invalid, Result};
use crate::mechanisms::PrivacyBudget;
use crate::model::{LabeledBatch, MlpParams};
use crate::tensor::{argmax, kl_divergence, kl_floored, ProbabilityVector, Tensor};

/// Lower bound on the mean KL before taking the reciprocal.
pub const PSI_FLOOR: f64 = 1e-12;

pub fn psi_from_mean_kl(mean_kl: f64) -> f64 {
    1.0 / mean_kl.max(PSI_FLOOR)
}

/// ψ for one evaluation batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiMeasurement {
    pub alpha: f64,
    pub psi: f64,
    pub mean_kl: f64,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
}

/// Mean `D_KL(clean_i ‖ adv_i)` over paired predictions, and its ψ.
pub fn psi_from_predictions(clean: &[ProbabilityVector], adv: &[ProbabilityVector]) -> Result<(f64, f64)> {
    if clean.is_empty() {
        return invalid("no predictions to compare");
    }
    if clean.len() != adv.len() {
        return invalid("clean and adversarial prediction counts differ");
    }
    let mut total = 0.0;
    for (p, q) in clean.iter().zip(adv) {
        total += kl_divergence(p, q)?;
    }
    let mean_kl = total / clean.len() as f64;
    Ok((mean_kl, psi_from_mean_kl(mean_kl)))
}

fn accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    let hits = probs.iter_rows().zip(labels).filter(|(p, &y)| argmax(p) == y).count();
    hits as f64 / labels.len() as f64
}

/// Attacks every test point with FGSM and scores the prediction shift.
pub fn psi_robustness(params: &MlpParams, test: &LabeledBatch, attack: &AttackConfig) -> Result<PsiMeasurement> {
    if test.is_empty() {
        return invalid("robustness of an empty test batch");
    }
    let (clean, adv) = clean_and_adversarial(params, test, attack)?;
    let total: f64 = clean.iter_rows().zip(adv.iter_rows()).map(|(p, q)| kl_floored(p, q)).sum();
    let mean_kl = total / test.len() as f64;
    Ok(PsiMeasurement {
        alpha: attack.alpha(),
        psi: psi_from_mean_kl(mean_kl),
        mean_kl,
        clean_accuracy: accuracy(&clean, test.labels()),
        adversarial_accuracy: accuracy(&adv, test.labels()),
    })
}

/// One (ε, seed) measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub epsilon: PrivacyBudget,
    pub seed: u64,
    #[serde(flatten)]
    pub measurement: PsiMeasurement,
}

impl RobustnessReport {
    pub const CSV_HEADER: &'static str = "epsilon,seed,alpha,psi,mean_kl,clean_acc,adv_acc";

    pub fn csv_row(&self) -> String {
        let m = &self.measurement;
        format!(
            "{},{},{},{},{},{},{}",
            self.epsilon, self.seed, m.alpha, m.psi, m.mean_kl, m.clean_accuracy, m.adversarial_accuracy
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Moments {
    pub psi: f64,
    pub mean_kl: f64,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub epsilon: PrivacyBudget,
    pub alpha: f64,
    pub n: usize,
    pub mean: Moments,
    /// Sample (n − 1) standard deviation; zero for a single run.
    pub std: Moments,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "epsilon,alpha,n,psi_mean,psi_std,mean_kl_mean,mean_kl_std,clean_acc_mean,clean_acc_std,adv_acc_mean,adv_acc_std";

    /// Aggregate row in the detail-CSV layout, flagged by seed = `mean`.
    pub fn detail_csv_row(&self) -> String {
        let m = &self.mean;
        format!(
            "{},mean,{},{},{},{},{}",
            self.epsilon, self.alpha, m.psi, m.mean_kl, m.clean_accuracy, m.adversarial_accuracy
        )
    }

    pub fn csv_row(&self) -> String {
        let (m, s) = (&self.mean, &self.std);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epsilon,
            self.alpha,
            self.n,
            m.psi,
            s.psi,
            m.mean_kl,
            s.mean_kl,
            m.clean_accuracy,
            s.clean_accuracy,
            m.adversarial_accuracy,
            s.adversarial_accuracy
        )
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups reports by ε (ascending, ∞ last) and summarizes each group.
pub fn aggregate_runs(reports: &[RobustnessReport]) -> Result<Vec<SummaryRow>> {
    if reports.is_empty() {
        return invalid("no reports to aggregate");
    }
    let mut groups: BTreeMap<u64, Vec<&RobustnessReport>> = BTreeMap::new();
    for r in reports {
        // Positive floats order like their bit patterns.
        groups.entry(r.epsilon.sort_key().to_bits()).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for group in groups.values() {
        let alpha = group[0].measurement.alpha;
        if group.iter().any(|r| r.measurement.alpha != alpha) {
            return invalid(format!("inconsistent alpha within epsilon group {}", group[0].epsilon));
        }
        let col = |f: fn(&PsiMeasurement) -> f64| -> (f64, f64) {
            mean_std(&group.iter().map(|r| f(&r.measurement)).collect::<Vec<_>>())
        };
        let psi = col(|m| m.psi);
        let kl = col(|m| m.mean_kl);
        let clean = col(|m| m.clean_accuracy);
        let adv = col(|m| m.adversarial_accuracy);
        rows.push(SummaryRow {
            epsilon: group[0].epsilon,
            alpha,
            n: group.len(),
            mean: Moments { psi: psi.0, mean_kl: kl.0, clean_accuracy: clean.0, adversarial_accuracy: adv.0 },
            std: Moments { psi: psi.1, mean_kl: kl.1, clean_accuracy: clean.1, adversarial_accuracy: adv.1 },
        });
    }
    Ok(rows)
}
