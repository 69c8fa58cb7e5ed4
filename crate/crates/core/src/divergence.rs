//! Hockey-stick divergence on finite distributions and the brute-force check
//! that ε-LDP and `E_{e^ε}`-robustness coincide.
//!
//! The two sides of the equivalence are computed by separate code paths:
//! [`max_privacy_loss`] scans probability ratios, [`e_robust_check`] sums
//! hockey-stick divergences. [`certify_equivalence`] compares them.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::mechanisms::PrivacyBudget;

/// Tolerance for "the divergence is zero".
pub const DIVERGENCE_ZERO_TOL: f64 = 1e-12;
/// Slack allowed when comparing the worst-case privacy loss against ε.
pub const LOSS_TOL: f64 = 1e-9;

const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    mass: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        validate_mass(&mass)?;
        Ok(Self { mass })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
}

fn validate_mass(mass: &[f64]) -> Result<()> {
    if mass.is_empty() {
        return invalid("distribution over an empty alphabet");
    }
    if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return invalid("masses must be finite and nonnegative");
    }
    let s: f64 = mass.iter().sum();
    if (s - 1.0).abs() > MASS_TOL {
        return invalid(format!("masses sum to {s}, not 1"));
    }
    Ok(())
}

/// Row-stochastic kernel: row `x` is the output distribution of `M(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMechanism {
    kernel: Vec<Vec<f64>>,
}

impl DiscreteMechanism {
    pub fn new(kernel: Vec<Vec<f64>>) -> Result<Self> {
        let width = kernel.first().map(Vec::len).unwrap_or(0);
        for (i, row) in kernel.iter().enumerate() {
            if row.len() != width {
                return invalid(format!("row {i} has {} outputs, expected {width}", row.len()));
            }
            validate_mass(row)?;
        }
        Ok(Self { kernel })
    }

    /// Deterministic mechanism `M(x) = x` on a `k`-symbol alphabet.
    pub fn identity(k: usize) -> Self {
        let kernel = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self { kernel }
    }

    /// Each row is a normalized vector of iid uniform(0,1) draws.
    pub fn random<R: Rng + ?Sized>(n_inputs: usize, n_outputs: usize, rng: &mut R) -> Self {
        let kernel = (0..n_inputs)
            .map(|_| {
                let raw: Vec<f64> = (0..n_outputs).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        Self { kernel }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.kernel
    }

    pub fn n_inputs(&self) -> usize {
        self.kernel.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.kernel.first().map(Vec::len).unwrap_or(0)
    }

    pub fn distribution(&self, x: usize) -> DiscreteDistribution {
        DiscreteDistribution { mass: self.kernel[x].clone() }
    }
}

/// `E_λ(P ‖ Q) = Σ_v max(P(v) − λ Q(v), 0)`.
pub fn hockey_stick(p: &DiscreteDistribution, q: &DiscreteDistribution, lambda: f64) -> Result<f64> {
    if p.mass.len() != q.mass.len() {
        return invalid(format!("alphabet mismatch: {} vs {}", p.mass.len(), q.mass.len()));
    }
    if !(lambda >= 1.0) {
        return invalid(format!("hockey-stick parameter must be >= 1, got {lambda}"));
    }
    Ok(hockey_stick_raw(&p.mass, &q.mass, lambda))
}

fn hockey_stick_raw(p: &[f64], q: &[f64], lambda: f64) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - lambda * b).max(0.0)).sum()
}

/// Worst-case log-ratio of a mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyLoss {
    Bounded(f64),
    Unbounded,
}

impl PrivacyLoss {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Self::Bounded(v) => Some(v),
            Self::Unbounded => None,
        }
    }
}

fn require_pairs(m: &DiscreteMechanism) -> Result<()> {
    if m.n_inputs() < 2 {
        return invalid("a mechanism needs at least two inputs to compare");
    }
    Ok(())
}

/// `max_{x, x', v} ln(K[x][v] / K[x'][v])`, skipping outputs with zero mass
/// under both inputs.
pub fn max_privacy_loss(m: &DiscreteMechanism) -> Result<PrivacyLoss> {
    require_pairs(m)?;
    let mut worst = f64::NEG_INFINITY;
    for (i, a) in m.kernel.iter().enumerate() {
        for (j, b) in m.kernel.iter().enumerate() {
            if i == j {
                continue;
            }
            for (&pa, &pb) in a.iter().zip(b) {
                if pa == 0.0 {
                    continue;
                }
                if pb == 0.0 {
                    return Ok(PrivacyLoss::Unbounded);
                }
                worst = worst.max((pa / pb).ln());
            }
        }
    }
    // Rows with disjoint supports already returned; identical rows give 0.
    Ok(PrivacyLoss::Bounded(worst.max(0.0)))
}

/// True iff `E_{e^ε}(M(x) ‖ M(x')) = 0` for every ordered input pair.
pub fn e_robust_check(m: &DiscreteMechanism, budget: PrivacyBudget) -> Result<bool> {
    require_pairs(m)?;
    let eps = budget.require_finite("E-robustness check")?;
    let lambda = eps.exp();
    for (i, a) in m.kernel.iter().enumerate() {
        for (j, b) in m.kernel.iter().enumerate() {
            if i != j && hockey_stick_raw(a, b, lambda) > DIVERGENCE_ZERO_TOL {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EquivalenceRecord {
    pub ldp: bool,
    pub e_robust: bool,
    pub agree: bool,
}

/// Evaluates both sides of the LDP ⇔ `E_{e^ε}`-robustness equivalence.
pub fn certify_equivalence(m: &DiscreteMechanism, budget: PrivacyBudget) -> Result<EquivalenceRecord> {
    let eps = budget.require_finite("equivalence certificate")?;
    let ldp = match max_privacy_loss(m)? {
        PrivacyLoss::Bounded(loss) => loss <= eps + LOSS_TOL,
        PrivacyLoss::Unbounded => false,
    };
    let e_robust = e_robust_check(m, budget)?;
    Ok(EquivalenceRecord { ldp, e_robust, agree: ldp == e_robust })
}

/// Outcome of [`fuzz_equivalence`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzSummary {
    pub seed: u64,
    pub instances: usize,
    pub cases: usize,
    pub agreements: usize,
    /// `(instance, epsilon)` of every case where the two sides differ.
    pub disagreements: Vec<(usize, f64)>,
}

/// Budgets every fuzzed mechanism is checked at, besides its own worst-case
/// loss.
pub const FUZZ_BUDGETS: [f64; 4] = [0.1, 0.5, 1.0, 2.0];

/// Draws `instances` random mechanisms with 2–6 inputs and outputs and
/// certifies each at [`FUZZ_BUDGETS`] and at its own maximum privacy loss.
pub fn fuzz_equivalence(instances: usize, seed: u64) -> Result<FuzzSummary> {
    let mut summary = FuzzSummary { seed, instances, cases: 0, agreements: 0, disagreements: Vec::new() };
    for i in 0..instances {
        let mut rng = crate::seed::rng_from(crate::seed::derive(seed, &[i as u64]));
        let nx = rng.gen_range(2..=6);
        let ny = rng.gen_range(2..=6);
        let m = DiscreteMechanism::random(nx, ny, &mut rng);
        let mut budgets = FUZZ_BUDGETS.to_vec();
        if let PrivacyLoss::Bounded(loss) = max_privacy_loss(&m)? {
            if loss > 0.0 {
                budgets.push(loss);
            }
        }
        for eps in budgets {
            let rec = certify_equivalence(&m, PrivacyBudget::Finite(eps))?;
            summary.cases += 1;
            if rec.agree {
                summary.agreements += 1;
            } else {
                summary.disagreements.push((i, eps));
            }
        }
    }
    Ok(summary)
}
