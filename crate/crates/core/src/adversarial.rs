//! Norm-bounded adversarial examples under the L∞ norm.
//!
//! * [`fgsm`] / [`fgsm_batch`]: single-step fast gradient sign attack.
//! * [`classify_example`]: sensitivity vs. invariance classification of a
//!   candidate `x*` against a [`LabelingOracle`].
//! * [`compute_alpha_thresholds`]: the radii `α₁` (closest point the oracle
//!   labels differently) and `α₂` (farthest point it still labels `y` or ⊥),
//!   by exhaustive grid search.
//! * [`pointwise_robustness_check`]: sampled search for an in-ball point the
//!   classifier gets wrong.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::model::{logits, predict_proba, InputGradient, LabeledBatch, MlpParams};
use crate::seed::rng_from;
use crate::tensor::{argmax, linf_distance, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackConfig {
    alpha: f64,
}

impl AttackConfig {
    /// `alpha` is both the FGSM step and the L∞ ball radius.
    pub fn linf(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return invalid(format!("alpha must be a nonnegative finite real, got {alpha}"));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleLabel {
    Label(usize),
    /// The input has no meaningful label (⊥).
    Unlabelable,
}

/// Ground-truth labeling `O : X → Y ∪ {⊥}`.
pub trait LabelingOracle {
    fn label(&self, x: &[f64]) -> OracleLabel;
}

impl<F: Fn(&[f64]) -> OracleLabel> LabelingOracle for F {
    fn label(&self, x: &[f64]) -> OracleLabel {
        self(x)
    }
}

/// Two-class oracle on `[−1,1]²` split by the first coordinate, with an
/// unlabelable band `|x₁| ≤ band`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandOracle {
    pub band: f64,
}

impl BandOracle {
    pub const NEGATIVE: usize = 0;
    pub const POSITIVE: usize = 1;
    pub const DEFAULT_BAND: f64 = 0.05;

    pub fn domain() -> BoxDomain {
        BoxDomain::cube(2, -1.0, 1.0)
    }
}

impl Default for BandOracle {
    fn default() -> Self {
        Self { band: Self::DEFAULT_BAND }
    }
}

impl LabelingOracle for BandOracle {
    fn label(&self, x: &[f64]) -> OracleLabel {
        if x[0] > self.band {
            OracleLabel::Label(Self::POSITIVE)
        } else if x[0] < -self.band {
            OracleLabel::Label(Self::NEGATIVE)
        } else {
            OracleLabel::Unlabelable
        }
    }
}

/// A hard-label classifier `f`.
pub trait Classifier {
    fn classify(&self, x: &[f64]) -> usize;
}

impl<F: Fn(&[f64]) -> usize> Classifier for F {
    fn classify(&self, x: &[f64]) -> usize {
        self(x)
    }
}

impl Classifier for MlpParams {
    fn classify(&self, x: &[f64]) -> usize {
        let t = Tensor::new(vec![1, x.len()], x.to_vec()).expect("finite input");
        let z = logits(self, &t).expect("input matches network width");
        argmax(z.data())
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return invalid("box bounds must be non-empty with lo <= hi per coordinate");
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| a <= v && v <= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Sensitivity,
    Invariance,
    NotAdversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdversarialVerdict {
    pub kind: VerdictKind,
    /// `‖x* − x‖_∞`
    pub linf: f64,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn fgsm_step(x: &[f64], grad: &[f64], alpha: f64) -> Vec<f64> {
    x.iter().zip(grad).map(|(&xi, &gi)| (xi + alpha * sign(gi)).clamp(0.0, 1.0)).collect()
}

/// `clamp_[0,1](x + α · sign(∇ₓ L(θ, x, y)))` with `sign(0) = 0`.
pub fn fgsm<G: InputGradient + ?Sized>(model: &G, x: &[f64], y: usize, config: &AttackConfig) -> Result<Vec<f64>> {
    if x.len() != model.input_dim() {
        return invalid(format!("input has {} features, model expects {}", x.len(), model.input_dim()));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return invalid("FGSM inputs must lie in [0, 1]");
    }
    let grad = model.input_gradient(x, y)?;
    Ok(fgsm_step(x, &grad, config.alpha))
}

/// FGSM applied row by row using one batched backward pass. The gradient of
/// the batch-mean loss is each row's own gradient divided by the batch size,
/// so the signs agree.
pub fn fgsm_batch(params: &MlpParams, batch: &LabeledBatch, config: &AttackConfig) -> Result<Tensor> {
    if batch.dim() != params.input_dim() {
        return invalid("batch width does not match network input");
    }
    if batch.is_empty() {
        return Ok(batch.inputs().clone());
    }
    let (_, trace) = crate::model::forward(params, batch.inputs())?;
    let grads = crate::model::backward(params, &trace, batch.labels())?;
    let data: Vec<f64> = batch
        .inputs()
        .iter_rows()
        .zip(grads.inputs.iter_rows())
        .flat_map(|(x, g)| fgsm_step(x, g, config.alpha))
        .collect();
    Tensor::new(batch.inputs().shape().to_vec(), data)
}

fn correct_label<F, O>(f: &F, oracle: &O, x: &[f64]) -> Result<usize>
where
    F: Classifier + ?Sized,
    O: LabelingOracle + ?Sized,
{
    match oracle.label(x) {
        OracleLabel::Unlabelable => invalid("the reference input is unlabelable"),
        OracleLabel::Label(y) if f.classify(x) != y => invalid("the reference input is not correctly classified"),
        OracleLabel::Label(y) => Ok(y),
    }
}

/// Classifies `x*` relative to a correctly classified `x`.
pub fn classify_example<F, O>(
    f: &F,
    oracle: &O,
    x: &[f64],
    x_star: &[f64],
    config: &AttackConfig,
) -> Result<AdversarialVerdict>
where
    F: Classifier + ?Sized,
    O: LabelingOracle + ?Sized,
{
    if x.len() != x_star.len() {
        return invalid("x and x* have different dimensions");
    }
    let y = correct_label(f, oracle, x)?;
    let linf = linf_distance(x, x_star);
    let kind = if linf > config.alpha {
        VerdictKind::NotAdversarial
    } else if f.classify(x_star) != y {
        VerdictKind::Sensitivity
    } else {
        match oracle.label(x_star) {
            OracleLabel::Label(l) if l != y => VerdictKind::Invariance,
            _ => VerdictKind::NotAdversarial,
        }
    };
    Ok(AdversarialVerdict { kind, linf })
}

/// `None` means no grid point attained the extremum. On a bounded grid `alpha1`
/// can exceed `alpha2` by up to one step when `x` sits near the domain edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaThresholds {
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
}

/// Grid coordinates `k · step` inside `[lo, hi]`. Anchoring the lattice at the
/// origin keeps values like `0.05` exact instead of accumulating `lo + i·step`.
fn axis_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| (k as f64 * step).clamp(lo, hi)).collect()
}

/// Exhaustive L∞ grid search for `α₁` and `α₂` around `x`.
pub fn compute_alpha_thresholds<O: LabelingOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    y: usize,
    domain: &BoxDomain,
    grid_step: f64,
) -> Result<AlphaThresholds> {
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return invalid(format!("grid step must be positive, got {grid_step}"));
    }
    if x.len() != domain.dim() {
        return invalid("x and the domain have different dimensions");
    }
    if oracle.label(x) != OracleLabel::Label(y) {
        return invalid("oracle does not assign label y to x");
    }
    let axes: Vec<Vec<f64>> = (0..domain.dim()).map(|i| axis_points(domain.lo[i], domain.hi[i], grid_step)).collect();
    if axes.iter().any(Vec::is_empty) {
        return invalid("grid step is larger than the domain");
    }

    let mut alpha1: Option<f64> = None;
    let mut alpha2: Option<f64> = None;
    let mut idx = vec![0usize; axes.len()];
    let mut g = vec![0.0; axes.len()];
    'grid: loop {
        for (d, &i) in idx.iter().enumerate() {
            g[d] = axes[d][i];
        }
        let dist = linf_distance(&g, x);
        match oracle.label(&g) {
            OracleLabel::Label(l) if l != y => alpha1 = Some(alpha1.map_or(dist, |a| a.min(dist))),
            _ => alpha2 = Some(alpha2.map_or(dist, |a| a.max(dist))),
        }
        // odometer increment
        for d in 0..idx.len() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                continue 'grid;
            }
            idx[d] = 0;
        }
        break;
    }
    Ok(AlphaThresholds { alpha1, alpha2 })
}

/// Samples `n_samples` points uniformly from `B∞(x, α) ∩ domain` and returns
/// `false` as soon as one has a real oracle label that `f` disagrees with.
/// A `true` result is a sampling certificate, not a proof.
pub fn pointwise_robustness_check<F, O>(
    f: &F,
    oracle: &O,
    x: &[f64],
    config: &AttackConfig,
    domain: &BoxDomain,
    n_samples: usize,
    seed: u64,
) -> Result<bool>
where
    F: Classifier + ?Sized,
    O: LabelingOracle + ?Sized,
{
    if n_samples == 0 {
        return invalid("n_samples must be positive");
    }
    if x.len() != domain.dim() {
        return invalid("x and the domain have different dimensions");
    }
    correct_label(f, oracle, x)?;
    let bounds: Vec<(f64, f64)> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| ((v - config.alpha).max(domain.lo[i]), (v + config.alpha).min(domain.hi[i])))
        .collect();
    let mut rng = rng_from(seed);
    let mut p = vec![0.0; x.len()];
    for _ in 0..n_samples {
        for (pi, &(lo, hi)) in p.iter_mut().zip(&bounds) {
            *pi = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        }
        if let OracleLabel::Label(truth) = oracle.label(&p) {
            if f.classify(&p) != truth {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Clean and adversarial probabilities for a batch under FGSM.
pub(crate) fn clean_and_adversarial(
    params: &MlpParams,
    batch: &LabeledBatch,
    config: &AttackConfig,
) -> Result<(Tensor, Tensor)> {
    let adv = fgsm_batch(params, batch, config)?;
    Ok((predict_proba(params, batch.inputs())?, predict_proba(params, &adv)?))
}
