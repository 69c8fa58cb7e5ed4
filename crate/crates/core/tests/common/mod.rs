//! Test oracles written independently of the library kernels.
#![allow(dead_code)]

use fedldp::{backward, forward, init_params, MlpParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Naive forward pass over explicit `(out × in)` weights. Returns the mean
/// cross-entropy and the sign pattern of every hidden pre-activation.
pub fn naive_loss(params: &MlpParams, x: &[Vec<f64>], y: &[usize]) -> (f64, Vec<bool>) {
    let mut total = 0.0;
    let mut signs = Vec::new();
    let n_layers = params.layers().len();
    for (row, &label) in x.iter().zip(y) {
        let mut a = row.clone();
        for (li, layer) in params.layers().iter().enumerate() {
            let (out, inp) = (layer.fan_out(), layer.fan_in());
            let w = layer.weights.data();
            let mut z = vec![0.0; out];
            for o in 0..out {
                let mut s = layer.bias[o];
                for i in 0..inp {
                    s += w[o * inp + i] * a[i];
                }
                z[o] = s;
            }
            if li + 1 < n_layers {
                signs.extend(z.iter().map(|&v| v > 0.0));
                a = z.into_iter().map(|v| v.max(0.0)).collect();
            } else {
                a = z;
            }
        }
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - a[label];
    }
    (total / x.len() as f64, signs)
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Central differences over every parameter and every input coordinate.
/// Coordinates where a ±h probe flips a ReLU are skipped, since the loss is
/// not differentiable there.
pub fn finite_difference_check(params: &MlpParams, x: &[Vec<f64>], y: &[usize]) -> GradCheck {
    let t = Tensor::from_rows(x).unwrap();
    let (_, trace) = forward(params, &t).unwrap();
    let g = backward(params, &trace, y).unwrap();
    let dims = params.layer_dims();
    let flat = params.to_flat();
    let analytic = g.params.to_flat();
    let mut res = GradCheck { max_rel_err: 0.0, checked: 0, skipped: 0 };

    for k in 0..flat.len() {
        let mut plus = flat.clone();
        plus[k] += FD_STEP;
        let mut minus = flat.clone();
        minus[k] -= FD_STEP;
        let (lp, sp) = naive_loss(&MlpParams::from_flat(&dims, &plus).unwrap(), x, y);
        let (lm, sm) = naive_loss(&MlpParams::from_flat(&dims, &minus).unwrap(), x, y);
        if sp != sm {
            res.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        res.max_rel_err = res.max_rel_err.max(rel_err(analytic[k], numeric));
        res.checked += 1;
    }
    let d = x[0].len();
    for r in 0..x.len() {
        for c in 0..d {
            let mut plus = x.to_vec();
            plus[r][c] += FD_STEP;
            let mut minus = x.to_vec();
            minus[r][c] -= FD_STEP;
            let (lp, sp) = naive_loss(params, &plus, y);
            let (lm, sm) = naive_loss(params, &minus, y);
            if sp != sm {
                res.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            res.max_rel_err = res.max_rel_err.max(rel_err(g.inputs.row(r)[c], numeric));
            res.checked += 1;
        }
    }
    res
}

/// A random network with `dims ≤ [20, 16, 5]`, nonzero biases, a batch of up
/// to 8 rows in `[0,1]^d`, and labels.
pub fn random_case(seed: u64) -> (MlpParams, Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [rng.gen_range(1..=20), rng.gen_range(1..=16), rng.gen_range(2..=5)];
    let mut params = init_params(&dims, rng.gen()).unwrap();
    for layer in params.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let n = rng.gen_range(1..=8);
    let x = (0..n).map(|_| (0..dims[0]).map(|_| rng.gen::<f64>()).collect()).collect();
    let y = (0..n).map(|_| rng.gen_range(0..dims[2])).collect();
    (params, x, y)
}

/// Total variation `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn random_simplex(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}
