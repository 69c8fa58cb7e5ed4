//! Fixtures shared by the benchmarks.

use fedldp::{init_params, LabeledBatch, MlpParams, Tensor};

/// `n` pseudo-random rows in `[0,1]^d` with labels in `0..classes`.
pub fn batch(n: usize, d: usize, classes: usize) -> LabeledBatch {
    let data = (0..n * d).map(|i| ((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 56) as f64 / 255.0).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    LabeledBatch::new(Tensor::new(vec![n, d], data).expect("finite"), labels).expect("in range")
}

/// The desk-scale MNIST network.
pub fn mnist_mlp() -> MlpParams {
    init_params(&[784, 64, 10], 1).expect("valid dims")
}
