//! Local differential privacy versus adversarial robustness in federated
//! learning.
//!
//! The crate has two halves:
//!
//! * a certification path ([`mechanisms`], [`divergence`]) that checks, by
//!   exhaustive enumeration over finite alphabets, that a randomizer is
//!   ε-LDP exactly when the hockey-stick divergence `E_{e^ε}` between its
//!   output distributions vanishes for every input pair;
//! * an empirical path ([`model`], [`federated`], [`adversarial`],
//!   [`metrics`], [`sweep`]) that trains a small classifier with federated
//!   averaging under per-client Laplace noise, attacks it with FGSM, and
//!   scores robustness as the reciprocal of the mean KL divergence between
//!   clean and adversarial predictions.

// `!(x >= y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod divergence;
pub mod error;
pub mod federated;
pub mod mechanisms;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod sweep;
pub mod tensor;

pub use adversarial::{
    classify_example, compute_alpha_thresholds, fgsm, fgsm_batch, pointwise_robustness_check, AdversarialVerdict,
    AlphaThresholds, AttackConfig, BandOracle, BoxDomain, Classifier, LabelingOracle, OracleLabel, VerdictKind,
};
pub use config::ExperimentConfig;
pub use data::{load_cifar10_bin, load_mnist_idx, make_synthetic_linear, Dataset, SyntheticLinear};
pub use divergence::{
    certify_equivalence, e_robust_check, fuzz_equivalence, hockey_stick, max_privacy_loss, DiscreteDistribution,
    DiscreteMechanism, EquivalenceRecord, FuzzSummary, PrivacyLoss,
};
pub use error::{Error, Result};
pub use federated::{
    fedavg, local_train, partition_iid, privatize_inputs, privatize_update, run_training, ClientShard, ClientUpdate,
    LdpMode, RoundConfig, RoundLog, TrainingRun,
};
pub use mechanisms::{clip_l1, laplace_perturb, laplace_sample, randomized_response_matrix, ClipSpec, PrivacyBudget};
pub use metrics::{aggregate_runs, psi_robustness, PsiMeasurement, RobustnessReport, SummaryRow};
pub use model::{
    backward, evaluate_accuracy, forward, init_params, sgd_step, DenseLayer, ForwardTrace, Gradients, InputGradient,
    LabeledBatch, MlpParams,
};
pub use sweep::{run_sweep, SweepOutcome};
pub use tensor::{kl_divergence, softmax, ProbabilityVector, Tensor};
