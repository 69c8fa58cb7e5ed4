//! Simulated federated averaging with per-client ε-LDP.
//!
//! Every client applies the same budget. Two placements are supported:
//! perturbing the clipped parameter delta each round
//! ([`LdpMode::UpdatePerturbation`]) or perturbing the client's feature
//! vectors once before training ([`LdpMode::InputPerturbation`]).

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::{clip_l1, laplace_sample, ClipSpec, PrivacyBudget};
use crate::model::{
    backward_params, evaluate_accuracy, forward, init_params, mean_loss, sgd_step, LabeledBatch, MlpParams,
};
use crate::seed::{derive, rng_from};
use crate::tensor::Tensor;

const STREAM_PARTITION: u64 = 0x5041_5254;
const STREAM_INIT: u64 = 0x494e_4954;
const STREAM_CLIENT: u64 = 0x434c_4e54;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdpMode {
    UpdatePerturbation,
    InputPerturbation,
    Off,
}

impl fmt::Display for LdpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::UpdatePerturbation => "update_perturbation",
            Self::InputPerturbation => "input_perturbation",
            Self::Off => "off",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub layer_dims: Vec<usize>,
    pub n_clients: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ldp_mode: LdpMode,
    pub budget: PrivacyBudget,
    pub clip: ClipSpec,
    pub rounds: usize,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            layer_dims: vec![784, 64, 10],
            n_clients: 10,
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 0.05,
            ldp_mode: LdpMode::UpdatePerturbation,
            budget: PrivacyBudget::Infinite,
            clip: ClipSpec::l1(1.0).expect("positive radius"),
            rounds: 20,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return invalid(format!("bad layer dims {:?}", self.layer_dims));
        }
        for (name, v) in [
            ("n_clients", self.n_clients),
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
            ("rounds", self.rounds),
        ] {
            if v == 0 {
                return invalid(format!("{name} must be positive"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning rate must be nonnegative, got {}", self.learning_rate));
        }
        Ok(())
    }

    /// Laplace scale applied per coordinate under this config, if any.
    pub fn noise_scale(&self) -> Option<f64> {
        let eps = self.budget.epsilon()?;
        match self.ldp_mode {
            LdpMode::UpdatePerturbation => Some(self.clip.radius() / eps),
            LdpMode::InputPerturbation => Some(self.layer_dims[0] as f64 / eps),
            LdpMode::Off => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub data: LabeledBatch,
    pub seed: u64,
}

impl ClientShard {
    pub fn rng(&self) -> ChaCha8Rng {
        rng_from(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    /// `θ_local − θ_global`, flattened.
    pub delta: Vec<f64>,
    /// Number of local samples.
    pub weight: f64,
}

/// Splits `dataset` into `n_clients` shards of near-equal size after a seeded
/// shuffle. Shard `i` gets the stream seed `derive(seed, [client, i])`.
pub fn partition_iid(dataset: &LabeledBatch, n_clients: usize, seed: u64) -> Result<Vec<ClientShard>> {
    if n_clients == 0 || n_clients > dataset.len() {
        return invalid(format!("cannot split {} samples across {n_clients} clients", dataset.len()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_from(derive(seed, &[STREAM_PARTITION])));
    let base = dataset.len() / n_clients;
    let extra = dataset.len() % n_clients;
    let mut shards = Vec::with_capacity(n_clients);
    let mut at = 0;
    for id in 0..n_clients {
        let size = base + usize::from(id < extra);
        shards.push(ClientShard {
            client_id: id,
            data: dataset.select(&order[at..at + size]),
            seed: derive(seed, &[STREAM_CLIENT, id as u64]),
        });
        at += size;
    }
    Ok(shards)
}

/// Mini-batch SGD from `global` on the shard for `local_epochs` epochs.
pub fn local_train<R: Rng + ?Sized>(
    shard: &ClientShard,
    global: &MlpParams,
    config: &RoundConfig,
    rng: &mut R,
) -> Result<ClientUpdate> {
    if shard.data.dim() != global.input_dim() {
        return invalid(format!("shard width {} does not match model input {}", shard.data.dim(), global.input_dim()));
    }
    if config.batch_size == 0 {
        return invalid("batch_size must be positive");
    }
    let n = shard.data.len();
    let mut params = global.clone();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.local_epochs {
        if config.batch_size < n {
            order.shuffle(rng);
        }
        for chunk in order.chunks(config.batch_size) {
            let owned;
            let batch = if chunk.len() == n && config.batch_size >= n {
                &shard.data
            } else {
                owned = shard.data.select(chunk);
                &owned
            };
            let (_, trace) = forward(&params, batch.inputs())?;
            let (grads, _) = backward_params(&params, &trace, batch.labels())?;
            params = sgd_step(&params, &grads, config.learning_rate)?;
        }
    }
    let delta = params.to_flat().iter().zip(global.to_flat()).map(|(a, b)| a - b).collect();
    Ok(ClientUpdate { delta, weight: n as f64 })
}

/// Clips the delta to the L1 ball of radius `S` and adds Laplace(`S/ε`)
/// noise per coordinate.
pub fn privatize_update<R: Rng + ?Sized>(
    update: &ClientUpdate,
    clip: &ClipSpec,
    budget: PrivacyBudget,
    rng: &mut R,
) -> ClientUpdate {
    let mut delta = clip_l1(&update.delta, clip);
    if let Some(eps) = budget.epsilon() {
        let b = clip.radius() / eps;
        for x in &mut delta {
            *x += laplace_sample(rng, b);
        }
    }
    ClientUpdate { delta, weight: update.weight }
}

/// Replaces every feature vector by `clamp(x + Laplace(d/ε))`. Features span
/// `[0,1]^d`, so the L1 sensitivity of releasing one vector is `d`.
pub fn privatize_inputs<R: Rng + ?Sized>(
    shard: &ClientShard,
    budget: PrivacyBudget,
    rng: &mut R,
) -> Result<ClientShard> {
    let Some(eps) = budget.epsilon() else {
        return Ok(shard.clone());
    };
    let d = shard.data.dim();
    let b = d as f64 / eps;
    let noisy: Vec<f64> =
        shard.data.inputs().data().iter().map(|&x| (x + laplace_sample(rng, b)).clamp(0.0, 1.0)).collect();
    let inputs = Tensor::new(shard.data.inputs().shape().to_vec(), noisy)?;
    Ok(ClientShard {
        client_id: shard.client_id,
        data: LabeledBatch::new(inputs, shard.data.labels().to_vec())?,
        seed: shard.seed,
    })
}

/// Sample-weighted mean of the client deltas.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    let Some(first) = updates.first() else {
        return invalid("no client updates to aggregate");
    };
    let len = first.delta.len();
    if updates.iter().any(|u| u.delta.len() != len) {
        return invalid("client updates have different lengths");
    }
    let total: f64 = updates.iter().map(|u| u.weight).sum();
    if !(total > 0.0) {
        return invalid("total client weight must be positive");
    }
    let mut out = vec![0.0; len];
    for u in updates {
        let w = u.weight / total;
        for (o, d) in out.iter_mut().zip(&u.delta) {
            *o += w * d;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub global_loss: f64,
    pub global_accuracy: f64,
    pub epsilon: PrivacyBudget,
    pub mode: LdpMode,
    pub seed: u64,
}

impl RoundLog {
    pub const CSV_HEADER: &'static str = "round,global_loss,global_accuracy,epsilon,mode,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.round, self.global_loss, self.global_accuracy, self.epsilon, self.mode, self.seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub params: MlpParams,
    pub log: Vec<RoundLog>,
}

/// Starting parameters used by [`run_training`] for a given master seed.
pub fn initial_params(config: &RoundConfig, master_seed: u64) -> Result<MlpParams> {
    init_params(&config.layer_dims, derive(master_seed, &[STREAM_INIT]))
}

/// Runs `config.rounds` rounds of broadcast, local training, privatization
/// and FedAvg. Global loss and accuracy are logged on the clean training set.
pub fn run_training(dataset: &LabeledBatch, config: &RoundConfig, master_seed: u64) -> Result<TrainingRun> {
    config.validate()?;
    if dataset.dim() != config.layer_dims[0] {
        return invalid(format!("dataset width {} does not match input dim {}", dataset.dim(), config.layer_dims[0]));
    }
    let mut global = initial_params(config, master_seed)?;
    let mut clients: Vec<(ClientShard, ChaCha8Rng)> = partition_iid(dataset, config.n_clients, master_seed)?
        .into_iter()
        .map(|s| {
            let rng = s.rng();
            (s, rng)
        })
        .collect();
    if config.ldp_mode == LdpMode::InputPerturbation {
        for (shard, rng) in &mut clients {
            *shard = privatize_inputs(shard, config.budget, rng)?;
        }
    }

    let mut log = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let snapshot = &global;
        let updates = clients
            .par_iter_mut()
            .map(|(shard, rng)| {
                let u = local_train(shard, snapshot, config, rng)?;
                Ok(match config.ldp_mode {
                    LdpMode::UpdatePerturbation => privatize_update(&u, &config.clip, config.budget, rng),
                    _ => u,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let aggregate = fedavg(&updates)?;
        global.add_flat(&aggregate)?;
        if !global.all_finite() {
            return Err(Error::Numeric(format!("non-finite global parameters after round {round}")));
        }
        log.push(RoundLog {
            round,
            global_loss: mean_loss(&global, dataset)?,
            global_accuracy: evaluate_accuracy(&global, dataset)?,
            epsilon: config.budget,
            mode: config.ldp_mode,
            seed: master_seed,
        });
    }
    Ok(TrainingRun { params: global, log })
}
