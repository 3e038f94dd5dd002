//! Federation engine: data partitioning, resource-class assignment, the
//! first-order warm-up phase, the seed-exchange zeroth-order phase, pivot
//! scheduling, and the full two-phase driver.

mod driver;
mod partition;
mod rounds;

pub use driver::{
    evaluate_weights, pivot_sweep, run_zowarmup, sweep_seed, PivotSweepRow, RunCostReport,
    RunOutput,
};
pub use partition::{assign_resources, dirichlet_partition, dirichlet_partition_indices};
pub use rounds::{
    fedavg_aggregate, local_train, server_step, zo_opt_client, zo_round, ZoClientResult,
    ZoRoundOutcome, ZoRoundParams,
};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, Batch, MlpSpec, ParamVector};
use crate::rng::SeedStream;
use crate::zopt::{AggregateMode, PerturbKind};

/// Stream/seed derivation purposes, so every random decision in a run hangs
/// off the master seed through a distinct context path.
pub(crate) mod purpose {
    pub const PARTITION: u64 = 1;
    pub const RESOURCES: u64 = 2;
    pub const INIT: u64 = 3;
    pub const CLIENT: u64 = 4;
    pub const PERTURB: u64 = 5;
    pub const SERVER: u64 = 6;
    pub const SWEEP: u64 = 7;
}

/// Whether a client clears the memory/communication threshold for standard
/// backprop-and-full-weight-exchange updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceClass {
    High,
    Low,
}

/// Training phase of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Zo,
}

/// A client's shard, resource class, local model copy, and private stream.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub resource_class: ResourceClass,
    pub shard: Batch,
    pub model: ParamVector,
    pub stream: SeedStream,
}

impl ClientState {
    pub fn num_samples(&self) -> usize {
        self.shard.len()
    }
}

/// Server-side schedule for one round.
#[derive(Debug, Clone)]
pub struct RoundPlan {
    pub round_index: usize,
    pub phase: Phase,
    /// Sampled client ids, ascending.
    pub participants: Vec<usize>,
    /// S: perturbation seeds per client per gradient step (zeroth-order
    /// rounds only).
    pub seeds_per_client: usize,
}

/// Server optimizer flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerOptKind {
    Sgd,
    Adam,
}

/// Server optimizer state applied to pseudo-gradients.
#[derive(Debug, Clone)]
pub struct ServerOptState {
    pub kind: ServerOptKind,
    pub eta_s: f64,
    pub beta1: f64,
    pub beta2: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl ServerOptState {
    pub fn new(kind: ServerOptKind, eta_s: f64, beta1: f64, beta2: f64, d: usize) -> Self {
        Self {
            kind,
            eta_s,
            beta1,
            beta2,
            first_moment: vec![0.0; d],
            second_moment: vec![0.0; d],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn advance(&mut self) -> u64 {
        self.step_count += 1;
        self.step_count
    }

    pub(crate) fn moments_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>) {
        (&mut self.first_moment, &mut self.second_moment)
    }
}

/// What the second phase does with high-resource clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase2Mode {
    /// Every client switches to zeroth-order updates (the default).
    LoOnly,
    /// High-resource clients keep making first-order updates while
    /// low-resource clients run the seed-exchange protocol; the results mix
    /// via sample-weighted aggregation.
    HiPlusLo,
}

/// What actually travels during zeroth-order rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Only seeds and scalar loss differences are exchanged; every party
    /// regenerates the estimate vectors locally.
    SeedExchange,
    /// Reference mode: full estimate vectors are shipped. Must produce
    /// bit-identical global weights to seed exchange.
    ShipEstimates,
}

/// Everything a run needs besides the dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    /// Fraction of clients assigned to the high-resource class.
    pub hi_fraction: f64,
    /// N: rounds 0..pivot_round run the warm-up phase.
    pub pivot_round: usize,
    /// N + M.
    pub total_rounds: usize,
    /// S.
    pub seeds_per_client: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub eta_c_hi: f64,
    pub eta_s: f64,
    pub eta_c_zo: f64,
    pub eta_s_zo: f64,
    /// E: local epochs per warm-up round.
    pub local_epochs: usize,
    pub warmup_batch_size: usize,
    /// Zeroth-order gradient steps per client per round; 1 uses the entire
    /// shard as one batch.
    pub zo_grad_steps: usize,
    pub phase2_mode: Phase2Mode,
    pub server_opt: ServerOptKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub aggregate_mode: AggregateMode,
    pub perturb_kind: PerturbKind,
    pub transport: Transport,
    /// Fraction of the high-resource pool sampled per warm-up round.
    pub warmup_participation: f64,
    /// Fraction of the zeroth-order pool sampled per round.
    pub zo_participation: f64,
    pub master_seed: u64,
    /// Hidden layer widths; input/output dims come from the dataset.
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be >= 1".into()));
        }
        if !self.dirichlet_alpha.is_finite() || self.dirichlet_alpha <= 0.0 {
            return Err(Error::Config("dirichlet_alpha must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.hi_fraction) {
            return Err(Error::Config("hi_fraction must lie in [0, 1]".into()));
        }
        if self.pivot_round > self.total_rounds {
            return Err(Error::Config(format!(
                "pivot_round {} exceeds total_rounds {}",
                self.pivot_round, self.total_rounds
            )));
        }
        if self.seeds_per_client == 0 {
            return Err(Error::Config("seeds_per_client must be >= 1".into()));
        }
        if self.zo_grad_steps == 0 {
            return Err(Error::Config("zo_grad_steps must be >= 1".into()));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        let tau_ok = self.tau.is_finite() && self.tau > 0.0 && self.tau <= 1.0;
        if self.perturb_kind == PerturbKind::Rademacher && !tau_ok {
            return Err(Error::Config("tau must lie in (0, 1]".into()));
        }
        for (name, v) in [
            ("eta_c_hi", self.eta_c_hi),
            ("eta_s", self.eta_s),
            ("eta_c_zo", self.eta_c_zo),
            ("eta_s_zo", self.eta_s_zo),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if self.warmup_batch_size == 0 {
            return Err(Error::Config("warmup_batch_size must be >= 1".into()));
        }
        for (name, v) in [
            ("warmup_participation", self.warmup_participation),
            ("zo_participation", self.zo_participation),
        ] {
            if !v.is_finite() || v <= 0.0 || v > 1.0 {
                return Err(Error::Config(format!("{name} must lie in (0, 1]")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !v.is_finite() || v <= 0.0 || v >= 1.0 {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be >= 1".into()));
        }
        let hi_count = self.high_client_count();
        if self.pivot_round > 0 && hi_count == 0 {
            return Err(Error::Config(
                "warm-up rounds configured but hi_fraction rounds to zero high-resource clients"
                    .into(),
            ));
        }
        if self.phase2_mode == Phase2Mode::HiPlusLo
            && self.pivot_round < self.total_rounds
            && hi_count == self.num_clients
        {
            return Err(Error::Config(
                "hi_plus_lo phase two needs at least one low-resource client".into(),
            ));
        }
        Ok(())
    }

    /// Number of clients marked high-resource: round(hi_fraction * K).
    pub fn high_client_count(&self) -> usize {
        ((self.hi_fraction * self.num_clients as f64).round() as usize).min(self.num_clients)
    }

    pub fn perturb_spec(&self) -> crate::zopt::PerturbSpec {
        crate::zopt::PerturbSpec {
            kind: self.perturb_kind,
            tau: self.tau,
            epsilon: self.epsilon,
        }
    }

    pub fn mlp_spec(&self, input_dim: usize, num_classes: usize) -> Result<MlpSpec> {
        let mut widths = Vec::with_capacity(self.hidden_layers.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(&self.hidden_layers);
        widths.push(num_classes);
        MlpSpec::new(widths, self.activation)
    }
}

/// Multi-gradient-step presets: larger local step counts only converge with
/// drastically smaller perturbation scales, so step counts ship paired with
/// their tau.
pub const GRAD_STEP_TAU_PRESET: [(usize, f64); 4] =
    [(1, 0.75), (2, 0.25), (4, 0.10), (6, 0.01)];

/// Tau preset for a step count: exact match where listed, otherwise the
/// nearest smaller entry's tau.
pub fn tau_for_grad_steps(steps: usize) -> f64 {
    let mut tau = GRAD_STEP_TAU_PRESET[0].1;
    for &(preset_steps, preset_tau) in &GRAD_STEP_TAU_PRESET {
        if preset_steps <= steps {
            tau = preset_tau;
        }
    }
    tau
}

/// Loss surface a client optimizes. The production objective wraps the MLP;
/// tests substitute analytic surfaces.
pub trait ClientLoss {
    fn dim(&self) -> usize;
    fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64>;
    fn grad(&self, w: &ParamVector, batch: &Batch) -> Result<ParamVector>;
}

/// Cross-entropy MLP objective.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    pub spec: MlpSpec,
}

impl ClientLoss for MlpObjective {
    fn dim(&self) -> usize {
        self.spec.parameter_count()
    }

    fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64> {
        nn::loss_only(&self.spec, w, batch)
    }

    fn grad(&self, w: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        nn::backward(&self.spec, w, batch)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::nn::Matrix;

    /// 0.5 * ||w||^2, independent of the batch.
    pub struct HalfSquaredNorm {
        pub dim: usize,
    }

    impl ClientLoss for HalfSquaredNorm {
        fn dim(&self) -> usize {
            self.dim
        }

        fn loss(&self, w: &ParamVector, _batch: &Batch) -> Result<f64> {
            Ok(0.5 * w.as_slice().iter().map(|v| v * v).sum::<f64>())
        }

        fn grad(&self, w: &ParamVector, _batch: &Batch) -> Result<ParamVector> {
            Ok(w.clone())
        }
    }

    /// One-sample placeholder batch for objectives that ignore data.
    pub fn dummy_batch() -> Batch {
        Batch::new(Matrix::from_rows(&[vec![0.0]]).unwrap(), vec![0]).unwrap()
    }

    pub fn dummy_client(id: usize, d: usize) -> ClientState {
        ClientState {
            id,
            resource_class: ResourceClass::Low,
            shard: dummy_batch(),
            model: ParamVector::from_vec((0..d).map(|i| 0.3 + 0.1 * i as f64).collect()),
            stream: SeedStream::new(1000 + id as u64),
        }
    }
}
