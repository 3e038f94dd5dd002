//! On-disk run configuration: a flat key/value TOML file covering the
//! experiment, the dataset, and nothing else. Every default ships in the
//! reference config so no setting lives only in code.

use std::path::{Path, PathBuf};

use crate::data::{generate_synthetic, load_dataset, Dataset, SplitDataset, SyntheticDatasetSpec};
use crate::error::{Error, Result};
use crate::fed::{ExperimentConfig, Phase2Mode, ServerOptKind, Transport};
use crate::nn::Activation;
use crate::zopt::{AggregateMode, PerturbKind};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // Federation
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub hi_fraction: f64,
    pub pivot_round: usize,
    pub total_rounds: usize,

    // Zeroth-order updates
    pub seeds_per_client: usize,
    pub tau: f64,
    pub epsilon: f64,
    #[serde(default = "default_one")]
    pub zo_grad_steps: usize,
    #[serde(default = "default_aggregate_mode")]
    pub aggregate_mode: AggregateMode,
    #[serde(default = "default_perturb_kind")]
    pub perturb_kind: PerturbKind,
    #[serde(default = "default_transport")]
    pub transport: Transport,

    // Learning rates (dimensionless multipliers)
    pub eta_c_hi: f64,
    pub eta_s: f64,
    pub eta_c_zo: f64,
    pub eta_s_zo: f64,

    // Warm-up
    pub local_epochs: usize,
    pub warmup_batch_size: usize,
    #[serde(default = "default_phase2_mode")]
    pub phase2_mode: Phase2Mode,
    #[serde(default = "default_server_opt")]
    pub server_opt: ServerOptKind,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_participation")]
    pub warmup_participation: f64,
    #[serde(default = "default_participation")]
    pub zo_participation: f64,

    // Model
    pub hidden_layers: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,

    // Reproducibility
    pub master_seed: u64,

    // Dataset: either synthetic generation parameters or a binary file pair.
    pub dataset_classes: usize,
    pub dataset_samples_per_class: usize,
    pub dataset_input_dim: usize,
    pub dataset_class_separation: f64,
    pub dataset_noise_std: f64,
    pub dataset_seed: u64,
    /// Optional binary dataset files; when set they replace generation.
    #[serde(default)]
    pub dataset_train_file: Option<PathBuf>,
    #[serde(default)]
    pub dataset_eval_file: Option<PathBuf>,
}

fn default_one() -> usize {
    1
}
fn default_aggregate_mode() -> AggregateMode {
    AggregateMode::Sum
}
fn default_perturb_kind() -> PerturbKind {
    PerturbKind::Rademacher
}
fn default_transport() -> Transport {
    Transport::SeedExchange
}
fn default_phase2_mode() -> Phase2Mode {
    Phase2Mode::LoOnly
}
fn default_server_opt() -> ServerOptKind {
    ServerOptKind::Sgd
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_participation() -> f64 {
    1.0
}
fn default_activation() -> Activation {
    Activation::Relu
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.experiment().validate()?;
        cfg.dataset_spec().validate()?;
        Ok(cfg)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            num_clients: self.num_clients,
            dirichlet_alpha: self.dirichlet_alpha,
            hi_fraction: self.hi_fraction,
            pivot_round: self.pivot_round,
            total_rounds: self.total_rounds,
            seeds_per_client: self.seeds_per_client,
            tau: self.tau,
            epsilon: self.epsilon,
            eta_c_hi: self.eta_c_hi,
            eta_s: self.eta_s,
            eta_c_zo: self.eta_c_zo,
            eta_s_zo: self.eta_s_zo,
            local_epochs: self.local_epochs,
            warmup_batch_size: self.warmup_batch_size,
            zo_grad_steps: self.zo_grad_steps,
            phase2_mode: self.phase2_mode,
            server_opt: self.server_opt,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            aggregate_mode: self.aggregate_mode,
            perturb_kind: self.perturb_kind,
            transport: self.transport,
            warmup_participation: self.warmup_participation,
            zo_participation: self.zo_participation,
            master_seed: self.master_seed,
            hidden_layers: self.hidden_layers.clone(),
            activation: self.activation,
        }
    }

    pub fn dataset_spec(&self) -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            num_classes: self.dataset_classes,
            samples_per_class: self.dataset_samples_per_class,
            input_dim: self.dataset_input_dim,
            class_separation: self.dataset_class_separation,
            noise_std: self.dataset_noise_std,
            seed: self.dataset_seed,
        }
    }

    /// Loads the dataset files when configured, otherwise generates the
    /// synthetic split.
    pub fn dataset(&self) -> Result<SplitDataset> {
        match (&self.dataset_train_file, &self.dataset_eval_file) {
            (Some(train), Some(eval)) => {
                let train: Dataset = load_dataset(train)?;
                let eval: Dataset = load_dataset(eval)?;
                if train.num_classes != eval.num_classes
                    || train.input_dim() != eval.input_dim()
                {
                    return Err(Error::Config(
                        "train and eval dataset files disagree on shape".into(),
                    ));
                }
                Ok(SplitDataset { train, eval })
            }
            (None, None) => generate_synthetic(&self.dataset_spec()),
            _ => Err(Error::Config(
                "dataset_train_file and dataset_eval_file must be set together".into(),
            )),
        }
    }
}
