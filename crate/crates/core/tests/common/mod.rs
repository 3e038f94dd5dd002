//! Shared fixtures for the integration suites.
#![allow(dead_code)] // each test binary uses a subset

use zowarmup::data::{generate_synthetic, SplitDataset, SyntheticDatasetSpec};
use zowarmup::fed::{
    run_zowarmup, sweep_seed, ExperimentConfig, Phase2Mode, ServerOptKind, Transport,
};
use zowarmup::metrics::mean_std;
use zowarmup::nn::Activation;
use zowarmup::zopt::{AggregateMode, PerturbKind};

/// Desk-scale experiment: 8-class synthetic set, 20 clients, alpha = 0.1,
/// 10/90 resource split, a [32, 64, 8] MLP, pivot 60 of 150 rounds.
pub fn desk_config() -> ExperimentConfig {
    ExperimentConfig {
        num_clients: 20,
        dirichlet_alpha: 0.1,
        hi_fraction: 0.1,
        pivot_round: 60,
        total_rounds: 150,
        seeds_per_client: 3,
        tau: 0.75,
        epsilon: 1e-4,
        eta_c_hi: 0.05,
        eta_s: 1.0,
        eta_c_zo: 2e-3,
        eta_s_zo: 1.0,
        local_epochs: 3,
        warmup_batch_size: 64,
        zo_grad_steps: 1,
        phase2_mode: Phase2Mode::LoOnly,
        server_opt: ServerOptKind::Sgd,
        adam_beta1: 0.9,
        adam_beta2: 0.999,
        aggregate_mode: AggregateMode::Sum,
        perturb_kind: PerturbKind::Rademacher,
        transport: Transport::SeedExchange,
        warmup_participation: 1.0,
        zo_participation: 1.0,
        master_seed: 42,
        hidden_layers: vec![64],
        activation: Activation::Relu,
    }
}

pub fn desk_data() -> SplitDataset {
    generate_synthetic(&SyntheticDatasetSpec {
        num_classes: 8,
        samples_per_class: 150,
        input_dim: 32,
        class_separation: 4.0,
        noise_std: 1.5,
        seed: 7,
    })
    .unwrap()
}

/// Mean final accuracy over `seeds` paired master seeds, plus the per-seed
/// values.
pub fn mean_final_accuracy(
    cfg: &ExperimentConfig,
    data: &SplitDataset,
    seeds: usize,
) -> (f64, Vec<f64>) {
    let finals: Vec<f64> = (0..seeds)
        .map(|i| {
            let mut c = cfg.clone();
            c.master_seed = sweep_seed(cfg.master_seed, i);
            run_zowarmup(&c, data).unwrap().final_accuracy()
        })
        .collect();
    (mean_std(&finals).0, finals)
}

/// Final accuracies over paired seeds (no averaging).
pub fn final_accuracies(
    cfg: &ExperimentConfig,
    data: &SplitDataset,
    seeds: usize,
) -> Vec<f64> {
    (0..seeds)
        .map(|i| {
            let mut c = cfg.clone();
            c.master_seed = sweep_seed(cfg.master_seed, i);
            run_zowarmup(&c, data).unwrap().final_accuracy()
        })
        .collect()
}
