//! The two-phase driver: warm-up rounds on high-resource clients, a one-time
//! synchronization at the pivot, then seed-exchange zeroth-order rounds.

use std::time::Instant;

use crate::cost::{comm_full, comm_zo, mem_full, mem_zo, Accounting, CostReport, Direction, Method};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::metrics::{mean_std, MetricsRecord};
use crate::nn::{self, descriptor_of, Batch, ParamVector};
use crate::rng::{derive_seed, SeedStream};

use super::{
    assign_resources, dirichlet_partition, fedavg_aggregate, local_train, purpose, server_step,
    zo_round, ClientLoss, ClientState, ExperimentConfig, MlpObjective, Phase, Phase2Mode,
    ResourceClass, RoundPlan, ServerOptState, ZoRoundParams,
};

/// Cost summary for a whole run, 32-bit accounting.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunCostReport {
    pub accounting: Accounting,
    pub model_param_count: u64,
    /// Representative per-client, per-round costs for each phase.
    pub warmup: Option<CostReport>,
    pub zo: Option<CostReport>,
    /// One-time full-model broadcast when low-resource clients join at the
    /// pivot (not part of the per-round protocol traffic).
    pub pivot_sync_downlink_bytes_per_client: u64,
    /// Whole-run totals summed over clients and rounds (protocol traffic
    /// plus the pivot broadcast).
    pub total_uplink_bytes: u64,
    pub total_downlink_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_weights: ParamVector,
    pub metrics: Vec<MetricsRecord>,
    pub cost_report: RunCostReport,
}

impl RunOutput {
    pub fn final_accuracy(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.eval_accuracy)
    }
}

/// Runs the full two-phase schedule on a train/eval split and returns the
/// final weights plus one metrics record per round. A pivot equal to
/// `total_rounds` degenerates into the high-resource-only baseline; a pivot
/// of zero runs zeroth-order updates from the random initialization.
pub fn run_zowarmup(config: &ExperimentConfig, data: &SplitDataset) -> Result<RunOutput> {
    config.validate()?;
    if data.train.is_empty() || data.eval.is_empty() {
        return Err(Error::Config("train and eval splits must be non-empty".into()));
    }
    if data.train.input_dim() != data.eval.input_dim()
        || data.train.num_classes != data.eval.num_classes
    {
        return Err(Error::Config("train/eval splits disagree on shape".into()));
    }

    let spec = config.mlp_spec(data.train.input_dim(), data.train.num_classes)?;
    let objective = MlpObjective { spec: spec.clone() };
    let d = spec.parameter_count();
    let eval_batch = data.eval.to_batch()?;

    // Every random decision derives from the master seed.
    let master = config.master_seed;
    let mut partition_stream = SeedStream::new(derive_seed(master, &[purpose::PARTITION]));
    let mut resource_stream = SeedStream::new(derive_seed(master, &[purpose::RESOURCES]));
    let mut init_stream = SeedStream::new(derive_seed(master, &[purpose::INIT]));
    let mut server_stream = SeedStream::new(derive_seed(master, &[purpose::SERVER]));

    let shards = dirichlet_partition(
        &data.train,
        config.num_clients,
        config.dirichlet_alpha,
        &mut partition_stream,
    )?;
    let classes = assign_resources(config.num_clients, config.hi_fraction, &mut resource_stream)?;

    let mut server_model = nn::init_params(&spec, &mut init_stream);
    let mut clients: Vec<ClientState> = shards
        .into_iter()
        .zip(classes)
        .enumerate()
        .map(|(id, (shard, resource_class))| ClientState {
            id,
            resource_class,
            shard,
            model: server_model.clone(),
            stream: SeedStream::new(derive_seed(master, &[purpose::CLIENT, id as u64])),
        })
        .collect();

    let hi_ids: Vec<usize> = clients
        .iter()
        .filter(|c| c.resource_class == ResourceClass::High)
        .map(|c| c.id)
        .collect();
    let lo_ids: Vec<usize> = clients
        .iter()
        .filter(|c| c.resource_class == ResourceClass::Low)
        .map(|c| c.id)
        .collect();

    let mut warm_opt = ServerOptState::new(
        config.server_opt,
        config.eta_s,
        config.adam_beta1,
        config.adam_beta2,
        d,
    );
    let mut zo_opt = ServerOptState::new(
        config.server_opt,
        config.eta_s_zo,
        config.adam_beta1,
        config.adam_beta2,
        d,
    );
    let perturb_spec = config.perturb_spec();
    let zo_params = ZoRoundParams {
        eta_c_zo: config.eta_c_zo,
        eta_s_zo: config.eta_s_zo,
        grad_steps: config.zo_grad_steps,
        aggregate_mode: config.aggregate_mode,
        transport: config.transport,
        master_seed: master,
    };

    let mut metrics: Vec<MetricsRecord> = Vec::with_capacity(config.total_rounds);
    let mut total_up = 0u64;
    let mut total_down = 0u64;
    let mut pivot_sync_down = 0u64;
    let mut warmup_cost: Option<CostReport> = None;
    let mut zo_cost: Option<CostReport> = None;

    for t in 0..config.total_rounds {
        let started = Instant::now();
        let (phase, uplink, downlink) = if t < config.pivot_round {
            let participants =
                sample_participants(&hi_ids, config.warmup_participation, &mut server_stream);
            run_warmup_round(
                &objective,
                &mut clients,
                &mut server_model,
                &mut warm_opt,
                &participants,
                config,
            )
            .map_err(|e| at_round(t, e))?;

            let up = comm_full(d as u64);
            let down = comm_full(d as u64);
            total_up += up * participants.len() as u64;
            total_down += down * participants.len() as u64;
            if warmup_cost.is_none() {
                warmup_cost = Some(CostReport {
                    method: Method::FirstOrder,
                    round_index: t,
                    uplink_bytes_per_client: up,
                    downlink_bytes_per_client: down,
                    peak_memory_bytes_per_client: mem_full(
                        &descriptor_of(&spec),
                        config.warmup_batch_size as u64,
                    ),
                });
            }
            (Phase::Warmup, up, down)
        } else {
            if t == config.pivot_round {
                // Low-resource clients receive the warmed-up model once.
                for client in clients.iter_mut() {
                    client.model.copy_from(&server_model);
                }
                pivot_sync_down = comm_full(d as u64);
                total_down += pivot_sync_down * clients.len() as u64;
            }

            let pool: Vec<usize> = match config.phase2_mode {
                Phase2Mode::LoOnly => (0..clients.len()).collect(),
                Phase2Mode::HiPlusLo => lo_ids.clone(),
            };
            let participants =
                sample_participants(&pool, config.zo_participation, &mut server_stream);
            let plan = RoundPlan {
                round_index: t,
                phase: Phase::Zo,
                participants,
                seeds_per_client: config.seeds_per_client,
            };
            let w_pre = server_model.clone();
            let outcome = zo_round(
                &objective,
                &mut clients,
                &mut server_model,
                &mut zo_opt,
                &plan,
                &perturb_spec,
                &zo_params,
            )
            .map_err(|e| at_round(t, e))?;

            if config.phase2_mode == Phase2Mode::HiPlusLo {
                mix_high_resource_updates(
                    &objective,
                    &mut clients,
                    &mut server_model,
                    &w_pre,
                    &hi_ids,
                    config,
                )
                .map_err(|e| at_round(t, e))?;
                total_up += comm_full(d as u64) * hi_ids.len() as u64;
                total_down += comm_full(d as u64) * hi_ids.len() as u64;
            }

            let up = outcome.uplink_bytes_per_sampled_client;
            let down = outcome.downlink_bytes_per_client;
            total_up += up * plan.participants.len() as u64;
            total_down += down * clients.len() as u64;
            if zo_cost.is_none() {
                // Whole-shard batches: the largest shard bounds the forward
                // footprint.
                let max_shard = clients.iter().map(ClientState::num_samples).max().unwrap_or(1);
                zo_cost = Some(CostReport {
                    method: Method::ZeroOrder,
                    round_index: t,
                    uplink_bytes_per_client: comm_zo(
                        (config.seeds_per_client * config.zo_grad_steps) as u64,
                        plan.participants.len() as u64,
                        Direction::Up,
                    ),
                    downlink_bytes_per_client: comm_zo(
                        (config.seeds_per_client * config.zo_grad_steps) as u64,
                        plan.participants.len() as u64,
                        Direction::Down,
                    ),
                    peak_memory_bytes_per_client: mem_zo(
                        &descriptor_of(&spec),
                        max_shard as u64,
                    ),
                });
            }
            (Phase::Zo, up, down)
        };

        let (eval_loss, eval_accuracy) =
            nn::evaluate(&spec, &server_model, &eval_batch).map_err(|e| at_round(t, e))?;
        metrics.push(MetricsRecord {
            round_index: t,
            phase,
            eval_accuracy,
            eval_loss,
            uplink_bytes: uplink,
            downlink_bytes: downlink,
            wall_time_ms: started.elapsed().as_secs_f64() * 1000.0,
        });
    }

    Ok(RunOutput {
        final_weights: server_model,
        metrics,
        cost_report: RunCostReport {
            accounting: Accounting::Bits32,
            model_param_count: d as u64,
            warmup: warmup_cost,
            zo: zo_cost,
            pivot_sync_downlink_bytes_per_client: pivot_sync_down,
            total_uplink_bytes: total_up,
            total_downlink_bytes: total_down,
        },
    })
}

fn run_warmup_round<L: ClientLoss>(
    objective: &L,
    clients: &mut [ClientState],
    server_model: &mut ParamVector,
    warm_opt: &mut ServerOptState,
    participants: &[usize],
    config: &ExperimentConfig,
) -> Result<()> {
    if participants.is_empty() {
        return Err(Error::Protocol("warm-up round with no participants".into()));
    }
    let mut updates: Vec<(ParamVector, usize)> = Vec::with_capacity(participants.len());
    for &id in participants {
        let n = clients[id].num_samples();
        let trained = local_train(
            objective,
            &mut clients[id],
            server_model,
            config.eta_c_hi,
            config.local_epochs,
            config.warmup_batch_size,
        )?;
        updates.push((trained, n));
    }
    let aggregated = fedavg_aggregate(&updates)?;
    let mut pseudo = server_model.clone();
    pseudo.add_scaled(aggregated.as_slice(), -1.0);
    *server_model = server_step(warm_opt, server_model, &pseudo);
    server_model.ensure_finite("warm-up server model")?;
    // High-resource clients stay synchronized with the server between
    // warm-up rounds; low-resource clients join at the pivot.
    for client in clients.iter_mut() {
        if client.resource_class == ResourceClass::High {
            client.model.copy_from(server_model);
        }
    }
    Ok(())
}

/// Phase-two variant where high-resource clients keep training with
/// backprop: their locally trained models and the zeroth-order result (one
/// entry per low-resource client) mix via sample-weighted aggregation.
fn mix_high_resource_updates<L: ClientLoss>(
    objective: &L,
    clients: &mut [ClientState],
    server_model: &mut ParamVector,
    w_pre: &ParamVector,
    hi_ids: &[usize],
    config: &ExperimentConfig,
) -> Result<()> {
    if hi_ids.is_empty() {
        return Ok(());
    }
    let w_zo = server_model.clone();
    let mut updates: Vec<(ParamVector, usize)> = Vec::with_capacity(clients.len());
    for (id, client) in clients.iter_mut().enumerate() {
        let n = client.num_samples();
        if hi_ids.contains(&id) {
            let trained = local_train(
                objective,
                client,
                w_pre,
                config.eta_c_hi,
                config.local_epochs,
                config.warmup_batch_size,
            )?;
            updates.push((trained, n));
        } else {
            updates.push((w_zo.clone(), n));
        }
    }
    let mixed = fedavg_aggregate(&updates)?;
    server_model.copy_from(&mixed);
    for client in clients.iter_mut() {
        client.model.copy_from(server_model);
    }
    Ok(())
}

fn sample_participants(pool: &[usize], fraction: f64, stream: &mut SeedStream) -> Vec<usize> {
    if pool.is_empty() {
        return Vec::new();
    }
    let m = ((fraction * pool.len() as f64).round() as usize)
        .max(1)
        .min(pool.len());
    if m == pool.len() {
        return pool.to_vec();
    }
    stream
        .sample_indices(pool.len(), m)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

fn at_round(round: usize, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("round {round}: {msg}")),
        other => other,
    }
}

/// One grid entry of a pivot sweep.
#[derive(Debug, Clone)]
pub struct PivotSweepRow {
    pub pivot: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_seed: Vec<f64>,
}

/// Runs the schedule once per (pivot, seed) pair at fixed total rounds and
/// reports mean and standard deviation of final accuracy per pivot.
pub fn pivot_sweep(
    config: &ExperimentConfig,
    data: &SplitDataset,
    pivots: &[usize],
    seeds: &[u64],
) -> Result<Vec<PivotSweepRow>> {
    let mut rows = Vec::with_capacity(pivots.len());
    for &pivot in pivots {
        let mut finals = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = config.clone();
            cfg.pivot_round = pivot;
            cfg.master_seed = seed;
            let output = run_zowarmup(&cfg, data)?;
            finals.push(output.final_accuracy());
        }
        let (mean, std) = mean_std(&finals);
        rows.push(PivotSweepRow {
            pivot,
            mean_accuracy: mean,
            std_accuracy: std,
            per_seed: finals,
        });
    }
    Ok(rows)
}

/// Derives the per-seed-index master seed used by sweeps, shared across grid
/// values so comparisons are paired.
pub fn sweep_seed(master: u64, seed_index: usize) -> u64 {
    derive_seed(master, &[purpose::SWEEP, seed_index as u64])
}

/// Held-out evaluation convenience used by tests and the CLI.
pub fn evaluate_weights(
    config: &ExperimentConfig,
    data: &SplitDataset,
    w: &ParamVector,
) -> Result<(f64, f64)> {
    let spec = config.mlp_spec(data.train.input_dim(), data.train.num_classes)?;
    let batch: Batch = data.eval.to_batch()?;
    nn::evaluate(&spec, w, &batch)
}
