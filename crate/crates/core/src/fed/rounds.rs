//! Round-level building blocks: local first-order training, sample-weighted
//! aggregation, the server optimizer step, and the zeroth-order
//! seed-exchange round.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::nn::{Batch, ParamVector};
use crate::rng::derive_seed;
use crate::zopt::{
    aggregate_estimates, delta_loss, sample_direction, spsa_estimate, sum_shipped_estimates,
    zo_sgd_step, AggregateMode, DeltaLossRecord, GradEstimate, PerturbSpec,
};

use super::{purpose, ClientLoss, ClientState, Phase, RoundPlan, ServerOptKind, ServerOptState, Transport};

/// Copies the global weights and runs E epochs of mini-batch SGD on the
/// client shard. Traversal order is drawn from the client's own stream, so
/// replays are exact.
pub fn local_train<L: ClientLoss>(
    objective: &L,
    client: &mut ClientState,
    w_global: &ParamVector,
    eta_c: f64,
    epochs: usize,
    batch_size: usize,
) -> Result<ParamVector> {
    let mut w = w_global.clone();
    let n = client.shard.len();
    let bs = batch_size.max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        client.stream.shuffle(&mut order);
        for chunk in order.chunks(bs) {
            let minibatch = client.shard.select(chunk);
            let grad = objective.grad(&w, &minibatch)?;
            w.add_scaled(grad.as_slice(), -eta_c);
        }
    }
    w.ensure_finite("locally trained weights")?;
    Ok(w)
}

/// Sample-weighted average with weights n_k / sum(n_k), accumulated in input
/// order (callers pass ascending client id). Computed as the first update
/// plus the weighted deviations from it; the weights form an affine
/// combination, so aggregating identical vectors returns them bit-exactly.
pub fn fedavg_aggregate(updates: &[(ParamVector, usize)]) -> Result<ParamVector> {
    let Some((anchor, _)) = updates.first() else {
        return Err(Error::Protocol("cannot aggregate zero updates".into()));
    };
    let d = anchor.len();
    if updates.iter().any(|(w, _)| w.len() != d) {
        return Err(Error::Config("aggregation inputs differ in length".into()));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Protocol("aggregation weights sum to zero".into()));
    }
    let mut acc = anchor.as_slice().to_vec();
    for (w, n) in &updates[1..] {
        let weight = *n as f64 / total as f64;
        for ((a, &v), &base) in acc.iter_mut().zip(w.as_slice()).zip(anchor.as_slice()) {
            *a += weight * (v - base);
        }
    }
    Ok(ParamVector::from_vec(acc))
}

/// One server-optimizer step on a pseudo-gradient. SGD: w - eta_s * g.
/// Adam: bias-corrected moments with a 1e-8 denominator offset.
pub fn server_step(
    opt: &mut ServerOptState,
    w: &ParamVector,
    pseudo_gradient: &ParamVector,
) -> ParamVector {
    debug_assert_eq!(w.len(), pseudo_gradient.len());
    let mut out = w.clone();
    let t = opt.advance();
    match opt.kind {
        ServerOptKind::Sgd => {
            out.add_scaled(pseudo_gradient.as_slice(), -opt.eta_s);
        }
        ServerOptKind::Adam => {
            const DENOM_OFFSET: f64 = 1e-8;
            let (beta1, beta2, eta) = (opt.beta1, opt.beta2, opt.eta_s);
            let bias1 = 1.0 - beta1.powi(t as i32);
            let bias2 = 1.0 - beta2.powi(t as i32);
            let (m, v) = opt.moments_mut();
            for i in 0..w.len() {
                let g = pseudo_gradient.as_slice()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                out.as_mut_slice()[i] -= eta * m_hat / (v_hat.sqrt() + DENOM_OFFSET);
            }
        }
    }
    out
}

/// Per-client output of a zeroth-order measurement pass.
#[derive(Debug, Clone)]
pub struct ZoClientResult {
    /// One record per (gradient step, seed), in seed order.
    pub records: Vec<DeltaLossRecord>,
    /// Exactly two per record.
    pub loss_evaluations: usize,
    /// Materialized estimates for the full-vector reference transport.
    pub shipped: Option<Vec<GradEstimate>>,
}

/// Runs the client side of a zeroth-order round: for each seed, measures the
/// loss difference under the regenerated perturbation. The model is restored
/// after every evaluation pair. With `grad_steps > 1` (ablation mode) the
/// shard is re-batched into that many chunks, each step measuring on its own
/// chunk with its own group of `seeds_per_step` seeds, and a local update is
/// applied between chunks; the drifted model is discarded when the global
/// update arrives.
#[allow(clippy::too_many_arguments)]
pub fn zo_opt_client<L: ClientLoss>(
    objective: &L,
    client: &mut ClientState,
    seeds: &[u64],
    spec: &PerturbSpec,
    grad_steps: usize,
    eta_c_zo: f64,
    aggregate_mode: AggregateMode,
    ship_estimates: bool,
) -> Result<ZoClientResult> {
    let n = client.shard.len();
    let steps = grad_steps.max(1).min(n);
    if seeds.is_empty() || !seeds.len().is_multiple_of(steps) {
        return Err(Error::Protocol(format!(
            "seed list length {} does not divide into {steps} gradient steps",
            seeds.len()
        )));
    }
    let seeds_per_step = seeds.len() / steps;
    let ClientState { model, shard, stream, .. } = client;
    let d = model.len();

    // One gradient step keeps the natural shard order; multi-step re-batches
    // a stream-shuffled permutation into contiguous chunks whose sizes
    // differ by at most one, so every chunk is non-empty.
    let mut order: Vec<usize> = (0..n).collect();
    if steps > 1 {
        stream.shuffle(&mut order);
    }

    let mut records = Vec::with_capacity(seeds.len());
    let mut shipped = ship_estimates.then(Vec::new);
    let mut loss_evaluations = 0usize;
    let mut chunk_start = 0usize;

    for step in 0..steps {
        let chunk_len = n / steps + usize::from(step < n % steps);
        let chunk = &order[chunk_start..chunk_start + chunk_len];
        chunk_start += chunk_len;
        let owned_chunk;
        let batch: &Batch = if steps == 1 {
            shard
        } else {
            owned_chunk = shard.select(chunk);
            &owned_chunk
        };

        let step_seeds = &seeds[step * seeds_per_step..(step + 1) * seeds_per_step];
        let step_start = records.len();
        for &seed in step_seeds {
            let z = sample_direction(seed, d, spec);
            let diff = delta_loss(|w| objective.loss(w, batch), model, &z, spec.epsilon)?;
            loss_evaluations += 2;
            records.push(DeltaLossRecord { seed, delta_loss: diff });
            if let Some(out) = shipped.as_mut() {
                out.push(spsa_estimate(diff, &z, spec.epsilon));
            }
        }

        // Local update between chunks only; the post-round global update
        // resynchronizes every model.
        if step + 1 < steps {
            let g = aggregate_estimates(&records[step_start..], d, spec, aggregate_mode)?;
            *model = zo_sgd_step(model, &g, eta_c_zo);
        }
    }

    Ok(ZoClientResult { records, loss_evaluations, shipped })
}

/// Knobs for one zeroth-order round.
#[derive(Debug, Clone)]
pub struct ZoRoundParams {
    pub eta_c_zo: f64,
    pub eta_s_zo: f64,
    pub grad_steps: usize,
    pub aggregate_mode: AggregateMode,
    pub transport: Transport,
    pub master_seed: u64,
}

/// Byte and evaluation accounting for one zeroth-order round.
#[derive(Debug, Clone, Copy)]
pub struct ZoRoundOutcome {
    pub records_total: usize,
    /// Protocol bytes each sampled client sends (32-bit accounting).
    pub uplink_bytes_per_sampled_client: u64,
    /// Protocol bytes each client receives: the full record list.
    pub downlink_bytes_per_client: u64,
    pub loss_evaluations: usize,
}

/// One full zeroth-order round. The server derives the per-client seeds
/// (collision-checked within the round), sampled clients measure their loss
/// differences, the server concatenates all records in (client id, seed
/// index) order, and every client applies the identical reconstruction and
/// update, leaving all models entry-exact equal.
pub fn zo_round<L: ClientLoss>(
    objective: &L,
    clients: &mut [ClientState],
    server_model: &mut ParamVector,
    zo_server_opt: &mut ServerOptState,
    plan: &RoundPlan,
    spec: &PerturbSpec,
    params: &ZoRoundParams,
) -> Result<ZoRoundOutcome> {
    debug_assert_eq!(plan.phase, Phase::Zo);
    if plan.participants.is_empty() {
        return Err(Error::Protocol("zeroth-order round with no participants".into()));
    }
    let d = server_model.len();
    let w_pre = server_model.clone();

    // Server-side seed derivation, collision-checked within the round.
    let mut seen = HashSet::new();
    let mut schedule: Vec<(usize, Vec<u64>, usize)> = Vec::with_capacity(plan.participants.len());
    for &id in &plan.participants {
        let steps = params.grad_steps.max(1).min(clients[id].num_samples());
        let mut seeds = Vec::with_capacity(plan.seeds_per_client * steps);
        for s in 0..plan.seeds_per_client * steps {
            let seed = derive_seed(
                params.master_seed,
                &[purpose::PERTURB, plan.round_index as u64, id as u64, s as u64],
            );
            if !seen.insert(seed) {
                return Err(Error::Protocol(format!(
                    "derived seed collision in round {} (client {id}, index {s})",
                    plan.round_index
                )));
            }
            seeds.push(seed);
        }
        schedule.push((id, seeds, steps));
    }

    // Measurement pass, (client id, seed index) order.
    let ship = params.transport == Transport::ShipEstimates;
    let mut all_records: Vec<DeltaLossRecord> = Vec::new();
    let mut all_shipped: Vec<GradEstimate> = Vec::new();
    let mut loss_evaluations = 0usize;
    for (id, seeds, steps) in &schedule {
        let client = &mut clients[*id];
        client.model.copy_from(&w_pre);
        let result = zo_opt_client(
            objective,
            client,
            seeds,
            spec,
            *steps,
            params.eta_c_zo,
            params.aggregate_mode,
            ship,
        )?;
        loss_evaluations += result.loss_evaluations;
        all_records.extend(result.records);
        if let Some(vectors) = result.shipped {
            all_shipped.extend(vectors);
        }
    }

    // Global update. Under seed exchange with an SGD server optimizer every
    // client literally regenerates and applies the update; the stateful Adam
    // transform and the full-vector reference path are computed once and
    // broadcast (their inputs are identical at every client, so this is the
    // same arithmetic).
    let effective_eta = params.eta_c_zo * params.eta_s_zo;
    let per_client_recompute =
        params.transport == Transport::SeedExchange && zo_server_opt.kind == ServerOptKind::Sgd;

    let g_server = match params.transport {
        Transport::SeedExchange => {
            aggregate_estimates(&all_records, d, spec, params.aggregate_mode)?
        }
        Transport::ShipEstimates => {
            sum_shipped_estimates(&all_shipped, d, params.aggregate_mode)?
        }
    };
    let w_new = match zo_server_opt.kind {
        ServerOptKind::Sgd => zo_sgd_step(&w_pre, &g_server, effective_eta),
        ServerOptKind::Adam => {
            let mut pseudo = ParamVector::zeros(d);
            pseudo.add_scaled(g_server.as_slice(), params.eta_c_zo);
            server_step(zo_server_opt, &w_pre, &pseudo)
        }
    };
    w_new.ensure_finite("zeroth-order round update")?;

    for client in clients.iter_mut() {
        if per_client_recompute {
            let g = aggregate_estimates(&all_records, d, spec, params.aggregate_mode)?;
            client.model = zo_sgd_step(&w_pre, &g, effective_eta);
        } else {
            client.model.copy_from(&w_new);
        }
    }
    server_model.copy_from(&w_new);

    // 32-bit accounting: one scalar per record up, the whole record list
    // down. The reference transport ships d-vectors instead.
    let records_per_client = all_records.len() as u64 / plan.participants.len() as u64;
    let (uplink, downlink) = match params.transport {
        Transport::SeedExchange => {
            (4 * records_per_client, 4 * all_records.len() as u64)
        }
        Transport::ShipEstimates => (
            4 * records_per_client * d as u64,
            4 * all_records.len() as u64 * d as u64,
        ),
    };

    Ok(ZoRoundOutcome {
        records_total: all_records.len(),
        uplink_bytes_per_sampled_client: uplink,
        downlink_bytes_per_client: downlink,
        loss_evaluations,
    })
}
