//! Non-IID data partitioning and resource-class assignment.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::SeedStream;

use super::ResourceClass;

/// Dirichlet label-skew partition over sample indices. Per class, a
/// proportion vector drawn from Dir(alpha) allocates that class's samples
/// across clients. Shard sizes are capped at ceil(n/K) during allocation so
/// the partition stays near-equal in size while the label mix skews, and
/// surplus samples are re-dealt from the largest shards until every client
/// holds at least one sample.
pub fn dirichlet_partition_indices(
    labels: &[u32],
    num_classes: usize,
    k: usize,
    alpha: f64,
    stream: &mut SeedStream,
) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k == 0 {
        return Err(Error::Config("cannot partition across zero clients".into()));
    }
    if n == 0 {
        return Err(Error::Config("cannot partition an empty dataset".into()));
    }
    if k > n {
        return Err(Error::Config(format!(
            "cannot give {k} clients at least one of {n} samples"
        )));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Config("dirichlet alpha must be > 0".into()));
    }
    if k == 1 {
        return Ok(vec![(0..n).collect()]);
    }

    let cap = n.div_ceil(k);
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];

    for class in 0..num_classes {
        let class_indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l as usize == class)
            .map(|(i, _)| i)
            .collect();
        if class_indices.is_empty() {
            continue;
        }
        let proportions = stream.next_dirichlet(alpha, k);
        let targets = largest_remainder_round(&proportions, class_indices.len());

        let mut cursor = 0usize;
        for (client, &target) in targets.iter().enumerate() {
            let room = cap - shards[client].len();
            let take = target.min(room);
            shards[client].extend_from_slice(&class_indices[cursor..cursor + take]);
            cursor += take;
        }
        // Capacity-capped surplus goes to clients that still have room,
        // ascending id.
        let mut client = 0usize;
        while cursor < class_indices.len() {
            if shards[client].len() < cap {
                shards[client].push(class_indices[cursor]);
                cursor += 1;
            } else {
                client += 1;
                debug_assert!(client < k, "total capacity k*cap >= n");
            }
        }
    }

    // Dirichlet draws occasionally starve a client; move single samples from
    // the largest shards until every shard is non-empty.
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let donor = shards
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .expect("at least one shard");
        debug_assert!(shards[donor].len() >= 2, "n >= k guarantees a donor");
        let moved = shards[donor].pop().expect("donor non-empty");
        shards[empty].push(moved);
    }

    Ok(shards)
}

/// Materialized variant: returns one `Batch` per client.
pub fn dirichlet_partition(
    dataset: &Dataset,
    k: usize,
    alpha: f64,
    stream: &mut SeedStream,
) -> Result<Vec<Batch>> {
    let shards =
        dirichlet_partition_indices(&dataset.labels, dataset.num_classes, k, alpha, stream)?;
    let batch = dataset.to_batch()?;
    shards.iter().map(|s| Ok(batch.select(s))).collect()
}

/// Marks exactly round(hi_fraction * K) clients as high-resource, chosen
/// uniformly without replacement.
pub fn assign_resources(
    k: usize,
    hi_fraction: f64,
    stream: &mut SeedStream,
) -> Result<Vec<ResourceClass>> {
    if !(0.0..=1.0).contains(&hi_fraction) {
        return Err(Error::Config("hi_fraction must lie in [0, 1]".into()));
    }
    let m = ((hi_fraction * k as f64).round() as usize).min(k);
    let mut classes = vec![ResourceClass::Low; k];
    for idx in stream.sample_indices(k, m) {
        classes[idx] = ResourceClass::High;
    }
    Ok(classes)
}

/// Rounds fractional allocations to integers summing to `total`, assigning
/// leftovers by largest fractional part (ties to the lower index).
fn largest_remainder_round(proportions: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &idx in order.iter().take(total.saturating_sub(assigned)) {
        counts[idx] += 1;
    }
    counts
}
