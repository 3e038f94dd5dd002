//! Zeroth-order machinery: seed-keyed perturbation streams, SPSA difference
//! evaluation, gradient reconstruction from (seed, delta-loss) records, and
//! the ZO-SGD step.
//!
//! Everything here is bit-reproducible: a perturbation direction is a pure
//! function of (seed, dimension, distribution), and record aggregation sums
//! in record order, so the server and every client arrive at identical
//! updates from the same record list.

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::rng::SeedStream;

pub use crate::rng::derive_seed;

/// Perturbation distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// Entries +-tau with equal probability.
    Rademacher,
    /// Standard normal entries; tau is ignored.
    Gaussian,
}

/// Distribution kind, scale tau, and SPSA step epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub tau: f64,
    pub epsilon: f64,
}

impl PerturbSpec {
    pub fn rademacher(tau: f64, epsilon: f64) -> Self {
        Self { kind: PerturbKind::Rademacher, tau, epsilon }
    }

    pub fn gaussian(epsilon: f64) -> Self {
        Self { kind: PerturbKind::Gaussian, tau: 1.0, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        let tau_ok = self.tau.is_finite() && self.tau > 0.0 && self.tau <= 1.0;
        if self.kind == PerturbKind::Rademacher && !tau_ok {
            return Err(Error::Config("tau must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// The entire per-seed up-link payload: the seed and the scalar loss
/// difference measured under the perturbation drawn from that seed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeltaLossRecord {
    pub seed: u64,
    pub delta_loss: f64,
}

/// Reconstructed gradient estimate, same shape as the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    values: Vec<f64>,
}

impl GradEstimate {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(d: usize) -> Self {
        Self { values: vec![0.0; d] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Regenerates the perturbation direction for a seed. Rademacher draws one
/// uniform per coordinate and thresholds at 0.5 before scaling by tau;
/// Gaussian draws standard normal entries.
pub fn sample_direction(seed: u64, d: usize, spec: &PerturbSpec) -> Vec<f64> {
    let mut stream = SeedStream::new(seed);
    let mut z = Vec::with_capacity(d);
    match spec.kind {
        PerturbKind::Rademacher => {
            for _ in 0..d {
                let u = stream.next_f64();
                z.push(if u < 0.5 { -spec.tau } else { spec.tau });
            }
        }
        PerturbKind::Gaussian => {
            for _ in 0..d {
                z.push(stream.next_normal());
            }
        }
    }
    z
}

/// Evaluates loss(w + eps z) - loss(w - eps z) with exactly two loss calls.
/// `w` is perturbed in place and restored to its entry-exact original state
/// before returning (copy-restore, so the post-state is bit-identical even
/// under floating-point non-associativity).
pub fn delta_loss<F>(mut evaluate: F, w: &mut ParamVector, z: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    debug_assert_eq!(w.len(), z.len());
    let original = w.clone();

    w.add_scaled(z, epsilon);
    let plus = evaluate(w).map_err(|e| {
        Error::Numeric(format!("loss evaluation at w + eps*z failed: {e}"))
    });
    w.copy_from(&original);
    let plus = plus?;

    w.add_scaled(z, -epsilon);
    let minus = evaluate(w).map_err(|e| {
        Error::Numeric(format!("loss evaluation at w - eps*z failed: {e}"))
    });
    w.copy_from(&original);
    let minus = minus?;

    let delta = plus - minus;
    if !delta.is_finite() {
        return Err(Error::Numeric("non-finite loss difference".into()));
    }
    Ok(delta)
}

/// SPSA estimate: g = delta_loss / (2 eps) * z.
pub fn spsa_estimate(delta_loss: f64, z: &[f64], epsilon: f64) -> GradEstimate {
    let coef = delta_loss / (2.0 * epsilon);
    GradEstimate::from_vec(z.iter().map(|&zi| coef * zi).collect())
}

/// How per-seed estimates are combined into the round update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    /// Literal sum of per-seed estimates.
    Sum,
    /// Mean over per-seed estimates.
    Mean,
}

/// Regenerates every record's direction from its seed, forms the per-seed
/// estimates, and combines them in record order. The summation order is
/// fixed, so results are bit-exact across re-runs and across parties.
pub fn aggregate_estimates(
    records: &[DeltaLossRecord],
    d: usize,
    spec: &PerturbSpec,
    mode: AggregateMode,
) -> Result<GradEstimate> {
    if records.is_empty() {
        return Err(Error::Protocol("cannot aggregate an empty record list".into()));
    }
    let mut acc = vec![0.0; d];
    for record in records {
        let z = sample_direction(record.seed, d, spec);
        let coef = record.delta_loss / (2.0 * spec.epsilon);
        for (a, &zi) in acc.iter_mut().zip(&z) {
            let g = coef * zi;
            *a += g;
        }
    }
    if mode == AggregateMode::Mean {
        let inv = 1.0 / records.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
    }
    Ok(GradEstimate::from_vec(acc))
}

/// Sums already-materialized estimate vectors in list order. Reference path
/// for the seed-exchange protocol: shipping the full vectors and summing
/// them must match regenerating them from seeds bit for bit.
pub fn sum_shipped_estimates(
    estimates: &[GradEstimate],
    d: usize,
    mode: AggregateMode,
) -> Result<GradEstimate> {
    if estimates.is_empty() {
        return Err(Error::Protocol("cannot aggregate an empty estimate list".into()));
    }
    let mut acc = vec![0.0; d];
    for est in estimates {
        for (a, &g) in acc.iter_mut().zip(est.as_slice()) {
            *a += g;
        }
    }
    if mode == AggregateMode::Mean {
        let inv = 1.0 / estimates.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
    }
    Ok(GradEstimate::from_vec(acc))
}

/// ZO-SGD update: w - eta * g, in place.
pub fn zo_sgd_step_in_place(w: &mut ParamVector, g_hat: &GradEstimate, eta: f64) {
    debug_assert_eq!(w.len(), g_hat.len());
    for (w, &g) in w.as_mut_slice().iter_mut().zip(g_hat.as_slice()) {
        *w -= eta * g;
    }
}

/// ZO-SGD update: returns w - eta * g.
pub fn zo_sgd_step(w: &ParamVector, g_hat: &GradEstimate, eta: f64) -> ParamVector {
    let mut out = w.clone();
    zo_sgd_step_in_place(&mut out, g_hat, eta);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(w: &ParamVector) -> Result<f64> {
        Ok(0.5 * w.as_slice().iter().map(|v| v * v).sum::<f64>())
    }

    #[test]
    fn perturb_spec_validation() {
        assert!(PerturbSpec::rademacher(0.75, 1e-4).validate().is_ok());
        assert!(PerturbSpec::rademacher(0.0, 1e-4).validate().is_err());
        assert!(PerturbSpec::rademacher(1.5, 1e-4).validate().is_err());
        assert!(PerturbSpec::rademacher(0.75, 0.0).validate().is_err());
        assert!(PerturbSpec::gaussian(1e-4).validate().is_ok());
    }

    #[test]
    fn directions_are_deterministic_with_bounded_support() {
        let spec = PerturbSpec::rademacher(0.75, 1e-4);
        let a = sample_direction(42, 4, &spec);
        let b = sample_direction(42, 4, &spec);
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v == 0.75 || v == -0.75), "{a:?}");
    }

    #[test]
    fn rademacher_moments_over_many_seeds() {
        // Law of large numbers: coordinate means near 0, second moments
        // near 1 for tau = 1.
        let spec = PerturbSpec::rademacher(1.0, 1e-4);
        let d = 20;
        let n = 100_000u64;
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d];
        for seed in 0..n {
            let z = sample_direction(seed, d, &spec);
            for i in 0..d {
                mean[i] += z[i];
                second[i] += z[i] * z[i];
            }
        }
        for i in 0..d {
            assert!((mean[i] / n as f64).abs() < 0.02);
            assert!((second[i] / n as f64 - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn gaussian_sample_variance_near_one() {
        let spec = PerturbSpec::gaussian(1e-4);
        let z = sample_direction(7, 100_000, &spec);
        let n = z.len() as f64;
        let mean: f64 = z.iter().sum::<f64>() / n;
        let var: f64 = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn delta_loss_of_constant_oracle_is_zero() {
        let mut w = ParamVector::from_vec(vec![1.0, 2.0]);
        let d = delta_loss(|_| Ok(3.25), &mut w, &[1.0, -1.0], 0.01).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn delta_loss_exact_on_quadratic() {
        // For quadratics the difference is exactly 2 eps z'grad.
        let mut w = ParamVector::from_vec(vec![1.0, 0.0]);
        let d = delta_loss(quadratic, &mut w, &[1.0, -1.0], 0.01).unwrap();
        assert!((d - 0.02).abs() < 1e-15, "delta {d}");
    }

    #[test]
    fn delta_loss_restores_w_bit_exactly() {
        let spec = PerturbSpec::rademacher(0.75, 1e-4);
        let z = sample_direction(5, 6, &spec);
        let mut w = ParamVector::from_vec(vec![0.1, -0.2, 0.3, -0.4, 0.5, -0.6]);
        let before: Vec<u64> = w.as_slice().iter().map(|v| v.to_bits()).collect();
        delta_loss(quadratic, &mut w, &z, 1e-4).unwrap();
        let after: Vec<u64> = w.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn delta_loss_is_antisymmetric_in_z() {
        let mut w = ParamVector::from_vec(vec![0.4, -1.2, 0.9]);
        let z = [1.0, -1.0, 1.0];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let d1 = delta_loss(quadratic, &mut w, &z, 0.05).unwrap();
        let d2 = delta_loss(quadratic, &mut w, &neg, 0.05).unwrap();
        assert_eq!(d1.to_bits(), (-d2).to_bits());
    }

    #[test]
    fn spsa_estimate_zero_difference_gives_zero_vector() {
        let g = spsa_estimate(0.0, &[1.0, -1.0, 1.0], 0.01);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spsa_estimate_exact_on_quadratic() {
        // Continue the quadratic example: delta = 0.02, eps = 0.01,
        // z = (1,-1) gives g = (1,-1) = z (z'grad) with z'grad = 1.
        let g = spsa_estimate(0.02, &[1.0, -1.0], 0.01);
        assert!((g.as_slice()[0] - 1.0).abs() < 1e-13);
        assert!((g.as_slice()[1] + 1.0).abs() < 1e-13);
    }

    #[test]
    fn enumerating_all_sign_patterns_recovers_the_gradient() {
        // E[z z'] = I for Rademacher tau = 1: averaging the estimate over
        // all 2^d sign patterns returns the exact gradient.
        let grad = [1.0, 0.0];
        let mut avg = [0.0, 0.0];
        for pattern in 0..4u32 {
            let z = [
                if pattern & 1 == 0 { 1.0 } else { -1.0 },
                if pattern & 2 == 0 { 1.0 } else { -1.0 },
            ];
            let zg = z[0] * grad[0] + z[1] * grad[1];
            let eps = 0.5;
            let delta = 2.0 * eps * zg; // exact for quadratics
            let g = spsa_estimate(delta, &z, eps);
            avg[0] += g.as_slice()[0];
            avg[1] += g.as_slice()[1];
        }
        assert_eq!(avg[0] / 4.0, 1.0);
        assert_eq!(avg[1] / 4.0, 0.0);
    }

    #[test]
    fn opposite_estimates_double_under_summation() {
        // Sign algebra: g(-delta, -z) equals g(delta, z), so the pair sums
        // to twice the first estimate.
        let z = [1.0, -1.0, 1.0];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let g1 = spsa_estimate(0.3, &z, 0.1);
        let g2 = spsa_estimate(-0.3, &neg, 0.1);
        for i in 0..3 {
            let sum = g1.as_slice()[i] + g2.as_slice()[i];
            assert_eq!(sum, 2.0 * g1.as_slice()[i]);
        }
    }

    #[test]
    fn aggregate_of_singleton_equals_single_estimate() {
        let spec = PerturbSpec::rademacher(1.0, 0.01);
        let d = 8;
        let mut w = ParamVector::from_vec(vec![0.5; d]);
        let seed = 1234u64;
        let z = sample_direction(seed, d, &spec);
        let dl = delta_loss(quadratic, &mut w, &z, spec.epsilon).unwrap();
        let single = spsa_estimate(dl, &z, spec.epsilon);
        let agg = aggregate_estimates(
            &[DeltaLossRecord { seed, delta_loss: dl }],
            d,
            &spec,
            AggregateMode::Sum,
        )
        .unwrap();
        assert_eq!(single.as_slice(), agg.as_slice());
    }

    #[test]
    fn aggregate_matches_full_vector_shipping_oracle() {
        // Three seeds on a quadratic: regenerating from records must match
        // summing the directly shipped estimate vectors entry-exactly.
        let spec = PerturbSpec::rademacher(0.75, 1e-3);
        let d = 16;
        let mut w = ParamVector::from_vec((0..d).map(|i| (i as f64) * 0.1 - 0.7).collect());
        let seeds = [11u64, 22, 33];

        let mut records = Vec::new();
        let mut shipped = Vec::new();
        for &seed in &seeds {
            let z = sample_direction(seed, d, &spec);
            let dl = delta_loss(quadratic, &mut w, &z, spec.epsilon).unwrap();
            records.push(DeltaLossRecord { seed, delta_loss: dl });
            shipped.push(spsa_estimate(dl, &z, spec.epsilon));
        }

        for mode in [AggregateMode::Sum, AggregateMode::Mean] {
            let via_seeds = aggregate_estimates(&records, d, &spec, mode).unwrap();
            let via_vectors = sum_shipped_estimates(&shipped, d, mode).unwrap();
            for (a, b) in via_seeds.as_slice().iter().zip(via_vectors.as_slice()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn aggregate_rejects_empty_input() {
        let spec = PerturbSpec::rademacher(1.0, 0.01);
        match aggregate_estimates(&[], 4, &spec, AggregateMode::Sum) {
            Err(Error::Protocol(_)) => {}
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    #[test]
    fn zo_sgd_step_arithmetic() {
        let w = ParamVector::from_vec(vec![1.0, -1.0]);
        let g = GradEstimate::from_vec(vec![1.0, -1.0]);
        let out = zo_sgd_step(&w, &g, 0.5);
        assert_eq!(out.as_slice(), &[0.5, -0.5]);

        let zero = GradEstimate::zeros(2);
        let unchanged = zo_sgd_step(&w, &zero, 0.5);
        assert_eq!(unchanged.as_slice(), w.as_slice());
    }

    #[test]
    fn zo_sgd_contracts_a_quadratic() {
        // 200 steps of exact-SPSA ZO-SGD on 0.5||w||^2 with a fresh seed per
        // step drives the norm below 1e-2 of its initial value, with a
        // decreasing trend across windows.
        let spec = PerturbSpec::rademacher(1.0, 1e-3);
        let d = 10;
        let mut w = ParamVector::from_vec((0..d).map(|i| 1.0 + i as f64 * 0.3).collect());
        let initial = w.l2_norm();
        let mut window_norms = Vec::new();
        for step in 0..200u64 {
            let z = sample_direction(derive_seed(900, &[step]), d, &spec);
            let dl = delta_loss(quadratic, &mut w, &z, spec.epsilon).unwrap();
            let g = spsa_estimate(dl, &z, spec.epsilon);
            zo_sgd_step_in_place(&mut w, &g, 0.1);
            if step % 40 == 39 {
                window_norms.push(w.l2_norm());
            }
        }
        for pair in window_norms.windows(2) {
            assert!(pair[1] < pair[0], "windows {window_norms:?}");
        }
        assert!(
            w.l2_norm() < 1e-2 * initial,
            "final {} initial {initial}",
            w.l2_norm()
        );
    }

    #[test]
    fn composite_pipeline_is_bit_reproducible() {
        let spec = PerturbSpec::rademacher(0.75, 1e-4);
        let d = 32;
        let run = || {
            let mut w = ParamVector::from_vec((0..d).map(|i| (i as f64).sin()).collect());
            let z = sample_direction(77, d, &spec);
            let dl = delta_loss(quadratic, &mut w, &z, spec.epsilon).unwrap();
            spsa_estimate(dl, &z, spec.epsilon)
        };
        let a = run();
        let b = run();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn rademacher_mean_estimate_is_tau_squared_times_gradient() {
        // For entries +-tau, E[z z'] = tau^2 I, so the mean SPSA estimate on
        // a quadratic is tau^2 g. Check each coordinate within 3 standard
        // errors over 10^4 draws.
        let tau = 0.75;
        let spec = PerturbSpec::rademacher(tau, 0.5);
        let grad: Vec<f64> = vec![1.0, -2.0, 0.5, 3.0, -1.5, 0.25];
        let d = grad.len();
        let n = 10_000u64;

        let mut sums = vec![0.0; d];
        let mut sumsq = vec![0.0; d];
        for seed in 0..n {
            let z = sample_direction(derive_seed(31, &[seed]), d, &spec);
            let zg: f64 = z.iter().zip(&grad).map(|(a, b)| a * b).sum();
            let delta = 2.0 * spec.epsilon * zg; // exact quadratic difference
            let g = spsa_estimate(delta, &z, spec.epsilon);
            for i in 0..d {
                sums[i] += g.as_slice()[i];
                sumsq[i] += g.as_slice()[i] * g.as_slice()[i];
            }
        }

        let mut dot = 0.0;
        let mut norm_mean = 0.0;
        let mut norm_grad = 0.0;
        for i in 0..d {
            let mean = sums[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            let expected = tau * tau * grad[i];
            assert!(
                (mean - expected).abs() <= 3.0 * se,
                "coord {i}: mean {mean}, expected {expected}, se {se}"
            );
            dot += mean * grad[i];
            norm_mean += mean * mean;
            norm_grad += grad[i] * grad[i];
        }
        let cosine = dot / (norm_mean.sqrt() * norm_grad.sqrt());
        assert!(cosine > 0.99, "cosine {cosine}");
    }

    #[test]
    fn rademacher_estimates_have_lower_variance_than_gaussian() {
        // Same quadratic, tau = 1: per-coordinate sample variance of
        // Rademacher estimates is strictly below Gaussian for every
        // coordinate (the population gap is 2 g_i^2).
        let grad: Vec<f64> = vec![1.0, -2.0, 1.5, 2.5, -1.25, 1.75];
        let d = grad.len();
        let n = 10_000u64;

        let variance = |spec: &PerturbSpec, salt: u64| -> Vec<f64> {
            let mut sums = vec![0.0; d];
            let mut sumsq = vec![0.0; d];
            for seed in 0..n {
                let z = sample_direction(derive_seed(salt, &[seed]), d, spec);
                let zg: f64 = z.iter().zip(&grad).map(|(a, b)| a * b).sum();
                let delta = 2.0 * spec.epsilon * zg;
                let g = spsa_estimate(delta, &z, spec.epsilon);
                for i in 0..d {
                    sums[i] += g.as_slice()[i];
                    sumsq[i] += g.as_slice()[i] * g.as_slice()[i];
                }
            }
            (0..d)
                .map(|i| {
                    let mean = sums[i] / n as f64;
                    sumsq[i] / n as f64 - mean * mean
                })
                .collect()
        };

        let rad = variance(&PerturbSpec::rademacher(1.0, 0.5), 1);
        let gauss = variance(&PerturbSpec::gaussian(0.5), 2);
        for i in 0..d {
            assert!(
                rad[i] < gauss[i],
                "coord {i}: rademacher {} vs gaussian {}",
                rad[i],
                gauss[i]
            );
        }
    }
}
