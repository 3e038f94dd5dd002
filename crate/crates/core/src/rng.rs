//! Deterministic, counter-based random number generation (SplitMix64).
//!
//! Every stream is keyed by a 64-bit seed and yields the same sequence on
//! every platform and thread schedule, so a client and the server can
//! regenerate identical perturbation vectors from a shared seed without
//! exchanging any generator state.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a key and a context path (e.g. round index,
/// client id, perturbation index). Pure function of its inputs, which makes
/// every stream in a run replayable from one master seed.
pub fn derive_seed(key: u64, ctx: &[u64]) -> u64 {
    let mut state = mix64(key ^ GOLDEN_GAMMA);
    for (i, &c) in ctx.iter().enumerate() {
        let salted = c.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN_GAMMA));
        state = mix64(state ^ salted);
    }
    state
}

/// SplitMix64 stream keyed by a 64-bit seed.
#[derive(Debug, Clone)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn new(key: u64) -> Self {
        Self { state: key }
    }

    /// Forks an independent child stream; advances this stream by one step.
    pub fn split(&mut self) -> SeedStream {
        SeedStream::new(self.next_u64())
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64) / DEN
    }

    /// Uniform in (0, 1]; safe as a logarithm argument.
    #[inline]
    fn next_open01(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        (((self.next_u64() >> 11) + 1) as f64) / DEN
    }

    /// Uniform integer in [0, n). `n` must be positive.
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (cosine branch only, so each draw
    /// consumes exactly two uniforms).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_open01();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang, with the usual boost for
    /// shape < 1.
    pub fn next_gamma(&mut self, shape: f64) -> f64 {
        debug_assert!(shape > 0.0);
        if shape < 1.0 {
            let boost = self.next_open01().powf(1.0 / shape);
            return boost * self.next_gamma(shape + 1.0);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (3.0 * d.sqrt());
        loop {
            let x = self.next_normal();
            let v = (1.0 + c * x).powi(3);
            if v <= 0.0 {
                continue;
            }
            let u = self.next_open01();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }

    /// Symmetric Dirichlet(alpha) proportions over `k` components.
    pub fn next_dirichlet(&mut self, alpha: f64, k: usize) -> Vec<f64> {
        let mut draws: Vec<f64> = (0..k).map(|_| self.next_gamma(alpha)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            for d in &mut draws {
                *d /= sum;
            }
        } else {
            // All draws underflowed to zero; fall back to uniform.
            draws.fill(1.0 / k as f64);
        }
        draws
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }

    /// Samples `m` distinct indices from [0, n), returned in ascending order.
    pub fn sample_indices(&mut self, n: usize, m: usize) -> Vec<usize> {
        debug_assert!(m <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + self.next_below(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..m].to_vec();
        picked.sort_unstable();
        picked
    }
}
