//! Seed derivation and the deterministic random stream used everywhere.
//!
//! Every stochastic decision in a run draws from an [`Rng`] seeded by
//! [`derive_seed`] over a master seed and a derivation path such as
//! `["augment", "epoch:3", "item:17"]`. Both primitives are portable bit
//! recipes (FNV-1a 64 and splitmix64), so streams replay exactly on any
//! platform.

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// FNV-1a 64-bit hash of a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One splitmix64 step applied to `x`: add the golden gamma, then finalize.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    mix64(x.wrapping_add(GOLDEN_GAMMA))
}

/// A master seed plus the ordered path naming one consumer of randomness.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeedContext {
    pub master_seed: u64,
    pub path: Vec<String>,
}

impl SeedContext {
    pub fn new(master_seed: u64) -> Self {
        SeedContext {
            master_seed,
            path: Vec::new(),
        }
    }

    /// Extends the path by one element.
    pub fn child(&self, element: impl Into<String>) -> Self {
        let mut path = self.path.clone();
        path.push(element.into());
        SeedContext {
            master_seed: self.master_seed,
            path,
        }
    }

    pub fn seed(&self) -> u64 {
        derive_seed(self.master_seed, &self.path)
    }

    pub fn rng(&self) -> Rng {
        Rng::new(self.seed())
    }
}

/// Folds each path element into the seed: `s = splitmix64(s ^ fnv1a64(e))`.
/// The empty path returns the master seed unchanged.
pub fn derive_seed<S: AsRef<str>>(master_seed: u64, path: &[S]) -> u64 {
    path.iter().fold(master_seed, |s, e| {
        splitmix64(s ^ fnv1a64(e.as_ref().as_bytes()))
    })
}

/// Iterated splitmix64 stream.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    cached_gaussian: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            cached_gaussian: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` as `floor(next_f64 * n)`. `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal deviate via Box-Muller. The second deviate of each
    /// pair is cached and returned by the next call.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(g) = self.cached_gaussian.take() {
            return g;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Beta(alpha, beta) deviate by Jöhnk's rejection algorithm.
    pub fn next_beta(&mut self, alpha: f64, beta: f64) -> Result<f64> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beta distribution needs alpha > 0 and beta > 0, got ({alpha}, {beta})"
            )));
        }
        loop {
            let u = self.next_f64();
            let v = self.next_f64();
            if u == 0.0 || v == 0.0 {
                continue;
            }
            // Work in log space so tiny shape parameters do not underflow.
            let log_x = u.ln() / alpha;
            let log_y = v.ln() / beta;
            let log_sum = if log_x > log_y {
                log_x + (log_y - log_x).exp().ln_1p()
            } else {
                log_y + (log_x - log_y).exp().ln_1p()
            };
            if log_sum <= 0.0 {
                return Ok((log_x - log_sum).exp());
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with an independent big-integer script.
    #[test]
    fn golden_constants() {
        assert_eq!(fnv1a64(b"{}"), 0x08f4_4b07_b590_1a25);
        assert_eq!(derive_seed(42, &["train"]), 0xe599_c76b_dd01_942f);
        assert_eq!(derive_seed(42, &["train", "epoch:0"]), 2105161085683447029);
        let mut rng = Rng::new(42);
        assert_eq!(rng.next_u64(), 13679457532755275413);
        assert_eq!(rng.next_u64(), 2949826092126892291);
        assert_eq!(rng.next_u64(), 5139283748462763858);
    }

    #[test]
    fn empty_path_is_identity() {
        assert_eq!(derive_seed::<&str>(0, &[]), 0);
        assert_eq!(derive_seed::<&str>(1234, &[]), 1234);
    }

    #[test]
    fn path_elements_change_seed() {
        let a = derive_seed(42, &["train", "epoch:0"]);
        let b = derive_seed(42, &["train", "epoch:1"]);
        assert_ne!(a, b);
        assert_ne!(derive_seed(42, &["a", "b"]), derive_seed(42, &["b", "a"]));
        let ctx = SeedContext::new(42).child("train").child("epoch:0");
        assert_eq!(ctx.seed(), a);
    }

    #[test]
    fn uniform_bounds() {
        let mut rng = Rng::new(7);
        for _ in 0..100_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn gaussian_mean_near_zero() {
        let mut rng = Rng::new(3);
        let n = 100_000;
        let mean = (0..n).map(|_| rng.next_gaussian()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn beta_one_one_is_uniform() {
        let mut rng = Rng::new(11);
        let n = 10_000;
        let mut draws: Vec<f64> = (0..n).map(|_| rng.next_beta(1.0, 1.0).unwrap()).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = (x - i as f64 / n as f64).abs();
                let hi = ((i + 1) as f64 / n as f64 - x).abs();
                lo.max(hi)
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn beta_mean_matches_shape() {
        let mut rng = Rng::new(5);
        let n = 20_000;
        let mean = (0..n).map(|_| rng.next_beta(2.0, 6.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 0.01, "mean {mean}");
        let small = rng.next_beta(0.05, 0.05).unwrap();
        assert!((0.0..=1.0).contains(&small));
    }

    #[test]
    fn beta_rejects_bad_shape() {
        assert!(Rng::new(0).next_beta(0.0, 1.0).is_err());
        assert!(Rng::new(0).next_beta(1.0, -1.0).is_err());
    }

    #[test]
    fn shuffle_is_permutation_and_replayable() {
        let mut a: Vec<usize> = (0..50).collect();
        let mut b = a.clone();
        Rng::new(9).shuffle(&mut a);
        Rng::new(9).shuffle(&mut b);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
