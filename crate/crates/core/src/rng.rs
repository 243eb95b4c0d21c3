//! Seedable random streams.
//!
//! Every stream is a 64-bit Mersenne Twister (MT19937-64). A stream is
//! identified by `(seed, run_index)`; the pair is folded into the generator
//! seed with two rounds of the SplitMix64 finalizer:
//!
//! ```text
//! key = splitmix64(seed) ^ splitmix64(run_index + 0x9E3779B97F4A7C15)
//! mt_seed = splitmix64(key)
//! ```
//!
//! Normal variates always use the ziggurat sampler of `rand_distr::StandardNormal`,
//! uniforms use the 53-bit mantissa construction of `rand`. Nothing else in the
//! crate draws randomness, so a `(seed, run_index)` pair pins a run bit for bit.

use rand::Rng;
use rand_distr::StandardNormal;
use rand_mt::Mt64;

use crate::error::{invalid, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed actually handed to MT19937-64 for a `(seed, run_index)` pair.
pub fn stream_seed(seed: u64, run_index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(run_index.wrapping_add(GOLDEN_GAMMA)))
}

/// A single-owner random stream.
pub struct RngStream {
    seed: u64,
    run_index: u64,
    gen: Mt64,
    draw_count: u64,
}

impl std::fmt::Debug for RngStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RngStream")
            .field("seed", &self.seed)
            .field("run_index", &self.run_index)
            .field("draw_count", &self.draw_count)
            .finish()
    }
}

impl RngStream {
    pub fn new(seed: u64, run_index: u64) -> Self {
        RngStream {
            seed,
            run_index,
            gen: Mt64::new(stream_seed(seed, run_index)),
            draw_count: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn run_index(&self) -> u64 {
        self.run_index
    }

    /// Number of variates handed out so far.
    pub fn draw_count(&self) -> u64 {
        self.draw_count
    }

    /// N(0, 1) draw.
    pub fn standard_normal(&mut self) -> f64 {
        self.draw_count += 1;
        self.gen.sample(StandardNormal)
    }

    /// U[0, 1) draw.
    pub fn unit_uniform(&mut self) -> f64 {
        self.draw_count += 1;
        self.gen.gen::<f64>()
    }

    /// N(mean, stddev²) draw. A zero standard deviation returns `mean` exactly
    /// and still consumes one variate, so streams stay aligned across configurations.
    pub fn normal(&mut self, mean: f64, stddev: f64) -> Result<f64> {
        if !(stddev >= 0.0) {
            return Err(invalid(format!("normal stddev must be >= 0, got {stddev}")));
        }
        let z = self.standard_normal();
        if stddev == 0.0 {
            Ok(mean)
        } else {
            Ok(mean + stddev * z)
        }
    }

    /// U[lo, hi] draw; `lo == hi` returns `lo` exactly.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo <= hi) {
            return Err(invalid(format!("uniform bounds out of order: [{lo}, {hi}]")));
        }
        let u = self.unit_uniform();
        if lo == hi {
            Ok(lo)
        } else {
            Ok(lo + (hi - lo) * u)
        }
    }
}

pub fn make_stream(seed: u64, run_index: u64) -> RngStream {
    RngStream::new(seed, run_index)
}

pub fn draw_normal(stream: &mut RngStream, mean: f64, stddev: f64) -> Result<f64> {
    stream.normal(mean, stddev)
}

pub fn draw_uniform(stream: &mut RngStream, lo: f64, hi: f64) -> Result<f64> {
    stream.uniform(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_draws(seed: u64, run: u64, n: usize) -> Vec<f64> {
        let mut s = make_stream(seed, run);
        (0..n).map(|_| s.unit_uniform()).collect()
    }

    #[test]
    fn same_seed_same_sequence() {
        assert_eq!(first_draws(42, 0, 1000), first_draws(42, 0, 1000));
    }

    #[test]
    fn run_index_and_seed_change_the_sequence() {
        let base = first_draws(42, 0, 1000);
        assert!(base.iter().zip(first_draws(42, 1, 1000)).any(|(a, b)| *a != b));
        assert!(base.iter().zip(first_draws(43, 0, 1000)).any(|(a, b)| *a != b));
    }

    #[test]
    fn degenerate_distributions_are_exact() {
        let mut s = make_stream(7, 0);
        assert_eq!(draw_normal(&mut s, 5.0, 0.0).unwrap(), 5.0);
        assert_eq!(draw_uniform(&mut s, 0.05, 0.05).unwrap(), 0.05);
        assert_eq!(s.draw_count(), 2);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let mut s = make_stream(7, 0);
        assert!(draw_normal(&mut s, 0.0, -1.0).is_err());
        assert!(draw_normal(&mut s, 0.0, f64::NAN).is_err());
        assert!(draw_uniform(&mut s, 1.0, 0.0).is_err());
    }

    #[test]
    fn normal_moments() {
        let mut s = make_stream(1, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| draw_normal(&mut s, 0.0, 1.0).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_support_and_mean() {
        let mut s = make_stream(2, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = draw_uniform(&mut s, 0.0, 1.0).unwrap();
            assert!((0.0..=1.0).contains(&u));
            sum += u;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn uniform_passes_kolmogorov_smirnov() {
        let mut s = make_stream(3, 0);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| s.unit_uniform()).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let hi = (i + 1) as f64 / n as f64 - x;
                let lo = x - i as f64 / n as f64;
                hi.max(lo)
            })
            .fold(0.0, f64::max);
        // asymptotic 1% critical value 1.628 / sqrt(n)
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }
}
