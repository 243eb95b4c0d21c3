//! Exact one-dimensional Wasserstein-1 distances, all computed as `int |F - G|`.

use super::{integrate, Grid1D};
use crate::error::{invalid, Result};

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `int_0^len |c - l(x)| dx` for `l` linear from `a` to `b`.
fn abs_linear_integral(a: f64, b: f64, len: f64) -> f64 {
    if a * b >= 0.0 {
        0.5 * (a + b).abs() * len
    } else {
        0.5 * len * (a * a + b * b) / (a - b).abs()
    }
}

/// W1 between two empirical measures. Equal sizes use the sorted-pairing sum,
/// otherwise the step CDFs are integrated directly.
pub fn w1_sorted(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(invalid("W1 needs non-empty samples"));
    }
    if samples_a.iter().chain(samples_b).any(|x| !x.is_finite()) {
        return Err(invalid("W1 samples must be finite"));
    }
    let a = sorted(samples_a);
    let b = sorted(samples_b);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut x = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
    }
    Ok(total)
}

fn check_normalized(grid: &Grid1D, values: &[f64]) -> Result<()> {
    if values.len() != grid.num_cells {
        return Err(invalid(format!("{} values for {} cells", values.len(), grid.num_cells)));
    }
    if values.iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid("density has negative or NaN values"));
    }
    let mass = integrate(grid, values);
    if (mass - 1.0).abs() > 1e-8 {
        return Err(invalid(format!("density mass {mass}, expected 1")));
    }
    Ok(())
}

/// W1 between an empirical measure and a piecewise-constant grid density.
pub fn w1_empirical_vs_density(samples: &[f64], grid: &Grid1D, values: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("W1 needs non-empty samples"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(invalid("W1 samples must be finite"));
    }
    check_normalized(grid, values)?;
    let s = sorted(samples);
    let m = s.len() as f64;
    let dx = grid.dx();
    let mut total = 0.0;

    // Below the grid the density CDF is 0, above it 1.
    let below = s.iter().take_while(|x| **x < grid.w_min).count();
    for k in 0..below {
        let hi = if k + 1 < below { s[k + 1] } else { grid.w_min };
        total += (k + 1) as f64 / m * (hi - s[k]);
    }
    let above_start = s.partition_point(|x| *x <= grid.w_max);
    for k in above_start..s.len() {
        let lo = if k == above_start { grid.w_max } else { s[k - 1] };
        total += (1.0 - k as f64 / m) * (s[k] - lo);
    }

    let mass = integrate(grid, values);
    let mut k = below;
    let mut x = grid.w_min;
    while k < above_start && s[k] == x {
        k += 1;
    }
    let mut cdf = 0.0;
    for (i, v) in values.iter().enumerate() {
        let (lo, hi) = (grid.edge(i), grid.edge(i + 1));
        let slope = v / mass;
        let at = |p: f64| cdf + slope * (p - lo);
        let piece = |from: f64, to: f64, k: usize| {
            let c = k as f64 / m;
            abs_linear_integral(at(from) - c, at(to) - c, to - from)
        };
        while k < above_start && s[k] < hi {
            total += piece(x, s[k], k);
            x = s[k];
            while k < above_start && s[k] == x {
                k += 1;
            }
        }
        total += piece(x, hi, k);
        x = hi;
        while k < above_start && s[k] == x {
            k += 1;
        }
        cdf += slope * dx;
    }
    Ok(total)
}

/// W1 between two normalized densities on the same grid.
pub fn w1_densities(grid: &Grid1D, a: &[f64], b: &[f64]) -> Result<f64> {
    check_normalized(grid, a)?;
    check_normalized(grid, b)?;
    let dx = grid.dx();
    let mut d = 0.0;
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        let next = d + (x - y) * dx;
        total += abs_linear_integral(d, next, dx);
        d = next;
    }
    Ok(total)
}
