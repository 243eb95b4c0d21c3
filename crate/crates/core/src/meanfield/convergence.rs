//! Particle-to-PDE convergence in the Wasserstein-1 metric.

use serde::{Deserialize, Serialize};

use super::particles::simplified_particle_run;
use super::transport::mf_solve;
use super::wasserstein::w1_empirical_vs_density;
use super::{integrate, GroupDensity, Grid1D};
use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// One investment-fraction atom: value and population weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub gamma: f64,
    pub weight: f64,
}

impl GroupSpec {
    /// Three equally weighted groups at 0.25, 0.5 and 0.75.
    pub fn three_groups() -> Vec<GroupSpec> {
        [0.25, 0.5, 0.75]
            .into_iter()
            .map(|gamma| GroupSpec { gamma, weight: 1.0 / 3.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    /// Per replicate, weighted W1 at t = 0.
    pub w1_start: Vec<f64>,
    /// Per replicate, weighted W1 at the horizon.
    pub w1_end: Vec<f64>,
    pub median_start: f64,
    pub median_end: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Split `n` agents over weights by largest remainder.
pub fn group_counts(weights: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        counts[k] += 1;
    }
    counts
}

/// Exact draw from a piecewise-constant grid density by CDF inversion.
pub fn sample_grid_density(grid: &Grid1D, values: &[f64], count: usize, rng: &mut RngStream) -> Vec<f64> {
    let dx = grid.dx();
    let mut cdf = Vec::with_capacity(values.len() + 1);
    cdf.push(0.0);
    for v in values {
        cdf.push(cdf.last().unwrap() + v * dx);
    }
    let total = *cdf.last().unwrap();
    (0..count)
        .map(|_| {
            let u = rng.unit_uniform() * total;
            let i = (cdf.partition_point(|c| *c <= u).max(1) - 1).min(values.len() - 1);
            let inside = if values[i] > 0.0 { (u - cdf[i]) / (values[i] * dx) } else { 0.5 };
            grid.edge(i) + inside.clamp(0.0, 1.0) * dx
        })
        .collect()
}

fn weighted_w1(density: &GroupDensity, agents: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (g, w) in density.groups.iter().zip(agents) {
        if !w.is_empty() {
            total += g.weight * w1_empirical_vs_density(w, &density.grid, &g.values)?;
        }
    }
    Ok(total)
}

/// For each `N`, sample `replicates` particle systems from `initial`, run them and the
/// mean-field equation to `t_end`, and record the weighted per-group W1 at both ends.
/// Replicate `k` of the `i`-th size draws from stream `(seed, i * replicates + k)`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_rate_table(
    initial: &GroupDensity,
    r: f64,
    z_of_t: &dyn Fn(f64) -> f64,
    t_end: f64,
    n_list: &[usize],
    replicates: usize,
    particle_dt: f64,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if n_list.windows(2).any(|w| w[0] >= w[1]) || n_list.is_empty() {
        return Err(invalid(format!("N list must be strictly ascending, got {n_list:?}")));
    }
    if replicates == 0 {
        return Err(invalid("need at least one replicate"));
    }
    let mut pde = mf_solve(initial, z_of_t, r, t_end, f64::INFINITY)?;
    // Compare against the law on the domain; the lost tail is within the outflow budget.
    for g in pde.density.groups.iter_mut() {
        let mass = integrate(&pde.density.grid, &g.values);
        g.values.iter_mut().for_each(|v| *v /= mass);
    }
    let weights: Vec<f64> = initial.groups.iter().map(|g| g.weight).collect();
    let mut rows = Vec::with_capacity(n_list.len());
    for (i, &n) in n_list.iter().enumerate() {
        let counts = group_counts(&weights, n);
        let mut w1_start = Vec::with_capacity(replicates);
        let mut w1_end = Vec::with_capacity(replicates);
        for k in 0..replicates {
            let mut rng = RngStream::new(seed, (i * replicates + k) as u64);
            let mut w0 = Vec::with_capacity(n);
            let mut gammas = Vec::with_capacity(n);
            let mut start = Vec::with_capacity(counts.len());
            for (g, &c) in initial.groups.iter().zip(&counts) {
                let w = sample_grid_density(&initial.grid, &g.values, c, &mut rng);
                w0.extend_from_slice(&w);
                gammas.extend(std::iter::repeat_n(g.gamma, c));
                start.push(w);
            }
            w1_start.push(weighted_w1(initial, &start)?);
            let run = simplified_particle_run(&w0, &gammas, r, z_of_t, t_end, particle_dt)?;
            let last = run.last();
            let mut end = Vec::with_capacity(counts.len());
            let mut offset = 0;
            for &c in &counts {
                end.push(last[offset..offset + c].to_vec());
                offset += c;
            }
            w1_end.push(weighted_w1(&pde.density, &end)?);
        }
        rows.push(ConvergenceRow {
            n,
            median_start: median(&w1_start),
            median_end: median(&w1_end),
            w1_start,
            w1_end,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{gaussian_cdf, DensityGroup};

    #[test]
    fn counts_follow_weights() {
        assert_eq!(group_counts(&[1.0 / 3.0; 3], 100), vec![34, 33, 33]);
        assert_eq!(group_counts(&[0.5, 0.5], 7).iter().sum::<usize>(), 7);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn sampling_reproduces_the_grid_density() {
        let grid = Grid1D::new(-4.0, 4.0, 64).unwrap();
        let v = grid.project_cdf(gaussian_cdf(0.0, 1.0));
        let mut rng = RngStream::new(5, 0);
        let s = sample_grid_density(&grid, &v, 200_000, &mut rng);
        assert!(w1_empirical_vs_density(&s, &grid, &v).unwrap() < 0.01);
    }

    #[test]
    fn single_group_without_dividend_dilates_by_the_growth_factor() {
        let r = 0.5;
        let grid = Grid1D::wealth(0.2, 6.0, 2048).unwrap();
        let d = GroupDensity::new(
            grid,
            vec![DensityGroup {
                gamma: 0.5,
                weight: 1.0,
                values: grid.project_cdf(gaussian_cdf(1.0, 0.04)),
            }],
        )
        .unwrap();
        let rows = convergence_rate_table(&d, r, &|_| 0.0, 1.0, &[200], 5, 0.01, 11).unwrap();
        for (a, b) in rows[0].w1_start.iter().zip(&rows[0].w1_end) {
            assert!((b / (a * r.exp()) - 1.0).abs() < 0.1, "{a} -> {b}");
        }
    }
}
