//! The Franke–Westerhoff price at a frozen fraction difference `n` is an
//! Ornstein–Uhlenbeck process `dP = phi_hat (F - P) dt + sigma_hat dW`.
//! At `n = 0` its marginal density obeys
//! `g_t + (phi_hat (F - p) g)_p = (sigma_hat^2 / 2) g_pp`.

use serde::{Deserialize, Serialize};

use super::{integrate, integrate_with, Grid1D};
use crate::error::{invalid, Error, Result};
use crate::fw::{fw_continuous_coefficients, FwParams};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuSpec {
    pub drift_rate: f64,
    pub mean: f64,
    pub diffusion: f64,
}

impl OuSpec {
    pub fn new(drift_rate: f64, mean: f64, diffusion: f64) -> Result<Self> {
        if !(drift_rate > 0.0) || !(diffusion > 0.0) || !mean.is_finite() {
            return Err(invalid(format!(
                "OU needs drift_rate > 0 and diffusion > 0, got {drift_rate}, {diffusion}"
            )));
        }
        Ok(OuSpec { drift_rate, mean, diffusion })
    }

    /// Constants of the FW price equation with the fraction difference pinned at `n`.
    pub fn from_fw(params: &FwParams, n: f64) -> Result<Self> {
        let f = params.fundamental_price;
        let (drift, diffusion) = fw_continuous_coefficients(f - 1.0, n, params)?;
        OuSpec::new(drift, f, diffusion)
    }

    pub fn stationary_sd(&self) -> f64 {
        ou_stationary_gaussian(self).1.sqrt()
    }

    /// Centre of the printed closed form `exp{-(phi_hat / sigma^2)(p^2 - p F)}`, which is `F / 2`.
    pub fn printed_center(&self) -> f64 {
        0.5 * self.mean
    }
}

/// `(F, sigma_hat^2 / (2 phi_hat))`.
pub fn ou_stationary_gaussian(spec: &OuSpec) -> (f64, f64) {
    (spec.mean, spec.diffusion * spec.diffusion / (2.0 * spec.drift_rate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuNumeric {
    pub values: Vec<f64>,
    pub steps: usize,
    pub time: f64,
    pub dt: f64,
    /// Largest `|mass - 1|` seen during the evolution.
    pub max_mass_error: f64,
}

/// Stationary density of the marginal Fokker–Planck equation by explicit time
/// marching until the per-step L1 change drops below `tol`.
///
/// Faces use centred advection while the cell Péclet number `|v| dx / D` is at
/// most 2, which keeps the update positive, and fall back to upwind above it.
/// Boundary faces carry no flux. `initial` defaults to a uniform density.
pub fn ou_steady_state_numeric(
    spec: &OuSpec,
    grid: &Grid1D,
    initial: Option<&[f64]>,
    tol: f64,
    max_steps: usize,
) -> Result<OuNumeric> {
    let (mean, var) = ou_stationary_gaussian(spec);
    let sd = var.sqrt();
    if grid.w_min > mean - 8.0 * sd || grid.w_max < mean + 8.0 * sd {
        return Err(invalid(format!(
            "grid [{}, {}] must span mean +- 8 sd = [{}, {}]",
            grid.w_min,
            grid.w_max,
            mean - 8.0 * sd,
            mean + 8.0 * sd
        )));
    }
    let n = grid.num_cells;
    let dx = grid.dx();
    let mut g = match initial {
        Some(v) if v.len() == n => v.to_vec(),
        Some(v) => return Err(invalid(format!("{} initial values for {n} cells", v.len()))),
        None => vec![1.0 / (grid.w_max - grid.w_min); n],
    };
    let mass = integrate(grid, &g);
    if !(mass > 0.0) || g.iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid("initial density must be non-negative with positive mass"));
    }
    g.iter_mut().for_each(|v| *v /= mass);

    let d = 0.5 * spec.diffusion * spec.diffusion;
    let velocity: Vec<f64> = (0..=n).map(|j| spec.drift_rate * (spec.mean - grid.edge(j))).collect();
    let vmax = velocity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dt = 0.5 / (2.0 * d / (dx * dx) + vmax / dx);
    let ratio = dt / dx;
    let mut flux = vec![0.0; n + 1];
    let mut max_mass_error: f64 = 0.0;
    for step in 1..=max_steps {
        for j in 1..n {
            let v = velocity[j];
            let adv = if v.abs() * dx <= 2.0 * d {
                0.5 * v * (g[j - 1] + g[j])
            } else if v > 0.0 {
                v * g[j - 1]
            } else {
                v * g[j]
            };
            flux[j] = adv - d * (g[j] - g[j - 1]) / dx;
        }
        let mut change = 0.0;
        for i in 0..n {
            let delta = -ratio * (flux[i + 1] - flux[i]);
            g[i] += delta;
            change += delta.abs();
        }
        max_mass_error = max_mass_error.max((integrate(grid, &g) - 1.0).abs());
        if change * dx < tol {
            let mass = integrate(grid, &g);
            g.iter_mut().for_each(|v| *v /= mass);
            return Ok(OuNumeric {
                values: g,
                steps: step,
                time: step as f64 * dt,
                dt,
                max_mass_error,
            });
        }
    }
    Err(Error::ConvergenceFailure(format!(
        "Fokker-Planck steady state not reached in {max_steps} steps"
    )))
}

/// Mean and variance of a density on a grid.
pub fn grid_moments(grid: &Grid1D, values: &[f64]) -> (f64, f64) {
    let mass = integrate(grid, values);
    let mean = integrate_with(grid, values, |x| x) / mass;
    (mean, integrate_with(grid, values, |x| (x - mean).powi(2)) / mass)
}

/// Euler–Maruyama path of the FW price with `n_f - n_c` pinned at `n_fixed`,
/// started at `F` and stepped at `params.dt`. Returns the `samples` values that
/// follow `burn_in` discarded steps.
pub fn fw_frozen_n_simulate(
    params: &FwParams,
    n_fixed: f64,
    samples: usize,
    burn_in: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    fw_frozen_n_path(params, n_fixed, params.fundamental_price, samples, burn_in, rng)
}

/// As [`fw_frozen_n_simulate`] from an arbitrary start price.
pub fn fw_frozen_n_path(
    params: &FwParams,
    n_fixed: f64,
    start: f64,
    samples: usize,
    burn_in: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(params.dt > 0.0) {
        return Err(invalid(format!("dt must be > 0, got {}", params.dt)));
    }
    if !(-1.0..=1.0).contains(&n_fixed) {
        return Err(invalid(format!("n must lie in [-1, 1], got {n_fixed}")));
    }
    let sqrt_dt = params.dt.sqrt();
    let mut p = start;
    let mut out = Vec::with_capacity(samples);
    for step in 0..burn_in + samples {
        let (drift, diffusion) = fw_continuous_coefficients(p, n_fixed, params)?;
        p += drift * params.dt + diffusion * sqrt_dt * rng.standard_normal();
        if !p.is_finite() {
            return Err(Error::NumericOverflow(format!("frozen-n price at step {step}")));
        }
        if step >= burn_in {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::gaussian_cdf;

    fn baseline_spec() -> OuSpec {
        OuSpec::from_fw(&FwParams::baseline(), 0.0).unwrap()
    }

    #[test]
    fn baseline_constants() {
        let p = FwParams::baseline();
        let s = baseline_spec();
        let den = 1.0 - p.mu * p.chi / 2.0;
        assert!((s.drift_rate - p.mu * p.phi / 2.0 / den).abs() < 1e-15);
        assert!((s.diffusion - p.mu * (p.sigma_f + p.sigma_c) / 2.0 / den).abs() < 1e-15);
        assert_eq!(s.printed_center(), 0.5);
    }

    #[test]
    fn stationary_law_scaling() {
        let s = OuSpec::new(0.3, 2.0, 0.5).unwrap();
        let (m, v) = ou_stationary_gaussian(&s);
        let (m2, v2) = ou_stationary_gaussian(&OuSpec::new(0.3, 2.0, 1.0).unwrap());
        assert_eq!(m, 2.0);
        assert_eq!(m2, 2.0);
        assert!((v2 / v - 4.0).abs() < 1e-14);
        assert!(ou_stationary_gaussian(&OuSpec::new(0.3, 2.0, 1e-9).unwrap()).1 < 1e-17);
        assert!(OuSpec::new(0.0, 1.0, 1.0).is_err());
    }

    fn span(s: &OuSpec, cells: usize) -> Grid1D {
        let sd = s.stationary_sd();
        Grid1D::new(s.mean - 8.0 * sd, s.mean + 8.0 * sd, cells).unwrap()
    }

    #[test]
    fn numeric_steady_state_matches_the_gaussian() {
        let s = baseline_spec();
        let grid = span(&s, 400);
        let (m, v) = ou_stationary_gaussian(&s);
        let exact = grid.project_cdf(gaussian_cdf(m, v));
        let num = ou_steady_state_numeric(&s, &grid, None, 1e-10, 10_000_000).unwrap();
        let l1: f64 = num.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() * grid.dx();
        assert!(l1 < 1e-3, "L1 {l1}");
        assert!(num.max_mass_error < 1e-8);

        let shifted = grid.project_cdf(gaussian_cdf(m + 5.0 * v.sqrt(), v / 16.0));
        let other = ou_steady_state_numeric(&s, &grid, Some(&shifted), 1e-10, 10_000_000).unwrap();
        let gap: f64 = num.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * grid.dx();
        assert!(gap < 1e-5, "gap {gap}");
    }

    #[test]
    fn numeric_moments_match_on_a_fine_grid() {
        let s = baseline_spec();
        let grid = span(&s, 3200);
        let (m, v) = ou_stationary_gaussian(&s);
        let start = grid.project_cdf(gaussian_cdf(m, v));
        let num = ou_steady_state_numeric(&s, &grid, Some(&start), 1e-10, 10_000_000).unwrap();
        let (nm, nv) = grid_moments(&grid, &num.values);
        assert!((nm - m).abs() < 1e-6, "mean {nm}");
        assert!((nv - v).abs() < 1e-6, "variance {nv} vs {v}");
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let s = baseline_spec();
        let grid = Grid1D::new(0.0, 2.0, 100).unwrap();
        assert!(ou_steady_state_numeric(&s, &grid, None, 1e-10, 10).is_err());
    }

    #[test]
    fn budget_exhaustion_is_a_convergence_failure() {
        let s = baseline_spec();
        let grid = span(&s, 100);
        assert!(matches!(
            ou_steady_state_numeric(&s, &grid, None, 1e-10, 10),
            Err(Error::ConvergenceFailure(_))
        ));
    }

    #[test]
    fn noiseless_frozen_price_relaxes_to_the_fundamental() {
        let mut p = FwParams::baseline();
        p.sigma_f = 0.0;
        p.sigma_c = 0.0;
        let mut rng = RngStream::new(1, 0);
        let path = fw_frozen_n_path(&p, 0.0, 2.0, 40_000, 0, &mut rng).unwrap();
        let end = *path.last().unwrap();
        assert!((end - p.fundamental_price).abs() < 1e-6, "{end}");
        assert!(path.windows(2).all(|w| w[1] <= w[0]));
    }
}
