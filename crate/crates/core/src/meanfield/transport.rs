//! Conservative upwind finite volumes for the mean-field transport equations.
//!
//! Fluxes live on cell faces. Boundary faces admit no inflow; whatever the
//! velocity carries out through a boundary face is booked as outflow, so
//! `mass_before = mass_after + outflow` holds to rounding on every step.

use super::{integrate, integrate_with, GroupDensity, Grid1D};
use crate::error::{invalid, Error, Result};

pub const CFL_NUMBER: f64 = 0.5;

/// Outflow mass allowed over a whole solve before the domain is declared too small.
pub const OUTFLOW_BUDGET: f64 = 1e-6;

/// `A = sum_g omega_g gamma_g (1 - gamma_g) int w f_g(w) dw`.
pub fn mf_coefficient(density: &GroupDensity) -> Result<f64> {
    let grid = &density.grid;
    let a: f64 = density
        .groups
        .iter()
        .map(|g| g.weight * g.gamma * (1.0 - g.gamma) * integrate_with(grid, &g.values, |w| w))
        .sum();
    if !(a > 0.0) {
        return Err(Error::SingularCoefficient(format!("A = {a}")));
    }
    Ok(a)
}

/// One upwind step of `f_t + (v f)_w = 0` for a face velocity `v`. Returns the outflow mass.
fn upwind_step(grid: &Grid1D, values: &mut [f64], dt: f64, velocity: impl Fn(f64) -> f64) -> f64 {
    let n = grid.num_cells;
    let ratio = dt / grid.dx();
    let mut flux = vec![0.0; n + 1];
    for (j, f) in flux.iter_mut().enumerate() {
        let v = velocity(grid.edge(j));
        *f = if j == 0 {
            if v < 0.0 { v * values[0] } else { 0.0 }
        } else if j == n {
            if v > 0.0 { v * values[n - 1] } else { 0.0 }
        } else if v > 0.0 {
            v * values[j - 1]
        } else {
            v * values[j]
        };
    }
    for (i, f) in values.iter_mut().enumerate() {
        *f -= ratio * (flux[i + 1] - flux[i]);
    }
    (flux[n] - flux[0]) * dt
}

fn check_structure(density: &GroupDensity) -> Result<()> {
    for (k, g) in density.groups.iter().enumerate() {
        if g.values.len() != density.grid.num_cells {
            return Err(invalid(format!("group {k}: {} values for {} cells", g.values.len(), density.grid.num_cells)));
        }
    }
    Ok(())
}

/// Largest stable step for the current density and dividend level.
pub fn mf_cfl_limit(density: &GroupDensity, z: f64, r: f64) -> Result<f64> {
    let a = mf_coefficient(density)?;
    let reach = density.grid.w_min.abs().max(density.grid.w_max.abs());
    let speed = density
        .groups
        .iter()
        .map(|g| (r + g.gamma * z / a).abs() * reach)
        .fold(0.0, f64::max);
    Ok(if speed > 0.0 { CFL_NUMBER * density.grid.dx() / speed } else { f64::INFINITY })
}

/// Mean-field step together with the per-group outflow through the boundaries.
pub fn mf_transport_step_with_outflow(
    density: &GroupDensity,
    z_of_t: &dyn Fn(f64) -> f64,
    r: f64,
    dt: f64,
) -> Result<(GroupDensity, Vec<f64>, f64)> {
    check_structure(density)?;
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be > 0, got {dt}")));
    }
    let z = z_of_t(density.time);
    let limit = mf_cfl_limit(density, z, r)?;
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    let a = mf_coefficient(density)?;
    let mut next = density.clone();
    let mut outflow = Vec::with_capacity(next.groups.len());
    for g in next.groups.iter_mut() {
        let rate = r + g.gamma * z / a;
        outflow.push(upwind_step(&density.grid, &mut g.values, dt, |w| rate * w));
    }
    next.time += dt;
    Ok((next, outflow, a))
}

/// One step of `f_t + (w [r + gamma Z(t) / A(t)] f)_w = 0` for every group,
/// with `A` taken from the pre-step density.
pub fn mf_transport_step(density: &GroupDensity, z_of_t: &dyn Fn(f64) -> f64, r: f64, dt: f64) -> Result<GroupDensity> {
    mf_transport_step_with_outflow(density, z_of_t, r, dt).map(|(d, _, _)| d)
}

#[derive(Debug, Clone)]
pub struct MfSolution {
    pub density: GroupDensity,
    /// `(t_n, dt_n, A_n)` for every step taken.
    pub steps: Vec<(f64, f64, f64)>,
    /// Cumulative boundary outflow per group.
    pub outflow: Vec<f64>,
    /// Largest per-step relative violation of `mass_before = mass_after + outflow`.
    pub max_mass_defect: f64,
}

impl MfSolution {
    /// `int_0^T (r + gamma Z / A) dt` exactly as the scheme applied it.
    pub fn log_shift(&self, gamma: f64, r: f64, z_of_t: &dyn Fn(f64) -> f64) -> f64 {
        self.steps.iter().map(|&(t, dt, a)| dt * (r + gamma * z_of_t(t) / a)).sum()
    }
}

/// March the mean-field equation to `t_end` with CFL-limited steps no longer than `max_dt`.
pub fn mf_solve(
    initial: &GroupDensity,
    z_of_t: &dyn Fn(f64) -> f64,
    r: f64,
    t_end: f64,
    max_dt: f64,
) -> Result<MfSolution> {
    initial.validate()?;
    if !(max_dt > 0.0) || !(t_end >= initial.time) {
        return Err(invalid(format!("bad horizon {t_end} or max_dt {max_dt}")));
    }
    let mut density = initial.clone();
    let mut steps = Vec::new();
    let mut outflow = vec![0.0; density.groups.len()];
    let mut max_mass_defect: f64 = 0.0;
    while t_end - density.time > 1e-12 * t_end.abs().max(1.0) {
        let limit = mf_cfl_limit(&density, z_of_t(density.time), r)?;
        let dt = limit.min(max_dt).min(t_end - density.time);
        let before: Vec<f64> = density.groups.iter().map(|g| integrate(&density.grid, &g.values)).collect();
        let t = density.time;
        let (next, out, a) = mf_transport_step_with_outflow(&density, z_of_t, r, dt)?;
        for (k, g) in next.groups.iter().enumerate() {
            let after = integrate(&next.grid, &g.values);
            max_mass_defect = max_mass_defect.max((before[k] - after - out[k]).abs() / before[k].max(f64::MIN_POSITIVE));
            outflow[k] += out[k];
            if outflow[k] > OUTFLOW_BUDGET {
                return Err(invalid(format!(
                    "group {k}: boundary outflow {} exceeds budget {OUTFLOW_BUDGET} by t = {}; widen the grid",
                    outflow[k], next.time
                )));
            }
        }
        steps.push((t, dt, a));
        density = next;
    }
    density.time = t_end;
    Ok(MfSolution {
        density,
        steps,
        outflow,
        max_mass_defect,
    })
}

/// Largest stable step for the toy equation.
pub fn toy_cfl_limit(grid: &Grid1D, values: &[f64]) -> f64 {
    let m = integrate_with(grid, values, |w| w) / integrate(grid, values);
    let speed = (m - grid.w_min).abs().max((m - grid.w_max).abs());
    CFL_NUMBER * grid.dx() / speed
}

/// One upwind step of `f_t + ((m(t) - w) f)_w = 0`, `m` the current mean.
pub fn toy_mf_step(grid: &Grid1D, values: &[f64], dt: f64) -> Result<Vec<f64>> {
    if values.len() != grid.num_cells {
        return Err(invalid(format!("{} values for {} cells", values.len(), grid.num_cells)));
    }
    if !(integrate(grid, values) > 0.0) {
        return Err(invalid("toy density has no mass"));
    }
    let limit = toy_cfl_limit(grid, values);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    let m = integrate_with(grid, values, |w| w) / integrate(grid, values);
    let mut next = values.to_vec();
    upwind_step(grid, &mut next, dt, |w| m - w);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{gaussian_cdf, lognormal_cdf, DensityGroup};

    fn single(grid: Grid1D, gamma: f64, values: Vec<f64>) -> GroupDensity {
        GroupDensity::new(grid, vec![DensityGroup { gamma, weight: 1.0, values }]).unwrap()
    }

    #[test]
    fn coefficient_of_a_narrow_bump() {
        let mut last = f64::INFINITY;
        for sd in [10.0, 1.0, 0.1] {
            let grid = Grid1D::wealth(900.0, 1100.0, 4000).unwrap();
            let d = single(grid, 0.5, grid.project_cdf(gaussian_cdf(1000.0, sd * sd)));
            let a = mf_coefficient(&d).unwrap();
            assert!((a - 250.0).abs() <= last);
            last = (a - 250.0).abs();
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn coefficient_symmetry_and_vanishing_groups() {
        let grid = Grid1D::wealth(0.5, 1.5, 64).unwrap();
        let v = grid.project_cdf(gaussian_cdf(1.0, 0.01));
        let one = mf_coefficient(&single(grid, 0.3, v.clone())).unwrap();
        let two = GroupDensity::new(
            grid,
            vec![
                DensityGroup { gamma: 0.3, weight: 0.5, values: v.clone() },
                DensityGroup { gamma: 0.7, weight: 0.5, values: v.clone() },
            ],
        )
        .unwrap();
        assert!((mf_coefficient(&two).unwrap() - one).abs() < 1e-14);
        let tiny = mf_coefficient(&single(grid, 1e-12, v)).unwrap();
        assert!(tiny < 1e-11);
    }

    #[test]
    fn zero_density_is_singular_and_stays_zero_under_transport() {
        let grid = Grid1D::wealth(0.5, 1.5, 32).unwrap();
        let mut d = single(grid, 0.5, vec![1.0; 32]);
        d.groups[0].values = vec![0.0; 32];
        assert!(matches!(mf_coefficient(&d), Err(Error::SingularCoefficient(_))));
        let mut values = vec![0.0; 32];
        upwind_step(&grid, &mut values, 1e-3, |w| 0.04 * w);
        assert!(values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cfl_violation_is_reported() {
        let grid = Grid1D::wealth(0.1, 10.0, 256).unwrap();
        let d = single(grid, 0.5, grid.project_cdf(lognormal_cdf(0.0, 0.25)));
        let limit = mf_cfl_limit(&d, 0.1, 0.04).unwrap();
        let z = |_: f64| 0.1;
        assert!(mf_transport_step(&d, &z, 0.04, limit).is_ok());
        assert!(matches!(
            mf_transport_step(&d, &z, 0.04, 2.0 * limit),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn pure_growth_follows_the_moment_model() {
        let r = 0.04;
        let grid = Grid1D::wealth(0.2, 4.0, 4096).unwrap();
        let d = single(grid, 0.5, grid.project_cdf(gaussian_cdf(1.0, 0.01)));
        let m0 = d.mean(0);
        let sol = mf_solve(&d, &|_| 0.0, r, 1.0, 1.0).unwrap();
        let m1 = sol.density.mean(0);
        assert!((m1 / (m0 * r.exp()) - 1.0).abs() < 5e-3);
        assert!(sol.max_mass_defect < 1e-10);
    }

    #[test]
    fn mass_is_conserved_over_a_thousand_steps() {
        let grid = Grid1D::wealth(0.1, 20.0, 512).unwrap();
        let mut d = single(grid, 0.6, grid.project_cdf(lognormal_cdf(0.0, 0.1)));
        let m0 = d.mass(0);
        let z = |_: f64| 0.05;
        for _ in 0..1000 {
            let dt = mf_cfl_limit(&d, 0.05, 0.04).unwrap();
            d = mf_transport_step(&d, &z, 0.04, dt).unwrap();
        }
        assert!((d.mass(0) / m0 - 1.0).abs() < 1e-7);
        assert!(d.groups[0].values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn outflow_budget_is_enforced() {
        let grid = Grid1D::wealth(0.1, 1.5, 64).unwrap();
        let d = single(grid, 0.5, grid.project_cdf(gaussian_cdf(1.0, 0.01)));
        assert!(mf_solve(&d, &|_| 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn toy_symmetric_density_stays_symmetric() {
        let grid = Grid1D::new(-4.0, 4.0, 256).unwrap();
        let mut v = grid.project_cdf(|x| 0.5 * gaussian_cdf(-1.0, 0.2)(x) + 0.5 * gaussian_cdf(1.0, 0.2)(x));
        for _ in 0..200 {
            let dt = toy_cfl_limit(&grid, &v);
            v = toy_mf_step(&grid, &v, dt).unwrap();
        }
        let n = v.len();
        for i in 0..n / 2 {
            assert!((v[i] - v[n - 1 - i]).abs() < 1e-12);
        }
    }
}
