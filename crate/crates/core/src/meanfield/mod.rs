//! Mean-field and Fokker–Planck descriptions.
//!
//! With time-constant investment fractions taking finitely many values, the
//! LLS mean-field equation splits into one transport equation per fraction
//! group, coupled only through the scalar
//! `A(t) = sum_g omega_g gamma_g (1 - gamma_g) int w f_g(w) dw`.
//! All densities live on uniform cell-centred grids.

pub mod ansatz;
pub mod convergence;
pub mod ou;
pub mod particles;
pub mod transport;
pub mod wasserstein;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use ansatz::{lognormal_ansatz_check, AnsatzReport};
pub use convergence::{convergence_rate_table, ConvergenceRow, GroupSpec};
pub use ou::{fw_frozen_n_simulate, ou_stationary_gaussian, ou_steady_state_numeric, OuSpec};
pub use particles::{simplified_particle_run, ParticleRun};
pub use transport::{mf_coefficient, mf_solve, mf_transport_step, toy_mf_step, MfSolution};
pub use wasserstein::{w1_densities, w1_empirical_vs_density, w1_sorted};

/// Uniform grid of `num_cells` cells on `[w_min, w_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub w_min: f64,
    pub w_max: f64,
    pub num_cells: usize,
}

impl Grid1D {
    /// Any finite interval; used for signed axes (log price, the toy model).
    pub fn new(w_min: f64, w_max: f64, num_cells: usize) -> Result<Self> {
        if !(w_min < w_max) || !w_min.is_finite() || !w_max.is_finite() {
            return Err(invalid(format!("grid bounds [{w_min}, {w_max}] are not an interval")));
        }
        if num_cells < 16 {
            return Err(invalid(format!("grid needs at least 16 cells, got {num_cells}")));
        }
        Ok(Grid1D { w_min, w_max, num_cells })
    }

    /// A wealth grid, which must sit on the positive half-line.
    pub fn wealth(w_min: f64, w_max: f64, num_cells: usize) -> Result<Self> {
        if !(w_min > 0.0) {
            return Err(invalid(format!("wealth grid must start above 0, got {w_min}")));
        }
        Grid1D::new(w_min, w_max, num_cells)
    }

    pub fn dx(&self) -> f64 {
        (self.w_max - self.w_min) / self.num_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.w_min + (i as f64 + 0.5) * self.dx()
    }

    /// Left edge of cell `i`; `edge(num_cells)` is `w_max`.
    pub fn edge(&self, i: usize) -> f64 {
        self.w_min + i as f64 * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.num_cells).map(|i| self.center(i)).collect()
    }

    /// Cell averages of the distribution with CDF `cdf`, renormalized to unit mass on the grid.
    pub fn project_cdf(&self, cdf: impl Fn(f64) -> f64) -> Vec<f64> {
        let dx = self.dx();
        let mut values: Vec<f64> = (0..self.num_cells)
            .map(|i| (cdf(self.edge(i + 1)) - cdf(self.edge(i))).max(0.0) / dx)
            .collect();
        let mass = integrate(self, &values);
        if mass > 0.0 {
            values.iter_mut().for_each(|v| *v /= mass);
        }
        values
    }

    /// Cell index containing `w`, if inside the grid.
    pub fn locate(&self, w: f64) -> Option<usize> {
        if w < self.w_min || w > self.w_max {
            return None;
        }
        Some((((w - self.w_min) / self.dx()) as usize).min(self.num_cells - 1))
    }
}

/// Midpoint-rule integral of cell values.
pub fn integrate(grid: &Grid1D, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.dx()
}

/// Midpoint-rule integral of `g(center) * value`.
pub fn integrate_with(grid: &Grid1D, values: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| g(grid.center(i)) * v)
        .sum::<f64>()
        * grid.dx()
}

/// One investment-fraction atom of the mean-field density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGroup {
    pub gamma: f64,
    pub weight: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDensity {
    pub groups: Vec<DensityGroup>,
    pub grid: Grid1D,
    pub time: f64,
}

impl GroupDensity {
    pub fn new(grid: Grid1D, groups: Vec<DensityGroup>) -> Result<Self> {
        let d = GroupDensity { groups, grid, time: 0.0 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(invalid("density needs at least one group"));
        }
        let total: f64 = self.groups.iter().map(|g| g.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("group weights sum to {total}, expected 1")));
        }
        for (k, g) in self.groups.iter().enumerate() {
            if !(g.gamma > 0.0 && g.gamma < 1.0) || !(g.weight >= 0.0) {
                return Err(invalid(format!("group {k}: gamma {} or weight {} out of range", g.gamma, g.weight)));
            }
            if g.values.len() != self.grid.num_cells {
                return Err(invalid(format!("group {k}: {} values for {} cells", g.values.len(), self.grid.num_cells)));
            }
            if g.values.iter().any(|v| !(*v >= 0.0)) {
                return Err(invalid(format!("group {k}: negative or NaN density")));
            }
            let mass = integrate(&self.grid, &g.values);
            if (mass - 1.0).abs() > 1e-8 {
                return Err(invalid(format!("group {k}: mass {mass}, expected 1")));
            }
        }
        Ok(())
    }

    pub fn mass(&self, group: usize) -> f64 {
        integrate(&self.grid, &self.groups[group].values)
    }

    pub fn mean(&self, group: usize) -> f64 {
        integrate_with(&self.grid, &self.groups[group].values, |w| w) / self.mass(group)
    }

    /// Rows `(w, group_id, f)` for CSV export.
    pub fn rows(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::with_capacity(self.groups.len() * self.grid.num_cells);
        for (k, g) in self.groups.iter().enumerate() {
            for (i, v) in g.values.iter().enumerate() {
                out.push((self.grid.center(i), k, *v));
            }
        }
        out
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// CDF of the log-normal law with `ln w ~ N(mean, var)`.
pub fn lognormal_cdf(mean: f64, var: f64) -> impl Fn(f64) -> f64 {
    let sd = var.sqrt();
    move |w: f64| if w <= 0.0 { 0.0 } else { normal_cdf((w.ln() - mean) / sd) }
}

pub fn gaussian_cdf(mean: f64, var: f64) -> impl Fn(f64) -> f64 {
    let sd = var.sqrt();
    move |x: f64| normal_cdf((x - mean) / sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry() {
        let g = Grid1D::new(-1.0, 1.0, 16).unwrap();
        assert_eq!(g.dx(), 0.125);
        assert_eq!(g.center(0), -0.9375);
        assert_eq!(g.edge(16), 1.0);
        assert_eq!(g.locate(1.0), Some(15));
        assert_eq!(g.locate(-1.5), None);
        assert!(Grid1D::new(0.0, 1.0, 8).is_err());
        assert!(Grid1D::wealth(0.0, 1.0, 32).is_err());
    }

    #[test]
    fn projection_is_normalized() {
        let g = Grid1D::new(-6.0, 6.0, 64).unwrap();
        let v = g.project_cdf(gaussian_cdf(0.0, 1.0));
        assert!((integrate(&g, &v) - 1.0).abs() < 1e-14);
        assert!(integrate_with(&g, &v, |x| x).abs() < 1e-12);
    }

    #[test]
    fn density_validation() {
        let g = Grid1D::wealth(0.5, 1.5, 16).unwrap();
        let flat = vec![1.0; 16];
        let ok = GroupDensity::new(
            g,
            vec![DensityGroup {
                gamma: 0.5,
                weight: 1.0,
                values: flat.clone(),
            }],
        );
        assert!(ok.is_ok());
        let bad_weight = GroupDensity::new(
            g,
            vec![DensityGroup {
                gamma: 0.5,
                weight: 0.7,
                values: flat.clone(),
            }],
        );
        assert!(bad_weight.is_err());
        let bad_mass = GroupDensity::new(
            g,
            vec![DensityGroup {
                gamma: 0.5,
                weight: 1.0,
                values: vec![2.0; 16],
            }],
        );
        assert!(bad_mass.is_err());
    }
}
