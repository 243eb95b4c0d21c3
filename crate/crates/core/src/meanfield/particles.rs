//! The simplified N-agent wealth system with time-constant investment fractions:
//! `w_i' = r w_i + gamma_i w_i Z(t) / A_N`, `A_N = (1/N) sum_j (1 - gamma_j) gamma_j w_j`.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub times: Vec<f64>,
    /// Wealth vector at each entry of `times`.
    pub wealth: Vec<Vec<f64>>,
}

impl ParticleRun {
    pub fn last(&self) -> &[f64] {
        self.wealth.last().expect("run holds at least the initial state")
    }
}

fn rhs(w: &[f64], gammas: &[f64], r: f64, z: f64, out: &mut [f64]) -> Result<()> {
    let a = w.iter().zip(gammas).map(|(w, g)| (1.0 - g) * g * w).sum::<f64>() / w.len() as f64;
    if !(a > f64::MIN_POSITIVE) {
        return Err(Error::SingularCoefficient(format!("A_N = {a}")));
    }
    let c = z / a;
    for ((o, w), g) in out.iter_mut().zip(w).zip(gammas) {
        *o = w * (r + g * c);
    }
    Ok(())
}

/// Classical RK4 to horizon `t_end`; the step is shortened so an integer number of steps lands on it.
pub fn simplified_particle_run(
    w0: &[f64],
    gammas: &[f64],
    r: f64,
    z_of_t: &dyn Fn(f64) -> f64,
    t_end: f64,
    dt: f64,
) -> Result<ParticleRun> {
    if w0.is_empty() || w0.len() != gammas.len() {
        return Err(invalid(format!("{} wealths for {} fractions", w0.len(), gammas.len())));
    }
    if w0.iter().any(|w| !(*w > 0.0)) {
        return Err(invalid("initial wealths must be > 0"));
    }
    if gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
        return Err(invalid("investment fractions must lie in (0, 1)"));
    }
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(invalid(format!("bad horizon {t_end} or step {dt}")));
    }
    let steps = ((t_end / dt) - 1e-9).ceil().max(0.0) as usize;
    let h = if steps > 0 { t_end / steps as f64 } else { 0.0 };
    let n = w0.len();
    let mut w = w0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut times = vec![0.0];
    let mut wealth = vec![w.clone()];
    for s in 0..steps {
        let t = s as f64 * h;
        rhs(&w, gammas, r, z_of_t(t), &mut k1)?;
        for i in 0..n {
            tmp[i] = w[i] + 0.5 * h * k1[i];
        }
        rhs(&tmp, gammas, r, z_of_t(t + 0.5 * h), &mut k2)?;
        for i in 0..n {
            tmp[i] = w[i] + 0.5 * h * k2[i];
        }
        rhs(&tmp, gammas, r, z_of_t(t + 0.5 * h), &mut k3)?;
        for i in 0..n {
            tmp[i] = w[i] + h * k3[i];
        }
        rhs(&tmp, gammas, r, z_of_t(t + h), &mut k4)?;
        for i in 0..n {
            w[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        times.push((s + 1) as f64 * h);
        wealth.push(w.clone());
    }
    Ok(ParticleRun { times, wealth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_dividend_is_pure_exponential_growth() {
        let w0 = [1.0, 2.5, 0.3];
        let run = simplified_particle_run(&w0, &[0.2, 0.5, 0.9], 0.04, &|_| 0.0, 1.0, 1e-3).unwrap();
        for (w, w0) in run.last().iter().zip(w0) {
            assert!((w / (w0 * 0.04f64.exp()) - 1.0).abs() < 1e-8);
        }
        assert_eq!(run.times.len(), 1001);
    }

    #[test]
    fn identical_agents_stay_identical() {
        let run = simplified_particle_run(&[1.5; 5], &[0.4; 5], 0.04, &|t| 0.1 + 0.05 * t, 2.0, 0.01).unwrap();
        let last = run.last();
        assert!(last.iter().all(|w| *w == last[0]));
    }

    #[test]
    fn two_agents_match_a_fine_euler_oracle() {
        let (w0, g, r) = ([1.0, 3.0], [0.25, 0.75], 0.04);
        let z = |t: f64| 0.1 * (1.0 + t);
        let run = simplified_particle_run(&w0, &g, r, &z, 1.0, 1e-2).unwrap();
        let h = 1e-6;
        let mut w = w0;
        for s in 0..1_000_000 {
            let t = s as f64 * h;
            let a = 0.5 * (w[0] * g[0] * (1.0 - g[0]) + w[1] * g[1] * (1.0 - g[1]));
            let d = [w[0] * (r + g[0] * z(t) / a), w[1] * (r + g[1] * z(t) / a)];
            w = [w[0] + h * d[0], w[1] + h * d[1]];
        }
        for (a, b) in run.last().iter().zip(w) {
            assert!((a / b - 1.0).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(simplified_particle_run(&[1.0], &[1.0], 0.0, &|_| 0.0, 1.0, 0.1).is_err());
        assert!(simplified_particle_run(&[-1.0], &[0.5], 0.0, &|_| 0.0, 1.0, 0.1).is_err());
        assert!(simplified_particle_run(&[], &[], 0.0, &|_| 0.0, 1.0, 0.1).is_err());
    }
}
