//! Franke–Westerhoff model with a time step.
//!
//! Two representative groups (fundamentalists and chartists) trade a single
//! asset whose log price `P` is moved by the aggregated excess demand. The
//! group fractions follow a transition-probability switching rule and can be
//! advanced by explicit Euler (the original difference equations when
//! `dt = 1`) or by the semi-implicit scheme
//!
//! ```text
//! n_f' = (n_f + dt pi_cf) / (1 + dt (pi_fc + pi_cf))
//! n_c' = (n_c + dt pi_fc) / (1 + dt (pi_fc + pi_cf))
//! ```
//!
//! which keeps both fractions inside `[0, 1]` for every `dt > 0`.
//!
//! Within a step everything is evaluated at the pre-step state: the switching
//! index and probabilities, the excess demand, then the price moves using the
//! current fractions, then the fractions move.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwParams {
    pub phi: f64,
    pub chi: f64,
    /// Predisposition; may be negative.
    pub alpha_p: f64,
    pub alpha_h: f64,
    pub alpha_m: f64,
    pub sigma_f: f64,
    pub sigma_c: f64,
    pub nu: f64,
    pub fundamental_price: f64,
    pub mu: f64,
    pub dt: f64,
    pub clamp_probabilities: bool,
}

impl FwParams {
    /// The published baseline calibration.
    pub fn baseline() -> Self {
        FwParams {
            phi: 0.18,
            chi: 2.3,
            alpha_p: -0.161,
            alpha_h: 1.3,
            alpha_m: 12.5,
            sigma_f: 0.79,
            sigma_c: 1.9,
            nu: 0.05,
            fundamental_price: 1.0,
            mu: 0.01,
            dt: 1.0,
            clamp_probabilities: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("phi", self.phi),
            ("chi", self.chi),
            ("alpha_h", self.alpha_h),
            ("alpha_m", self.alpha_m),
            ("sigma_f", self.sigma_f),
            ("sigma_c", self.sigma_c),
            ("nu", self.nu),
            ("mu", self.mu),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("FW parameter {name} must be finite and > 0, got {v}")));
            }
        }
        if !self.alpha_p.is_finite() || !self.fundamental_price.is_finite() {
            return Err(invalid("FW alpha_p and fundamental_price must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwState {
    pub log_price: f64,
    pub prev_log_price: f64,
    pub n_f: f64,
    pub n_c: f64,
    pub time: f64,
}

impl FwState {
    /// State at `t = 0` with a zero lagged return.
    pub fn new(log_price: f64, n_f: f64) -> Self {
        FwState {
            log_price,
            prev_log_price: log_price,
            n_f,
            n_c: 1.0 - n_f,
            time: 0.0,
        }
    }

    /// `P(0) = 1` with equally sized groups.
    pub fn baseline() -> Self {
        FwState::new(1.0, 0.5)
    }

    pub fn is_finite(&self) -> bool {
        self.log_price.is_finite() && self.n_f.is_finite() && self.n_c.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    ExplicitEuler,
    SemiImplicit,
}

/// `a = alpha_p + alpha_h (n_f - n_c) + alpha_m (P - F)^2`
pub fn switching_index(state: &FwState, params: &FwParams) -> f64 {
    let mis = state.log_price - params.fundamental_price;
    params.alpha_p + params.alpha_h * (state.n_f - state.n_c) + params.alpha_m * mis * mis
}

/// `(pi_cf, pi_fc)` without any error checking. Overflow saturates to `+inf`
/// before the optional clamp at 1.
fn raw_probabilities(a: f64, params: &FwParams) -> (f64, f64) {
    let cf = params.nu * a.exp();
    let fc = params.nu * (-a).exp();
    if params.clamp_probabilities {
        (cf.min(1.0), fc.min(1.0))
    } else {
        (cf, fc)
    }
}

/// Switching probabilities `(pi_cf, pi_fc) = (nu e^a, nu e^-a)`, capped at 1
/// when `clamp_probabilities` is set.
pub fn switching_probabilities(a: f64, params: &FwParams) -> Result<(f64, f64)> {
    let (cf, fc) = raw_probabilities(a, params);
    if !cf.is_finite() || !fc.is_finite() {
        return Err(Error::NumericOverflow(format!(
            "switching probabilities overflow at a = {a}"
        )));
    }
    Ok((cf, fc))
}

/// Deterministic excess demand using the lagged price change.
pub fn excess_demand(state: &FwState, params: &FwParams) -> f64 {
    let fundamentalist = state.n_f * params.phi * (params.fundamental_price - state.log_price);
    let chartist = state.n_c * params.chi * (state.log_price - state.prev_log_price) / params.dt;
    fundamentalist + chartist
}

/// Euler–Maruyama price update with an externally supplied standard-normal `eta`.
pub fn price_step(state: &FwState, params: &FwParams, eta: f64) -> f64 {
    let drift = params.mu * params.dt * excess_demand(state, params);
    let vol = params.mu * (state.n_f * params.sigma_f + state.n_c * params.sigma_c);
    state.log_price + drift + params.dt.sqrt() * vol * eta
}

fn explicit_fractions(n_f: f64, n_c: f64, pi_cf: f64, pi_fc: f64, dt: f64) -> (f64, f64) {
    let flow = dt * (n_c * pi_cf - n_f * pi_fc);
    (n_f + flow, n_c - flow)
}

fn semi_implicit_fractions(n_f: f64, n_c: f64, pi_cf: f64, pi_fc: f64, dt: f64) -> (f64, f64) {
    match (pi_cf.is_infinite(), pi_fc.is_infinite()) {
        // limits of the closed form as one rate dominates
        (true, false) => (1.0, 0.0),
        (false, true) => (0.0, 1.0),
        _ => {
            let denom = 1.0 + dt * (pi_fc + pi_cf);
            if denom.is_finite() {
                ((n_f + dt * pi_cf) / denom, (n_c + dt * pi_fc) / denom)
            } else {
                // dt * rate overflows: divide through by the larger rate first
                let k = 1.0 / pi_cf.max(pi_fc);
                let (a, b, eps) = (pi_cf * k, pi_fc * k, k / dt);
                let denom = eps + a + b;
                ((n_f * eps + a) / denom, (n_c * eps + b) / denom)
            }
        }
    }
}

/// Explicit Euler step of the fraction ODEs. Preserves `n_f + n_c` but not the bounds.
pub fn fractions_step_explicit(state: &FwState, params: &FwParams) -> (f64, f64) {
    let (cf, fc) = raw_probabilities(switching_index(state, params), params);
    explicit_fractions(state.n_f, state.n_c, cf, fc, params.dt)
}

/// Semi-implicit step: closed-form solution of
/// `n_f' = n_f + dt (n_c' pi_cf - n_f' pi_fc)` with `n_c' = 1 - n_f'`.
pub fn fractions_step_semi_implicit(state: &FwState, params: &FwParams) -> (f64, f64) {
    let (cf, fc) = raw_probabilities(switching_index(state, params), params);
    semi_implicit_fractions(state.n_f, state.n_c, cf, fc, params.dt)
}

/// One full step with an injected price shock.
pub fn fw_step_with_eta(state: &FwState, params: &FwParams, scheme: SchemeKind, eta: f64) -> FwState {
    let (cf, fc) = raw_probabilities(switching_index(state, params), params);
    let log_price = price_step(state, params, eta);
    let (n_f, n_c) = match scheme {
        SchemeKind::ExplicitEuler => explicit_fractions(state.n_f, state.n_c, cf, fc, params.dt),
        SchemeKind::SemiImplicit => semi_implicit_fractions(state.n_f, state.n_c, cf, fc, params.dt),
    };
    FwState {
        log_price,
        prev_log_price: state.log_price,
        n_f,
        n_c,
        time: state.time + params.dt,
    }
}

pub fn fw_step(state: &FwState, params: &FwParams, scheme: SchemeKind, rng: &mut RngStream) -> FwState {
    let eta = rng.standard_normal();
    fw_step_with_eta(state, params, scheme, eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwPoint {
    pub t: f64,
    pub log_price: f64,
    pub n_f: f64,
    pub n_c: f64,
}

impl From<&FwState> for FwPoint {
    fn from(s: &FwState) -> Self {
        FwPoint {
            t: s.time,
            log_price: s.log_price,
            n_f: s.n_f,
            n_c: s.n_c,
        }
    }
}

/// Recorded FW path. Index `k` of `points` is the state after `k` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwTrajectory {
    pub points: Vec<FwPoint>,
    /// First step whose state contained a non-finite value; that state is not recorded.
    pub first_nonfinite_step: Option<usize>,
}

pub fn fw_run(
    initial: &FwState,
    params: &FwParams,
    scheme: SchemeKind,
    steps: usize,
    rng: &mut RngStream,
) -> FwTrajectory {
    let mut points = Vec::with_capacity(steps + 1);
    points.push(FwPoint::from(initial));
    let mut state = *initial;
    for k in 1..=steps {
        state = fw_step(&state, params, scheme, rng);
        if !state.is_finite() {
            return FwTrajectory {
                points,
                first_nonfinite_step: Some(k),
            };
        }
        points.push(FwPoint::from(&state));
    }
    FwTrajectory {
        points,
        first_nonfinite_step: None,
    }
}

/// Drift and diffusion of the explicit continuous price SDE at `n = n_f - n_c`.
pub fn fw_continuous_coefficients(price: f64, n: f64, params: &FwParams) -> Result<(f64, f64)> {
    let share_f = 0.5 * (1.0 + n);
    let share_c = 0.5 * (1.0 - n);
    let denom = 1.0 - params.mu * share_c * params.chi;
    if !(denom > 0.0) {
        return Err(invalid(format!(
            "continuous FW form ill-posed: 1 - mu (1-n)/2 chi = {denom}"
        )));
    }
    let drift = params.mu * share_f * params.phi * (params.fundamental_price - price) / denom;
    let diffusion = params.mu * (share_f * params.sigma_f + share_c * params.sigma_c) / denom;
    Ok((drift, diffusion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn state(p: f64, prev: f64, n_f: f64) -> FwState {
        FwState {
            log_price: p,
            prev_log_price: prev,
            n_f,
            n_c: 1.0 - n_f,
            time: 0.0,
        }
    }

    #[test]
    fn switching_index_examples() {
        let p = FwParams::baseline();
        assert_relative_eq!(switching_index(&state(1.0, 1.0, 0.5), &p), -0.161);
        assert_relative_eq!(switching_index(&state(1.0, 1.0, 1.0), &p), 1.139, epsilon = 1e-12);
        assert_relative_eq!(switching_index(&state(1.1, 1.1, 0.5), &p), -0.036, epsilon = 1e-12);
    }

    #[test]
    fn probabilities() {
        let mut p = FwParams::baseline();
        let (cf, fc) = switching_probabilities(0.0, &p).unwrap();
        assert_eq!((cf, fc), (0.05, 0.05));
        for a in [-30.0, -3.2, 0.7, 12.0, 30.0] {
            let (cf, fc) = switching_probabilities(a, &p).unwrap();
            assert_relative_eq!(cf * fc, 0.0025, max_relative = 1e-12);
        }
        assert!(matches!(
            switching_probabilities(800.0, &p),
            Err(Error::NumericOverflow(_))
        ));
        p.clamp_probabilities = true;
        let (cf, fc) = switching_probabilities(10.0, &p).unwrap();
        assert_eq!(cf, 1.0);
        assert_relative_eq!(fc, 0.05 * (-10.0f64).exp());
        assert_eq!(switching_probabilities(800.0, &p).unwrap().0, 1.0);
    }

    #[test]
    fn excess_demand_examples() {
        let p = FwParams::baseline();
        assert_eq!(excess_demand(&state(1.0, 1.0, 0.3), &p), 0.0);
        assert_relative_eq!(excess_demand(&state(0.5, 0.5, 1.0), &p), 0.09, epsilon = 1e-15);
        assert_relative_eq!(excess_demand(&state(1.02, 1.0, 0.0), &p), 0.046, epsilon = 1e-14);
    }

    #[test]
    fn price_step_examples() {
        let p = FwParams::baseline();
        let s = state(1.0, 1.0, 0.5);
        assert_eq!(price_step(&s, &p, 0.0), 1.0);
        let s = state(0.5, 0.5, 1.0);
        assert_relative_eq!(price_step(&s, &p, 0.0), 0.5009, epsilon = 1e-15);
        let s = state(1.0, 1.0, 1.0);
        assert_relative_eq!(price_step(&s, &p, 1.0) - 1.0, 0.0079, epsilon = 1e-15);
    }

    /// Parameters with `a` pinned so that `pi_cf = pi_fc = nu`.
    fn neutral_params() -> FwParams {
        FwParams {
            alpha_p: 0.0,
            alpha_h: 1e-300,
            alpha_m: 1e-300,
            ..FwParams::baseline()
        }
    }

    #[test]
    fn explicit_fraction_examples() {
        let p = neutral_params();
        assert_eq!(fractions_step_explicit(&state(1.0, 1.0, 0.5), &p), (0.5, 0.5));
        let (f, c) = fractions_step_explicit(&state(1.0, 1.0, 0.4), &p);
        assert_relative_eq!(f, 0.41, epsilon = 1e-15);
        assert_relative_eq!(c, 0.59, epsilon = 1e-15);
        // all chartists, dt * pi_cf > 1 overshoots
        let p = FwParams {
            alpha_p: 3.0,
            dt: 2.0,
            ..neutral_params()
        };
        let (f, c) = fractions_step_explicit(&state(1.0, 1.0, 0.0), &p);
        assert!(f > 1.0 && c < 0.0);
        assert_relative_eq!(f + c, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn semi_implicit_fraction_examples() {
        let p = neutral_params();
        assert_eq!(fractions_step_semi_implicit(&state(1.0, 1.0, 0.5), &p), (0.5, 0.5));
        let (f, c) = fractions_step_semi_implicit(&state(1.0, 1.0, 0.4), &p);
        assert_relative_eq!(f, 0.45 / 1.1, epsilon = 1e-15);
        assert_relative_eq!(c, 0.65 / 1.1, epsilon = 1e-15);
        // pi_cf = 0.1, pi_fc = 0.05: nu = sqrt(0.005), a = ln(0.1 / nu)
        let nu = 0.005f64.sqrt();
        let p = FwParams {
            nu,
            alpha_p: (0.1 / nu).ln(),
            dt: 1e9,
            ..neutral_params()
        };
        let (f, _) = fractions_step_semi_implicit(&state(1.0, 1.0, 0.3), &p);
        assert_relative_eq!(f, 2.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn semi_implicit_handles_saturated_rates() {
        let p = FwParams {
            alpha_m: 5.0,
            ..FwParams::baseline()
        };
        let (f, c) = fractions_step_semi_implicit(&state(100.0, 100.0, 0.2), &p);
        assert_eq!((f, c), (1.0, 0.0));
        let p = FwParams {
            alpha_m: -5.0,
            ..p
        };
        let (f, c) = fractions_step_semi_implicit(&state(100.0, 100.0, 0.2), &p);
        assert_eq!((f, c), (0.0, 1.0));
        // finite rate whose product with dt overflows
        let p = FwParams {
            alpha_m: 1.0,
            alpha_h: 0.0,
            alpha_p: 0.0,
            nu: 5.0,
            dt: 10.0,
            ..p
        };
        let a: f64 = 708.0;
        let (f, c) = fractions_step_semi_implicit(&state(1.0 + a.sqrt(), 1.0 + a.sqrt(), 0.2), &p);
        assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&c));
        assert!((f - 1.0).abs() < 1e-12 && (f + c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_equilibrium_is_fixed() {
        let p = FwParams {
            sigma_f: 0.0,
            sigma_c: 0.0,
            ..neutral_params()
        };
        let s = state(1.0, 1.0, 0.5);
        for scheme in [SchemeKind::ExplicitEuler, SchemeKind::SemiImplicit] {
            let next = fw_step_with_eta(&s, &p, scheme, 0.37);
            assert_eq!((next.log_price, next.n_f, next.n_c), (1.0, 0.5, 0.5));
            assert_eq!(next.time, 1.0);
        }
    }

    #[test]
    fn empty_run_has_initial_state_only() {
        let mut rng = RngStream::new(0, 0);
        let traj = fw_run(&FwState::baseline(), &FwParams::baseline(), SchemeKind::SemiImplicit, 0, &mut rng);
        assert_eq!(traj.points.len(), 1);
        assert_eq!(traj.first_nonfinite_step, None);
    }

    #[test]
    fn continuous_coefficients() {
        let p = FwParams::baseline();
        for n in [-1.0, -0.3, 0.0, 0.8, 1.0] {
            assert_eq!(fw_continuous_coefficients(1.0, n, &p).unwrap().0, 0.0);
        }
        let (d, s) = fw_continuous_coefficients(0.5, 1.0, &p).unwrap();
        assert_relative_eq!(d, 0.01 * 0.18 * 0.5);
        assert_relative_eq!(s, 0.01 * 0.79);
        let (d, s) = fw_continuous_coefficients(0.0, 0.0, &p).unwrap();
        let denom = 1.0 - 0.01 * 2.3 / 2.0;
        assert_relative_eq!(d, 0.01 * 0.18 / 2.0 / denom, max_relative = 1e-14);
        assert_relative_eq!(s, 0.01 * (0.79 + 1.9) / 2.0 / denom, max_relative = 1e-14);
        let bad = FwParams { chi: 500.0, ..p };
        assert!(fw_continuous_coefficients(0.0, -1.0, &bad).is_err());
    }
}
