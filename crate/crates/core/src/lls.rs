//! Levy–Levy–Solomon market with an explicit time step.
//!
//! Agents split wealth between a bond paying `r` and a stock paying the
//! dividend `Z`. Each step every agent picks the stock fraction that
//! maximizes expected log wealth over its own window of past returns, the
//! choice is blurred by Gaussian noise and clamped to `[0.01, 0.99]`, and the
//! price is fixed by market clearance `n = sum_k gamma_k w_k / S`.
//!
//! Step returns divide by the price at the start of the step:
//! `x = ((S(t) - S(t-dt)) / dt + Z(t)) / S(t-dt)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

pub const GAMMA_MIN: f64 = 0.01;
pub const GAMMA_MAX: f64 = 0.99;

/// Width of the bracket returned by [`optimal_gamma`].
pub const GAMMA_TOLERANCE: f64 = 1e-10;

/// Threshold for the FOC denominators `dt (x - r) gamma + 1 + dt r`.
const DENOMINATOR_FLOOR: f64 = 1e-12;

/// `|f| <= INDIFFERENCE` at both ends of the range counts as total indifference.
const INDIFFERENCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// Memory is a time span; the lookback in steps is `floor(m / dt)`.
    Scaled,
    /// Memory is a number of steps regardless of `dt`.
    Fixed,
}

/// `count` consecutive agents sharing the base memory `memory`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryGroup {
    pub count: usize,
    pub memory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlsParams {
    pub num_agents: usize,
    pub interest_rate: f64,
    pub dividend_lo: f64,
    pub dividend_hi: f64,
    pub gamma_noise_sd: f64,
    pub dt: f64,
    pub total_shares: u64,
    pub memory_mode: MemoryMode,
    pub memory: Vec<MemoryGroup>,
    pub history_init_mean: f64,
    pub history_init_sd: f64,
}

/// Initial values shared by every agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlsInitial {
    pub wealth: f64,
    pub gamma: f64,
    pub price: f64,
    pub dividend: f64,
}

impl LlsParams {
    /// 100 agents with a 15-step memory.
    pub fn basic() -> Self {
        LlsParams {
            num_agents: 100,
            interest_rate: 0.04,
            dividend_lo: 0.05,
            dividend_hi: 0.05,
            gamma_noise_sd: 0.2,
            dt: 1.0,
            total_shares: 10_000,
            memory_mode: MemoryMode::Scaled,
            memory: vec![MemoryGroup {
                count: 100,
                memory: 15.0,
            }],
            history_init_mean: 0.0415,
            history_init_sd: 0.003,
        }
    }

    /// 99 agents in three memory groups (10, 141, 256 steps).
    pub fn three_groups() -> Self {
        LlsParams {
            num_agents: 99,
            interest_rate: 0.0001,
            dividend_lo: 0.00015,
            dividend_hi: 0.00015,
            gamma_noise_sd: 0.2,
            dt: 1.0,
            total_shares: 9_900,
            memory_mode: MemoryMode::Scaled,
            memory: vec![
                MemoryGroup { count: 33, memory: 10.0 },
                MemoryGroup { count: 33, memory: 141.0 },
                MemoryGroup { count: 33, memory: 256.0 },
            ],
            history_init_mean: 0.0415,
            history_init_sd: 0.003,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(invalid("LLS needs at least one agent"));
        }
        if !(self.interest_rate > 0.0 && self.interest_rate < 1.0) {
            return Err(invalid(format!("interest rate must lie in (0, 1), got {}", self.interest_rate)));
        }
        if !(self.dividend_lo <= self.dividend_hi) {
            return Err(invalid("dividend_lo must not exceed dividend_hi"));
        }
        if !(self.gamma_noise_sd >= 0.0) {
            return Err(invalid("gamma_noise_sd must be >= 0"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.total_shares == 0 {
            return Err(invalid("total_shares must be >= 1"));
        }
        if !(self.history_init_sd >= 0.0) {
            return Err(invalid("history_init_sd must be >= 0"));
        }
        let covered: usize = self.memory.iter().map(|g| g.count).sum();
        if covered != self.num_agents {
            return Err(invalid(format!(
                "memory groups cover {covered} agents, expected {}",
                self.num_agents
            )));
        }
        for g in &self.memory {
            let ok = match self.memory_mode {
                MemoryMode::Scaled => g.memory > 0.0,
                MemoryMode::Fixed => g.memory >= 1.0 && g.memory.fract() == 0.0,
            };
            if !ok {
                return Err(invalid(format!("invalid memory {} for {:?} mode", g.memory, self.memory_mode)));
            }
        }
        Ok(())
    }

    /// Lookback in steps for every agent, in agent order.
    pub fn effective_memories(&self) -> Vec<usize> {
        self.memory
            .iter()
            .flat_map(|g| std::iter::repeat_n(effective_memory(g.memory, self.dt, self.memory_mode), g.count))
            .collect()
    }

    pub fn max_effective_memory(&self) -> usize {
        self.memory
            .iter()
            .map(|g| effective_memory(g.memory, self.dt, self.memory_mode))
            .max()
            .unwrap_or(1)
    }
}

impl Default for LlsInitial {
    fn default() -> Self {
        LlsInitial {
            wealth: 1000.0,
            gamma: 0.4,
            price: 4.0,
            dividend: 0.2,
        }
    }
}

impl LlsInitial {
    pub fn three_groups() -> Self {
        LlsInitial {
            dividend: 0.004,
            ..LlsInitial::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlsAgent {
    pub wealth: f64,
    /// Stock fraction held over the coming step.
    pub gamma: f64,
    /// Stock fraction held over the step just completed.
    pub prev_gamma: f64,
    pub effective_memory: usize,
}

/// Most recent step returns, newest last.
///
/// Values are written twice, `capacity` apart, so the latest `m` returns are
/// always available as one contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnHistory {
    buf: Vec<f64>,
    capacity: usize,
    next: usize,
    len: usize,
}

impl ReturnHistory {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        ReturnHistory {
            buf: vec![0.0; 2 * capacity],
            capacity,
            next: 0,
            len: 0,
        }
    }

    pub fn from_values(capacity: usize, values: &[f64]) -> Self {
        let mut h = ReturnHistory::new(capacity);
        for &v in values {
            h.push(v);
        }
        h
    }

    pub fn push(&mut self, x: f64) {
        self.buf[self.next] = x;
        self.buf[self.next + self.capacity] = x;
        self.next = (self.next + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// The last `m` returns (fewer if not that many were pushed), oldest first.
    pub fn recent(&self, m: usize) -> &[f64] {
        let m = m.min(self.len);
        let end = self.next + self.capacity;
        &self.buf[end - m..end]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlsMarket {
    pub price: f64,
    pub prev_price: f64,
    pub dividend: f64,
    pub history: ReturnHistory,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlsState {
    pub agents: Vec<LlsAgent>,
    pub market: LlsMarket,
    pub step: usize,
}

impl LlsState {
    /// Identical agents, an artificial return history drawn from `rng`.
    pub fn initial(params: &LlsParams, init: &LlsInitial, rng: &mut RngStream) -> Result<Self> {
        params.validate()?;
        let history_values = init_history(params, rng)?;
        let agents = params
            .effective_memories()
            .into_iter()
            .map(|m| LlsAgent {
                wealth: init.wealth,
                gamma: init.gamma,
                prev_gamma: init.gamma,
                effective_memory: m,
            })
            .collect();
        Ok(LlsState {
            agents,
            market: LlsMarket {
                price: init.price,
                prev_price: init.price,
                dividend: init.dividend,
                history: ReturnHistory::from_values(history_values.len(), &history_values),
                time: 0.0,
            },
            step: 0,
        })
    }

    pub fn mean_wealth(&self) -> f64 {
        self.agents.iter().map(|a| a.wealth).sum::<f64>() / self.agents.len() as f64
    }

    /// `n - sum_k gamma_k w_k / S` for the current holdings.
    pub fn clearance_residual(&self, total_shares: f64) -> f64 {
        let demand: f64 = self.agents.iter().map(|a| a.gamma * a.wealth).sum::<f64>() / self.market.price;
        total_shares - demand
    }
}

/// `Z (1 + dt z)` with `z ~ U[z1, z2]`.
pub fn dividend_step(dividend: f64, params: &LlsParams, rng: &mut RngStream) -> Result<f64> {
    if !(dividend > 0.0) {
        return Err(invalid(format!("dividend must be > 0, got {dividend}")));
    }
    let z = rng.uniform(params.dividend_lo, params.dividend_hi)?;
    let next = dividend * (1.0 + params.dt * z);
    if !(next > 0.0) {
        return Err(invalid(format!("dividend step produced {next}")));
    }
    Ok(next)
}

pub fn step_return(price_new: f64, price_old: f64, dividend_new: f64, dt: f64) -> f64 {
    ((price_new - price_old) / dt + dividend_new) / price_old
}

/// Derivative of the expected log utility (up to the wealth factor) at `gamma`.
pub fn foc_value(gamma: f64, history: &[f64], r: f64, dt: f64) -> Result<f64> {
    check_history(history, r, dt)?;
    Ok(foc(gamma, history, r, dt).0)
}

/// `(f, f')` at `gamma`. Assumes the history was checked.
fn foc(gamma: f64, history: &[f64], r: f64, dt: f64) -> (f64, f64) {
    let base = 1.0 + dt * r;
    let (mut f, mut df) = (0.0, 0.0);
    for &x in history {
        let d = dt * (x - r);
        let q = d / (d * gamma + base);
        f += q;
        df -= q * q;
    }
    let m = history.len() as f64;
    (f / m, df / m)
}

fn check_history(history: &[f64], r: f64, dt: f64) -> Result<()> {
    if history.is_empty() {
        return Err(invalid("empty return history"));
    }
    let base = 1.0 + dt * r;
    for &x in history {
        let d = dt * (x - r);
        let worst = (d * GAMMA_MIN + base).min(d * GAMMA_MAX + base);
        if !(worst > DENOMINATOR_FLOOR) {
            return Err(Error::DegenerateHistory(format!(
                "return {x} makes the wealth factor {worst} non-positive"
            )));
        }
    }
    Ok(())
}

/// Expected log wealth factor `(1/m) sum ln(1 + dt r + dt (x_j - r) gamma)`.
pub fn expected_log_utility(gamma: f64, history: &[f64], r: f64, dt: f64) -> f64 {
    let base = 1.0 + dt * r;
    history.iter().map(|&x| (base + dt * (x - r) * gamma).ln()).sum::<f64>() / history.len() as f64
}

/// Maximizer over `[0.01, 0.99]`, or `None` when every gamma is equally good.
fn solve_gamma(history: &[f64], r: f64, dt: f64) -> Result<Option<f64>> {
    check_history(history, r, dt)?;
    let (f_lo, _) = foc(GAMMA_MIN, history, r, dt);
    let (f_hi, _) = foc(GAMMA_MAX, history, r, dt);
    if f_lo.abs() <= INDIFFERENCE && f_hi.abs() <= INDIFFERENCE {
        return Ok(None);
    }
    if f_lo <= 0.0 {
        return Ok(Some(GAMMA_MIN));
    }
    if f_hi >= 0.0 {
        return Ok(Some(GAMMA_MAX));
    }
    // f is strictly decreasing with f(lo) > 0 > f(hi): Newton steps kept
    // inside the bracket, bisection whenever Newton would leave it.
    let (mut lo, mut hi) = (GAMMA_MIN, GAMMA_MAX);
    let mut x = GAMMA_MIN - f_lo * (GAMMA_MAX - GAMMA_MIN) / (f_hi - f_lo);
    for _ in 0..200 {
        if hi - lo <= GAMMA_TOLERANCE {
            break;
        }
        let (f, df) = foc(x, history, r, dt);
        if f > 0.0 {
            lo = x;
        } else if f < 0.0 {
            hi = x;
        } else {
            return Ok(Some(x));
        }
        let newton = x - f / df;
        if (newton - x).abs() < 0.25 * GAMMA_TOLERANCE {
            // probe both sides to pin the bracket
            let probe_lo = (newton - 0.5 * GAMMA_TOLERANCE).max(lo);
            let probe_hi = (newton + 0.5 * GAMMA_TOLERANCE).min(hi);
            if foc(probe_lo, history, r, dt).0 > 0.0 {
                lo = probe_lo;
            }
            if foc(probe_hi, history, r, dt).0 < 0.0 {
                hi = probe_hi;
            }
            x = 0.5 * (lo + hi);
            continue;
        }
        x = if newton > lo && newton < hi && df < 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Optimal stock fraction for a window of returns; keeps `prev_gamma` at total indifference.
pub fn optimal_gamma(history: &[f64], r: f64, dt: f64, prev_gamma: f64) -> Result<f64> {
    Ok(solve_gamma(history, r, dt)?.unwrap_or(prev_gamma))
}

pub fn clamp_gamma(x: f64) -> f64 {
    x.clamp(GAMMA_MIN, GAMMA_MAX)
}

pub fn noisy_gamma(gamma_star: f64, params: &LlsParams, rng: &mut RngStream) -> Result<f64> {
    let eps = rng.normal(0.0, params.gamma_noise_sd)?;
    Ok(clamp_gamma(gamma_star + eps))
}

/// Wealth after one step holding `gamma_prev` in stock.
pub fn wealth_step(wealth: f64, gamma_prev: f64, r: f64, x: f64, dt: f64) -> Result<f64> {
    let next = wealth + dt * ((1.0 - gamma_prev) * r + gamma_prev * x) * wealth;
    if !(next > 0.0) {
        return Err(Error::Bankruptcy {
            agent: None,
            wealth: next,
        });
    }
    Ok(next)
}

/// Lookback in steps.
pub fn effective_memory(m: f64, dt: f64, mode: MemoryMode) -> usize {
    match mode {
        // the small offset keeps exact ratios such as 15 / 0.1 from flooring down
        MemoryMode::Scaled => ((m / dt + 1e-9).floor() as usize).max(1),
        MemoryMode::Fixed => (m.round() as usize).max(1),
    }
}

/// Artificial return history, one entry per step of the longest memory.
pub fn init_history(params: &LlsParams, rng: &mut RngStream) -> Result<Vec<f64>> {
    (0..params.max_effective_memory())
        .map(|_| rng.normal(params.history_init_mean, params.history_init_sd))
        .collect()
}

/// Coefficients of the post-step wealth as an affine function of the new price:
/// `w_i(S) = a_i + b_i S`.
fn wealth_affine(agent: &LlsAgent, market: &LlsMarket, dividend: f64, r: f64, dt: f64) -> (f64, f64) {
    let g = agent.gamma;
    let w = agent.wealth;
    let s0 = market.price;
    let a = w * (1.0 + dt * (1.0 - g) * r - g + g * dt * dividend / s0);
    let b = g * w / s0;
    (a, b)
}

/// Closed-form clearing price.
///
/// `agents[i].gamma` still holds the fraction used over the step just ending;
/// `new_gammas` are the fractions chosen for the coming step. The dividend is
/// the one paid at the end of the step (the value entering the step return).
pub fn clearance_price_explicit(
    agents: &[LlsAgent],
    new_gammas: &[f64],
    market: &LlsMarket,
    dividend: f64,
    params: &LlsParams,
) -> Result<f64> {
    let n = params.total_shares as f64;
    let (mut num, mut feedback) = (0.0, 0.0);
    for (agent, &g_new) in agents.iter().zip(new_gammas) {
        let (a, b) = wealth_affine(agent, market, dividend, params.interest_rate, params.dt);
        num += g_new * a;
        feedback += g_new * b;
    }
    let denom = 1.0 - feedback / n;
    if !(denom > 0.0) {
        return Err(Error::ClearanceFailure(format!("non-positive denominator {denom}")));
    }
    let price = num / n / denom;
    if !(price > 0.0) || !price.is_finite() {
        return Err(Error::ClearanceFailure(format!("non-positive price {price}")));
    }
    Ok(price)
}

/// Clearing price found by bracketing and bisecting the clearance residual,
/// re-running the wealth update at every candidate price.
pub fn clearance_price_fixed_point(
    agents: &[LlsAgent],
    new_gammas: &[f64],
    market: &LlsMarket,
    dividend: f64,
    params: &LlsParams,
) -> Result<f64> {
    let n = params.total_shares as f64;
    let r = params.interest_rate;
    let dt = params.dt;
    let residual = |s: f64| -> f64 {
        let x = step_return(s, market.price, dividend, dt);
        let demand: f64 = agents
            .iter()
            .zip(new_gammas)
            .map(|(agent, &g_new)| {
                let w = agent.wealth + dt * ((1.0 - agent.gamma) * r + agent.gamma * x) * agent.wealth;
                g_new * w
            })
            .sum();
        n - demand / s
    };

    let mut lo = 0.5 * market.price;
    let mut hi = 2.0 * market.price;
    let mut expansions = 0;
    while residual(lo) > 0.0 {
        lo *= 0.5;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::ClearanceFailure("no lower bracket".into()));
        }
    }
    while residual(hi) < 0.0 {
        hi *= 2.0;
        expansions += 1;
        if expansions > 400 {
            return Err(Error::ClearanceFailure("no upper bracket".into()));
        }
    }
    for _ in 0..300 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let price = 0.5 * (lo + hi);
    if !(price > 0.0) || !price.is_finite() {
        return Err(Error::ClearanceFailure(format!("non-positive price {price}")));
    }
    Ok(price)
}

/// Diagnostics of one completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct LlsStepReport {
    /// Optimal fractions before noise, in agent order.
    pub gamma_star: Vec<f64>,
    /// Number of `gamma_star` entries exactly on 0.01 or 0.99.
    pub boundary_count: usize,
    pub step_return: f64,
    /// `n - sum gamma_k w_k / S` after the wealth update.
    pub clearance_residual: f64,
}

/// Advances the market by one step:
/// optimal fractions per memory class, noise and clamp, new dividend, clearing
/// price, step return, wealth update with the previous fractions, history push.
pub fn lls_step(state: &mut LlsState, params: &LlsParams, rng: &mut RngStream) -> Result<LlsStepReport> {
    let step = state.step + 1;
    let r = params.interest_rate;
    let dt = params.dt;

    // Every agent sees the same history, so one solve per distinct lookback.
    let mut by_memory: BTreeMap<usize, Option<f64>> = BTreeMap::new();
    for agent in &state.agents {
        by_memory.entry(agent.effective_memory).or_insert(None);
    }
    let mut solved: BTreeMap<usize, Option<f64>> = BTreeMap::new();
    for &m in by_memory.keys() {
        let window = state.market.history.recent(m);
        let g = solve_gamma(window, r, dt).map_err(|e| e.at_step(step))?;
        solved.insert(m, g);
    }

    let mut gamma_star = Vec::with_capacity(state.agents.len());
    let mut new_gammas = Vec::with_capacity(state.agents.len());
    for agent in &state.agents {
        let star = solved[&agent.effective_memory].unwrap_or(agent.gamma);
        gamma_star.push(star);
        new_gammas.push(noisy_gamma(star, params, rng).map_err(|e| e.at_step(step))?);
    }
    let boundary_count = gamma_star
        .iter()
        .filter(|&&g| g == GAMMA_MIN || g == GAMMA_MAX)
        .count();

    let dividend = dividend_step(state.market.dividend, params, rng).map_err(|e| e.at_step(step))?;
    let price = clearance_price_explicit(&state.agents, &new_gammas, &state.market, dividend, params)
        .map_err(|e| e.at_step(step))?;
    debug_assert!({
        let oracle = clearance_price_fixed_point(&state.agents, &new_gammas, &state.market, dividend, params);
        matches!(oracle, Ok(p) if (p - price).abs() <= 1e-8 * price)
    });

    let x = step_return(price, state.market.price, dividend, dt);
    for (i, (agent, &g_new)) in state.agents.iter_mut().zip(&new_gammas).enumerate() {
        agent.wealth = wealth_step(agent.wealth, agent.gamma, r, x, dt).map_err(|e| {
            match e {
                Error::Bankruptcy { wealth, .. } => Error::Bankruptcy { agent: Some(i), wealth },
                other => other,
            }
            .at_step(step)
        })?;
        agent.prev_gamma = agent.gamma;
        agent.gamma = g_new;
    }

    let market = &mut state.market;
    market.prev_price = market.price;
    market.price = price;
    market.dividend = dividend;
    market.history.push(x);
    market.time += dt;
    state.step = step;

    let clearance_residual = state.clearance_residual(params.total_shares as f64);
    Ok(LlsStepReport {
        gamma_star,
        boundary_count,
        step_return: x,
        clearance_residual,
    })
}

/// One row of a recorded LLS path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlsPoint {
    pub t: f64,
    pub price: f64,
    pub dividend: f64,
    pub mean_wealth: f64,
    /// Share of this step's optimal fractions on the boundary (0 for the initial row).
    pub boundary_frac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlsTrajectory {
    pub points: Vec<LlsPoint>,
    /// Boundary count per step (entry `k` is step `k + 1`).
    pub boundary_counts: Vec<usize>,
    pub max_abs_residual: f64,
}

/// Runs `steps` steps from `state`, recording one row per step.
pub fn lls_run(state: &mut LlsState, params: &LlsParams, steps: usize, rng: &mut RngStream) -> Result<LlsTrajectory> {
    let mut points = Vec::with_capacity(steps + 1);
    points.push(LlsPoint {
        t: state.market.time,
        price: state.market.price,
        dividend: state.market.dividend,
        mean_wealth: state.mean_wealth(),
        boundary_frac: 0.0,
    });
    let mut boundary_counts = Vec::with_capacity(steps);
    let mut max_abs_residual: f64 = 0.0;
    let n_agents = state.agents.len() as f64;
    for _ in 0..steps {
        let report = lls_step(state, params, rng)?;
        max_abs_residual = max_abs_residual.max(report.clearance_residual.abs());
        boundary_counts.push(report.boundary_count);
        points.push(LlsPoint {
            t: state.market.time,
            price: state.market.price,
            dividend: state.market.dividend,
            mean_wealth: state.mean_wealth(),
            boundary_frac: report.boundary_count as f64 / n_agents,
        });
    }
    Ok(LlsTrajectory {
        points,
        boundary_counts,
        max_abs_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params_dt(dt: f64) -> LlsParams {
        LlsParams { dt, ..LlsParams::basic() }
    }

    #[test]
    fn dividend_examples() {
        let mut rng = RngStream::new(0, 0);
        let p = LlsParams::basic();
        assert_relative_eq!(dividend_step(0.2, &p, &mut rng).unwrap(), 0.21, epsilon = 1e-15);
        let p0 = LlsParams { dt: 0.0, ..p.clone() };
        assert_eq!(dividend_step(0.2, &p0, &mut rng).unwrap(), 0.2);
        assert!(dividend_step(0.0, &p, &mut rng).is_err());
        let crash = LlsParams {
            dividend_lo: -2.0,
            dividend_hi: -2.0,
            ..p
        };
        assert!(dividend_step(0.2, &crash, &mut rng).is_err());
    }

    #[test]
    fn return_examples() {
        assert_relative_eq!(step_return(4.0, 4.0, 0.2, 1.0), 0.05);
        assert_eq!(step_return(4.0, 4.0, 0.0, 1.0), 0.0);
        assert_relative_eq!(step_return(4.4, 4.0, 0.0, 1.0), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn foc_signs() {
        let r = 0.04;
        for g in [0.01, 0.3, 0.99] {
            assert_eq!(foc_value(g, &[r, r, r], r, 1.0).unwrap(), 0.0);
            assert!(foc_value(g, &[0.1, 0.2], r, 1.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn foc_hand_value() {
        // (0.06 / 1.07 + (-0.06) / 1.01) / 2
        let f = foc_value(0.5, &[0.1, -0.02], 0.04, 1.0).unwrap();
        assert_relative_eq!(f, (0.06 / 1.07 - 0.06 / 1.01) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_history_is_rejected() {
        // dt (x - r) 0.99 + 1 + dt r <= 0 for x = -1.1
        assert!(matches!(
            foc_value(0.5, &[-1.1], 0.04, 1.0),
            Err(Error::DegenerateHistory(_))
        ));
        assert!(optimal_gamma(&[0.05, -1.1], 0.04, 1.0, 0.4).is_err());
        assert!(optimal_gamma(&[], 0.04, 1.0, 0.4).is_err());
    }

    #[test]
    fn optimal_gamma_boundaries_and_indifference() {
        assert_eq!(optimal_gamma(&[0.1; 5], 0.04, 1.0, 0.4).unwrap(), GAMMA_MAX);
        assert_eq!(optimal_gamma(&[0.0; 5], 0.04, 1.0, 0.4).unwrap(), GAMMA_MIN);
        assert_eq!(optimal_gamma(&[0.04; 5], 0.04, 1.0, 0.37).unwrap(), 0.37);
    }

    #[test]
    fn optimal_gamma_interior_root() {
        let h = [0.5, -0.3];
        let g = optimal_gamma(&h, 0.04, 1.0, 0.4).unwrap();
        assert!(g > GAMMA_MIN && g < GAMMA_MAX);
        assert!(foc_value(g - 1e-9, &h, 0.04, 1.0).unwrap() > 0.0);
        assert!(foc_value(g + 1e-9, &h, 0.04, 1.0).unwrap() < 0.0);
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_gamma(1.2), 0.99);
        assert_eq!(clamp_gamma(-0.3), 0.01);
        assert_eq!(clamp_gamma(0.5), 0.5);
    }

    #[test]
    fn noisy_gamma_without_noise_is_identity() {
        let mut rng = RngStream::new(5, 0);
        let p = LlsParams {
            gamma_noise_sd: 0.0,
            ..LlsParams::basic()
        };
        assert_eq!(noisy_gamma(0.37, &p, &mut rng).unwrap(), 0.37);
        let p = LlsParams::basic();
        let mut rng = RngStream::new(5, 1);
        for _ in 0..100 {
            let g = noisy_gamma(0.99, &p, &mut rng).unwrap();
            assert!((GAMMA_MIN..=GAMMA_MAX).contains(&g));
        }
    }

    #[test]
    fn noisy_gamma_interior_mean() {
        let p = LlsParams::basic();
        let mut rng = RngStream::new(6, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| noisy_gamma(0.5, &p, &mut rng).unwrap()).sum::<f64>() / n as f64;
        // the clamp is symmetric about 0.5
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn wealth_examples() {
        assert_relative_eq!(wealth_step(1000.0, 0.0, 0.04, 0.3, 1.0).unwrap(), 1040.0);
        assert_relative_eq!(wealth_step(1000.0, 0.7, 0.04, 0.04, 1.0).unwrap(), 1040.0, epsilon = 1e-12);
        assert_relative_eq!(wealth_step(1000.0, 0.4, 0.04, 0.1, 1.0).unwrap(), 1064.0, epsilon = 1e-12);
        assert!(matches!(
            wealth_step(1000.0, 0.99, 0.04, -2.0, 1.0),
            Err(Error::Bankruptcy { .. })
        ));
    }

    #[test]
    fn effective_memory_examples() {
        assert_eq!(effective_memory(15.0, 1.0, MemoryMode::Scaled), 15);
        assert_eq!(effective_memory(15.0, 0.1, MemoryMode::Scaled), 150);
        assert_eq!(effective_memory(15.0, 0.01, MemoryMode::Scaled), 1500);
        assert_eq!(effective_memory(15.0, 0.01, MemoryMode::Fixed), 15);
        assert_eq!(effective_memory(0.5, 1.0, MemoryMode::Scaled), 1);
    }

    #[test]
    fn history_initialization() {
        let mut rng = RngStream::new(1, 0);
        let p = LlsParams {
            history_init_sd: 0.0,
            ..params_dt(0.1)
        };
        let h = init_history(&p, &mut rng).unwrap();
        assert_eq!(h.len(), 150);
        assert!(h.iter().all(|&x| x == 0.0415));
        let p = LlsParams {
            memory: vec![MemoryGroup { count: 100, memory: 10_000.0 }],
            ..LlsParams::basic()
        };
        let h = init_history(&p, &mut rng).unwrap();
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        assert!((mean - 0.0415).abs() < 0.001);
    }

    #[test]
    fn ring_buffer_keeps_latest_window() {
        let mut h = ReturnHistory::new(3);
        assert!(h.recent(2).is_empty());
        for v in [1.0, 2.0, 3.0, 4.0, 5.0] {
            h.push(v);
        }
        assert_eq!(h.recent(3), &[3.0, 4.0, 5.0]);
        assert_eq!(h.recent(2), &[4.0, 5.0]);
        assert_eq!(h.recent(10), &[3.0, 4.0, 5.0]);
    }

    fn uniform_market(n_agents: usize, gamma: f64) -> (Vec<LlsAgent>, LlsMarket) {
        let agents = vec![
            LlsAgent {
                wealth: 1000.0,
                gamma,
                prev_gamma: gamma,
                effective_memory: 15,
            };
            n_agents
        ];
        let market = LlsMarket {
            price: 4.0,
            prev_price: 4.0,
            dividend: 0.0,
            history: ReturnHistory::new(15),
            time: 0.0,
        };
        (agents, market)
    }

    #[test]
    fn clearance_initial_values_are_stationary() {
        // no bond or dividend income: the initial allocation clears at S = 4
        let (agents, market) = uniform_market(100, 0.4);
        let p = LlsParams {
            interest_rate: 0.0,
            ..LlsParams::basic()
        };
        let gammas = vec![0.4; 100];
        let s = clearance_price_explicit(&agents, &gammas, &market, 0.0, &p).unwrap();
        assert_relative_eq!(s, 4.0, max_relative = 1e-14);
        let s_fp = clearance_price_fixed_point(&agents, &gammas, &market, 0.0, &p).unwrap();
        assert_relative_eq!(s_fp, 4.0, max_relative = 1e-11);
    }

    #[test]
    fn clearance_without_feedback() {
        let (agents, market) = uniform_market(10, 0.0);
        let p = LlsParams::basic();
        let gammas: Vec<f64> = (0..10).map(|i| 0.05 + 0.09 * i as f64).collect();
        let expected = gammas.iter().map(|g| g * 1000.0 * 1.04).sum::<f64>() / 10_000.0;
        let s = clearance_price_fixed_point(&agents, &gammas, &market, 0.3, &p).unwrap();
        assert_relative_eq!(s, expected, max_relative = 1e-11);
        let s = clearance_price_explicit(&agents, &gammas, &market, 0.3, &p).unwrap();
        assert_relative_eq!(s, expected, max_relative = 1e-13);
    }

    #[test]
    fn clearance_rejects_saturated_market() {
        // agents already holding more than the share supply at the old price
        let (agents, market) = uniform_market(100, 0.99);
        let p = LlsParams::basic();
        let gammas = vec![0.99; 100];
        assert!(matches!(
            clearance_price_explicit(&agents, &gammas, &market, 0.2, &p),
            Err(Error::ClearanceFailure(_))
        ));
    }

    #[test]
    fn basic_step_is_deterministic_and_clears() {
        let p = LlsParams {
            gamma_noise_sd: 0.0,
            ..LlsParams::basic()
        };
        let run = || {
            let mut rng = RngStream::new(11, 0);
            let mut state = LlsState::initial(&p, &LlsInitial::default(), &mut rng).unwrap();
            let report = lls_step(&mut state, &p, &mut rng).unwrap();
            (state, report)
        };
        let (a, ra) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert!(ra.clearance_residual.abs() <= 1e-8 * 10_000.0);
        // identical agents stay identical
        assert!(a.agents.iter().all(|ag| *ag == a.agents[0]));
    }
}
