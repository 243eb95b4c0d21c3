//! Seeded experiment runners and their reports.
//!
//! Every ensemble member `k` of a cell draws from stream `(seed, k)`, so a cell
//! is reproducible on its own and independent of the sweep it sits in.
//! Results are gathered in `(cell, run_index)` order whatever the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fw::{fw_step, FwParams, FwState, FwTrajectory, SchemeKind};
use crate::lls::{lls_run, lls_step, LlsInitial, LlsParams, LlsState, LlsTrajectory, MemoryMode, GAMMA_MAX, GAMMA_MIN};
use crate::meanfield::ansatz::lognormal_initial;
use crate::meanfield::convergence::{convergence_rate_table, median, ConvergenceRow, GroupSpec};
use crate::meanfield::ou::{fw_frozen_n_simulate, grid_moments, ou_steady_state_numeric, OuSpec};
use crate::meanfield::{gaussian_cdf, ou_stationary_gaussian, w1_densities, w1_empirical_vs_density, GroupDensity, Grid1D};
use crate::rng::RngStream;

pub const PRICE_BOUND: f64 = 1e6;
pub const FRACTION_BOUND: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FwRun,
    FwStabilitySweep,
    LlsRun,
    LlsTimescaleSweep,
    MfConvergence,
    OuSteadystate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::FwRun,
        ExperimentKind::FwStabilitySweep,
        ExperimentKind::LlsRun,
        ExperimentKind::LlsTimescaleSweep,
        ExperimentKind::MfConvergence,
        ExperimentKind::OuSteadystate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FwRun => "fw_run",
            ExperimentKind::FwStabilitySweep => "fw_stability_sweep",
            ExperimentKind::LlsRun => "lls_run",
            ExperimentKind::LlsTimescaleSweep => "lls_timescale_sweep",
            ExperimentKind::MfConvergence => "mf_convergence",
            ExperimentKind::OuSteadystate => "ou_steadystate",
        }
    }
}

/// FW scheme as named in configs; the clamp is part of the scheme choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwScheme {
    Explicit,
    ExplicitClamped,
    SemiImplicit,
}

impl FwScheme {
    pub fn name(self) -> &'static str {
        match self {
            FwScheme::Explicit => "explicit",
            FwScheme::ExplicitClamped => "explicit_clamped",
            FwScheme::SemiImplicit => "semi_implicit",
        }
    }

    /// Kernel scheme and clamp flag.
    pub fn resolve(self) -> (SchemeKind, bool) {
        match self {
            FwScheme::Explicit => (SchemeKind::ExplicitEuler, false),
            FwScheme::ExplicitClamped => (SchemeKind::ExplicitEuler, true),
            FwScheme::SemiImplicit => (SchemeKind::SemiImplicit, false),
        }
    }
}

/// Sweep axes; an empty axis means "the config's single value".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub scheme: Vec<FwScheme>,
    pub sigma_f: Vec<f64>,
    pub dt: Vec<f64>,
    pub memory_mode: Vec<MemoryMode>,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
}

/// Mean-field convergence settings: log-normal start on a wealth grid, constant dividend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfSettings {
    pub groups: Vec<GroupSpec>,
    pub interest_rate: f64,
    pub dividend: f64,
    pub horizon: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub num_cells: usize,
    pub log_mean: f64,
    pub log_var: f64,
    pub particle_dt: f64,
    pub replicates: usize,
}

impl Default for MfSettings {
    fn default() -> Self {
        MfSettings {
            groups: GroupSpec::three_groups(),
            interest_rate: 0.04,
            dividend: 0.1,
            horizon: 1.0,
            w_min: 0.005,
            w_max: 200.0,
            num_cells: 10_000,
            log_mean: 0.0,
            log_var: 1.0,
            particle_dt: 0.01,
            replicates: 20,
        }
    }
}

/// Steady-state comparison settings for the frozen-fraction price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSettings {
    pub n_fixed: f64,
    pub num_cells: usize,
    pub tolerance: f64,
    pub max_steps: usize,
    pub samples: usize,
    pub burn_in: usize,
    /// Independent exact-OU chains used to estimate the W1 sampling noise.
    pub noise_replicates: usize,
    /// Cells of the fine grid carrying the analytic density for sample comparisons.
    pub reference_cells: usize,
}

impl Default for OuSettings {
    fn default() -> Self {
        OuSettings {
            n_fixed: 0.0,
            num_cells: 800,
            tolerance: 1e-10,
            max_steps: 50_000_000,
            samples: 1_000_000,
            burn_in: 20_000,
            noise_replicates: 20,
            reference_cells: 8000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub scheme: FwScheme,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub runs: usize,
    pub sweep: SweepAxes,
    pub fw: FwParams,
    pub lls: LlsParams,
    pub lls_initial: LlsInitial,
    pub meanfield: MfSettings,
    pub ou: OuSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl ExperimentConfig {
    /// Defaults for `experiment`: FW baseline table, LLS basic table, 100 runs.
    pub fn new(experiment: ExperimentKind) -> Self {
        let lls = LlsParams::basic();
        let fw = FwParams::baseline();
        let steps = match experiment {
            ExperimentKind::LlsRun | ExperimentKind::LlsTimescaleSweep => lls_steps_for(LLS_HORIZON, lls.dt),
            _ => 20_000,
        };
        ExperimentConfig {
            experiment,
            preset: None,
            scheme: FwScheme::Explicit,
            dt: 1.0,
            steps,
            seed: 1,
            runs: match experiment {
                ExperimentKind::FwRun | ExperimentKind::LlsRun => 1,
                _ => 100,
            },
            sweep: SweepAxes::default(),
            fw,
            lls,
            lls_initial: LlsInitial::default(),
            meanfield: MfSettings::default(),
            ou: OuSettings::default(),
            out: None,
        }
    }

    /// Copies the top-level `dt` into the model blocks and checks every invariant.
    pub fn validate(&mut self) -> Result<()> {
        if self.runs == 0 {
            return Err(invalid("runs must be >= 1"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        self.fw.dt = self.dt;
        self.lls.dt = self.dt;
        self.fw.clamp_probabilities = self.scheme == FwScheme::ExplicitClamped;
        let positive = |name: &str, xs: &[f64]| -> Result<()> {
            match xs.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
                Some(x) => Err(invalid(format!("sweep.{name} entries must be > 0, got {x}"))),
                None => Ok(()),
            }
        };
        positive("dt", &self.sweep.dt)?;
        positive("sigma_f", &self.sweep.sigma_f)?;
        match self.experiment {
            ExperimentKind::FwRun | ExperimentKind::FwStabilitySweep => self.fw.validate()?,
            ExperimentKind::LlsRun | ExperimentKind::LlsTimescaleSweep => {
                self.lls.validate()?;
                if !(self.lls_initial.wealth > 0.0 && self.lls_initial.price > 0.0 && self.lls_initial.dividend > 0.0) {
                    return Err(invalid("LLS initial wealth, price and dividend must be > 0"));
                }
            }
            ExperimentKind::MfConvergence => {
                let mf = &self.meanfield;
                let total: f64 = mf.groups.iter().map(|g| g.weight).sum();
                if mf.groups.is_empty() || (total - 1.0).abs() > 1e-12 {
                    return Err(invalid("meanfield.groups must be non-empty with weights summing to 1"));
                }
                let n = if self.sweep.n.is_empty() { vec![100, 1000, 10_000] } else { self.sweep.n.clone() };
                if n.len() < 3 || n.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid(format!("sweep.N must hold >= 3 ascending sizes, got {n:?}")));
                }
                if mf.replicates == 0 || !(mf.horizon >= 0.0) || !(mf.particle_dt > 0.0) || !(mf.log_var > 0.0) {
                    return Err(invalid("meanfield replicates, horizon, particle_dt or log_var out of range"));
                }
                Grid1D::wealth(mf.w_min, mf.w_max, mf.num_cells)?;
            }
            ExperimentKind::OuSteadystate => {
                self.fw.validate()?;
                OuSpec::from_fw(&self.fw, self.ou.n_fixed)?;
                if self.ou.num_cells < 16 || self.ou.reference_cells < 16 || self.ou.samples == 0 {
                    return Err(invalid("ou cells and samples must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Horizon of an LLS run in time units.
pub const LLS_HORIZON: f64 = 200.0;

pub fn lls_steps_for(horizon: f64, dt: f64) -> usize {
    (horizon / dt).round() as usize
}

/// Runs discarded from the start of every boundary-fraction average.
pub fn warm_up(steps: usize) -> usize {
    steps / 10
}

// ---------------------------------------------------------------------------
// Aggregates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub name: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl MetricStats {
    pub fn from_values(name: &str, values: &[f64]) -> Self {
        let count = values.len();
        let (mean, min, max) = if count == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                values.iter().sum::<f64>() / count as f64,
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        MetricStats {
            name: name.to_string(),
            mean,
            min,
            max,
            count,
        }
    }

    pub fn single(name: &str, value: f64) -> Self {
        MetricStats::from_values(name, &[value])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    /// Sweep coordinates of the cell, as `(axis, value)`.
    pub keys: Vec<(String, String)>,
    pub runs_completed: usize,
    pub runs_errored: usize,
    pub metrics: Vec<MetricStats>,
}

impl CellStats {
    pub fn metric(&self, name: &str) -> Option<&MetricStats> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub cells: Vec<CellStats>,
}

impl EnsembleStats {
    pub fn cell(&self, keys: &[(&str, &str)]) -> Option<&CellStats> {
        self.cells.iter().find(|c| {
            keys.iter()
                .all(|(k, v)| c.keys.iter().any(|(ck, cv)| ck == k && cv == v))
        })
    }
}

// ---------------------------------------------------------------------------
// FW

/// First step at which a value is non-finite, `|P|` exceeds `price_bound`, or
/// `n_f` leaves `[-fraction_bound, 1 + fraction_bound]`.
pub fn detect_blowup(trajectory: &FwTrajectory, price_bound: f64, fraction_bound: f64) -> Option<usize> {
    trajectory
        .points
        .iter()
        .position(|p| out_of_bounds(p.log_price, p.n_f, p.n_c, price_bound, fraction_bound))
        .or(trajectory.first_nonfinite_step)
}

fn out_of_bounds(p: f64, n_f: f64, n_c: f64, price_bound: f64, fraction_bound: f64) -> bool {
    !p.is_finite()
        || !n_f.is_finite()
        || !n_c.is_finite()
        || p.abs() > price_bound
        || n_f < -fraction_bound
        || n_f > 1.0 + fraction_bound
}

/// Summary of one FW run, computed on the fly so long runs need no storage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwRunOutcome {
    pub run_index: u64,
    /// First step flagged by [`detect_blowup`]'s criteria.
    pub first_bad_step: Option<usize>,
    pub first_nonfinite_step: Option<usize>,
    /// First step with `n_f` or `n_c` outside `[0, 1]`.
    pub first_bound_violation: Option<usize>,
    /// Largest distance of `n_f`, `n_c` from `[0, 1]` over finite states.
    pub max_bound_excursion: f64,
    /// Largest `|n_f + n_c - 1|` over the states before the first flag.
    pub max_sum_defect: f64,
}

/// Streams one FW run and records where it first misbehaves.
pub fn fw_run_outcome(
    initial: &FwState,
    params: &FwParams,
    scheme: SchemeKind,
    steps: usize,
    rng: &mut RngStream,
) -> FwRunOutcome {
    let mut out = FwRunOutcome {
        run_index: rng.run_index(),
        first_bad_step: None,
        first_nonfinite_step: None,
        first_bound_violation: None,
        max_bound_excursion: 0.0,
        max_sum_defect: (initial.n_f + initial.n_c - 1.0).abs(),
    };
    let mut state = *initial;
    for k in 1..=steps {
        state = fw_step(&state, params, scheme, rng);
        if !state.is_finite() {
            out.first_nonfinite_step = Some(k);
            out.first_bad_step.get_or_insert(k);
            break;
        }
        let excursion = [-state.n_f, state.n_f - 1.0, -state.n_c, state.n_c - 1.0]
            .into_iter()
            .fold(0.0, f64::max);
        if excursion > 0.0 {
            out.first_bound_violation.get_or_insert(k);
            out.max_bound_excursion = out.max_bound_excursion.max(excursion);
        }
        if out.first_bad_step.is_none() {
            if out_of_bounds(state.log_price, state.n_f, state.n_c, PRICE_BOUND, FRACTION_BOUND) {
                out.first_bad_step = Some(k);
            } else {
                out.max_sum_defect = out.max_sum_defect.max((state.n_f + state.n_c - 1.0).abs());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupCell {
    pub scheme: FwScheme,
    pub sigma_f: f64,
    pub dt: f64,
    pub steps: usize,
    pub runs: Vec<FwRunOutcome>,
    pub blowup_rate: f64,
    pub nonfinite_count: usize,
    pub bound_violation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub cells: Vec<BlowupCell>,
}

impl BlowupReport {
    pub fn cell(&self, scheme: FwScheme, sigma_f: f64, dt: f64) -> Option<&BlowupCell> {
        self.cells
            .iter()
            .find(|c| c.scheme == scheme && c.sigma_f == sigma_f && c.dt == dt)
    }

    pub fn to_stats(&self) -> EnsembleStats {
        EnsembleStats {
            cells: self
                .cells
                .iter()
                .map(|c| CellStats {
                    keys: vec![
                        ("scheme".into(), c.scheme.name().into()),
                        ("sigma_f".into(), c.sigma_f.to_string()),
                        ("dt".into(), c.dt.to_string()),
                    ],
                    runs_completed: c.runs.len(),
                    runs_errored: 0,
                    metrics: vec![
                        MetricStats::single("blowup_rate", c.blowup_rate),
                        MetricStats::single("nonfinite_count", c.nonfinite_count as f64),
                        MetricStats::single("bound_violation_count", c.bound_violation_count as f64),
                        MetricStats::from_values(
                            "max_bound_excursion",
                            &c.runs.iter().map(|r| r.max_bound_excursion).collect::<Vec<_>>(),
                        ),
                        MetricStats::from_values(
                            "max_sum_defect",
                            &c.runs.iter().map(|r| r.max_sum_defect).collect::<Vec<_>>(),
                        ),
                    ],
                })
                .collect(),
        }
    }
}

fn axis_or<T: Clone>(axis: &[T], default: T) -> Vec<T> {
    if axis.is_empty() {
        vec![default]
    } else {
        axis.to_vec()
    }
}

/// Ensemble of one FW cell, runs `0..runs` of stream `seed`.
pub fn fw_ensemble(
    params: &FwParams,
    scheme: FwScheme,
    steps: usize,
    seed: u64,
    runs: usize,
) -> BlowupCell {
    let (kind, clamp) = scheme.resolve();
    let params = FwParams {
        clamp_probabilities: clamp,
        ..*params
    };
    let outcomes: Vec<FwRunOutcome> = (0..runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k);
            fw_run_outcome(&FwState::baseline(), &params, kind, steps, &mut rng)
        })
        .collect();
    let flagged = outcomes.iter().filter(|o| o.first_bad_step.is_some()).count();
    BlowupCell {
        scheme,
        sigma_f: params.sigma_f,
        dt: params.dt,
        steps,
        blowup_rate: flagged as f64 / runs as f64,
        nonfinite_count: outcomes.iter().filter(|o| o.first_nonfinite_step.is_some()).count(),
        bound_violation_count: outcomes.iter().filter(|o| o.first_bound_violation.is_some()).count(),
        runs: outcomes,
    }
}

/// Every (scheme, sigma_f, dt) cell over a fixed horizon `steps * dt`.
pub fn run_fw_stability_sweep(config: &ExperimentConfig) -> Result<BlowupReport> {
    let horizon = config.steps as f64 * config.dt;
    let mut cells = Vec::new();
    for scheme in axis_or(&config.sweep.scheme, config.scheme) {
        for sigma_f in axis_or(&config.sweep.sigma_f, config.fw.sigma_f) {
            for dt in axis_or(&config.sweep.dt, config.dt) {
                let params = FwParams {
                    sigma_f,
                    dt,
                    ..config.fw
                };
                params.validate()?;
                let steps = (horizon / dt).round() as usize;
                cells.push(fw_ensemble(&params, scheme, steps, config.seed, config.runs));
            }
        }
    }
    Ok(BlowupReport { cells })
}

// ---------------------------------------------------------------------------
// LLS

/// Share of entries sitting exactly on 0.01 or 0.99.
pub fn boundary_fraction(gamma_matrix: &[Vec<f64>]) -> f64 {
    let total: usize = gamma_matrix.iter().map(Vec::len).sum();
    if total == 0 {
        return f64::NAN;
    }
    let hits = gamma_matrix
        .iter()
        .flatten()
        .filter(|&&g| g == GAMMA_MIN || g == GAMMA_MAX)
        .count();
    hits as f64 / total as f64
}

/// Summary of one LLS run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlsRunOutcome {
    pub run_index: u64,
    /// Boundary share of optimal fractions over the post-warm-up steps.
    pub boundary_fraction: f64,
    pub final_price: f64,
    pub max_abs_residual: f64,
    pub error: Option<String>,
}

/// One LLS run to `steps`, averaging boundary shares after `warm_up(steps)`.
pub fn lls_run_outcome(params: &LlsParams, initial: &LlsInitial, steps: usize, rng: &mut RngStream) -> LlsRunOutcome {
    let run_index = rng.run_index();
    let failed = |e: Error| LlsRunOutcome {
        run_index,
        boundary_fraction: f64::NAN,
        final_price: f64::NAN,
        max_abs_residual: f64::NAN,
        error: Some(e.to_string()),
    };
    let mut state = match LlsState::initial(params, initial, rng) {
        Ok(s) => s,
        Err(e) => return failed(e),
    };
    let skip = warm_up(steps);
    let (mut hits, mut counted) = (0usize, 0usize);
    let mut max_abs_residual: f64 = 0.0;
    for k in 0..steps {
        match lls_step(&mut state, params, rng) {
            Ok(rep) => {
                max_abs_residual = max_abs_residual.max(rep.clearance_residual.abs());
                if k >= skip {
                    hits += rep.boundary_count;
                    counted += rep.gamma_star.len();
                }
            }
            Err(e) => return failed(e),
        }
    }
    LlsRunOutcome {
        run_index,
        boundary_fraction: if counted > 0 { hits as f64 / counted as f64 } else { f64::NAN },
        final_price: state.market.price,
        max_abs_residual,
        error: None,
    }
}

fn lls_cell_stats(keys: Vec<(String, String)>, outcomes: &[LlsRunOutcome]) -> CellStats {
    let ok: Vec<&LlsRunOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
    let pick = |f: fn(&LlsRunOutcome) -> f64| ok.iter().map(|o| f(o)).collect::<Vec<f64>>();
    CellStats {
        keys,
        runs_completed: ok.len(),
        runs_errored: outcomes.len() - ok.len(),
        metrics: vec![
            MetricStats::from_values("boundary_fraction", &pick(|o| o.boundary_fraction)),
            MetricStats::from_values("final_price", &pick(|o| o.final_price)),
            MetricStats::from_values("max_abs_residual", &pick(|o| o.max_abs_residual)),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlsSweepCell {
    pub dt: f64,
    pub memory_mode: MemoryMode,
    pub steps: usize,
    pub warm_up: usize,
    pub runs: Vec<LlsRunOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlsSweepReport {
    pub cells: Vec<LlsSweepCell>,
    pub stats: EnsembleStats,
}

/// Every (dt, memory mode) cell over the horizon `steps * dt` of the config.
pub fn run_lls_timescale_sweep(config: &ExperimentConfig) -> Result<LlsSweepReport> {
    let horizon = config.steps as f64 * config.dt;
    let mut cells = Vec::new();
    let mut stats = EnsembleStats::default();
    for mode in axis_or(&config.sweep.memory_mode, config.lls.memory_mode) {
        for dt in axis_or(&config.sweep.dt, config.dt) {
            let params = LlsParams {
                dt,
                memory_mode: mode,
                ..config.lls.clone()
            };
            params.validate()?;
            let steps = lls_steps_for(horizon, dt);
            let runs: Vec<LlsRunOutcome> = (0..config.runs as u64)
                .into_par_iter()
                .map(|k| {
                    let mut rng = RngStream::new(config.seed, k);
                    lls_run_outcome(&params, &config.lls_initial, steps, &mut rng)
                })
                .collect();
            stats.cells.push(lls_cell_stats(
                vec![
                    ("memory_mode".into(), mode_name(mode).into()),
                    ("dt".into(), dt.to_string()),
                ],
                &runs,
            ));
            cells.push(LlsSweepCell {
                dt,
                memory_mode: mode,
                steps,
                warm_up: warm_up(steps),
                runs,
            });
        }
    }
    Ok(LlsSweepReport { cells, stats })
}

pub fn mode_name(mode: MemoryMode) -> &'static str {
    match mode {
        MemoryMode::Scaled => "scaled",
        MemoryMode::Fixed => "fixed",
    }
}

// ---------------------------------------------------------------------------
// Single runs

pub fn run_fw(config: &ExperimentConfig) -> Result<Vec<FwTrajectory>> {
    let (kind, clamp) = config.scheme.resolve();
    let params = FwParams {
        clamp_probabilities: clamp,
        dt: config.dt,
        ..config.fw
    };
    params.validate()?;
    Ok((0..config.runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(config.seed, k);
            crate::fw::fw_run(&FwState::baseline(), &params, kind, config.steps, &mut rng)
        })
        .collect())
}

pub fn run_lls(config: &ExperimentConfig) -> Result<Vec<LlsTrajectory>> {
    let params = LlsParams {
        dt: config.dt,
        ..config.lls.clone()
    };
    params.validate()?;
    (0..config.runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(config.seed, k);
            let mut state = LlsState::initial(&params, &config.lls_initial, &mut rng)?;
            lls_run(&mut state, &params, config.steps, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Mean field

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub stats: EnsembleStats,
    /// Mean-field density at the horizon, for export.
    pub final_density: GroupDensity,
}

pub fn run_mf_convergence(config: &ExperimentConfig) -> Result<MfConvergenceReport> {
    let mf = &config.meanfield;
    let grid = Grid1D::wealth(mf.w_min, mf.w_max, mf.num_cells)?;
    let initial = lognormal_initial(&mf.groups, grid, mf.log_mean, mf.log_var)?;
    let n_list = axis_or(&config.sweep.n, 0);
    let n_list = if n_list == [0] { vec![100, 1000, 10_000] } else { n_list };
    let z = mf.dividend;
    let z_of_t = move |_: f64| z;
    let rows = convergence_rate_table(
        &initial,
        mf.interest_rate,
        &z_of_t,
        mf.horizon,
        &n_list,
        mf.replicates,
        mf.particle_dt,
        config.seed,
    )?;
    let sol = crate::meanfield::mf_solve(&initial, &z_of_t, mf.interest_rate, mf.horizon, f64::INFINITY)?;
    let stats = EnsembleStats {
        cells: rows
            .iter()
            .map(|r| CellStats {
                keys: vec![("N".into(), r.n.to_string())],
                runs_completed: r.w1_end.len(),
                runs_errored: 0,
                metrics: vec![
                    MetricStats::single("w1_start_median", r.median_start),
                    MetricStats::single("w1_end_median", r.median_end),
                    MetricStats::from_values("w1_start", &r.w1_start),
                    MetricStats::from_values("w1_end", &r.w1_end),
                ],
            })
            .collect(),
    };
    Ok(MfConvergenceReport {
        rows,
        stats,
        final_density: sol.density,
    })
}

// ---------------------------------------------------------------------------
// Frozen-fraction steady state

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuReport {
    pub spec: OuSpec,
    pub analytic_mean: f64,
    pub analytic_var: f64,
    /// Centre implied by the printed closed-form exponent; differs from `analytic_mean`.
    pub printed_center: f64,
    pub printed_center_flagged: bool,
    pub grid: Grid1D,
    pub numeric: Vec<f64>,
    pub analytic: Vec<f64>,
    pub numeric_steps: usize,
    pub numeric_mean: f64,
    pub numeric_var: f64,
    pub l1_numeric: f64,
    pub w1_numeric: f64,
    pub mc_mean: f64,
    pub mc_var: f64,
    pub mc_effective_size: f64,
    /// Standard error of the sample mean with the autocorrelation-adjusted size.
    pub mc_mean_se: f64,
    pub mc_w1: f64,
    /// Root mean square W1 of independent exact-OU chains of the same length.
    pub mc_w1_noise: f64,
    pub stats: EnsembleStats,
}

/// W1 between a sample and `N(mean, var)` represented on a fine grid.
fn w1_to_gaussian(samples: &[f64], mean: f64, var: f64, cells: usize) -> Result<f64> {
    let sd = var.sqrt();
    let grid = Grid1D::new(mean - 10.0 * sd, mean + 10.0 * sd, cells)?;
    w1_empirical_vs_density(samples, &grid, &grid.project_cdf(gaussian_cdf(mean, var)))
}

/// Stationary exact-OU chain sampled every `dt`.
fn exact_ou_chain(spec: &OuSpec, dt: f64, len: usize, rng: &mut RngStream) -> Vec<f64> {
    let (mean, var) = ou_stationary_gaussian(spec);
    let rho = (-spec.drift_rate * dt).exp();
    let innov = (var * (1.0 - rho * rho)).sqrt();
    let mut x = mean + var.sqrt() * rng.standard_normal();
    (0..len)
        .map(|_| {
            x = mean + rho * (x - mean) + innov * rng.standard_normal();
            x
        })
        .collect()
}

pub fn run_ou_steadystate(config: &ExperimentConfig) -> Result<OuReport> {
    let ou = &config.ou;
    let params = FwParams { dt: config.dt, ..config.fw };
    let spec = OuSpec::from_fw(&params, ou.n_fixed)?;
    let (mean, var) = ou_stationary_gaussian(&spec);
    let sd = var.sqrt();
    let grid = Grid1D::new(mean - 8.0 * sd, mean + 8.0 * sd, ou.num_cells)?;
    let numeric = ou_steady_state_numeric(&spec, &grid, None, ou.tolerance, ou.max_steps)?;
    let analytic = grid.project_cdf(gaussian_cdf(mean, var));
    let (numeric_mean, numeric_var) = grid_moments(&grid, &numeric.values);
    let l1_numeric = numeric.values.iter().zip(&analytic).map(|(a, b)| (a - b).abs()).sum::<f64>() * grid.dx();
    let w1_numeric = w1_densities(&grid, &numeric.values, &analytic)?;

    let mut rng = RngStream::new(config.seed, 0);
    let samples = fw_frozen_n_simulate(&params, ou.n_fixed, ou.samples, ou.burn_in, &mut rng)?;
    let m = samples.len() as f64;
    let mc_mean = samples.iter().sum::<f64>() / m;
    let mc_var = samples.iter().map(|x| (x - mc_mean).powi(2)).sum::<f64>() / (m - 1.0);
    let rho = 1.0 - spec.drift_rate * params.dt;
    let mc_effective_size = m * (1.0 - rho) / (1.0 + rho);
    let mc_mean_se = sd / mc_effective_size.sqrt();
    let mc_w1 = w1_to_gaussian(&samples, mean, var, ou.reference_cells)?;
    drop(samples);
    let noise: Vec<f64> = (0..ou.noise_replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(config.seed, 1 + k);
            let chain = exact_ou_chain(&spec, params.dt, ou.samples, &mut rng);
            w1_to_gaussian(&chain, mean, var, ou.reference_cells)
        })
        .collect::<Result<_>>()?;
    let mc_w1_noise = (noise.iter().map(|w| w * w).sum::<f64>() / noise.len().max(1) as f64).sqrt();

    let printed_center = spec.printed_center();
    let stats = EnsembleStats {
        cells: vec![CellStats {
            keys: vec![("n_fixed".into(), ou.n_fixed.to_string())],
            runs_completed: 1,
            runs_errored: 0,
            metrics: vec![
                MetricStats::single("analytic_mean", mean),
                MetricStats::single("analytic_var", var),
                MetricStats::single("printed_center", printed_center),
                MetricStats::single("numeric_mean", numeric_mean),
                MetricStats::single("numeric_var", numeric_var),
                MetricStats::single("l1_numeric", l1_numeric),
                MetricStats::single("w1_numeric", w1_numeric),
                MetricStats::single("mc_mean", mc_mean),
                MetricStats::single("mc_var", mc_var),
                MetricStats::single("mc_mean_se", mc_mean_se),
                MetricStats::single("mc_w1", mc_w1),
                MetricStats::single("mc_w1_noise", mc_w1_noise),
                MetricStats::from_values("noise_w1", &noise),
                MetricStats::single("noise_w1_median", median(&noise)),
            ],
        }],
    };
    Ok(OuReport {
        spec,
        analytic_mean: mean,
        analytic_var: var,
        printed_center,
        printed_center_flagged: (printed_center - mean).abs() > 1e-12,
        grid,
        numeric: numeric.values,
        analytic,
        numeric_steps: numeric.steps,
        numeric_mean,
        numeric_var,
        l1_numeric,
        w1_numeric,
        mc_mean,
        mc_var,
        mc_effective_size,
        mc_mean_se,
        mc_w1,
        mc_w1_noise,
        stats,
    })
}

// ---------------------------------------------------------------------------
// Dispatch

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentResult {
    FwRun(Vec<FwTrajectory>),
    FwStabilitySweep(BlowupReport),
    LlsRun(Vec<LlsTrajectory>),
    LlsTimescaleSweep(LlsSweepReport),
    MfConvergence(MfConvergenceReport),
    OuSteadystate(OuReport),
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    Ok(match config.experiment {
        ExperimentKind::FwRun => ExperimentResult::FwRun(run_fw(config)?),
        ExperimentKind::FwStabilitySweep => ExperimentResult::FwStabilitySweep(run_fw_stability_sweep(config)?),
        ExperimentKind::LlsRun => ExperimentResult::LlsRun(run_lls(config)?),
        ExperimentKind::LlsTimescaleSweep => ExperimentResult::LlsTimescaleSweep(run_lls_timescale_sweep(config)?),
        ExperimentKind::MfConvergence => ExperimentResult::MfConvergence(run_mf_convergence(config)?),
        ExperimentKind::OuSteadystate => ExperimentResult::OuSteadystate(run_ou_steadystate(config)?),
    })
}
