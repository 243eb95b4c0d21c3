//! Config parsing, presets and output writing behind the `abcem` binary.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use abcem::experiments::{
    detect_blowup, mode_name, warm_up, EnsembleStats, ExperimentConfig, ExperimentKind, ExperimentResult,
    FRACTION_BOUND, LLS_HORIZON, PRICE_BOUND,
};
use abcem::fw::FwParams;
use abcem::lls::{LlsInitial, LlsParams};
use serde_json::{Map, Value};

pub const PRESETS: [&str; 3] = ["lls-basic", "lls-3agents", "fw-basic"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or invalid configuration.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] abcem::Error),
}

impl CliError {
    /// 1 for configuration and validation problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Model(e) => match e.root() {
                abcem::Error::InvalidParameter(_) | abcem::Error::Config(_) => 1,
                _ => 2,
            },
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// The experiment a preset expands to when printed.
pub fn preset_experiment(name: &str) -> Option<ExperimentKind> {
    match name {
        "fw-basic" => Some(ExperimentKind::FwRun),
        "lls-basic" | "lls-3agents" => Some(ExperimentKind::LlsRun),
        _ => None,
    }
}

fn apply_preset(config: &mut ExperimentConfig, name: &str) -> Result<(), CliError> {
    match name {
        "fw-basic" => config.fw = FwParams::baseline(),
        "lls-basic" => {
            config.lls = LlsParams::basic();
            config.lls_initial = LlsInitial::default();
        }
        "lls-3agents" => {
            config.lls = LlsParams::three_groups();
            config.lls_initial = LlsInitial::three_groups();
        }
        other => {
            return Err(config_err(format!(
                "key \"preset\": unknown preset {other:?} (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    }
    config.preset = Some(name.to_string());
    Ok(())
}

/// Fully expanded config for a preset.
pub fn preset_config(name: &str) -> Result<ExperimentConfig, CliError> {
    let kind = preset_experiment(name).ok_or_else(|| config_err(format!("unknown preset {name:?}")))?;
    let mut config = ExperimentConfig::new(kind);
    apply_preset(&mut config, name)?;
    config.validate()?;
    Ok(config)
}

const TOP_LEVEL: [&str; 15] = [
    "experiment",
    "preset",
    "override",
    "scheme",
    "dt",
    "steps",
    "seed",
    "runs",
    "sweep",
    "out",
    "fw",
    "lls",
    "lls_initial",
    "meanfield",
    "ou",
];

const BLOCKS: [&str; 5] = ["fw", "lls", "lls_initial", "meanfield", "ou"];

fn merge(target: &mut Value, patch: &Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                match t.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        t.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (t, p) => *t = p.clone(),
    }
}

/// Blocks searched for an undotted override key, most relevant first.
fn block_order(kind: ExperimentKind) -> [&'static str; 5] {
    match kind {
        ExperimentKind::FwRun | ExperimentKind::FwStabilitySweep => ["fw", "ou", "lls", "lls_initial", "meanfield"],
        ExperimentKind::OuSteadystate => ["ou", "fw", "lls", "lls_initial", "meanfield"],
        ExperimentKind::LlsRun | ExperimentKind::LlsTimescaleSweep => ["lls", "lls_initial", "fw", "meanfield", "ou"],
        ExperimentKind::MfConvergence => ["meanfield", "fw", "lls", "lls_initial", "ou"],
    }
}

fn apply_override(base: &mut Map<String, Value>, kind: ExperimentKind, key: &str, value: &Value) -> Result<(), CliError> {
    if let Some((block, field)) = key.split_once('.') {
        let slot = base
            .get_mut(block)
            .and_then(Value::as_object_mut)
            .filter(|_| BLOCKS.contains(&block))
            .ok_or_else(|| config_err(format!("key \"override.{key}\": unknown block {block:?}")))?;
        if !slot.contains_key(field) {
            return Err(config_err(format!("key \"override.{key}\": unknown parameter")));
        }
        slot.insert(field.to_string(), value.clone());
        return Ok(());
    }
    if ["scheme", "dt", "steps", "seed", "runs"].contains(&key) {
        base.insert(key.to_string(), value.clone());
        return Ok(());
    }
    for block in block_order(kind) {
        if let Some(slot) = base.get_mut(block).and_then(Value::as_object_mut) {
            if slot.contains_key(key) {
                slot.insert(key.to_string(), value.clone());
                return Ok(());
            }
        }
    }
    Err(config_err(format!("key \"override.{key}\": unknown parameter")))
}

/// Parses and validates a JSON config. A `preset` loads table values first,
/// explicit keys and the flat `override` map are applied on top.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| config_err(format!("invalid JSON: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| config_err("config must be a JSON object"))?;
    for key in obj.keys() {
        if !TOP_LEVEL.contains(&key.as_str()) {
            return Err(config_err(format!("key {key:?}: unknown key")));
        }
    }
    let kind_value = obj
        .get("experiment")
        .ok_or_else(|| config_err("key \"experiment\": required key missing"))?;
    let kind: ExperimentKind = serde_json::from_value(kind_value.clone())
        .map_err(|e| config_err(format!("key \"experiment\": {e}")))?;

    let mut config = ExperimentConfig::new(kind);
    if let Some(p) = obj.get("preset") {
        let name = p
            .as_str()
            .ok_or_else(|| config_err("key \"preset\": expected a string"))?;
        apply_preset(&mut config, name)?;
    }
    let mut base = serde_json::to_value(&config).map_err(|e| config_err(e.to_string()))?;
    let base_obj = base.as_object_mut().expect("config serializes to an object");
    for (key, value) in obj {
        if key == "override" || key == "preset" {
            continue;
        }
        if BLOCKS.contains(&key.as_str()) || key == "sweep" {
            if !value.is_object() {
                return Err(config_err(format!("key {key:?}: expected an object")));
            }
            merge(base_obj.entry(key.clone()).or_insert(Value::Null), value);
        } else {
            base_obj.insert(key.clone(), value.clone());
        }
    }
    if let Some(ov) = obj.get("override") {
        let ov = ov
            .as_object()
            .ok_or_else(|| config_err("key \"override\": expected an object"))?;
        for (key, value) in ov {
            apply_override(base_obj, kind, key, value)?;
        }
    }
    let steps_given = obj.contains_key("steps") || obj.get("override").is_some_and(|o| o.get("steps").is_some());

    let mut config: ExperimentConfig = serde_path_to_error::deserialize(base)
        .map_err(|e| config_err(format!("key \"{}\": {}", e.path(), e.inner())))?;
    if !steps_given && matches!(kind, ExperimentKind::LlsRun | ExperimentKind::LlsTimescaleSweep) {
        config.steps = abcem::experiments::lls_steps_for(LLS_HORIZON, config.dt);
    }
    config.validate().map_err(|e| config_err(format!("validation: {e}")))?;
    Ok(config)
}

pub fn config_to_json(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config is serializable")
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Model(abcem::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `contents` through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn stats_csv(stats: &EnsembleStats) -> String {
    let mut out = String::new();
    let key_names: Vec<&str> = stats
        .cells
        .first()
        .map(|c| c.keys.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    for k in &key_names {
        out.push_str(k);
        out.push(',');
    }
    out.push_str("metric,value\n");
    for cell in &stats.cells {
        let prefix: String = cell.keys.iter().map(|(_, v)| format!("{v},")).collect();
        let _ = writeln!(out, "{prefix}runs_completed,{}", cell.runs_completed);
        let _ = writeln!(out, "{prefix}runs_errored,{}", cell.runs_errored);
        for m in &cell.metrics {
            if m.count == 1 {
                let _ = writeln!(out, "{prefix}{},{}", m.name, fmt_f64(m.mean));
            } else {
                let _ = writeln!(out, "{prefix}{}_mean,{}", m.name, fmt_f64(m.mean));
                let _ = writeln!(out, "{prefix}{}_min,{}", m.name, fmt_f64(m.min));
                let _ = writeln!(out, "{prefix}{}_max,{}", m.name, fmt_f64(m.max));
                let _ = writeln!(out, "{prefix}{}_count,{}", m.name, m.count);
            }
        }
    }
    out
}

fn density_csv(rows: impl IntoIterator<Item = (f64, usize, f64)>) -> String {
    let mut out = String::from("w,group_id,f\n");
    for (w, g, f) in rows {
        let _ = writeln!(out, "{},{g},{}", fmt_f64(w), fmt_f64(f));
    }
    out
}

fn opt(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the CSV files of `result` plus `metadata.json` into `dir`; returns the paths written.
pub fn write_outputs(result: &ExperimentResult, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut files: Vec<(String, String)> = Vec::new();
    let mut meta = Map::new();
    meta.insert("config".into(), serde_json::to_value(config).expect("serializable"));
    meta.insert("code_version".into(), Value::from(env!("CARGO_PKG_VERSION")));
    meta.insert("seed".into(), Value::from(config.seed));
    meta.insert("run_indices".into(), Value::from((0..config.runs as u64).collect::<Vec<_>>()));
    meta.insert(
        "stream_rule".into(),
        Value::from("run k of every cell uses MT19937-64 seeded from (seed, k)"),
    );
    match result {
        ExperimentResult::FwRun(runs) => {
            let mut bad = Vec::new();
            for (k, traj) in runs.iter().enumerate() {
                let mut csv = String::from("t,P,n_f,n_c\n");
                for p in &traj.points {
                    let _ = writeln!(csv, "{},{},{},{}", fmt_f64(p.t), fmt_f64(p.log_price), fmt_f64(p.n_f), fmt_f64(p.n_c));
                }
                let name = if runs.len() == 1 { "fw_run.csv".to_string() } else { format!("fw_run_{k:04}.csv") };
                files.push((name, csv));
                let mut entry = Map::new();
                entry.insert("run_index".into(), Value::from(k));
                entry.insert(
                    "first_bad_step".into(),
                    serde_json::to_value(detect_blowup(traj, PRICE_BOUND, FRACTION_BOUND)).unwrap(),
                );
                entry.insert("first_nonfinite_step".into(), serde_json::to_value(traj.first_nonfinite_step).unwrap());
                bad.push(Value::Object(entry));
            }
            meta.insert("runs".into(), Value::Array(bad));
            meta.insert("blowup_bounds".into(), serde_json::json!({"price": PRICE_BOUND, "fraction": FRACTION_BOUND}));
        }
        ExperimentResult::FwStabilitySweep(report) => {
            files.push(("fw_stability_sweep.csv".into(), stats_csv(&report.to_stats())));
            let mut csv = String::from(
                "scheme,sigma_f,dt,run_index,first_bad_step,first_nonfinite_step,first_bound_violation,max_bound_excursion,max_sum_defect\n",
            );
            for c in &report.cells {
                for r in &c.runs {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{},{},{}",
                        c.scheme.name(),
                        c.sigma_f,
                        c.dt,
                        r.run_index,
                        opt(r.first_bad_step),
                        opt(r.first_nonfinite_step),
                        opt(r.first_bound_violation),
                        fmt_f64(r.max_bound_excursion),
                        fmt_f64(r.max_sum_defect)
                    );
                }
            }
            files.push(("fw_stability_runs.csv".into(), csv));
            meta.insert("blowup_bounds".into(), serde_json::json!({"price": PRICE_BOUND, "fraction": FRACTION_BOUND}));
        }
        ExperimentResult::LlsRun(runs) => {
            for (k, traj) in runs.iter().enumerate() {
                let mut csv = String::from("t,S,Z,mean_w,boundary_frac\n");
                for p in &traj.points {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{}",
                        fmt_f64(p.t),
                        fmt_f64(p.price),
                        fmt_f64(p.dividend),
                        fmt_f64(p.mean_wealth),
                        fmt_f64(p.boundary_frac)
                    );
                }
                let name = if runs.len() == 1 { "lls_run.csv".to_string() } else { format!("lls_run_{k:04}.csv") };
                files.push((name, csv));
            }
            meta.insert(
                "boundary_fraction".into(),
                Value::from("share of optimal (pre-noise) fractions at exactly 0.01 or 0.99, per step"),
            );
        }
        ExperimentResult::LlsTimescaleSweep(report) => {
            files.push(("lls_timescale_sweep.csv".into(), stats_csv(&report.stats)));
            let mut csv = String::from("memory_mode,dt,run_index,boundary_fraction,final_price,max_abs_residual,error\n");
            for c in &report.cells {
                for r in &c.runs {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        mode_name(c.memory_mode),
                        c.dt,
                        r.run_index,
                        fmt_f64(r.boundary_fraction),
                        fmt_f64(r.final_price),
                        fmt_f64(r.max_abs_residual),
                        r.error.as_deref().unwrap_or("").replace(',', ";")
                    );
                }
            }
            files.push(("lls_timescale_runs.csv".into(), csv));
            meta.insert(
                "warm_up".into(),
                Value::from(format!(
                    "first floor(0.1 * steps) steps discarded per run (e.g. {} of {}); boundary fraction averaged over the remaining steps, agents and completed runs; errored runs are excluded and counted in runs_errored",
                    warm_up(config.steps),
                    config.steps
                )),
            );
        }
        ExperimentResult::MfConvergence(report) => {
            files.push(("mf_convergence.csv".into(), stats_csv(&report.stats)));
            files.push(("mf_density.csv".into(), density_csv(report.final_density.rows())));
        }
        ExperimentResult::OuSteadystate(report) => {
            files.push(("ou_steadystate.csv".into(), stats_csv(&report.stats)));
            let grid = report.grid;
            let rows = (0..grid.num_cells)
                .map(|i| (grid.center(i), 0usize, report.analytic[i]))
                .chain((0..grid.num_cells).map(|i| (grid.center(i), 1usize, report.numeric[i])));
            files.push(("ou_density.csv".into(), density_csv(rows)));
            meta.insert("density_groups".into(), serde_json::json!({"0": "analytic", "1": "numeric"}));
            meta.insert(
                "printed_exponent".into(),
                serde_json::json!({
                    "center": report.printed_center,
                    "flagged": report.printed_center_flagged,
                    "note": "the printed closed form centres at F/2; the stationary equation gives F"
                }),
            );
        }
    }
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        write_atomic(&path, &contents)?;
        written.push(path);
    }
    let meta_path = dir.join("metadata.json");
    let mut text = serde_json::to_string_pretty(&Value::Object(meta)).expect("serializable");
    text.push('\n');
    write_atomic(&meta_path, &text)?;
    written.push(meta_path);
    Ok(written)
}

/// Loads, runs and writes one config file. `out` overrides the config's own `out`.
pub fn run_file(path: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let config = parse_config(&text)?;
    let result = abcem::experiments::run_experiment(&config)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(config.experiment.name()));
    write_outputs(&result, &config, &dir)
}
