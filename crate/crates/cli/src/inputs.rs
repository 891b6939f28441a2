//! Input file schemas and the override machinery. Files are JSON with
//! unknown keys rejected; --set patches land on the parsed tree before
//! decoding, so a patched file goes through exactly the same validation
//! as a hand-written one.

use crate::CliError;
use kam_core::engine::classical::ClassicalProblem;
use kam_core::engine::{RunConfig, ScheduleParams};
use kam_core::fixtures as fx;
use kam_core::series::FTSeries;
use kam_core::smalldiv::frequency_catalog;
use serde::Deserialize;
use serde_json::Value;
use std::path::Path;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInput {
    pub problem: ClassicalProblem,
    #[serde(default)]
    pub omega_star: Option<Vec<f64>>,
    #[serde(default)]
    pub schedule: ScheduleOverrides,
    #[serde(default)]
    pub config: RunConfig,
}

/// Schedule knobs; anything absent falls back to the catalog defaults
/// for the problem's dimension.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleOverrides {
    pub s0: Option<f64>,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub e0: Option<f64>,
    pub k0: Option<u32>,
    pub c: Option<f64>,
    pub c0: Option<f64>,
    pub r0: Option<f64>,
    pub max_iters: Option<usize>,
}

impl ScheduleOverrides {
    /// r_fallback fills r0 when neither the file nor the caller fixed it
    /// (the run command passes the automatic expansion radius).
    pub fn resolve(&self, n: usize, r_fallback: f64) -> Result<ScheduleParams, CliError> {
        let (def_alpha, def_tau) = match frequency_catalog(n) {
            Ok(entries) => (entries[0].fixture_alpha, entries[0].tau),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let alpha = self.alpha.unwrap_or(def_alpha);
        let tau = self.tau.unwrap_or(def_tau);
        if !alpha.is_finite() || !tau.is_finite() {
            return Err(CliError::input(format!(
                "no catalog defaults for n = {n}; set schedule.alpha and schedule.tau explicitly"
            )));
        }
        Ok(ScheduleParams {
            n,
            s0: self.s0.unwrap_or(fx::S0),
            alpha,
            tau,
            e0: self.e0.unwrap_or(fx::E0),
            k0: self.k0.unwrap_or(fx::K0),
            c: self.c.unwrap_or(fx::SCHED_C),
            c0: self.c0.unwrap_or(fx::SCHED_C0),
            r0: self.r0.unwrap_or(r_fallback),
            max_iters: self.max_iters.unwrap_or(fx::MAX_ITERS as usize),
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckFreqInput {
    pub omega: Vec<f64>,
    pub alpha: f64,
    pub tau: f64,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxInput {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureInput {
    #[serde(rename = "box")]
    pub fbox: BoxInput,
    pub tau: f64,
    pub alphas: Vec<f64>,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
    #[serde(default = "default_samples")]
    pub n_samples: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepInput {
    pub problem: ClassicalProblem,
    pub omega: Vec<f64>,
    pub alphas: Vec<f64>,
    pub eps_grid: Vec<f64>,
    #[serde(default)]
    pub schedule: ScheduleOverrides,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepParamsInput {
    pub r: f64,
    pub s: f64,
    pub h: f64,
    pub sigma: f64,
    pub eta: f64,
    pub k_cut: u32,
    pub alpha: f64,
    pub tau: f64,
    #[serde(default = "one")]
    pub c_a: f64,
    #[serde(default = "one")]
    pub c_b: f64,
    #[serde(default = "default_divisor_factor")]
    pub divisor_factor: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepInput {
    pub e: f64,
    pub omega: Vec<f64>,
    pub p: FTSeries,
    pub params: StepParamsInput,
    /// include the output perturbation and generator series in the dump
    #[serde(default)]
    pub emit_series: bool,
}

fn default_k_max() -> u32 {
    50
}

fn default_samples() -> u64 {
    100_000
}

fn one() -> f64 {
    1.0
}

fn default_divisor_factor() -> f64 {
    fx::DIVISOR_FACTOR
}

/// Reads the file, applies --set patches, and decodes. The error message
/// names the offending field, which is all a caller can act on.
pub fn load<T: for<'de> Deserialize<'de>>(path: &Path, sets: &[String]) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut tree: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("{} is not valid JSON: {e}", path.display())))?;
    for spec in sets {
        apply_set(&mut tree, spec)?;
    }
    serde_json::from_value(tree).map_err(|e| CliError::input(format!("bad input: {e}")))
}

/// key.path=value with the value parsed as JSON when possible and as a
/// bare string otherwise.
fn apply_set(tree: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::input(format!("--set needs KEY=VALUE, got {spec:?}")))?;
    if path.is_empty() {
        return Err(CliError::input("--set key must be nonempty".into()));
    }
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let parts: Vec<&str> = path.split('.').collect();
    let mut node = tree;
    for part in &parts[..parts.len() - 1] {
        node = if let Ok(idx) = part.parse::<usize>() {
            node.get_mut(idx)
                .ok_or_else(|| CliError::input(format!("--set {path}: no index {part}")))?
        } else {
            node.get_mut(*part)
                .ok_or_else(|| CliError::input(format!("--set {path}: no field {part}")))?
        };
    }
    let leaf = parts[parts.len() - 1];
    if let Ok(idx) = leaf.parse::<usize>() {
        let slot = node
            .get_mut(idx)
            .ok_or_else(|| CliError::input(format!("--set {path}: no index {leaf}")))?;
        *slot = value;
    } else {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::input(format!("--set {path}: {leaf} indexes a non-object")))?;
        obj.insert(leaf.into(), value);
    }
    Ok(())
}
