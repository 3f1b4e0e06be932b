//! Flat `key = value` configuration files.
//!
//! Keys are the field names of [`Scenario`], its grid and path profile,
//! [`TrainSettings`], [`AoSettings`] and [`ExperimentSpec`], all in one
//! namespace and in SI units. Lists are comma separated, `#` starts a
//! comment, and later assignments win.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::AoSettings;
use crate::error::{Error, Result};
use crate::harness::{ExperimentKind, ExperimentSpec, Method};
use crate::nnconf::TrainSettings;
use crate::scene::Scenario;

/// One `key = value` assignment with its 1-based line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_assignments(text: &str, source_name: &str) -> Result<Vec<Assignment>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                source_name: source_name.into(),
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        out.push(Assignment {
            key: k.trim().to_string(),
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// Parses a `key=value` override given on the command line.
pub fn parse_override(s: &str) -> Result<Assignment> {
    parse_assignments(s, "command line")?
        .pop()
        .ok_or_else(|| Error::InvalidArgument(format!("empty override '{s}'")))
}

fn value<F: FromStr>(a: &Assignment) -> std::result::Result<F, String> {
    a.value.parse().map_err(|_| format!("bad value '{}' for {}", a.value, a.key))
}

fn list<F: FromStr>(a: &Assignment) -> std::result::Result<Vec<F>, String> {
    if a.value.is_empty() {
        return Ok(Vec::new());
    }
    a.value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| format!("bad list item '{}' for {}", s.trim(), a.key)))
        .collect()
}

fn vec3(a: &Assignment) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = list(a)?;
    v.try_into().map_err(|_| format!("{} needs three components", a.key))
}

/// Applies one assignment to a scenario; `Ok(false)` when the key is not a
/// scenario key.
fn apply_scenario(s: &mut Scenario<f64>, a: &Assignment) -> std::result::Result<bool, String> {
    let p = &mut s.profile;
    match a.key.as_str() {
        "carrier_hz" => s.carrier_hz = value(a)?,
        "bandwidth_hz" => s.bandwidth_hz = value(a)?,
        "n_subcarriers" => s.n_subcarriers = value(a)?,
        "n_rows" => s.grid.n_rows = value(a)?,
        "n_cols" => s.grid.n_cols = value(a)?,
        "d_h" => s.grid.d_h = value(a)?,
        "d_v" => s.grid.d_v = value(a)?,
        "ap_pos" => s.ap_pos = vec3(a)?,
        "ris_pos" => s.ris_pos = vec3(a)?,
        "ue_pos" => s.ue_pos = vec3(a)?,
        "ue_speed" => s.ue_speed = value(a)?,
        "ue_heading" => s.ue_heading = vec3(a)?,
        "block_duration_s" => s.block_duration_s = value(a)?,
        "n_blocks" => s.n_blocks = value(a)?,
        "noise_density" => s.noise_density = value(a)?,
        "power_budget" => s.power_budget = value(a)?,
        "rng_seed" => s.rng_seed = value(a)?,
        "guard_taps" => s.guard_taps = value(a)?,
        "n_ap_ris" => p.n_ap_ris = value(a)?,
        "n_ris_ue" => p.n_ris_ue = value(a)?,
        "n_direct" => p.n_direct = value(a)?,
        "los_fraction" => p.los_fraction = value(a)?,
        "delay_spread_s" => p.delay_spread_s = value(a)?,
        "pdp_decay_s" => p.pdp_decay_s = value(a)?,
        "pathloss_exp_los" => p.pathloss_exp_los = value(a)?,
        "pathloss_exp_nlos" => p.pathloss_exp_nlos = value(a)?,
        "nlos_elevation_max" => p.nlos_elevation_max = value(a)?,
        "sequence_jitter_s" => p.sequence_jitter_s = value(a)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_train(t: &mut TrainSettings, a: &Assignment) -> std::result::Result<bool, String> {
    match a.key.as_str() {
        "depth" => t.depth = value(a)?,
        "learning_rate" => t.learning_rate = value(a)?,
        "batch_size" => t.batch_size = value(a)?,
        "epochs" => t.epochs = value(a)?,
        "validation_fraction" => t.validation_fraction = value(a)?,
        "beta1" => t.beta1 = value(a)?,
        "beta2" => t.beta2 = value(a)?,
        "epsilon" => t.epsilon = value(a)?,
        "w0_init_std" => {
            t.w0_init_std = if a.value.is_empty() || a.value == "default" {
                None
            } else {
                Some(value(a)?)
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_ao(o: &mut AoSettings, a: &Assignment) -> std::result::Result<bool, String> {
    match a.key.as_str() {
        "inner_tol" => o.inner_tol = value(a)?,
        "inner_max_steps" => o.inner_max_steps = value(a)?,
        "outer_tol" => o.outer_tol = value(a)?,
        "max_outer" => o.max_outer = value(a)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_spec(spec: &mut ExperimentSpec, a: &Assignment) -> std::result::Result<bool, String> {
    if apply_scenario(&mut spec.scenario, a)? || apply_train(&mut spec.train, a)? || apply_ao(&mut spec.ao, a)? {
        return Ok(true);
    }
    match a.key.as_str() {
        "kind" => spec.kind = ExperimentKind::from_str(&a.value).map_err(|e| e.to_string())?,
        "bandwidths_hz" => spec.bandwidths_hz = list(a)?,
        "reflector_counts" => spec.reflector_counts = list(a)?,
        "speeds_mps" => spec.speeds_mps = list(a)?,
        "bits" => spec.bits = list(a)?,
        "trials" => spec.trials = value(a)?,
        "seed" => spec.seed = value(a)?,
        "methods" => {
            spec.methods = list::<String>(a)?
                .iter()
                .map(|m| Method::from_str(m).map_err(|e| e.to_string()))
                .collect::<std::result::Result<_, _>>()?
        }
        "sequence_length" => spec.sequence_length = value(a)?,
        "train_size" => spec.train_size = value(a)?,
        "oracle_subcarriers" => spec.oracle_subcarriers = value(a)?,
        "oracle_max_reflectors" => spec.oracle_max_reflectors = value(a)?,
        "timing" => spec.timing = value(a)?,
        "out" => spec.out = Some(PathBuf::from(&a.value)),
        _ => return Ok(false),
    }
    Ok(true)
}

fn wrap(source_name: &str, a: &Assignment, r: std::result::Result<bool, String>) -> Result<()> {
    match r {
        Ok(true) => Ok(()),
        Ok(false) => Err(Error::Parse {
            source_name: source_name.into(),
            line: a.line,
            message: format!("unknown key '{}'", a.key),
        }),
        Err(message) => Err(Error::Parse {
            source_name: source_name.into(),
            line: a.line,
            message,
        }),
    }
}

/// Scenario from a file holding only scenario keys, over the defaults.
pub fn scenario_from_str(text: &str, source_name: &str) -> Result<Scenario<f64>> {
    let mut s = Scenario::default();
    for a in parse_assignments(text, source_name)? {
        let r = apply_scenario(&mut s, &a);
        wrap(source_name, &a, r)?;
    }
    s.validate()?;
    Ok(s)
}

pub fn apply_to_spec(spec: &mut ExperimentSpec, assignments: &[Assignment], source_name: &str) -> Result<()> {
    for a in assignments {
        let r = apply_spec(spec, a);
        wrap(source_name, a, r)?;
    }
    Ok(())
}

/// Experiment spec from `text` over the defaults of `kind`; a `kind` key in
/// the text selects the defaults instead.
pub fn spec_from_str(text: &str, source_name: &str, kind: ExperimentKind) -> Result<ExperimentSpec> {
    let assignments = parse_assignments(text, source_name)?;
    let kind = match assignments.iter().rev().find(|a| a.key == "kind") {
        Some(a) => ExperimentKind::from_str(&a.value).map_err(|e| Error::Parse {
            source_name: source_name.into(),
            line: a.line,
            message: e.to_string(),
        })?,
        None => kind,
    };
    let mut spec = ExperimentSpec::defaults(kind);
    apply_to_spec(&mut spec, &assignments, source_name)?;
    Ok(spec)
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
