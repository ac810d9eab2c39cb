//! JSON run configurations, one per subcommand.

use clwn_core::driving::{DrivingSpec, Schedule};
use clwn_core::field::FieldMode;
use clwn_core::fuchsian::{EnumerationPolicy, FuchsianGroup};
use clwn_core::{Complex64, Moebius};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use std::path::Path;

use crate::CliError;

/// A generator, either as coefficients `[a, b, c, d]` or by its fixed points
/// and multiplier.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GeneratorSpec {
    Coefficients([f64; 4]),
    FixedPoints(FixedPoints),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPoints {
    pub attracting: f64,
    pub repelling: f64,
    pub multiplier: f64,
}

impl GeneratorSpec {
    pub fn to_map(&self) -> clwn_core::Result<Moebius> {
        match *self {
            GeneratorSpec::Coefficients([a, b, c, d]) => Moebius::new(a, b, c, d),
            GeneratorSpec::FixedPoints(FixedPoints {
                attracting,
                repelling,
                multiplier,
            }) => Moebius::hyperbolic(attracting, repelling, multiplier),
        }
    }
}

pub fn group(specs: &[GeneratorSpec]) -> clwn_core::Result<FuchsianGroup> {
    FuchsianGroup::new(specs.iter().map(GeneratorSpec::to_map).collect::<Result<_, _>>()?)
}

fn default_word_length() -> usize {
    6
}

fn default_tail_tolerance() -> f64 {
    1e-7
}

fn default_cap() -> usize {
    EnumerationPolicy::default().cap
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChordalConfig {
    pub driving: DrivingSpec,
    pub seeds: Vec<Complex64>,
    pub t_end: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSamples {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusConfig {
    pub tau0: f64,
    #[serde(default)]
    pub tau_samples: Option<TauSamples>,
    #[serde(default)]
    pub tau_rate: Option<f64>,
    pub xi: DrivingSpec,
    #[serde(default)]
    pub lambda: Schedule,
    pub c: f64,
    pub seeds: Vec<Complex64>,
    pub t_end: f64,
    pub tol: f64,
}

impl AnnulusConfig {
    pub fn tau(&self) -> Result<Schedule, CliError> {
        match (&self.tau_samples, self.tau_rate) {
            (Some(_), Some(_)) => Err(CliError::config(
                "Conflict",
                None,
                "give either tau_samples or tau_rate, not both",
            )),
            (None, None) => Err(CliError::config(
                "MissingKey",
                Some("tau_rate"),
                "missing field `tau_rate` (or `tau_samples`)",
            )),
            (None, Some(rate)) => Ok(Schedule::linear(self.tau0, rate)),
            (Some(s), None) => {
                let sched = Schedule::Samples {
                    times: s.times.clone(),
                    values: s.values.clone(),
                };
                let at0 = sched.realize()?.value(0.0);
                if (at0 - self.tau0).abs() > 1e-12 * self.tau0.abs().max(1.0) {
                    return Err(CliError::config(
                        "Conflict",
                        Some("tau0"),
                        format!("tau_samples give τ(0) = {at0}, but tau0 = {}", self.tau0),
                    ));
                }
                Ok(sched)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub generators: Vec<GeneratorSpec>,
    pub base_triple: [f64; 3],
    pub c: f64,
    pub driving: DrivingSpec,
    #[serde(default)]
    pub lambda: Schedule,
    pub t_end: f64,
    pub mesh_dt: f64,
    pub tol: f64,
    pub seeds: Vec<Complex64>,
    #[serde(default = "default_word_length")]
    pub word_length: usize,
    #[serde(default = "default_tail_tolerance")]
    pub tail_tolerance: f64,
    /// Point at which the conjugacy residuals are reported.
    #[serde(default)]
    pub check_point: Option<Complex64>,
}

impl SurfaceConfig {
    pub fn policy(&self) -> EnumerationPolicy {
        EnumerationPolicy {
            max_word_length: self.word_length,
            tail_tolerance: self.tail_tolerance,
            cap: default_cap(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumerateConfig {
    pub generators: Vec<GeneratorSpec>,
    #[serde(default = "default_word_length")]
    pub word_length: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub generators: Vec<GeneratorSpec>,
    /// Coefficient rates `(ȧ, ḃ, ċ, ḋ)` per generator.
    #[serde(default)]
    pub velocities: Option<Vec<[f64; 4]>>,
    /// Alternative to `velocities`: use the chordal direction of this triple.
    #[serde(default)]
    pub base_triple: Option<[f64; 3]>,
    pub c: f64,
    pub xi: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub mode: FieldMode,
    #[serde(default = "default_word_length")]
    pub word_length: usize,
    #[serde(default = "default_tail_tolerance")]
    pub tail_tolerance: f64,
    pub points: Vec<Complex64>,
}

impl FieldConfig {
    pub fn policy(&self) -> EnumerationPolicy {
        EnumerationPolicy {
            max_word_length: self.word_length,
            tail_tolerance: self.tail_tolerance,
            cap: default_cap(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingConfig {
    pub driving: DrivingSpec,
    pub t_end: f64,
    pub dt: f64,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::config("Unreadable", None, format!("cannot read {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        if let Some(key) = quoted_after(&msg, "missing field `") {
            CliError::config("MissingKey", Some(&key), msg)
        } else if let Some(key) = quoted_after(&msg, "unknown field `") {
            CliError::config("UnknownKey", Some(&key), msg)
        } else {
            CliError::config("Invalid", None, msg)
        }
    })
}

fn quoted_after(msg: &str, prefix: &str) -> Option<String> {
    let rest = &msg[msg.find(prefix)? + prefix.len()..];
    Some(rest[..rest.find('`')?].to_string())
}
