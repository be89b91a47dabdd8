//! Experiment configuration: JSON schema, validation and hashing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{FloorOption, HmmOptions, LorentzianOptions};
use crate::device::{ChipGeometry, QubitSpec, SuspensionModel};
use crate::error::{Error, Result};
use crate::events::{CooldownTimeline, PoisoningModel};
use crate::qp::QpModelParams;

/// Version of every file format written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Repetition period of the fast parity protocol, s.
pub const FAST_DT: f64 = 1e-3;
/// Repetition period of the slow parity protocol, s.
pub const SLOW_DT: f64 = 10e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub chip: ChipGeometry,
    pub qubits: Vec<QubitSpec>,
    pub timeline: CooldownTimeline,
    pub poisoning: PoisoningModel,
    pub measurement: MeasurementPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<ChargePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tomography: Option<TomographyPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection: Option<InjectionPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_tube_protocol: Option<PulseTubeProtocol>,
    #[serde(default)]
    pub suspension: SuspensionModel,
    #[serde(default)]
    pub analysis: AnalysisOptions,
}

/// One parity record per qubit at each measurement time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementPlan {
    /// Days since the start of the cooldown.
    pub times_days: Vec<f64>,
    /// Repetition period, s.
    pub dt: f64,
    pub samples: usize,
    #[serde(default)]
    pub readout_noise_sd: f64,
    /// Mask samples taken near charge degeneracy; needs a charge plan.
    #[serde(default)]
    pub mask_degeneracy: bool,
}

/// Offset-charge drift used for degeneracy masking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargePlan {
    /// Wiener drift, e/√s.
    pub drift_sd: f64,
    /// Sampling interval of the charge record, s.
    pub dt: f64,
}

/// Repeated charge tomography for jump counting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyPlan {
    /// Qubits to scan; empty means all.
    #[serde(default)]
    pub qubits: Vec<String>,
    pub start_day: f64,
    /// s.
    pub duration: f64,
    /// Time between scans, s.
    pub interval: f64,
    pub grid_points: usize,
    pub shots: u64,
    pub d: f64,
    pub nu: f64,
    /// e/√s.
    #[serde(default)]
    pub drift_sd: f64,
    /// Longer gaps between scans split the tracked record, s.
    #[serde(default = "default_max_gap")]
    pub max_gap: f64,
}

fn default_max_gap() -> f64 {
    3600.0
}

/// Phonon-injection T1 measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionPlan {
    pub qubit: String,
    pub model: QpModelParams,
    /// Delays after the end of the injection pulse, s.
    pub delays: Vec<f64>,
    /// ΔΓ1 noise, 1/s.
    #[serde(default)]
    pub noise_sd: f64,
    /// s.
    pub baseline_t1: f64,
    /// mm.
    pub injector: [f64; 2],
    /// Integrator step, s.
    #[serde(default = "default_injection_dt")]
    pub dt: f64,
}

fn default_injection_dt() -> f64 {
    1e-7
}

/// Contiguous rounds of single shots at one repetition period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotBlock {
    pub dt: f64,
    pub shots_per_round: usize,
    pub rounds: usize,
}

impl ShotBlock {
    pub fn samples(&self) -> usize {
        self.shots_per_round * self.rounds
    }
}

/// Pulse-tube on/off comparison at one day of the cooldown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseTubeProtocol {
    pub day: f64,
    pub fast_on: ShotBlock,
    pub slow_on: ShotBlock,
    pub off: ShotBlock,
}

impl PulseTubeProtocol {
    pub fn standard(day: f64) -> Self {
        Self {
            day,
            fast_on: ShotBlock {
                dt: FAST_DT,
                shots_per_round: 20_000,
                rounds: 50,
            },
            slow_on: ShotBlock {
                dt: SLOW_DT,
                shots_per_round: 20_000,
                rounds: 2,
            },
            off: ShotBlock {
                dt: SLOW_DT,
                shots_per_round: 20_000,
                rounds: 2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Digitization threshold.
    pub threshold: f64,
    /// Welch segment length; `None` picks the default for the record length.
    pub segment_len: Option<usize>,
    pub lorentzian: LorentzianOptions,
    pub hmm: HmmOptions,
    /// Moving-average length before HMM decoding. `None` takes the shorter
    /// of the coincidence window (made odd) and the window that separates the
    /// parity levels by `filter_separation` standard deviations.
    pub filter_window: Option<usize>,
    pub filter_separation: f64,
    /// Coincidence folds to count.
    pub folds: Vec<usize>,
    /// Floor handling for the coincidence-rate power laws.
    pub coincidence_floor: FloorOption,
    /// Measurement-time indices left out of the Γp power-law fits.
    pub exclude_points: Vec<usize>,
    /// e.
    pub jump_threshold: f64,
    /// mm.
    pub sensing_radius: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            segment_len: None,
            lorentzian: LorentzianOptions::default(),
            hmm: HmmOptions {
                em_max_samples: Some(1 << 14),
                ..HmmOptions::default()
            },
            filter_window: None,
            filter_separation: 12.0,
            folds: vec![2, 3, 4],
            coincidence_floor: FloorOption::Free,
            exclude_points: Vec::new(),
            jump_threshold: crate::analysis::charge::DEFAULT_JUMP_THRESHOLD,
            sensing_radius: 1.0,
        }
    }
}

/// Where a validation problem sits in the source text.
enum Anchor {
    /// n-th occurrence (0-based) of a quoted key.
    Key(&'static str, usize),
    /// First occurrence of a literal.
    Text(String),
}

struct Issue {
    anchor: Anchor,
    message: String,
}

fn issue(anchor: Anchor, message: impl Into<String>) -> Issue {
    Issue {
        anchor,
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|i| Error::Config(i.message))
    }

    fn check(&self) -> std::result::Result<(), Issue> {
        let key = |k: &'static str| Anchor::Key(k, 0);
        if self.schema_version != SCHEMA_VERSION {
            return Err(issue(
                key("schema_version"),
                format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.qubits.is_empty() {
            return Err(issue(key("qubits"), "at least one qubit is required"));
        }
        if !(self.chip.width > 0.0 && self.chip.height > 0.0) {
            return Err(issue(key("chip"), "chip dimensions must be positive"));
        }
        for (i, q) in self.qubits.iter().enumerate() {
            if self.qubits[..i].iter().any(|p| p.id == q.id) {
                return Err(issue(Anchor::Key("id", i), format!("duplicate qubit id {}", q.id)));
            }
            q.validate(&self.chip)
                .map_err(|e| issue(Anchor::Key("id", i), format!("qubits[{i}]: {}", strip(&e))))?;
        }
        self.timeline
            .validate()
            .map_err(|e| issue(key("timeline"), format!("timeline: {}", strip(&e))))?;
        self.poisoning
            .validate()
            .map_err(|e| issue(key("poisoning"), format!("poisoning: {}", strip(&e))))?;

        let m = &self.measurement;
        if !(m.dt > 0.0) {
            return Err(issue(key("dt"), "measurement.dt must be positive"));
        }
        if m.samples < 2 {
            return Err(issue(key("samples"), "measurement.samples must be at least 2"));
        }
        if !(m.readout_noise_sd >= 0.0) {
            return Err(issue(key("readout_noise_sd"), "readout noise must be non-negative"));
        }
        let span = m.samples as f64 * m.dt / crate::units::SECONDS_PER_DAY;
        for t in &m.times_days {
            if !(*t >= 0.0 && t + span <= self.timeline.duration_days) {
                return Err(issue(
                    key("times_days"),
                    format!("measurement at day {t} does not fit in the {}-day timeline", self.timeline.duration_days),
                ));
            }
        }
        if m.times_days.windows(2).any(|w| w[1] <= w[0]) {
            return Err(issue(key("times_days"), "measurement times must increase"));
        }
        if m.mask_degeneracy && self.charge.is_none() {
            return Err(issue(key("mask_degeneracy"), "degeneracy masking needs a charge plan"));
        }
        if let Some(c) = &self.charge {
            if !(c.drift_sd >= 0.0 && c.dt > 0.0) {
                return Err(issue(key("charge"), "charge plan needs drift_sd ≥ 0 and dt > 0"));
            }
        }
        if let Some(t) = &self.tomography {
            for id in &t.qubits {
                if !self.qubits.iter().any(|q| &q.id == id) {
                    return Err(issue(Anchor::Text(format!("\"{id}\"")), format!("tomography: unknown qubit {id}")));
                }
            }
            if !(t.duration > 0.0 && t.interval > 0.0 && t.interval <= t.duration) {
                return Err(issue(key("tomography"), "tomography needs 0 < interval ≤ duration"));
            }
            if t.grid_points < 8 || t.shots == 0 {
                return Err(issue(key("grid_points"), "tomography needs ≥ 8 grid points and ≥ 1 shot"));
            }
            if !(t.nu != 0.0 && t.max_gap > 0.0) {
                return Err(issue(key("tomography"), "tomography needs ν ≠ 0 and max_gap > 0"));
            }
            if !(t.start_day >= 0.0
                && t.start_day + t.duration / crate::units::SECONDS_PER_DAY <= self.timeline.duration_days)
            {
                return Err(issue(key("start_day"), "tomography run does not fit in the timeline"));
            }
        }
        if let Some(inj) = &self.injection {
            if !self.qubits.iter().any(|q| q.id == inj.qubit) {
                return Err(issue(key("injection"), format!("injection: unknown qubit {}", inj.qubit)));
            }
            inj.model
                .validate()
                .map_err(|e| issue(key("injection"), format!("injection: {}", strip(&e))))?;
            if inj.delays.len() < 5 || !(inj.baseline_t1 > 0.0 && inj.dt > 0.0) {
                return Err(issue(key("injection"), "injection needs ≥ 5 delays, baseline_t1 > 0 and dt > 0"));
            }
            if inj.delays.iter().any(|d| -d > inj.model.pulse_duration + inj.model.pulse_start) {
                return Err(issue(key("delays"), "injection delays reach before the trajectory start"));
            }
        }
        if let Some(p) = &self.pulse_tube_protocol {
            for b in [&p.fast_on, &p.slow_on, &p.off] {
                if !(b.dt > 0.0 && b.samples() >= 64) {
                    return Err(issue(key("pulse_tube_protocol"), "each shot block needs dt > 0 and ≥ 64 shots"));
                }
            }
            if !(p.day >= 0.0 && p.day < self.timeline.duration_days) {
                return Err(issue(key("day"), "pulse-tube day lies outside the timeline"));
            }
        }
        self.suspension
            .validate()
            .map_err(|e| issue(key("suspension"), format!("suspension: {}", strip(&e))))?;
        let a = &self.analysis;
        if a.folds.iter().any(|n| *n < 2 || *n > self.qubits.len()) {
            return Err(issue(key("folds"), "coincidence folds must lie in [2, number of qubits]"));
        }
        if a.segment_len.is_some_and(|s| !s.is_power_of_two() || s < 32) {
            return Err(issue(key("segment_len"), "segment_len must be a power of two ≥ 32"));
        }
        if a.filter_window.is_some_and(|w| w % 2 == 0) {
            return Err(issue(key("filter_window"), "filter_window must be odd"));
        }
        if !(a.filter_separation > 0.0) {
            return Err(issue(key("filter_separation"), "filter_separation must be positive"));
        }
        if !(a.jump_threshold > 0.0 && a.sensing_radius > 0.0) {
            return Err(issue(key("analysis"), "jump threshold and sensing radius must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn qubit(&self, id: &str) -> Option<&QubitSpec> {
        self.qubits.iter().find(|q| q.id == id)
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}

fn anchor_line(text: &str, anchor: &Anchor) -> Option<usize> {
    let (needle, nth) = match anchor {
        Anchor::Key(k, n) => (format!("\"{k}\""), *n),
        Anchor::Text(t) => (t.clone(), 0),
    };
    let pos = text.match_indices(&needle).nth(nth)?.0;
    Some(text[..pos].matches('\n').count() + 1)
}

/// Parses and validates a config. Errors name the file and, where possible,
/// the line of the offending entry.
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        Error::Config(format!("{}:{}:{}: {}", origin.display(), e.line(), e.column(), e))
    })?;
    cfg.check().map_err(|i| {
        let line = anchor_line(text, &i.anchor).unwrap_or(1);
        Error::Config(format!("{}:{}: {}", origin.display(), line, i.message))
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: cannot read config: {e}", path.display())))?;
    parse_config(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::presets;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in presets::NAMES {
            let cfg = presets::preset(name).unwrap();
            cfg.validate().unwrap();
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            let back = parse_config(&text, Path::new("p.json")).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = presets::preset("nb_conventional").unwrap();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cfg = presets::preset("al_suspended").unwrap();
        let mut text = serde_json::to_string_pretty(&cfg).unwrap();
        text = text.replacen("\"mapping_fidelity\": 0.9", "\"mapping_fidelity\": 1.5", 1);
        let err = parse_config(&text, Path::new("c.json")).unwrap_err().to_string();
        let line = text.lines().position(|l| l.contains("1.5")).unwrap() + 1;
        assert!(err.contains("c.json:"), "{err}");
        let id_line = text[..text.find("\"id\"").unwrap()].matches('\n').count() + 1;
        assert!(err.contains(&format!("c.json:{id_line}:")), "{err} (value on line {line})");

        let broken = "{\n  \"schema_version\": 1,\n  \"seed\": oops\n}";
        let err = parse_config(broken, Path::new("b.json")).unwrap_err().to_string();
        assert!(err.starts_with("configuration error: b.json:3:"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let cfg = presets::preset("al_suspended").unwrap();
        let mut v = serde_json::to_value(&cfg).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(parse_config(&v.to_string(), Path::new("x.json")).is_err());
    }

    #[test]
    fn wrong_schema_version() {
        let mut cfg = presets::preset("al_suspended").unwrap();
        cfg.schema_version = 99;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
