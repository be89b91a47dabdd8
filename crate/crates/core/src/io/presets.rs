//! Shipped configurations for the three cooldowns.
//!
//! Durations follow the cooldown table: Al conventional 61 days, Nb
//! conventional 103 days, Al suspended 110 days. Measurement cadences are
//! approximate, read off the published time series.

use crate::analysis::FloorOption;
use crate::device::{ChipGeometry, JunctionBilayer, JunctionOrientation, QubitSpec, SuspensionModel};
use crate::error::{Error, Result};
use crate::events::{BurstModel, CooldownTimeline, ImpactModel, LocalDecay, PoisoningModel, PulseTubeModel};
use crate::qp::{trapping_rate, QpModelParams, DEFAULT_PULSE_DURATION, DEFAULT_RECOMBINATION_RATE};

use super::config::{
    AnalysisOptions, ExperimentConfig, InjectionPlan, MeasurementPlan, PulseTubeProtocol, TomographyPlan,
    SCHEMA_VERSION, SLOW_DT,
};

pub const NAMES: [&str; 3] = ["nb_conventional", "al_conventional", "al_suspended"];

/// Chip-wide impact rate used by every preset, 1/s.
pub const IMPACT_RATE: f64 = 3e-2;
/// Pulse-tube boost of the suspended mount, 1/s.
pub const SUSPENDED_BOOST: f64 = 0.962;

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "nb_conventional" => Ok(nb_conventional()),
        "al_conventional" => Ok(al_conventional()),
        "al_suspended" => Ok(al_suspended()),
        other => Err(Error::Config(format!(
            "unknown preset {other}; available: {}",
            NAMES.join(", ")
        ))),
    }
}

const POSITIONS: [[f64; 2]; 6] = [[2.5, 3.25], [4.0, 3.25], [5.5, 3.25], [2.5, 4.75], [4.0, 4.75], [5.5, 4.75]];

fn qubits(island_gap: f64, ground_plane_gap: f64, orientation: JunctionOrientation) -> Vec<QubitSpec> {
    POSITIONS
        .iter()
        .enumerate()
        .map(|(i, p)| QubitSpec {
            id: format!("Q{}", i + 1),
            island_gap,
            ground_plane_gap,
            junction: JunctionBilayer {
                orientation,
                ..JunctionBilayer::default()
            },
            mapping_fidelity: 0.9,
            charge_dispersion: 3.0,
            position: *p,
            f01: 2.0 * std::f64::consts::PI * (4.4e9 + 0.05e9 * i as f64),
        })
        .collect()
}

/// Dense early, then roughly every four days.
fn cadence(last_day: f64) -> Vec<f64> {
    let mut t = vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.5, 10.0];
    let mut d = 14.0;
    while d <= last_day {
        t.push(d);
        d += 4.0;
    }
    t
}

fn tomography(start_day: f64) -> TomographyPlan {
    TomographyPlan {
        qubits: Vec::new(),
        start_day,
        duration: 1e6,
        interval: 300.0,
        grid_points: 24,
        shots: 2_000,
        d: 1.0,
        nu: 0.8,
        drift_sd: 1e-4,
        max_gap: 3_600.0,
    }
}

fn injection(orientation: JunctionOrientation) -> InjectionPlan {
    InjectionPlan {
        qubit: "Q1".into(),
        model: QpModelParams {
            r: DEFAULT_RECOMBINATION_RATE,
            s: trapping_rate(orientation),
            g_amp: 6.7e-3,
            pulse_start: 1e-4,
            pulse_duration: DEFAULT_PULSE_DURATION,
        },
        delays: (-8..=30).map(|k| k as f64 * 1e-4).collect(),
        noise_sd: 0.0,
        baseline_t1: 60e-6,
        injector: [1.0, 4.0],
        dt: 1e-7,
    }
}

fn base(name: &str, duration_days: f64, qs: Vec<QubitSpec>, poisoning: PoisoningModel) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        seed: 20_250_101,
        chip: ChipGeometry::default(),
        qubits: qs,
        timeline: CooldownTimeline::new(duration_days),
        poisoning,
        measurement: MeasurementPlan {
            times_days: cadence(duration_days - 3.0),
            dt: SLOW_DT,
            samples: 300_000,
            readout_noise_sd: 0.0,
            mask_degeneracy: false,
        },
        charge: None,
        tomography: None,
        injection: None,
        pulse_tube_protocol: Some(PulseTubeProtocol::standard(49.0)),
        suspension: SuspensionModel::default(),
        analysis: AnalysisOptions::default(),
    }
}

/// Nb ground plane, conventional mount: Γp ∝ t^−0.64, 3-fold coincidences
/// ∝ t^−1.3 that settle on the impact floor.
pub fn nb_conventional() -> ExperimentConfig {
    let poisoning = PoisoningModel {
        bursts: BurstModel::new(0.32, -1.3),
        impacts: ImpactModel::new(IMPACT_RATE),
        local: Some(LocalDecay::new(5.31, -0.64)),
        pulse_tube: PulseTubeModel {
            boost: SUSPENDED_BOOST,
            suspended: false,
        },
    };
    let orientation = JunctionOrientation::GapEngineered;
    let mut cfg = base("nb_conventional", 103.0, qubits(183.24, 1550.0, orientation), poisoning);
    cfg.tomography = Some(tomography(40.0));
    cfg.injection = Some(injection(orientation));
    cfg.analysis.coincidence_floor = FloorOption::Free;
    cfg
}

/// Al ground plane, conventional mount: Γp ∝ t^−0.7, slower coincidence
/// decay without a visible floor.
pub fn al_conventional() -> ExperimentConfig {
    let poisoning = PoisoningModel {
        bursts: BurstModel::new(0.1, -0.7),
        impacts: ImpactModel::new(IMPACT_RATE),
        local: Some(LocalDecay::new(1.40, -0.7)),
        pulse_tube: PulseTubeModel {
            boost: SUSPENDED_BOOST,
            suspended: false,
        },
    };
    let orientation = JunctionOrientation::NonIdealGapEngineered;
    let mut cfg = base("al_conventional", 61.0, qubits(183.24, 195.0, orientation), poisoning);
    cfg.injection = Some(injection(orientation));
    cfg.analysis.coincidence_floor = FloorOption::None;
    cfg
}

/// Al ground plane hanging on its wirebonds: same decay as the conventional
/// mount plus a pulse-tube boost that lifts Γp by about 1/s while it runs.
pub fn al_suspended() -> ExperimentConfig {
    let poisoning = PoisoningModel {
        bursts: BurstModel::new(0.1, -0.7),
        impacts: ImpactModel::new(IMPACT_RATE),
        local: Some(LocalDecay::new(1.40, -0.7)),
        pulse_tube: PulseTubeModel {
            boost: SUSPENDED_BOOST,
            suspended: true,
        },
    };
    let orientation = JunctionOrientation::GapEngineered;
    let mut cfg = base("al_suspended", 110.0, qubits(183.24, 195.0, orientation), poisoning);
    cfg.injection = Some(injection(orientation));
    cfg.analysis.coincidence_floor = FloorOption::None;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::days_to_seconds;

    #[test]
    fn durations_follow_the_cooldown_table() {
        assert_eq!(al_conventional().timeline.duration_days, 61.0);
        assert_eq!(nb_conventional().timeline.duration_days, 103.0);
        assert_eq!(al_suspended().timeline.duration_days, 110.0);
    }

    #[test]
    fn nb_cadence_spans_the_cooldown() {
        let cfg = nb_conventional();
        let t = &cfg.measurement.times_days;
        assert!((28..=36).contains(&t.len()), "{}", t.len());
        assert!(*t.last().unwrap() >= 90.0);
        assert_eq!(cfg.qubits.len(), 6);
    }

    #[test]
    fn day_49_rates() {
        let t = days_to_seconds(49.0);
        let s = al_suspended();
        let on = s.poisoning.effective_parity_rate(&s.timeline, t, true);
        let off = s.poisoning.effective_parity_rate(&s.timeline, t, false);
        assert!((on - 1.07).abs() < 0.03, "{on}");
        assert!((off - 0.108).abs() < 0.004, "{off}");
        let nb = nb_conventional();
        let on = nb.poisoning.effective_parity_rate(&nb.timeline, t, true);
        let off = nb.poisoning.effective_parity_rate(&nb.timeline, t, false);
        assert_eq!(on, off);
        assert!((0.436..=0.476).contains(&on), "{on}");
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("cu_magic"), Err(Error::Config(_))));
    }
}
