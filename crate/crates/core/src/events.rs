//! Stochastic poisoning history of a cooldown.
//!
//! Three sources flip charge parity:
//!
//! * ionizing impacts, a homogeneous Poisson process over the whole chip that
//!   also displaces offset charge on nearby qubits;
//! * chip-wide stress-release bursts whose rate decays as a power law of the
//!   time spent cold, sampled by thinning;
//! * an uncorrelated per-qubit background (a local power-law decay plus the
//!   pulse-tube boost for suspended chips), which enters the trace
//!   synthesizer as a rate function instead of discrete events.
//!
//! Event times are seconds since day 0 of the cooldown.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::device::{ChipGeometry, QubitSpec};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};
use crate::units::{days_to_seconds, seconds_to_days};

/// Closed interval in days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayInterval {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTubeSpan {
    pub start: f64,
    pub end: f64,
    pub on: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooldownTimeline {
    pub duration_days: f64,
    #[serde(default = "default_t0_definition")]
    pub t0_definition: String,
    #[serde(default)]
    pub thermal_excursions: Vec<DayInterval>,
    /// Spans not covered by the schedule run with the pulse tube on.
    #[serde(default)]
    pub pulse_tube_schedule: Vec<PulseTubeSpan>,
}

fn default_t0_definition() -> String {
    "mixing chamber below 100 mK".into()
}

impl CooldownTimeline {
    pub fn new(duration_days: f64) -> Self {
        Self {
            duration_days,
            t0_definition: default_t0_definition(),
            thermal_excursions: Vec::new(),
            pulse_tube_schedule: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_days > 0.0) {
            return Err(Error::Config("timeline duration must be positive".into()));
        }
        let check = |spans: Vec<(f64, f64)>, what: &str| -> Result<()> {
            let mut sorted = spans;
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (s, e) in &sorted {
                if !(0.0 <= *s && s <= e && *e <= self.duration_days) {
                    return Err(Error::Config(format!(
                        "{what} [{s}, {e}] is not inside [0, {}] days",
                        self.duration_days
                    )));
                }
            }
            for w in sorted.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(Error::Config(format!("overlapping {what} intervals")));
                }
            }
            Ok(())
        };
        check(
            self.thermal_excursions.iter().map(|i| (i.start, i.end)).collect(),
            "thermal excursion",
        )?;
        check(
            self.pulse_tube_schedule.iter().map(|i| (i.start, i.end)).collect(),
            "pulse-tube span",
        )
    }

    /// Days since the most recent clock reset: the start of the latest thermal
    /// excursion at or before `t_days`, or day 0.
    pub fn effective_age_days(&self, t_days: f64, reset_on_excursion: bool) -> f64 {
        if !reset_on_excursion {
            return t_days;
        }
        let last = self
            .thermal_excursions
            .iter()
            .filter(|e| e.start <= t_days)
            .map(|e| e.start)
            .fold(0.0, f64::max);
        t_days - last
    }

    /// Reset instants (days) strictly inside `(t0, t1)`.
    fn resets_between(&self, t0_days: f64, t1_days: f64) -> Vec<f64> {
        let mut r: Vec<f64> = self
            .thermal_excursions
            .iter()
            .map(|e| e.start)
            .filter(|s| *s > t0_days && *s < t1_days)
            .collect();
        r.sort_by(f64::total_cmp);
        r
    }

    pub fn pulse_tube_on(&self, t_days: f64) -> bool {
        self.pulse_tube_schedule
            .iter()
            .find(|s| s.start <= t_days && t_days < s.end)
            .map_or(true, |s| s.on)
    }
}

/// `λ(t) = amplitude · (t / 1 day)^exponent`, clamped below `t_min_days`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    /// Rate at an age of one day, 1/s.
    pub amplitude: f64,
    pub exponent: f64,
    #[serde(default = "default_t_min_days")]
    pub t_min_days: f64,
}

pub const DEFAULT_T_MIN_DAYS: f64 = 0.01;

fn default_t_min_days() -> f64 {
    DEFAULT_T_MIN_DAYS
}

impl PowerLaw {
    pub fn new(amplitude: f64, exponent: f64) -> Self {
        Self {
            amplitude,
            exponent,
            t_min_days: DEFAULT_T_MIN_DAYS,
        }
    }

    pub fn rate_at_age(&self, age_days: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude * age_days.max(self.t_min_days).powf(self.exponent)
    }

    /// `∫ λ dt` over ages `[a0, a1]` (days), in events.
    pub fn integral_over_ages(&self, a0: f64, a1: f64) -> f64 {
        let tm = self.t_min_days;
        let flat = (a1.min(tm) - a0.min(tm)).max(0.0) * self.amplitude * tm.powf(self.exponent);
        let (lo, hi) = (a0.max(tm), a1.max(tm));
        let p = self.exponent + 1.0;
        let tail = if p.abs() < 1e-12 {
            self.amplitude * (hi / lo).ln()
        } else {
            self.amplitude * (hi.powf(p) - lo.powf(p)) / p
        };
        days_to_seconds(flat + tail)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.amplitude >= 0.0) {
            return Err(Error::Config(format!("{what}: amplitude must be non-negative")));
        }
        if !(self.exponent < 0.0) {
            return Err(Error::Config(format!(
                "{what}: power-law exponent must be negative, got {}",
                self.exponent
            )));
        }
        if !(self.t_min_days > 0.0) {
            return Err(Error::Config(format!("{what}: t_min must be positive")));
        }
        Ok(())
    }
}

/// Chip-wide stress-release bursts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstModel {
    #[serde(flatten)]
    pub law: PowerLaw,
    #[serde(default = "default_true")]
    pub reset_on_excursion: bool,
    #[serde(default = "default_flip_prob")]
    pub per_qubit_flip_prob: f64,
}

fn default_true() -> bool {
    true
}

fn default_flip_prob() -> f64 {
    0.5
}

impl BurstModel {
    pub fn new(amplitude: f64, exponent: f64) -> Self {
        Self {
            law: PowerLaw::new(amplitude, exponent),
            reset_on_excursion: true,
            per_qubit_flip_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate("burst model")?;
        check_prob(self.per_qubit_flip_prob, "burst flip probability")
    }

    /// Burst rate (1/s) at `t_s` seconds into the cooldown.
    pub fn rate(&self, timeline: &CooldownTimeline, t_s: f64) -> f64 {
        let age = timeline.effective_age_days(seconds_to_days(t_s), self.reset_on_excursion);
        self.law.rate_at_age(age)
    }
}

/// Uncorrelated per-qubit parity-switching rate that decays like the bursts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDecay {
    #[serde(flatten)]
    pub law: PowerLaw,
    #[serde(default = "default_true")]
    pub reset_on_excursion: bool,
}

impl LocalDecay {
    pub fn new(amplitude: f64, exponent: f64) -> Self {
        Self {
            law: PowerLaw::new(amplitude, exponent),
            reset_on_excursion: true,
        }
    }

    pub fn rate(&self, timeline: &CooldownTimeline, t_s: f64) -> f64 {
        let age = timeline.effective_age_days(seconds_to_days(t_s), self.reset_on_excursion);
        self.law.rate_at_age(age)
    }
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must lie in [0, 1], got {p}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactModel {
    /// Impacts per second over the whole chip.
    pub rate: f64,
    #[serde(default = "default_flip_prob")]
    pub per_qubit_flip_prob: f64,
    /// Qubits closer than this (mm) register an offset-charge jump.
    #[serde(default = "default_jump_radius")]
    pub charge_jump_radius: f64,
    /// Range of jump magnitudes in e; the sign is random.
    #[serde(default = "default_jump_range")]
    pub jump_magnitude: [f64; 2],
    /// When set, the flip probability decays as `exp(-d / footprint)` with
    /// distance `d` (mm) from the impact.
    #[serde(default)]
    pub footprint_mm: Option<f64>,
}

fn default_jump_radius() -> f64 {
    1.0
}

fn default_jump_range() -> [f64; 2] {
    [0.15, 0.25]
}

impl ImpactModel {
    pub fn new(rate: f64) -> Self {
        Self {
            rate,
            per_qubit_flip_prob: 0.5,
            charge_jump_radius: default_jump_radius(),
            jump_magnitude: default_jump_range(),
            footprint_mm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0) {
            return Err(Error::Config("impact rate must be non-negative".into()));
        }
        check_prob(self.per_qubit_flip_prob, "impact flip probability")?;
        let [lo, hi] = self.jump_magnitude;
        if !(0.0 < lo && lo <= hi && hi <= 0.5) {
            return Err(Error::Config("jump magnitude range must satisfy 0 < lo <= hi <= 0.5".into()));
        }
        if !(self.charge_jump_radius >= 0.0) {
            return Err(Error::Config("charge-jump radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Extra parity-switching rate while the pulse tube runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PulseTubeModel {
    /// 1/s, added to each qubit's switching rate.
    pub boost: f64,
    /// Boost applies only to chips hanging on their wirebonds.
    pub suspended: bool,
}

/// Everything that sets a qubit's parity-switching rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisoningModel {
    pub bursts: BurstModel,
    pub impacts: ImpactModel,
    #[serde(default)]
    pub local: Option<LocalDecay>,
    #[serde(default)]
    pub pulse_tube: PulseTubeModel,
}

impl PoisoningModel {
    pub fn validate(&self) -> Result<()> {
        self.bursts.validate()?;
        self.impacts.validate()?;
        if let Some(l) = &self.local {
            l.law.validate("local decay")?;
        }
        if !(self.pulse_tube.boost >= 0.0) {
            return Err(Error::Config("pulse-tube boost must be non-negative".into()));
        }
        Ok(())
    }

    /// Uncorrelated per-qubit rate at `t_s`: local decay plus pulse-tube boost.
    pub fn background_rate(&self, timeline: &CooldownTimeline, t_s: f64, pulse_tube_on: bool) -> f64 {
        let local = self.local.as_ref().map_or(0.0, |l| l.rate(timeline, t_s));
        let boost = if pulse_tube_on && self.pulse_tube.suspended {
            self.pulse_tube.boost
        } else {
            0.0
        };
        local + boost
    }

    /// Expected single-qubit parity-switching rate Γp at `t_s`.
    pub fn effective_parity_rate(&self, timeline: &CooldownTimeline, t_s: f64, pulse_tube_on: bool) -> f64 {
        self.bursts.rate(timeline, t_s) * self.bursts.per_qubit_flip_prob
            + self.impacts.rate * self.impacts.per_qubit_flip_prob
            + self.background_rate(timeline, t_s, pulse_tube_on)
    }
}

/// `Γp(t) = A·t^α·p_flip + R·p_flip + boost`, the additive decomposition of
/// the single-qubit switching rate into bursts, impacts and pulse tube.
pub fn effective_parity_rate(
    bursts: &BurstModel,
    impacts: &ImpactModel,
    pulse_tube_boost: f64,
    timeline: &CooldownTimeline,
    t_s: f64,
    boost_active: bool,
) -> f64 {
    let boost = if boost_active { pulse_tube_boost } else { 0.0 };
    bursts.rate(timeline, t_s) * bursts.per_qubit_flip_prob + impacts.rate * impacts.per_qubit_flip_prob + boost
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Impact,
    Burst,
}

/// One poisoning event, serialized as a JSON line
/// `{"t", "kind", "x", "y", "flips", "jumps"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    /// Impact location, mm; absent for chip-wide bursts.
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub flips: Vec<bool>,
    /// Offset-charge jump per qubit, e.
    pub jumps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventStream {
    pub qubit_ids: Vec<String>,
    pub events: Vec<Event>,
}

/// Time window in seconds since day 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub duration: f64,
}

impl Window {
    pub fn new(start: f64, duration: f64) -> Self {
        Self { start, duration }
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

impl EventStream {
    pub fn empty(qubit_ids: Vec<String>) -> Self {
        Self {
            qubit_ids,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn qubit_index(&self, id: &str) -> Option<usize> {
        self.qubit_ids.iter().position(|q| q == id)
    }

    /// Checks ordering, per-qubit vector lengths and that bursts carry no charge.
    pub fn validate(&self) -> Result<()> {
        let n = self.qubit_ids.len();
        for w in self.events.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Domain(format!("event times not increasing at t = {}", w[1].t)));
            }
        }
        for e in &self.events {
            if e.flips.len() != n || e.jumps.len() != n {
                return Err(Error::Domain(format!("event at t = {} has wrong qubit count", e.t)));
            }
            if e.kind == EventKind::Burst && e.jumps.iter().any(|j| *j != 0.0) {
                return Err(Error::Domain(format!("burst at t = {} carries charge", e.t)));
            }
        }
        Ok(())
    }

    /// Times at which qubit `idx` flips parity.
    pub fn flip_times(&self, idx: usize) -> Vec<f64> {
        self.events.iter().filter(|e| e.flips[idx]).map(|e| e.t).collect()
    }
}

fn uniform_sorted_times(rng: &mut SimRng, window: Window, count: u64) -> Vec<f64> {
    let mut times: Vec<f64> = (0..count)
        .map(|_| window.start + rng.gen::<f64>() * window.duration)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

fn poisson_count(rng: &mut SimRng, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
    }
}

/// Homogeneous Poisson impacts over the chip during `window`.
pub fn sample_impacts(
    m: &ImpactModel,
    chip: &ChipGeometry,
    qubits: &[QubitSpec],
    window: Window,
    seed: u64,
) -> Result<EventStream> {
    m.validate()?;
    if !(window.duration > 0.0) {
        return Err(Error::Domain("impact horizon must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let count = poisson_count(&mut rng, m.rate * window.duration);
    let times = uniform_sorted_times(&mut rng, window, count);
    let [jlo, jhi] = m.jump_magnitude;
    let events = times
        .into_iter()
        .map(|t| {
            let x = rng.gen::<f64>() * chip.width;
            let y = rng.gen::<f64>() * chip.height;
            let mut flips = Vec::with_capacity(qubits.len());
            let mut jumps = Vec::with_capacity(qubits.len());
            for q in qubits {
                let d = ((q.position[0] - x).powi(2) + (q.position[1] - y).powi(2)).sqrt();
                let p = match m.footprint_mm {
                    Some(f) => m.per_qubit_flip_prob * (-d / f).exp(),
                    None => m.per_qubit_flip_prob,
                };
                flips.push(rng.gen::<f64>() < p);
                let jump = if d <= m.charge_jump_radius {
                    let mag = jlo + (jhi - jlo) * rng.gen::<f64>();
                    if rng.gen::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                } else {
                    0.0
                };
                jumps.push(jump);
            }
            Event {
                t,
                kind: EventKind::Impact,
                x: Some(x),
                y: Some(y),
                flips,
                jumps,
            }
        })
        .collect();
    Ok(EventStream {
        qubit_ids: qubits.iter().map(|q| q.id.clone()).collect(),
        events,
    })
}

/// Candidate-and-reject sampling of a decreasing-between-resets rate.
///
/// The window is cut at every clock reset and wherever the age doubles, so
/// that the majorizing constant of each piece stays within a factor
/// `2^|α|` of the actual rate.
pub(crate) fn thin_power_law(
    rng: &mut SimRng,
    law: &PowerLaw,
    timeline: &CooldownTimeline,
    reset: bool,
    window: Window,
) -> Vec<f64> {
    if law.amplitude == 0.0 || window.duration <= 0.0 {
        return Vec::new();
    }
    let t0 = seconds_to_days(window.start);
    let t1 = seconds_to_days(window.end());
    let mut cuts = vec![t0];
    let resets = if reset {
        timeline.resets_between(t0, t1)
    } else {
        Vec::new()
    };
    let mut pieces_end: Vec<f64> = resets.clone();
    pieces_end.push(t1);
    for end in pieces_end {
        let mut a = *cuts.last().unwrap();
        loop {
            let age = timeline.effective_age_days(a, reset).max(law.t_min_days);
            let next = a + age;
            if next >= end {
                break;
            }
            cuts.push(next);
            a = next;
        }
        cuts.push(end);
    }
    cuts.dedup();
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let lam_max = law.rate_at_age(timeline.effective_age_days(a, reset));
        let span = days_to_seconds(b - a);
        let n = poisson_count(rng, lam_max * span);
        let start = days_to_seconds(a);
        let mut cand: Vec<f64> = (0..n).map(|_| start + rng.gen::<f64>() * span).collect();
        cand.sort_by(f64::total_cmp);
        for t in cand {
            let lam = law.rate_at_age(timeline.effective_age_days(seconds_to_days(t), reset));
            if rng.gen::<f64>() * lam_max < lam {
                out.push(t);
            }
        }
    }
    out.dedup();
    out
}

/// Chip-wide bursts during `window`, by thinning the power-law rate.
pub fn sample_bursts(
    m: &BurstModel,
    timeline: &CooldownTimeline,
    qubit_ids: &[String],
    window: Window,
    seed: u64,
) -> Result<EventStream> {
    m.validate()?;
    timeline.validate()?;
    let mut rng = rng_from_seed(seed);
    let times = thin_power_law(&mut rng, &m.law, timeline, m.reset_on_excursion, window);
    let n = qubit_ids.len();
    let events = times
        .into_iter()
        .map(|t| Event {
            t,
            kind: EventKind::Burst,
            x: None,
            y: None,
            flips: (0..n).map(|_| rng.gen::<f64>() < m.per_qubit_flip_prob).collect(),
            jumps: vec![0.0; n],
        })
        .collect();
    Ok(EventStream {
        qubit_ids: qubit_ids.to_vec(),
        events,
    })
}

/// Time-ordered union of two streams over the same qubits.
pub fn merge_streams(a: &EventStream, b: &EventStream) -> Result<EventStream> {
    let ids = match (a.qubit_ids.is_empty(), b.qubit_ids.is_empty()) {
        (true, _) => b.qubit_ids.clone(),
        (_, true) => a.qubit_ids.clone(),
        _ if a.qubit_ids == b.qubit_ids => a.qubit_ids.clone(),
        _ => return Err(Error::Domain("cannot merge streams over different qubits".into())),
    };
    let mut events = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a.events[i].t <= b.events[j].t);
        if take_a {
            events.push(a.events[i].clone());
            i += 1;
        } else {
            events.push(b.events[j].clone());
            j += 1;
        }
    }
    Ok(EventStream { qubit_ids: ids, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::JunctionBilayer;
    use proptest::prelude::*;

    fn qubit(id: &str, x: f64, y: f64) -> QubitSpec {
        QubitSpec {
            id: id.into(),
            island_gap: 183.0,
            ground_plane_gap: 183.0,
            junction: JunctionBilayer::default(),
            mapping_fidelity: 0.9,
            charge_dispersion: 1.0,
            position: [x, y],
            f01: 2.0 * std::f64::consts::PI * 4.5e9,
        }
    }

    fn four_qubits() -> Vec<QubitSpec> {
        vec![qubit("Q1", 2.0, 2.0), qubit("Q2", 6.0, 2.0), qubit("Q3", 2.0, 6.0), qubit("Q4", 6.0, 6.0)]
    }

    #[test]
    fn impact_count_is_poisson() {
        let m = ImpactModel::new(3e-2);
        let s = sample_impacts(&m, &ChipGeometry::default(), &four_qubits(), Window::new(0.0, 1e5), 11).unwrap();
        let n = s.len() as f64;
        assert!((n - 3000.0).abs() < 5.0 * 3000f64.sqrt(), "{n}");
        s.validate().unwrap();
    }

    #[test]
    fn zero_rate_gives_empty_stream() {
        let m = ImpactModel::new(0.0);
        let s = sample_impacts(&m, &ChipGeometry::default(), &four_qubits(), Window::new(0.0, 1e5), 1).unwrap();
        assert!(s.is_empty());
        let b = BurstModel::new(0.0, -0.7);
        let tl = CooldownTimeline::new(10.0);
        let s = sample_bursts(&b, &tl, &["Q1".to_string()], Window::new(0.0, 1e5), 1).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn four_fold_flip_rate_near_saturation() {
        let m = ImpactModel::new(3e-2);
        let horizon = 2e6;
        let s = sample_impacts(&m, &ChipGeometry::default(), &four_qubits(), Window::new(0.0, horizon), 5).unwrap();
        let all = s.events.iter().filter(|e| e.flips.iter().all(|f| *f)).count() as f64;
        let expected = 3e-2 / 16.0 * horizon;
        assert!((all - expected).abs() < 4.0 * expected.sqrt(), "{all} vs {expected}");
        assert!((3e-2f64 / 16.0 - 1.9e-3).abs() < 0.05e-3);
    }

    #[test]
    fn jumps_only_near_impact() {
        let m = ImpactModel::new(0.05);
        let qs = four_qubits();
        let s = sample_impacts(&m, &ChipGeometry::default(), &qs, Window::new(0.0, 1e5), 3).unwrap();
        let mut jumped = 0;
        for e in &s.events {
            for (q, j) in qs.iter().zip(&e.jumps) {
                let d = ((q.position[0] - e.x.unwrap()).powi(2) + (q.position[1] - e.y.unwrap()).powi(2)).sqrt();
                if *j != 0.0 {
                    jumped += 1;
                    assert!(d <= 1.0);
                    assert!(j.abs() > 0.15 - 1e-12 && j.abs() <= 0.25);
                } else {
                    assert!(d > 1.0);
                }
            }
        }
        assert!(jumped > 0);
    }

    #[test]
    fn burst_count_matches_integral() {
        // λ(1 day) = 1/s, α = -0.7, over days [1, 2].
        let b = BurstModel::new(1.0, -0.7);
        let tl = CooldownTimeline::new(10.0);
        let w = Window::new(days_to_seconds(1.0), days_to_seconds(1.0));
        let s = sample_bursts(&b, &tl, &["Q1".to_string()], w, 21).unwrap();
        // Closed form: ∫_1^2 t^-0.7 dt days → seconds.
        let expected = (2f64.powf(0.3) - 1.0) / 0.3 * 86_400.0;
        let n = s.len() as f64;
        assert!((n - expected).abs() < 5.0 * expected.sqrt(), "{n} vs {expected}");
        assert!((b.law.integral_over_ages(1.0, 2.0) - expected).abs() < 1e-6 * expected);
        s.validate().unwrap();
    }

    #[test]
    fn thinning_matches_rate_in_windows() {
        let b = BurstModel::new(0.5, -0.7);
        let tl = CooldownTimeline::new(10.0);
        let w = Window::new(days_to_seconds(0.1), days_to_seconds(2.0));
        let s = sample_bursts(&b, &tl, &["Q1".to_string()], w, 99).unwrap();
        let k = 25;
        let width = w.duration / k as f64;
        let mut chi2 = 0.0;
        for i in 0..k {
            let a = w.start + i as f64 * width;
            let e = b.law.integral_over_ages(seconds_to_days(a), seconds_to_days(a + width));
            let o = s.events.iter().filter(|ev| ev.t >= a && ev.t < a + width).count() as f64;
            chi2 += (o - e).powi(2) / e;
        }
        // chi-square with 25 dof: the 99.9th percentile is 52.6.
        assert!(chi2 < 52.6, "chi2 = {chi2}");
    }

    #[test]
    fn excursion_resets_burst_rate() {
        let mut tl = CooldownTimeline::new(60.0);
        tl.thermal_excursions.push(DayInterval { start: 32.0, end: 32.2 });
        let b = BurstModel::new(1.0, -0.7);
        let before = b.rate(&tl, days_to_seconds(31.99));
        let after = b.rate(&tl, days_to_seconds(32.01));
        assert!(after > before * 10.0);
        let no_reset = BurstModel {
            reset_on_excursion: false,
            ..b.clone()
        };
        assert!(no_reset.rate(&tl, days_to_seconds(32.01)) < before);
        // Sampled counts agree.
        let ids = vec!["Q1".to_string()];
        let w_before = Window::new(days_to_seconds(31.9), days_to_seconds(0.1));
        let w_after = Window::new(days_to_seconds(32.0), days_to_seconds(0.1));
        let nb = sample_bursts(&b, &tl, &ids, w_before, 1).unwrap().len();
        let na = sample_bursts(&b, &tl, &ids, w_after, 2).unwrap().len();
        assert!(na > 5 * nb, "{na} vs {nb}");
    }

    #[test]
    fn positive_exponent_rejected() {
        let b = BurstModel::new(1.0, 0.2);
        let r = sample_bursts(&b, &CooldownTimeline::new(1.0), &[], Window::new(0.0, 1.0), 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn effective_rate_composition() {
        let tl = CooldownTimeline::new(110.0);
        let t = days_to_seconds(49.0);
        let zero = effective_parity_rate(&BurstModel::new(0.0, -0.7), &ImpactModel::new(0.0), 0.0, &tl, t, true);
        assert_eq!(zero, 0.0);
        let b = BurstModel::new(2.0, -0.7);
        let i = ImpactModel::new(3e-2);
        let late = effective_parity_rate(&b, &i, 0.0, &tl, days_to_seconds(1e9), false);
        assert!((late - 1.5e-2).abs() < 1e-6);
        let on = effective_parity_rate(&b, &i, 0.9, &tl, t, true);
        let off = effective_parity_rate(&b, &i, 0.9, &tl, t, false);
        assert!((on - off - 0.9).abs() < 1e-12);
    }

    #[test]
    fn flip_fraction_is_binomial() {
        let b = BurstModel::new(1.0, -0.5);
        let tl = CooldownTimeline::new(10.0);
        let ids: Vec<String> = (0..3).map(|i| format!("Q{i}")).collect();
        let s = sample_bursts(&b, &tl, &ids, Window::new(days_to_seconds(1.0), 2e4), 8).unwrap();
        let n = s.len() as f64;
        let all = s.events.iter().filter(|e| e.flips.iter().all(|f| *f)).count() as f64;
        let p = 0.125;
        assert!((all - n * p).abs() < 4.0 * (n * p * (1.0 - p)).sqrt());
    }

    #[test]
    fn identical_seed_is_bit_identical() {
        let m = ImpactModel::new(0.1);
        let a = sample_impacts(&m, &ChipGeometry::default(), &four_qubits(), Window::new(0.0, 1e4), 42).unwrap();
        let b = sample_impacts(&m, &ChipGeometry::default(), &four_qubits(), Window::new(0.0, 1e4), 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn timeline_validation() {
        let mut tl = CooldownTimeline::new(10.0);
        tl.thermal_excursions = vec![DayInterval { start: 1.0, end: 3.0 }, DayInterval { start: 2.0, end: 4.0 }];
        assert!(tl.validate().is_err());
        tl.thermal_excursions = vec![DayInterval { start: 9.0, end: 11.0 }];
        assert!(tl.validate().is_err());
    }

    fn stream_strategy() -> impl Strategy<Value = EventStream> {
        proptest::collection::vec(0.0f64..1e4, 0..40).prop_map(|mut ts| {
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            EventStream {
                qubit_ids: vec!["Q1".into()],
                events: ts
                    .into_iter()
                    .map(|t| Event {
                        t,
                        kind: EventKind::Burst,
                        x: None,
                        y: None,
                        flips: vec![true],
                        jumps: vec![0.0],
                    })
                    .collect(),
            }
        })
    }

    proptest! {
        #[test]
        fn merge_is_sorted_union(a in stream_strategy(), b in stream_strategy()) {
            let m = merge_streams(&a, &b).unwrap();
            prop_assert_eq!(m.len(), a.len() + b.len());
            prop_assert!(m.events.windows(2).all(|w| w[0].t <= w[1].t));
            let empty = EventStream::empty(vec![]);
            prop_assert_eq!(merge_streams(&a, &empty).unwrap(), a.clone());
        }
    }
}
