//! Measurement records synthesized from an event stream: sampled
//! parity-mapping signals, offset-charge records, charge-tomography scans and
//! phonon-injection relaxation records.
//!
//! The parity mapping is modelled at the signal level. Each shot reports the
//! hidden parity multiplied by a mapping outcome that is correct with
//! probability `(1 + F)/2`, plus Gaussian readout noise, so that
//! `E[sample | parity] = F·parity` and the digitized record carries exactly
//! the `(1 − F²)` white component of the Lorentzian model.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::charge::{offset_branch, unwrap_offsets, ChargeRecord};
use crate::analysis::tomography::p1_model;
use crate::device::QubitSpec;
use crate::error::{domain, Error, Result};
use crate::events::{CooldownTimeline, EventStream, PoisoningModel, Window};
use crate::qp::{gamma_from_xqp, XqpTrajectory};
use crate::rng::{rng_from_seed, SimRng};
use crate::units::seconds_to_days;

/// Time-dependent rate of uncorrelated parity flips.
pub trait RateFunction: Sync {
    fn rate(&self, t: f64) -> f64;
    /// An upper bound of `rate` on `[t0, t1]`.
    fn upper_bound(&self, t0: f64, t1: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantRate(pub f64);

impl RateFunction for ConstantRate {
    fn rate(&self, _t: f64) -> f64 {
        self.0
    }

    fn upper_bound(&self, _t0: f64, _t1: f64) -> f64 {
        self.0
    }
}

/// Per-qubit background of a [`PoisoningModel`]: local decay plus the
/// pulse-tube boost, following the timeline's pulse-tube schedule.
pub struct ParityBackground<'a> {
    pub model: &'a PoisoningModel,
    pub timeline: &'a CooldownTimeline,
    /// Multiplies the local decay (per-qubit spread).
    pub local_scale: f64,
}

impl RateFunction for ParityBackground<'_> {
    fn rate(&self, t: f64) -> f64 {
        let on = self.timeline.pulse_tube_on(seconds_to_days(t));
        let local = self.model.local.as_ref().map_or(0.0, |l| l.rate(self.timeline, t));
        let boost = self.model.background_rate(self.timeline, t, on) - local;
        self.local_scale * local + boost
    }

    fn upper_bound(&self, t0: f64, t1: f64) -> f64 {
        // Local decay is non-increasing between resets; check the window start
        // and every reset inside it.
        let mut probes = vec![t0];
        for e in &self.timeline.thermal_excursions {
            let s = crate::units::days_to_seconds(e.start);
            if s > t0 && s < t1 {
                probes.push(s);
            }
        }
        let local = probes
            .iter()
            .map(|t| self.model.local.as_ref().map_or(0.0, |l| l.rate(self.timeline, *t)))
            .fold(0.0, f64::max);
        let boost = if self.model.pulse_tube.suspended {
            self.model.pulse_tube.boost
        } else {
            0.0
        };
        self.local_scale * local + boost
    }
}

/// Flip times of an inhomogeneous Poisson process on `window`, by thinning.
pub fn sample_rate_function(rng: &mut SimRng, rate: &dyn RateFunction, window: Window) -> Vec<f64> {
    let bound = rate.upper_bound(window.start, window.end());
    if !(bound > 0.0) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut t = window.start;
    loop {
        t += -rng.gen::<f64>().ln() / bound;
        if t >= window.end() {
            break;
        }
        if rng.gen::<f64>() * bound < rate.rate(t) {
            out.push(t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityTrace {
    pub qubit_id: String,
    /// s.
    pub dt: f64,
    /// Time of sample 0, s since day 0.
    pub t_start: f64,
    pub samples: Vec<f64>,
    /// Simulation ground truth, ±1.
    pub hidden_parity: Vec<i8>,
    pub mask: Vec<bool>,
}

impl ParityTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return domain("sampling interval must be positive");
        }
        if self.hidden_parity.len() != self.samples.len() || self.mask.len() != self.samples.len() {
            return domain("trace columns differ in length");
        }
        Ok(())
    }
}

/// Readout and masking options for [`synth_parity_trace`].
#[derive(Debug, Clone, Copy)]
pub struct ParityReadout<'a> {
    pub noise_sd: f64,
    /// Offset-charge record of the qubit; when present, samples near charge
    /// degeneracy lose contrast and are masked.
    pub charge: Option<&'a ChargeRecord>,
    /// Minimum `|cos(2π n_g)|` for a sample to be kept.
    pub degeneracy_threshold: f64,
}

impl Default for ParityReadout<'_> {
    fn default() -> Self {
        Self {
            noise_sd: 0.0,
            charge: None,
            degeneracy_threshold: degeneracy_threshold(DEFAULT_MAX_DETECTION_ERROR),
        }
    }
}

/// Largest accepted state-detection error of the masking protocol.
pub const DEFAULT_MAX_DETECTION_ERROR: f64 = 0.157;

/// Parity-mapping contrast at offset charge `n_g`: the precession during the
/// mapping idle is `π/2 · cos(2π n_g)` away from the maximal dispersion point.
pub fn mapping_contrast(n_g: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * (2.0 * std::f64::consts::PI * n_g).cos().abs()).sin()
}

/// Smallest `|cos(2π n_g)|` whose detection error `(1 − contrast)/2` stays
/// at or below `max_error`.
pub fn degeneracy_threshold(max_error: f64) -> f64 {
    let contrast = (1.0 - 2.0 * max_error).clamp(0.0, 1.0);
    contrast.asin() / std::f64::consts::FRAC_PI_2
}

/// Samples `n` parity-mapping shots of qubit `q` starting at `t_start`.
#[allow(clippy::too_many_arguments)]
pub fn synth_parity_trace(
    q: &QubitSpec,
    events: &EventStream,
    background: &dyn RateFunction,
    t_start: f64,
    dt: f64,
    n: usize,
    readout: ParityReadout<'_>,
    seed: u64,
) -> Result<ParityTrace> {
    if n == 0 {
        return domain("trace length must be positive");
    }
    if !(dt > 0.0) {
        return domain("sampling interval must be positive");
    }
    if !(readout.noise_sd >= 0.0) {
        return domain("readout noise must be non-negative");
    }
    let window = Window::new(t_start, n as f64 * dt);
    let mut rng = rng_from_seed(seed);

    let mut flips = sample_rate_function(&mut rng, background, window);
    if let Some(idx) = events.qubit_index(&q.id) {
        flips.extend(
            events
                .events
                .iter()
                .filter(|e| e.flips[idx] && e.t >= window.start && e.t < window.end())
                .map(|e| e.t),
        );
    } else if !events.is_empty() {
        return Err(Error::Domain(format!("qubit {} is not part of the event stream", q.id)));
    }
    flips.sort_by(f64::total_cmp);

    let p_correct = 0.5 * (1.0 + q.mapping_fidelity);
    let noise = Normal::new(0.0, readout.noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
    let mut parity: i8 = if rng.gen::<bool>() { 1 } else { -1 };
    let mut next_flip = 0;
    let mut samples = Vec::with_capacity(n);
    let mut hidden = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for k in 0..n {
        let t = t_start + k as f64 * dt;
        while next_flip < flips.len() && flips[next_flip] <= t {
            parity = -parity;
            next_flip += 1;
        }
        let outcome = if rng.gen::<f64>() < p_correct { 1.0 } else { -1.0 };
        let (contrast, valid) = match readout.charge {
            Some(rec) => {
                let ng = rec.value_at(t);
                let c = (2.0 * std::f64::consts::PI * ng).cos().abs();
                (mapping_contrast(ng), c >= readout.degeneracy_threshold)
            }
            None => (1.0, true),
        };
        let mut s = parity as f64 * outcome * contrast;
        if readout.noise_sd > 0.0 {
            s += noise.sample(&mut rng);
        }
        samples.push(s);
        hidden.push(parity);
        mask.push(valid);
    }
    Ok(ParityTrace {
        qubit_id: q.id.clone(),
        dt,
        t_start,
        samples,
        hidden_parity: hidden,
        mask,
    })
}

/// Offset-charge history of one qubit: a Wiener drift plus the discrete jumps
/// its impacts carry, reported in the tomography branch `[0, 0.5)`.
pub fn synth_charge_record(
    events: &EventStream,
    qubit_id: &str,
    drift_sd: f64,
    window: Window,
    dt: f64,
    seed: u64,
) -> Result<ChargeRecord> {
    if !(window.duration > 0.0) {
        return domain("charge-record horizon must be positive");
    }
    if !(dt > 0.0) {
        return domain("charge-record sampling interval must be positive");
    }
    if !(drift_sd >= 0.0) {
        return domain("drift must be non-negative");
    }
    let idx = events.qubit_index(qubit_id);
    if idx.is_none() && !events.is_empty() {
        return Err(Error::Domain(format!("qubit {qubit_id} is not part of the event stream")));
    }
    let mut rng = rng_from_seed(seed);
    let step = Normal::new(0.0, drift_sd * dt.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let n = (window.duration / dt).floor() as usize + 1;
    let mut value: f64 = rng.gen::<f64>() * 0.5;
    let jumps: Vec<(f64, f64)> = match idx {
        Some(i) => events
            .events
            .iter()
            .filter(|e| e.jumps[i] != 0.0 && e.t >= window.start && e.t < window.end())
            .map(|e| (e.t, e.jumps[i]))
            .collect(),
        None => Vec::new(),
    };
    let mut next = 0;
    let mut times = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for k in 0..n {
        let t = window.start + k as f64 * dt;
        if k > 0 && drift_sd > 0.0 {
            value += step.sample(&mut rng);
        }
        while next < jumps.len() && jumps[next].0 <= t {
            value += jumps[next].1;
            next += 1;
        }
        times.push(t);
        truth.push(value);
    }
    let reported: Vec<f64> = truth.iter().map(|v| offset_branch(*v)).collect();
    let (accumulated, jump_list) = unwrap_offsets(&times, &reported);
    Ok(ChargeRecord {
        qubit_id: qubit_id.to_string(),
        times,
        values: reported,
        accumulated,
        jumps: jump_list,
        truth: Some(truth),
    })
}

/// Ground truth of a tomography scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TomographyTruth {
    pub d: f64,
    pub nu: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyScan {
    pub qubit_id: String,
    /// Time of the scan, s since day 0.
    pub t: f64,
    /// Applied gate charge, e.
    pub n_g_ext: Vec<f64>,
    pub p1: Vec<f64>,
    pub shots: u64,
    pub truth: Option<TomographyTruth>,
}

/// Binomially sampled charge-tomography scan over `grid`.
pub fn synth_tomography_scan(
    q: &QubitSpec,
    t: f64,
    truth: TomographyTruth,
    grid: &[f64],
    shots: u64,
    seed: u64,
) -> Result<TomographyScan> {
    if shots == 0 {
        return domain("shots must be positive");
    }
    if truth.nu == 0.0 {
        return domain("zero contrast makes the offset unidentifiable");
    }
    let mut rng = rng_from_seed(seed);
    let p1 = grid
        .iter()
        .map(|n| {
            let p = p1_model(n + truth.offset, truth.d, truth.nu).clamp(0.0, 1.0);
            let k = Binomial::new(shots, p).map(|b| b.sample(&mut rng)).unwrap_or(0);
            k as f64 / shots as f64
        })
        .collect();
    Ok(TomographyScan {
        qubit_id: q.id.clone(),
        t,
        n_g_ext: grid.to_vec(),
        p1,
        shots,
        truth: Some(truth),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub qubit_id: String,
    /// Delay between the end of the injection pulse and the T1 π pulse, s.
    /// Negative delays place the π pulse inside the injection pulse, which is
    /// then cut short at the π pulse.
    pub delays: Vec<f64>,
    /// 1/T1 − 1/T1_baseline per delay, 1/s.
    pub delta_gamma1: Vec<f64>,
    /// s.
    pub baseline_t1: f64,
    pub injector: [f64; 2],
    /// Start and length of the injection pulse on the trajectory clock, s.
    pub pulse_start: f64,
    pub pulse_duration: f64,
    /// Gap and ω01 used to convert between ΔΓ1 and x_qp.
    pub gap_uev: f64,
    pub omega01: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct InjectionSetup {
    pub pulse_start: f64,
    pub pulse_duration: f64,
    pub baseline_t1: f64,
    pub noise_sd: f64,
    pub injector: [f64; 2],
}

pub fn synth_injection_record(
    traj: &XqpTrajectory,
    q: &QubitSpec,
    delays: &[f64],
    setup: InjectionSetup,
    seed: u64,
) -> Result<InjectionRecord> {
    if !(setup.baseline_t1 > 0.0) {
        return domain("baseline T1 must be positive");
    }
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, setup.noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
    let pulse_end = setup.pulse_start + setup.pulse_duration;
    let mut dg = Vec::with_capacity(delays.len());
    for d in delays {
        let t = pulse_end + d;
        let x = traj.value_at(t).ok_or_else(|| {
            Error::Domain(format!("delay {d} s falls outside the x_qp trajectory"))
        })?;
        let mut v = gamma_from_xqp(x, q.island_gap, q.f01)?;
        if setup.noise_sd > 0.0 {
            v += noise.sample(&mut rng);
        }
        dg.push(v);
    }
    Ok(InjectionRecord {
        qubit_id: q.id.clone(),
        delays: delays.to_vec(),
        delta_gamma1: dg,
        baseline_t1: setup.baseline_t1,
        injector: setup.injector,
        pulse_start: setup.pulse_start,
        pulse_duration: setup.pulse_duration,
        gap_uev: q.island_gap,
        omega01: q.f01,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::JunctionBilayer;
    use crate::events::{Event, EventKind};
    use crate::qp::{fit_injection, integrate_xqp, QpModelParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn qubit(f: f64) -> QubitSpec {
        QubitSpec {
            id: "q1".into(),
            island_gap: 183.0,
            ground_plane_gap: 195.0,
            junction: JunctionBilayer::default(),
            mapping_fidelity: f,
            charge_dispersion: 1.0,
            position: [4.0, 4.0],
            f01: 2.0 * std::f64::consts::PI * 4.5e9,
        }
    }

    fn no_events() -> EventStream {
        EventStream::empty(vec!["q1".into()])
    }

    #[test]
    fn thinning_reproduces_constant_rate() {
        let mut rng = rng_from_seed(4);
        let flips = sample_rate_function(&mut rng, &ConstantRate(1.0), Window::new(0.0, 4e4));
        let n = flips.len() as f64;
        assert!((n - 4e4).abs() < 5.0 * 200.0, "{n}");
        assert!(flips.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn perfect_mapping_reproduces_parity() {
        let t = synth_parity_trace(&qubit(1.0), &no_events(), &ConstantRate(1.0), 0.0, 1e-3, 20_000, ParityReadout::default(), 1)
            .unwrap();
        for (s, p) in t.samples.iter().zip(&t.hidden_parity) {
            assert_eq!(*s, *p as f64);
        }
        assert!(t.mask.iter().all(|m| *m));
    }

    #[test]
    fn zero_rate_keeps_parity_constant() {
        let t = synth_parity_trace(&qubit(0.9), &no_events(), &ConstantRate(0.0), 0.0, 1e-3, 5_000, ParityReadout::default(), 2)
            .unwrap();
        assert!(t.hidden_parity.iter().all(|p| *p == t.hidden_parity[0]));
    }

    #[test]
    fn expected_sample_is_fidelity_times_parity() {
        let readout = ParityReadout {
            noise_sd: 0.3,
            ..ParityReadout::default()
        };
        let t = synth_parity_trace(&qubit(0.7), &no_events(), &ConstantRate(1.0), 0.0, 1e-3, 200_000, readout, 3).unwrap();
        let m = t.samples.iter().zip(&t.hidden_parity).map(|(s, p)| s * *p as f64).sum::<f64>() / t.len() as f64;
        assert!((m - 0.7).abs() < 0.01, "{m}");
    }

    #[test]
    fn traces_are_deterministic() {
        let run = |seed| {
            synth_parity_trace(&qubit(0.9), &no_events(), &ConstantRate(2.0), 0.0, 1e-3, 3_000, ParityReadout::default(), seed)
                .unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11).samples, run(12).samples);
    }

    #[test]
    fn burst_events_flip_parity() {
        let events = EventStream {
            qubit_ids: vec!["q1".into()],
            events: vec![Event {
                t: 0.5,
                kind: EventKind::Burst,
                x: None,
                y: None,
                flips: vec![true],
                jumps: vec![0.0],
            }],
        };
        let t = synth_parity_trace(&qubit(1.0), &events, &ConstantRate(0.0), 0.0, 1e-3, 1_000, ParityReadout::default(), 5).unwrap();
        assert_eq!(t.hidden_parity[499], t.hidden_parity[0]);
        assert_eq!(t.hidden_parity[500], -t.hidden_parity[0]);
    }

    #[test]
    fn contrast_and_threshold() {
        assert_relative_eq!(mapping_contrast(0.0), 1.0);
        assert!(mapping_contrast(0.25).abs() < 1e-12);
        let th = degeneracy_threshold(DEFAULT_MAX_DETECTION_ERROR);
        assert_relative_eq!(th, (1.0f64 - 0.314).asin() / std::f64::consts::FRAC_PI_2, max_relative = 1e-12);
        assert!((th - 0.48).abs() < 0.01);
        // At the threshold the detection error equals the cut.
        let ng = th.acos() / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(0.5 * (1.0 - mapping_contrast(ng)), DEFAULT_MAX_DETECTION_ERROR, max_relative = 1e-9);
    }

    #[test]
    fn degenerate_charge_masks_samples() {
        let record = |v: f64| ChargeRecord::from_values("q1", vec![0.0, 100.0], vec![v, v]).unwrap();
        let at = |v: f64| {
            let rec = record(v);
            let readout = ParityReadout {
                charge: Some(&rec),
                ..ParityReadout::default()
            };
            synth_parity_trace(&qubit(1.0), &no_events(), &ConstantRate(1.0), 0.0, 1e-3, 2_000, readout, 6).unwrap()
        };
        assert!(at(0.25).mask.iter().all(|m| !*m));
        assert!(at(0.0).mask.iter().all(|m| *m));
    }

    #[test]
    fn charge_record_carries_jumps() {
        let events = EventStream {
            qubit_ids: vec!["q1".into()],
            events: vec![Event {
                t: 500.0,
                kind: EventKind::Impact,
                x: Some(4.0),
                y: Some(4.0),
                flips: vec![false],
                jumps: vec![0.2],
            }],
        };
        let rec = synth_charge_record(&events, "q1", 0.0, Window::new(0.0, 1000.0), 10.0, 7).unwrap();
        let big: Vec<_> = rec.jumps.iter().filter(|j| j.magnitude.abs() > 0.15).collect();
        assert_eq!(big.len(), 1);
        assert_relative_eq!(big[0].magnitude, 0.2, epsilon = 1e-12);
        assert_relative_eq!(big[0].t, 500.0);
        assert!(rec.values.iter().all(|v| (0.0..0.5).contains(v)));
    }

    #[test]
    fn tomography_shot_noise_averages_out() {
        let truth = TomographyTruth { d: 1.0, nu: 0.8, offset: 0.13 };
        let grid: Vec<f64> = (0..50).map(|k| k as f64 / 100.0).collect();
        let s = synth_tomography_scan(&qubit(0.9), 0.0, truth, &grid, 100_000, 8).unwrap();
        for (n, p) in grid.iter().zip(&s.p1) {
            let want = p1_model(n + 0.13, 1.0, 0.8);
            assert!((p - want).abs() < 5.0 * (want * (1.0 - want) / 1e5).sqrt() + 1e-9);
        }
        assert!(synth_tomography_scan(&qubit(0.9), 0.0, TomographyTruth { nu: 0.0, ..truth }, &grid, 10, 1).is_err());
    }

    #[test]
    fn injection_round_trip() {
        let p = QpModelParams {
            r: 1e8,
            s: 6.7e3,
            g_amp: 6.7e-3,
            pulse_start: 1e-4,
            pulse_duration: 1e-3,
        };
        let traj = integrate_xqp(&p, 0.0, (0.0, 4e-3), 1e-7).unwrap();
        let delays: Vec<f64> = (-4..=20).map(|k| k as f64 * 1e-4).collect();
        let setup = InjectionSetup {
            pulse_start: p.pulse_start,
            pulse_duration: p.pulse_duration,
            baseline_t1: 50e-6,
            noise_sd: 0.0,
            injector: [1.0, 1.0],
        };
        let rec = synth_injection_record(&traj, &qubit(0.9), &delays, setup, 1).unwrap();
        assert!(rec.delta_gamma1.iter().all(|v| *v >= 0.0));
        let fit = fit_injection(&rec, 1e8).unwrap();
        assert_relative_eq!(fit.param("s").unwrap(), 6.7e3, max_relative = 1e-3);
        assert_relative_eq!(fit.param("g_amp").unwrap(), 6.7e-3, max_relative = 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn tomography_is_periodic(off in 0.0f64..0.5) {
            let truth = TomographyTruth { d: 1.0, nu: 0.8, offset: off };
            let shifted = TomographyTruth { offset: off + 0.5, ..truth };
            let grid: Vec<f64> = (0..20).map(|k| k as f64 / 40.0).collect();
            let a = synth_tomography_scan(&qubit(0.9), 0.0, truth, &grid, 1_000, 3).unwrap();
            let b = synth_tomography_scan(&qubit(0.9), 0.0, shifted, &grid, 1_000, 3).unwrap();
            for (x, y) in a.p1.iter().zip(&b.p1) {
                prop_assert!((x - y).abs() <= 2e-3);
            }
        }
    }
}
