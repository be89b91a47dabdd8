//! Campaign runner: simulates a cooldown to disk, analyzes the artifacts,
//! runs the pulse-tube comparison and summarizes the reports.
//!
//! Artifact tree under the output directory:
//!
//! ```text
//! config.json  manifest.json
//! events/point_000.jsonl
//! traces/point_000/Q1.csv (+ Q1.json sidecar)
//! tomography/Q1.json  injection/record.json
//! pulse_tube/{fast_on,slow_on,off}/Q1.csv
//! reports/<kind>/...json  reports/plots/*.csv  summary.json
//! ```
//!
//! Every random stream is seeded from the config seed and a fixed path of
//! tags, so the same config produces byte-identical files regardless of the
//! thread count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::charge::jump_rate_combined;
use crate::analysis::coincidence::{
    coincidence_anchors, edge_report, edges, shifted_background, CoincidenceReport, CoincidenceWindow,
    DEFAULT_BACKGROUND_SHIFTS,
};
use crate::analysis::{
    coincidence_window, digitize, estimate_impact_rate, estimate_psd, fit_lorentzian, fit_powerlaw, hmm_decode,
    moving_average, separating_window, track_offset_charge, FloorOption, PowerLawFit, default_segment_len,
};
use crate::device::{
    gap_difference_frequency, suspension_elastic_energy, suspension_mode_frequency, thermal_stress, Material,
    StressOptions, SuspensionMode,
};
use crate::error::{Error, Result};
use crate::events::{merge_streams, sample_bursts, sample_impacts, CooldownTimeline, EventStream, PulseTubeSpan, Window};
use crate::fit::{FitFlag, FitResult};
use crate::qp::{fit_injection, integrate_xqp};
use crate::rng::derive_seed;
use crate::synth::{
    synth_charge_record, synth_injection_record, synth_parity_trace, synth_tomography_scan, InjectionRecord,
    InjectionSetup, ParityBackground, ParityReadout, ParityTrace, TomographyScan, TomographyTruth,
};
use crate::units::{days_to_seconds, seconds_to_days};

use super::config::{AnalysisOptions, ExperimentConfig, ShotBlock, SCHEMA_VERSION};
use super::formats::{
    read_events, read_json, read_trace, write_events, write_json, write_plot_csv, write_trace, PlotPoint, Report,
    TraceMeta,
};

const TAG_POINT: u64 = 1;
const TAG_EVENTS: u64 = 2;
const TAG_TRACE: u64 = 3;
const TAG_CHARGE: u64 = 4;
const TAG_TOMOGRAPHY: u64 = 5;
const TAG_INJECTION: u64 = 6;
const TAG_PULSE_TUBE: u64 = 7;

/// Sizes the global rayon pool from `QPLAB_THREADS`. Returns the thread
/// count in use.
pub fn init_thread_pool() -> Result<usize> {
    if let Ok(v) = std::env::var("QPLAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("QPLAB_THREADS must be a positive integer, got {v:?}")))?;
        // A pool that already exists (tests, repeated calls) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Impacts and bursts over `window`, merged in time order.
pub fn sample_events(
    cfg: &ExperimentConfig,
    timeline: &CooldownTimeline,
    window: Window,
    seed: u64,
) -> Result<EventStream> {
    let ids: Vec<String> = cfg.qubits.iter().map(|q| q.id.clone()).collect();
    let impacts = sample_impacts(&cfg.poisoning.impacts, &cfg.chip, &cfg.qubits, window, derive_seed(seed, &[0]))?;
    let bursts = sample_bursts(&cfg.poisoning.bursts, timeline, &ids, window, derive_seed(seed, &[1]))?;
    merge_streams(&impacts, &bursts)
}

/// Events and one parity trace per qubit for a contiguous record.
#[derive(Debug, Clone)]
pub struct Recording {
    pub events: EventStream,
    pub traces: Vec<ParityTrace>,
}

pub fn record_window(
    cfg: &ExperimentConfig,
    timeline: &CooldownTimeline,
    t_start: f64,
    dt: f64,
    samples: usize,
    seed: u64,
) -> Result<Recording> {
    let window = Window::new(t_start, samples as f64 * dt);
    let events = sample_events(cfg, timeline, window, derive_seed(seed, &[TAG_EVENTS]))?;
    let m = &cfg.measurement;
    let traces = cfg
        .qubits
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let charge = match (&cfg.charge, m.mask_degeneracy) {
                (Some(c), true) => Some(synth_charge_record(
                    &events,
                    &q.id,
                    c.drift_sd,
                    window,
                    c.dt,
                    derive_seed(seed, &[TAG_CHARGE, i as u64]),
                )?),
                _ => None,
            };
            let background = ParityBackground {
                model: &cfg.poisoning,
                timeline,
                local_scale: 1.0,
            };
            let readout = ParityReadout {
                noise_sd: m.readout_noise_sd,
                charge: charge.as_ref(),
                ..ParityReadout::default()
            };
            synth_parity_trace(
                q,
                &events,
                &background,
                t_start,
                dt,
                samples,
                readout,
                derive_seed(seed, &[TAG_TRACE, i as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Recording { events, traces })
}

/// The record taken at measurement time `index` of the plan.
pub fn simulate_point(cfg: &ExperimentConfig, index: usize) -> Result<Recording> {
    let m = &cfg.measurement;
    let day = *m
        .times_days
        .get(index)
        .ok_or_else(|| Error::Domain(format!("no measurement time with index {index}")))?;
    record_window(
        cfg,
        &cfg.timeline,
        days_to_seconds(day),
        m.dt,
        m.samples,
        derive_seed(cfg.seed, &[TAG_POINT, index as u64]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitAnalysis {
    pub qubit_id: String,
    /// Lorentzian fit with parameters `gamma` and `fidelity`.
    pub psd: FitResult,
    pub valid_fraction: f64,
    /// Moving-average length used before decoding.
    pub filter_window: usize,
    /// Switching rate of the HMM-decoded path, 1/s.
    pub hmm_rate: Option<f64>,
    pub hmm_transitions: usize,
    pub hmm_duration: f64,
    pub hmm_flags: Vec<FitFlag>,
    /// Why decoding was skipped, when it was.
    pub hmm_error: Option<String>,
}

impl QubitAnalysis {
    pub fn gamma(&self) -> f64 {
        self.psd.params[0]
    }

    pub fn gamma_sigma(&self) -> f64 {
        self.psd.uncertainties[0]
    }

    pub fn fidelity(&self) -> f64 {
        self.psd.params[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetCount {
    pub qubits: Vec<String>,
    pub report: CoincidenceReport,
}

/// n-fold coincidences of one record, averaged over all n-qubit subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub n: usize,
    pub subsets: Vec<SubsetCount>,
    /// Mean observed rate, 1/s.
    pub observed: f64,
    /// Mean delayed-coincidence background, 1/s.
    pub background: f64,
    /// Mean analytic random rate (Poisson form), 1/s.
    pub random: f64,
    /// `observed − background`, 1/s.
    pub excess: f64,
    /// Uncertainty of `excess`, 1/s.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAnalysis {
    pub time_days: f64,
    pub qubits: Vec<QubitAnalysis>,
    pub window: CoincidenceWindow,
    pub folds: Vec<FoldSummary>,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Lorentzian fit of one trace: digitize, Welch PSD, fit. Masked samples enter
/// the PSD as zeros and the level is rescaled by the kept fraction.
pub fn psd_fit(trace: &ParityTrace, opts: &AnalysisOptions) -> Result<(FitResult, Vec<f64>, Vec<bool>, f64)> {
    let digital = digitize(trace, opts.threshold)?;
    let x = digital.as_f64();
    let mask = digital.mask();
    let valid = digital.valid_fraction();
    if valid < 0.05 {
        return Err(Error::InsufficientData(format!(
            "trace {} keeps only {:.1}% of its samples",
            trace.qubit_id,
            100.0 * valid
        )));
    }
    let seg = opts.segment_len.unwrap_or_else(|| default_segment_len(x.len()));
    let mut psd = estimate_psd(&x, trace.dt, seg)?;
    if valid < 1.0 {
        for p in &mut psd.power {
            *p /= valid;
        }
    }
    let fit = fit_lorentzian(&psd, trace.dt, &opts.lorentzian)?;
    Ok((fit, x, mask, valid))
}

const BLOCKS_PER_RECORD: usize = 16;

fn count_subset(
    c: &[usize],
    traces: &[ParityTrace],
    paths: &[Option<Vec<i8>>],
    edge_lists: &[Option<Vec<usize>>],
    window: CoincidenceWindow,
    len: usize,
) -> Result<(SubsetCount, Vec<usize>)> {
    let lists: Vec<Vec<usize>> = c
        .iter()
        .map(|i| edge_lists[*i].clone().expect("decoded"))
        .collect();
    let valid = (0..len)
        .filter(|k| c.iter().all(|i| paths[*i].as_ref().expect("decoded")[*k] != 0))
        .count();
    let dt = traces[0].dt;
    let duration = valid as f64 * dt;
    let anchors = coincidence_anchors(&lists, window.samples);
    let mut report = edge_report(&lists, anchors.len(), duration, window)?;
    report.background = Some(shifted_background(
        &lists,
        len,
        window.samples,
        DEFAULT_BACKGROUND_SHIFTS,
        duration,
    )?);
    let mut blocks = vec![0usize; BLOCKS_PER_RECORD];
    for a in anchors {
        blocks[(a * BLOCKS_PER_RECORD / len).min(BLOCKS_PER_RECORD - 1)] += 1;
    }
    let sub = SubsetCount {
        qubits: c.iter().map(|i| traces[*i].qubit_id.clone()).collect(),
        report,
    };
    Ok((sub, blocks))
}

/// Averages the subsets of one fold. The uncertainty of the mean observed
/// count comes from its scatter across time blocks, which keeps the
/// correlation between overlapping subsets; one count is the smallest
/// uncertainty reported.
fn summarize_fold(n: usize, counted: Vec<(SubsetCount, Vec<usize>)>) -> FoldSummary {
    let k = counted.len() as f64;
    let (subsets, blocks): (Vec<SubsetCount>, Vec<Vec<usize>>) = counted.into_iter().unzip();
    let observed = subsets.iter().map(|s| s.report.observed_rate).sum::<f64>() / k;
    let bg = |s: &SubsetCount| s.report.background.expect("computed");
    let background = subsets.iter().map(|s| bg(s).rate).sum::<f64>() / k;
    let bg_sigma = subsets.iter().map(|s| bg(s).sigma).sum::<f64>() / k;
    let random = subsets.iter().map(|s| s.report.random_rate_poisson).sum::<f64>() / k;
    let duration = subsets.iter().map(|s| s.report.duration).sum::<f64>() / k;
    let b = BLOCKS_PER_RECORD as f64;
    let per_block: Vec<f64> = (0..BLOCKS_PER_RECORD)
        .map(|j| blocks.iter().map(|bl| bl[j] as f64).sum::<f64>() / k)
        .collect();
    let mean_block = per_block.iter().sum::<f64>() / b;
    let var_block = per_block.iter().map(|y| (y - mean_block).powi(2)).sum::<f64>() / (b - 1.0);
    let sigma_obs = (b * var_block).sqrt().max(1.0) / duration;
    FoldSummary {
        n,
        subsets,
        observed,
        background,
        random,
        excess: observed - background,
        sigma: sigma_obs.hypot(bg_sigma),
    }
}

/// Full per-record chain: PSD fits, coincidence window, moving-average filter,
/// HMM decoding and n-fold coincidence counting over every qubit subset.
pub fn analyze_traces(traces: &[ParityTrace], opts: &AnalysisOptions, time_days: f64) -> Result<PointAnalysis> {
    if traces.is_empty() {
        return Err(Error::InsufficientData("no traces to analyze".into()));
    }
    let dt = traces[0].dt;
    if traces.iter().any(|t| t.dt != dt || t.len() != traces[0].len()) {
        return Err(Error::Domain("traces of one record must share dt and length".into()));
    }
    let fits = traces
        .par_iter()
        .map(|t| psd_fit(t, opts))
        .collect::<Result<Vec<_>>>()?;
    let gammas: Vec<f64> = fits.iter().map(|f| f.0.params[0]).collect();
    let window = coincidence_window(&gammas, dt)?;

    let decoded: Vec<(QubitAnalysis, Option<Vec<i8>>)> = fits
        .into_par_iter()
        .zip(traces.par_iter())
        .map(|((fit, x, mask, valid), t)| {
            let filter_window = match opts.filter_window {
                Some(w) => w,
                None => separating_window(fit.params[1], opts.filter_separation)
                    .map_or(window.samples | 1, |l| l.min(window.samples | 1)),
            };
            let mut qa = QubitAnalysis {
                qubit_id: t.qubit_id.clone(),
                psd: fit,
                valid_fraction: valid,
                filter_window,
                hmm_rate: None,
                hmm_transitions: 0,
                hmm_duration: 0.0,
                hmm_flags: Vec::new(),
                hmm_error: None,
            };
            let decoded = moving_average(&x, &mask, filter_window).and_then(|f| hmm_decode(&f, &mask, dt, &opts.hmm));
            let path = match decoded {
                Ok(h) => {
                    qa.hmm_rate = Some(h.switch_rate);
                    qa.hmm_transitions = h.transitions;
                    qa.hmm_duration = h.duration;
                    qa.hmm_flags = h.flags;
                    Some(h.path)
                }
                Err(e) => {
                    qa.hmm_error = Some(e.to_string());
                    None
                }
            };
            (qa, path)
        })
        .collect();
    let (qubits, paths): (Vec<QubitAnalysis>, Vec<Option<Vec<i8>>>) = decoded.into_iter().unzip();

    let len = traces[0].len();
    let edge_lists: Vec<Option<Vec<usize>>> = paths.iter().map(|p| p.as_deref().map(edges)).collect();
    let mut folds = Vec::new();
    for &n in &opts.folds {
        if n < 2 || n > traces.len() {
            continue;
        }
        let subsets = combinations(traces.len(), n)
            .into_par_iter()
            .filter(|c| c.iter().all(|i| paths[*i].is_some()))
            .map(|c| count_subset(&c, traces, &paths, &edge_lists, window, len))
            .collect::<Result<Vec<_>>>()?;
        if subsets.is_empty() {
            continue;
        }
        folds.push(summarize_fold(n, subsets));
    }
    Ok(PointAnalysis {
        time_days,
        qubits,
        window,
        folds,
    })
}

/// Midpoint of the record taken at `day`, in days.
fn midpoint_day(cfg: &ExperimentConfig, day: f64) -> f64 {
    day + 0.5 * seconds_to_days(cfg.measurement.samples as f64 * cfg.measurement.dt)
}

/// Power laws across the cooldown: Γp(t) per qubit and the mean n-fold
/// excess per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooldownFit {
    pub gamma: Vec<(String, PowerLawFit)>,
    pub folds: Vec<(usize, PowerLawFit)>,
}

pub fn fit_cooldown(points: &[PointAnalysis], opts: &AnalysisOptions) -> Result<CooldownFit> {
    if points.is_empty() {
        return Err(Error::InsufficientData("no measurement points".into()));
    }
    let times: Vec<f64> = points.iter().map(|p| p.time_days).collect();
    let exclude: Vec<bool> = (0..points.len()).map(|i| opts.exclude_points.contains(&i)).collect();
    let mut gamma = Vec::new();
    for (qi, q) in points[0].qubits.iter().enumerate() {
        let rates: Vec<f64> = points.iter().map(|p| p.qubits[qi].gamma()).collect();
        let sigmas: Vec<f64> = points.iter().map(|p| p.qubits[qi].gamma_sigma()).collect();
        let fit = fit_powerlaw(&times, &rates, Some(&sigmas), FloorOption::None, Some(&exclude))?;
        gamma.push((q.qubit_id.clone(), fit));
    }
    let mut folds = Vec::new();
    for &n in &opts.folds {
        let mut t = Vec::new();
        let mut y = Vec::new();
        let mut s = Vec::new();
        for p in points {
            if let Some(f) = p.folds.iter().find(|f| f.n == n) {
                t.push(p.time_days);
                y.push(f.excess);
                s.push(f.sigma);
            }
        }
        if t.len() < 4 {
            continue;
        }
        let floor = match opts.coincidence_floor {
            // Background-subtracted counts can be ≤ 0, which a log-log line
            // cannot take; fall back to a zero floor in the nonlinear fit.
            FloorOption::None if y.iter().any(|v| *v <= 0.0) => FloorOption::Fixed(0.0),
            other => other,
        };
        folds.push((n, fit_powerlaw(&t, &y, Some(&s), floor, None)?));
    }
    Ok(CooldownFit { gamma, folds })
}

/// Simulated and analyzed cooldown held in memory.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub points: Vec<PointAnalysis>,
    pub fit: CooldownFit,
}

/// Simulates and analyzes every measurement point without touching disk.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<Campaign> {
    cfg.validate()?;
    let mut points = Vec::with_capacity(cfg.measurement.times_days.len());
    for (i, day) in cfg.measurement.times_days.iter().enumerate() {
        let rec = simulate_point(cfg, i)?;
        points.push(analyze_traces(&rec.traces, &cfg.analysis, midpoint_day(cfg, *day))?);
    }
    let fit = fit_cooldown(&points, &cfg.analysis)?;
    Ok(Campaign { points, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    /// Day of the cooldown at the start of the record.
    pub time_days: f64,
    pub protocol: String,
    pub qubit: String,
    /// Paths relative to the output directory.
    pub trace: String,
    pub report: String,
    pub pulse_tube_on: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub schema_version: u32,
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    pub events: Vec<String>,
    pub tomography: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection: Option<String>,
}

impl CampaignManifest {
    /// Fails with [`Error::MissingArtifact`] for the first listed file that
    /// does not exist.
    pub fn check_files(&self, out: &Path) -> Result<()> {
        let listed = self
            .entries
            .iter()
            .map(|e| &e.trace)
            .chain(&self.events)
            .chain(&self.tomography)
            .chain(self.injection.iter());
        for rel in listed {
            let p = out.join(rel);
            if !p.exists() {
                return Err(Error::MissingArtifact(p));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TomographyRun {
    schema_version: u32,
    qubit: String,
    scans: Vec<TomographyScan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InjectionArtifact {
    schema_version: u32,
    record: InjectionRecord,
}

fn rel(path: &[&str]) -> String {
    path.join("/")
}

fn point_name(i: usize) -> String {
    format!("point_{i:03}")
}

/// Tomography scans of every selected qubit; charge truth carries the impact
/// jumps and drift.
pub fn simulate_tomography(cfg: &ExperimentConfig) -> Result<Vec<Vec<TomographyScan>>> {
    let Some(plan) = &cfg.tomography else {
        return Ok(Vec::new());
    };
    let start = days_to_seconds(plan.start_day);
    let window = Window::new(start, plan.duration);
    let seed = derive_seed(cfg.seed, &[TAG_TOMOGRAPHY]);
    let ids: Vec<String> = cfg.qubits.iter().map(|q| q.id.clone()).collect();
    let events = sample_impacts(&cfg.poisoning.impacts, &cfg.chip, &cfg.qubits, window, derive_seed(seed, &[0]))?;
    let grid: Vec<f64> = (0..plan.grid_points)
        .map(|k| 0.5 * k as f64 / plan.grid_points as f64)
        .collect();
    let selected: Vec<usize> = (0..ids.len())
        .filter(|i| plan.qubits.is_empty() || plan.qubits.contains(&ids[*i]))
        .collect();
    selected
        .par_iter()
        .map(|&i| {
            let q = &cfg.qubits[i];
            let charge = synth_charge_record(
                &events,
                &q.id,
                plan.drift_sd,
                window,
                plan.interval,
                derive_seed(seed, &[1, i as u64]),
            )?;
            let truth = charge.truth.as_ref().expect("synthesized records carry truth");
            charge
                .times
                .iter()
                .zip(truth)
                .enumerate()
                .map(|(k, (t, offset))| {
                    synth_tomography_scan(
                        q,
                        *t,
                        TomographyTruth {
                            d: plan.d,
                            nu: plan.nu,
                            offset: *offset,
                        },
                        &grid,
                        plan.shots,
                        derive_seed(seed, &[2, i as u64, k as u64]),
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

pub fn simulate_injection(cfg: &ExperimentConfig) -> Result<Option<InjectionRecord>> {
    let Some(plan) = &cfg.injection else {
        return Ok(None);
    };
    let q = cfg
        .qubit(&plan.qubit)
        .ok_or_else(|| Error::Config(format!("injection: unknown qubit {}", plan.qubit)))?;
    let last = plan.delays.iter().copied().fold(0.0, f64::max);
    let end = plan.model.pulse_end() + last + 10.0 * plan.dt;
    let traj = integrate_xqp(&plan.model, 0.0, (0.0, end), plan.dt)?;
    let setup = InjectionSetup {
        pulse_start: plan.model.pulse_start,
        pulse_duration: plan.model.pulse_duration,
        baseline_t1: plan.baseline_t1,
        noise_sd: plan.noise_sd,
        injector: plan.injector,
    };
    synth_injection_record(&traj, q, &plan.delays, setup, derive_seed(cfg.seed, &[TAG_INJECTION])).map(Some)
}

/// Writes the full artifact tree for `cfg` under `out`.
pub fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<CampaignManifest> {
    cfg.validate()?;
    let hash = cfg.hash();
    write_json(&out.join("config.json"), cfg)?;
    let mut entries = Vec::new();
    let mut events = Vec::new();
    for (i, day) in cfg.measurement.times_days.iter().enumerate() {
        let rec = simulate_point(cfg, i)?;
        let name = point_name(i);
        let ev = rel(&["events", &format!("{name}.jsonl")]);
        write_events(&out.join(&ev), &rec.events)?;
        events.push(ev);
        let on = cfg.timeline.pulse_tube_on(*day);
        for tr in &rec.traces {
            let trace = rel(&["traces", &name, &format!("{}.csv", tr.qubit_id)]);
            let meta = TraceMeta {
                schema_version: SCHEMA_VERSION,
                qubit: tr.qubit_id.clone(),
                dt: tr.dt,
                t_start: tr.t_start,
                samples: tr.len(),
                seed: cfg.seed,
                config_hash: hash.clone(),
                protocol: "campaign".into(),
                time_days: *day,
                pulse_tube_on: on,
            };
            write_trace(&out.join(&trace), tr, &meta, true)?;
            entries.push(ManifestEntry {
                index: i,
                time_days: *day,
                protocol: "campaign".into(),
                qubit: tr.qubit_id.clone(),
                trace,
                report: rel(&["reports", "psd", &format!("{name}_{}.json", tr.qubit_id)]),
                pulse_tube_on: on,
            });
        }
    }
    let mut tomography = Vec::new();
    for scans in simulate_tomography(cfg)? {
        let Some(first) = scans.first() else { continue };
        let path = rel(&["tomography", &format!("{}.json", first.qubit_id)]);
        write_json(
            &out.join(&path),
            &TomographyRun {
                schema_version: SCHEMA_VERSION,
                qubit: first.qubit_id.clone(),
                scans,
            },
        )?;
        tomography.push(path);
    }
    let injection = match simulate_injection(cfg)? {
        Some(record) => {
            let path = rel(&["injection", "record.json"]);
            write_json(
                &out.join(&path),
                &InjectionArtifact {
                    schema_version: SCHEMA_VERSION,
                    record,
                },
            )?;
            Some(path)
        }
        None => None,
    };
    let manifest = CampaignManifest {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        config_hash: hash,
        seed: cfg.seed,
        entries,
        events,
        tomography,
        injection,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// What `run_analyze` should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Psd,
    Hmm,
    Coincidence,
    Powerlaw,
    Tomography,
    Inject,
    Mechanics,
}

impl AnalysisKind {
    pub const ALL: [AnalysisKind; 7] = [
        AnalysisKind::Psd,
        AnalysisKind::Hmm,
        AnalysisKind::Coincidence,
        AnalysisKind::Powerlaw,
        AnalysisKind::Tomography,
        AnalysisKind::Inject,
        AnalysisKind::Mechanics,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            Error::Config(format!(
                "unknown analysis {s:?}; expected psd, hmm, coincidence, powerlaw, tomography, inject or mechanics"
            ))
        })
    }
}

/// Written reports, relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub reports: Vec<String>,
    /// Reports that carry at least one flag.
    pub flagged: Vec<String>,
}

impl AnalyzeSummary {
    fn push(&mut self, out: &Path, rel_path: String, report: &Report) -> Result<()> {
        write_json(&out.join(&rel_path), report)?;
        if report.is_flagged() {
            self.flagged.push(rel_path.clone());
        }
        self.reports.push(rel_path);
        Ok(())
    }
}

fn load_manifest(cfg: &ExperimentConfig, out: &Path) -> Result<CampaignManifest> {
    let manifest: CampaignManifest = read_json(&out.join("manifest.json"))?;
    if manifest.config_hash != cfg.hash() {
        return Err(Error::Mismatch(format!(
            "artifacts in {} were produced by config {}, not {}",
            out.display(),
            manifest.config_hash,
            cfg.hash()
        )));
    }
    manifest.check_files(out)?;
    Ok(manifest)
}

fn load_point(manifest: &CampaignManifest, out: &Path, index: usize, hash: &str) -> Result<Vec<ParityTrace>> {
    manifest
        .entries
        .iter()
        .filter(|e| e.index == index)
        .map(|e| {
            let (trace, meta) = read_trace(&out.join(&e.trace))?;
            if meta.config_hash != hash {
                return Err(Error::Mismatch(format!("{} belongs to another config", e.trace)));
            }
            Ok(trace)
        })
        .collect()
}

fn psd_report(hash: &str, q: &QubitAnalysis, day: f64) -> Report {
    let mut r = Report::from_fit("psd_fit", hash, &q.psd);
    r.qubit_id = Some(q.qubit_id.clone());
    r.time_days = Some(day);
    r.extra = serde_json::json!({ "valid_fraction": q.valid_fraction });
    r
}

fn hmm_report(hash: &str, q: &QubitAnalysis, day: f64) -> Report {
    let mut r = Report::new("hmm", hash);
    r.qubit_id = Some(q.qubit_id.clone());
    r.time_days = Some(day);
    match q.hmm_rate {
        Some(rate) => {
            let sigma = (q.hmm_transitions as f64).max(1.0).sqrt() / q.hmm_duration;
            r = r.with_param("switch_rate", rate, sigma);
            r.flags = q.hmm_flags.clone();
        }
        None => {
            r.flags.push(FitFlag::InsufficientData);
            r.extra = serde_json::json!({ "error": q.hmm_error });
        }
    }
    r
}

fn coincidence_report(hash: &str, f: &FoldSummary, day: f64, window: CoincidenceWindow, r_impact: f64) -> Report {
    let mut r = Report::new("coincidence", hash)
        .with_param("observed", f.observed, f.sigma)
        .with_param("background", f.background, 0.0)
        .with_param("random_formula", f.random, 0.0)
        .with_param("excess", f.excess, f.sigma)
        .with_param("predicted_saturation", r_impact / 2f64.powi(f.n as i32), 0.0);
    r.time_days = Some(day);
    r.extra = serde_json::json!({
        "n": f.n,
        "window": window,
        "subsets": f.subsets,
    });
    r
}

fn powerlaw_report(hash: &str, fit: &PowerLawFit, what: &str) -> Report {
    let mut r = Report::from_fit("powerlaw", hash, &fit.fit);
    r.extra = serde_json::json!({
        "series": what,
        "floor": fit.floor,
        "excluded": fit.excluded,
        "accepted": fit.accepted,
    });
    if !fit.accepted && r.flags.is_empty() {
        r.flags.push(FitFlag::Unidentifiable("exponent".into()));
    }
    r
}

/// Reads the artifacts written by [`run_simulate`] and writes the requested
/// reports under `out/reports`.
pub fn run_analyze(cfg: &ExperimentConfig, out: &Path, kinds: &[AnalysisKind]) -> Result<AnalyzeSummary> {
    cfg.validate()?;
    let manifest = load_manifest(cfg, out)?;
    let hash = manifest.config_hash.clone();
    let opts = &cfg.analysis;
    let mut summary = AnalyzeSummary::default();
    let wants = |k: AnalysisKind| kinds.contains(&k);

    let trace_kinds = [AnalysisKind::Psd, AnalysisKind::Hmm, AnalysisKind::Coincidence, AnalysisKind::Powerlaw];
    if trace_kinds.iter().any(|k| wants(*k)) {
        let mut points = Vec::new();
        for (i, day) in cfg.measurement.times_days.iter().enumerate() {
            let traces = load_point(&manifest, out, i, &hash)?;
            if traces.is_empty() {
                return Err(Error::MissingArtifact(out.join("traces").join(point_name(i))));
            }
            let _ = read_events(&out.join(&manifest.events[i]))?;
            let p = analyze_traces(&traces, opts, midpoint_day(cfg, *day))?;
            let name = point_name(i);
            for q in &p.qubits {
                if wants(AnalysisKind::Psd) {
                    let path = rel(&["reports", "psd", &format!("{name}_{}.json", q.qubit_id)]);
                    summary.push(out, path, &psd_report(&hash, q, p.time_days))?;
                }
                if wants(AnalysisKind::Hmm) {
                    let path = rel(&["reports", "hmm", &format!("{name}_{}.json", q.qubit_id)]);
                    summary.push(out, path, &hmm_report(&hash, q, p.time_days))?;
                }
            }
            if wants(AnalysisKind::Coincidence) {
                for f in &p.folds {
                    let path = rel(&["reports", "coincidence", &format!("{name}_n{}.json", f.n)]);
                    let r = coincidence_report(&hash, f, p.time_days, p.window, cfg.poisoning.impacts.rate);
                    summary.push(out, path, &r)?;
                }
            }
            points.push(p);
        }
        let plots = out.join("reports").join("plots");
        for (qi, q) in points[0].qubits.iter().enumerate() {
            let pts: Vec<PlotPoint> = points
                .iter()
                .map(|p| PlotPoint {
                    x: p.time_days,
                    y: p.qubits[qi].gamma(),
                    yerr: p.qubits[qi].gamma_sigma(),
                })
                .collect();
            write_plot_csv(&plots.join(format!("gamma_{}.csv", q.qubit_id)), &pts)?;
        }
        for &n in &opts.folds {
            let pts: Vec<PlotPoint> = points
                .iter()
                .filter_map(|p| p.folds.iter().find(|f| f.n == n).map(|f| (p.time_days, f)))
                .map(|(x, f)| PlotPoint {
                    x,
                    y: f.excess,
                    yerr: f.sigma,
                })
                .collect();
            write_plot_csv(&plots.join(format!("coincidence_n{n}.csv")), &pts)?;
        }
        if wants(AnalysisKind::Powerlaw) {
            match fit_cooldown(&points, opts) {
                Ok(fit) => {
                    for (id, f) in &fit.gamma {
                        let path = rel(&["reports", "powerlaw", &format!("gamma_{id}.json")]);
                        let mut r = powerlaw_report(&hash, f, "gamma");
                        r.qubit_id = Some(id.clone());
                        summary.push(out, path, &r)?;
                    }
                    for (n, f) in &fit.folds {
                        let path = rel(&["reports", "powerlaw", &format!("coincidence_n{n}.json")]);
                        summary.push(out, path, &powerlaw_report(&hash, f, &format!("coincidence_n{n}")))?;
                    }
                }
                Err(Error::InsufficientData(msg)) => {
                    let mut r = Report::new("powerlaw", &hash);
                    r.flags.push(FitFlag::InsufficientData);
                    r.extra = serde_json::json!({ "error": msg });
                    summary.push(out, rel(&["reports", "powerlaw", "gamma.json"]), &r)?;
                }
                Err(e) => return Err(e),
            }
        }
    }

    if wants(AnalysisKind::Tomography) && !manifest.tomography.is_empty() {
        let mut per_qubit = Vec::new();
        let mut pooled = Vec::new();
        for path in &manifest.tomography {
            let run: TomographyRun = read_json(&out.join(path))?;
            let max_gap = cfg.tomography.as_ref().map_or(3600.0, |t| t.max_gap);
            let records = track_offset_charge(&run.scans, max_gap)?;
            let jr = jump_rate_combined(&records, opts.jump_threshold)?;
            let mut r = Report::new("tomography", &hash)
                .with_param("gamma_c", jr.rate, jr.sigma)
                .with_param("gamma_c_upper_95", jr.upper_bound, 0.0);
            r.qubit_id = Some(run.qubit.clone());
            r.extra = serde_json::json!({
                "jumps": jr.count,
                "duration": jr.duration,
                "records": records.len(),
                "jump_magnitude_limit": 0.25,
            });
            let pts: Vec<PlotPoint> = records
                .iter()
                .flat_map(|rec| rec.times.iter().zip(&rec.accumulated))
                .map(|(t, a)| PlotPoint { x: *t, y: *a, yerr: 0.0 })
                .collect();
            write_plot_csv(&out.join("reports").join("plots").join(format!("charge_{}.csv", run.qubit)), &pts)?;
            summary.push(out, rel(&["reports", "tomography", &format!("{}.json", run.qubit)]), &r)?;
            per_qubit.push(serde_json::json!({ "qubit": run.qubit, "gamma_c": jr.rate, "sigma": jr.sigma }));
            pooled.push(jr);
        }
        let k = pooled.len() as f64;
        let gamma_c = pooled.iter().map(|j| j.rate).sum::<f64>() / k;
        let sigma_c = pooled.iter().map(|j| j.sigma * j.sigma).sum::<f64>().sqrt() / k;
        let impact = estimate_impact_rate(gamma_c, sigma_c, opts.sensing_radius, &cfg.chip)?;
        let mut r = Report::new("impact_rate", &hash)
            .with_param("r_impact", impact.rate, impact.sigma)
            .with_param("gamma_c", gamma_c, sigma_c);
        r.extra = serde_json::json!({ "per_qubit": per_qubit, "sensing_radius": opts.sensing_radius });
        summary.push(out, rel(&["reports", "impact_rate.json"]), &r)?;
    }

    if wants(AnalysisKind::Inject) {
        if let Some(path) = &manifest.injection {
            let art: InjectionArtifact = read_json(&out.join(path))?;
            let r_rec = cfg.injection.as_ref().map_or(crate::qp::DEFAULT_RECOMBINATION_RATE, |i| i.model.r);
            let fit = fit_injection(&art.record, r_rec)?;
            let mut r = Report::from_fit("injection", &hash, &fit);
            r.qubit_id = Some(art.record.qubit_id.clone());
            summary.push(out, rel(&["reports", "injection.json"]), &r)?;
        }
    }

    if wants(AnalysisKind::Mechanics) {
        summary.push(out, rel(&["reports", "mechanics.json"]), &mechanics_report(cfg, &hash)?)?;
    }
    Ok(summary)
}

/// Suspension resonances, elastic energy of a 1 nm displacement and the
/// thermal-contraction stress of the film materials.
pub fn mechanics_report(cfg: &ExperimentConfig, hash: &str) -> Result<Report> {
    let s = &cfg.suspension;
    let mut r = Report::new("mechanics", hash)
        .with_param("f_in_and_out_khz", suspension_mode_frequency(s, SuspensionMode::InAndOut), 0.0)
        .with_param("f_side_to_side_khz", suspension_mode_frequency(s, SuspensionMode::SideToSide), 0.0)
        .with_param(
            "elastic_energy_1nm_in_and_out_j",
            suspension_elastic_energy(s, 1.0, SuspensionMode::InAndOut)?,
            0.0,
        )
        .with_param(
            "elastic_energy_1nm_side_to_side_j",
            suspension_elastic_energy(s, 1.0, SuspensionMode::SideToSide)?,
            0.0,
        );
    for m in [Material::aluminum(), Material::niobium()] {
        let key = m.name.to_lowercase();
        r = r
            .with_param(&format!("stress_{key}_mpa"), thermal_stress(&m, StressOptions::default()), 0.0)
            .with_param(
                &format!("stress_{key}_on_si_mpa"),
                thermal_stress(&m, StressOptions { subtract_substrate: true }),
                0.0,
            );
    }
    if let Some(q) = cfg.qubits.first() {
        r = r.with_param(
            "gap_difference_ghz",
            gap_difference_frequency(q.ground_plane_gap, q.island_gap),
            0.0,
        );
    }
    Ok(r)
}

/// On/off Γp of one qubit from the pulse-tube protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTubePair {
    pub qubit_id: String,
    /// Lorentzian fits per block: `fast_on`, `slow_on`, `off`.
    pub fits: BTreeMap<String, FitResult>,
    /// Model Γp with the pulse tube on and off at the protocol day, 1/s.
    pub expected_on: f64,
    pub expected_off: f64,
}

impl PulseTubePair {
    pub fn gamma(&self, block: &str) -> Option<(f64, f64)> {
        self.fits.get(block).map(|f| (f.params[0], f.uncertainties[0]))
    }
}

const BLOCKS: [&str; 3] = ["fast_on", "slow_on", "off"];

/// Runs the three shot blocks back to back at the protocol day with the pulse
/// tube stopped during `off`, writing traces under `out/pulse_tube` when
/// `out` is given.
pub fn run_pulse_tube_protocol(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<PulseTubePair>> {
    cfg.validate()?;
    let p = cfg
        .pulse_tube_protocol
        .as_ref()
        .ok_or_else(|| Error::Config("config has no pulse_tube_protocol section".into()))?;
    let blocks: [&ShotBlock; 3] = [&p.fast_on, &p.slow_on, &p.off];
    let mut starts = Vec::with_capacity(3);
    let mut t = days_to_seconds(p.day);
    for b in blocks {
        starts.push(t);
        t += b.samples() as f64 * b.dt;
    }
    let off_start = seconds_to_days(starts[2]);
    let off_end = seconds_to_days(t);
    if off_end > cfg.timeline.duration_days {
        return Err(Error::Config("pulse-tube protocol runs past the end of the timeline".into()));
    }
    let mut timeline = cfg.timeline.clone();
    timeline.pulse_tube_schedule.retain(|s| s.end <= seconds_to_days(starts[0]) || s.start >= off_end);
    timeline.pulse_tube_schedule.push(PulseTubeSpan {
        start: seconds_to_days(starts[0]),
        end: off_start,
        on: true,
    });
    timeline.pulse_tube_schedule.push(PulseTubeSpan {
        start: off_start,
        end: off_end,
        on: false,
    });
    timeline.pulse_tube_schedule.sort_by(|a, b| a.start.total_cmp(&b.start));
    timeline.validate()?;

    let hash = cfg.hash();
    let mut fits: Vec<BTreeMap<String, FitResult>> = vec![BTreeMap::new(); cfg.qubits.len()];
    for (b, (block, name)) in blocks.iter().zip(BLOCKS).enumerate() {
        let rec = record_window(
            cfg,
            &timeline,
            starts[b],
            block.dt,
            block.samples(),
            derive_seed(cfg.seed, &[TAG_PULSE_TUBE, b as u64]),
        )?;
        let results = rec
            .traces
            .par_iter()
            .map(|tr| psd_fit(tr, &cfg.analysis).map(|f| f.0))
            .collect::<Result<Vec<_>>>()?;
        for (qi, fit) in results.into_iter().enumerate() {
            fits[qi].insert(name.to_string(), fit);
        }
        if let Some(out) = out {
            let on = name != "off";
            for tr in &rec.traces {
                let meta = TraceMeta {
                    schema_version: SCHEMA_VERSION,
                    qubit: tr.qubit_id.clone(),
                    dt: tr.dt,
                    t_start: tr.t_start,
                    samples: tr.len(),
                    seed: cfg.seed,
                    config_hash: hash.clone(),
                    protocol: name.to_string(),
                    time_days: seconds_to_days(starts[b]),
                    pulse_tube_on: on,
                };
                let path: PathBuf = out.join("pulse_tube").join(name).join(format!("{}.csv", tr.qubit_id));
                write_trace(&path, tr, &meta, true)?;
            }
        }
    }
    let t_mid = days_to_seconds(p.day);
    let expected_on = cfg.poisoning.effective_parity_rate(&cfg.timeline, t_mid, true);
    let expected_off = cfg.poisoning.effective_parity_rate(&cfg.timeline, t_mid, false);
    Ok(cfg
        .qubits
        .iter()
        .zip(fits)
        .map(|(q, fits)| PulseTubePair {
            qubit_id: q.id.clone(),
            fits,
            expected_on,
            expected_off,
        })
        .collect())
}

pub fn pulse_tube_report(hash: &str, pair: &PulseTubePair, day: f64) -> Report {
    let mut r = Report::new("pulse_tube", hash);
    r.qubit_id = Some(pair.qubit_id.clone());
    r.time_days = Some(day);
    for (block, fit) in &pair.fits {
        r = r
            .with_param(&format!("gamma_{block}"), fit.params[0], fit.uncertainties[0])
            .with_param(&format!("fidelity_{block}"), fit.params[1], fit.uncertainties[1]);
        r.flags.extend(fit.flags.iter().cloned());
    }
    r.extra = serde_json::json!({
        "expected_on": pair.expected_on,
        "expected_off": pair.expected_off,
    });
    r
}

/// Protocol plus reports under `out/reports/pulse_tube`.
pub fn run_pulse_tube(cfg: &ExperimentConfig, out: &Path) -> Result<AnalyzeSummary> {
    let pairs = run_pulse_tube_protocol(cfg, Some(out))?;
    let hash = cfg.hash();
    let day = cfg.pulse_tube_protocol.as_ref().map_or(0.0, |p| p.day);
    let mut summary = AnalyzeSummary::default();
    for pair in &pairs {
        let path = rel(&["reports", "pulse_tube", &format!("{}.json", pair.qubit_id)]);
        summary.push(out, path, &pulse_tube_report(&hash, pair, day))?;
    }
    Ok(summary)
}

/// Collection of every report under `out/reports`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub counts: BTreeMap<String, usize>,
    pub flagged: Vec<String>,
    /// Headline numbers keyed by report path and parameter.
    pub headline: BTreeMap<String, BTreeMap<String, Option<f64>>>,
}

fn collect_json(dir: &Path, base: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_json(&p, base, out)?;
        } else if p.extension().is_some_and(|e| e == "json") {
            let rel_path = p
                .strip_prefix(base)
                .expect("under base")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push((rel_path, p));
        }
    }
    Ok(())
}

/// Gathers reports into `out/summary.json`.
pub fn run_report(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let dir = out.join("reports");
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir));
    }
    let hash = cfg.hash();
    let mut files = Vec::new();
    collect_json(&dir, out, &mut files)?;
    let mut counts = BTreeMap::new();
    let mut flagged = Vec::new();
    let mut headline = BTreeMap::new();
    for (rel_path, path) in files {
        let r: Report = read_json(&path)?;
        if r.config_hash != hash {
            return Err(Error::Mismatch(format!("{rel_path} belongs to config {}", r.config_hash)));
        }
        *counts.entry(r.kind.clone()).or_insert(0) += 1;
        if r.is_flagged() {
            flagged.push(rel_path.clone());
        }
        if matches!(r.kind.as_str(), "powerlaw" | "impact_rate" | "injection" | "mechanics" | "pulse_tube") {
            headline.insert(rel_path, r.params.clone());
        }
    }
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        counts,
        flagged,
        headline,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(6, 3).len(), 20);
        assert_eq!(combinations(4, 4), vec![vec![0, 1, 2, 3]]);
        assert_eq!(combinations(6, 2)[0], vec![0, 1]);
    }

    #[test]
    fn analysis_kinds_parse() {
        assert_eq!(AnalysisKind::parse("powerlaw").unwrap(), AnalysisKind::Powerlaw);
        assert!(matches!(AnalysisKind::parse("fft"), Err(Error::Config(_))));
    }
}
