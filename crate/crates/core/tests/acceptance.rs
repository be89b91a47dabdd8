//! Acceptance criteria. Each test writes one `criterion N: PASS|FAIL` line to
//! stderr, bypassing the harness capture, and then asserts.

use std::io::Write;
use std::time::Instant;

use qplab_core::analysis::charge::offset_branch;
use qplab_core::analysis::coincidence::count_edge_coincidences;
use qplab_core::analysis::{
    default_segment_len, digitize, estimate_psd, fit_lorentzian, fit_tomography, jump_rate, lorentzian_psd,
    predict_saturation, LorentzianOptions,
};
use qplab_core::device::{
    gap_difference_frequency, gap_from_thickness, suspension_elastic_energy, suspension_mode_frequency,
    JunctionBilayer, JunctionOrientation, Material, QubitSpec, SuspensionModel, SuspensionMode,
};
use qplab_core::events::{Event, EventKind, EventStream, Window};
use qplab_core::io::presets::{self, IMPACT_RATE};
use qplab_core::io::{run_campaign, run_pulse_tube_protocol};
use qplab_core::qp::{fit_injection, integrate_xqp, trapping_rate, QpModelParams};
use qplab_core::rng::rng_from_seed;
use qplab_core::synth::{
    synth_charge_record, synth_injection_record, synth_parity_trace, synth_tomography_scan, ConstantRate,
    InjectionSetup, ParityReadout, TomographyTruth,
};
use rand::Rng;
use rand_distr::{Distribution, Exp};

fn verdict(n: u32, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {word} {detail}");
    assert!(pass, "criterion {n}: {detail}");
}

fn qubit(id: &str, f: f64) -> QubitSpec {
    QubitSpec {
        id: id.into(),
        island_gap: 183.0,
        ground_plane_gap: 195.0,
        junction: JunctionBilayer::default(),
        mapping_fidelity: f,
        charge_dispersion: 1.0,
        position: [4.0, 4.0],
        f01: 2.0 * std::f64::consts::PI * 4.5e9,
    }
}

#[test]
fn criterion_01_lorentzian_recovery() {
    let start = Instant::now();
    let q = qubit("q", 0.9);
    let trace = synth_parity_trace(
        &q,
        &EventStream::empty(vec!["q".into()]),
        &ConstantRate(1.0),
        0.0,
        1e-3,
        2_000_000,
        ParityReadout::default(),
        2024,
    )
    .unwrap();
    let d = digitize(&trace, 0.0).unwrap();
    let psd = estimate_psd(&d.as_f64(), trace.dt, default_segment_len(trace.len())).unwrap();
    let fit = fit_lorentzian(&psd, trace.dt, &LorentzianOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let g = fit.param("gamma").unwrap();
    let f = fit.param("fidelity").unwrap();
    let pass = (g - 1.0).abs() <= 0.05 && (f - 0.9).abs() <= 0.02 && secs < 10.0;
    verdict(1, pass, &format!("gamma {g:.4}/s, F {f:.4}, {secs:.2} s"));
}

#[test]
fn criterion_02_zero_frequency_identity() {
    let mut rng = rng_from_seed(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let gamma = 10f64.powf(rng.gen_range(-3.0..3.0));
        let f = rng.gen_range(0.0..1.0);
        let dt = 10f64.powf(rng.gen_range(-6.0..-1.0));
        let expected = f * f / gamma + (1.0 - f * f) * dt;
        let got = lorentzian_psd(0.0, gamma, f, dt);
        worst = worst.max(((got - expected) / expected).abs());
    }
    verdict(2, worst <= 4.0 * f64::EPSILON, &format!("worst relative error {worst:.2e}"));
}

/// Poisson edge times of one path on a sample grid: strictly increasing
/// indices, `rate` per sample.
fn poisson_edges(rate: f64, len: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let gap = Exp::new(rate).unwrap();
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        let k = t.ceil() as usize;
        if k >= len {
            return out;
        }
        if out.last() != Some(&k) {
            out.push(k);
        }
    }
}

#[test]
fn criterion_03_random_coincidence_background() {
    let start = Instant::now();
    // Rates in 1/s; the window keeps r·Δt_w small for every fold so that the
    // first-order background is the right reference.
    let dt = 1e-3;
    let cases: [(usize, f64, f64, f64); 3] = [(2, 1.0, 0.01, 2e5), (3, 1.0, 0.01, 1e7), (4, 1.0, 0.025, 3e7)];
    let mut details = Vec::new();
    let mut pass = true;
    for (n, r, r_dtw, seconds) in cases {
        let n_w = (r_dtw / r / dt).round() as usize;
        let dtw = n_w as f64 * dt;
        let len = (seconds / dt) as usize;
        let lists: Vec<Vec<usize>> = (0..n).map(|i| poisson_edges(r * dt, len, 31 * n as u64 + i as u64)).collect();
        let rates: Vec<f64> = lists.iter().map(|l| l.len() as f64 / seconds).collect();
        let count = count_edge_coincidences(&lists, n_w);
        let expected = rates.iter().product::<f64>() * dtw.powi(n as i32 - 1) * seconds;
        let z = (count as f64 - expected) / expected.sqrt();
        pass &= z.abs() <= 3.0;
        details.push(format!("n={n}: {count} vs {expected:.1} ({z:+.2}σ)"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    verdict(3, pass, &format!("{}; {secs:.1} s", details.join(", ")));
}

#[test]
fn criterion_04_saturation_arithmetic() {
    let s4 = predict_saturation(3e-2, 4).unwrap();
    let s3 = predict_saturation(3e-2, 3).unwrap();
    let pass = (s4 - 1.875e-3).abs() < 1e-15
        && (s4 - 1.9e-3).abs() <= 0.6e-3
        && (s3 - 4e-3).abs() <= 1e-3;
    verdict(4, pass, &format!("4-fold {s4:.4e}/s, 3-fold {s3:.4e}/s"));
}

#[test]
fn criterion_05_powerlaw_recovery() {
    const SEEDS: u64 = 50;
    let floor_target = 4.8e-3;
    let alpha_range = -0.72..=-0.56;
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 0..SEEDS {
        let mut cfg = presets::nb_conventional();
        cfg.seed = seed;
        let c = run_campaign(&cfg).unwrap();
        let alpha = c.fit.gamma[0].1.exponent();
        let floor = c
            .fit
            .folds
            .iter()
            .find(|(n, _)| *n == 3)
            .and_then(|(_, f)| f.floor_value())
            .unwrap_or(f64::NAN);
        let ok = alpha_range.contains(&alpha) && (floor - floor_target).abs() <= 0.3 * floor_target;
        good += ok as u32;
        lines.push(format!("{seed}:{alpha:.3}/{floor:.2e}"));
    }
    let pass = good as f64 >= 0.9 * SEEDS as f64;
    let _ = writeln!(std::io::stderr(), "criterion 5 seeds (alpha/3-fold floor): {}", lines.join(" "));
    verdict(
        5,
        pass,
        &format!("{good}/{SEEDS} seeds with alpha in [-0.72, -0.56] and 3-fold floor within 30% of 4.8e-3/s (impact floor R/8 = {:.3e})", IMPACT_RATE / 8.0),
    );
}

#[test]
fn criterion_06_gap_arithmetic() {
    let al = Material::aluminum();
    let gaps: Vec<f64> = [185.0, 80.0, 40.0].iter().map(|d| gap_from_thickness(&al, *d).unwrap()).collect();
    let printed = [183.0, 188.0, 195.0];
    let rounded = gaps.iter().zip(printed).all(|(g, p)| (g - p).abs() <= 0.5);
    let f = gap_difference_frequency(195.0, 187.5);
    let pass = rounded && (f - 1.8).abs() <= 0.05;
    verdict(6, pass, &format!("gaps {:.2}/{:.2}/{:.2} μeV, difference {f:.3} GHz", gaps[0], gaps[1], gaps[2]));
}

#[test]
fn criterion_07_qp_dynamics() {
    let mut rng = rng_from_seed(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = QpModelParams {
            r: 10f64.powf(rng.gen_range(5.0..9.0)),
            s: 10f64.powf(rng.gen_range(2.0..5.0)),
            g_amp: 10f64.powf(rng.gen_range(-5.0..0.0)),
            pulse_start: 0.0,
            pulse_duration: 1.0,
        };
        let x = p.steady_state(p.g_amp);
        // Independent root: bisection on r x² + s x − g.
        let h = |x: f64| p.r * x * x + p.s * x - p.g_amp;
        let (mut lo, mut hi) = (0.0, p.g_amp / p.s);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        worst = worst.max((x - lo).abs() / lo);
    }

    let truth = QpModelParams {
        r: 1e8,
        s: 6.7e3,
        g_amp: 6.7e-3,
        pulse_start: 1e-4,
        pulse_duration: 1e-3,
    };
    let traj = integrate_xqp(&truth, 0.0, (0.0, 4.2e-3), 1e-7).unwrap();
    let delays: Vec<f64> = (-8..=30).map(|k| k as f64 * 1e-4).collect();
    let setup = InjectionSetup {
        pulse_start: truth.pulse_start,
        pulse_duration: truth.pulse_duration,
        baseline_t1: 50e-6,
        noise_sd: 0.0,
        injector: [1.0, 1.0],
    };
    let rec = synth_injection_record(&traj, &qubit("q", 0.9), &delays, setup, 1).unwrap();
    let fit = fit_injection(&rec, truth.r).unwrap();
    let s_err = (fit.param("s").unwrap() - truth.s).abs() / truth.s;
    let g_err = (fit.param("g_amp").unwrap() - truth.g_amp).abs() / truth.g_amp;

    let s_al = trapping_rate(presets::al_conventional().qubits[0].junction.orientation);
    let s_sus = trapping_rate(presets::al_suspended().qubits[0].junction.orientation);
    let contrast = (s_al * 1e-6 - 0.18e-2).abs() < 1e-12 && (s_sus * 1e-6 - 0.67e-2).abs() < 1e-12;
    let gap_engineered = trapping_rate(JunctionOrientation::GapEngineered) > trapping_rate(JunctionOrientation::NonIdealGapEngineered);

    let pass = worst <= 1e-6 && s_err <= 0.01 && g_err <= 0.01 && contrast && gap_engineered;
    verdict(
        7,
        pass,
        &format!(
            "steady state worst {worst:.1e}, fit s {:.2}%, g_amp {:.2}%, presets s {:.2e}/{:.2e} per μs",
            100.0 * s_err,
            100.0 * g_err,
            s_al * 1e-6,
            s_sus * 1e-6
        ),
    );
}

#[test]
fn criterion_08_tomography_and_jump_rate() {
    let q = qubit("q", 0.9);
    let grid: Vec<f64> = (0..40).map(|k| 0.5 * k as f64 / 40.0).collect();
    let mut worst: f64 = 0.0;
    for (i, offset) in [0.03, 0.12, 0.27, 0.41, 0.66, 0.93].iter().enumerate() {
        let truth = TomographyTruth { d: 1.0, nu: 0.8, offset: *offset };
        let scan = synth_tomography_scan(&q, 0.0, truth, &grid, 100_000, 80 + i as u64).unwrap();
        let fit = fit_tomography(&scan).unwrap();
        let got = fit.param("offset").unwrap();
        let want = offset_branch(*offset);
        let d = (got - want).abs();
        worst = worst.max(d.min(0.5 - d));
    }

    let rate = 1.7e-3;
    let seconds = 1e6;
    let mut rng = rng_from_seed(8);
    let gap = Exp::new(rate).unwrap();
    let mut events = Vec::new();
    let mut t = gap.sample(&mut rng);
    while t < seconds {
        let size = rng.gen_range(0.17..0.23) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        events.push(Event {
            t,
            kind: EventKind::Impact,
            x: Some(4.0),
            y: Some(4.0),
            flips: vec![false],
            jumps: vec![size],
        });
        t += gap.sample(&mut rng);
    }
    let planted = events.len();
    let stream = EventStream {
        qubit_ids: vec!["q".into()],
        events,
    };
    let record = synth_charge_record(&stream, "q", 0.0, Window::new(0.0, seconds), 1.0, 9).unwrap();
    let jr = jump_rate(&record, 0.15).unwrap();
    let pass = worst <= 0.01 && jr.count == planted && (jr.rate - rate).abs() <= 2.0 * jr.sigma;
    verdict(
        8,
        pass,
        &format!(
            "worst offset error {worst:.4} e, jump rate {:.3e} ± {:.1e}/s ({} of {planted} jumps)",
            jr.rate, jr.sigma, jr.count
        ),
    );
}

#[test]
fn criterion_09_pulse_tube_presets() {
    let sus = run_pulse_tube_protocol(&presets::al_suspended(), None).unwrap();
    let (on, s_on) = sus[2].gamma("slow_on").unwrap();
    let (off, s_off) = sus[2].gamma("off").unwrap();
    // Quoted values carry their own uncertainty, 0.03 and 0.002.
    let z_on = (on - 1.07) / s_on.hypot(0.03);
    let z_off = (off - 0.108) / s_off.hypot(0.002);

    let nb = run_pulse_tube_protocol(&presets::nb_conventional(), None).unwrap();
    let (nb_on, nb_s_on) = nb[2].gamma("slow_on").unwrap();
    let (nb_off, nb_s_off) = nb[2].gamma("off").unwrap();
    let z_nb = (nb_on - nb_off) / nb_s_on.hypot(nb_s_off);

    let pass = z_on.abs() <= 3.0 && z_off.abs() <= 3.0 && z_nb.abs() <= 3.0;
    verdict(
        9,
        pass,
        &format!(
            "suspended Q3 on {on:.3} ± {s_on:.3} ({z_on:+.1}σ), off {off:.4} ± {s_off:.4} ({z_off:+.1}σ); \
             Nb Q3 on {nb_on:.3} off {nb_off:.3} ({z_nb:+.1}σ)"
        ),
    );
}

#[test]
fn criterion_10_mechanics_arithmetic() {
    let s = SuspensionModel::default();
    let f_z = suspension_mode_frequency(&s, SuspensionMode::InAndOut);
    let f_xy = suspension_mode_frequency(&s, SuspensionMode::SideToSide);
    let e = suspension_elastic_energy(&s, 1.0, SuspensionMode::InAndOut).unwrap();
    let e_xy = suspension_elastic_energy(&s, 1.0, SuspensionMode::SideToSide).unwrap();
    let pass = (3.0..=3.4).contains(&f_z)
        && (4.0..=7.0).contains(&f_xy)
        && (1e-14..=1e-13).contains(&e)
        && (1e-14..=1e-13).contains(&e_xy);
    verdict(
        10,
        pass,
        &format!("in-and-out {f_z:.2} kHz, side-to-side {f_xy:.2} kHz, 1 nm energy {e:.2e}/{e_xy:.2e} J"),
    );
}
