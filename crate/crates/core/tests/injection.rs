use qplab_core::device::{JunctionBilayer, QubitSpec};
use qplab_core::qp::{fit_injection, integrate_xqp, QpModelParams};
use qplab_core::synth::{synth_injection_record, InjectionSetup};

fn qubit() -> QubitSpec {
    QubitSpec {
        id: "Q1".into(),
        island_gap: 183.0,
        ground_plane_gap: 195.0,
        junction: JunctionBilayer::default(),
        mapping_fidelity: 0.9,
        charge_dispersion: 3.0,
        position: [4.0, 4.0],
        f01: 2.0 * std::f64::consts::PI * 4.4e9,
    }
}

#[test]
fn injection_fit_uncertainties_cover_the_truth() {
    let truth = QpModelParams {
        r: 1e8,
        s: 6.7e3,
        g_amp: 6.7e-3,
        pulse_start: 1e-4,
        pulse_duration: 1e-3,
    };
    let traj = integrate_xqp(&truth, 0.0, (0.0, 4.2e-3), 1e-7).unwrap();
    let delays: Vec<f64> = (-8..=30).map(|k| k as f64 * 1e-4).collect();
    let mut setup = InjectionSetup {
        pulse_start: truth.pulse_start,
        pulse_duration: truth.pulse_duration,
        baseline_t1: 50e-6,
        noise_sd: 0.0,
        injector: [1.0, 1.0],
    };
    let clean = synth_injection_record(&traj, &qubit(), &delays, setup, 0).unwrap();
    let peak = clean.delta_gamma1.iter().copied().fold(0.0, f64::max);
    setup.noise_sd = 0.03 * peak;

    let trials = 100;
    let (mut s_in, mut g_in) = (0, 0);
    for seed in 0..trials {
        let rec = synth_injection_record(&traj, &qubit(), &delays, setup, 1000 + seed).unwrap();
        let fit = fit_injection(&rec, truth.r).unwrap();
        assert!(!fit.is_flagged(), "seed {seed}: {:?}", fit.flags);
        if (fit.param("s").unwrap() - truth.s).abs() <= 2.0 * fit.sigma("s").unwrap() {
            s_in += 1;
        }
        if (fit.param("g_amp").unwrap() - truth.g_amp).abs() <= 2.0 * fit.sigma("g_amp").unwrap() {
            g_in += 1;
        }
    }
    // 95% nominal; 89 of 100 is the lower 1% binomial quantile.
    assert!(s_in >= 89, "s covered in {s_in}/{trials}");
    assert!(g_in >= 89, "g_amp covered in {g_in}/{trials}");
}
