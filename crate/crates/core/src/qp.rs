//! Normalized quasiparticle density dynamics,
//! `dx/dt = −r·x² − s·x + g(t)` with a square generation pulse, and the
//! conversion between `x_qp` and the excess relaxation rate `ΔΓ1`.

use serde::{Deserialize, Serialize};

use crate::device::JunctionOrientation;
use crate::error::{domain, Error, Result};
use crate::fit::{levenberg_marquardt, Bounds, FitFlag, FitResult, LmOptions};
use crate::synth::InjectionRecord;
use crate::units::uev_to_angular;

/// Recombination rate used throughout, 1/(10 ns).
pub const DEFAULT_RECOMBINATION_RATE: f64 = 1e8;
/// Injection pulse length, s.
pub const DEFAULT_PULSE_DURATION: f64 = 1e-3;
/// Trapping rate of gap-engineered junctions, 0.67×10⁻² μs⁻¹ in 1/s.
pub const TRAP_RATE_GAP_ENGINEERED: f64 = 0.67e-2 * 1e6;
/// Trapping rate of non-ideal gap-engineered junctions, 0.18×10⁻² μs⁻¹ in 1/s.
pub const TRAP_RATE_NON_IDEAL: f64 = 0.18e-2 * 1e6;

/// Trapping rate for a junction orientation.
pub fn trapping_rate(orientation: JunctionOrientation) -> f64 {
    match orientation {
        JunctionOrientation::GapEngineered => TRAP_RATE_GAP_ENGINEERED,
        JunctionOrientation::NonIdealGapEngineered => TRAP_RATE_NON_IDEAL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpModelParams {
    /// Recombination rate, 1/s.
    pub r: f64,
    /// Trapping rate, 1/s.
    pub s: f64,
    /// Generation rate during the pulse, 1/s.
    pub g_amp: f64,
    /// s.
    pub pulse_start: f64,
    /// s.
    pub pulse_duration: f64,
}

impl QpModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0 && self.s >= 0.0 && self.g_amp >= 0.0) {
            return domain("r, s and g_amp must be non-negative");
        }
        if !(self.pulse_duration > 0.0) {
            return domain("pulse duration must be positive");
        }
        Ok(())
    }

    pub fn pulse_end(&self) -> f64 {
        self.pulse_start + self.pulse_duration
    }

    pub fn generation(&self, t: f64) -> f64 {
        if t >= self.pulse_start && t < self.pulse_end() {
            self.g_amp
        } else {
            0.0
        }
    }

    fn rhs(&self, x: f64, g: f64) -> f64 {
        -self.r * x * x - self.s * x + g
    }

    /// Fixed point of the ODE under constant generation `g`.
    pub fn steady_state(&self, g: f64) -> f64 {
        if self.r == 0.0 {
            return if self.s > 0.0 { g / self.s } else { f64::INFINITY };
        }
        // Rationalized root of r x² + s x − g = 0, stable for small r·g.
        2.0 * g / (self.s + (self.s * self.s + 4.0 * self.r * g).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XqpTrajectory {
    pub times: Vec<f64>,
    pub x_qp: Vec<f64>,
}

impl XqpTrajectory {
    /// Linear interpolation; `None` outside the covered span.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        let tol = 1e-12 * (last - first).abs().max(1e-30);
        if t < first - tol || t > last + tol {
            return None;
        }
        let t = t.clamp(first, last);
        let k = self.times.partition_point(|v| *v <= t);
        if k == 0 {
            return Some(self.x_qp[0]);
        }
        if k >= self.times.len() {
            return self.x_qp.last().copied();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        Some(self.x_qp[k - 1] * (1.0 - w) + self.x_qp[k] * w)
    }
}

/// Step control for the integrators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepper {
    /// Classic RK4 with at most `dt` per step; a step that would drive the
    /// density negative is retried with halved substeps.
    Rk4 { dt: f64 },
    /// Dormand–Prince 5(4) with error control and the same positivity guard.
    DormandPrince { rtol: f64, atol: f64, max_dt: f64 },
}

const MAX_HALVINGS: u32 = 30;

fn rk4_step(p: &QpModelParams, x: f64, g: f64, h: f64) -> f64 {
    let k1 = p.rhs(x, g);
    let k2 = p.rhs(x + 0.5 * h * k1, g);
    let k3 = p.rhs(x + 0.5 * h * k2, g);
    let k4 = p.rhs(x + h * k3, g);
    x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

fn rk4_guarded(p: &QpModelParams, x: f64, g: f64, h: f64, t: f64, depth: u32) -> Result<f64> {
    let next = rk4_step(p, x, g, h);
    if next >= 0.0 && next.is_finite() {
        return Ok(next);
    }
    if depth >= MAX_HALVINGS {
        return Err(Error::Integrator {
            t,
            reason: "step drives x_qp negative even after repeated halving".into(),
        });
    }
    let mid = rk4_guarded(p, x, g, 0.5 * h, t, depth + 1)?;
    rk4_guarded(p, mid, g, 0.5 * h, t + 0.5 * h, depth + 1)
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn dp_step(p: &QpModelParams, x: f64, g: f64, h: f64) -> (f64, f64) {
    let _ = DP_C;
    let mut k = [0.0; 7];
    for i in 0..7 {
        let xi = x + h * (0..i).map(|j| DP_A[i][j] * k[j]).sum::<f64>();
        k[i] = p.rhs(xi, g);
    }
    let x5 = x + h * (0..7).map(|i| DP_B5[i] * k[i]).sum::<f64>();
    let x4 = x + h * (0..7).map(|i| DP_B4[i] * k[i]).sum::<f64>();
    (x5, (x5 - x4).abs())
}

/// Advances `x` across `[t0, t1]` on which `g` is constant.
fn advance_constant(p: &QpModelParams, x: f64, g: f64, t0: f64, t1: f64, stepper: Stepper) -> Result<f64> {
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(x);
    }
    match stepper {
        Stepper::Rk4 { dt } => {
            let n = (span / dt).ceil().max(1.0) as usize;
            let h = span / n as f64;
            let mut x = x;
            for i in 0..n {
                x = rk4_guarded(p, x, g, h, t0 + i as f64 * h, 0)?;
            }
            Ok(x)
        }
        Stepper::DormandPrince { rtol, atol, max_dt } => {
            let mut t = t0;
            let mut x = x;
            let mut h = max_dt.min(span);
            let mut rejects = 0u32;
            while t < t1 {
                h = h.min(t1 - t);
                let (next, err) = dp_step(p, x, g, h);
                let tol = atol + rtol * x.abs().max(next.abs());
                if next >= 0.0 && next.is_finite() && err <= tol {
                    t += h;
                    x = next;
                    rejects = 0;
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
                    h = (h * factor).min(max_dt);
                } else {
                    rejects += 1;
                    if rejects > 60 || h < 1e-18 * span.max(1.0) {
                        return Err(Error::Integrator {
                            t,
                            reason: "adaptive step collapsed while keeping x_qp non-negative".into(),
                        });
                    }
                    let factor = if err > 0.0 && next >= 0.0 { (0.9 * (tol / err).powf(0.25)).clamp(0.1, 0.5) } else { 0.5 };
                    h *= factor;
                }
            }
            Ok(x)
        }
    }
}

/// Integrates from `(t0, x0)` and reports `x_qp` at each of the
/// non-decreasing `times` (all `≥ t0`). Pulse edges are always step
/// boundaries.
pub fn integrate_xqp_at(p: &QpModelParams, x0: f64, t0: f64, times: &[f64], stepper: Stepper) -> Result<Vec<f64>> {
    p.validate()?;
    if !(x0 >= 0.0) {
        return domain("initial density must be non-negative");
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < t0) {
        return domain("output times must be sorted and not precede the start");
    }
    let edges = [p.pulse_start, p.pulse_end()];
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0;
    let mut t = t0;
    for &target in times {
        let mut cuts: Vec<f64> = edges.iter().copied().filter(|e| *e > t && *e < target).collect();
        cuts.push(target);
        for c in cuts {
            let g = p.generation(0.5 * (t + c));
            x = advance_constant(p, x, g, t, c, stepper)?;
            t = c;
        }
        out.push(x);
    }
    Ok(out)
}

/// Integrates on the uniform grid `t_span.0, t_span.0 + dt, …, t_span.1`
/// with RK4 steps of `dt`.
pub fn integrate_xqp(p: &QpModelParams, x0: f64, t_span: (f64, f64), dt: f64) -> Result<XqpTrajectory> {
    if !(dt > 0.0) || !(t_span.1 > t_span.0) {
        return domain("need dt > 0 and a non-empty time span");
    }
    let n = ((t_span.1 - t_span.0) / dt).round() as usize;
    let times: Vec<f64> = (0..=n).map(|k| (t_span.0 + k as f64 * dt).min(t_span.1)).collect();
    let x = integrate_xqp_at(p, x0, t_span.0, &times, Stepper::Rk4 { dt })?;
    Ok(XqpTrajectory { times, x_qp: x })
}

/// Adaptive Dormand–Prince integration sampled on a uniform output grid.
pub fn integrate_xqp_adaptive(
    p: &QpModelParams,
    x0: f64,
    t_span: (f64, f64),
    output_dt: f64,
    rtol: f64,
    atol: f64,
) -> Result<XqpTrajectory> {
    if !(output_dt > 0.0) || !(t_span.1 > t_span.0) {
        return domain("need output_dt > 0 and a non-empty time span");
    }
    let n = ((t_span.1 - t_span.0) / output_dt).round() as usize;
    let times: Vec<f64> = (0..=n).map(|k| (t_span.0 + k as f64 * output_dt).min(t_span.1)).collect();
    let stepper = Stepper::DormandPrince {
        rtol,
        atol,
        max_dt: output_dt,
    };
    let x = integrate_xqp_at(p, x0, t_span.0, &times, stepper)?;
    Ok(XqpTrajectory { times, x_qp: x })
}

fn conversion_scale(gap_uev: f64, omega01: f64) -> Result<f64> {
    if !(gap_uev > 0.0) || !(omega01 > 0.0) {
        return domain("gap and ω01 must be positive");
    }
    Ok((2.0 * uev_to_angular(gap_uev) * omega01).sqrt())
}

/// `x_qp = π·ΔΓ1 / sqrt(2Δω01/ħ)`.
pub fn xqp_from_gamma(delta_gamma1: f64, gap_uev: f64, omega01: f64) -> Result<f64> {
    Ok(std::f64::consts::PI * delta_gamma1 / conversion_scale(gap_uev, omega01)?)
}

/// Inverse of [`xqp_from_gamma`].
pub fn gamma_from_xqp(x_qp: f64, gap_uev: f64, omega01: f64) -> Result<f64> {
    Ok(x_qp * conversion_scale(gap_uev, omega01)? / std::f64::consts::PI)
}

/// Model `ΔΓ1` at each delay of `rec` for trapping rate `s` and pulse
/// amplitude `g_amp`.
pub fn injection_model(rec: &InjectionRecord, r: f64, s: f64, g_amp: f64) -> Result<Vec<f64>> {
    let p = QpModelParams {
        r,
        s,
        g_amp,
        pulse_start: rec.pulse_start,
        pulse_duration: rec.pulse_duration,
    };
    let pulse_end = p.pulse_end();
    let mut order: Vec<usize> = (0..rec.delays.len()).collect();
    order.sort_by(|a, b| rec.delays[*a].total_cmp(&rec.delays[*b]));
    let times: Vec<f64> = order.iter().map(|i| pulse_end + rec.delays[*i]).collect();
    let t0 = rec.pulse_start.min(times.first().copied().unwrap_or(rec.pulse_start));
    let dt = (rec.pulse_duration / 500.0).min(if s > 0.0 { 0.05 / s } else { f64::INFINITY });
    let xs = integrate_xqp_at(&p, 0.0, t0, &times, Stepper::Rk4 { dt })?;
    let mut out = vec![0.0; rec.delays.len()];
    for (k, i) in order.into_iter().enumerate() {
        out[i] = gamma_from_xqp(xs[k], rec.gap_uev, rec.omega01)?;
    }
    Ok(out)
}

/// Fits trapping rate `s` and generation amplitude `g_amp` (both 1/s) to an
/// injection record with the recombination rate held at `r`.
pub fn fit_injection(rec: &InjectionRecord, r: f64) -> Result<FitResult> {
    let n = rec.delays.len();
    if n != rec.delta_gamma1.len() {
        return domain("delays and ΔΓ1 differ in length");
    }
    if n < 5 || rec.delays.iter().filter(|d| **d > 0.0).count() < 2 {
        return Err(Error::InsufficientData(
            "need at least 5 delays including 2 after the pulse".into(),
        ));
    }
    let names = ["s", "g_amp"];
    let peak = rec.delta_gamma1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = rec.delta_gamma1.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Ok(FitResult {
            names: names.iter().map(|s| s.to_string()).collect(),
            params: vec![f64::NAN, 0.0],
            uncertainties: vec![f64::INFINITY, f64::INFINITY],
            residual_norm: rec.delta_gamma1.iter().map(|v| v * v).sum::<f64>().sqrt(),
            dof: n - 2,
            iterations: 0,
            converged: false,
            flags: vec![FitFlag::Unidentifiable("s".into())],
        });
    }

    // Initial trapping rate from the log-slope of the post-pulse tail.
    let tail: Vec<(f64, f64)> = rec
        .delays
        .iter()
        .zip(&rec.delta_gamma1)
        .filter(|(d, v)| **d > 0.0 && **v > 0.0)
        .map(|(d, v)| (*d, v.ln()))
        .collect();
    let s0 = if tail.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = tail.into_iter().unzip();
        let (_, slope, ..) = crate::fit::linear_regression(&xs, &ys);
        if slope < 0.0 {
            -slope
        } else {
            1.0 / rec.pulse_duration
        }
    } else {
        1.0 / rec.pulse_duration
    };
    let x_peak = xqp_from_gamma(peak, rec.gap_uev, rec.omega01)?;
    let g0 = x_peak * s0 / (1.0 - (-s0 * rec.pulse_duration).exp()).max(1e-12);

    let residuals = |p: &[f64]| -> Vec<f64> {
        let (s, g) = (p[0].exp(), p[1].exp());
        match injection_model(rec, r, s, g) {
            Ok(m) => m.iter().zip(&rec.delta_gamma1).map(|(m, d)| (m - d) / scale).collect(),
            Err(_) => vec![f64::NAN; n],
        }
    };
    let opts = LmOptions {
        fd_step: 1e-7,
        ..LmOptions::default()
    };
    let out = levenberg_marquardt(residuals, &[s0.ln(), g0.ln()], &Bounds::unbounded(2), &opts);
    let mut res = out.into_result(&["ln_s", "ln_g_amp"], true);
    // Rescale residual norm back to 1/s and move to linear parameters.
    res.residual_norm *= scale;
    let s = res.params[0].exp();
    let g = res.params[1].exp();
    res.uncertainties = vec![s * res.uncertainties[0], g * res.uncertainties[1]];
    res.params = vec![s, g];
    res.names = names.iter().map(|s| s.to_string()).collect();
    for f in res.flags.iter_mut() {
        if let FitFlag::AtBound(name) = f {
            *name = name.trim_start_matches("ln_").to_string();
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(r: f64, s: f64, g: f64) -> QpModelParams {
        QpModelParams {
            r,
            s,
            g_amp: g,
            pulse_start: 0.0,
            pulse_duration: DEFAULT_PULSE_DURATION,
        }
    }

    #[test]
    fn linear_decay_matches_exponential() {
        // s = 0.0067/μs, no recombination or generation.
        let p = QpModelParams {
            pulse_start: -1.0,
            pulse_duration: 1e-9,
            ..params(0.0, 6.7e3, 0.0)
        };
        let tr = integrate_xqp(&p, 1.0, (0.0, 1e-3), 1e-6).unwrap();
        for (t, x) in tr.times.iter().zip(&tr.x_qp) {
            assert_relative_eq!(*x, (-6.7e3 * t).exp(), max_relative = 1e-9);
        }
    }

    #[test]
    fn rk4_error_falls_at_fourth_order() {
        let p = QpModelParams {
            pulse_start: -1.0,
            pulse_duration: 1e-9,
            ..params(0.0, 6.7e3, 0.0)
        };
        let err = |dt: f64| {
            let x = integrate_xqp(&p, 1.0, (0.0, 1e-3), dt).unwrap();
            (x.x_qp.last().unwrap() - (-6.7f64).exp()).abs()
        };
        let (e1, e2) = (err(4e-5), err(2e-5));
        assert!(e1 / e2 >= 4.0, "{e1} {e2}");
        assert!(e1 / e2 > 12.0, "RK4 should give ~16x, got {}", e1 / e2);
    }

    #[test]
    fn stays_non_negative_and_decays_without_generation() {
        let p = params(1e8, 1.8e3, 0.0);
        let tr = integrate_xqp(&p, 1e-3, (2e-3, 5e-3), 1e-6).unwrap();
        assert!(tr.x_qp.iter().all(|x| *x >= 0.0));
        assert!(tr.x_qp.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn coarse_steps_trigger_positivity_guard() {
        // s·dt = 3 would overshoot below zero with a single RK4 step.
        let p = QpModelParams {
            pulse_start: -1.0,
            pulse_duration: 1e-9,
            ..params(0.0, 3e3, 0.0)
        };
        let tr = integrate_xqp(&p, 1.0, (0.0, 2e-3), 1e-3).unwrap();
        assert!(tr.x_qp.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn adaptive_agrees_with_rk4() {
        let p = params(1e8, 6.7e3, 7e-3);
        let a = integrate_xqp_adaptive(&p, 0.0, (0.0, 3e-3), 1e-5, 1e-10, 1e-16).unwrap();
        let b = integrate_xqp(&p, 0.0, (0.0, 3e-3), 1e-7).unwrap();
        for (t, x) in a.times.iter().zip(&a.x_qp) {
            let y = b.value_at(*t).unwrap();
            assert_relative_eq!(*x, y, max_relative = 1e-6, epsilon = 1e-18);
        }
    }

    #[test]
    fn slower_trapping_decays_slower() {
        let fast = params(1e8, TRAP_RATE_GAP_ENGINEERED, 7e-3);
        let slow = params(1e8, TRAP_RATE_NON_IDEAL, 7e-3);
        let a = integrate_xqp(&fast, 0.0, (0.0, 3e-3), 1e-6).unwrap();
        let b = integrate_xqp(&slow, 0.0, (0.0, 3e-3), 1e-6).unwrap();
        let ratio = |tr: &XqpTrajectory| tr.value_at(2e-3).unwrap() / tr.value_at(1e-3).unwrap();
        assert!(ratio(&b) > ratio(&a));
    }

    #[test]
    fn conversion_hand_computed() {
        // Δ = 183 μeV, ω01 = 2π·4.5 GHz, ΔΓ1 = 10³/s, in SI units.
        let e = 1.602_176_634e-19;
        let hbar = 1.054_571_817e-34;
        let delta_j = 183e-6 * e;
        let omega = 2.0 * std::f64::consts::PI * 4.5e9;
        let expected = std::f64::consts::PI * 1e3 / (2.0 * delta_j / hbar * omega).sqrt();
        let x = xqp_from_gamma(1e3, 183.0, omega).unwrap();
        assert_relative_eq!(x, expected, max_relative = 1e-9);
        assert_eq!(xqp_from_gamma(0.0, 183.0, omega).unwrap(), 0.0);
        assert_relative_eq!(xqp_from_gamma(2e3, 183.0, omega).unwrap(), 2.0 * x, max_relative = 1e-15);
        assert!(xqp_from_gamma(1.0, 0.0, omega).is_err());
        assert!(gamma_from_xqp(1.0, 183.0, -1.0).is_err());
        assert_eq!(gamma_from_xqp(0.0, 183.0, omega).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn conversion_round_trip(dg in 0.0f64..1e6, gap in 100.0f64..400.0, f in 1e9f64..1e10) {
            let w = 2.0 * std::f64::consts::PI * f;
            let back = gamma_from_xqp(xqp_from_gamma(dg, gap, w).unwrap(), gap, w).unwrap();
            prop_assert!((back - dg).abs() <= 1e-12 * dg.max(1e-300));
        }

        #[test]
        fn gamma_monotone(x1 in 0.0f64..1e-3, x2 in 0.0f64..1e-3) {
            prop_assume!(x1 < x2);
            let w = 2.0 * std::f64::consts::PI * 4.5e9;
            prop_assert!(gamma_from_xqp(x1, 183.0, w).unwrap() < gamma_from_xqp(x2, 183.0, w).unwrap());
        }

        #[test]
        fn trajectory_non_negative(s in 1e2f64..2e4, g in 0.0f64..1e-1, x0 in 0.0f64..1e-2) {
            let p = params(1e8, s, g);
            let tr = integrate_xqp(&p, x0, (0.0, 3e-3), 5e-6).unwrap();
            prop_assert!(tr.x_qp.iter().all(|x| *x >= 0.0));
        }
    }
}
