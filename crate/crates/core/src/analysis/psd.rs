//! Welch-averaged periodogram.
//!
//! Segments of `segment_len` samples overlap by half and are tapered with a
//! periodic Hann window. Each bin is normalized as
//! `Δt·|Σ w_n x_n e^{−2πikn/N}|² / Σ w_n²`, which is the two-sided density
//! evaluated at `f ≥ 0`: white noise of variance `v` sits at `v·Δt`, so the
//! mapping-error floor of a ±1 record is `(1 − F²)Δt`. The mean is not
//! removed; a constant record shows up in bins 0 and 1 only.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    /// Hz, `k/(NΔt)` for `k = 0..=N/2`.
    pub freqs: Vec<f64>,
    /// signal²/Hz.
    pub power: Vec<f64>,
    pub segments: usize,
    pub segment_len: usize,
    pub dt: f64,
    /// Length of the record the estimate was taken from.
    pub samples: usize,
}

/// Largest power of two not above `n/4`, capped at 2¹⁸.
pub fn default_segment_len(n: usize) -> usize {
    let quarter = (n / 4).max(1);
    let p = 1usize << (usize::BITS - 1 - quarter.leading_zeros());
    p.min(1 << 18)
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect()
}

pub fn estimate_psd(x: &[f64], dt: f64, segment_len: usize) -> Result<PsdEstimate> {
    if !(dt > 0.0) {
        return domain("sampling interval must be positive");
    }
    if segment_len < 2 || !segment_len.is_power_of_two() {
        return domain("segment length must be a power of two ≥ 2");
    }
    if x.len() < segment_len {
        return Err(Error::InsufficientData(format!(
            "trace of {} samples is shorter than one segment of {segment_len}",
            x.len()
        )));
    }
    let n = segment_len;
    let window = hann(n);
    let norm = dt / window.iter().map(|w| w * w).sum::<f64>();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut acc = vec![0.0; n / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let step = n / 2;
    let mut segments = 0;
    let mut start = 0;
    while start + n <= x.len() {
        for (b, (xi, wi)) in buf.iter_mut().zip(x[start..start + n].iter().zip(&window)) {
            *b = Complex::new(xi * wi, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = norm / segments as f64;
    Ok(PsdEstimate {
        freqs: (0..=n / 2).map(|k| k as f64 / (n as f64 * dt)).collect(),
        power: acc.into_iter().map(|a| a * scale).collect(),
        segments,
        segment_len: n,
        dt,
        samples: x.len(),
    })
}

/// Correlation coefficients of the periodogram power for the window:
/// between half-overlapping segments, and between bins one and two apart.
pub(crate) fn window_power_correlations(n: usize) -> (f64, f64, f64) {
    let w = hann(n);
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    let seg: f64 = (0..n / 2).map(|k| w[k] * w[k + n / 2]).sum::<f64>() / sw2;
    let bin = |shift: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, v) in w.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * shift * k as f64 / n as f64;
            re += v * v * ph.cos();
            im += v * v * ph.sin();
        }
        (re * re + im * im).sqrt() / sw2
    };
    (seg * seg, bin(1.0).powi(2), bin(2.0).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn segment_len_rule() {
        assert_eq!(default_segment_len(2_000_000), 1 << 18);
        assert_eq!(default_segment_len(4096), 1024);
        assert_eq!(default_segment_len(5000), 1024);
    }

    #[test]
    fn white_noise_level() {
        let mut rng = crate::rng::rng_from_seed(3);
        let x: Vec<f64> = (0..1 << 18).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let dt = 1e-3;
        let p = estimate_psd(&x, dt, 1024).unwrap();
        let mean: f64 = p.power[2..].iter().sum::<f64>() / (p.power.len() - 2) as f64;
        assert_relative_eq!(mean, dt, max_relative = 0.01);
        assert_eq!(p.segments, 511);
        assert_relative_eq!(*p.freqs.last().unwrap(), 0.5 / dt);
    }

    #[test]
    fn constant_signal_only_at_dc() {
        let p = estimate_psd(&[1.0; 4096], 1e-3, 1024).unwrap();
        assert!(p.power[0] > 0.0);
        assert!(p.power[2..].iter().all(|v| *v < 1e-20 * p.power[0]));
    }

    #[test]
    fn preconditions() {
        assert!(estimate_psd(&[1.0; 100], 1e-3, 128).is_err());
        assert!(estimate_psd(&[1.0; 1000], 1e-3, 100).is_err());
        assert!(estimate_psd(&[1.0; 1000], 0.0, 128).is_err());
    }

    #[test]
    fn hann_correlations() {
        let (seg, b1, b2) = window_power_correlations(1024);
        assert_relative_eq!(seg, 1.0 / 36.0, max_relative = 1e-9);
        assert_relative_eq!(b1, 4.0 / 9.0, max_relative = 1e-9);
        assert_relative_eq!(b2, 1.0 / 36.0, max_relative = 1e-9);
    }
}
