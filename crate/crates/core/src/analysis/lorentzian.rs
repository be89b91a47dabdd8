//! Single-Lorentzian model of a telegraph parity record and its fit to a
//! Welch periodogram.
//!
//! `S_p(f) = 4F²Γ/((2Γ)² + (2πf)²) + (1 − F²)Δt`
//!
//! The periodogram is averaged into log-spaced frequency groups and fitted in
//! log power. Each group mean is Gamma-distributed with a shape `K` set by the
//! number of segments, the bins pooled and the window's correlations, so the
//! residuals carry the `ψ(K) − ln K` bias correction and `1/ψ'(K)` weights.
//! At low frequency the model is smeared with the Hann kernel before it is
//! compared with the estimate.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fit::{levenberg_marquardt, Bounds, FitResult, LmOptions};

use super::psd::{window_power_correlations, PsdEstimate};
use super::special::{digamma, trigamma};

pub fn lorentzian_psd(f: f64, gamma: f64, fidelity: f64, dt: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f;
    let f2 = fidelity * fidelity;
    4.0 * f2 * gamma / (4.0 * gamma * gamma + w * w) + (1.0 - f2) * dt
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LorentzianOptions {
    /// Upper/lower frequency ratio at which a new group starts.
    pub bin_ratio: f64,
    /// First periodogram bin used; bins below carry window leakage from DC.
    pub min_bin: usize,
}

impl Default for LorentzianOptions {
    fn default() -> Self {
        Self {
            bin_ratio: 1.05,
            min_bin: 2,
        }
    }
}

struct Group {
    bins: std::ops::Range<usize>,
    log_mean: f64,
    shape: f64,
}

fn group_bins(psd: &PsdEstimate, opts: &LorentzianOptions) -> Vec<Group> {
    let (c_seg, c1, c2) = window_power_correlations(psd.segment_len);
    let s = psd.segments as f64;
    let k_seg = s / (1.0 + 2.0 * c_seg * (s - 1.0) / s);
    let last = psd.freqs.len() - 1; // Nyquist bin is real-valued; skip it.
    let mut groups = Vec::new();
    let mut k = opts.min_bin;
    while k < last {
        let mut end = k + 1;
        while end < last && psd.freqs[end] <= opts.bin_ratio * psd.freqs[k] {
            end += 1;
        }
        let m = (end - k) as f64;
        let corr = 1.0 + 2.0 * c1 * ((m - 1.0) / m).max(0.0) + 2.0 * c2 * ((m - 2.0) / m).max(0.0);
        let mean = psd.power[k..end].iter().sum::<f64>() / m;
        groups.push(Group {
            bins: k..end,
            log_mean: mean.ln(),
            shape: k_seg * m / corr,
        });
        k = end;
    }
    groups
}

/// Hann spectral kernel sampled in bin offsets, normalized to unit sum.
struct Kernel {
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

const KERNEL_HALF_WIDTH: f64 = 8.0;
const KERNEL_STEPS_PER_BIN: usize = 8;
const SMEARED_BINS: usize = 256;

impl Kernel {
    fn hann() -> Self {
        let sinc = |x: f64| {
            if x.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            }
        };
        let n = (2.0 * KERNEL_HALF_WIDTH) as usize * KERNEL_STEPS_PER_BIN + 1;
        let offsets: Vec<f64> = (0..n)
            .map(|i| -KERNEL_HALF_WIDTH + i as f64 / KERNEL_STEPS_PER_BIN as f64)
            .collect();
        let mut weights: Vec<f64> = offsets
            .iter()
            .map(|v| (0.5 * sinc(*v) + 0.25 * sinc(v - 1.0) + 0.25 * sinc(v + 1.0)).powi(2))
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { offsets, weights }
    }
}

/// Expected periodogram level in bin `k` for the model.
fn expected_bin(k: usize, df: f64, gamma: f64, fidelity: f64, dt: f64, kernel: &Kernel) -> f64 {
    let f = k as f64 * df;
    if k >= SMEARED_BINS {
        return lorentzian_psd(f, gamma, fidelity, dt);
    }
    kernel
        .offsets
        .iter()
        .zip(&kernel.weights)
        .map(|(o, w)| w * lorentzian_psd(f + o * df, gamma, fidelity, dt))
        .sum()
}

/// Initial Γ from the half-power corner `f = Γ/π` and F from the plateau.
fn initial_guess(psd: &PsdEstimate, groups: &[Group], dt: f64) -> (f64, f64) {
    let levels: Vec<(f64, f64)> = groups
        .iter()
        .map(|g| (psd.freqs[g.bins.start], g.log_mean.exp()))
        .collect();
    let tail = &levels[levels.len() * 3 / 4..];
    let floor = tail.iter().map(|v| v.1).sum::<f64>() / tail.len() as f64;
    let head = &levels[..levels.len().clamp(1, 3)];
    let plateau = head.iter().map(|v| v.1).sum::<f64>() / head.len() as f64;
    let excess = plateau - floor;
    let f_nyq = 0.5 / dt;
    if !(excess > 0.0) {
        return (f_nyq, 0.3);
    }
    let corner = levels
        .iter()
        .find(|(_, p)| p - floor <= 0.5 * excess)
        .map_or(f_nyq / 2.0, |v| v.0);
    let gamma = std::f64::consts::PI * corner;
    let fid = (excess * gamma).sqrt().clamp(0.05, 1.0);
    (gamma, fid)
}

/// Fits `(Γp, F)`, reported under the names `gamma` and `fidelity`.
///
/// The Gamma likelihood ignores the non-Gaussian statistics of a telegraph
/// record, so `σ_Γ` from the curvature alone is too small; the reported value
/// adds the counting limit `sqrt(Γ/T)` in quadrature.
pub fn fit_lorentzian(psd: &PsdEstimate, dt: f64, opts: &LorentzianOptions) -> Result<FitResult> {
    if !(dt > 0.0) {
        return domain("sampling interval must be positive");
    }
    if psd.freqs.len() < 16 + opts.min_bin {
        return Err(Error::InsufficientData("a Lorentzian fit needs at least 16 frequency bins".into()));
    }
    let groups = group_bins(psd, opts);
    if groups.iter().any(|g| !g.log_mean.is_finite()) {
        return Err(Error::Degenerate("periodogram has empty frequency bins".into()));
    }
    let df = psd.freqs[1];
    let kernel = Kernel::hann();
    let bias: Vec<f64> = groups.iter().map(|g| digamma(g.shape) - g.shape.ln()).collect();
    let weight: Vec<f64> = groups.iter().map(|g| 1.0 / trigamma(g.shape).sqrt()).collect();

    let residuals = |p: &[f64]| -> Vec<f64> {
        let gamma = p[0].exp();
        let fid = p[1];
        groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let m = g.bins.len() as f64;
                let model: f64 = g.bins.clone().map(|k| expected_bin(k, df, gamma, fid, dt, &kernel)).sum::<f64>() / m;
                weight[i] * (g.log_mean - model.ln() - bias[i])
            })
            .collect()
    };

    let f_nyq = 0.5 / dt;
    let bounds = Bounds {
        lower: vec![(0.01 * df).ln(), 1e-4],
        upper: vec![(100.0 * f_nyq).ln(), 1.0],
    };
    let (g0, f0) = initial_guess(psd, &groups, dt);
    let lm = LmOptions::default();
    let mut best = None;
    for scale in [1.0, 0.3, 3.0] {
        let x0 = [(g0 * scale).ln().clamp(bounds.lower[0], bounds.upper[0]), f0];
        let out = levenberg_marquardt(&residuals, &x0, &bounds, &lm);
        let better = match &best {
            None => true,
            Some(b) => {
                let b: &crate::fit::LmOutcome = b;
                out.rss() < b.rss()
            }
        };
        if better {
            best = Some(out);
        }
    }
    let out = best.expect("at least one start");
    let mut fit = out.into_result(&["ln_gamma", "fidelity"], false);
    let gamma = fit.params[0].exp();
    let record = psd.samples as f64 * dt;
    fit.params[0] = gamma;
    fit.uncertainties[0] = ((fit.uncertainties[0] * gamma).powi(2) + gamma / record).sqrt();
    fit.names[0] = "gamma".into();
    for f in fit.flags.iter_mut() {
        if let crate::fit::FitFlag::AtBound(name) = f {
            if name == "ln_gamma" {
                *name = "gamma".into();
            }
        }
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn value_at_zero_frequency() {
        let (g, f, dt) = (0.7, 0.85, 1e-3);
        assert_relative_eq!(lorentzian_psd(0.0, g, f, dt), f * f / g + (1.0 - f * f) * dt, max_relative = 1e-15);
    }

    #[test]
    fn half_power_corner() {
        let (g, dt) = (1.0, 1e-3);
        let white = 0.0;
        let s0 = lorentzian_psd(0.0, g, 1.0, dt) - white;
        let sc = lorentzian_psd(g / std::f64::consts::PI, g, 1.0, dt) - white;
        assert_relative_eq!(sc, 0.5 * s0, max_relative = 1e-12);
    }

    #[test]
    fn kernel_integrates_to_one_and_is_symmetric() {
        let k = Kernel::hann();
        assert_relative_eq!(k.weights.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        let n = k.weights.len();
        for i in 0..n {
            assert_relative_eq!(k.weights[i], k.weights[n - 1 - i], max_relative = 1e-12);
        }
    }
}
