//! Power-law decay `A·t^α`, optionally on top of a constant floor.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fit::{levenberg_marquardt, linear_regression, Bounds, FitFlag, FitResult, LmOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum FloorOption {
    /// Straight line in log-log space.
    None,
    /// Known floor subtracted inside a nonlinear fit.
    Fixed(f64),
    /// Floor fitted with `A` and `α`.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Parameters `amplitude`, `exponent` and, with a free floor, `floor`.
    pub fit: FitResult,
    pub floor: FloorOption,
    /// Indices left out of the fit.
    pub excluded: Vec<usize>,
    /// `α < 0` and no flags.
    pub accepted: bool,
}

impl PowerLawFit {
    pub fn amplitude(&self) -> f64 {
        self.fit.params[0]
    }

    pub fn exponent(&self) -> f64 {
        self.fit.params[1]
    }

    pub fn floor_value(&self) -> Option<f64> {
        match self.floor {
            FloorOption::None => None,
            FloorOption::Fixed(v) => Some(v),
            FloorOption::Free => Some(self.fit.params[2]),
        }
    }

    pub fn predict(&self, t: f64) -> f64 {
        self.amplitude() * t.powf(self.exponent()) + self.floor_value().unwrap_or(0.0)
    }
}

/// Fits rates observed at `times`.
///
/// Without a floor the fit is a straight line through `(ln t, ln rate)`,
/// weighted by the relative uncertainties when `sigmas` is given. With a
/// floor it is a nonlinear least-squares fit weighted by `1/σ`, which also
/// admits non-positive rates (for example background-subtracted counts).
pub fn fit_powerlaw(
    times: &[f64],
    rates: &[f64],
    sigmas: Option<&[f64]>,
    floor: FloorOption,
    exclude: Option<&[bool]>,
) -> Result<PowerLawFit> {
    let n = times.len();
    if rates.len() != n || sigmas.is_some_and(|s| s.len() != n) || exclude.is_some_and(|e| e.len() != n) {
        return domain("power-law inputs differ in length");
    }
    let excluded: Vec<usize> = (0..n).filter(|i| exclude.is_some_and(|e| e[*i])).collect();
    let keep: Vec<usize> = (0..n).filter(|i| !exclude.is_some_and(|e| e[*i])).collect();
    if keep.len() < 4 {
        return Err(Error::InsufficientData("a power-law fit needs at least 4 points".into()));
    }
    if keep.iter().any(|i| !(times[*i] > 0.0)) {
        return domain("times must be positive");
    }
    if let Some(s) = sigmas {
        if keep.iter().any(|i| !(s[*i] > 0.0)) {
            return domain("uncertainties must be positive");
        }
    }
    let t: Vec<f64> = keep.iter().map(|i| times[*i]).collect();
    let y: Vec<f64> = keep.iter().map(|i| rates[*i]).collect();
    let s: Option<Vec<f64>> = sigmas.map(|s| keep.iter().map(|i| s[*i]).collect());

    let fit = match floor {
        FloorOption::None => {
            if y.iter().any(|v| !(*v > 0.0)) {
                return domain("log-log power-law fit needs positive rates");
            }
            log_log(&t, &y, s.as_deref())
        }
        FloorOption::Fixed(f) => nonlinear(&t, &y, s.as_deref(), Some(f))?,
        FloorOption::Free => nonlinear(&t, &y, s.as_deref(), None)?,
    };
    let accepted = fit.params[1] < 0.0 && fit.flags.is_empty() && fit.params.iter().all(|p| p.is_finite());
    Ok(PowerLawFit {
        fit,
        floor,
        excluded,
        accepted,
    })
}

fn log_log(t: &[f64], y: &[f64], s: Option<&[f64]>) -> FitResult {
    let lx: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (a, b, sa, sb, rss, dof) = match s {
        None => {
            let (a, b, sa, sb, rss) = linear_regression(&lx, &ly);
            (a, b, sa, sb, rss, t.len() - 2)
        }
        Some(s) => {
            let w: Vec<f64> = s.iter().zip(y).map(|(s, y)| (y / s).powi(2)).collect();
            weighted_line(&lx, &ly, &w)
        }
    };
    let amp = a.exp();
    FitResult {
        names: vec!["amplitude".into(), "exponent".into()],
        params: vec![amp, b],
        uncertainties: vec![amp * sa, sb],
        residual_norm: rss.sqrt(),
        dof,
        iterations: 0,
        converged: true,
        flags: Vec::new(),
    }
}

/// Weighted straight line; uncertainties scaled by the reduced chi-square.
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64, f64, f64, usize) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (y - a - b * x).powi(2)).sum();
    let dof = x.len() - 2;
    let s2 = rss / dof as f64;
    let sb = (s2 / sxx).sqrt();
    let sa = (s2 * (1.0 / sw + mx * mx / sxx)).sqrt();
    (a, b, sa, sb, rss, dof)
}

fn nonlinear(t: &[f64], y: &[f64], s: Option<&[f64]>, fixed_floor: Option<f64>) -> Result<FitResult> {
    let weight = |i: usize| s.map_or(1.0, |s| 1.0 / s[i]);
    // Start from a log-log line through the points that clear the floor guess.
    let floor0 = fixed_floor.unwrap_or_else(|| {
        let mut tail: Vec<(f64, f64)> = t.iter().copied().zip(y.iter().copied()).collect();
        tail.sort_by(|a, b| b.0.total_cmp(&a.0));
        let k = (tail.len() / 4).max(2);
        (tail[..k].iter().map(|v| v.1).sum::<f64>() / k as f64).max(0.0) * 0.5
    });
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, y)| **y - floor0 > 0.0)
        .map(|(t, y)| (t.ln(), (y - floor0).ln()))
        .collect();
    let (a0, b0) = if pts.len() >= 2 {
        let (lx, ly): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let (a, b, ..) = linear_regression(&lx, &ly);
        (a, b.min(-0.05))
    } else {
        (y.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1e-300).ln(), -1.0)
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        let floor = fixed_floor.unwrap_or_else(|| p[2]);
        (0..t.len())
            .map(|i| weight(i) * (p[0].exp() * t[i].powf(p[1]) + floor - y[i]))
            .collect()
    };
    let mut x0 = vec![a0, b0];
    let mut names = vec!["ln_amplitude", "exponent"];
    if fixed_floor.is_none() {
        x0.push(floor0);
        names.push("floor");
    }
    let out = levenberg_marquardt(residuals, &x0, &Bounds::unbounded(x0.len()), &LmOptions::default());
    let mut fit = out.into_result(&names, s.is_none());
    let amp = fit.params[0].exp();
    fit.params[0] = amp;
    fit.uncertainties[0] *= amp;
    fit.names[0] = "amplitude".into();
    if fit.params.iter().any(|p| !p.is_finite()) {
        fit.flags.push(FitFlag::Unidentifiable("amplitude".into()));
    }
    Ok(fit)
}
