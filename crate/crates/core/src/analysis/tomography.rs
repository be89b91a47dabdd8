//! Charge-tomography model `P1 = ½[d + ν cos(π cos(2π n_g))]` and its fit.
//!
//! The model has period one half in `n_g` and is even, so with the applied
//! gate charge known the environmental offset is determined modulo one half.
//! Fits report it in `[0, 0.5)`.

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, Bounds, FitFlag, FitResult, LmOptions};
use crate::synth::TomographyScan;

use super::charge::{offset_branch, BRANCH_PERIOD};

pub fn p1_model(n_g: f64, d: f64, nu: f64) -> f64 {
    use std::f64::consts::PI;
    0.5 * (d + nu * (PI * (2.0 * PI * n_g).cos()).cos())
}

fn shape(n_g: f64) -> f64 {
    use std::f64::consts::PI;
    (PI * (2.0 * PI * n_g).cos()).cos()
}

/// Linear least squares of `p1 ≈ ½d + ½ν·shape` for a fixed offset;
/// returns `(d, ν, rss)`.
fn linear_given_offset(n: &[f64], p1: &[f64], offset: f64) -> (f64, f64, f64) {
    let m = n.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (ni, yi) in n.iter().zip(p1) {
        let x = shape(ni + offset);
        sx += x;
        sy += yi;
        sxx += x * x;
        sxy += x * yi;
    }
    let det = m * sxx - sx * sx;
    let (a, b) = if det.abs() < 1e-12 * m * m {
        (sy / m, 0.0)
    } else {
        ((sy * sxx - sx * sxy) / det, (m * sxy - sx * sy) / det)
    };
    let rss = n
        .iter()
        .zip(p1)
        .map(|(ni, yi)| (yi - a - b * shape(ni + offset)).powi(2))
        .sum();
    (2.0 * a, 2.0 * b, rss)
}

const OFFSET_GRID: usize = 500;

/// Fits `(d, ν, offset)` to a scan; the offset is reported in `[0, 0.5)`.
pub fn fit_tomography(scan: &TomographyScan) -> Result<FitResult> {
    let n = &scan.n_g_ext;
    let y = &scan.p1;
    if n.len() != y.len() {
        return Err(Error::Domain("scan columns differ in length".into()));
    }
    if n.len() < 8 {
        return Err(Error::InsufficientData("a scan needs at least 8 points".into()));
    }
    let lo = n.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let step = (hi - lo) / (n.len() - 1) as f64;
    if hi - lo + step < BRANCH_PERIOD - 1e-9 {
        return Err(Error::InsufficientData("scan must cover a full period of one half".into()));
    }

    let mut best = (f64::INFINITY, 0.0);
    for k in 0..OFFSET_GRID {
        let off = BRANCH_PERIOD * k as f64 / OFFSET_GRID as f64;
        let (_, _, rss) = linear_given_offset(n, y, off);
        if rss < best.0 {
            best = (rss, off);
        }
    }
    let (d0, nu0, _) = linear_given_offset(n, y, best.1);
    let residuals = |p: &[f64]| -> Vec<f64> {
        n.iter()
            .zip(y)
            .map(|(ni, yi)| p1_model(ni + p[2], p[0], p[1]) - yi)
            .collect()
    };
    let out = levenberg_marquardt(residuals, &[d0, nu0, best.1], &Bounds::unbounded(3), &LmOptions::default());
    let mut fit = out.into_result(&["d", "nu", "offset"], true);
    let mut off = offset_branch(fit.params[2]);
    if BRANCH_PERIOD - off < 1e-9 {
        off = 0.0;
    }
    fit.params[2] = off;
    let (nu, s_nu) = (fit.params[1], fit.uncertainties[1]);
    if nu.abs() < 1e-6 || nu.abs() < 2.0 * s_nu {
        fit.flags.push(FitFlag::Unidentifiable("offset".into()));
        fit.uncertainties[2] = f64::INFINITY;
    }
    Ok(fit)
}
