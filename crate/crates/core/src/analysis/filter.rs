//! Mask-aware centered moving average.

use crate::error::{domain, Result};

/// Shortest odd window whose average separates the two parity levels of a
/// digitized ±1 record with mapping fidelity `fidelity` by `separation`
/// standard deviations: `2F·sqrt(L)/sqrt(1 − F²) ≥ separation`.
pub fn separating_window(fidelity: f64, separation: f64) -> Result<usize> {
    if !(fidelity > 0.0 && fidelity <= 1.0) {
        return domain("fidelity must lie in (0, 1]");
    }
    if !(separation > 0.0) {
        return domain("separation must be positive");
    }
    let var = 1.0 - fidelity * fidelity;
    if var <= 0.0 {
        return Ok(1);
    }
    let l = (separation * separation * var / (4.0 * fidelity * fidelity)).ceil().max(1.0) as usize;
    Ok(l | 1)
}

/// Centered mean over `n_w` samples (truncated at the edges), counting only
/// unmasked samples. An output sample is valid when its input sample was.
pub fn moving_average(signal: &[f64], mask: &[bool], n_w: usize) -> Result<Vec<f64>> {
    if n_w == 0 || n_w % 2 == 0 {
        return domain("moving-average window must be odd and positive");
    }
    if signal.len() != mask.len() {
        return domain("signal and mask differ in length");
    }
    let n = signal.len();
    let mut sum = vec![0.0; n + 1];
    let mut cnt = vec![0usize; n + 1];
    for k in 0..n {
        sum[k + 1] = sum[k] + if mask[k] { signal[k] } else { 0.0 };
        cnt[k + 1] = cnt[k] + mask[k] as usize;
    }
    let half = n_w / 2;
    Ok((0..n)
        .map(|k| {
            if !mask[k] {
                return 0.0;
            }
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(n);
            (sum[hi] - sum[lo]) / (cnt[hi] - cnt[lo]) as f64
        })
        .collect())
}
