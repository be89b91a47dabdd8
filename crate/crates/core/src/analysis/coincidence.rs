//! Coincident parity switching across qubits.
//!
//! Each edge of the first path anchors a window of `N_w` samples centered on
//! it. The window counts as an n-fold event when every other path has an
//! unused edge inside it; the nearest such edge of each path is then used up,
//! so no edge takes part in two events. For independent paths with small
//! `r·Δt_w` this reproduces the random rate `(∏ r_i)·Δt_w^{n−1}`.
//!
//! At larger `r·Δt_w` the one-use rule removes a sizable share of the random
//! events, so the background that is subtracted comes from delayed
//! coincidences: the same rule applied to paths circularly shifted against
//! each other by far more than any correlation time.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceWindow {
    /// `N_w·Δt`, s.
    pub duration: f64,
    pub samples: usize,
}

/// `Δt_w = 0.25 / max Γ`, rounded to a whole number of samples.
pub fn coincidence_window(rates: &[f64], dt: f64) -> Result<CoincidenceWindow> {
    if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0)) {
        return domain("coincidence window needs positive rates");
    }
    if !(dt > 0.0) {
        return domain("sampling interval must be positive");
    }
    let max = rates.iter().copied().fold(0.0, f64::max);
    let samples = (0.25 / max / dt).round();
    if samples < 1.0 {
        return Err(Error::Domain(format!(
            "rate {max}/s needs a window shorter than one {dt} s sample"
        )));
    }
    Ok(CoincidenceWindow {
        duration: samples * dt,
        samples: samples as usize,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceReport {
    pub n: usize,
    pub count: usize,
    /// 1/s.
    pub observed_rate: f64,
    pub observed_sigma: f64,
    /// Edge rate of each path, 1/s.
    pub rates: Vec<f64>,
    /// `(∏ r_i)·Δt_w^{n−1}`, 1/s.
    pub random_rate: f64,
    /// `r_1 ∏_{i>1} (1 − e^{−r_i Δt_w})`, the same background without the
    /// small-window expansion.
    pub random_rate_poisson: f64,
    pub window: CoincidenceWindow,
    /// Time covered by valid samples on all paths, s.
    pub duration: f64,
    /// Delayed-coincidence background, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Background>,
    /// `R_impact/2ⁿ`, when an impact rate was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_saturation: Option<f64>,
}

/// Mean rate of delayed coincidences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// 1/s.
    pub rate: f64,
    /// Standard error over the shifts, 1/s.
    pub sigma: f64,
    pub shifts: usize,
}

/// Shifts used by [`count_coincidences`].
pub const DEFAULT_BACKGROUND_SHIFTS: usize = 8;

impl CoincidenceReport {
    /// Observed minus background rate: the delayed-coincidence background
    /// when present, the analytic random rate otherwise.
    pub fn excess_rate(&self) -> f64 {
        self.observed_rate - self.background.map_or(self.random_rate, |b| b.rate)
    }

    pub fn with_saturation(mut self, r_impact: f64) -> Result<Self> {
        self.predicted_saturation = Some(predict_saturation(r_impact, self.n)?);
        Ok(self)
    }
}

/// `R_impact/2ⁿ`.
pub fn predict_saturation(r_impact: f64, n: usize) -> Result<f64> {
    if n < 1 {
        return domain("fold must be at least 1");
    }
    if !(r_impact >= 0.0) {
        return domain("impact rate must be non-negative");
    }
    Ok(r_impact / 2f64.powi(n as i32))
}

/// Sample indices `k` where the path changes state between two valid samples.
pub fn edges(path: &[i8]) -> Vec<usize> {
    (1..path.len())
        .filter(|k| path[*k] != 0 && path[k - 1] != 0 && path[*k] != path[k - 1])
        .collect()
}

/// Counts n-fold events among equally long, aligned digital paths
/// (`n = paths.len()`).
pub fn count_coincidences(paths: &[&[i8]], dt: f64, window: CoincidenceWindow) -> Result<CoincidenceReport> {
    let n = paths.len();
    if n < 2 {
        return domain("coincidences need at least two paths");
    }
    let len = paths[0].len();
    if paths.iter().any(|p| p.len() != len) {
        return domain("paths must be equally long");
    }
    if !(dt > 0.0) || window.samples == 0 {
        return domain("sampling interval and window must be positive");
    }
    let edge_lists: Vec<Vec<usize>> = paths.iter().map(|p| edges(p)).collect();
    let events = count_edge_coincidences(&edge_lists, window.samples);
    let valid = (0..len).filter(|k| paths.iter().all(|p| p[*k] != 0)).count();
    let duration = valid as f64 * dt;
    let mut report = edge_report(&edge_lists, events, duration, window)?;
    report.background = Some(shifted_background(
        &edge_lists,
        len,
        window.samples,
        DEFAULT_BACKGROUND_SHIFTS,
        duration,
    )?);
    Ok(report)
}

/// Delayed coincidences of `edge_lists` (positions in `0..len`). In shift
/// `k = 1..=shifts`, path `q` is rotated by `q·k·len/(n·(shifts + 1))`
/// samples, so every pair of paths is offset by at least
/// `len/(n·(shifts + 1))`.
pub fn shifted_background(
    edge_lists: &[Vec<usize>],
    len: usize,
    n_w: usize,
    shifts: usize,
    duration: f64,
) -> Result<Background> {
    let n = edge_lists.len();
    if n < 2 || shifts == 0 {
        return domain("delayed coincidences need two paths and at least one shift");
    }
    if !(duration > 0.0) || len == 0 {
        return Err(Error::InsufficientData("no sample is valid on every path".into()));
    }
    let step = len / (n * (shifts + 1));
    if step <= n_w {
        return Err(Error::InsufficientData(
            "record too short for delayed coincidences at this window".into(),
        ));
    }
    let counts: Vec<f64> = (1..=shifts)
        .map(|k| {
            let mut lists = Vec::with_capacity(n);
            lists.push(edge_lists[0].clone());
            for (q, list) in edge_lists.iter().enumerate().skip(1) {
                let off = q * k * step;
                let mut shifted: Vec<usize> = list.iter().map(|e| (e + off) % len).collect();
                shifted.sort_unstable();
                lists.push(shifted);
            }
            count_edge_coincidences(&lists, n_w) as f64
        })
        .collect();
    let m = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / m;
    let var = if counts.len() > 1 {
        counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        mean
    };
    Ok(Background {
        rate: mean / duration,
        sigma: (var / m).sqrt() / duration,
        shifts,
    })
}

/// Builds a report from per-path edge lists, an event count and the covered
/// duration.
pub fn edge_report(
    edge_lists: &[Vec<usize>],
    events: usize,
    duration: f64,
    window: CoincidenceWindow,
) -> Result<CoincidenceReport> {
    if !(duration > 0.0) {
        return Err(Error::InsufficientData("no sample is valid on every path".into()));
    }
    let n = edge_lists.len();
    let rates: Vec<f64> = edge_lists.iter().map(|e| e.len() as f64 / duration).collect();
    let w = window.duration;
    let random_rate = rates.iter().product::<f64>() * w.powi(n as i32 - 1);
    let random_rate_poisson = rates[0] * rates[1..].iter().map(|r| 1.0 - (-r * w).exp()).product::<f64>();
    Ok(CoincidenceReport {
        n,
        count: events,
        observed_rate: events as f64 / duration,
        observed_sigma: (events as f64).sqrt() / duration,
        rates,
        random_rate,
        random_rate_poisson,
        window,
        duration,
        background: None,
        predicted_saturation: None,
    })
}

/// Core counting rule on sorted edge positions (in samples).
pub fn count_edge_coincidences(edge_lists: &[Vec<usize>], n_w: usize) -> usize {
    coincidence_anchors(edge_lists, n_w).len()
}

/// Anchor positions (edges of the first path) of every counted event.
pub fn coincidence_anchors(edge_lists: &[Vec<usize>], n_w: usize) -> Vec<usize> {
    let n = edge_lists.len();
    let before = n_w / 2;
    let mut cursor = vec![0usize; n];
    let mut used: Vec<Vec<bool>> = edge_lists.iter().map(|e| vec![false; e.len()]).collect();
    let mut anchors = Vec::new();
    let mut picks = vec![0usize; n];
    'anchor: for &a in &edge_lists[0] {
        let lo = a.saturating_sub(before);
        let hi = lo + n_w; // exclusive
        for q in 1..n {
            let list = &edge_lists[q];
            while cursor[q] < list.len() && list[cursor[q]] < lo {
                cursor[q] += 1;
            }
            let mut best: Option<usize> = None;
            let mut j = cursor[q];
            while j < list.len() && list[j] < hi {
                if !used[q][j] && best.map_or(true, |b| list[j].abs_diff(a) < list[b].abs_diff(a)) {
                    best = Some(j);
                }
                j += 1;
            }
            match best {
                Some(b) => picks[q] = b,
                None => continue 'anchor,
            }
        }
        for q in 1..n {
            used[q][picks[q]] = true;
        }
        anchors.push(a);
    }
    anchors
}
