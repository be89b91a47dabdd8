//! Offset-charge records: branch folding, minimal-jump unwrapping, jump
//! counting and the impact rate they imply.
//!
//! Tomography only determines `δn_g` modulo one half, so records report
//! values in `[0, 0.5)` and consecutive samples are unwrapped to the
//! representative nearest the previous one. A single jump is therefore seen
//! as its representative in `(−0.25, 0.25]`.

use serde::{Deserialize, Serialize};

use crate::device::ChipGeometry;
use crate::error::{domain, Error, Result};
use crate::synth::TomographyScan;

use super::tomography::fit_tomography;

/// Period of the charge-tomography signal in `n_g`.
pub const BRANCH_PERIOD: f64 = 0.5;

/// Default threshold separating discrete jumps from drift, e.
pub const DEFAULT_JUMP_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeJump {
    /// s.
    pub t: f64,
    /// e.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeRecord {
    pub qubit_id: String,
    /// s.
    pub times: Vec<f64>,
    /// Reported offsets in `[0, 0.5)`.
    pub values: Vec<f64>,
    /// Unwrapped offset, starting at `values[0]`.
    pub accumulated: Vec<f64>,
    /// Consecutive differences of `accumulated`, stamped with the later time.
    pub jumps: Vec<ChargeJump>,
    /// Unwrapped simulation truth, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
}

impl ChargeRecord {
    /// Builds a record from reported offsets.
    pub fn from_values(qubit_id: &str, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return domain("charge record needs equally long, non-empty columns");
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return domain("charge record times must increase");
        }
        let values: Vec<f64> = values.into_iter().map(offset_branch).collect();
        let (accumulated, jumps) = unwrap_offsets(&times, &values);
        Ok(Self {
            qubit_id: qubit_id.to_string(),
            times,
            values,
            accumulated,
            jumps,
            truth: None,
        })
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Offset charge at `t` (truth when known, else the reported value),
    /// holding the last sample at or before `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|v| *v <= t).saturating_sub(1);
        match &self.truth {
            Some(truth) => truth[k],
            None => self.values[k],
        }
    }
}

/// Folds an offset into the reported branch `[0, 0.5)`.
pub fn offset_branch(v: f64) -> f64 {
    let r = v.rem_euclid(BRANCH_PERIOD);
    if r >= BRANCH_PERIOD {
        0.0
    } else {
        r
    }
}

/// Representative of `d` in `(−0.25, 0.25]`.
fn minimal_step(d: f64) -> f64 {
    let half = 0.5 * BRANCH_PERIOD;
    let mut s = d - BRANCH_PERIOD * (d / BRANCH_PERIOD).round();
    if s <= -half {
        s += BRANCH_PERIOD;
    }
    if s > half {
        s -= BRANCH_PERIOD;
    }
    s
}

/// Unwraps reported offsets with the minimal-jump rule.
pub fn unwrap_offsets(times: &[f64], values: &[f64]) -> (Vec<f64>, Vec<ChargeJump>) {
    let mut acc = Vec::with_capacity(values.len());
    let mut jumps = Vec::with_capacity(values.len().saturating_sub(1));
    let Some(first) = values.first() else {
        return (acc, jumps);
    };
    acc.push(*first);
    for k in 1..values.len() {
        let step = minimal_step(values[k] - values[k - 1]);
        acc.push(acc[k - 1] + step);
        jumps.push(ChargeJump {
            t: times[k],
            magnitude: step,
        });
    }
    (acc, jumps)
}

/// Fits every scan and unwraps the fitted offsets into records, starting a
/// new record wherever consecutive scans are more than `max_gap` s apart.
pub fn track_offset_charge(scans: &[TomographyScan], max_gap: f64) -> Result<Vec<ChargeRecord>> {
    if scans.len() < 2 {
        return Err(Error::InsufficientData("tracking needs at least two scans".into()));
    }
    if !(max_gap > 0.0) {
        return domain("maximum gap must be positive");
    }
    let id = &scans[0].qubit_id;
    if scans.iter().any(|s| &s.qubit_id != id) {
        return domain("scans belong to different qubits");
    }
    let mut order: Vec<usize> = (0..scans.len()).collect();
    order.sort_by(|a, b| scans[*a].t.total_cmp(&scans[*b].t));
    let mut fitted = Vec::with_capacity(scans.len());
    for i in order {
        let fit = fit_tomography(&scans[i])?;
        fitted.push((scans[i].t, fit.param("offset").expect("offset is fitted")));
    }
    let mut records = Vec::new();
    let mut start = 0;
    for k in 1..=fitted.len() {
        if k == fitted.len() || fitted[k].0 - fitted[k - 1].0 > max_gap {
            let (times, values): (Vec<f64>, Vec<f64>) = fitted[start..k].iter().copied().unzip();
            records.push(ChargeRecord::from_values(id, times, values)?);
            start = k;
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRate {
    /// 1/s.
    pub rate: f64,
    /// Poisson one-sigma, 1/s.
    pub sigma: f64,
    /// One-sided 95% upper bound, 1/s.
    pub upper_bound: f64,
    pub count: usize,
    /// s.
    pub duration: f64,
}

fn poisson_rate(count: usize, duration: f64) -> Result<JumpRate> {
    if !(duration > 0.0) {
        return domain("record duration must be positive");
    }
    let upper = if count == 0 {
        -(0.05f64.ln())
    } else {
        count as f64 + 1.645 * (count as f64).sqrt()
    };
    Ok(JumpRate {
        rate: count as f64 / duration,
        sigma: (count as f64).sqrt() / duration,
        upper_bound: upper / duration,
        count,
        duration,
    })
}

/// Rate of jumps with `|magnitude| > threshold`.
pub fn jump_rate(record: &ChargeRecord, threshold: f64) -> Result<JumpRate> {
    jump_rate_combined(std::slice::from_ref(record), threshold)
}

/// Pools the jumps and durations of several records (for example the pieces
/// returned by [`track_offset_charge`]).
pub fn jump_rate_combined(records: &[ChargeRecord], threshold: f64) -> Result<JumpRate> {
    let count = records
        .iter()
        .map(|r| r.jumps.iter().filter(|j| j.magnitude.abs() > threshold).count())
        .sum();
    poisson_rate(count, records.iter().map(ChargeRecord::duration).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactRate {
    /// 1/s.
    pub rate: f64,
    pub sigma: f64,
}

/// Scales a per-qubit jump rate by the ratio of chip area to the sensing
/// disc of radius `radius` mm.
pub fn estimate_impact_rate(gamma_c: f64, sigma_c: f64, radius: f64, chip: &ChipGeometry) -> Result<ImpactRate> {
    if !(gamma_c >= 0.0 && sigma_c >= 0.0) {
        return domain("jump rate and its uncertainty must be non-negative");
    }
    let sensing = std::f64::consts::PI * radius * radius;
    if !(radius > 0.0) || sensing >= chip.area() {
        return domain("sensing area must be positive and smaller than the chip");
    }
    let ratio = chip.area() / sensing;
    Ok(ImpactRate {
        rate: gamma_c * ratio,
        sigma: sigma_c * ratio,
    })
}
