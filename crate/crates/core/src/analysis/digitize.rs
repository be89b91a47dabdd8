//! Thresholding of parity-mapping samples into a ±1 record with gaps.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::synth::ParityTrace;

/// Digital parity record. States are `+1`, `−1`, or `0` for a masked sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalTrace {
    pub qubit_id: String,
    pub dt: f64,
    pub t_start: f64,
    pub states: Vec<i8>,
}

impl DigitalTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.states.is_empty() {
            return 0.0;
        }
        self.states.iter().filter(|s| **s != 0).count() as f64 / self.states.len() as f64
    }

    /// States as floats, gaps as zero.
    pub fn as_f64(&self) -> Vec<f64> {
        self.states.iter().map(|s| *s as f64).collect()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.states.iter().map(|s| *s != 0).collect()
    }
}

/// `+1` where `sample ≥ threshold`, `−1` below, `0` where masked.
pub fn digitize_samples(samples: &[f64], mask: &[bool], threshold: f64) -> Vec<i8> {
    samples
        .iter()
        .zip(mask)
        .map(|(s, m)| match (m, *s >= threshold) {
            (false, _) => 0,
            (true, true) => 1,
            (true, false) => -1,
        })
        .collect()
}

pub fn digitize(trace: &ParityTrace, threshold: f64) -> Result<DigitalTrace> {
    trace.validate()?;
    if !threshold.is_finite() {
        return domain("threshold must be finite");
    }
    Ok(DigitalTrace {
        qubit_id: trace.qubit_id.clone(),
        dt: trace.dt,
        t_start: trace.t_start,
        states: digitize_samples(&trace.samples, &trace.mask, threshold),
    })
}

/// Median of the unmasked samples.
pub fn median_threshold(samples: &[f64], mask: &[bool]) -> Option<f64> {
    let mut v: Vec<f64> = samples.iter().zip(mask).filter(|(_, m)| **m).map(|(s, _)| *s).collect();
    if v.is_empty() {
        return None;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}
