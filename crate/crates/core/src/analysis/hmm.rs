//! Two-state hidden Markov model with Gaussian emissions: Baum–Welch for the
//! parameters, Viterbi for the path.
//!
//! Masked samples carry no emission and only propagate the hidden chain.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fit::FitFlag;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmOptions {
    pub max_iter: usize,
    /// Relative change of the log-likelihood that ends EM.
    pub tol: f64,
    /// EM runs on the first this-many samples; Viterbi always covers the
    /// whole record. `None` uses everything.
    pub em_max_samples: Option<usize>,
    /// Initial switching rate, 1/s. `None` derives it from a threshold pass.
    pub init_rate: Option<f64>,
    /// Smallest occupancy of either mode for the signal to count as bimodal.
    pub min_cluster_fraction: f64,
    /// Smallest separation of the modes in pooled standard deviations.
    pub min_separation: f64,
}

impl Default for HmmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            em_max_samples: Some(1 << 16),
            init_rate: None,
            min_cluster_fraction: 0.01,
            min_separation: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmResult {
    /// `+1` (high mode), `−1`, or `0` where masked.
    pub path: Vec<i8>,
    /// Transitions of the decoded path per second of contiguous data.
    pub switch_rate: f64,
    pub transitions: usize,
    /// s.
    pub duration: f64,
    pub means: [f64; 2],
    pub sds: [f64; 2],
    /// Row-stochastic transition matrix per sample, low mode first.
    pub transition: [[f64; 2]; 2],
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<FitFlag>,
}

struct Params {
    pi: [f64; 2],
    a: [[f64; 2]; 2],
    mu: [f64; 2],
    var: [f64; 2],
}

fn log_emission(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((x - mu).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// 1-D two-means; returns `(means, sds, fractions)` with the low mode first.
fn two_means(x: &[f64]) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut c = [lo, hi];
    for _ in 0..100 {
        let th = 0.5 * (c[0] + c[1]);
        let (mut s, mut n) = ([0.0; 2], [0usize; 2]);
        for v in x {
            let i = (*v >= th) as usize;
            s[i] += v;
            n[i] += 1;
        }
        let next = [
            if n[0] > 0 { s[0] / n[0] as f64 } else { c[0] },
            if n[1] > 0 { s[1] / n[1] as f64 } else { c[1] },
        ];
        if next == c {
            break;
        }
        c = next;
    }
    let th = 0.5 * (c[0] + c[1]);
    let (mut ss, mut n) = ([0.0; 2], [0usize; 2]);
    for v in x {
        let i = (*v >= th) as usize;
        ss[i] += (v - c[i]).powi(2);
        n[i] += 1;
    }
    let sd = [0, 1].map(|i| if n[i] > 0 { (ss[i] / n[i] as f64).sqrt() } else { 0.0 });
    let total = x.len() as f64;
    (c, sd, [n[0] as f64 / total, n[1] as f64 / total])
}

/// Forward–backward with per-step scaling; returns the log-likelihood and
/// accumulates the sufficient statistics for one EM update.
fn em_step(x: &[f64], valid: &[bool], p: &Params, var_floor: f64) -> (f64, Params) {
    let n = x.len();
    let emis = |k: usize| -> [f64; 2] {
        if !valid[k] {
            return [1.0, 1.0];
        }
        let l = [log_emission(x[k], p.mu[0], p.var[0]), log_emission(x[k], p.mu[1], p.var[1])];
        let m = l[0].max(l[1]);
        [(l[0] - m).exp(), (l[1] - m).exp()]
    };
    let shift = |k: usize| -> f64 {
        if !valid[k] {
            return 0.0;
        }
        log_emission(x[k], p.mu[0], p.var[0]).max(log_emission(x[k], p.mu[1], p.var[1]))
    };
    let mut alpha = vec![[0.0; 2]; n];
    let mut scale = vec![0.0; n];
    let mut ll = 0.0;
    for k in 0..n {
        let b = emis(k);
        let prior = if k == 0 {
            p.pi
        } else {
            let a = alpha[k - 1];
            [
                a[0] * p.a[0][0] + a[1] * p.a[1][0],
                a[0] * p.a[0][1] + a[1] * p.a[1][1],
            ]
        };
        let v = [prior[0] * b[0], prior[1] * b[1]];
        let c = v[0] + v[1];
        alpha[k] = [v[0] / c, v[1] / c];
        scale[k] = c;
        ll += c.ln() + shift(k);
    }
    let mut beta = [1.0, 1.0];
    let mut num_a = [[0.0; 2]; 2];
    let mut s_w = [0.0; 2];
    let mut s_x = [0.0; 2];
    let mut s_xx = [0.0; 2];
    let mut gamma0 = [0.0; 2];
    for k in (0..n).rev() {
        let g = [alpha[k][0] * beta[0], alpha[k][1] * beta[1]];
        let gs = g[0] + g[1];
        let g = [g[0] / gs, g[1] / gs];
        if valid[k] {
            for i in 0..2 {
                s_w[i] += g[i];
                s_x[i] += g[i] * x[k];
                s_xx[i] += g[i] * x[k] * x[k];
            }
        }
        if k == 0 {
            gamma0 = g;
            break;
        }
        let b = emis(k);
        let mut xi = [[0.0; 2]; 2];
        let mut tot = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                xi[i][j] = alpha[k - 1][i] * p.a[i][j] * b[j] * beta[j];
                tot += xi[i][j];
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                num_a[i][j] += xi[i][j] / tot;
            }
        }
        let nb = [
            (p.a[0][0] * b[0] * beta[0] + p.a[0][1] * b[1] * beta[1]) / scale[k],
            (p.a[1][0] * b[0] * beta[0] + p.a[1][1] * b[1] * beta[1]) / scale[k],
        ];
        let m = nb[0].max(nb[1]);
        beta = [nb[0] / m, nb[1] / m];
    }
    let mut a = [[0.0; 2]; 2];
    for i in 0..2 {
        let row = num_a[i][0] + num_a[i][1];
        for j in 0..2 {
            a[i][j] = if row > 0.0 { num_a[i][j] / row } else { p.a[i][j] };
        }
    }
    let mu = [0, 1].map(|i| if s_w[i] > 0.0 { s_x[i] / s_w[i] } else { p.mu[i] });
    let var = [0, 1].map(|i| {
        if s_w[i] > 0.0 {
            (s_xx[i] / s_w[i] - mu[i] * mu[i]).max(var_floor)
        } else {
            p.var[i]
        }
    });
    (ll, Params { pi: gamma0, a, mu, var })
}

fn viterbi(x: &[f64], valid: &[bool], p: &Params) -> Vec<u8> {
    let n = x.len();
    let la = p.a.map(|r| r.map(|v| v.max(1e-300).ln()));
    let em = |k: usize, s: usize| if valid[k] { log_emission(x[k], p.mu[s], p.var[s]) } else { 0.0 };
    let mut delta = [p.pi[0].max(1e-300).ln() + em(0, 0), p.pi[1].max(1e-300).ln() + em(0, 1)];
    let mut back = vec![[0u8; 2]; n];
    for k in 1..n {
        let mut next = [0.0; 2];
        for j in 0..2 {
            let from0 = delta[0] + la[0][j];
            let from1 = delta[1] + la[1][j];
            let (best, arg) = if from1 > from0 { (from1, 1) } else { (from0, 0) };
            next[j] = best + em(k, j);
            back[k][j] = arg;
        }
        delta = next;
    }
    let mut path = vec![0u8; n];
    path[n - 1] = (delta[1] > delta[0]) as u8;
    for k in (1..n).rev() {
        path[k - 1] = back[k][path[k] as usize];
    }
    path
}

/// Decodes a (typically moving-averaged) parity signal.
pub fn hmm_decode(signal: &[f64], mask: &[bool], dt: f64, opts: &HmmOptions) -> Result<HmmResult> {
    if signal.len() != mask.len() {
        return domain("signal and mask differ in length");
    }
    if !(dt > 0.0) {
        return domain("sampling interval must be positive");
    }
    let valid_x: Vec<f64> = signal.iter().zip(mask).filter(|(_, m)| **m).map(|(x, _)| *x).collect();
    if valid_x.len() < 16 {
        return Err(Error::InsufficientData("HMM decoding needs at least 16 valid samples".into()));
    }
    let (mu, sd, frac) = two_means(&valid_x);
    if frac[0].min(frac[1]) < opts.min_cluster_fraction {
        return Err(Error::Degenerate(format!(
            "smaller mode holds {:.3}% of samples",
            100.0 * frac[0].min(frac[1])
        )));
    }
    let pooled = (0.5 * (sd[0] * sd[0] + sd[1] * sd[1])).sqrt();
    if pooled > 0.0 && (mu[1] - mu[0]) / pooled < opts.min_separation {
        return Err(Error::Degenerate(format!(
            "modes are {:.2} pooled standard deviations apart",
            (mu[1] - mu[0]) / pooled
        )));
    }
    let total_var = {
        let m = valid_x.iter().sum::<f64>() / valid_x.len() as f64;
        valid_x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / valid_x.len() as f64
    };
    let var_floor = 1e-6 * total_var.max(1e-300);

    let threshold = 0.5 * (mu[0] + mu[1]);
    let (transitions, pairs) = count_transitions(
        &signal.iter().map(|x| if *x >= threshold { 1 } else { -1 }).collect::<Vec<i8>>(),
        mask,
    );
    let p_switch = match opts.init_rate {
        Some(r) => r * dt,
        None => transitions.max(1) as f64 / pairs.max(1) as f64,
    }
    .clamp(1e-9, 0.5);
    let mut params = Params {
        pi: [0.5, 0.5],
        a: [[1.0 - p_switch, p_switch], [p_switch, 1.0 - p_switch]],
        mu,
        var: sd.map(|s| (s * s).max(var_floor)),
    };

    let m = opts.em_max_samples.unwrap_or(signal.len()).min(signal.len()).max(2);
    let (xs, vs) = (&signal[..m], &mask[..m]);
    let mut prev_ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut ll = f64::NEG_INFINITY;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let (l, next) = em_step(xs, vs, &params, var_floor);
        ll = l;
        params = next;
        if prev_ll.is_finite() && (l - prev_ll).abs() <= opts.tol * l.abs().max(1.0) {
            converged = true;
            break;
        }
        prev_ll = l;
    }
    if params.mu[0] > params.mu[1] {
        params.mu.swap(0, 1);
        params.var.swap(0, 1);
        params.pi.swap(0, 1);
        params.a = [[params.a[1][1], params.a[1][0]], [params.a[0][1], params.a[0][0]]];
    }

    let states = viterbi(signal, mask, &params);
    let path: Vec<i8> = states
        .iter()
        .zip(mask)
        .map(|(s, m)| if !*m { 0 } else if *s == 1 { 1 } else { -1 })
        .collect();
    let (transitions, pairs) = count_transitions(&path, mask);
    let duration = pairs as f64 * dt;
    let mut flags = Vec::new();
    if !converged {
        flags.push(FitFlag::NotConverged);
    }
    Ok(HmmResult {
        path,
        switch_rate: if duration > 0.0 { transitions as f64 / duration } else { 0.0 },
        transitions,
        duration,
        means: params.mu,
        sds: params.var.map(f64::sqrt),
        transition: params.a,
        log_likelihood: ll,
        iterations,
        converged,
        flags,
    })
}

/// State changes between adjacent valid samples, and the number of such pairs.
pub(crate) fn count_transitions(states: &[i8], mask: &[bool]) -> (usize, usize) {
    let mut t = 0;
    let mut pairs = 0;
    for k in 1..states.len() {
        if mask[k] && mask[k - 1] {
            pairs += 1;
            t += (states[k] != states[k - 1]) as usize;
        }
    }
    (t, pairs)
}
