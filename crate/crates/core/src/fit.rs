//! Bounded Levenberg–Marquardt least squares and the shared fit report type.
//!
//! Every estimator in [`crate::analysis`] and [`crate::qp`] funnels its
//! nonlinear fit through [`levenberg_marquardt`]. Parameters may be boxed by
//! lower/upper bounds; steps are projected back into the box and a parameter
//! that finishes on its bound is reported through [`FitFlag::AtBound`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Conditions that make a fit untrustworthy. They are reported, never hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", content = "detail", rename_all = "snake_case")]
pub enum FitFlag {
    NotConverged,
    AtBound(String),
    Unidentifiable(String),
    SingularCurvature,
    InsufficientData,
}

/// Generic estimator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    /// Non-identified parameters may be NaN, written as `null`.
    #[serde(with = "crate::serde_util::vec_nonfinite")]
    pub params: Vec<f64>,
    /// One-sigma uncertainties. Non-identified parameters carry `inf`.
    #[serde(with = "crate::serde_util::vec_nonfinite")]
    pub uncertainties: Vec<f64>,
    #[serde(with = "crate::serde_util::nonfinite")]
    pub residual_norm: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<FitFlag>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.params[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.uncertainties[i])
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    pub initial_lambda: f64,
    /// Relative step for the central-difference Jacobian.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-12,
            xtol: 1e-12,
            gtol: 1e-14,
            initial_lambda: 1e-3,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

/// Raw optimizer output; callers turn it into a [`FitResult`].
#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(JᵀJ)⁻¹` at the solution, `None` when the curvature matrix is singular.
    pub inv_curvature: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub at_bound: Vec<bool>,
}

impl LmOutcome {
    pub fn rss(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    /// Converts the outcome into a [`FitResult`]. With `scale_by_residual`
    /// the covariance is multiplied by the reduced chi-square, which is the
    /// right choice whenever the residual weights are only known up to a
    /// common factor.
    pub fn into_result(self, names: &[&str], scale_by_residual: bool) -> FitResult {
        let m = self.residuals.len();
        let p = self.x.len();
        let dof = m.saturating_sub(p);
        let rss = self.rss();
        let scale = if scale_by_residual && dof > 0 {
            rss / dof as f64
        } else {
            1.0
        };
        let mut flags = Vec::new();
        let uncertainties = match &self.inv_curvature {
            Some(c) => (0..p).map(|i| (c[(i, i)].max(0.0) * scale).sqrt()).collect(),
            None => {
                flags.push(FitFlag::SingularCurvature);
                vec![f64::INFINITY; p]
            }
        };
        if !self.converged {
            flags.push(FitFlag::NotConverged);
        }
        for (i, hit) in self.at_bound.iter().enumerate() {
            if *hit {
                flags.push(FitFlag::AtBound(names[i].to_string()));
            }
        }
        FitResult {
            names: names.iter().map(|s| s.to_string()).collect(),
            params: self.x,
            uncertainties,
            residual_norm: rss.sqrt(),
            dof,
            iterations: self.iterations,
            converged: self.converged,
            flags,
        }
    }
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], bounds: &Bounds, rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        let can_up = x[j] + h <= bounds.upper[j];
        let can_down = x[j] - h >= bounds.lower[j];
        let (rp, rm, denom) = match (can_up, can_down) {
            (true, true) => {
                xp[j] = x[j] + h;
                let rp = f(&xp);
                xp[j] = x[j] - h;
                let rm = f(&xp);
                (rp, rm, 2.0 * h)
            }
            (true, false) => {
                xp[j] = x[j] + h;
                (f(&xp), r0.to_vec(), h)
            }
            (false, true) => {
                xp[j] = x[j] - h;
                (r0.to_vec(), f(&xp), h)
            }
            (false, false) => (r0.to_vec(), r0.to_vec(), 1.0),
        };
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / denom;
        }
    }
    jac
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes `‖f(x)‖²` starting from `x0`.
///
/// Non-finite residuals are treated as an infinitely bad step, which lets
/// models signal an inadmissible parameter vector by returning NaN.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], bounds: &Bounds, opts: &LmOptions) -> LmOutcome
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut r = f(&x);
    let mut cost = sum_sq(&r);
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    if cost == 0.0 {
        converged = true;
    }

    'outer: while !converged && iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(&f, &x, &r, bounds, opts.fd_step);
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= opts.gtol * (1.0 + cost) {
            converged = true;
            break;
        }
        let diag_floor = a.diagonal().amax().max(f64::MIN_POSITIVE) * 1e-15;
        loop {
            let mut damped = a.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * a[(i, i)].max(diag_floor);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e20 {
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut x_new: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            bounds.project(&mut x_new);
            let r_new = f(&x_new);
            let cost_new = sum_sq(&r_new);
            if cost_new.is_finite() && cost_new <= cost {
                let dx: f64 = x_new
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rel_drop = (cost - cost_new) / cost.max(f64::MIN_POSITIVE);
                x = x_new;
                r = r_new;
                cost = cost_new;
                lambda = (lambda / 3.0).max(1e-15);
                if rel_drop <= opts.ftol || dx <= opts.xtol * (xn + opts.xtol) || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e20 {
                // No downhill step exists at any damping: a stationary point
                // to working precision.
                converged = true;
                break 'outer;
            }
        }
    }

    let jac = jacobian(&f, &x, &r, bounds, opts.fd_step);
    let a = jac.transpose() * &jac;
    let inv_curvature = a.clone().cholesky().map(|c| c.inverse()).filter(|c| {
        (0..n).all(|i| c[(i, i)].is_finite())
    });
    let at_bound = (0..n)
        .map(|i| {
            let span = (bounds.upper[i] - bounds.lower[i]).abs();
            let tol = if span.is_finite() { 1e-9 * span } else { 1e-12 * x[i].abs().max(1.0) };
            (x[i] - bounds.lower[i]).abs() <= tol || (bounds.upper[i] - x[i]).abs() <= tol
        })
        .collect();
    LmOutcome {
        x,
        residuals: r,
        inv_curvature,
        iterations,
        converged,
        at_bound,
    }
}

/// Ordinary least squares for `y = a + b·x`, returning `(a, b, σ_a, σ_b, rss)`.
/// Uncertainties are scaled by the residual variance.
pub fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (intercept + slope * a);
            e * e
        })
        .sum();
    let s2 = if x.len() > 2 { rss / (n - 2.0) } else { 0.0 };
    let sigma_slope = (s2 / sxx).sqrt();
    let sigma_intercept = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    (intercept, slope, sigma_intercept, sigma_slope, rss)
}
