//! Estimators for the common-margin model `η = (log c, α, θ)` and the
//! different-margin two-step variant.
//!
//! * [`two_step_ifm`]: closed-form marginal MLE, then the dependence parameter
//!   from the joint jumps with the margins frozen.
//! * [`joint_only_mle`]: the joint-jump likelihood maximized in all of `η`.
//! * [`full_mle`]: the likelihood of joint and single jumps maximized in `η`.
//!
//! The 3-D fits profile out `log c` (its score fixes an intensity at
//! `count / t`) and search `(logit α, ln θ)` with a damped Newton method.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_clayton, power_sum_log, ModelParams};
use crate::observation::TruncatedDataset;
use crate::optim::{brent_root, golden_max, newton_maximize, NewtonOptions};

/// Relative score tolerance; the absolute tolerance is this times the sample size.
pub const SCORE_TOL: f64 = 1e-6;
/// Parameter tolerance of the optimizers.
pub const PARAM_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 500;

/// Search range of the one-dimensional dependence fits.
const DEP_RANGE: (f64, f64) = (1e-3, 1e3);
const DEP_GRID: usize = 121;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TwoStep,
    JointOnly,
    Full,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::TwoStep, Method::JointOnly, Method::Full];

    pub fn label(self) -> &'static str {
        match self {
            Method::TwoStep => "two-step",
            Method::JointOnly => "joint-only",
            Method::Full => "full",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-step" | "two-step-ifm" | "ifm" => Ok(Method::TwoStep),
            "joint-only" | "joint-only-mle" => Ok(Method::JointOnly),
            "full" | "full-mle" => Ok(Method::Full),
            _ => Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        }
    }
}

/// How Step 1 treats the two margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginMode {
    /// Common `(c, α)`: both margins pooled.
    #[default]
    Pooled,
    /// Separate `(cₖ, αₖ)` per margin; Step 2 is then solved in δ.
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Sup-norm of the score being solved, at the solution.
    pub score_norm: f64,
    pub score_tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    /// Sign changes of the dependence score over the search grid (two-step only).
    pub sign_changes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "ResultJson")]
pub struct EstimateResult {
    pub method: Method,
    pub params: ModelParams,
    pub diagnostics: Diagnostics,
    pub epsilon: f64,
    pub t: f64,
}

impl EstimateResult {
    /// `(log c, α, θ)` when the margins are common.
    pub fn eta(&self) -> Option<[f64; 3]> {
        self.params.require_common().ok().map(|(l, a, th)| [l, a, th])
    }

    pub fn delta(&self) -> f64 {
        self.params.delta()
    }
}

#[derive(Serialize)]
struct ResultJson {
    method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    delta: f64,
    params: ModelParams,
    diagnostics: Diagnostics,
    epsilon: f64,
    t: f64,
}

impl From<EstimateResult> for ResultJson {
    fn from(r: EstimateResult) -> Self {
        let eta = r.eta();
        ResultJson {
            method: r.method,
            log_c: eta.map(|e| e[0]),
            alpha: eta.map(|e| e[1]),
            theta: eta.map(|e| e[2]),
            delta: r.params.delta(),
            params: r.params,
            diagnostics: r.diagnostics,
            epsilon: r.epsilon,
            t: r.t,
        }
    }
}

/// Closed-form marginal MLE of one margin (or of both pooled).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalFit {
    pub log_c: f64,
    pub alpha: f64,
    /// Estimated intensity of jumps above ε in one margin.
    pub lambda: f64,
    pub n: usize,
}

/// Marginal estimates for the first and second component; identical in
/// pooled mode.
pub fn marginal_mle(ds: &TruncatedDataset, mode: MarginMode) -> Result<[MarginalFit; 2]> {
    match mode {
        MarginMode::Pooled => {
            let fit = fit_margin(ds.pooled_view(), ds.epsilon, 2.0 * ds.t)?;
            Ok([fit, fit])
        }
        MarginMode::Separate => Ok([
            fit_margin(ds.x_view(), ds.epsilon, ds.t)?,
            fit_margin(ds.y_view(), ds.epsilon, ds.t)?,
        ]),
    }
}

/// `λ̃ = n/exposure`, `α̃ = 1/mean(log(z/ε))`, `log c̃ = log λ̃ + α̃ log ε`.
fn fit_margin(values: impl Iterator<Item = f64>, epsilon: f64, exposure: f64) -> Result<MarginalFit> {
    let le = epsilon.ln();
    let mut n = 0usize;
    let mut sum = 0.0;
    for z in values {
        if !(z >= epsilon) {
            return Err(Error::InvalidParameter(format!(
                "observation {z} is below epsilon {epsilon}"
            )));
        }
        n += 1;
        sum += z.ln() - le;
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "marginal fit needs at least 2 observations, got {n}"
        )));
    }
    if !(sum > 0.0) {
        return Err(Error::Numerical(
            "all observations equal epsilon; alpha is undefined".into(),
        ));
    }
    let alpha = n as f64 / sum;
    let lambda = n as f64 / exposure;
    Ok(MarginalFit {
        log_c: lambda.ln() + alpha * le,
        alpha,
        lambda,
        n,
    })
}

/// Scores of the pooled marginal likelihood in `(log c, α)`.
pub fn marginal_score(ds: &TruncatedDataset, log_c: f64, alpha: f64) -> [f64; 2] {
    let le = ds.epsilon.ln();
    let n = ds.n() as f64;
    let lambda = (log_c - alpha * le).exp();
    let excess = n - 2.0 * lambda * ds.t;
    let s: f64 = ds.pooled_view().map(|z| z.ln() - le - 1.0 / alpha).sum();
    [excess, -s - excess * le]
}

/// Log coordinates of the joint jumps.
#[derive(Debug, Clone)]
struct JointLogs {
    lx: Vec<f64>,
    ly: Vec<f64>,
    sum_l: f64,
}

impl JointLogs {
    fn new(ds: &TruncatedDataset) -> Self {
        let lx: Vec<f64> = ds.joint.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = ds.joint.iter().map(|p| p.1.ln()).collect();
        let sum_l = lx.iter().chain(&ly).sum();
        JointLogs { lx, ly, sum_l }
    }

    fn len(&self) -> usize {
        self.lx.len()
    }

    /// `(Σ L, Σ ∂θL, Σ ∂²θL)` with `L = log(x^θ + y^θ)`.
    fn power_sums(&self, theta: f64) -> (f64, f64, f64) {
        let mut s = (0.0, 0.0, 0.0);
        for (&a, &b) in self.lx.iter().zip(&self.ly) {
            let p = power_sum_log(a, b, theta);
            s.0 += p.value;
            s.1 += p.d_theta;
            s.2 += p.d2_theta;
        }
        s
    }
}

/// Joint-jump log-likelihood and its gradient in `(log c, α, θ)`.
fn joint_like(j: &JointLogs, eps: f64, t: f64, log_c: f64, alpha: f64, theta: f64) -> (f64, [f64; 3]) {
    let n = j.len() as f64;
    let (sl, sd, _) = j.power_sums(theta);
    let le = eps.ln();
    let lam = (log_c - alpha * le - alpha * LN_2 / theta).exp();
    let value = -lam * t + n * (alpha.ln() + (alpha + theta).ln() + log_c) + (theta - 1.0) * j.sum_l
        - (2.0 + alpha / theta) * sl;
    let g_c = n - lam * t;
    let g_a = lam * t * (le + LN_2 / theta) + n / alpha + n / (alpha + theta) - sl / theta;
    let g_t = -lam * t * alpha * LN_2 / (theta * theta) + n / (alpha + theta) + j.sum_l
        + alpha / (theta * theta) * sl
        - (2.0 + alpha / theta) * sd;
    (value, [g_c, g_a, g_t])
}

/// Log-likelihood of the joint jumps in `(log c, α, θ)`.
pub fn joint_log_likelihood(ds: &TruncatedDataset, log_c: f64, alpha: f64, theta: f64) -> f64 {
    joint_like(&JointLogs::new(ds), ds.epsilon, ds.t, log_c, alpha, theta).0
}

/// Gradient of [`joint_log_likelihood`] in `(log c, α, θ)`.
pub fn joint_score(ds: &TruncatedDataset, log_c: f64, alpha: f64, theta: f64) -> [f64; 3] {
    joint_like(&JointLogs::new(ds), ds.epsilon, ds.t, log_c, alpha, theta).1
}

/// Score vector of the two-step estimating equations: the pooled marginal
/// scores in `(log c, α)` and the joint-jump score in θ.
pub fn two_step_score(ds: &TruncatedDataset, log_c: f64, alpha: f64, theta: f64) -> [f64; 3] {
    let [s1, s2] = marginal_score(ds, log_c, alpha);
    [s1, s2, joint_score(ds, log_c, alpha, theta)[2]]
}

/// The random quantities `A(η)` and `B(η)` of the two-step Hessian,
/// scaled by `1/(λ‖ t)` as in the expected-Hessian expressions.
pub fn hessian_ab(ds: &TruncatedDataset, log_c: f64, alpha: f64, theta: f64) -> (f64, f64) {
    let j = JointLogs::new(ds);
    let n = j.len() as f64;
    let (sl, sd, sd2) = j.power_sums(theta);
    let lam_t = (log_c - alpha * ds.epsilon.ln() - alpha * LN_2 / theta).exp() * ds.t;
    let th2 = theta * theta;
    let k = alpha * LN_2 / th2;
    let a = -alpha * LN_2 * LN_2 / (th2 * theta) + LN_2 / th2 + n / (lam_t * (alpha + theta).powi(2))
        - sl / (lam_t * th2)
        + sd / (lam_t * theta);
    let b = k * k - 2.0 * alpha * LN_2 / (th2 * theta) + n / (lam_t * (alpha + theta).powi(2))
        + 2.0 * alpha * sl / (lam_t * th2 * theta)
        - 2.0 * alpha * sd / (lam_t * th2)
        + (2.0 * theta + alpha) * sd2 / (lam_t * theta);
    (a, b)
}

/// Second derivatives of the two-step log-likelihoods with respect to `η`,
/// rows ordered as the score vector.
pub fn two_step_hessian(ds: &TruncatedDataset, log_c: f64, alpha: f64, theta: f64) -> [[f64; 3]; 3] {
    let le = ds.epsilon.ln();
    let lam = (log_c - alpha * le).exp();
    let two_lt = 2.0 * lam * ds.t;
    let d = (-alpha / theta - 1.0).exp2();
    let (a, b) = hessian_ab(ds, log_c, alpha, theta);
    let k = alpha * LN_2 / (theta * theta);
    let n = ds.n() as f64;
    [
        [-two_lt, two_lt * le, 0.0],
        [two_lt * le, -n / (alpha * alpha) - two_lt * le * le, 0.0],
        [-two_lt * d * k, two_lt * d * (k * le - a), -two_lt * d * b],
    ]
}

/// One-dimensional argmax of a log-likelihood over `[lo, hi]` given its score.
struct DepFit {
    x: f64,
    iterations: usize,
    sign_changes: usize,
    interior: bool,
}

fn dependence_argmax<S, L>(score: S, loglik: L, (lo, hi): (f64, f64)) -> DepFit
where
    S: Fn(f64) -> f64,
    L: Fn(f64) -> f64,
{
    let (llo, lhi) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..DEP_GRID)
        .map(|i| (llo + (lhi - llo) * i as f64 / (DEP_GRID - 1) as f64).exp())
        .collect();
    let scores: Vec<f64> = grid.iter().map(|&x| score(x)).collect();
    let mut changes = Vec::new();
    for i in 1..grid.len() {
        let (a, b) = (scores[i - 1], scores[i]);
        if a.is_finite() && b.is_finite() && a.signum() != b.signum() {
            changes.push(i);
        }
    }
    let sign_changes = changes.len();
    if sign_changes == 1 && scores[changes[0] - 1] > 0.0 {
        let i = changes[0];
        if let Some((x, it)) = brent_root(&score, grid[i - 1], grid[i], PARAM_TOL * grid[i] * 1e-3, MAX_ITER) {
            return DepFit {
                x,
                iterations: it,
                sign_changes,
                interior: true,
            };
        }
    }
    // Several roots or none: maximize the likelihood around the best grid point.
    let best = (0..grid.len())
        .max_by(|&a, &b| loglik(grid[a]).total_cmp(&loglik(grid[b])))
        .unwrap_or(0);
    let a = grid[best.saturating_sub(1)].ln();
    let b = grid[(best + 1).min(grid.len() - 1)].ln();
    let (lx, it) = golden_max(|u| loglik(u.exp()), a, b, 1e-12, MAX_ITER);
    let interior = best > 0 && best < grid.len() - 1;
    DepFit {
        x: lx.exp(),
        iterations: it,
        sign_changes,
        interior,
    }
}

fn score_tolerance(n: usize) -> f64 {
    SCORE_TOL * (n.max(1) as f64)
}

/// Two-step (inference functions for margins) estimator.
///
/// In pooled mode Step 2 solves for θ; in separate mode it solves for δ with
/// per-margin estimates frozen. Step 2 failures are flagged in the diagnostics.
pub fn two_step_ifm(ds: &TruncatedDataset, mode: MarginMode) -> Result<EstimateResult> {
    if ds.n_joint() == 0 {
        return Err(Error::NoJointJumps);
    }
    let [m1, m2] = marginal_mle(ds, mode)?;
    match mode {
        MarginMode::Pooled => {
            let j = JointLogs::new(ds);
            let (lc, a) = (m1.log_c, m1.alpha);
            let score = |th: f64| joint_like(&j, ds.epsilon, ds.t, lc, a, th).1[2];
            let like = |th: f64| joint_like(&j, ds.epsilon, ds.t, lc, a, th).0;
            let fit = dependence_argmax(score, like, DEP_RANGE);
            let s = score(fit.x);
            let tol = score_tolerance(ds.n_joint());
            let params = ModelParams::from_log_c_theta(lc, a, fit.x)?;
            Ok(EstimateResult {
                method: Method::TwoStep,
                params,
                diagnostics: Diagnostics {
                    score_norm: s.abs(),
                    score_tolerance: tol,
                    iterations: fit.iterations,
                    converged: fit.interior && s.abs() < tol,
                    log_likelihood: like(fit.x),
                    sign_changes: fit.sign_changes,
                },
                epsilon: ds.epsilon,
                t: ds.t,
            })
        }
        MarginMode::Separate => {
            let margins = [(m1.log_c, m1.alpha), (m2.log_c, m2.alpha)];
            step2_delta(ds, margins)
        }
    }
}

/// Step 2 in δ with frozen margins `[(log c₁, α₁), (log c₂, α₂)]`.
pub fn step2_delta(ds: &TruncatedDataset, margins: [(f64, f64); 2]) -> Result<EstimateResult> {
    if ds.n_joint() == 0 {
        return Err(Error::NoJointJumps);
    }
    let [(lc1, a1), (lc2, a2)] = margins;
    let le = ds.epsilon.ln();
    let (l1, l2) = (lc1 - a1 * le, lc2 - a2 * le);
    let j = JointLogs::new(ds);
    let n = j.len() as f64;
    let sx: f64 = j.lx.iter().sum();
    let sy: f64 = j.ly.iter().sum();
    let like_score = |delta: f64| -> (f64, f64) {
        let mut sum_s = 0.0;
        let mut sum_ds = 0.0;
        for (&x, &y) in j.lx.iter().zip(&j.ly) {
            let g1 = a1 * x - lc1;
            let g2 = a2 * y - lc2;
            let (h1, h2) = (delta * g1, delta * g2);
            let hi = h1.max(h2);
            let lse = hi + (-(h1 - h2).abs()).exp().ln_1p();
            let p = (h1 - lse).exp();
            sum_s += lse;
            sum_ds += p * g1 + (1.0 - p) * g2;
        }
        let lj = log_clayton(l1, l2, delta);
        let lam = lj.exp();
        let value = -lam * ds.t + n * ((a1 * a2 * (1.0 + delta)).ln() - delta * (lc1 + lc2))
            + (a1 * delta - 1.0) * sx
            + (a2 * delta - 1.0) * sy
            - (1.0 / delta + 2.0) * sum_s;
        let (m1, m2) = (-delta * l1, -delta * l2);
        let mh = m1.max(m2);
        let mlse = mh + (-(m1 - m2).abs()).exp().ln_1p();
        let q = (m1 - mlse).exp();
        let dlj = mlse / (delta * delta) + (q * l1 + (1.0 - q) * l2) / delta;
        let score = -lam * ds.t * dlj + n / (1.0 + delta) - n * (lc1 + lc2) + a1 * sx + a2 * sy
            + sum_s / (delta * delta)
            - (1.0 / delta + 2.0) * sum_ds;
        (value, score)
    };
    let fit = dependence_argmax(|d| like_score(d).1, |d| like_score(d).0, DEP_RANGE);
    let (value, s) = like_score(fit.x);
    let tol = score_tolerance(ds.n_joint());
    let params = ModelParams::new(lc1.exp(), lc2.exp(), a1, a2, fit.x)?;
    Ok(EstimateResult {
        method: Method::TwoStep,
        params,
        diagnostics: Diagnostics {
            score_norm: s.abs(),
            score_tolerance: tol,
            iterations: fit.iterations,
            converged: fit.interior && s.abs() < tol,
            log_likelihood: value,
            sign_changes: fit.sign_changes,
        },
        epsilon: ds.epsilon,
        t: ds.t,
    })
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(a: f64) -> f64 {
    (a / (1.0 - a)).ln()
}

/// Starting `(α, θ)` for the 3-D fits: the supplied point, else the two-step
/// estimate, else the marginal α with δ = 1.
fn start_point(ds: &TruncatedDataset, start: Option<&ModelParams>) -> Result<(f64, f64)> {
    if let Some(p) = start {
        let (_, a, th) = p.require_common()?;
        return Ok((a, th));
    }
    if let Ok(r) = two_step_ifm(ds, MarginMode::Pooled) {
        let (_, a, th) = r.params.require_common()?;
        if th > DEP_RANGE.0 && th < DEP_RANGE.1 {
            return Ok((a, th));
        }
    }
    let [m, _] = marginal_mle(ds, MarginMode::Pooled)?;
    let a = m.alpha.clamp(0.05, 0.95);
    Ok((a, a))
}

/// Runs the profiled 2-D Newton search in `(logit α, ln θ)`.
///
/// `eval(α, θ)` returns the profiled log-likelihood and its `(α, θ)` gradient;
/// `profile(α, θ)` returns `log c`.
fn fit_profiled<E, P>(
    method: Method,
    ds: &TruncatedDataset,
    n_used: usize,
    start: (f64, f64),
    eval: E,
    profile: P,
) -> Result<EstimateResult>
where
    E: Fn(f64, f64) -> (f64, [f64; 2]),
    P: Fn(f64, f64) -> f64,
{
    let tol = score_tolerance(n_used);
    let objective = |z: &[f64]| {
        let a = logistic(z[0]);
        let th = z[1].exp();
        if !(a > 0.0 && a < 1.0 && th.is_finite() && th > 0.0) {
            return (f64::NEG_INFINITY, vec![0.0, 0.0]);
        }
        let (v, g) = eval(a, th);
        (v, vec![g[0] * a * (1.0 - a), g[1] * th])
    };
    let done = |z: &[f64], g: &[f64]| {
        let a = logistic(z[0]);
        let th = z[1].exp();
        let ga = g[0] / (a * (1.0 - a));
        let gt = g[1] / th;
        ga.abs().max(gt.abs()) < tol
    };
    let z0 = [logit(start.0), start.1.ln()];
    let out = newton_maximize(
        objective,
        &z0,
        NewtonOptions {
            max_iter: MAX_ITER,
            step_tol: PARAM_TOL,
            fd_step: 1e-6,
        },
        done,
    );
    let a = logistic(out.z[0]);
    let th = out.z[1].exp();
    let (value, g) = eval(a, th);
    let score_norm = g[0].abs().max(g[1].abs());
    let log_c = profile(a, th);
    let params = ModelParams::from_log_c_theta(log_c, a, th)
        .map_err(|e| Error::Numerical(format!("{method} fit left the parameter space: {e}")))?;
    Ok(EstimateResult {
        method,
        params,
        diagnostics: Diagnostics {
            score_norm,
            score_tolerance: tol,
            iterations: out.iterations,
            converged: out.converged && score_norm < tol && value.is_finite(),
            log_likelihood: value,
            sign_changes: 0,
        },
        epsilon: ds.epsilon,
        t: ds.t,
    })
}

/// Maximum likelihood from the joint jumps only, in all of `η`.
pub fn joint_only_mle(ds: &TruncatedDataset, start: Option<&ModelParams>) -> Result<EstimateResult> {
    let n = ds.n_joint();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "joint-only MLE needs at least 3 joint jumps, got {n}"
        )));
    }
    let j = JointLogs::new(ds);
    let le = ds.epsilon.ln();
    let ln_rate = (n as f64 / ds.t).ln();
    // λ‖ = n‖/t
    let profile = move |a: f64, th: f64| ln_rate + a * le + a * LN_2 / th;
    let eval = |a: f64, th: f64| {
        let (v, g) = joint_like(&j, ds.epsilon, ds.t, profile(a, th), a, th);
        (v, [g[1], g[2]])
    };
    fit_profiled(Method::JointOnly, ds, n, start_point(ds, start)?, eval, profile)
}

/// `(ln g, ∂α ln g, ∂θ ln g)` for the single-jump factor
/// `g = 1 − (1 + e^(-θs))^(-(α/θ+1))`, `s = ln(x/ε) ≥ 0`.
///
/// Evaluated with `u = e^(-θs)` factored out so large `θs` stays finite.
pub(crate) fn single_factor(s: f64, alpha: f64, theta: f64) -> (f64, f64, f64) {
    let kp1 = alpha / theta + 1.0;
    let u = (-theta * s).exp();
    let lam = u.ln_1p();
    // Λ/u and σ/u, both tending to 1 as u → 0
    let lam_hat = if u < 1e-8 { 1.0 - 0.5 * u } else { lam / u };
    let sig_hat = 1.0 / (1.0 + u);
    let y = kp1 * lam;
    let em1_over_y = if y < 1e-8 { 1.0 + 0.5 * y } else { y.exp_m1() / y };
    let f = if y < 1e-8 { 1.0 - 0.5 * y } else { -(-y).exp_m1() / y };
    let ln_g = kp1.ln() + lam_hat.ln() - theta * s + f.ln();
    let denom = kp1 * lam_hat * em1_over_y;
    let d_alpha = lam_hat / theta / denom;
    let d_theta = -(alpha / (theta * theta) * lam_hat + kp1 * s * sig_hat) / denom;
    (ln_g, d_alpha, d_theta)
}

/// Sufficient quantities of the full likelihood.
struct FullData {
    joint: JointLogs,
    /// `ln(x/ε)` of all single jumps.
    single_s: Vec<f64>,
    sum_single_log: f64,
    n_events: usize,
}

impl FullData {
    fn new(ds: &TruncatedDataset) -> Self {
        let le = ds.epsilon.ln();
        let singles: Vec<f64> = ds.singles1.iter().chain(&ds.singles2).map(|z| z.ln()).collect();
        FullData {
            joint: JointLogs::new(ds),
            sum_single_log: singles.iter().sum(),
            single_s: singles.iter().map(|l| l - le).collect(),
            n_events: ds.n_events(),
        }
    }
}

/// `ln(2 − 2^(-α/θ))` and its α, θ derivatives: `ρ = c ε^(-α) (2 − 2^(-α/θ))`.
fn ln_rho_factor(alpha: f64, theta: f64) -> (f64, f64, f64) {
    let p = (-alpha / theta * LN_2).exp();
    let f = 2.0 - p;
    let da = p * LN_2 / theta / f;
    let dt = -p * LN_2 * alpha / (theta * theta) / f;
    (f.ln(), da, dt)
}

fn full_like(fd: &FullData, eps: f64, t: f64, log_c: f64, alpha: f64, theta: f64) -> (f64, [f64; 3]) {
    let le = eps.ln();
    let j = &fd.joint;
    let nj = j.len() as f64;
    let nn = fd.n_events as f64;
    let (sl, sd, _) = j.power_sums(theta);
    let (lf, lf_a, lf_t) = ln_rho_factor(alpha, theta);
    let rho = (log_c - alpha * le + lf).exp();
    let mut sg = 0.0;
    let mut sg_a = 0.0;
    let mut sg_t = 0.0;
    for &s in &fd.single_s {
        let (g, ga, gt) = single_factor(s, alpha, theta);
        sg += g;
        sg_a += ga;
        sg_t += gt;
    }
    let value = -rho * t + nj * (alpha + theta).ln() + nn * (alpha.ln() + log_c)
        + (theta - 1.0) * j.sum_l
        - (2.0 + alpha / theta) * sl
        - (alpha + 1.0) * fd.sum_single_log
        + sg;
    let g_c = nn - rho * t;
    let g_a = -rho * t * (-le + lf_a) + nj / (alpha + theta) + nn / alpha - sl / theta - fd.sum_single_log + sg_a;
    let g_t = -rho * t * lf_t + nj / (alpha + theta) + j.sum_l + alpha / (theta * theta) * sl
        - (2.0 + alpha / theta) * sd
        + sg_t;
    (value, [g_c, g_a, g_t])
}

/// Log-likelihood of all observed jumps (joint and single) in `(log c, α, θ)`.
pub fn full_log_likelihood(ds: &TruncatedDataset, log_c: f64, alpha: f64, theta: f64) -> f64 {
    full_like(&FullData::new(ds), ds.epsilon, ds.t, log_c, alpha, theta).0
}

/// Gradient of [`full_log_likelihood`].
pub fn full_score(ds: &TruncatedDataset, log_c: f64, alpha: f64, theta: f64) -> [f64; 3] {
    full_like(&FullData::new(ds), ds.epsilon, ds.t, log_c, alpha, theta).1
}

/// Maximum likelihood from joint and single jumps.
pub fn full_mle(ds: &TruncatedDataset, start: Option<&ModelParams>) -> Result<EstimateResult> {
    let n = ds.n_events();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "full MLE needs at least 3 observed jumps, got {n}"
        )));
    }
    let fd = FullData::new(ds);
    let le = ds.epsilon.ln();
    let ln_rate = (n as f64 / ds.t).ln();
    // ρ = N/t
    let profile = move |a: f64, th: f64| ln_rate + a * le - ln_rho_factor(a, th).0;
    let eval = |a: f64, th: f64| {
        let (v, g) = full_like(&fd, ds.epsilon, ds.t, profile(a, th), a, th);
        (v, [g[1], g[2]])
    };
    fit_profiled(Method::Full, ds, n, start_point(ds, start)?, eval, profile)
}

/// Dispatches on `method`; the 3-D fits start from the two-step estimate.
pub fn estimate(ds: &TruncatedDataset, method: Method) -> Result<EstimateResult> {
    match method {
        Method::TwoStep => two_step_ifm(ds, MarginMode::Pooled),
        Method::JointOnly => joint_only_mle(ds, None),
        Method::Full => full_mle(ds, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TruncationConfig;
    use crate::observation::truncate;
    use crate::simulate::{simulate_path, SimulationConfig};

    fn truth() -> ModelParams {
        ModelParams::common(1.0, 0.5, 2.0).unwrap()
    }

    fn dataset(seed: u64, eps: f64) -> TruncatedDataset {
        let cfg = SimulationConfig::new(1000.0, 1.0, seed).unwrap().symmetrized(true);
        let s = simulate_path(&truth(), &cfg).unwrap();
        truncate(&s, eps, 1.0).unwrap()
    }

    fn fd_grad<F: Fn(f64, f64, f64) -> f64>(f: F, p: [f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for i in 0..3 {
            let h = 1e-6 * p[i].abs().max(1.0);
            let mut up = p;
            let mut dn = p;
            up[i] += h;
            dn[i] -= h;
            g[i] = (f(up[0], up[1], up[2]) - f(dn[0], dn[1], dn[2])) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: [f64; 3], b: [f64; 3], rel: f64) {
        for i in 0..3 {
            let scale = a[i].abs().max(b[i].abs()).max(1.0);
            assert!((a[i] - b[i]).abs() < rel * scale, "component {i}: {} vs {}", a[i], b[i]);
        }
    }

    #[test]
    fn marginal_mle_solves_its_score() {
        let ds = dataset(1, 1e-3);
        let [m, m2] = marginal_mle(&ds, MarginMode::Pooled).unwrap();
        assert_eq!(m, m2);
        let s = marginal_score(&ds, m.log_c, m.alpha);
        assert!(s[0].abs() < 1e-8 && s[1].abs() < 1e-8, "{s:?}");
        assert!((m.lambda - ds.n() as f64 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_mle_errors() {
        let ds = TruncatedDataset::new(1e-3, 1.0, vec![], vec![1e-3, 1e-3], vec![]).unwrap();
        assert!(matches!(marginal_mle(&ds, MarginMode::Pooled), Err(Error::Numerical(_))));
        let ds = TruncatedDataset::new(1e-3, 1.0, vec![], vec![2e-3], vec![]).unwrap();
        assert!(matches!(marginal_mle(&ds, MarginMode::Pooled), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn joint_score_matches_finite_differences() {
        let ds = dataset(2, 1e-3);
        let p = [0.1, 0.45, 1.2];
        let g = joint_score(&ds, p[0], p[1], p[2]);
        let fd = fd_grad(|a, b, c| joint_log_likelihood(&ds, a, b, c), p);
        assert_close(g, fd, 1e-6);
    }

    #[test]
    fn full_score_matches_finite_differences() {
        let ds = dataset(3, 1e-3);
        for p in [[0.1, 0.45, 1.2], [-0.2, 0.7, 4.0], [0.0, 0.3, 0.2]] {
            let g = full_score(&ds, p[0], p[1], p[2]);
            let fd = fd_grad(|a, b, c| full_log_likelihood(&ds, a, b, c), p);
            assert_close(g, fd, 1e-6);
        }
    }

    #[test]
    fn single_factor_stable_for_large_arguments() {
        let (g, ga, gt) = single_factor(50.0, 0.5, 30.0);
        assert!(g.is_finite() && ga.is_finite() && gt.is_finite());
        // g ≈ (κ+1) e^(-θs) for large θs
        assert!((g - ((0.5f64 / 30.0 + 1.0).ln() - 1500.0)).abs() < 1e-9);
        let direct = |s: f64, a: f64, th: f64| {
            (1.0 - (1.0 + (-th * s).exp()).powf(-(a / th + 1.0))).ln()
        };
        for &(s, a, th) in &[(0.0, 0.5, 1.0), (0.3, 0.2, 2.0), (5.0, 0.7, 0.5)] {
            let (g, ga, gt) = single_factor(s, a, th);
            assert!((g - direct(s, a, th)).abs() < 1e-12);
            let h = 1e-6;
            let fa = (direct(s, a + h, th) - direct(s, a - h, th)) / (2.0 * h);
            let ft = (direct(s, a, th + h) - direct(s, a, th - h)) / (2.0 * h);
            assert!((ga - fa).abs() < 1e-6 && (gt - ft).abs() < 1e-6);
        }
    }

    #[test]
    fn single_jump_density_integrates_to_single_intensity() {
        use crate::model::{intensities, single_jump_density, Component};
        use crate::quadrature::{uniform_edges, GaussLegendre};
        let p = truth();
        let eps = 1e-3;
        let cfg = TruncationConfig::new(eps, 1.0).unwrap();
        let rule = GaussLegendre::new(20);
        // in s = ln(x/ε) the integrand decays like e^(-αs)
        let v = rule.composite(
            |s| {
                let x = eps * s.exp();
                x * single_jump_density(Component::First, x, &p, &cfg).unwrap()
            },
            &uniform_edges(0.0, 120.0, 0.5),
        );
        let want = intensities(&p, &cfg).lambda1_single;
        assert!(((v - want) / want).abs() < 1e-6, "{v} vs {want}");
    }

    #[test]
    fn two_step_step1_is_independent_of_step2() {
        let ds = dataset(4, 1e-3);
        let r = two_step_ifm(&ds, MarginMode::Pooled).unwrap();
        let [m, _] = marginal_mle(&ds, MarginMode::Pooled).unwrap();
        let [lc, a, _] = r.eta().unwrap();
        assert_eq!((lc, a), (m.log_c, m.alpha));
        assert!(r.diagnostics.converged, "{:?}", r.diagnostics);
        assert_eq!(r.diagnostics.sign_changes, 1);
    }

    #[test]
    fn theta_and_delta_parameterizations_agree() {
        let ds = dataset(5, 1e-3);
        let r = two_step_ifm(&ds, MarginMode::Pooled).unwrap();
        let [m, _] = marginal_mle(&ds, MarginMode::Pooled).unwrap();
        let d = step2_delta(&ds, [(m.log_c, m.alpha); 2]).unwrap();
        assert!((r.delta() - d.delta()).abs() < 1e-7, "{} vs {}", r.delta(), d.delta());
        assert!(d.diagnostics.converged);
    }

    #[test]
    fn separate_margins_run() {
        let ds = dataset(6, 1e-3);
        let r = two_step_ifm(&ds, MarginMode::Separate).unwrap();
        assert!(r.diagnostics.converged);
        assert!((r.delta() - 2.0).abs() < 1.5);
        assert!(!r.params.is_common());
    }

    #[test]
    fn no_joint_jumps_is_an_error() {
        let ds = TruncatedDataset::new(1e-3, 1.0, vec![], vec![2e-3, 3e-3], vec![4e-3]).unwrap();
        assert!(matches!(two_step_ifm(&ds, MarginMode::Pooled), Err(Error::NoJointJumps)));
        assert!(joint_only_mle(&ds, None).is_err());
    }

    #[test]
    fn three_dimensional_fits_converge() {
        let ds = dataset(7, 1e-3);
        for r in [joint_only_mle(&ds, None).unwrap(), full_mle(&ds, None).unwrap()] {
            assert!(r.diagnostics.converged, "{:?}", r);
            let [lc, a, th] = r.eta().unwrap();
            let g = match r.method {
                Method::JointOnly => joint_score(&ds, lc, a, th),
                _ => full_score(&ds, lc, a, th),
            };
            let n = match r.method {
                Method::JointOnly => ds.n_joint(),
                _ => ds.n_events(),
            } as f64;
            assert!(g.iter().all(|v| v.abs() < 1e-6 * n), "{g:?}");
        }
    }

    #[test]
    fn identical_pairs_do_not_crash() {
        let ds = TruncatedDataset::new(1e-3, 1.0, vec![(2e-3, 2e-3); 10], vec![5e-3], vec![]).unwrap();
        for m in Method::ALL {
            let _ = estimate(&ds, m);
        }
    }

    #[test]
    fn result_json_reports_theta_and_delta() {
        let ds = dataset(8, 1e-3);
        let r = two_step_ifm(&ds, MarginMode::Pooled).unwrap();
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        assert_eq!(v["method"], "two-step");
        let (th, de, a) = (v["theta"].as_f64().unwrap(), v["delta"].as_f64().unwrap(), v["alpha"].as_f64().unwrap());
        assert!((th / a - de).abs() < 1e-12);
        assert_eq!(v["epsilon"], 1e-3);
        assert!(v["diagnostics"]["converged"].as_bool().unwrap());
    }
}
