//! Closed-form mathematics of the bivariate α-stable Clayton subordinator.
//!
//! Marginal tail integrals are `Π̄ₖ(x) = cₖ x^(-αₖ)` and the jump dependence is a
//! Clayton Lévy copula `C(u, v) = (u^(-δ) + v^(-δ))^(-1/δ)`. Observing only jumps
//! of size at least ε componentwise turns the process into a compound Poisson
//! process with joint jumps (both coordinates ≥ ε) and single jumps (one
//! coordinate ≥ ε). Everything here is a pure function of its inputs.
//!
//! Intensities are evaluated in log space: `ln λₖ = ln cₖ − αₖ ln ε`, so tiny
//! thresholds do not overflow `ε^(-α)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Which coordinate of the bivariate process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    First,
    Second,
}

/// Parameters of the bivariate stable Clayton subordinator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    c1: f64,
    c2: f64,
    alpha1: f64,
    alpha2: f64,
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    c1: f64,
    c2: f64,
    alpha1: f64,
    alpha2: f64,
    delta: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = crate::Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.c1, raw.c2, raw.alpha1, raw.alpha2, raw.delta)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            c1: p.c1,
            c2: p.c2,
            alpha1: p.alpha1,
            alpha2: p.alpha2,
            delta: p.delta,
        }
    }
}

fn check_scale(name: &str, c: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(invalid(format!("{name} must be positive and finite, got {c}")));
    }
    Ok(())
}

fn check_index(name: &str, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("{name} must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

impl ModelParams {
    pub fn new(c1: f64, c2: f64, alpha1: f64, alpha2: f64, delta: f64) -> Result<Self> {
        check_scale("c1", c1)?;
        check_scale("c2", c2)?;
        check_index("alpha1", alpha1)?;
        check_index("alpha2", alpha2)?;
        if !(delta.is_finite() && delta > 0.0) {
            return Err(invalid(format!("delta must be positive and finite, got {delta}")));
        }
        Ok(ModelParams {
            c1,
            c2,
            alpha1,
            alpha2,
            delta,
        })
    }

    /// Common marginal parameters `c₁ = c₂ = c`, `α₁ = α₂ = α`.
    pub fn common(c: f64, alpha: f64, delta: f64) -> Result<Self> {
        Self::new(c, c, alpha, alpha, delta)
    }

    /// Common-margin model given by `(log c, α, θ)` with `θ = αδ`.
    pub fn from_log_c_theta(log_c: f64, alpha: f64, theta: f64) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(invalid(format!("theta must be positive and finite, got {theta}")));
        }
        check_index("alpha", alpha)?;
        Self::common(log_c.exp(), alpha, theta / alpha)
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn scale(&self, k: Component) -> f64 {
        match k {
            Component::First => self.c1,
            Component::Second => self.c2,
        }
    }

    pub fn index(&self, k: Component) -> f64 {
        match k {
            Component::First => self.alpha1,
            Component::Second => self.alpha2,
        }
    }

    /// True when both margins share `(c, α)`.
    pub fn is_common(&self) -> bool {
        self.c1 == self.c2 && self.alpha1 == self.alpha2
    }

    /// `θ = αδ`; only defined when the stable indices coincide.
    pub fn theta(&self) -> Result<f64> {
        if self.alpha1 != self.alpha2 {
            return Err(invalid("theta = alpha*delta requires alpha1 == alpha2"));
        }
        Ok(self.alpha1 * self.delta)
    }

    pub(crate) fn require_common(&self) -> Result<(f64, f64, f64)> {
        if !self.is_common() {
            return Err(invalid("operation requires common marginal parameters"));
        }
        Ok((self.c1.ln(), self.alpha1, self.alpha1 * self.delta))
    }
}

/// Observation threshold ε and horizon t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub epsilon: f64,
    pub t: f64,
}

impl TruncationConfig {
    pub fn new(epsilon: f64, t: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(t.is_finite() && t > 0.0) {
            return Err(invalid(format!("t must be positive, got {t}")));
        }
        Ok(TruncationConfig { epsilon, t })
    }
}

/// Jump intensities of the compound Poisson process observed above ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensitySet {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_joint: f64,
    pub lambda1_single: f64,
    pub lambda2_single: f64,
    pub rho: f64,
}

/// `ln Π̄ₖ(x)`.
pub(crate) fn log_marginal_tail(k: Component, x: f64, params: &ModelParams) -> f64 {
    params.scale(k).ln() - params.index(k) * x.ln()
}

/// Marginal tail integral `Π̄ₖ(x) = cₖ x^(-αₖ)`.
pub fn marginal_tail(k: Component, x: f64, params: &ModelParams) -> Result<f64> {
    if !(x > 0.0) {
        return Err(domain(format!("marginal tail needs x > 0, got {x}")));
    }
    Ok(log_marginal_tail(k, x, params).exp())
}

/// Inverse of the marginal tail integral: `(level/cₖ)^(-1/αₖ)`.
pub fn marginal_tail_inverse(k: Component, level: f64, params: &ModelParams) -> Result<f64> {
    if !(level > 0.0) {
        return Err(domain(format!("tail inverse needs a positive level, got {level}")));
    }
    Ok(tail_inverse_unchecked(k, level, params))
}

/// `Π̄ₖ^←(level)`; `level = ∞` maps to 0 and `level = 0` to ∞.
pub(crate) fn tail_inverse_unchecked(k: Component, level: f64, params: &ModelParams) -> f64 {
    ((params.scale(k).ln() - level.ln()) / params.index(k)).exp()
}

/// Clayton Lévy copula with the margin identities `C(u, ∞) = u`, `C(∞, v) = v`
/// and groundedness `C(u, 0) = C(0, v) = 0` applied exactly.
pub fn clayton(u: f64, v: f64, delta: f64) -> f64 {
    if u.is_nan() || v.is_nan() || delta.is_nan() {
        return f64::NAN;
    }
    if u <= 0.0 || v <= 0.0 {
        return 0.0;
    }
    if u.is_infinite() {
        return v;
    }
    if v.is_infinite() {
        return u;
    }
    let (lo, hi) = if u < v { (u, v) } else { (v, u) };
    // (u^-δ + v^-δ)^(-1/δ) = lo (1 + (lo/hi)^δ)^(-1/δ)
    lo * (-(lo / hi).powf(delta).ln_1p() / delta).exp()
}

/// `ln C(e^lu, e^lv)`, stable for arguments spanning many orders of magnitude.
pub(crate) fn log_clayton(lu: f64, lv: f64, delta: f64) -> f64 {
    let (lo, hi) = if lu < lv { (lu, lv) } else { (lv, lu) };
    lo - (delta * (lo - hi)).exp().ln_1p() / delta
}

fn check_positive_pair(x: f64, y: f64) -> Result<()> {
    if !(x > 0.0 && y > 0.0) {
        return Err(domain(format!("coordinates must be positive, got ({x}, {y})")));
    }
    Ok(())
}

/// Bivariate tail integral `Π̄(x, y) = C(Π̄₁(x), Π̄₂(y))`.
pub fn joint_tail(x: f64, y: f64, params: &ModelParams) -> Result<f64> {
    check_positive_pair(x, y)?;
    if x.is_infinite() || y.is_infinite() {
        return Ok(0.0);
    }
    let lu = log_marginal_tail(Component::First, x, params);
    let lv = log_marginal_tail(Component::Second, y, params);
    Ok(log_clayton(lu, lv, params.delta).exp())
}

/// `(ln λ₁, ln λ₂, ln λ‖)` at threshold ε.
pub(crate) fn log_intensities(params: &ModelParams, epsilon: f64) -> (f64, f64, f64) {
    let l1 = log_marginal_tail(Component::First, epsilon, params);
    let l2 = log_marginal_tail(Component::Second, epsilon, params);
    (l1, l2, log_clayton(l1, l2, params.delta))
}

/// Intensities of marginal, joint and single jumps above ε.
pub fn intensities(params: &ModelParams, config: &TruncationConfig) -> IntensitySet {
    let (l1, l2, lj) = log_intensities(params, config.epsilon);
    let lambda1 = l1.exp();
    let lambda2 = l2.exp();
    let lambda_joint = lj.exp();
    let lambda1_single = lambda1 - lambda_joint;
    let lambda2_single = lambda2 - lambda_joint;
    IntensitySet {
        lambda1,
        lambda2,
        lambda_joint,
        lambda1_single,
        lambda2_single,
        rho: lambda_joint + lambda1_single + lambda2_single,
    }
}

/// Lévy copula of the truncated process,
/// `(u^(-δ) + v^(-δ) − λ₁^(-δ) − λ₂^(-δ))^(-1/δ)` for `0 < u, v ≤ λ‖`.
pub fn truncated_copula(
    u: f64,
    v: f64,
    params: &ModelParams,
    config: &TruncationConfig,
) -> Result<f64> {
    let (l1, l2, lj) = log_intensities(params, config.epsilon);
    let upper = lj.exp();
    let tol = upper * 1e-12;
    if !(u > 0.0 && v > 0.0 && u <= upper + tol && v <= upper + tol) {
        return Err(domain(format!(
            "truncated copula arguments must lie in (0, {upper}], got ({u}, {v})"
        )));
    }
    let d = params.delta;
    let bracket = u.powf(-d) + v.powf(-d) - (-d * l1).exp() - (-d * l2).exp();
    Ok(bracket.powf(-1.0 / d))
}

/// Density of a joint jump on `[ε, ∞)²` (the Lévy density divided by λ‖).
pub fn joint_jump_density(
    x: f64,
    y: f64,
    params: &ModelParams,
    config: &TruncationConfig,
) -> Result<f64> {
    let eps = config.epsilon;
    if !(x >= eps && y >= eps) {
        return Err(domain(format!("joint density needs x, y >= {eps}, got ({x}, {y})")));
    }
    let (_, _, lj) = log_intensities(params, eps);
    Ok((log_joint_levy_density(x.ln(), y.ln(), params) - lj).exp())
}

/// `ln ν‖(x, y)`, the mixed second derivative of the bivariate tail integral.
pub(crate) fn log_joint_levy_density(lx: f64, ly: f64, params: &ModelParams) -> f64 {
    let d = params.delta;
    let (a1, a2) = (params.alpha1, params.alpha2);
    let (lc1, lc2) = (params.c1.ln(), params.c2.ln());
    let g1 = d * (a1 * lx - lc1);
    let g2 = d * (a2 * ly - lc2);
    let lse = g1.max(g2) + (-(g1 - g2).abs()).exp().ln_1p();
    (a1 * a2 * (1.0 + d)).ln() - d * (lc1 + lc2) + (a1 * d - 1.0) * lx + (a2 * d - 1.0) * ly
        - (1.0 / d + 2.0) * lse
}

/// Lévy density of the joint jumps, `ν‖(x, y)`.
pub fn joint_levy_density(x: f64, y: f64, params: &ModelParams) -> Result<f64> {
    check_positive_pair(x, y)?;
    Ok(log_joint_levy_density(x.ln(), y.ln(), params).exp())
}

/// Survival function of a joint jump, `Π̄(x, y)/λ‖` for `x, y ≥ ε`.
pub fn joint_survival(
    x: f64,
    y: f64,
    params: &ModelParams,
    config: &TruncationConfig,
) -> Result<f64> {
    let eps = config.epsilon;
    if !(x >= eps && y >= eps) {
        return Err(domain(format!("joint survival needs x, y >= {eps}, got ({x}, {y})")));
    }
    let (_, _, lj) = log_intensities(params, eps);
    let lu = log_marginal_tail(Component::First, x, params);
    let lv = log_marginal_tail(Component::Second, y, params);
    Ok((log_clayton(lu, lv, params.delta) - lj).exp())
}

/// Conditional law of the second copula argument given the first:
/// `F(v | u) = ∂C/∂u = (1 + (u/v)^δ)^(-1-1/δ)`.
pub fn clayton_conditional_cdf(v: f64, u: f64, delta: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    if v.is_infinite() {
        return 1.0;
    }
    (-(1.0 + 1.0 / delta) * (delta * (u / v).ln()).exp().ln_1p()).exp()
}

/// Tail integral of single jumps in component k,
/// `Π̄ₖ(x) − C(Π̄ₖ(x), λ_other)` for `x ≥ ε`.
pub fn single_jump_tail(
    k: Component,
    x: f64,
    params: &ModelParams,
    config: &TruncationConfig,
) -> Result<f64> {
    let eps = config.epsilon;
    if !(x >= eps) {
        return Err(domain(format!("single-jump tail needs x >= {eps}, got {x}")));
    }
    let (l1, l2, _) = log_intensities(params, eps);
    let other = match k {
        Component::First => l2,
        Component::Second => l1,
    };
    let lu = log_marginal_tail(k, x, params);
    // u (1 − (1 + (u/λ)^δ)^(-1/δ))
    let r = (params.delta * (lu - other)).exp().ln_1p();
    Ok(lu.exp() * -(-r / params.delta).exp_m1())
}

/// Lévy density of single jumps in component k,
/// `νₖ(x) (1 − (1 + (Π̄ₖ(x)/λ_other)^δ)^(-1/δ-1))`.
pub fn single_jump_density(
    k: Component,
    x: f64,
    params: &ModelParams,
    config: &TruncationConfig,
) -> Result<f64> {
    let eps = config.epsilon;
    if !(x >= eps) {
        return Err(domain(format!("single-jump density needs x >= {eps}, got {x}")));
    }
    let (l1, l2, _) = log_intensities(params, eps);
    let other = match k {
        Component::First => l2,
        Component::Second => l1,
    };
    let a = params.index(k);
    let lu = log_marginal_tail(k, x, params);
    let levy = (a.ln() + lu - x.ln()).exp();
    let r = (params.delta * (lu - other)).exp().ln_1p();
    Ok(levy * -(-(1.0 + 1.0 / params.delta) * r).exp_m1())
}

/// First and selected second partial derivatives of λ‖ in the coordinates
/// `(log c, α, θ)` of the common-margin model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaJointDerivs {
    pub lambda_joint: f64,
    pub d_log_c: f64,
    pub d_alpha: f64,
    pub d_theta: f64,
    pub d2_theta_log_c: f64,
    pub d2_theta_alpha: f64,
    pub d2_theta2: f64,
}

/// Derivatives of `λ‖ = c ε^(-α) 2^(-α/θ)`.
pub fn lambda_joint_derivs(
    params: &ModelParams,
    config: &TruncationConfig,
) -> Result<LambdaJointDerivs> {
    let (log_c, alpha, theta) = params.require_common()?;
    Ok(lambda_joint_derivs_at(log_c, alpha, theta, config.epsilon))
}

pub(crate) fn lambda_joint_derivs_at(
    log_c: f64,
    alpha: f64,
    theta: f64,
    epsilon: f64,
) -> LambdaJointDerivs {
    let ln2 = std::f64::consts::LN_2;
    let le = epsilon.ln();
    let lj = (log_c - alpha * le - alpha * ln2 / theta).exp();
    let k = alpha * ln2 / (theta * theta);
    LambdaJointDerivs {
        lambda_joint: lj,
        d_log_c: lj,
        d_alpha: -lj * (le + ln2 / theta),
        d_theta: lj * k,
        d2_theta_log_c: lj * k,
        d2_theta_alpha: -lj * ln2 / (theta * theta) * (alpha * le + alpha * ln2 / theta - 1.0),
        d2_theta2: lj * k * (k - 2.0 / theta),
    }
}

/// `log(x^θ + y^θ)` with its first two θ-derivatives, from `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSumLog {
    pub value: f64,
    pub d_theta: f64,
    pub d2_theta: f64,
}

pub fn power_sum_log(lx: f64, ly: f64, theta: f64) -> PowerSumLog {
    let (hi, lo) = if lx >= ly { (lx, ly) } else { (ly, lx) };
    let r = (theta * (lo - hi)).exp();
    // weight of the larger coordinate in (x^θ log x + y^θ log y)/(x^θ + y^θ)
    let w_hi = 1.0 / (1.0 + r);
    let w_lo = r / (1.0 + r);
    let diff = hi - lo;
    PowerSumLog {
        value: theta * hi + r.ln_1p(),
        d_theta: w_hi * hi + w_lo * lo,
        d2_theta: w_hi * w_lo * diff * diff,
    }
}

/// `T(x, y)` computed from `(ln x, ln y)`.
pub(crate) fn t_value(lx: f64, ly: f64, alpha: f64, theta: f64) -> f64 {
    let s = power_sum_log(lx, ly, theta);
    lx + ly + alpha / (theta * theta) * s.value - (2.0 + alpha / theta) * s.d_theta
}

/// The statistic `T(x, y) = log x + log y + (α/θ²) log(x^θ + y^θ) − (2 + α/θ) ∂θ log(x^θ + y^θ)`,
/// whose sum over joint jumps drives the θ-score. Invariant under `(x, y) ↦ (x/s, y/s)`.
pub fn t_statistic(x: f64, y: f64, params: &ModelParams) -> Result<f64> {
    check_positive_pair(x, y)?;
    let (_, alpha, theta) = params.require_common()?;
    Ok(t_value(x.ln(), y.ln(), alpha, theta))
}

/// Closed-form mean of `T` under the joint-jump law, `α log 2/θ² − 1/(α + θ)`.
pub fn t_mean(alpha: f64, theta: f64) -> f64 {
    alpha * std::f64::consts::LN_2 / (theta * theta) - 1.0 / (alpha + theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_params() -> ModelParams {
        ModelParams::common(1.0, 0.5, 2.0).unwrap()
    }

    fn cfg(eps: f64) -> TruncationConfig {
        TruncationConfig::new(eps, 1.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(ModelParams::new(0.0, 1.0, 0.5, 0.5, 2.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 0.5, 2.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0.5, 0.0, 2.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0.5, 0.5, -1.0).is_err());
        let p = ModelParams::new(1.0, 2.0, 0.4, 0.6, 2.0).unwrap();
        assert!(p.theta().is_err());
        assert_eq!(base_params().theta().unwrap(), 1.0);
    }

    #[test]
    fn marginal_tail_values() {
        let p = base_params();
        let v = marginal_tail(Component::First, 0.001, &p).unwrap();
        assert!((v - 31.622776601683793).abs() < 1e-10);
        assert_eq!(marginal_tail(Component::First, 1.0, &p).unwrap(), 1.0);
        let v = marginal_tail(Component::First, 1e-6, &p).unwrap();
        assert!(rel(v, 1000.0) < 1e-12);
        assert!(marginal_tail(Component::First, 0.0, &p).is_err());
        assert!(marginal_tail(Component::First, -1.0, &p).is_err());
    }

    #[test]
    fn marginal_tail_matches_integrated_density() {
        // Π̄(x) = ∫_x^∞ cα s^(-α-1) ds, integrated in u = ln s on a long trapezoid grid
        let p = base_params();
        let x: f64 = 0.001;
        let (a, b, n) = (x.ln(), x.ln() + 80.0, 400_000);
        let h = (b - a) / n as f64;
        let f = |u: f64| 0.5 * (-0.5 * u).exp();
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + i as f64 * h);
        }
        assert!(rel(s * h, marginal_tail(Component::First, x, &p).unwrap()) < 1e-6);
    }

    #[test]
    fn tail_inverse_values() {
        let p = base_params();
        let x = marginal_tail_inverse(Component::First, 1000.0, &p).unwrap();
        assert!(rel(x, 1e-6) < 1e-12);
        assert!(rel(marginal_tail_inverse(Component::First, 1.0, &p).unwrap(), 1.0) < 1e-15);
        assert!(marginal_tail_inverse(Component::First, 0.0, &p).is_err());
    }

    #[test]
    fn tail_inverse_agrees_with_bisection() {
        let p = base_params();
        let level = 22.36;
        let (mut lo, mut hi) = (1e-12_f64, 1e3_f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if marginal_tail(Component::Second, mid, &p).unwrap() > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = marginal_tail_inverse(Component::Second, level, &p).unwrap();
        assert!(rel(x, lo) < 1e-10);
        assert!((x - 0.002).abs() < 1e-5);
    }

    #[test]
    fn clayton_boundaries() {
        assert_eq!(clayton(1.0, f64::INFINITY, 2.0), 1.0);
        assert_eq!(clayton(f64::INFINITY, 3.0, 2.0), 3.0);
        assert_eq!(clayton(1.0, 0.0, 2.0), 0.0);
        assert_eq!(clayton(0.0, 1.0, 2.0), 0.0);
        assert!((clayton(1.0, 1.0, 2.0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(clayton(f64::NAN, 1.0, 2.0).is_nan());
        let direct = (2.0f64.powf(-0.7) + 5.0f64.powf(-0.7)).powf(-1.0 / 0.7);
        assert!(rel(clayton(2.0, 5.0, 0.7), direct) < 1e-14);
    }

    #[test]
    fn joint_tail_values() {
        let p = base_params();
        let v = joint_tail(0.001, 0.001, &p).unwrap();
        assert!(rel(v, 2f64.powf(-0.5) * 1000f64.sqrt()) < 1e-12);
        assert!((v - 22.3607).abs() < 1e-4);
        assert!((joint_tail(1.0, 1.0, &p).unwrap() - 0.5f64.sqrt()).abs() < 1e-14);
        assert_eq!(joint_tail(f64::INFINITY, 1.0, &p).unwrap(), 0.0);
        assert!(joint_tail(1e300, 1.0, &p).unwrap() < 1e-100);
        assert!(joint_tail(0.0, 1.0, &p).is_err());
    }

    #[test]
    fn intensities_base_point() {
        let s = intensities(&base_params(), &cfg(0.001));
        assert!((s.lambda1 - 31.6228).abs() < 1e-4);
        assert!((s.lambda2 - 31.6228).abs() < 1e-4);
        assert!((s.lambda_joint - 22.3607).abs() < 1e-4);
        assert!((s.lambda1_single - 9.2621).abs() < 1e-4);
        assert!((s.lambda2_single - 9.2621).abs() < 1e-4);
        assert!((s.rho - 40.8849).abs() < 1e-4);
        assert_eq!(s.lambda1, s.lambda_joint + s.lambda1_single);
    }

    #[test]
    fn complete_dependence_limit() {
        let p = ModelParams::common(1.0, 0.5, 1e6).unwrap();
        let s = intensities(&p, &cfg(0.001));
        assert!((s.lambda_joint / s.lambda1 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn common_case_closed_forms() {
        let p = ModelParams::common(2.5, 0.3, 1.7).unwrap();
        let eps: f64 = 1e-4;
        let s = intensities(&p, &cfg(eps));
        let base = 2.5 * eps.powf(-0.3);
        let k = 1.0 / 1.7;
        assert!(rel(s.lambda_joint, base * 2f64.powf(-k)) < 1e-12);
        assert!(rel(s.rho, base * (2.0 - 2f64.powf(-k))) < 1e-12);
    }

    #[test]
    fn truncated_copula_values() {
        let p = base_params();
        let c = cfg(0.001);
        let lj = intensities(&p, &c).lambda_joint;
        let v = truncated_copula(lj, lj, &p, &c).unwrap();
        assert!(rel(v, lj) < 1e-10);
        let c9 = cfg(1e-9);
        let v = truncated_copula(1.0, 1.0, &p, &c9).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-4);
        assert!(truncated_copula(1e-12, 1.0, &p, &c).unwrap() < 1e-11);
        assert!(truncated_copula(0.0, 1.0, &p, &c).is_err());
        assert!(truncated_copula(lj * 1.01, 1.0, &p, &c).is_err());
    }

    #[test]
    fn truncated_copula_approaches_clayton_monotonically() {
        let p = base_params();
        let target = clayton(1.0, 2.0, 2.0);
        let mut last = f64::INFINITY;
        for e in [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8] {
            let v = truncated_copula(1.0, 2.0, &p, &cfg(e)).unwrap();
            let gap = (v - target).abs();
            assert!(gap < last);
            last = gap;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn joint_density_symmetry_and_survival() {
        let p = base_params();
        let c = cfg(0.001);
        let a = joint_jump_density(0.002, 0.05, &p, &c).unwrap();
        let b = joint_jump_density(0.05, 0.002, &p, &c).unwrap();
        assert!(rel(a, b) < 1e-13);
        assert_eq!(joint_survival(0.001, 0.001, &p, &c).unwrap(), 1.0);
        assert!(joint_jump_density(0.0005, 0.01, &p, &c).is_err());
        // F̄(2ε, 2ε) = 2^(-α) in the common case
        let s = joint_survival(0.002, 0.002, &p, &c).unwrap();
        assert!(rel(s, 2f64.powf(-0.5)) < 1e-12);
    }

    #[test]
    fn joint_density_is_mixed_derivative_of_tail() {
        let p = ModelParams::new(1.3, 0.7, 0.4, 0.6, 1.5).unwrap();
        let (x, y, h) = (0.01, 0.03, 1e-5);
        let tail = |a: f64, b: f64| joint_tail(a, b, &p).unwrap();
        let fd = (tail(x + h, y + h) - tail(x + h, y - h) - tail(x - h, y + h)
            + tail(x - h, y - h))
            / (4.0 * h * h);
        assert!(rel(joint_levy_density(x, y, &p).unwrap(), fd) < 1e-5);
    }

    #[test]
    fn single_jump_density_is_derivative_of_single_tail() {
        let p = ModelParams::new(1.3, 0.7, 0.4, 0.6, 1.5).unwrap();
        let c = cfg(0.001);
        for k in [Component::First, Component::Second] {
            let x = 0.004;
            let h = 1e-7;
            let fd = -(single_jump_tail(k, x + h, &p, &c).unwrap()
                - single_jump_tail(k, x - h, &p, &c).unwrap())
                / (2.0 * h);
            assert!(rel(single_jump_density(k, x, &p, &c).unwrap(), fd) < 1e-6);
        }
        let s = intensities(&p, &c);
        assert!(rel(single_jump_tail(Component::First, 0.001, &p, &c).unwrap(), s.lambda1_single) < 1e-12);
        assert!(rel(single_jump_tail(Component::Second, 0.001, &p, &c).unwrap(), s.lambda2_single) < 1e-12);
    }

    #[test]
    fn conditional_cdf_is_u_partial_of_clayton() {
        let (u, v, d) = (3.0, 1.7, 2.0);
        let h = 1e-6;
        let fd = (clayton(u + h, v, d) - clayton(u - h, v, d)) / (2.0 * h);
        assert!(rel(clayton_conditional_cdf(v, u, d), fd) < 1e-8);
        assert_eq!(clayton_conditional_cdf(f64::INFINITY, u, d), 1.0);
        assert_eq!(clayton_conditional_cdf(0.0, u, d), 0.0);
    }

    fn lambda_joint_of(log_c: f64, alpha: f64, theta: f64, eps: f64) -> f64 {
        lambda_joint_derivs_at(log_c, alpha, theta, eps).lambda_joint
    }

    #[test]
    fn lambda_joint_derivs_base_point() {
        let d = lambda_joint_derivs(&base_params(), &cfg(0.001)).unwrap();
        assert!((d.lambda_joint - 22.3607).abs() < 1e-4);
        assert!((d.d_log_c - 22.3607).abs() < 1e-4);
        assert!((d.d_theta - 7.7497).abs() < 1e-4);
        assert!((d.d2_theta2 - (-12.8143)).abs() < 1e-3);

        let h = 1e-6;
        let (lc, a, t, e) = (0.0, 0.5, 1.0, 0.001);
        let fd = (lambda_joint_of(lc, a, t + h, e) - lambda_joint_of(lc, a, t - h, e)) / (2.0 * h);
        assert!(rel(d.d_theta, fd) < 1e-6);
        let fd = (lambda_joint_of(lc + h, a, t, e) - lambda_joint_of(lc - h, a, t, e)) / (2.0 * h);
        assert!(rel(d.d_log_c, fd) < 1e-6);
        let h2 = 1e-4;
        let fd2 = (lambda_joint_of(lc, a, t + h2, e) - 2.0 * lambda_joint_of(lc, a, t, e)
            + lambda_joint_of(lc, a, t - h2, e))
            / (h2 * h2);
        assert!(rel(d.d2_theta2, fd2) < 1e-5);
    }

    #[test]
    fn lambda_joint_derivs_need_common_margins() {
        let p = ModelParams::new(1.0, 2.0, 0.5, 0.5, 2.0).unwrap();
        assert!(lambda_joint_derivs(&p, &cfg(0.01)).is_err());
    }

    #[test]
    fn power_sum_log_derivatives() {
        let (lx, ly, t) = (0.3_f64, 2.1_f64, 0.8);
        let f = |th: f64| ((th * lx).exp() + (th * ly).exp()).ln();
        let s = power_sum_log(lx, ly, t);
        let h = 1e-5;
        assert!(rel(s.value, f(t)) < 1e-14);
        assert!(rel(s.d_theta, (f(t + h) - f(t - h)) / (2.0 * h)) < 1e-9);
        assert!(rel(s.d2_theta, (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h)) < 1e-4);
        // huge spread stays finite
        let s = power_sum_log(0.0, 900.0, 3.0);
        assert!(s.value.is_finite() && s.d2_theta.is_finite());
    }

    #[test]
    fn t_statistic_values() {
        let p = base_params();
        let t1 = t_statistic(1.0, 1.0, &p).unwrap();
        assert!((t1 - 0.5 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((t1 - 0.34657).abs() < 1e-5);
        let a = t_statistic(0.004, 0.07, &p).unwrap();
        let b = t_statistic(4.0, 70.0, &p).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!(t_statistic(0.0, 1.0, &p).is_err());
        assert!((t_mean(0.5, 1.0) - (-0.32010)).abs() < 1e-5);
    }
}
