//! Sandwich (Godambe) covariance of the two-step estimator in the
//! common-margin model.
//!
//! The constants `a`, `b`, `m` are expectations over one joint jump. They do
//! not depend on ε, so they are computed at ε = 1, either by Monte Carlo on
//! sampled pairs or by quadrature. For quadrature the pair is written as
//! `(X^θ, Y^θ) = (R W, R (1 − W))` with `R = 2/q`, `q ~ Beta(α/θ, 2)` and
//! `W | q` uniform on `[q/2, 1 − q/2]`; substituting `q = s^(θ/α)` turns the
//! law of `q` into the density `(α/θ + 1)(1 − q)` on `s ∈ (0, 1)`.

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::model::{power_sum_log, t_mean, t_value, ModelParams};
use crate::quadrature::{dyadic_edges, uniform_edges, GaussLegendre};
use crate::simulate::sample_joint_jump_pairs;

pub type Mat3 = [[f64; 3]; 3];

/// Coordinate labels of `η`.
pub const LABELS: [&str; 3] = ["log_c", "alpha", "theta"];

/// Smallest admissible `|b|`.
pub const B_MIN: f64 = 1e-6;

/// Grid of the quadrature rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss–Legendre nodes per panel.
    pub nodes: usize,
    /// Dyadic panels of the outer variable toward 0.
    pub levels: u32,
    /// Width in `ln W` of the inner panels.
    pub panel_width: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            nodes: 20,
            levels: 64,
            panel_width: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AbmMethod {
    MonteCarlo { count: usize, seed: u64 },
    Quadrature(QuadratureSpec),
}

/// The constants of the D and M matrices, with the joint-jump expectations
/// they were assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbmConstants {
    pub a: f64,
    pub b: f64,
    pub m: f64,
    /// Closed-form `E[T]`.
    pub mu_t: f64,
    /// `E[T]` as estimated by the chosen method.
    pub mu_t_estimate: f64,
    /// `E[log(X^θ + Y^θ)]`, `E[∂θ …]`, `E[∂²θ …]` at ε = 1.
    pub e_log_sum: f64,
    pub e_d_log_sum: f64,
    pub e_d2_log_sum: f64,
    /// `E[log X]` and `E[log X log Y]` at ε = 1.
    pub e_log_x: f64,
    pub e_log_xy: f64,
}

/// Per-pair quantities whose means determine `a`, `b`, `m`.
const K: usize = 7;

fn pair_terms(lx: f64, ly: f64, alpha: f64, theta: f64) -> [f64; K] {
    let p = power_sum_log(lx, ly, theta);
    let t = t_value(lx, ly, alpha, theta);
    let s = 0.5 * (lx + ly);
    [p.value, p.d_theta, p.d2_theta, t, s, s * t, lx * ly]
}

/// Computes `a`, `b`, `m` from the expectations over one joint jump.
pub fn estimate_abm(params: &ModelParams, method: AbmMethod, exec: Execution) -> Result<AbmConstants> {
    let (_, alpha, theta) = params.require_common()?;
    let means = match method {
        AbmMethod::MonteCarlo { count, seed } => {
            if count < 100_000 {
                return Err(invalid(format!("Monte Carlo needs at least 1e5 pairs, got {count}")));
            }
            monte_carlo_means(params, alpha, theta, count, seed, exec)?
        }
        AbmMethod::Quadrature(spec) => quadrature_means(alpha, theta, spec, exec)?,
    };
    let [el, ed, ed2, et, es, est, exy] = means;
    let th2 = theta * theta;
    let th3 = th2 * theta;
    let inv_sum2 = 1.0 / (alpha + theta).powi(2);
    let a = -alpha * LN_2 * LN_2 / th3 + LN_2 / th2 + inv_sum2 - el / th2 + ed / theta;
    let k = alpha * LN_2 / th2;
    let b = k * k - 2.0 * alpha * LN_2 / th3 + inv_sum2 + 2.0 * alpha / th3 * el - 2.0 * alpha / th2 * ed
        + (2.0 * theta + alpha) / theta * ed2;
    // 2 Cov(log X, T) = Cov(log X + log Y, T) by exchangeability
    let m = 2.0 * (est - es * et);
    if !(a.is_finite() && b.is_finite() && m.is_finite()) {
        return Err(Error::Numerical("non-finite Godambe constants".into()));
    }
    if b.abs() < B_MIN {
        return Err(Error::Singular(format!("b = {b} is too close to zero")));
    }
    Ok(AbmConstants {
        a,
        b,
        m,
        mu_t: t_mean(alpha, theta),
        mu_t_estimate: et,
        e_log_sum: el,
        e_d_log_sum: ed,
        e_d2_log_sum: ed2,
        e_log_x: es,
        e_log_xy: exy,
    })
}

fn monte_carlo_means(
    params: &ModelParams,
    alpha: f64,
    theta: f64,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<[f64; K]> {
    let sample = sample_joint_jump_pairs(params, 1.0, count, seed, exec)?;
    const CHUNK: usize = 1 << 14;
    let pairs = &sample.pairs;
    let partial = exec.map(pairs.len().div_ceil(CHUNK), |i| {
        let mut acc = [0.0; K];
        for &(x, y) in &pairs[i * CHUNK..((i + 1) * CHUNK).min(pairs.len())] {
            let v = pair_terms(x.ln(), y.ln(), alpha, theta);
            for k in 0..K {
                acc[k] += v[k];
            }
        }
        acc
    });
    let mut total = [0.0; K];
    for p in partial {
        for k in 0..K {
            total[k] += p[k];
        }
    }
    Ok(total.map(|v| v / pairs.len() as f64))
}

fn quadrature_means(alpha: f64, theta: f64, spec: QuadratureSpec, exec: Execution) -> Result<[f64; K]> {
    if spec.nodes < 2 || spec.levels < 8 || !(spec.panel_width > 0.0) {
        return Err(invalid(format!("unusable quadrature grid {spec:?}")));
    }
    let kappa = alpha / theta;
    let rule = GaussLegendre::new(spec.nodes);
    let outer: Vec<(f64, f64)> = dyadic_edges(spec.levels)
        .windows(2)
        .flat_map(|e| rule.mapped(e[0], e[1]).collect::<Vec<_>>())
        .collect();
    let contributions = exec.map(outer.len(), |i| {
        let (s, ws) = outer[i];
        let ln_q = s.ln() / kappa;
        let q = ln_q.exp();
        let ln_r = LN_2 - ln_q;
        let ln_lo = ln_q - LN_2;
        let width = 1.0 - q;
        let mut inner = [0.0; K];
        if width > 0.0 {
            // each half [lo, 1/2] and its mirror, in v = ln w
            for (v, wv) in uniform_edges(ln_lo, -LN_2, spec.panel_width)
                .windows(2)
                .flat_map(|e| rule.mapped(e[0], e[1]).collect::<Vec<_>>())
            {
                let w = v.exp();
                let other = (-w).ln_1p();
                let la = ln_r + v;
                let lb = ln_r + other;
                let f1 = pair_terms(la / theta, lb / theta, alpha, theta);
                let f2 = pair_terms(lb / theta, la / theta, alpha, theta);
                for k in 0..K {
                    inner[k] += wv * w * (f1[k] + f2[k]);
                }
            }
        }
        // density (κ+1)(1−q) of s times the uniform density 1/(1−q) of W
        inner.map(|v| ws * (kappa + 1.0) * v)
    });
    let mut total = [0.0; K];
    for c in contributions {
        for k in 0..K {
            total[k] += c[k];
        }
    }
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("quadrature produced a non-finite value".into()));
    }
    Ok(total)
}

/// `d = λ‖/(2λ) = 2^(−α/θ − 1)`.
pub fn d_ratio(alpha: f64, theta: f64) -> f64 {
    (-alpha / theta - 1.0).exp2()
}

/// `D` and its closed-form inverse at threshold ε.
pub fn build_d(params: &ModelParams, epsilon: f64, a: f64, b: f64) -> Result<(Mat3, Mat3)> {
    let (_, alpha, theta) = params.require_common()?;
    check_b(b)?;
    let le = epsilon.ln();
    let d = d_ratio(alpha, theta);
    let k = alpha * LN_2 / (theta * theta);
    let a2 = alpha * alpha;
    let dm = [
        [1.0, -le, 0.0],
        [-le, 1.0 / a2 + le * le, 0.0],
        [d * k, d * (-k * le + a), d * b],
    ];
    let inv = [
        [1.0 + a2 * le * le, a2 * le, 0.0],
        [a2 * le, a2, 0.0],
        [-(a * a2 * le + k) / b, -a / b * a2, 1.0 / (d * b)],
    ];
    Ok((dm, inv))
}

/// `M`, the normalized second moment of the two-step score vector.
pub fn build_m(params: &ModelParams, epsilon: f64, b: f64, m: f64) -> Result<Mat3> {
    let (_, alpha, theta) = params.require_common()?;
    let le = epsilon.ln();
    let d = d_ratio(alpha, theta);
    let k = alpha * LN_2 / (theta * theta);
    let m13 = 2.0 * d * k;
    let m23 = -d * (2.0 * k * le + m);
    Ok([
        [1.0, -le, m13],
        [-le, 1.0 / (alpha * alpha) + le * le, m23],
        [m13, m23, d * b],
    ])
}

/// Exact second moment of the two-step score, without treating the pooled
/// marginal observations as independent.
///
/// A joint jump contributes two correlated log-excesses `U = log(Z/ε) − 1/α`
/// and counts twice in `n`. This adds `Var(n)/(2λt) = 1 + 2d` and terms in
/// `μ = E[U_X | joint]` and `E[U_X U_Y | joint]`; it coincides with [`build_m`]
/// only when both vanish and `d = 0`.
pub fn build_m_dependent(params: &ModelParams, epsilon: f64, k: &AbmConstants) -> Result<Mat3> {
    let (_, alpha, theta) = params.require_common()?;
    let le = epsilon.ln();
    let d = d_ratio(alpha, theta);
    let kk = alpha * LN_2 / (theta * theta);
    let mu = k.e_log_x - 1.0 / alpha;
    let cxy = k.e_log_xy - 2.0 * k.e_log_x / alpha + 1.0 / (alpha * alpha);
    let var_n = 1.0 + 2.0 * d;
    let m12 = -le * var_n - 2.0 * d * mu;
    let m22 = 1.0 / (alpha * alpha) + 2.0 * d * cxy + 4.0 * d * le * mu + le * le * var_n;
    let m13 = 2.0 * d * kk;
    let m23 = -d * (2.0 * kk * le + k.m + 2.0 * kk * mu);
    Ok([[var_n, m12, m13], [m12, m22, m23], [m13, m23, d * k.b]])
}

/// `(G, G⁻¹)` with `G = Dᵀ M⁻¹ D` and `G⁻¹ = D⁻¹ M D⁻ᵀ`.
pub fn sandwich(d: &Mat3, m: &Mat3) -> Result<(Mat3, Mat3)> {
    let m_inv = inverse(m)?;
    let d_inv = inverse(d)?;
    let g = mul(&mul(&transpose(d), &m_inv), d);
    let g_inv = mul(&mul(&d_inv, m), &transpose(&d_inv));
    Ok((g, g_inv))
}

/// Limit covariance `V` as ε → 0 and `Corr(N₁, N₂) = V₁₃/√(V₁₁ V₃₃)`.
pub fn limit_v(params: &ModelParams, a: f64, b: f64, m: f64) -> Result<(Mat3, f64)> {
    let (_, alpha, theta) = params.require_common()?;
    check_b(b)?;
    let a2 = alpha * alpha;
    let d = d_ratio(alpha, theta);
    let v13 = -a2 * (a + m) / b;
    let v33 = 1.0 / (b * d) - 3.0 * a2 * LN_2 * LN_2 / (b * b * theta.powi(4)) + a * a2 * (a + 2.0 * m) / (b * b);
    if !(v33 > 0.0) {
        return Err(Error::Numerical(format!("limit variance of theta is not positive: {v33}")));
    }
    let v = [[a2, a2, v13], [a2, a2, v13], [v13, v13, v33]];
    Ok((v, v13 / (alpha * v33.sqrt())))
}

fn check_b(b: f64) -> Result<()> {
    if b.abs() < B_MIN || !b.is_finite() {
        return Err(Error::Singular(format!("b = {b} is too close to zero")));
    }
    Ok(())
}

pub fn mul(x: &Mat3, y: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
        }
    }
    out
}

pub fn transpose(x: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = x[j][i];
        }
    }
    out
}

/// Adjugate inverse; singular when `|det| < 1e-12 ‖x‖³` (max-entry norm).
pub fn inverse(x: &Mat3) -> Result<Mat3> {
    let cof = |i: usize, j: usize| {
        let r = [(i + 1) % 3, (i + 2) % 3];
        let c = [(j + 1) % 3, (j + 2) % 3];
        x[r[0]][c[0]] * x[r[1]][c[1]] - x[r[0]][c[1]] * x[r[1]][c[0]]
    };
    let det = x[0][0] * cof(0, 0) + x[0][1] * cof(0, 1) + x[0][2] * cof(0, 2);
    let norm = x.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(det.abs() >= 1e-12 * norm.powi(3)) || norm == 0.0 {
        return Err(Error::Singular(format!("determinant {det:e} at scale {norm:e}")));
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[j][i] = cof(i, j) / det;
        }
    }
    Ok(out)
}

/// Largest absolute deviation of `x` from the identity.
pub fn identity_error(x: &Mat3) -> f64 {
    let mut e = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            e = e.max((x[i][j] - target).abs());
        }
    }
    e
}

/// A 3×3 matrix with its row and column labels, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledMatrix {
    pub labels: [&'static str; 3],
    pub rows: Mat3,
}

impl From<Mat3> for LabeledMatrix {
    fn from(rows: Mat3) -> Self {
        LabeledMatrix { labels: LABELS, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GodambeReport {
    pub method: AbmMethod,
    pub alpha: f64,
    pub theta: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub mu_t: f64,
    pub mu_t_estimate: f64,
    pub d: f64,
    #[serde(rename = "D")]
    pub d_matrix: LabeledMatrix,
    #[serde(rename = "D_inv")]
    pub d_inv: LabeledMatrix,
    #[serde(rename = "M")]
    pub m_matrix: LabeledMatrix,
    #[serde(rename = "G")]
    pub g: LabeledMatrix,
    /// Covariance of `√(2λt) (log c̃ − log c, α̃ − α, θ̃ − θ)`.
    #[serde(rename = "G_inv")]
    pub g_inv: LabeledMatrix,
    /// `G⁻¹` with the first coordinate divided by `log ε`, the form that
    /// converges to `V`.
    #[serde(rename = "G_inv_scaled")]
    pub g_inv_scaled: LabeledMatrix,
    /// Score second moment with the within-jump dependence of the pooled
    /// marginal data, and the sandwich built from it.
    #[serde(rename = "M_dependent")]
    pub m_dependent: LabeledMatrix,
    #[serde(rename = "G_inv_dependent")]
    pub g_inv_dependent: LabeledMatrix,
    #[serde(rename = "V")]
    pub v: LabeledMatrix,
    pub corr_n1_n2: f64,
}

impl GodambeReport {
    /// Builds every matrix at threshold ε from the constants.
    pub fn assemble(params: &ModelParams, epsilon: f64, method: AbmMethod, k: &AbmConstants) -> Result<Self> {
        let (_, alpha, theta) = params.require_common()?;
        if !(epsilon.is_finite() && epsilon > 0.0 && epsilon != 1.0) {
            return Err(invalid(format!("epsilon must be positive and not 1, got {epsilon}")));
        }
        let (d, d_inv) = build_d(params, epsilon, k.a, k.b)?;
        let m = build_m(params, epsilon, k.b, k.m)?;
        let (g, g_inv) = sandwich(&d, &m)?;
        let m_dep = build_m_dependent(params, epsilon, k)?;
        let (_, g_inv_dep) = sandwich(&d, &m_dep)?;
        let (v, corr) = limit_v(params, k.a, k.b, k.m)?;
        let s = [1.0 / epsilon.ln(), 1.0, 1.0];
        let mut scaled = g_inv;
        for i in 0..3 {
            for j in 0..3 {
                scaled[i][j] *= s[i] * s[j];
            }
        }
        Ok(GodambeReport {
            method,
            alpha,
            theta,
            delta: params.delta(),
            epsilon,
            a: k.a,
            b: k.b,
            m: k.m,
            mu_t: k.mu_t,
            mu_t_estimate: k.mu_t_estimate,
            d: d_ratio(alpha, theta),
            d_matrix: d.into(),
            d_inv: d_inv.into(),
            m_matrix: m.into(),
            g: g.into(),
            g_inv: g_inv.into(),
            g_inv_scaled: scaled.into(),
            m_dependent: m_dep.into(),
            g_inv_dependent: g_inv_dep.into(),
            v: v.into(),
            corr_n1_n2: corr,
        })
    }

    /// Structural properties every report must satisfy, as `(name, holds)`.
    pub fn structural_checks(&self) -> Vec<(&'static str, bool)> {
        let d = &self.d_matrix.rows;
        let m = &self.m_matrix.rows;
        let v = &self.v.rows;
        let a2 = self.alpha * self.alpha;
        let g_g_inv = mul(&self.g.rows, &self.g_inv.rows);
        let d_d_inv = mul(d, &self.d_inv.rows);
        let g_inv_alt = mul(&mul(&self.d_inv.rows, m), &transpose(&self.d_inv.rows));
        let mut alt_err = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                alt_err = alt_err.max((g_inv_alt[i][j] - self.g_inv.rows[i][j]).abs());
            }
        }
        vec![
            ("M symmetric", m == &transpose(m)),
            ("D structural zeros", d[0][2] == 0.0 && d[1][2] == 0.0),
            ("D D_inv = I", identity_error(&d_d_inv) < 1e-10),
            ("G G_inv = I", identity_error(&g_g_inv) < 1e-10),
            ("G_inv = D_inv M D_inv^T", alt_err < 1e-10),
            ("V symmetric", v == &transpose(v)),
            ("V alpha^2 block", v[0][0] == a2 && v[0][1] == a2 && v[1][1] == a2 && v[1][0] == a2),
            ("M33 = D33", m[2][2] == d[2][2]),
        ]
    }
}

fn write_matrix(f: &mut fmt::Formatter<'_>, name: &str, x: &LabeledMatrix) -> fmt::Result {
    writeln!(f, "{name} =")?;
    for row in &x.rows {
        writeln!(f, "  {:>10.4} {:>10.4} {:>10.4}", row[0], row[1], row[2])?;
    }
    Ok(())
}

impl fmt::Display for GodambeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "alpha = {:.4}  theta = {:.4}  delta = {:.4}  epsilon = {:e}",
            self.alpha, self.theta, self.delta, self.epsilon
        )?;
        writeln!(
            f,
            "a = {:.4}  b = {:.4}  m = {:.4}  d = {:.4}  E[T] = {:.4} (closed form {:.4})",
            self.a, self.b, self.m, self.d, self.mu_t_estimate, self.mu_t
        )?;
        write_matrix(f, "D", &self.d_matrix)?;
        write_matrix(f, "M", &self.m_matrix)?;
        write_matrix(f, "G_inv (log c scaled by 1/log eps)", &self.g_inv_scaled)?;
        write_matrix(f, "V", &self.v)?;
        writeln!(f, "Corr(N1, N2) = {:.4}", self.corr_n1_n2)?;
        write_matrix(f, "G_inv with within-jump dependence (unscaled)", &self.g_inv_dependent)
    }
}

/// Computes the constants and assembles the report in one call.
pub fn godambe_report(
    params: &ModelParams,
    epsilon: f64,
    method: AbmMethod,
    exec: Execution,
) -> Result<GodambeReport> {
    let k = estimate_abm(params, method, exec)?;
    GodambeReport::assemble(params, epsilon, method, &k)
}
