//! Monte Carlo comparison of the estimators and histogram data for their
//! sampling distributions.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::estimate::{estimate, Method};
use crate::exec::{derive_seed, Execution};
use crate::godambe::Mat3;
use crate::model::ModelParams;
use crate::observation::truncate;
use crate::simulate::{simulate_path, SimulationConfig};

/// Largest tolerated share of excluded replicates per method and ε.
pub const MAX_EXCLUDED_SHARE: f64 = 0.05;

/// Parameters summarized by the study, in output order.
pub const PARAMS: [&str; 5] = ["c", "alpha", "delta", "log_c", "theta"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub params: ModelParams,
    pub tau: f64,
    pub t: f64,
    pub epsilons: Vec<f64>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Also simulate jumps whose first coordinate is below the cutoff.
    #[serde(default)]
    pub symmetrize: bool,
}

impl StudyConfig {
    /// 100 paths, ε ∈ {10⁻³, 10⁻⁵}, τ = 1000, t = 1, all methods.
    ///
    /// Paths are symmetrized so that no jump with a coordinate above ε is
    /// missing from the truncated data.
    pub fn table1(seed: u64) -> Self {
        StudyConfig {
            params: ModelParams::common(1.0, 0.5, 2.0).expect("valid preset"),
            tau: 1000.0,
            t: 1.0,
            epsilons: vec![1e-3, 1e-5],
            replicates: 100,
            methods: Method::ALL.to_vec(),
            seed,
            symmetrize: true,
        }
    }

    /// 1000 paths at ε = 10⁻⁵.
    pub fn figure1(seed: u64) -> Self {
        StudyConfig {
            epsilons: vec![1e-5],
            replicates: 1000,
            ..StudyConfig::table1(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "table1" => Ok(Self::table1(seed)),
            "figure1" => Ok(Self::figure1(seed)),
            _ => Err(invalid(format!("unknown preset {name:?} (expected table1 or figure1)"))),
        }
    }

    pub fn simulation(&self, replicate: usize) -> Result<SimulationConfig> {
        Ok(SimulationConfig::new(self.tau, self.t, derive_seed(self.seed, replicate as u64))?
            .symmetrized(self.symmetrize))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        if self.epsilons.is_empty() || self.methods.is_empty() {
            return Err(invalid("a study needs at least one epsilon and one method"));
        }
        self.params.require_common()?;
        let xi = self.simulation(0)?.xi(&self.params)?;
        for &e in &self.epsilons {
            // relative slack: ξ is computed through a power and may round up
            if !(e.is_finite() && e >= xi * (1.0 - 1e-12)) {
                return Err(invalid(format!("epsilon {e} is below the simulation cutoff {xi}")));
            }
        }
        Ok(())
    }
}

/// One fit on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub replicate: usize,
    pub epsilon: f64,
    pub method: Method,
    /// `(log c, α, θ)`; absent when the fit failed.
    pub eta: Option<[f64; 3]>,
    pub converged: bool,
    pub n_joint: usize,
    pub n_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReplicateEstimate {
    pub fn included(&self) -> bool {
        self.converged && self.eta.is_some()
    }

    /// Value of a named parameter.
    pub fn param(&self, name: &str) -> Option<f64> {
        let [lc, a, th] = self.eta?;
        match name {
            "c" => Some(lc.exp()),
            "log_c" => Some(lc),
            "alpha" => Some(a),
            "theta" => Some(th),
            "delta" => Some(th / a),
            _ => None,
        }
    }
}

/// Aggregate over the included replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub method: Method,
    pub epsilon: f64,
    pub param: String,
    pub mean: f64,
    pub sqrt_mse: f64,
    /// `|mean − truth| / |truth|`; absent when the truth is 0.
    pub mrb: Option<f64>,
    /// Median of `(estimate − truth) / |truth|`.
    pub median_rb: Option<f64>,
    pub replicates: usize,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusions {
    pub method: Method,
    pub epsilon: f64,
    pub excluded: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub rows: Vec<StudyRow>,
    pub exclusions: Vec<Exclusions>,
    /// True when some method/ε lost more than 5% of its replicates.
    pub failed: bool,
    pub estimates: Vec<ReplicateEstimate>,
}

pub fn truth_value(params: &ModelParams, name: &str) -> Result<f64> {
    let (lc, a, th) = params.require_common()?;
    Ok(match name {
        "c" => lc.exp(),
        "log_c" => lc,
        "alpha" => a,
        "theta" => th,
        "delta" => th / a,
        _ => return Err(invalid(format!("unknown parameter {name:?}"))),
    })
}

/// Simulates every replicate once and fits each method at each ε on the
/// same truncated data.
pub fn run_study(config: &StudyConfig, exec: Execution) -> Result<StudyOutcome> {
    config.validate()?;
    let per_replicate = exec.map(config.replicates, |r| -> Result<Vec<ReplicateEstimate>> {
        let path = simulate_path(&config.params, &config.simulation(r)?)?;
        let mut out = Vec::with_capacity(config.epsilons.len() * config.methods.len());
        for &eps in &config.epsilons {
            let ds = truncate(&path, eps.max(path.xi), config.t)?;
            for &method in &config.methods {
                let fit = estimate(&ds, method);
                out.push(ReplicateEstimate {
                    replicate: r,
                    epsilon: eps,
                    method,
                    eta: fit.as_ref().ok().and_then(|f| f.eta()),
                    converged: fit.as_ref().map(|f| f.diagnostics.converged).unwrap_or(false),
                    n_joint: ds.n_joint(),
                    n_events: ds.n_events(),
                    error: fit.err().map(|e| e.to_string()),
                });
            }
        }
        Ok(out)
    });
    let mut estimates = Vec::new();
    for r in per_replicate {
        estimates.extend(r?);
    }
    summarize(config, estimates)
}

fn summarize(config: &StudyConfig, estimates: Vec<ReplicateEstimate>) -> Result<StudyOutcome> {
    let mut rows = Vec::new();
    let mut exclusions = Vec::new();
    let mut failed = false;
    for &eps in &config.epsilons {
        for &method in &config.methods {
            let group: Vec<&ReplicateEstimate> = estimates
                .iter()
                .filter(|e| e.epsilon == eps && e.method == method)
                .collect();
            let kept: Vec<&ReplicateEstimate> = group.iter().copied().filter(|e| e.included()).collect();
            let excluded = group.len() - kept.len();
            if excluded as f64 > MAX_EXCLUDED_SHARE * group.len() as f64 {
                failed = true;
            }
            exclusions.push(Exclusions {
                method,
                epsilon: eps,
                excluded,
                total: group.len(),
            });
            if kept.is_empty() {
                failed = true;
                continue;
            }
            for name in PARAMS {
                let truth = truth_value(&config.params, name)?;
                let values: Vec<f64> = kept.iter().filter_map(|e| e.param(name)).collect();
                rows.push(aggregate(method, eps, name, &values, truth));
            }
        }
    }
    Ok(StudyOutcome {
        rows,
        exclusions,
        failed,
        estimates,
    })
}

fn aggregate(method: Method, epsilon: f64, name: &str, values: &[f64], truth: f64) -> StudyRow {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mse = values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / n;
    let (mrb, median_rb) = if truth != 0.0 {
        let mut rel: Vec<f64> = values.iter().map(|v| (v - truth) / truth.abs()).collect();
        rel.sort_by(f64::total_cmp);
        (Some((mean - truth).abs() / truth.abs()), Some(median(&rel)))
    } else {
        (None, None)
    };
    StudyRow {
        method,
        epsilon,
        param: name.to_string(),
        mean,
        sqrt_mse: mse.sqrt(),
        mrb,
        median_rb,
        replicates: values.len(),
        truth,
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Writes the summary rows as `method,epsilon,param,mean,sqrt_mse,mrb,replicates`.
pub fn write_rows_csv<W: Write>(rows: &[StudyRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "epsilon", "param", "mean", "sqrt_mse", "mrb", "replicates"])?;
    for r in rows {
        out.write_record([
            r.method.label().to_string(),
            r.epsilon.to_string(),
            r.param.clone(),
            r.mean.to_string(),
            r.sqrt_mse.to_string(),
            r.mrb.map(|v| v.to_string()).unwrap_or_default(),
            r.replicates.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Finds a row by method, ε and parameter.
pub fn find_row<'a>(rows: &'a [StudyRow], method: Method, epsilon: f64, param: &str) -> Option<&'a StudyRow> {
    rows.iter()
        .find(|r| r.method == method && r.epsilon == epsilon && r.param == param)
}

/// Kind of the theoretical overlay of a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Overlay {
    /// Normal law from the sandwich covariance.
    Theoretical,
    /// No limit law is available; only the fitted normal is drawn.
    EmpiricalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub count: usize,
    pub fitted_density: f64,
    pub theoretical_density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub method: Method,
    pub param: String,
    pub epsilon: f64,
    pub truth: f64,
    pub count: usize,
    pub bin_width: f64,
    pub sample_mean: f64,
    pub sample_sd: f64,
    pub overlay: Overlay,
    pub theoretical_sd: Option<f64>,
    /// Kolmogorov–Smirnov distance of the standardized estimates from N(0, 1).
    pub ks_distance: f64,
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    /// Tab-separated `bin_left, count, fitted_density, theoretical_density`;
    /// the last column is empty without a theoretical overlay.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_left\tcount\tfitted_density\ttheoretical_density")?;
        for b in &self.bins {
            let th = b.theoretical_density.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{}\t{}\t{}\t{}", b.bin_left, b.count, b.fitted_density, th)?;
        }
        Ok(())
    }
}

/// A study run with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyFile {
    pub config: StudyConfig,
    pub outcome: StudyOutcome,
}

/// Minimum sample size for a histogram.
pub const MIN_HISTOGRAM: usize = 30;

/// Histogram of `values` with a fitted normal, plus an optional theoretical
/// normal `N(truth, theoretical_sd²)` evaluated at bin midpoints.
pub fn histogram_report(
    method: Method,
    param: &str,
    epsilon: f64,
    truth: f64,
    values: &[f64],
    bins: usize,
    theoretical_sd: Option<f64>,
) -> Result<Histogram> {
    if values.len() < MIN_HISTOGRAM {
        return Err(Error::InsufficientData(format!(
            "a histogram needs at least {MIN_HISTOGRAM} estimates, got {}",
            values.len()
        )));
    }
    if bins == 0 {
        return Err(invalid("bins must be at least 1"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let fitted = normal(mean, sd);
    let theory = theoretical_sd.map(|s| normal(truth, s));
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let left = lo + i as f64 * width;
            let mid = left + 0.5 * width;
            HistogramBin {
                bin_left: left,
                count,
                fitted_density: fitted.as_ref().map(|d| pdf(d, mid)).unwrap_or(0.0),
                theoretical_density: theory.as_ref().and_then(|d| d.as_ref().map(|d| pdf(d, mid))),
            }
        })
        .collect();
    Ok(Histogram {
        method,
        param: param.to_string(),
        epsilon,
        truth,
        count: values.len(),
        bin_width: width,
        sample_mean: mean,
        sample_sd: sd,
        overlay: if theoretical_sd.is_some() {
            Overlay::Theoretical
        } else {
            Overlay::EmpiricalOnly
        },
        theoretical_sd,
        ks_distance: ks_normal(values),
        bins,
    })
}

fn normal(mean: f64, sd: f64) -> Option<Normal> {
    Normal::new(mean, sd).ok().filter(|_| sd > 0.0)
}

fn pdf(d: &Normal, x: f64) -> f64 {
    use statrs::distribution::Continuous;
    d.pdf(x)
}

/// KS distance between the values standardized by their sample mean and
/// standard deviation and the standard normal law.
pub fn ks_normal(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if !(sd > 0.0) {
        return 1.0;
    }
    let std = Normal::standard();
    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    z.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std.cdf(x);
            (f - i as f64 / nf).abs().max(((i + 1) as f64 / nf - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Histograms of `log c`, `α`, `θ` for every method at ε. The two-step
/// method gets the normal overlay with covariance `G⁻¹/(2λt)`; the others
/// are marked empirical only.
pub fn figure_report(
    outcome: &StudyOutcome,
    config: &StudyConfig,
    epsilon: f64,
    bins: usize,
    g_inv: &Mat3,
) -> Result<Vec<Histogram>> {
    let (lc, a, _) = config.params.require_common()?;
    let two_lambda_t = 2.0 * (lc - a * epsilon.ln()).exp() * config.t;
    let mut out = Vec::new();
    for &method in &config.methods {
        for (k, name) in ["log_c", "alpha", "theta"].into_iter().enumerate() {
            let values: Vec<f64> = outcome
                .estimates
                .iter()
                .filter(|e| e.method == method && e.epsilon == epsilon && e.included())
                .filter_map(|e| e.param(name))
                .collect();
            let sd = (method == Method::TwoStep).then(|| (g_inv[k][k] / two_lambda_t).sqrt());
            let truth = truth_value(&config.params, name)?;
            out.push(histogram_report(method, name, epsilon, truth, &values, bins, sd)?);
        }
    }
    Ok(out)
}

/// Scaled two-step errors `√(2λt)(η̃ − η)` for every included replicate at ε.
pub fn scaled_errors(outcome: &StudyOutcome, config: &StudyConfig, epsilon: f64, method: Method) -> Result<Vec<[f64; 3]>> {
    let (lc, a, th) = config.params.require_common()?;
    let root = (2.0 * (lc - a * epsilon.ln()).exp() * config.t).sqrt();
    Ok(outcome
        .estimates
        .iter()
        .filter(|e| e.method == method && e.epsilon == epsilon && e.included())
        .filter_map(|e| e.eta)
        .map(|[l, al, t]| [root * (l - lc), root * (al - a), root * (t - th)])
        .collect())
}

/// Unbiased sample covariance of 3-vectors.
pub fn sample_covariance(rows: &[[f64; 3]]) -> Result<Mat3> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("covariance needs 2 rows, got {n}")));
    }
    let mut mean = [0.0; 3];
    for r in rows {
        for k in 0..3 {
            mean[k] += r[k] / n as f64;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for r in rows {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n as f64 - 1.0);
            }
        }
    }
    Ok(cov)
}

/// Groups rows by `(method, ε)` for display.
pub fn rows_by_group(rows: &[StudyRow]) -> BTreeMap<(String, String), Vec<&StudyRow>> {
    let mut map: BTreeMap<(String, String), Vec<&StudyRow>> = BTreeMap::new();
    for r in rows {
        map.entry((r.method.label().to_string(), format!("{:e}", r.epsilon)))
            .or_default()
            .push(r);
    }
    map
}
