#![allow(dead_code)]

use levy_ifm::exec::derive_seed;
use levy_ifm::{simulate_path, truncate, Execution, ModelParams, SimulationConfig, TruncatedDataset};

pub fn base() -> ModelParams {
    ModelParams::common(1.0, 0.5, 2.0).unwrap()
}

/// A path simulated exactly down to ε (ξ = ε), truncated at ε.
pub fn dataset(params: &ModelParams, epsilon: f64, t: f64, seed: u64) -> TruncatedDataset {
    let tau = params.c1() * epsilon.powf(-params.alpha1());
    let cfg = SimulationConfig::new(tau, t, seed).unwrap().symmetrized(true);
    let path = simulate_path(params, &cfg).unwrap();
    truncate(&path, epsilon, t).unwrap()
}

pub fn datasets(params: &ModelParams, epsilon: f64, t: f64, count: usize, seed: u64) -> Vec<TruncatedDataset> {
    Execution::Parallel.map(count, |i| dataset(params, epsilon, t, derive_seed(seed, i as u64)))
}

/// One-sample Kolmogorov–Smirnov distance against a continuous CDF.
pub fn ks_distance(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

pub fn rel(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}
