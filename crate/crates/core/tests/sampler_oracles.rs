mod common;

use levy_ifm::model::{clayton_conditional_cdf, intensities, joint_survival, t_statistic, t_mean};
use levy_ifm::simulate::{clayton_conditional_inverse, sample_joint_jump_pairs};
use levy_ifm::{simulate_path, Execution, SimulationConfig, TruncationConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solves `F(v | u) = w` by bisection in `ln v`.
fn numeric_inverse(w: f64, u: f64, delta: f64) -> f64 {
    let (mut lo, mut hi) = (u.ln() - 200.0, u.ln() + 200.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clayton_conditional_cdf(mid.exp(), u, delta) < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

#[test]
fn conditional_inverse_matches_bisection() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let u = 10f64.powf(rng.random_range(-3.0..4.0));
        let w: f64 = rng.random_range(1e-9..1.0 - 1e-9);
        let delta = rng.random_range(0.2..8.0);
        let closed = clayton_conditional_inverse(w, u, delta);
        let numeric = numeric_inverse(w, u, delta);
        assert!(common::rel(closed, numeric) < 1e-10, "u={u} w={w} delta={delta}: {closed} vs {numeric}");
    }
}

#[test]
fn acceptance_rate_is_joint_share() {
    let s = sample_joint_jump_pairs(&common::base(), 1e-3, 1_000_000, 5, Execution::Parallel).unwrap();
    let want = 2f64.powf(-0.5);
    assert!(common::rel(s.acceptance_rate(), want) < 0.01, "{}", s.acceptance_rate());
    assert!(s.pairs.iter().all(|&(x, y)| x >= 1e-3 && y >= 1e-3));
}

#[test]
fn marginal_law_of_simulated_jumps() {
    let p = common::base();
    let cfg = SimulationConfig::new(10_000.0, 1.0, 3).unwrap();
    let path = simulate_path(&p, &cfg).unwrap();
    let xi = path.xi;
    let xs: Vec<f64> = path.records.iter().map(|r| r.x).collect();
    assert!(xs.len() > 9_000);
    let d = common::ks_distance(&xs, |x| 1.0 - (x / xi).powf(-0.5));
    assert!(d < 0.02, "{d}");
}

#[test]
fn joint_survival_at_twice_epsilon() {
    let eps = 1e-3;
    let p = common::base();
    let s = sample_joint_jump_pairs(&p, eps, 200_000, 8, Execution::Parallel).unwrap();
    let emp = s.pairs.iter().filter(|&&(x, y)| x >= 2.0 * eps && y >= 2.0 * eps).count() as f64 / s.pairs.len() as f64;
    let cfg = TruncationConfig::new(eps, 1.0).unwrap();
    let want = joint_survival(2.0 * eps, 2.0 * eps, &p, &cfg).unwrap();
    // ((2·2^θ)/2)^(-1/δ) with θ = 1, δ = 2
    assert!((want - 2f64.powf(-0.5)).abs() < 1e-12);
    assert!((emp - want).abs() < 0.005, "{emp} vs {want}");
}

#[test]
fn scaled_pairs_do_not_depend_on_epsilon() {
    let p = common::base();
    let a = sample_joint_jump_pairs(&p, 1.0, 200_000, 21, Execution::Parallel).unwrap();
    let b = sample_joint_jump_pairs(&p, 1e-3, 200_000, 22, Execution::Parallel).unwrap();
    let xa: Vec<f64> = a.pairs.iter().map(|p| p.0).collect();
    let xb: Vec<f64> = b.pairs.iter().map(|p| p.0 / 1e-3).collect();
    let d = common::ks_two_sample(&xa, &xb);
    assert!(d < 0.01, "{d}");
}

#[test]
fn mean_of_t_over_joint_jumps() {
    let p = common::base();
    let s = sample_joint_jump_pairs(&p, 1e-3, 1_000_000, 9, Execution::Parallel).unwrap();
    let mean = s.pairs.iter().map(|&(x, y)| t_statistic(x, y, &p).unwrap()).sum::<f64>() / s.pairs.len() as f64;
    assert!((mean - t_mean(0.5, 1.0)).abs() < 3e-3, "{mean}");
}

#[test]
fn truncated_counts_match_intensities() {
    let p = common::base();
    let eps = 1e-3;
    let data = common::datasets(&p, eps, 1.0, 200, 77);
    let lam = intensities(&p, &TruncationConfig::new(eps, 1.0).unwrap());
    let check = |counts: Vec<usize>, want: f64| {
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<usize>() as f64 / n;
        let se = (want / n).sqrt();
        assert!((mean - want).abs() < 3.0 * se, "{mean} vs {want}");
    };
    check(data.iter().map(|d| d.n_joint()).collect(), lam.lambda_joint);
    check(data.iter().map(|d| d.n1_single()).collect(), lam.lambda1_single);
    check(data.iter().map(|d| d.n2_single()).collect(), lam.lambda2_single);
}
