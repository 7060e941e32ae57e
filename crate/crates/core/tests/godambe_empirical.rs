mod common;

use levy_ifm::estimate::{two_step_hessian, two_step_score, Method};
use levy_ifm::godambe::{
    build_d, build_m, build_m_dependent, estimate_abm, godambe_report, AbmConstants, AbmMethod, Mat3,
    QuadratureSpec,
};
use levy_ifm::study::{run_study, sample_covariance, scaled_errors, StudyConfig};
use levy_ifm::Execution;

const EPS: f64 = 1e-3;

fn constants() -> AbmConstants {
    estimate_abm(&common::base(), AbmMethod::Quadrature(QuadratureSpec::default()), Execution::Parallel).unwrap()
}

fn two_lambda_t(t: f64) -> f64 {
    2.0 * EPS.powf(-0.5) * t
}

#[test]
fn expected_hessian_matches_d() {
    let p = common::base();
    let k = constants();
    let (d, _) = build_d(&p, EPS, k.a, k.b).unwrap();
    let data = common::datasets(&p, EPS, 1.0, 10_000, 101);
    let mut mean = [[0.0; 3]; 3];
    for ds in &data {
        let h = two_step_hessian(ds, 0.0, 0.5, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                mean[i][j] -= h[i][j] / (two_lambda_t(1.0) * data.len() as f64);
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            if d[i][j] == 0.0 {
                assert_eq!(mean[i][j], 0.0);
            } else {
                assert!(common::rel(mean[i][j], d[i][j]) < 0.02, "D[{i}][{j}]: {} vs {}", mean[i][j], d[i][j]);
            }
        }
    }
}

fn empirical_m(count: usize, seed: u64) -> Mat3 {
    let p = common::base();
    let data = common::datasets(&p, EPS, 1.0, count, seed);
    let mut m = [[0.0; 3]; 3];
    for ds in &data {
        let s = two_step_score(ds, 0.0, 0.5, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += s[i] * s[j] / (two_lambda_t(1.0) * count as f64);
            }
        }
    }
    m
}

#[test]
fn score_second_moment_matches_dependent_m() {
    let p = common::base();
    let k = constants();
    let want = build_m_dependent(&p, EPS, &k).unwrap();
    let got = empirical_m(40_000, 202);
    for i in 0..3 {
        for j in 0..3 {
            assert!(common::rel(got[i][j], want[i][j]) < 0.03, "M[{i}][{j}]: {} vs {}", got[i][j], want[i][j]);
        }
    }
}

#[test]
fn displayed_m_misses_pooled_dependence() {
    // Var(n) exceeds E[n] because every joint jump counts twice
    let p = common::base();
    let k = constants();
    let displayed = build_m(&p, EPS, k.b, k.m).unwrap();
    let got = empirical_m(40_000, 303);
    let d = 2f64.powf(-1.5);
    assert!(common::rel(got[0][0], 1.0 + 2.0 * d) < 0.03, "{}", got[0][0]);
    assert!(got[0][0] / displayed[0][0] > 1.5);
    // the entries that only involve the joint part agree
    assert!(common::rel(got[0][2], displayed[0][2]) < 0.03);
    assert!(common::rel(got[2][2], displayed[2][2]) < 0.03);
}

#[test]
fn sandwich_predicts_estimator_spread_over_long_paths() {
    let mut cfg = StudyConfig::table1(9);
    cfg.tau = EPS.powf(-0.5);
    cfg.t = 20.0;
    cfg.epsilons = vec![EPS];
    cfg.methods = vec![Method::TwoStep];
    cfg.replicates = 4_000;
    let out = run_study(&cfg, Execution::Parallel).unwrap();
    let errors = scaled_errors(&out, &cfg, EPS, Method::TwoStep).unwrap();
    let cov = sample_covariance(&errors).unwrap();
    let r = godambe_report(&cfg.params, EPS, AbmMethod::Quadrature(QuadratureSpec::default()), Execution::Parallel)
        .unwrap();
    let dep = r.g_inv_dependent.rows;
    for i in 0..3 {
        assert!(common::rel(cov[i][i], dep[i][i]) < 0.1, "[{i}][{i}]: {} vs {}", cov[i][i], dep[i][i]);
    }
    assert!(common::rel(cov[0][1], dep[0][1]) < 0.1);
    // the displayed form understates the variance of the marginal estimates
    assert!(cov[1][1] / r.g_inv.rows[1][1] > 1.4);
}
