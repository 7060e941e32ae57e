//! Classification of a simulated path at threshold ε into joint jumps and
//! component-only single jumps.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simulate::{JumpRecord, JumpStream};

/// Jumps observed above ε on `[0, t]`.
///
/// Thresholds are closed: a coordinate equal to ε counts as observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct TruncatedDataset {
    pub epsilon: f64,
    pub t: f64,
    pub joint: Vec<(f64, f64)>,
    pub singles1: Vec<f64>,
    pub singles2: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDataset {
    epsilon: f64,
    t: f64,
    joint: Vec<(f64, f64)>,
    singles1: Vec<f64>,
    singles2: Vec<f64>,
}

impl TryFrom<RawDataset> for TruncatedDataset {
    type Error = Error;

    fn try_from(r: RawDataset) -> Result<Self> {
        TruncatedDataset::new(r.epsilon, r.t, r.joint, r.singles1, r.singles2)
    }
}

impl TruncatedDataset {
    /// Builds a dataset and checks that every observation is at least ε.
    pub fn new(
        epsilon: f64,
        t: f64,
        joint: Vec<(f64, f64)>,
        singles1: Vec<f64>,
        singles2: Vec<f64>,
    ) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(t.is_finite() && t > 0.0) {
            return Err(invalid(format!("t must be positive, got {t}")));
        }
        let ok = |z: f64| z.is_finite() && z >= epsilon;
        if let Some(&(x, y)) = joint.iter().find(|&&(x, y)| !(ok(x) && ok(y))) {
            return Err(invalid(format!("joint jump ({x}, {y}) below epsilon {epsilon}")));
        }
        if let Some(z) = singles1.iter().chain(&singles2).find(|&&z| !ok(z)) {
            return Err(invalid(format!("single jump {z} below epsilon {epsilon}")));
        }
        Ok(TruncatedDataset {
            epsilon,
            t,
            joint,
            singles1,
            singles2,
        })
    }

    /// n‖
    pub fn n_joint(&self) -> usize {
        self.joint.len()
    }

    /// n₁⊥
    pub fn n1_single(&self) -> usize {
        self.singles1.len()
    }

    /// n₂⊥
    pub fn n2_single(&self) -> usize {
        self.singles2.len()
    }

    pub fn n1(&self) -> usize {
        self.n_joint() + self.n1_single()
    }

    pub fn n2(&self) -> usize {
        self.n_joint() + self.n2_single()
    }

    /// Total marginal count `n = n₁ + n₂`; joint jumps count twice.
    pub fn n(&self) -> usize {
        self.n1() + self.n2()
    }

    /// Number of observed bivariate events, `n‖ + n₁⊥ + n₂⊥`.
    pub fn n_events(&self) -> usize {
        self.n_joint() + self.n1_single() + self.n2_single()
    }

    /// All component-1 observations: joint x-coordinates, then singles.
    pub fn x_view(&self) -> impl Iterator<Item = f64> + '_ {
        self.joint.iter().map(|p| p.0).chain(self.singles1.iter().copied())
    }

    pub fn y_view(&self) -> impl Iterator<Item = f64> + '_ {
        self.joint.iter().map(|p| p.1).chain(self.singles2.iter().copied())
    }

    /// Both marginal views pooled.
    pub fn pooled_view(&self) -> impl Iterator<Item = f64> + '_ {
        self.x_view().chain(self.y_view())
    }

    /// A stream that truncates back to this dataset: joint jumps first, then
    /// single jumps with a zero partner, at evenly spaced times.
    pub fn to_stream(&self, xi: f64) -> JumpStream {
        let total = self.n_events();
        let step = self.t / (total as f64 + 1.0);
        let rows = self
            .joint
            .iter()
            .copied()
            .chain(self.singles1.iter().map(|&x| (x, 0.0)))
            .chain(self.singles2.iter().map(|&y| (0.0, y)));
        let records = rows
            .enumerate()
            .map(|(i, (x, y))| JumpRecord {
                time: (i as f64 + 1.0) * step,
                x,
                y,
            })
            .collect();
        JumpStream {
            xi,
            t: self.t,
            seed: 0,
            records,
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    /// Reads a dataset and validates it.
    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// Partitions the records with `time ≤ t` into joint jumps and single jumps
/// at threshold ε. Records with both coordinates below ε are dropped.
pub fn truncate(stream: &JumpStream, epsilon: f64, t: f64) -> Result<TruncatedDataset> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    // ξ comes out of a power and may round just above an intended ε = ξ
    if epsilon < stream.xi * (1.0 - 1e-12) {
        return Err(invalid(format!(
            "epsilon {epsilon} is below the simulation cutoff {}",
            stream.xi
        )));
    }
    if !(t > 0.0 && t <= stream.t) {
        return Err(invalid(format!("t must lie in (0, {}], got {t}", stream.t)));
    }
    let mut joint = Vec::new();
    let mut singles1 = Vec::new();
    let mut singles2 = Vec::new();
    for r in stream.records.iter().filter(|r| r.time <= t) {
        match (r.x >= epsilon, r.y >= epsilon) {
            (true, true) => joint.push((r.x, r.y)),
            (true, false) => singles1.push(r.x),
            (false, true) => singles2.push(r.y),
            (false, false) => {}
        }
    }
    Ok(TruncatedDataset {
        epsilon,
        t,
        joint,
        singles1,
        singles2,
    })
}

/// Sample moments of `(n, n‖)` across datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountMoments {
    pub samples: usize,
    pub mean_n: f64,
    pub mean_n_joint: f64,
    /// Empirical `E[n n‖]`.
    pub mean_n_times_joint: f64,
    /// Unbiased sample covariance of `n` and `n‖`.
    pub cov_n_joint: f64,
}

pub fn count_moments(datasets: &[TruncatedDataset]) -> Result<CountMoments> {
    count_moments_from(datasets.iter().map(|d| (d.n(), d.n_joint())))
}

/// Same as [`count_moments`] on raw `(n, n‖)` pairs.
pub fn count_moments_from(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<CountMoments> {
    let pairs: Vec<(f64, f64)> = pairs
        .into_iter()
        .map(|(a, b)| (a as f64, b as f64))
        .collect();
    let k = pairs.len();
    if k < 2 {
        return Err(Error::InsufficientData(format!(
            "count moments need at least 2 datasets, got {k}"
        )));
    }
    let kf = k as f64;
    let mean_n = pairs.iter().map(|p| p.0).sum::<f64>() / kf;
    let mean_j = pairs.iter().map(|p| p.1).sum::<f64>() / kf;
    let mean_prod = pairs.iter().map(|p| p.0 * p.1).sum::<f64>() / kf;
    let cov = pairs
        .iter()
        .map(|p| (p.0 - mean_n) * (p.1 - mean_j))
        .sum::<f64>()
        / (kf - 1.0);
    Ok(CountMoments {
        samples: k,
        mean_n,
        mean_n_joint: mean_j,
        mean_n_times_joint: mean_prod,
        cov_n_joint: cov,
    })
}
