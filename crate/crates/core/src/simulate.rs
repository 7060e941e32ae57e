//! Jump-path simulation above a cutoff ξ and exact sampling of joint jumps.
//!
//! Paths follow the series construction for Lévy copulas: component-1 tail
//! levels `u` arrive as a Poisson process of rate 1 on `(0, τ]`, the partner
//! level `v` is drawn from the conditional law `F(v | u) = ∂C/∂u`, and both
//! levels are mapped back to jump sizes through the inverse marginal tails.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Open01, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{stream_rng, Execution, StreamRng};
use crate::model::{
    log_intensities, marginal_tail, marginal_tail_inverse, tail_inverse_unchecked, Component,
    ModelParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Expected number of component-1 jumps above ξ per unit time.
    pub tau: f64,
    pub t: f64,
    pub seed: u64,
    /// Also simulate jumps with `x < ξ` and `y ≥ ξ` from the reversed
    /// conditional construction. Off by default.
    #[serde(default)]
    pub symmetrize: bool,
}

impl SimulationConfig {
    pub fn new(tau: f64, t: f64, seed: u64) -> Result<Self> {
        let cfg = SimulationConfig {
            tau,
            t,
            seed,
            symmetrize: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn symmetrized(mut self, on: bool) -> Self {
        self.symmetrize = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return Err(invalid(format!("t must be positive, got {}", self.t)));
        }
        Ok(())
    }

    /// Simulation cutoff `ξ = Π̄₁^←(τ)`.
    pub fn xi(&self, params: &ModelParams) -> Result<f64> {
        marginal_tail_inverse(Component::First, self.tau, params)
    }
}

/// One simulated jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct JumpRecord {
    pub time: f64,
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 3]> for JumpRecord {
    fn from([time, x, y]: [f64; 3]) -> Self {
        JumpRecord { time, x, y }
    }
}

impl From<JumpRecord> for [f64; 3] {
    fn from(r: JumpRecord) -> Self {
        [r.time, r.x, r.y]
    }
}

/// Time-ordered jumps of one simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpStream {
    pub xi: f64,
    pub t: f64,
    pub seed: u64,
    pub records: Vec<JumpRecord>,
}

impl JumpStream {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let s: JumpStream = serde_json::from_reader(r)?;
        s.validate()?;
        Ok(s)
    }

    /// Writes `time,x,y` rows with a header line.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time", "x", "y"])?;
        for r in &self.records {
            out.serialize((r.time, r.x, r.y))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads `time,x,y` rows; the CSV form carries no header metadata, so the
    /// cutoff and horizon are supplied by the caller.
    pub fn read_csv<R: Read>(r: R, xi: f64, t: f64, seed: u64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut records = Vec::new();
        for row in rdr.deserialize() {
            let (time, x, y): (f64, f64, f64) = row?;
            records.push(JumpRecord { time, x, y });
        }
        let s = JumpStream {
            xi,
            t,
            seed,
            records,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.t > 0.0) {
            return Err(invalid("stream needs positive xi and t"));
        }
        let mut last = f64::NEG_INFINITY;
        for r in &self.records {
            if !(r.time >= 0.0 && r.time <= self.t && r.time >= last) {
                return Err(invalid(format!("record time {} out of order or range", r.time)));
            }
            if !(r.x >= 0.0 && r.y >= 0.0) || (r.x == 0.0 && r.y == 0.0) {
                return Err(invalid(format!("invalid jump ({}, {})", r.x, r.y)));
            }
            last = r.time;
        }
        Ok(())
    }
}

/// Inverts `w = F(v | u) = (1 + (u/v)^δ)^(-1-1/δ)`:
/// `v = u (w^(-δ/(1+δ)) − 1)^(-1/δ)`.
pub fn clayton_conditional_inverse(w: f64, u: f64, delta: f64) -> f64 {
    let core = (-(delta / (1.0 + delta)) * w.ln()).exp_m1();
    (u.ln() - core.ln() / delta).exp()
}

fn open01(rng: &mut StreamRng) -> f64 {
    Open01.sample(rng)
}

fn poisson_count(rng: &mut StreamRng, mean: f64) -> Result<u64> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| invalid(format!("poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Simulates one path over `[0, t]` with all component-1 jumps above ξ.
///
/// The partner coordinate `y` is unrestricted and may fall below ξ. With
/// `symmetrize` the jumps with `x < ξ ≤ y` are added as well.
pub fn simulate_path(params: &ModelParams, config: &SimulationConfig) -> Result<JumpStream> {
    config.validate()?;
    let xi = config.xi(params)?;
    let delta = params.delta();
    let mut records = Vec::new();

    let mut rng = stream_rng(config.seed, 0);
    let n = poisson_count(&mut rng, config.tau * config.t)?;
    records.reserve(n as usize);
    for _ in 0..n {
        let time = config.t * rng.random::<f64>();
        let u = config.tau * (1.0 - rng.random::<f64>());
        let x = tail_inverse_unchecked(Component::First, u, params);
        let v = clayton_conditional_inverse(open01(&mut rng), u, delta);
        let y = tail_inverse_unchecked(Component::Second, v, params);
        records.push(JumpRecord { time, x, y });
    }

    if config.symmetrize {
        let tau2 = marginal_tail(Component::Second, xi, params)?;
        let mut rng = stream_rng(config.seed, 1);
        let n = poisson_count(&mut rng, tau2 * config.t)?;
        for _ in 0..n {
            let time = config.t * rng.random::<f64>();
            let v = tau2 * (1.0 - rng.random::<f64>());
            let y = tail_inverse_unchecked(Component::Second, v, params);
            let u = clayton_conditional_inverse(open01(&mut rng), v, delta);
            let x = tail_inverse_unchecked(Component::First, u, params);
            if x < xi {
                records.push(JumpRecord { time, x, y });
            }
        }
    }

    records.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(JumpStream {
        xi,
        t: config.t,
        seed: config.seed,
        records,
    })
}

/// Joint jumps drawn by rejection, with the number of proposals used.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPairSample {
    pub pairs: Vec<(f64, f64)>,
    pub proposals: u64,
}

impl JointPairSample {
    pub fn acceptance_rate(&self) -> f64 {
        self.pairs.len() as f64 / self.proposals as f64
    }
}

const PAIR_CHUNK: usize = 1 << 14;

/// Draws `count` i.i.d. joint jumps from the density on `[ε, ∞)²`.
///
/// `x` is Pareto(α₁) anchored at ε, `y` comes from the conditional transform,
/// and the pair is kept iff `y ≥ ε`. Work is split into fixed-size chunks with
/// their own streams, so the output is the same for any execution mode.
pub fn sample_joint_jump_pairs(
    params: &ModelParams,
    epsilon: f64,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<JointPairSample> {
    if count == 0 {
        return Err(invalid("count must be at least 1"));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let (l1, _, _) = log_intensities(params, epsilon);
    let lambda1 = l1.exp();
    let delta = params.delta();
    let chunks = count.div_ceil(PAIR_CHUNK);
    let parts = exec.map(chunks, |i| {
        let want = PAIR_CHUNK.min(count - i * PAIR_CHUNK);
        let mut rng = stream_rng(seed, i as u64);
        let mut pairs = Vec::with_capacity(want);
        let mut proposals = 0u64;
        while pairs.len() < want {
            proposals += 1;
            let u = lambda1 * (1.0 - rng.random::<f64>());
            let v = clayton_conditional_inverse(open01(&mut rng), u, delta);
            let y = tail_inverse_unchecked(Component::Second, v, params);
            if y >= epsilon {
                let x = tail_inverse_unchecked(Component::First, u, params);
                pairs.push((x.max(epsilon), y));
            }
        }
        (pairs, proposals)
    });
    let mut out = JointPairSample {
        pairs: Vec::with_capacity(count),
        proposals: 0,
    };
    for (p, n) in parts {
        out.pairs.extend(p);
        out.proposals += n;
    }
    if out.pairs.iter().any(|&(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::Numerical("non-finite joint jump drawn".into()));
    }
    Ok(out)
}
