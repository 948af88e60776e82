//! Model parameters, closed-form derived quantities and cascade thresholds.
//!
//! An agent is a Y-type fake with probability `eps`, an N-type fake with
//! probability `beta`, and ordinary otherwise. Ordinary agents receive a
//! private signal through a binary symmetric channel of quality `p`.
//! Before a cascade, every observation moves the public log-likelihood by a
//! fixed weight, so the history collapses to the statistic
//! `h = n_y * eta_y - n_n * eta_n` measured in units of `ln(p / (1 - p))`.

use serde::{Deserialize, Serialize};

use crate::error::{CascadeError, Result};

/// True value of the item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Value {
    #[serde(rename = "G")]
    Good,
    #[serde(rename = "B")]
    Bad,
}

impl Value {
    pub fn label(self) -> &'static str {
        match self {
            Value::Good => "G",
            Value::Bad => "B",
        }
    }
}

impl std::str::FromStr for Value {
    type Err = CascadeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G" | "g" | "good" => Ok(Value::Good),
            "B" | "b" | "bad" => Ok(Value::Bad),
            other => Err(CascadeError::InvalidParams(format!(
                "true value must be G or B, got {other:?}"
            ))),
        }
    }
}

/// An observed (reported) action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Obs {
    Y,
    N,
}

/// Signal quality and fake-agent fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    p: f64,
    eps: f64,
    beta: f64,
    fake_total: f64,
}

impl ModelParams {
    pub fn new(p: f64, eps: f64, beta: f64) -> Result<Self> {
        if !(p.is_finite() && eps.is_finite() && beta.is_finite()) {
            return Err(CascadeError::InvalidParams("p, eps and beta must be finite".into()));
        }
        if !(p > 0.5 && p < 1.0) {
            return Err(CascadeError::InvalidParams(format!(
                "signal quality must satisfy 1/2 < p < 1, got p = {p}"
            )));
        }
        if eps < 0.0 || beta < 0.0 {
            return Err(CascadeError::InvalidParams(format!(
                "fake fractions must be non-negative, got eps = {eps}, beta = {beta}"
            )));
        }
        if eps + beta >= 1.0 {
            return Err(CascadeError::InvalidParams(format!(
                "fake fractions must satisfy eps + beta < 1, got {}",
                eps + beta
            )));
        }
        Ok(Self {
            p,
            eps,
            beta,
            fake_total: eps + beta,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Total probability that an agent is fake.
    pub fn fake_total(&self) -> f64 {
        self.fake_total
    }

    /// The same signal quality with the two fake types exchanged.
    pub fn swapped(&self) -> Self {
        Self::new(self.p, self.beta, self.eps).expect("swap preserves validity")
    }

    pub fn derive(&self) -> DerivedModel {
        derive(self)
    }
}

/// Closed-form quantities that drive the walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedModel {
    /// P(O = Y | V = G) while agents follow their signals.
    pub a: f64,
    /// P(O = N | V = B) while agents follow their signals.
    pub b: f64,
    /// p / (1 - p)
    pub alpha: f64,
    pub eta_y: f64,
    pub eta_n: f64,
    /// Forward jump probability under V = G.
    pub pf_g: f64,
    /// Forward jump probability under V = B.
    pub pf_b: f64,
}

impl DerivedModel {
    pub fn forward_prob(&self, v: Value) -> f64 {
        match v {
            Value::Good => self.pf_g,
            Value::Bad => self.pf_b,
        }
    }

    /// Number of consecutive Ys that carry the walk from 0 past the right wall.
    pub fn direct_run(&self) -> u64 {
        steps_to_exceed(1.0, self.eta_y)
    }
}

// Probability that an observation matches the true value: fakes of the
// "with" type always report the value, fakes of the "against" type never do.
fn matching_obs_prob(p: f64, with_value: f64, against_value: f64) -> f64 {
    p * (1.0 - against_value) + with_value * (1.0 - p)
}

fn step_weight(other_matching: f64, excess: f64, log_alpha: f64, fake_against: f64) -> f64 {
    // With no fakes reporting against the value the ratio is exactly alpha.
    if fake_against == 0.0 {
        return 1.0;
    }
    ((excess / (1.0 - other_matching)).ln_1p() / log_alpha).min(1.0)
}

pub fn derive(params: &ModelParams) -> DerivedModel {
    let p = params.p;
    let a = matching_obs_prob(p, params.eps, params.beta);
    let b = matching_obs_prob(p, params.beta, params.eps);
    let alpha = p / (1.0 - p);
    let log_alpha = alpha.ln();
    // a + b - 1, positive for every valid parameter triple
    let excess = (2.0 * p - 1.0) * (1.0 - params.fake_total);
    DerivedModel {
        a,
        b,
        alpha,
        eta_y: step_weight(b, excess, log_alpha, params.eps),
        eta_n: step_weight(a, excess, log_alpha, params.beta),
        pf_g: a,
        pf_b: 1.0 - b,
    }
}

/// Smallest `n >= 1` with `n * step` beyond `target` by more than the wall tolerance.
pub(crate) fn steps_to_exceed(target: f64, step: f64) -> u64 {
    let mut n = (target / step).floor().max(0.0) as u64;
    while (n as f64) * step <= target + crate::walk::WALL_TOLERANCE {
        n += 1;
    }
    n.max(1)
}

/// The ε at which `r` consecutive Ys exactly balance one low signal,
/// i.e. `r * eta_y(ε) = 1`.
pub fn bayesian_threshold(p: f64, beta: f64, r: u32) -> Result<f64> {
    ModelParams::new(p, 0.0, beta)?;
    if r == 0 {
        return Err(CascadeError::InvalidParams("threshold order r must be >= 1".into()));
    }
    let alpha = p / (1.0 - p);
    let root = alpha.powf(1.0 / r as f64);
    Ok((1.0 - beta) * (alpha - root) / (root * alpha - 1.0))
}

/// A point where `r` Ys and `k` Ns sit exactly on the right cascade wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub r: u32,
    pub k: u32,
    pub eps_value: f64,
}

const ROOT_SCAN_POINTS: usize = 4096;
const ROOT_TOL: f64 = 1e-12;

/// All ε in `[0, 1 - beta)` solving `r * eta_y(ε) - k * eta_n(ε) = 1`.
///
/// The left side is a difference of two functions decreasing in ε, so it is
/// not monotone in general; the interval is scanned for sign changes and each
/// bracket is refined by bisection.
pub fn solve_threshold(p: f64, beta: f64, r: u32, k: u32) -> Result<Vec<f64>> {
    ModelParams::new(p, 0.0, beta)?;
    if r == 0 {
        return Err(CascadeError::InvalidParams("threshold order r must be >= 1".into()));
    }
    let upper = 1.0 - beta;
    let f = |eps: f64| {
        let d = derive(&ModelParams::new(p, eps, beta).expect("eps inside [0, 1 - beta)"));
        r as f64 * d.eta_y - k as f64 * d.eta_n - 1.0
    };

    let mut roots = Vec::new();
    let f0 = f(0.0);
    if f0.abs() <= ROOT_TOL {
        roots.push(0.0);
    }
    // Both weights vanish at 1 - beta, so the scan stops just short of it.
    let mut prev_x = 0.0;
    let mut prev_f = f0;
    for i in 1..=ROOT_SCAN_POINTS {
        let x = upper * (i as f64 / ROOT_SCAN_POINTS as f64) * (1.0 - 1e-9);
        let fx = f(x);
        if fx.abs() <= ROOT_TOL {
            roots.push(x);
        } else if prev_f.abs() > ROOT_TOL && prev_f.signum() != fx.signum() {
            roots.push(bisect(&f, prev_x, x, prev_f));
        }
        prev_x = x;
        prev_f = fx;
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    Ok(roots)
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, f_lo: f64) -> f64 {
    let lo_sign = f_lo.signum();
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Bayesian (`k = 0`) and higher-order cascade thresholds, sorted by ε.
pub fn cascade_thresholds(p: f64, beta: f64, r_max: u32, k_max: u32) -> Result<Vec<ThresholdPoint>> {
    if r_max == 0 {
        return Err(CascadeError::InvalidParams("r_max must be >= 1".into()));
    }
    let mut out = Vec::new();
    for r in 1..=r_max {
        out.push(ThresholdPoint {
            r,
            k: 0,
            eps_value: bayesian_threshold(p, beta, r)?,
        });
        for k in 1..=k_max {
            for eps_value in solve_threshold(p, beta, r, k)? {
                out.push(ThresholdPoint { r, k, eps_value });
            }
        }
    }
    out.retain(|t| t.eps_value >= 0.0 && t.eps_value < 1.0 - beta);
    out.sort_by(|x, y| {
        x.eps_value
            .total_cmp(&y.eps_value)
            .then(x.k.cmp(&y.k))
            .then(x.r.cmp(&y.r))
    });
    Ok(out)
}
