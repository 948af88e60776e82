//! Structural approximations of the Y-cascade probability.
//!
//! * The tree iteration restarts from the comfort zone `[eta_n - 1, 1 - eta_n]`
//!   every time a branch comes back into it, and yields an enclosure after a
//!   fixed number of iterations.
//! * The sequence structure splits `[0, 1]` into stages of width `eta_y` plus a
//!   top stage `[1 - eta_n, 1]`, and sums the probability of a prefix-free
//!   family of Y-absorbing sequences, which is a lower bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CascadeError, Result};
use crate::model::{DerivedModel, ModelParams, Obs, Value};
use crate::walk::{classify_position, position, CascadeKind, CompensatedSum, ProbInterval, WALL_TOLERANCE};

pub const DEFAULT_DEPTH_CAP: usize = 10_000;
pub const DEFAULT_ITERATIONS: u32 = 10;

/// Positions from which a single observation can never reach a wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortZone {
    pub lo: f64,
    pub hi: f64,
}

impl ComfortZone {
    pub fn contains(&self, h: f64) -> bool {
        h >= self.lo - WALL_TOLERANCE && h <= self.hi + WALL_TOLERANCE
    }
}

pub fn comfort_zone(derived: &DerivedModel) -> ComfortZone {
    ComfortZone {
        lo: derived.eta_n - 1.0,
        hi: 1.0 - derived.eta_n,
    }
}

/// Bookkeeping of one tree run.
#[derive(Debug, Clone, Default)]
pub struct TreeIterationState {
    /// Restart points for the next iteration, keyed by lattice counts `(n_y, n_n)`.
    pub pending: BTreeMap<(u64, u64), f64>,
    pub acc_y: f64,
    pub acc_n: f64,
    /// Mass cut off by the per-iteration depth cap.
    pub truncated: f64,
}

impl TreeIterationState {
    pub fn pending_total(&self) -> f64 {
        let mut s = CompensatedSum::default();
        self.pending.values().for_each(|&m| s.add(m));
        s.value()
    }

    pub fn interval(&self) -> ProbInterval {
        ProbInterval::new(self.acc_y, self.acc_n, self.pending_total() + self.truncated)
    }
}

/// Run `m` comfort-zone iterations and return the final bookkeeping.
///
/// A branch ends an iteration when it is absorbed, when it re-enters the
/// comfort zone after having left it (it then restarts in the next iteration
/// at its exact position), or when the iteration's frontier passes
/// `depth_cap` levels beyond its last restart point. Branches at the same
/// lattice point are merged, so every restart gets at least `depth_cap` steps.
pub fn tree_iterations(params: &ModelParams, v: Value, m: u32, depth_cap: usize) -> Result<TreeIterationState> {
    if m == 0 || depth_cap == 0 {
        return Err(CascadeError::InvalidParams(
            "iterations and depth cap must both be >= 1".into(),
        ));
    }
    let derived = params.derive();
    let zone = comfort_zone(&derived);
    let pf = derived.forward_prob(v);
    let (ey, en) = (derived.eta_y, derived.eta_n);

    let mut acc_y = CompensatedSum::default();
    let mut acc_n = CompensatedSum::default();
    let mut truncated = CompensatedSum::default();
    let mut pending: BTreeMap<(u64, u64), f64> = BTreeMap::from([((0, 0), 1.0)]);

    for _ in 0..m {
        let (Some(&(y0, n0)), Some(last_start)) = (
            pending.keys().min_by_key(|(y, n)| y + n),
            pending.keys().map(|(y, n)| y + n).max(),
        ) else {
            break;
        };
        // Restart points grouped by lattice level n_y + n_n.
        let mut starts: BTreeMap<u64, Vec<(u64, f64)>> = BTreeMap::new();
        for (&(y, n), &mass) in &pending {
            starts.entry(y + n).or_default().push((y, mass));
        }
        let mut deferred: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        // (n_y, has_left_zone) -> mass, all at the current level
        let mut live: BTreeMap<(u64, bool), f64> = BTreeMap::new();
        let end_level = last_start + depth_cap as u64;

        for level in (y0 + n0)..end_level {
            if let Some(fresh) = starts.remove(&level) {
                for (y, mass) in fresh {
                    *live.entry((y, false)).or_default() += mass;
                }
            }
            if live.is_empty() && starts.is_empty() {
                break;
            }
            let mut next: BTreeMap<(u64, bool), f64> = BTreeMap::new();
            for (&(y, left), &mass) in &live {
                let n = level - y;
                for (ny, nn, prob) in [(y + 1, n, pf), (y, n + 1, 1.0 - pf)] {
                    let w = mass * prob;
                    let h = position(ny, nn, ey, en);
                    match classify_position(h) {
                        CascadeKind::YCascade => acc_y.add(w),
                        CascadeKind::NCascade => acc_n.add(w),
                        CascadeKind::Undecided => {
                            let inside = zone.contains(h);
                            if inside && left {
                                *deferred.entry((ny, nn)).or_default() += w;
                            } else {
                                *next.entry((ny, left || !inside)).or_default() += w;
                            }
                        }
                    }
                }
            }
            live = next;
        }
        live.values().for_each(|&mass| truncated.add(mass));
        pending = deferred;
    }

    Ok(TreeIterationState {
        pending,
        acc_y: acc_y.value(),
        acc_n: acc_n.value(),
        truncated: truncated.value(),
    })
}

pub fn tree_approx(params: &ModelParams, v: Value, m: u32, depth_cap: usize) -> Result<ProbInterval> {
    Ok(tree_iterations(params, v, m, depth_cap)?.interval())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDecomposition {
    /// Consecutive Ys that reach the right wall from 0: `ceil(1 / eta_y)`.
    pub r1: u64,
    /// Consecutive Ys that make up for one N: `ceil(eta_n / eta_y)`.
    pub t1: u64,
    /// Number of `eta_y`-wide stages below the top stage, `r1 - t1`.
    pub k_plus_1: u64,
    /// `0, eta_y, 2 eta_y, ..., 1 - eta_n, 1`
    pub boundaries: Vec<f64>,
}

impl StageDecomposition {
    /// Lower edge of the top stage, `1 - eta_n`.
    pub fn top_stage(&self) -> f64 {
        self.boundaries[self.boundaries.len() - 2]
    }
}

pub fn stage_decomposition(derived: &DerivedModel) -> Result<StageDecomposition> {
    let (ey, en) = (derived.eta_y, derived.eta_n);
    if en <= ey {
        return Err(CascadeError::UnsupportedRegime(format!(
            "sequence structure needs eta_n > eta_y (eta_y = {ey}, eta_n = {en})"
        )));
    }
    let r1 = (1.0 / ey).ceil() as u64;
    let t1 = (en / ey).ceil() as u64;
    if r1 <= t1 {
        return Err(CascadeError::UnsupportedRegime(format!(
            "sequence structure needs r1 - t1 >= 1 (r1 = {r1}, t1 = {t1})"
        )));
    }
    let top = 1.0 - en;
    let mut boundaries = vec![0.0];
    let mut j = 1u64;
    while (j as f64) * ey < top {
        boundaries.push(j as f64 * ey);
        j += 1;
    }
    if top > 0.0 {
        boundaries.push(top);
    }
    boundaries.push(1.0);
    Ok(StageDecomposition {
        r1,
        t1,
        k_plus_1: r1 - t1,
        boundaries,
    })
}

/// The family of sequences summed by [`sequence_lower_bound`]: every sequence
/// that first leaves `[-1, 1]` through the right wall at its last observation,
/// takes at most `max_returns` Ns from inside the top stage, and has at most
/// `horizon` observations.
#[derive(Debug, Clone)]
pub struct SequenceFamily {
    derived: DerivedModel,
    stages: StageDecomposition,
    max_returns: u32,
    horizon: usize,
}

impl SequenceFamily {
    pub fn new(params: &ModelParams, max_returns: u32, horizon: usize) -> Result<Self> {
        if max_returns == 0 || horizon == 0 {
            return Err(CascadeError::InvalidParams(
                "iterations and horizon must both be >= 1".into(),
            ));
        }
        let derived = params.derive();
        let stages = stage_decomposition(&derived)?;
        Ok(Self {
            derived,
            stages,
            max_returns,
            horizon,
        })
    }

    pub fn stages(&self) -> &StageDecomposition {
        &self.stages
    }

    fn in_top_stage(&self, h: f64) -> bool {
        h >= self.stages.top_stage() - WALL_TOLERANCE
    }

    /// Visit every sequence of the family in depth-first order (Y before N),
    /// stopping after `limit` sequences. Returns the number visited.
    pub fn for_each_sequence<F>(&self, v: Value, limit: usize, mut visit: F) -> usize
    where
        F: FnMut(&[Obs], f64),
    {
        let pf = self.derived.forward_prob(v);
        let mut path = Vec::with_capacity(self.horizon);
        let mut count = 0;
        self.descend(pf, &mut path, 0, 0, 0, 1.0, limit, &mut count, &mut visit);
        count
    }

    #[allow(clippy::too_many_arguments)]
    fn descend<F: FnMut(&[Obs], f64)>(
        &self,
        pf: f64,
        path: &mut Vec<Obs>,
        n_y: u64,
        n_n: u64,
        returns: u32,
        prob: f64,
        limit: usize,
        count: &mut usize,
        visit: &mut F,
    ) {
        if *count >= limit || path.len() >= self.horizon {
            return;
        }
        let (ey, en) = (self.derived.eta_y, self.derived.eta_n);
        let h = position(n_y, n_n, ey, en);
        for obs in [Obs::Y, Obs::N] {
            let (ny, nn, step_prob) = match obs {
                Obs::Y => (n_y + 1, n_n, pf),
                Obs::N => (n_y, n_n + 1, 1.0 - pf),
            };
            let r = returns + u32::from(obs == Obs::N && self.in_top_stage(h));
            if r > self.max_returns {
                continue;
            }
            path.push(obs);
            match classify_position(position(ny, nn, ey, en)) {
                CascadeKind::YCascade => {
                    if *count < limit {
                        *count += 1;
                        visit(path, prob * step_prob);
                    }
                }
                CascadeKind::NCascade => {}
                CascadeKind::Undecided => self.descend(pf, path, ny, nn, r, prob * step_prob, limit, count, visit),
            }
            path.pop();
        }
    }

    /// Total probability of the family, merging sequences that share
    /// `(n_y, n_n, returns)` so the cost is polynomial in the horizon.
    pub fn total_probability(&self, v: Value) -> f64 {
        let pf = self.derived.forward_prob(v);
        let (ey, en) = (self.derived.eta_y, self.derived.eta_n);
        let slots = self.max_returns as usize + 1;
        let mut total = CompensatedSum::default();

        // live[i * slots + r]: mass at n_y = lo + i with r returns used
        let mut lo: u64 = 0;
        let mut live = vec![0.0; slots];
        live[0] = 1.0;
        for level in 0..self.horizon as u64 {
            let width = live.len() / slots;
            let mut next = vec![0.0; (width + 1) * slots];
            for i in 0..width {
                let n_y = lo + i as u64;
                let top = self.in_top_stage(position(n_y, level - n_y, ey, en));
                for r in 0..slots {
                    let mass = live[i * slots + r];
                    if mass == 0.0 {
                        continue;
                    }
                    next[(i + 1) * slots + r] += mass * pf;
                    let rn = r + usize::from(top);
                    if rn < slots {
                        next[i * slots + rn] += mass * (1.0 - pf);
                    }
                }
            }
            let mut first = None;
            let mut last = 0;
            for i in 0..=width {
                let n_y = lo + i as u64;
                let cell = &mut next[i * slots..(i + 1) * slots];
                match classify_position(position(n_y, level + 1 - n_y, ey, en)) {
                    CascadeKind::YCascade => {
                        cell.iter().for_each(|&m| total.add(m));
                        cell.fill(0.0);
                    }
                    CascadeKind::NCascade => cell.fill(0.0),
                    CascadeKind::Undecided => {
                        if cell.iter().any(|&m| m != 0.0) {
                            first.get_or_insert(i);
                            last = i;
                        }
                    }
                }
            }
            let Some(f) = first else { break };
            lo += f as u64;
            live = next[f * slots..(last + 1) * slots].to_vec();
        }
        total.value()
    }
}

/// Certified lower bound on the Y-cascade probability from the stage structure
/// with at most `m` returns through the top stage.
pub fn sequence_lower_bound(params: &ModelParams, v: Value, m: u32) -> Result<f64> {
    sequence_lower_bound_with(params, v, m, DEFAULT_DEPTH_CAP)
}

pub fn sequence_lower_bound_with(params: &ModelParams, v: Value, m: u32, horizon: usize) -> Result<f64> {
    Ok(SequenceFamily::new(params, m, horizon)?.total_probability(v))
}
