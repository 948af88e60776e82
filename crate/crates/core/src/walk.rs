//! Random-walk view of the cascade process.
//!
//! Until a cascade starts, the public history is summarised by the position
//! `h = n_y * eta_y - n_n * eta_n`. The walk is absorbed at the right wall
//! (`h > 1`, Y cascade) or the left wall (`h < -1`, N cascade). Positions are
//! always recomputed from the integer counts, never accumulated.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CascadeError, Result};
use crate::model::{DerivedModel, ModelParams, Obs, Value};

/// Band around the walls inside which a position still counts as undecided.
/// Exactly `h = 1` is a tie, and ties follow the private signal.
pub const WALL_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;
pub const DEFAULT_DEPTH: usize = 10_000;

/// Largest share of undecided trials an estimate may carry.
pub const MAX_UNDECIDED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CascadeKind {
    YCascade,
    NCascade,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeOutcome {
    pub kind: CascadeKind,
    /// Observations consumed before the outcome was settled.
    pub steps: u64,
}

/// Classify a position against the two walls.
pub fn classify_position(h: f64) -> CascadeKind {
    if h > 1.0 + WALL_TOLERANCE {
        CascadeKind::YCascade
    } else if h < -1.0 - WALL_TOLERANCE {
        CascadeKind::NCascade
    } else {
        CascadeKind::Undecided
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkState {
    pub n_y: u64,
    pub n_n: u64,
    eta_y: f64,
    eta_n: f64,
}

impl WalkState {
    pub fn origin(derived: &DerivedModel) -> Self {
        Self::at(derived, 0, 0)
    }

    pub fn at(derived: &DerivedModel, n_y: u64, n_n: u64) -> Self {
        Self {
            n_y,
            n_n,
            eta_y: derived.eta_y,
            eta_n: derived.eta_n,
        }
    }

    pub fn h(&self) -> f64 {
        position(self.n_y, self.n_n, self.eta_y, self.eta_n)
    }

    pub fn steps(&self) -> u64 {
        self.n_y + self.n_n
    }
}

#[inline]
pub(crate) fn position(n_y: u64, n_n: u64, eta_y: f64, eta_n: f64) -> f64 {
    n_y as f64 * eta_y - n_n as f64 * eta_n
}

pub fn classify(state: &WalkState) -> CascadeKind {
    classify_position(state.h())
}

/// Advance an undecided walk by one observation.
///
/// # Panics
///
/// Panics if `state` is already absorbed.
pub fn step(state: WalkState, obs: Obs) -> WalkState {
    assert_eq!(classify(&state), CascadeKind::Undecided, "cannot step an absorbed walk");
    let mut next = state;
    match obs {
        Obs::Y => next.n_y += 1,
        Obs::N => next.n_n += 1,
    }
    next
}

/// Replay observations until the first absorption. Returns the frozen state
/// and, if absorbed, the kind and the 1-based index of the absorbing observation.
pub fn replay(derived: &DerivedModel, observations: &[Obs]) -> (WalkState, Option<(CascadeKind, usize)>) {
    let mut state = WalkState::origin(derived);
    for (i, &obs) in observations.iter().enumerate() {
        state = step(state, obs);
        let kind = classify(&state);
        if kind != CascadeKind::Undecided {
            return (state, Some((kind, i + 1)));
        }
    }
    (state, None)
}

/// Run one walk with i.i.d. observations, Y with the forward probability of `v`.
pub fn simulate<R: Rng + ?Sized>(derived: &DerivedModel, v: Value, rng: &mut R, max_steps: u64) -> CascadeOutcome {
    assert!(max_steps >= 1, "max_steps must be at least 1");
    let pf = derived.forward_prob(v);
    let mut state = WalkState::origin(derived);
    for _ in 0..max_steps {
        let obs = if rng.random::<f64>() < pf { Obs::Y } else { Obs::N };
        state = step(state, obs);
        let kind = classify(&state);
        if kind != CascadeKind::Undecided {
            return CascadeOutcome {
                kind,
                steps: state.steps(),
            };
        }
    }
    CascadeOutcome {
        kind: CascadeKind::Undecided,
        steps: max_steps,
    }
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master`:
/// `mix64(master ^ mix64(index + 0x9E3779B97F4A7C15))`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// Random stream for one trial. Depends only on `(master, index)`, so
/// results do not depend on how trials are scheduled across threads.
pub fn trial_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(master, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    /// Y-cascade frequency among decided trials.
    pub p_hat: f64,
    pub std_err: f64,
    pub trials: u64,
    pub y_cascades: u64,
    pub undecided: u64,
    pub seed: u64,
}

/// Run `trials` independent trials in parallel and tally the outcomes.
pub(crate) fn run_trials<F>(trials: u64, seed: u64, trial: F) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> CascadeOutcome + Sync,
{
    if trials == 0 {
        return Err(CascadeError::InvalidParams("trials must be >= 1".into()));
    }
    let (y, undecided) = (0..trials)
        .into_par_iter()
        .map(|i| match trial(&mut trial_rng(seed, i)).kind {
            CascadeKind::YCascade => (1u64, 0u64),
            CascadeKind::NCascade => (0, 0),
            CascadeKind::Undecided => (0, 1),
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    if undecided as f64 / trials as f64 > MAX_UNDECIDED_FRACTION {
        return Err(CascadeError::TooManyUndecided { undecided, trials });
    }
    let decided = (trials - undecided) as f64;
    let p_hat = y as f64 / decided;
    Ok(McEstimate {
        p_hat,
        std_err: (p_hat * (1.0 - p_hat) / decided).sqrt(),
        trials,
        y_cascades: y,
        undecided,
        seed,
    })
}

pub fn mc_estimate(params: &ModelParams, v: Value, trials: u64, seed: u64, max_steps: u64) -> Result<McEstimate> {
    if max_steps == 0 {
        return Err(CascadeError::InvalidParams("max_steps must be >= 1".into()));
    }
    let derived = params.derive();
    run_trials(trials, seed, |rng| simulate(&derived, v, rng, max_steps))
}

/// Certified enclosure of a Y-cascade probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbInterval {
    pub y_lower: f64,
    pub y_upper: f64,
    /// Mass absorbed at the left wall.
    pub n_mass: f64,
    /// Mass not yet classified.
    pub pending: f64,
}

impl ProbInterval {
    pub fn new(y_lower: f64, n_mass: f64, pending: f64) -> Self {
        Self {
            y_lower,
            y_upper: (y_lower + pending).min(1.0),
            n_mass,
            pending,
        }
    }

    pub fn width(&self) -> f64 {
        self.y_upper - self.y_lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.y_lower + self.y_upper)
    }

    pub fn contains(&self, x: f64, slack: f64) -> bool {
        x >= self.y_lower - slack && x <= self.y_upper + slack
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Exact finite-horizon absorption masses over all walks of at most `depth` steps.
///
/// Level-synchronous DP over the lattice `(n_y, n_n)`; at a fixed level the
/// position grows with `n_y`, so the live states form one contiguous range.
pub fn exact_interval(params: &ModelParams, v: Value, depth: usize) -> ProbInterval {
    assert!(depth >= 1, "depth must be at least 1");
    let derived = params.derive();
    let pf = derived.forward_prob(v);
    let qf = 1.0 - pf;
    let (ey, en) = (derived.eta_y, derived.eta_n);

    let mut y_mass = CompensatedSum::default();
    let mut n_mass = CompensatedSum::default();
    // live[i] holds the mass at n_y = lo + i
    let mut lo: u64 = 0;
    let mut live: Vec<f64> = vec![1.0];
    let mut next: Vec<f64> = Vec::new();

    for level in 1..=depth as u64 {
        next.clear();
        next.resize(live.len() + 1, 0.0);
        for (i, &m) in live.iter().enumerate() {
            next[i] += m * qf;
            next[i + 1] += m * pf;
        }
        let mut first = None;
        let mut last = 0;
        for (i, m) in next.iter_mut().enumerate() {
            let n_y = lo + i as u64;
            match classify_position(position(n_y, level - n_y, ey, en)) {
                CascadeKind::YCascade => {
                    y_mass.add(*m);
                    *m = 0.0;
                }
                CascadeKind::NCascade => {
                    n_mass.add(*m);
                    *m = 0.0;
                }
                CascadeKind::Undecided => {
                    first.get_or_insert(i);
                    last = i;
                }
            }
        }
        match first {
            Some(f) => {
                lo += f as u64;
                live.clear();
                live.extend_from_slice(&next[f..=last]);
            }
            None => {
                live.clear();
                break;
            }
        }
    }

    let mut pending = CompensatedSum::default();
    live.iter().for_each(|&m| pending.add(m));
    ProbInterval::new(y_mass.value(), n_mass.value(), pending.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    /// Stream whose uniforms are all zero, forcing every comparison `u < p`.
    struct ZeroRng;

    impl RngCore for ZeroRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    fn params(p: f64, eps: f64, beta: f64) -> ModelParams {
        ModelParams::new(p, eps, beta).unwrap()
    }

    fn ruin(q: f64) -> f64 {
        q * q / (1.0 - 2.0 * q * (1.0 - q))
    }

    #[test]
    fn steps_move_position() {
        let d = params(0.7, 0.0, 0.0).derive();
        let s = step(WalkState::origin(&d), Obs::Y);
        assert_eq!(s.h(), 1.0);
        assert_eq!(step(s, Obs::N).h(), 0.0);

        let d = params(0.7, 0.3, 0.0).derive();
        let s = step(WalkState::origin(&d), Obs::Y);
        assert!((s.h() - 0.516_491_590_740_838_5).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "absorbed")]
    fn stepping_absorbed_walk_panics() {
        let d = params(0.7, 0.0, 0.0).derive();
        let s = WalkState::at(&d, 2, 0);
        step(s, Obs::N);
    }

    #[test]
    fn classification() {
        let d = params(0.7, 0.0, 0.0).derive();
        assert_eq!(classify(&WalkState::origin(&d)), CascadeKind::Undecided);
        assert_eq!(classify(&WalkState::at(&d, 2, 0)), CascadeKind::YCascade);
        assert_eq!(classify(&WalkState::at(&d, 0, 2)), CascadeKind::NCascade);
        // exactly on the wall is a tie, not a cascade
        assert_eq!(classify(&WalkState::at(&d, 1, 0)), CascadeKind::Undecided);
        assert_eq!(classify_position(1.0 + 5e-10), CascadeKind::Undecided);
        assert_eq!(classify_position(1.0 + 2e-9), CascadeKind::YCascade);
    }

    #[test]
    fn forced_y_stream_cascades_after_direct_run() {
        for &(eps, beta) in &[(0.0, 0.0), (0.3, 0.0), (0.45, 0.05), (0.1, 0.6)] {
            let d = params(0.7, eps, beta).derive();
            let out = simulate(&d, Value::Bad, &mut ZeroRng, 1000);
            assert_eq!(out.kind, CascadeKind::YCascade);
            assert_eq!(out.steps, d.direct_run());
            let ratio = 1.0 / d.eta_y;
            if ratio.fract() == 0.0 {
                // landing exactly on the wall is a tie
                assert_eq!(out.steps, ratio as u64 + 1);
            } else {
                assert_eq!(out.steps, ratio.ceil() as u64);
            }
        }
    }

    #[test]
    fn single_step_cap_is_undecided() {
        let d = params(0.7, 0.0, 0.0).derive();
        let mut rng = trial_rng(1, 0);
        let out = simulate(&d, Value::Bad, &mut rng, 1);
        assert_eq!(
            out,
            CascadeOutcome {
                kind: CascadeKind::Undecided,
                steps: 1
            }
        );
    }

    #[test]
    fn replay_stops_at_first_absorption() {
        let d = params(0.7, 0.0, 0.0).derive();
        let (s, hit) = replay(&d, &[Obs::Y, Obs::N, Obs::N, Obs::N, Obs::Y]);
        assert_eq!(hit, Some((CascadeKind::NCascade, 4)));
        assert_eq!(s.h(), -2.0);
        assert_eq!(replay(&d, &[Obs::Y, Obs::N]).1, None);
    }

    #[test]
    fn exact_interval_depth_ten() {
        let iv = exact_interval(&params(0.7, 0.0, 0.0), Value::Bad, 10);
        let stay: f64 = 0.42;
        assert!((iv.y_lower - 0.09 * (1.0 - stay.powi(5)) / 0.58).abs() < 1e-13);
        assert!((iv.pending - stay.powi(5)).abs() < 1e-13);
        assert!((iv.y_lower + iv.n_mass + iv.pending - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_interval_converges_to_ruin_probability() {
        for (v, q) in [(Value::Bad, 0.3), (Value::Good, 0.7)] {
            let iv = exact_interval(&params(0.7, 0.0, 0.0), v, 200);
            assert!(iv.width() < 1e-12);
            assert!(iv.contains(ruin(q), 1e-14), "{iv:?}");
        }
    }

    #[test]
    fn depth_one_cannot_reach_right_wall() {
        for &(eps, beta) in &[(0.0, 0.0), (0.3, 0.1), (0.05, 0.6)] {
            let iv = exact_interval(&params(0.7, eps, beta), Value::Good, 1);
            assert_eq!(iv.y_lower, 0.0);
            assert!((iv.pending + iv.n_mass - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn interval_narrows_with_depth() {
        let pm = params(0.7, 0.3, 0.1);
        let mut prev = exact_interval(&pm, Value::Bad, 1);
        for depth in [2, 5, 10, 20, 50, 100, 400] {
            let iv = exact_interval(&pm, Value::Bad, depth);
            assert!(iv.pending <= prev.pending + 1e-15);
            assert!(iv.y_lower >= prev.y_lower - 1e-15);
            assert!(iv.n_mass >= prev.n_mass - 1e-15);
            assert!((iv.y_lower + iv.n_mass + iv.pending - 1.0).abs() < 1e-12);
            prev = iv;
        }
    }

    #[test]
    fn mirror_symmetry() {
        for &p in &[0.6, 0.7, 0.8] {
            for &(eps, beta) in &[(0.0, 0.0), (0.1, 0.2), (0.3, 0.1), (0.2, 0.3)] {
                let pm = params(p, eps, beta);
                let bad = exact_interval(&pm, Value::Bad, 2000);
                let good = exact_interval(&pm.swapped(), Value::Good, 2000);
                assert!((bad.y_lower - good.n_mass).abs() < 1e-10);
                assert!((bad.n_mass - good.y_lower).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mc_within_band_and_deterministic() {
        let pm = params(0.7, 0.0, 0.0);
        let bad = mc_estimate(&pm, Value::Bad, 100_000, 7, DEFAULT_MAX_STEPS).unwrap();
        assert!((0.1507..=0.1597).contains(&bad.p_hat), "{bad:?}");
        let good = mc_estimate(&pm, Value::Good, 100_000, 7, DEFAULT_MAX_STEPS).unwrap();
        assert!((0.8403..=0.8493).contains(&good.p_hat), "{good:?}");
        assert_eq!(
            bad,
            mc_estimate(&pm, Value::Bad, 100_000, 7, DEFAULT_MAX_STEPS).unwrap()
        );
        assert_eq!(bad.undecided, 0);
    }

    #[test]
    fn mc_independent_of_thread_count() {
        let pm = params(0.7, 0.3, 0.1);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_estimate(&pm, Value::Bad, 20_000, 99, DEFAULT_MAX_STEPS).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn mc_rejects_degenerate_caps() {
        let pm = params(0.7, 0.3, 0.1);
        let err = mc_estimate(&pm, Value::Bad, 1000, 3, 1).unwrap_err();
        assert!(matches!(err, CascadeError::TooManyUndecided { .. }));
        assert!(mc_estimate(&pm, Value::Bad, 0, 3, 10).is_err());
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| trial_seed(42, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(trial_seed(1, 0), trial_seed(2, 0));
    }
}
