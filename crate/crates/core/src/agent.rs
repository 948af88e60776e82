//! Agent-level model: private signals, exact Bayesian posteriors over raw
//! observation histories, the optimal decision rule and the fake-agent channel.
//!
//! Nothing here uses the walk statistic `h`. Each observation's likelihood
//! under `G` and `B` is obtained by asking what an ordinary agent would do
//! for each possible signal, so the module serves as an independent check on
//! the walk reduction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CascadeError, Result};
use crate::model::{ModelParams, Obs, Value};
use crate::walk::{run_trials, CascadeKind, CascadeOutcome, CompensatedSum, McEstimate, ProbInterval};

/// Deepest history tree the exhaustive oracle will enumerate.
pub const MAX_ORACLE_DEPTH: usize = 25;

/// Half-width of the band around 1/2 in which the posterior counts as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signal {
    H,
    L,
}

impl Signal {
    pub const BOTH: [Signal; 2] = [Signal::H, Signal::L];

    /// Action taken by an agent that follows this signal.
    pub fn follow(self) -> Obs {
        match self {
            Signal::H => Obs::Y,
            Signal::L => Obs::N,
        }
    }

    fn prob_given(self, v: Value, p: f64) -> f64 {
        match (self, v) {
            (Signal::H, Value::Good) | (Signal::L, Value::Bad) => p,
            _ => 1.0 - p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentType {
    Ordinary,
    YFake,
    NFake,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentBelief {
    /// P(G | signal, history)
    pub posterior_g: f64,
    /// P(S | B) / P(S | G)
    pub private_lr: f64,
    /// P(history | B) / P(history | G)
    pub public_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentDraw {
    pub agent_type: AgentType,
    pub signal: Signal,
    pub action: Obs,
    pub observation: Obs,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    observations: Vec<Obs>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: Obs) {
        self.observations.push(obs);
    }

    pub fn as_slice(&self) -> &[Obs] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

impl From<Vec<Obs>> for History {
    fn from(observations: Vec<Obs>) -> Self {
        Self { observations }
    }
}

/// What everyone knows after a history: the public log-likelihood ratio
/// `ln P(history | B) - ln P(history | G)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublicRecord {
    params: ModelParams,
    log_lr: f64,
}

impl PublicRecord {
    pub fn new(params: ModelParams) -> Self {
        Self { params, log_lr: 0.0 }
    }

    pub fn from_history(params: ModelParams, history: &[Obs]) -> Self {
        history.iter().fold(Self::new(params), |mut rec, &obs| {
            rec.update(obs);
            rec
        })
    }

    pub fn public_lr(&self) -> f64 {
        self.log_lr.exp()
    }

    pub fn belief(&self, signal: Signal) -> AgentBelief {
        let p = self.params.p();
        let private_lr = match signal {
            Signal::H => (1.0 - p) / p,
            Signal::L => p / (1.0 - p),
        };
        let public_lr = self.public_lr();
        AgentBelief {
            posterior_g: 1.0 / (1.0 + private_lr * public_lr),
            private_lr,
            public_lr,
        }
    }

    /// The action an ordinary agent with `signal` takes after this history.
    pub fn action(&self, signal: Signal) -> Obs {
        decide(&self.belief(signal), signal)
    }

    /// The common action if the next agent ignores its signal.
    pub fn cascade(&self) -> Option<Obs> {
        let with_h = self.action(Signal::H);
        (with_h == self.action(Signal::L)).then_some(with_h)
    }

    /// P(A = Y | V, history) for an ordinary agent.
    pub fn action_y_prob(&self, v: Value) -> f64 {
        let p = self.params.p();
        Signal::BOTH
            .iter()
            .filter(|&&s| self.action(s) == Obs::Y)
            .map(|&s| s.prob_given(v, p))
            .sum()
    }

    /// P(O = obs | V, history), marginalising over agent type and signal.
    pub fn obs_prob(&self, v: Value, obs: Obs) -> f64 {
        let ordinary = 1.0 - self.params.fake_total();
        let act_y = self.action_y_prob(v);
        match obs {
            Obs::Y => self.params.eps() + ordinary * act_y,
            Obs::N => self.params.beta() + ordinary * (1.0 - act_y),
        }
    }

    pub fn update(&mut self, obs: Obs) {
        let given_b = self.obs_prob(Value::Bad, obs);
        let given_g = self.obs_prob(Value::Good, obs);
        // Inside a cascade both likelihoods coincide (possibly both zero)
        // and the observation carries no information.
        if given_b != given_g {
            self.log_lr += given_b.ln() - given_g.ln();
        }
    }
}

/// Exact posterior of an agent holding `signal` after `history`.
pub fn posterior(history: &History, signal: Signal, params: &ModelParams) -> AgentBelief {
    PublicRecord::from_history(*params, history.as_slice()).belief(signal)
}

/// Bayes-optimal action; ties follow the private signal.
pub fn decide(belief: &AgentBelief, signal: Signal) -> Obs {
    let margin = belief.posterior_g - 0.5;
    if margin > TIE_TOLERANCE {
        Obs::Y
    } else if margin < -TIE_TOLERANCE {
        Obs::N
    } else {
        signal.follow()
    }
}

/// What the agent's action looks like to its successors.
pub fn observe(action: Obs, agent_type: AgentType) -> Obs {
    match agent_type {
        AgentType::Ordinary => action,
        AgentType::YFake => Obs::Y,
        AgentType::NFake => Obs::N,
    }
}

/// Simulate agents one by one until the next agent would ignore its signal.
///
/// Each agent consumes two uniforms from `rng`: one for its type and one for
/// its private signal.
pub fn simulate_agents<R: Rng + ?Sized>(
    params: &ModelParams,
    v: Value,
    rng: &mut R,
    max_agents: u64,
) -> (CascadeOutcome, Vec<AgentDraw>) {
    let mut trace = Vec::new();
    let outcome = run_agents(params, v, rng, max_agents, Some(&mut trace));
    (outcome, trace)
}

fn run_agents<R: Rng + ?Sized>(
    params: &ModelParams,
    v: Value,
    rng: &mut R,
    max_agents: u64,
    mut trace: Option<&mut Vec<AgentDraw>>,
) -> CascadeOutcome {
    assert!(max_agents >= 1, "max_agents must be at least 1");
    let mut record = PublicRecord::new(*params);
    let mut consumed = 0u64;
    let p = params.p();
    loop {
        if let Some(action) = record.cascade() {
            let kind = match action {
                Obs::Y => CascadeKind::YCascade,
                Obs::N => CascadeKind::NCascade,
            };
            return CascadeOutcome { kind, steps: consumed };
        }
        if consumed == max_agents {
            return CascadeOutcome {
                kind: CascadeKind::Undecided,
                steps: consumed,
            };
        }

        let u_type: f64 = rng.random();
        let agent_type = if u_type < params.eps() {
            AgentType::YFake
        } else if u_type < params.fake_total() {
            AgentType::NFake
        } else {
            AgentType::Ordinary
        };
        let signal = if rng.random::<f64>() < Signal::H.prob_given(v, p) {
            Signal::H
        } else {
            Signal::L
        };
        let action = record.action(signal);
        let observation = observe(action, agent_type);
        record.update(observation);
        consumed += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(AgentDraw {
                agent_type,
                signal,
                action,
                observation,
            });
        }
    }
}

/// Monte Carlo estimate of the Y-cascade probability from the agent-level model.
pub fn agent_mc_estimate(
    params: &ModelParams,
    v: Value,
    trials: u64,
    seed: u64,
    max_agents: u64,
) -> Result<McEstimate> {
    if max_agents == 0 {
        return Err(CascadeError::InvalidParams("max_agents must be >= 1".into()));
    }
    run_trials(trials, seed, |rng| run_agents(params, v, rng, max_agents, None))
}

/// Enumerate every observation history up to `depth` and return the exact
/// masses of histories that have entered a Y cascade, an N cascade, or neither.
pub fn exhaustive_oracle(params: &ModelParams, v: Value, depth: usize) -> Result<ProbInterval> {
    if depth == 0 || depth > MAX_ORACLE_DEPTH {
        return Err(CascadeError::InvalidParams(format!(
            "oracle depth must be in 1..={MAX_ORACLE_DEPTH}, got {depth}"
        )));
    }
    let mut acc = OracleMass::default();
    explore(PublicRecord::new(*params), v, 1.0, 0, depth, &mut acc);
    Ok(ProbInterval::new(acc.y.value(), acc.n.value(), acc.pending.value()))
}

#[derive(Default)]
struct OracleMass {
    y: CompensatedSum,
    n: CompensatedSum,
    pending: CompensatedSum,
}

fn explore(record: PublicRecord, v: Value, mass: f64, len: usize, depth: usize, acc: &mut OracleMass) {
    match record.cascade() {
        Some(Obs::Y) => return acc.y.add(mass),
        Some(Obs::N) => return acc.n.add(mass),
        None => {}
    }
    if len == depth {
        return acc.pending.add(mass);
    }
    for obs in [Obs::Y, Obs::N] {
        let prob = record.obs_prob(v, obs);
        if prob > 0.0 {
            let mut child = record;
            child.update(obs);
            explore(child, v, mass * prob, len + 1, depth, acc);
        }
    }
}
