//! Value iteration, policy evaluation and Q-learning.

use rand::Rng;

use super::linalg::{solve_fixed_point, SolveFailure, SparseRows};
use super::{ActionId, StateId, StochasticPolicy, TabularMdp, ValueTable};
use crate::error::{Error, Result};
use crate::rng::{sample_weighted, stream_rng};

/// Numerical settings shared by the exact solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Bellman residual target (value iteration) and Gauss-Seidel tolerance.
    pub tol: f64,
    /// Largest system solved by dense LU; bigger ones use Gauss-Seidel.
    pub dense_limit: usize,
    pub max_sweeps: usize,
    /// Actions whose q is within this of the best count as tied.
    pub tie_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            dense_limit: 2000,
            max_sweeps: 100_000,
            tie_tol: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig { tol, ..Default::default() }
    }
}

/// `q(s,a) = sum_s' p(s'|s,a) (r + gamma v(s'))`, flattened; zero where unavailable.
pub fn q_from_values(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    let na = mdp.n_actions();
    let gamma = mdp.discount();
    let mut q = vec![0.0; mdp.n_states() * na];
    for s in mdp.non_terminal_states() {
        for &a in mdp.available(s) {
            q[s * na + a] = mdp
                .transitions(s, a)
                .iter()
                .map(|t| t.prob * (t.reward + gamma * v[t.next]))
                .sum();
        }
    }
    q
}

/// Largest `|max_a q(s,a) - v(s)|` over non-terminal states.
pub fn bellman_residual(mdp: &TabularMdp, v: &[f64]) -> f64 {
    let q = q_from_values(mdp, v);
    let na = mdp.n_actions();
    mdp.non_terminal_states()
        .map(|s| {
            let best = mdp
                .available(s)
                .iter()
                .map(|&a| q[s * na + a])
                .fold(f64::NEG_INFINITY, f64::max);
            (best - v[s]).abs()
        })
        .fold(0.0, f64::max)
}

/// Deterministic greedy policy over a flattened q table. Ties (within
/// `tie_tol`, scaled by the magnitude of the best value) go to the lowest
/// action index.
pub fn greedy_policy(mdp: &TabularMdp, q: &[f64], tie_tol: f64) -> StochasticPolicy {
    let na = mdp.n_actions();
    let choice: Vec<Option<ActionId>> = (0..mdp.n_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                return None;
            }
            let av = mdp.available(s);
            let best = av.iter().map(|&a| q[s * na + a]).fold(f64::NEG_INFINITY, f64::max);
            let eps = tie_tol * best.abs().max(1.0);
            av.iter().copied().find(|&a| q[s * na + a] >= best - eps)
        })
        .collect();
    StochasticPolicy::deterministic(mdp, &choice).expect("greedy choice is always available")
}

/// Non-terminal states from which some terminal state is reachable when
/// following the support of `policy`.
pub(crate) fn reaches_terminal(mdp: &TabularMdp, policy: &StochasticPolicy) -> Vec<bool> {
    let n = mdp.n_states();
    let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for s in mdp.non_terminal_states() {
        for &a in mdp.available(s) {
            if policy.prob(s, a) <= 0.0 {
                continue;
            }
            for t in mdp.transitions(s, a) {
                if t.prob > 0.0 {
                    preds[t.next].push(s);
                }
            }
        }
    }
    let mut ok: Vec<bool> = (0..n).map(|s| mdp.is_terminal(s)).collect();
    let mut stack: Vec<StateId> = (0..n).filter(|&s| ok[s]).collect();
    while let Some(t) = stack.pop() {
        for &s in &preds[t] {
            if !ok[s] {
                ok[s] = true;
                stack.push(s);
            }
        }
    }
    ok
}

pub(crate) fn first_improper(mdp: &TabularMdp, policy: &StochasticPolicy) -> Option<StateId> {
    if mdp.discount() < 1.0 {
        return None;
    }
    let ok = reaches_terminal(mdp, policy);
    mdp.non_terminal_states().find(|&s| !ok[s])
}

/// Exact policy evaluation with default solver settings and tolerance `tol`.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &StochasticPolicy, tol: f64) -> Result<ValueTable> {
    policy_evaluation_with(mdp, policy, &SolverConfig::with_tol(tol))
}

pub fn policy_evaluation_with(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    cfg: &SolverConfig,
) -> Result<ValueTable> {
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if let Some(s) = first_improper(mdp, policy) {
        return Err(Error::EpisodicSolvability(format!(
            "policy never terminates from {} under gamma = 1",
            mdp.describe_state(s)
        )));
    }
    let n = mdp.n_states();
    let gamma = mdp.discount();
    let mut slot = vec![usize::MAX; n];
    let states: Vec<StateId> = mdp.non_terminal_states().collect();
    for (i, &s) in states.iter().enumerate() {
        slot[s] = i;
    }
    let mut rows: SparseRows = vec![Vec::new(); states.len()];
    let mut b = vec![0.0; states.len()];
    for (i, &s) in states.iter().enumerate() {
        for &a in mdp.available(s) {
            let pa = policy.prob(s, a);
            if pa <= 0.0 {
                continue;
            }
            for t in mdp.transitions(s, a) {
                b[i] += pa * t.prob * t.reward;
                if !mdp.is_terminal(t.next) {
                    rows[i].push((slot[t.next], gamma * pa * t.prob));
                }
            }
        }
    }
    let x = solve_fixed_point(&rows, &[b], cfg.dense_limit, cfg.tol * 1e-2, cfg.max_sweeps)
        .map_err(|f| match f {
            SolveFailure::Singular => Error::EpisodicSolvability("singular evaluation system".into()),
            SolveFailure::NotConverged(k) => {
                Error::EpisodicSolvability(format!("Gauss-Seidel did not converge in {k} sweeps"))
            }
        })?;
    let mut v = vec![0.0; n];
    for (i, &s) in states.iter().enumerate() {
        v[s] = x[0][i];
    }
    let q = q_from_values(mdp, &v);
    Ok(ValueTable::new(v, Some(q), mdp.n_actions()))
}

/// Value iteration to Bellman residual `tol`, returning the values and the
/// greedy policy (lowest action index on ties).
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(ValueTable, StochasticPolicy)> {
    value_iteration_with(mdp, &SolverConfig::with_tol(tol))
}

pub fn value_iteration_with(mdp: &TabularMdp, cfg: &SolverConfig) -> Result<(ValueTable, StochasticPolicy)> {
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let na = mdp.n_actions();
    let mut v = vec![0.0; mdp.n_states()];
    for _ in 0..cfg.max_sweeps {
        let q = q_from_values(mdp, &v);
        let mut next = vec![0.0; v.len()];
        let mut delta = 0.0f64;
        for s in mdp.non_terminal_states() {
            let best = mdp
                .available(s)
                .iter()
                .map(|&a| q[s * na + a])
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            next[s] = best;
        }
        if !delta.is_finite() {
            break;
        }
        v = next;
        if delta <= cfg.tol {
            let q = q_from_values(mdp, &v);
            let policy = greedy_policy(mdp, &q, cfg.tie_tol);
            return Ok((ValueTable::new(v, Some(q), na), policy));
        }
    }
    Err(Error::EpisodicSolvability(format!(
        "value iteration did not reach residual {} within {} sweeps",
        cfg.tol, cfg.max_sweeps
    )))
}

/// Tabular Q-learning settings.
#[derive(Clone, Debug, PartialEq)]
pub struct QLearningConfig {
    pub step_size: f64,
    pub episodes: usize,
    /// Epsilon of the epsilon-greedy behaviour policy.
    pub exploration: f64,
    pub seed: u64,
    /// Episodes are cut after this many steps (continuing tasks never end).
    pub max_steps: usize,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig {
            step_size: 0.1,
            episodes: 10_000,
            exploration: 0.1,
            seed: 0,
            max_steps: 1_000,
        }
    }
}

fn greedy_exact(mdp: &TabularMdp, q: &[f64], s: StateId) -> ActionId {
    let na = mdp.n_actions();
    let mut best = mdp.available(s)[0];
    for &a in mdp.available(s) {
        if q[s * na + a] > q[s * na + best] {
            best = a;
        }
    }
    best
}

/// Epsilon-greedy Q-learning from the initial distribution. Returns the
/// learned Q table and its greedy policy (exact ties go to the lowest index).
pub fn q_learning(mdp: &TabularMdp, cfg: &QLearningConfig) -> Result<(ValueTable, StochasticPolicy)> {
    if !(cfg.step_size > 0.0 && cfg.step_size <= 1.0) {
        return Err(Error::InvalidArgument("step size must lie in (0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&cfg.exploration) {
        return Err(Error::InvalidArgument("exploration must lie in [0, 1]".into()));
    }
    let na = mdp.n_actions();
    let gamma = mdp.discount();
    let mut q = vec![0.0; mdp.n_states() * na];
    let mut rng = stream_rng(cfg.seed, 0);
    for _ in 0..cfg.episodes {
        let mut s = sample_weighted(&mut rng, mdp.initial());
        for _ in 0..cfg.max_steps {
            if mdp.is_terminal(s) {
                break;
            }
            let av = mdp.available(s);
            let a = if rng.gen::<f64>() < cfg.exploration {
                av[rng.gen_range(0..av.len())]
            } else {
                greedy_exact(mdp, &q, s)
            };
            let row = mdp.transitions(s, a);
            let weights: Vec<f64> = row.iter().map(|t| t.prob).collect();
            let t = row[sample_weighted(&mut rng, &weights)];
            let next_best = if mdp.is_terminal(t.next) {
                0.0
            } else {
                let b = greedy_exact(mdp, &q, t.next);
                q[t.next * na + b]
            };
            let target = t.reward + gamma * next_best;
            let cell = &mut q[s * na + a];
            *cell += cfg.step_size * (target - *cell);
            s = t.next;
        }
    }
    let choice: Vec<Option<ActionId>> = (0..mdp.n_states())
        .map(|s| (!mdp.is_terminal(s)).then(|| greedy_exact(mdp, &q, s)))
        .collect();
    let policy = StochasticPolicy::deterministic(mdp, &choice)?;
    let v = (0..mdp.n_states())
        .map(|s| policy.mode(s).map_or(0.0, |a| q[s * na + a]))
        .collect();
    Ok((ValueTable::new(v, Some(q), na), policy))
}
