//! Steady-state occupancy and feature-conditional state distributions.

use rand::Rng;

use super::linalg::{solve_fixed_point, SolveFailure, SparseRows};
use super::solve::reaches_terminal;
use super::{FeatureValue, OccupancyDistribution, StateId, StochasticPolicy, TabularMdp};
use crate::error::{Error, Result};
use crate::rng::{sample_weighted, stream_rng};

const DENSE_LIMIT: usize = 2000;

/// Normalised per-episode visitation of non-terminal states.
///
/// With `gamma = 1` this solves the visit-count system `mu = d + P_pi^T mu`;
/// with `gamma < 1` the discounted visitation `mu = d + gamma P_pi^T mu`.
/// Only states reachable from the initial distribution enter the system.
pub fn steady_state_distribution(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<OccupancyDistribution> {
    policy.validate(mdp)?;
    let n = mdp.n_states();
    let gamma = mdp.discount();

    let mut reachable = vec![false; n];
    let mut stack: Vec<StateId> = (0..n).filter(|&s| mdp.initial()[s] > 0.0).collect();
    for &s in &stack {
        reachable[s] = true;
    }
    while let Some(s) = stack.pop() {
        if mdp.is_terminal(s) {
            continue;
        }
        for &a in mdp.available(s) {
            if policy.prob(s, a) <= 0.0 {
                continue;
            }
            for t in mdp.transitions(s, a) {
                if t.prob > 0.0 && !reachable[t.next] {
                    reachable[t.next] = true;
                    stack.push(t.next);
                }
            }
        }
    }

    if gamma >= 1.0 {
        let ok = reaches_terminal(mdp, policy);
        if let Some(s) = (0..n).find(|&s| reachable[s] && !ok[s]) {
            return Err(Error::ImproperPolicy(format!(
                "episodes never terminate from {}",
                mdp.describe_state(s)
            )));
        }
    }

    let states: Vec<StateId> = (0..n).filter(|&s| reachable[s] && !mdp.is_terminal(s)).collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &s) in states.iter().enumerate() {
        slot[s] = i;
    }
    // Row i of the transposed system collects inflow into states[i].
    let mut rows: SparseRows = vec![Vec::new(); states.len()];
    for (j, &s) in states.iter().enumerate() {
        for &a in mdp.available(s) {
            let pa = policy.prob(s, a);
            if pa <= 0.0 {
                continue;
            }
            for t in mdp.transitions(s, a) {
                if !mdp.is_terminal(t.next) && t.prob > 0.0 {
                    rows[slot[t.next]].push((j, gamma * pa * t.prob));
                }
            }
        }
    }
    let d: Vec<f64> = states.iter().map(|&s| mdp.initial()[s]).collect();
    let mu = solve_fixed_point(&rows, &[d], DENSE_LIMIT, 1e-13, 1_000_000).map_err(|f| match f {
        SolveFailure::Singular => Error::ImproperPolicy("singular visit-count system".into()),
        SolveFailure::NotConverged(k) => {
            Error::ImproperPolicy(format!("visit-count iteration did not converge in {k} sweeps"))
        }
    })?;
    let total: f64 = mu[0].iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ImproperPolicy("no visitation mass".into()));
    }
    let mut p = vec![0.0; n];
    for (i, &s) in states.iter().enumerate() {
        p[s] = mu[0][i].max(0.0) / total;
    }
    Ok(OccupancyDistribution { p })
}

/// A partial assignment of feature values, as domain indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    pairs: Vec<(usize, u32)>,
}

impl Assignment {
    pub fn empty() -> Self {
        Assignment::default()
    }

    /// Fixes `feature` to the domain index `value`.
    pub fn with(mut self, feature: usize, value: u32) -> Self {
        self.pairs.retain(|&(f, _)| f != feature);
        self.pairs.push((feature, value));
        self.pairs.sort_unstable();
        self
    }

    /// The features selected by `mask` (bit `i` = feature `i`) taken from `s`.
    pub fn from_state(mdp: &TabularMdp, s: StateId, mask: u64) -> Self {
        let pairs = mdp
            .features(s)
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(i, &v)| (i, v))
            .collect();
        Assignment { pairs }
    }

    /// Builds from concrete values, looked up in the MDP's schema.
    pub fn from_values(mdp: &TabularMdp, values: &[(usize, FeatureValue)]) -> Result<Self> {
        let mut out = Assignment::empty();
        for (f, v) in values {
            if *f >= mdp.n_features() {
                return Err(Error::InvalidArgument(format!("feature index {f} out of range")));
            }
            let idx = mdp.schema().value_index(*f, v).ok_or_else(|| {
                Error::InvalidArgument(format!("`{v}` is not in the domain of `{}`", mdp.schema().name(*f)))
            })?;
            out = out.with(*f, idx);
        }
        Ok(out)
    }

    pub fn pairs(&self) -> &[(usize, u32)] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn matches(&self, features: &[u32]) -> bool {
        !features.is_empty() && self.pairs.iter().all(|&(f, v)| features[f] == v)
    }

    pub fn describe(&self, mdp: &TabularMdp) -> String {
        if self.pairs.is_empty() {
            return "{}".into();
        }
        let parts: Vec<String> = self
            .pairs
            .iter()
            .map(|&(f, v)| format!("{}={}", mdp.schema().name(f), mdp.schema().value(f, v)))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

/// What to do when no visited state matches an assignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ZeroMassPolicy {
    #[default]
    Error,
    /// Uniform over all non-terminal states matching the assignment.
    UniformFallback,
}

/// `p(s | S_C = s_C)`: the occupancy restricted to matching states and
/// renormalised.
pub fn conditional_state_distribution(
    mdp: &TabularMdp,
    occ: &OccupancyDistribution,
    assignment: &Assignment,
    zero_mass: ZeroMassPolicy,
) -> Result<OccupancyDistribution> {
    if assignment.is_empty() {
        return Ok(occ.clone());
    }
    let n = mdp.n_states();
    let mut p = vec![0.0; n];
    let mut total = 0.0;
    for s in occ.support() {
        if assignment.matches(mdp.features(s)) {
            p[s] = occ.prob(s);
            total += p[s];
        }
    }
    if total > 0.0 {
        for x in &mut p {
            *x /= total;
        }
        return Ok(OccupancyDistribution { p });
    }
    match zero_mass {
        ZeroMassPolicy::Error => Err(Error::ZeroMassConditioning(assignment.describe(mdp))),
        ZeroMassPolicy::UniformFallback => {
            let matching: Vec<StateId> = mdp
                .non_terminal_states()
                .filter(|&s| assignment.matches(mdp.features(s)))
                .collect();
            if matching.is_empty() {
                return Err(Error::ZeroMassConditioning(format!(
                    "{} matches no state",
                    assignment.describe(mdp)
                )));
            }
            for &s in &matching {
                p[s] = 1.0 / matching.len() as f64;
            }
            Ok(OccupancyDistribution { p })
        }
    }
}

/// Empirical occupancy over `steps` simulated steps. Episodes restart from
/// the initial distribution on termination; with `gamma < 1` each step also
/// ends the episode with probability `1 - gamma`.
pub fn simulate_occupancy(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    steps: usize,
    seed: u64,
) -> OccupancyDistribution {
    let mut rng = stream_rng(seed, 0);
    let mut counts = vec![0u64; mdp.n_states()];
    let gamma = mdp.discount();
    let mut s = sample_weighted(&mut rng, mdp.initial());
    for _ in 0..steps {
        counts[s] += 1;
        let a = sample_weighted(&mut rng, policy.row(s));
        let row = mdp.transitions(s, a);
        let weights: Vec<f64> = row.iter().map(|t| t.prob).collect();
        let next = row[sample_weighted(&mut rng, &weights)].next;
        let stop = mdp.is_terminal(next) || (gamma < 1.0 && rng.gen::<f64>() >= gamma);
        s = if stop { sample_weighted(&mut rng, mdp.initial()) } else { next };
    }
    let total: u64 = counts.iter().sum();
    OccupancyDistribution {
        p: counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect(),
    }
}
