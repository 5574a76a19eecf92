//! Finite MDPs with feature-decomposed states.
//!
//! States are indexed `0..n_states`. Every non-terminal state carries a
//! feature vector (one domain index per feature of the [`FeatureSchema`]);
//! terminal states may carry an empty vector since they never take part in
//! explanations. Transitions are stored sparsely per `(state, action)` pair.

mod interchange;
pub(crate) mod linalg;
mod occupancy;
mod solve;
mod validate;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use interchange::{MdpDocument, TransitionTriplet};
pub use occupancy::{
    conditional_state_distribution, simulate_occupancy, steady_state_distribution, Assignment,
    ZeroMassPolicy,
};
pub use solve::{
    bellman_residual, greedy_policy, policy_evaluation, policy_evaluation_with, q_from_values,
    q_learning, value_iteration, value_iteration_with, QLearningConfig, SolverConfig,
};
pub use validate::{validate_mdp, ValidationReport, Violation, ViolationKind};

pub type StateId = usize;
pub type ActionId = usize;

/// Probabilities are compared against this tolerance when checking rows.
pub const PROB_TOL: f64 = 1e-9;

/// A single feature value: either an integer or a symbol.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Int(i64),
    Sym(String),
}

impl FeatureValue {
    pub fn sym(s: impl Into<String>) -> Self {
        FeatureValue::Sym(s.into())
    }

    /// Parses a selector token: integers become `Int`, anything else `Sym`.
    pub fn parse(token: &str) -> Self {
        match token.trim().parse::<i64>() {
            Ok(i) => FeatureValue::Int(i),
            Err(_) => FeatureValue::Sym(token.trim().to_string()),
        }
    }
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Int(i) => write!(f, "{i}"),
            FeatureValue::Sym(s) => f.write_str(s),
        }
    }
}

impl From<i64> for FeatureValue {
    fn from(v: i64) -> Self {
        FeatureValue::Int(v)
    }
}

impl From<&str> for FeatureValue {
    fn from(v: &str) -> Self {
        FeatureValue::Sym(v.to_string())
    }
}

/// Names and finite value domains of the state features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    names: Vec<String>,
    domains: Vec<Vec<FeatureValue>>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>, domains: Vec<Vec<FeatureValue>>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("schema needs at least one feature".into()));
        }
        if names.len() != domains.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature names but {} domains",
                names.len(),
                domains.len()
            )));
        }
        for (name, dom) in names.iter().zip(&domains) {
            if dom.is_empty() {
                return Err(Error::InvalidArgument(format!("feature `{name}` has an empty domain")));
            }
            let mut sorted = dom.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != dom.len() {
                return Err(Error::InvalidArgument(format!(
                    "feature `{name}` has duplicate domain values"
                )));
            }
        }
        Ok(FeatureSchema { names, domains })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, feature: usize) -> &str {
        &self.names[feature]
    }

    pub fn domain(&self, feature: usize) -> &[FeatureValue] {
        &self.domains[feature]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value_index(&self, feature: usize, value: &FeatureValue) -> Option<u32> {
        self.domains[feature].iter().position(|v| v == value).map(|i| i as u32)
    }

    pub fn value(&self, feature: usize, index: u32) -> &FeatureValue {
        &self.domains[feature][index as usize]
    }

    /// Converts concrete values to domain indices.
    pub fn encode(&self, values: &[FeatureValue]) -> Result<Vec<u32>> {
        if values.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} feature values, got {}",
                self.len(),
                values.len()
            )));
        }
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                self.value_index(i, v).ok_or_else(|| {
                    Error::InvalidArgument(format!("`{v}` is not in the domain of `{}`", self.names[i]))
                })
            })
            .collect()
    }
}

/// One sparse entry of the transition kernel with its expected reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub next: StateId,
    pub prob: f64,
    pub reward: f64,
}

/// A finite MDP. Construct with [`MdpBuilder`].
#[derive(Clone, Debug)]
pub struct TabularMdp {
    schema: FeatureSchema,
    features: Vec<Vec<u32>>,
    actions: Vec<String>,
    available: Vec<Vec<ActionId>>,
    transitions: Vec<Vec<Transition>>,
    discount: f64,
    initial: Vec<f64>,
    terminal: Vec<bool>,
    index: HashMap<Vec<u32>, StateId>,
}

impl TabularMdp {
    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_states(&self) -> usize {
        self.terminal.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn action_name(&self, a: ActionId) -> &str {
        &self.actions[a]
    }

    pub fn action_index(&self, name: &str) -> Option<ActionId> {
        self.actions.iter().position(|n| n == name)
    }

    pub fn features(&self, s: StateId) -> &[u32] {
        &self.features[s]
    }

    pub fn available(&self, s: StateId) -> &[ActionId] {
        &self.available[s]
    }

    pub fn is_available(&self, s: StateId, a: ActionId) -> bool {
        self.available[s].binary_search(&a).is_ok()
    }

    pub fn transitions(&self, s: StateId, a: ActionId) -> &[Transition] {
        &self.transitions[s * self.actions.len() + a]
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminal[s]
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.n_states()).filter(move |&s| !self.terminal[s])
    }

    pub fn n_non_terminal(&self) -> usize {
        self.terminal.iter().filter(|t| !**t).count()
    }

    /// Looks up the non-terminal state with exactly these feature indices.
    pub fn state_by_features(&self, features: &[u32]) -> Option<StateId> {
        self.index.get(features).copied()
    }

    pub fn state_by_values(&self, values: &[FeatureValue]) -> Option<StateId> {
        let idx = self.schema.encode(values).ok()?;
        self.state_by_features(&idx)
    }

    pub fn feature_values(&self, s: StateId) -> Vec<&FeatureValue> {
        self.features[s]
            .iter()
            .enumerate()
            .map(|(i, &v)| self.schema.value(i, v))
            .collect()
    }

    /// Human-readable state label such as `(R, 10)`.
    pub fn describe_state(&self, s: StateId) -> String {
        if self.features[s].is_empty() {
            return if self.terminal[s] { format!("terminal#{s}") } else { format!("state#{s}") };
        }
        let parts: Vec<String> = self.feature_values(s).iter().map(|v| v.to_string()).collect();
        format!("({})", parts.join(", "))
    }

    /// Expected immediate reward of taking `a` in `s`.
    pub fn expected_reward(&self, s: StateId, a: ActionId) -> f64 {
        self.transitions(s, a).iter().map(|t| t.prob * t.reward).sum()
    }
}

/// Incremental constructor for [`TabularMdp`].
#[derive(Clone, Debug)]
pub struct MdpBuilder {
    schema: FeatureSchema,
    actions: Vec<String>,
    discount: f64,
    features: Vec<Vec<u32>>,
    terminal: Vec<bool>,
    available: Vec<Option<Vec<ActionId>>>,
    transitions: HashMap<(StateId, ActionId), Vec<Transition>>,
    initial: Vec<f64>,
}

impl MdpBuilder {
    pub fn new(schema: FeatureSchema, actions: Vec<String>, discount: f64) -> Self {
        MdpBuilder {
            schema,
            actions,
            discount,
            features: Vec::new(),
            terminal: Vec::new(),
            available: Vec::new(),
            transitions: HashMap::new(),
            initial: Vec::new(),
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_states(&self) -> usize {
        self.terminal.len()
    }

    /// Adds a non-terminal state from concrete feature values.
    pub fn add_state(&mut self, values: &[FeatureValue]) -> Result<StateId> {
        let idx = self.schema.encode(values)?;
        Ok(self.add_state_encoded(idx, false))
    }

    /// Adds a state from domain indices without checking them.
    pub fn add_state_encoded(&mut self, features: Vec<u32>, terminal: bool) -> StateId {
        self.features.push(features);
        self.terminal.push(terminal);
        self.available.push(None);
        self.initial.push(0.0);
        self.terminal.len() - 1
    }

    /// Adds a featureless terminal state.
    pub fn add_terminal(&mut self) -> StateId {
        self.add_state_encoded(Vec::new(), true)
    }

    pub fn set_available(&mut self, s: StateId, mut actions: Vec<ActionId>) {
        actions.sort_unstable();
        actions.dedup();
        self.available[s] = Some(actions);
    }

    /// Adds probability mass for `s --a--> next`. Repeated successors are
    /// merged, with the reward averaged by probability.
    pub fn add_transition(&mut self, s: StateId, a: ActionId, next: StateId, prob: f64, reward: f64) {
        let row = self.transitions.entry((s, a)).or_default();
        if let Some(t) = row.iter_mut().find(|t| t.next == next) {
            let total = t.prob + prob;
            if total > 0.0 {
                t.reward = (t.prob * t.reward + prob * reward) / total;
            }
            t.prob = total;
        } else {
            row.push(Transition { next, prob, reward });
        }
    }

    pub fn set_initial(&mut self, s: StateId, prob: f64) {
        self.initial[s] = prob;
    }

    /// Builds without validation. Use [`validate_mdp`] to inspect the result.
    pub fn build_unchecked(self) -> TabularMdp {
        let n = self.terminal.len();
        let na = self.actions.len();
        let mut transitions = vec![Vec::new(); n * na];
        for ((s, a), mut row) in self.transitions {
            if s < n && a < na {
                row.sort_by_key(|t| t.next);
                transitions[s * na + a] = row;
            }
        }
        let available = self
            .available
            .into_iter()
            .enumerate()
            .map(|(s, av)| match av {
                Some(v) => v,
                None if self.terminal[s] => Vec::new(),
                None => (0..na).filter(|&a| !transitions[s * na + a].is_empty()).collect(),
            })
            .collect();
        let mut index = HashMap::new();
        for (s, f) in self.features.iter().enumerate() {
            if !self.terminal[s] {
                index.entry(f.clone()).or_insert(s);
            }
        }
        TabularMdp {
            schema: self.schema,
            features: self.features,
            actions: self.actions,
            available,
            transitions,
            discount: self.discount,
            initial: self.initial,
            terminal: self.terminal,
            index,
        }
    }

    /// Builds and validates.
    pub fn build(self) -> Result<TabularMdp> {
        let mdp = self.build_unchecked();
        let report = validate_mdp(&mdp);
        if report.is_valid() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(report.messages()))
        }
    }
}

/// Row-stochastic action probabilities, dense over `(state, action)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticPolicy {
    n_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    /// Builds from explicit rows (one per state, each of length `n_actions`).
    pub fn from_rows(mdp: &TabularMdp, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != mdp.n_states() {
            return Err(Error::InvalidPolicy(format!(
                "{} rows for {} states",
                rows.len(),
                mdp.n_states()
            )));
        }
        let na = mdp.n_actions();
        let mut probs = Vec::with_capacity(rows.len() * na);
        for (s, row) in rows.into_iter().enumerate() {
            if row.len() != na {
                return Err(Error::InvalidPolicy(format!("row {s} has {} entries", row.len())));
            }
            probs.extend(row);
        }
        let policy = StochasticPolicy { n_actions: na, probs };
        policy.validate(mdp)?;
        Ok(policy)
    }

    /// One action per non-terminal state (`None` for terminal states).
    pub fn deterministic(mdp: &TabularMdp, choice: &[Option<ActionId>]) -> Result<Self> {
        let na = mdp.n_actions();
        let mut probs = vec![0.0; mdp.n_states() * na];
        for (s, c) in choice.iter().enumerate() {
            if let Some(a) = c {
                probs[s * na + a] = 1.0;
            }
        }
        let policy = StochasticPolicy { n_actions: na, probs };
        policy.validate(mdp)?;
        Ok(policy)
    }

    /// Uniform over the available actions of every non-terminal state.
    pub fn uniform(mdp: &TabularMdp) -> Self {
        let na = mdp.n_actions();
        let mut probs = vec![0.0; mdp.n_states() * na];
        for s in mdp.non_terminal_states() {
            let av = mdp.available(s);
            for &a in av {
                probs[s * na + a] = 1.0 / av.len() as f64;
            }
        }
        StochasticPolicy { n_actions: na, probs }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: StateId, a: ActionId) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Copy of this policy with the row of `s` replaced.
    pub fn with_row(&self, s: StateId, row: &[f64]) -> Self {
        let mut out = self.clone();
        out.probs[s * self.n_actions..(s + 1) * self.n_actions].copy_from_slice(row);
        out
    }

    /// Most probable action, lowest index on ties.
    pub fn mode(&self, s: StateId) -> Option<ActionId> {
        let row = self.row(s);
        let mut best: Option<ActionId> = None;
        for (a, &p) in row.iter().enumerate() {
            if p > 0.0 && best.is_none_or(|b| p > row[b]) {
                best = Some(a);
            }
        }
        best
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        if self.probs.len() != mdp.n_states() * mdp.n_actions() {
            return Err(Error::InvalidPolicy("policy shape does not match MDP".into()));
        }
        for s in 0..mdp.n_states() {
            let row = self.row(s);
            if row.iter().any(|p| !(0.0..=1.0 + PROB_TOL).contains(p)) {
                return Err(Error::InvalidPolicy(format!(
                    "probability outside [0,1] at {}",
                    mdp.describe_state(s)
                )));
            }
            if mdp.is_terminal(s) {
                continue;
            }
            for (a, &p) in row.iter().enumerate() {
                if p > 0.0 && !mdp.is_available(s, a) {
                    return Err(Error::InvalidPolicy(format!(
                        "mass on unavailable action {} at {}",
                        mdp.action_name(a),
                        mdp.describe_state(s)
                    )));
                }
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!(
                    "row of {} sums to {total}",
                    mdp.describe_state(s)
                )));
            }
        }
        Ok(())
    }
}

/// State values and, optionally, action values (flattened `s * n_actions + a`).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub v: Vec<f64>,
    pub q: Option<Vec<f64>>,
    n_actions: usize,
}

impl ValueTable {
    pub fn new(v: Vec<f64>, q: Option<Vec<f64>>, n_actions: usize) -> Self {
        ValueTable { v, q, n_actions }
    }

    pub fn value(&self, s: StateId) -> f64 {
        self.v[s]
    }

    pub fn q(&self, s: StateId, a: ActionId) -> Option<f64> {
        self.q.as_ref().map(|q| q[s * self.n_actions + a])
    }
}

/// Normalised visitation probabilities over the non-terminal states.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyDistribution {
    pub p: Vec<f64>,
}

impl OccupancyDistribution {
    pub fn prob(&self, s: StateId) -> f64 {
        self.p[s]
    }

    /// `E[f(S)]` under this distribution.
    pub fn expectation(&self, f: impl Fn(StateId) -> f64) -> f64 {
        self.p
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(s, &w)| w * f(s))
            .sum()
    }

    pub fn support(&self) -> impl Iterator<Item = StateId> + '_ {
        self.p.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(s, _)| s)
    }
}
