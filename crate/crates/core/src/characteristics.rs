//! Characteristic functions of the behaviour, outcome and prediction games.

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    conditional_state_distribution, policy_evaluation_with, ActionId, Assignment, OccupancyDistribution,
    SolverConfig, StateId, StochasticPolicy, TabularMdp, ValueTable, ZeroMassPolicy,
};
use crate::mdp::linalg::{solve_fixed_point, SolveFailure, SparseRows};

/// A set of features, bit `i` standing for feature `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(pub u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn full(n: usize) -> Self {
        assert!(n <= 64, "coalitions hold at most 64 players");
        Coalition(if n == 64 { u64::MAX } else { (1u64 << n) - 1 })
    }

    pub fn singleton(i: usize) -> Self {
        Coalition(1 << i)
    }

    pub fn from_members(members: impl IntoIterator<Item = usize>) -> Self {
        members.into_iter().fold(Coalition::EMPTY, |c, i| c.with(i))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        Coalition(self.0 | 1 << i)
    }

    pub fn without(self, i: usize) -> Self {
        Coalition(self.0 & !(1 << i))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn complement(self, n: usize) -> Self {
        Coalition(!self.0 & Coalition::full(n).0)
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.contains(i))
    }

    /// Feature names joined by `+`, or `{}` for the empty coalition.
    pub fn label(self, names: &[String]) -> String {
        if self.is_empty() {
            return "{}".into();
        }
        self.members().map(|i| names[i].as_str()).collect::<Vec<_>>().join("+")
    }
}

/// How features outside a coalition are removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Removal {
    /// Average over the steady-state distribution conditioned on the known
    /// features.
    #[default]
    Conditional,
    /// Replace unknown features by draws from the unconditional
    /// steady-state distribution.
    Marginal,
}

impl fmt::Display for Removal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Removal::Conditional => "conditional",
            Removal::Marginal => "marginal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameKind {
    BehaviourDiscrete,
    BehaviourContinuous,
    Outcome,
    Prediction,
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GameKind::BehaviourDiscrete => "behaviour-discrete",
            GameKind::BehaviourContinuous => "behaviour-continuous",
            GameKind::Outcome => "outcome",
            GameKind::Prediction => "prediction",
        })
    }
}

/// Opt-in relaxations of the removal operators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RemovalOptions {
    pub zero_mass: ZeroMassPolicy,
    /// Under marginal removal, drop composite states that are not real
    /// states and renormalise instead of failing.
    pub skip_invalid_composites: bool,
}

/// Expected action of a Gaussian policy per state, with its fixed spread.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanActionTable {
    pub mu: Vec<f64>,
    pub sigma: f64,
}

impl MeanActionTable {
    pub fn new(mdp: &TabularMdp, mu: Vec<f64>, sigma: f64) -> Result<Self> {
        if mu.len() != mdp.n_states() {
            return Err(Error::InvalidArgument(format!("{} means for {} states", mu.len(), mdp.n_states())));
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument("sigma must be non-negative".into()));
        }
        Ok(MeanActionTable { mu, sigma })
    }
}

/// A state-value estimate `v_hat`, by default the exact `v^pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionFunction {
    pub vhat: Vec<f64>,
}

impl PredictionFunction {
    pub fn new(mdp: &TabularMdp, vhat: Vec<f64>) -> Result<Self> {
        if vhat.len() != mdp.n_states() {
            return Err(Error::InvalidArgument(format!("{} estimates for {} states", vhat.len(), mdp.n_states())));
        }
        Ok(PredictionFunction { vhat })
    }

    pub fn from_values(values: &ValueTable) -> Self {
        PredictionFunction { vhat: values.v.clone() }
    }
}

/// Everything a characteristic function reads: the MDP, the explained
/// policy and its steady-state distribution.
#[derive(Clone, Copy, Debug)]
pub struct ExplainContext<'a> {
    pub mdp: &'a TabularMdp,
    pub policy: &'a StochasticPolicy,
    pub occ: &'a OccupancyDistribution,
    pub options: RemovalOptions,
}

impl<'a> ExplainContext<'a> {
    pub fn new(mdp: &'a TabularMdp, policy: &'a StochasticPolicy, occ: &'a OccupancyDistribution) -> Self {
        ExplainContext { mdp, policy, occ, options: RemovalOptions::default() }
    }

    pub fn with_options(mut self, options: RemovalOptions) -> Self {
        self.options = options;
        self
    }

    pub fn n_features(&self) -> usize {
        self.mdp.n_features()
    }

    pub(crate) fn check_state(&self, s: StateId) -> Result<()> {
        if s >= self.mdp.n_states() || self.mdp.is_terminal(s) {
            return Err(Error::StateSelector(format!("state {s} is not a non-terminal state")));
        }
        Ok(())
    }

    /// The weighted states standing in for `s` when only `c` is known:
    /// `p(s' | s_C)` under conditional removal, composites `tau(s, s', C)`
    /// weighted by `p(s')` under marginal removal.
    pub fn removal_distribution(&self, s: StateId, c: Coalition, removal: Removal) -> Result<Vec<(StateId, f64)>> {
        self.check_state(s)?;
        let n = self.n_features();
        if c == Coalition::full(n) {
            return Ok(vec![(s, 1.0)]);
        }
        match removal {
            Removal::Conditional => {
                let assignment = Assignment::from_state(self.mdp, s, c.bits());
                let cond = conditional_state_distribution(self.mdp, self.occ, &assignment, self.options.zero_mass)
                    .map_err(|e| match e {
                        Error::ZeroMassConditioning(m) => Error::ZeroMassConditioning(format!(
                            "{m} (state {}, coalition {})",
                            self.mdp.describe_state(s),
                            c.label(self.mdp.schema().names())
                        )),
                        other => other,
                    })?;
                Ok(cond.support().map(|x| (x, cond.prob(x))).collect())
            }
            Removal::Marginal => {
                let base = self.mdp.features(s);
                let mut acc: HashMap<StateId, f64> = HashMap::new();
                let mut total = 0.0;
                for other in self.occ.support() {
                    let composite: Vec<u32> = (0..n)
                        .map(|i| if c.contains(i) { base[i] } else { self.mdp.features(other)[i] })
                        .collect();
                    match self.mdp.state_by_features(&composite) {
                        Some(t) => {
                            *acc.entry(t).or_default() += self.occ.prob(other);
                            total += self.occ.prob(other);
                        }
                        None if self.options.skip_invalid_composites => {}
                        None => {
                            return Err(Error::InvalidComposite(format!(
                                "features of {} on {} with the rest of {} name no state",
                                self.mdp.describe_state(s),
                                c.label(self.mdp.schema().names()),
                                self.mdp.describe_state(other)
                            )))
                        }
                    }
                }
                if !(total > 0.0) {
                    return Err(Error::InvalidComposite(format!(
                        "no valid composite for {} on {}",
                        self.mdp.describe_state(s),
                        c.label(self.mdp.schema().names())
                    )));
                }
                let mut out: Vec<(StateId, f64)> = acc.into_iter().map(|(t, w)| (t, w / total)).collect();
                out.sort_by_key(|&(t, _)| t);
                Ok(out)
            }
        }
    }

    /// `pi~_s^a(C)` for every action (length `n_actions`), before any
    /// renormalisation.
    pub fn mixed_action_row(&self, s: StateId, c: Coalition, removal: Removal) -> Result<Vec<f64>> {
        let na = self.mdp.n_actions();
        if c == Coalition::full(self.n_features()) {
            self.check_state(s)?;
            return Ok(self.policy.row(s).to_vec());
        }
        let mut row = vec![0.0; na];
        for (x, w) in self.removal_distribution(s, c, removal)? {
            for (a, r) in row.iter_mut().enumerate() {
                *r += w * self.policy.prob(x, a);
            }
        }
        Ok(row)
    }

    /// The mixed row restricted to `A(s)` and renormalised.
    pub fn modified_row(&self, s: StateId, c: Coalition, removal: Removal) -> Result<Vec<f64>> {
        let mut row = self.mixed_action_row(s, c, removal)?;
        for (a, r) in row.iter_mut().enumerate() {
            if !self.mdp.is_available(s, a) {
                *r = 0.0;
            }
        }
        let total: f64 = row.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyRenormalisationSupport(format!(
                "{} under coalition {}",
                self.mdp.describe_state(s),
                c.label(self.mdp.schema().names())
            )));
        }
        for r in &mut row {
            *r /= total;
        }
        Ok(row)
    }

    fn expect_over(&self, s: StateId, c: Coalition, removal: Removal, f: impl Fn(StateId) -> f64) -> Result<f64> {
        Ok(self.removal_distribution(s, c, removal)?.into_iter().map(|(x, w)| w * f(x)).sum())
    }
}

/// Probability of `a` at `s` when only the features in `c` are known.
pub fn policy_characteristic(
    ctx: &ExplainContext,
    s: StateId,
    a: ActionId,
    c: Coalition,
    removal: Removal,
) -> Result<f64> {
    if a >= ctx.mdp.n_actions() {
        return Err(Error::InvalidArgument(format!("action index {a} out of range")));
    }
    if c == Coalition::full(ctx.n_features()) {
        ctx.check_state(s)?;
        return Ok(ctx.policy.prob(s, a));
    }
    ctx.expect_over(s, c, removal, |x| ctx.policy.prob(x, a))
}

/// Expected mean action at `s` when only `c` is known.
pub fn continuous_policy_characteristic(
    ctx: &ExplainContext,
    means: &MeanActionTable,
    s: StateId,
    c: Coalition,
    removal: Removal,
) -> Result<f64> {
    if c == Coalition::full(ctx.n_features()) {
        ctx.check_state(s)?;
        return Ok(means.mu[s]);
    }
    ctx.expect_over(s, c, removal, |x| means.mu[x])
}

/// Expected estimate `v_hat` at `s` when only `c` is known.
pub fn prediction_characteristic(
    ctx: &ExplainContext,
    vhat: &PredictionFunction,
    s: StateId,
    c: Coalition,
    removal: Removal,
) -> Result<f64> {
    if c == Coalition::full(ctx.n_features()) {
        ctx.check_state(s)?;
        return Ok(vhat.vhat[s]);
    }
    ctx.expect_over(s, c, removal, |x| vhat.vhat[x])
}

/// Expected return from `s` when the policy at `s` alone acts on the
/// features in `c`, evaluated literally: the policy table is copied with
/// the row of `s` replaced and evaluated from scratch.
pub fn outcome_characteristic_literal(
    ctx: &ExplainContext,
    s: StateId,
    c: Coalition,
    removal: Removal,
    solver: &SolverConfig,
) -> Result<f64> {
    let row = ctx.modified_row(s, c, removal)?;
    let modified = ctx.policy.with_row(s, &row);
    Ok(policy_evaluation_with(ctx.mdp, &modified, solver)?.value(s))
}

/// Expected return from `s` when the policy at `s` alone acts on the
/// features in `c`.
pub fn outcome_characteristic(
    ctx: &ExplainContext,
    s: StateId,
    c: Coalition,
    removal: Removal,
    solver: &SolverConfig,
) -> Result<f64> {
    let eval = OutcomeEvaluator::new(ctx.mdp, ctx.policy, s, solver)?;
    let row = ctx.modified_row(s, c, removal)?;
    eval.value_with_row(&row)
}

/// Values of policies that differ from a base policy only at one anchor
/// state.
///
/// Making the anchor absorbing, `h` is the return collected before the
/// first return to the anchor and `f` the discounted probability of that
/// return. For any row `w` at the anchor,
/// `v = sum_a w_a E[r + gamma h(s')] / (1 - sum_a w_a E[gamma f(s')])`
/// with `h(anchor) = 0` and `f(anchor) = 1`. One linear solve serves every
/// coalition.
#[derive(Clone, Debug)]
pub struct OutcomeEvaluator {
    anchor: StateId,
    h: Vec<f64>,
    f: Vec<f64>,
    /// States whose episodes under the base policy may never end.
    improper: Vec<bool>,
    gamma: f64,
    action_terms: Vec<Option<(f64, f64)>>,
}

impl OutcomeEvaluator {
    pub fn new(mdp: &TabularMdp, policy: &StochasticPolicy, anchor: StateId, solver: &SolverConfig) -> Result<Self> {
        if anchor >= mdp.n_states() || mdp.is_terminal(anchor) {
            return Err(Error::StateSelector(format!("state {anchor} is not a non-terminal state")));
        }
        let n = mdp.n_states();
        let gamma = mdp.discount();
        let stops = |x: StateId| x == anchor || mdp.is_terminal(x);

        // States reachable from the anchor's successors before stopping.
        let mut reach = vec![false; n];
        let mut stack = Vec::new();
        for &a in mdp.available(anchor) {
            for t in mdp.transitions(anchor, a) {
                if t.prob > 0.0 && !stops(t.next) && !reach[t.next] {
                    reach[t.next] = true;
                    stack.push(t.next);
                }
            }
        }
        let succ = |x: StateId| {
            mdp.available(x)
                .iter()
                .filter(move |&&a| policy.prob(x, a) > 0.0)
                .flat_map(move |&a| mdp.transitions(x, a).iter().filter(|t| t.prob > 0.0).map(|t| t.next))
        };
        while let Some(x) = stack.pop() {
            for y in succ(x) {
                if !stops(y) && !reach[y] {
                    reach[y] = true;
                    stack.push(y);
                }
            }
        }
        let states: Vec<StateId> = (0..n).filter(|&x| reach[x]).collect();

        // Under gamma = 1, states that can reach a trapped state are improper.
        let mut improper = vec![false; n];
        if gamma >= 1.0 {
            let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
            for &x in &states {
                for y in succ(x) {
                    preds[y].push(x);
                }
            }
            let mut escapes = vec![false; n];
            let mut stack: Vec<StateId> = (0..n).filter(|&x| stops(x)).collect();
            for &x in &stack {
                escapes[x] = true;
            }
            while let Some(y) = stack.pop() {
                for &x in &preds[y] {
                    if !escapes[x] {
                        escapes[x] = true;
                        stack.push(x);
                    }
                }
            }
            let mut stack: Vec<StateId> = states.iter().copied().filter(|&x| !escapes[x]).collect();
            for &x in &stack {
                improper[x] = true;
            }
            while let Some(y) = stack.pop() {
                for &x in &preds[y] {
                    if !improper[x] {
                        improper[x] = true;
                        stack.push(x);
                    }
                }
            }
        }

        let good: Vec<StateId> = states.iter().copied().filter(|&x| !improper[x]).collect();
        let mut slot = vec![usize::MAX; n];
        for (i, &x) in good.iter().enumerate() {
            slot[x] = i;
        }
        let mut rows: SparseRows = vec![Vec::new(); good.len()];
        let mut bh = vec![0.0; good.len()];
        let mut bf = vec![0.0; good.len()];
        for (i, &x) in good.iter().enumerate() {
            for &a in mdp.available(x) {
                let pa = policy.prob(x, a);
                if pa <= 0.0 {
                    continue;
                }
                for t in mdp.transitions(x, a) {
                    bh[i] += pa * t.prob * t.reward;
                    if t.next == anchor {
                        bf[i] += gamma * pa * t.prob;
                    } else if !mdp.is_terminal(t.next) {
                        rows[i].push((slot[t.next], gamma * pa * t.prob));
                    }
                }
            }
        }
        let x = solve_fixed_point(&rows, &[bh, bf], solver.dense_limit, solver.tol * 1e-2, solver.max_sweeps)
            .map_err(|e| match e {
                SolveFailure::Singular => Error::EpisodicSolvability("singular first-passage system".into()),
                SolveFailure::NotConverged(k) => {
                    Error::EpisodicSolvability(format!("first-passage iteration did not converge in {k} sweeps"))
                }
            })?;
        let mut h = vec![0.0; n];
        let mut f = vec![0.0; n];
        f[anchor] = 1.0;
        for (i, &s) in good.iter().enumerate() {
            h[s] = x[0][i];
            f[s] = x[1][i];
        }

        let action_terms = (0..mdp.n_actions())
            .map(|a| {
                if !mdp.is_available(anchor, a) {
                    return None;
                }
                let row = mdp.transitions(anchor, a);
                if row.iter().any(|t| t.prob > 0.0 && improper[t.next]) {
                    return None;
                }
                let reward: f64 = row.iter().map(|t| t.prob * (t.reward + gamma * h[t.next])).sum();
                let back: f64 = row.iter().map(|t| t.prob * gamma * f[t.next]).sum();
                Some((reward, back))
            })
            .collect();
        Ok(OutcomeEvaluator { anchor, h, f, improper, gamma, action_terms })
    }

    pub fn anchor(&self) -> StateId {
        self.anchor
    }

    /// Value at the anchor when its row is replaced by `row`.
    pub fn value_with_row(&self, row: &[f64]) -> Result<f64> {
        let mut num = 0.0;
        let mut back = 0.0;
        for (a, &w) in row.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            match self.action_terms.get(a).copied().flatten() {
                Some((r, f)) => {
                    num += w * r;
                    back += w * f;
                }
                None => {
                    return Err(Error::EpisodicSolvability(format!(
                        "action {a} at the anchor leads to states that never terminate"
                    )))
                }
            }
        }
        let den = 1.0 - back;
        if den <= 1e-12 {
            return Err(Error::EpisodicSolvability(
                "modified policy never leaves the anchor state".into(),
            ));
        }
        Ok(num / den)
    }

    /// Return accumulated from `x` until the anchor or termination.
    pub fn first_passage_return(&self, x: StateId) -> Option<f64> {
        (!self.improper[x]).then_some(self.h[x])
    }

    /// Discounted probability of reaching the anchor from `x`.
    pub fn first_passage_prob(&self, x: StateId) -> Option<f64> {
        (!self.improper[x]).then_some(self.f[x])
    }

    pub fn discount(&self) -> f64 {
        self.gamma
    }
}

/// Which quantity a [`CharacteristicGame`] measures.
#[derive(Clone, Debug)]
pub enum GameSource<'a> {
    Behaviour { action: ActionId },
    Continuous { means: &'a MeanActionTable },
    Outcome { evaluator: OutcomeEvaluator, grand: f64 },
    /// Outcome evaluated by copying the policy and re-running policy
    /// evaluation for every coalition.
    OutcomeLiteral { solver: SolverConfig, grand: f64 },
    Prediction { vhat: &'a PredictionFunction },
}

/// A coalitional game anchored at one state (and action, for behaviour).
/// Values are memoised per coalition.
#[derive(Debug)]
pub struct CharacteristicGame<'a> {
    ctx: ExplainContext<'a>,
    anchor: StateId,
    removal: Removal,
    source: GameSource<'a>,
    cache: Mutex<HashMap<u64, f64>>,
}

impl<'a> CharacteristicGame<'a> {
    pub fn behaviour(ctx: ExplainContext<'a>, s: StateId, a: ActionId, removal: Removal) -> Result<Self> {
        ctx.check_state(s)?;
        if a >= ctx.mdp.n_actions() {
            return Err(Error::InvalidArgument(format!("action index {a} out of range")));
        }
        Ok(Self::make(ctx, s, removal, GameSource::Behaviour { action: a }))
    }

    pub fn continuous(ctx: ExplainContext<'a>, means: &'a MeanActionTable, s: StateId, removal: Removal) -> Result<Self> {
        ctx.check_state(s)?;
        Ok(Self::make(ctx, s, removal, GameSource::Continuous { means }))
    }

    /// Outcome game; `values` must be `v^pi` of the context's policy.
    pub fn outcome(
        ctx: ExplainContext<'a>,
        values: &ValueTable,
        s: StateId,
        removal: Removal,
        solver: &SolverConfig,
    ) -> Result<Self> {
        ctx.check_state(s)?;
        let evaluator = OutcomeEvaluator::new(ctx.mdp, ctx.policy, s, solver)?;
        Ok(Self::make(ctx, s, removal, GameSource::Outcome { evaluator, grand: values.value(s) }))
    }

    pub fn outcome_literal(
        ctx: ExplainContext<'a>,
        values: &ValueTable,
        s: StateId,
        removal: Removal,
        solver: &SolverConfig,
    ) -> Result<Self> {
        ctx.check_state(s)?;
        Ok(Self::make(ctx, s, removal, GameSource::OutcomeLiteral { solver: solver.clone(), grand: values.value(s) }))
    }

    pub fn prediction(ctx: ExplainContext<'a>, vhat: &'a PredictionFunction, s: StateId, removal: Removal) -> Result<Self> {
        ctx.check_state(s)?;
        Ok(Self::make(ctx, s, removal, GameSource::Prediction { vhat }))
    }

    fn make(ctx: ExplainContext<'a>, anchor: StateId, removal: Removal, source: GameSource<'a>) -> Self {
        CharacteristicGame { ctx, anchor, removal, source, cache: Mutex::new(HashMap::new()) }
    }

    pub fn kind(&self) -> GameKind {
        match self.source {
            GameSource::Behaviour { .. } => GameKind::BehaviourDiscrete,
            GameSource::Continuous { .. } => GameKind::BehaviourContinuous,
            GameSource::Outcome { .. } | GameSource::OutcomeLiteral { .. } => GameKind::Outcome,
            GameSource::Prediction { .. } => GameKind::Prediction,
        }
    }

    pub fn anchor(&self) -> StateId {
        self.anchor
    }

    pub fn action(&self) -> Option<ActionId> {
        match self.source {
            GameSource::Behaviour { action } => Some(action),
            _ => None,
        }
    }

    pub fn removal(&self) -> Removal {
        self.removal
    }

    pub fn context(&self) -> &ExplainContext<'a> {
        &self.ctx
    }

    pub fn n_players(&self) -> usize {
        self.ctx.n_features()
    }

    /// Characteristic value of `c`, memoised.
    pub fn evaluate(&self, c: Coalition) -> Result<f64> {
        if let Some(&v) = self.cache.lock().expect("cache lock").get(&c.bits()) {
            return Ok(v);
        }
        let v = self.compute(c)?;
        self.cache.lock().expect("cache lock").insert(c.bits(), v);
        Ok(v)
    }

    fn compute(&self, c: Coalition) -> Result<f64> {
        let (ctx, s, removal) = (&self.ctx, self.anchor, self.removal);
        let full = c == Coalition::full(self.n_players());
        match &self.source {
            GameSource::Behaviour { action } => policy_characteristic(ctx, s, *action, c, removal),
            GameSource::Continuous { means } => continuous_policy_characteristic(ctx, means, s, c, removal),
            GameSource::Prediction { vhat } => prediction_characteristic(ctx, vhat, s, c, removal),
            GameSource::Outcome { grand, .. } | GameSource::OutcomeLiteral { grand, .. } if full => Ok(*grand),
            GameSource::Outcome { evaluator, .. } => evaluator.value_with_row(&ctx.modified_row(s, c, removal)?),
            GameSource::OutcomeLiteral { solver, .. } => outcome_characteristic_literal(ctx, s, c, removal, solver),
        }
    }
}
