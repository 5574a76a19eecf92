//! Exact Shapley values, axiom checks and global aggregates.

use serde::{Deserialize, Serialize};

use crate::characteristics::{CharacteristicGame, Coalition, ExplainContext, PredictionFunction, Removal};
use crate::error::{Error, Result};
use crate::mdp::{ActionId, StateId};

/// Default ceiling on players for exact enumeration.
pub const DEFAULT_MAX_EXACT_FEATURES: usize = 20;
/// Ceiling for the permutation form.
pub const MAX_PERMUTATION_FEATURES: usize = 10;

const AXIOM_TOL: f64 = 1e-9;

/// The exact-enumeration ceiling, overridable through
/// `SVERL_MAX_EXACT_FEATURES`.
pub fn max_exact_features() -> usize {
    std::env::var("SVERL_MAX_EXACT_FEATURES")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .map(|v: usize| v.min(63))
        .unwrap_or(DEFAULT_MAX_EXACT_FEATURES)
}

/// A cooperative game: `n` players and a value for every coalition.
pub trait CoalitionalGame: Sync {
    fn n_players(&self) -> usize;
    fn value(&self, c: Coalition) -> Result<f64>;
}

impl CoalitionalGame for CharacteristicGame<'_> {
    fn n_players(&self) -> usize {
        CharacteristicGame::n_players(self)
    }

    fn value(&self, c: Coalition) -> Result<f64> {
        self.evaluate(c)
    }
}

/// A game given by its full value table, indexed by coalition bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableGame {
    n: usize,
    values: Vec<f64>,
}

impl TableGame {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n >= 64 || values.len() != 1usize << n {
            return Err(Error::InvalidArgument(format!(
                "a {n}-player table game needs 2^{n} values, got {}",
                values.len()
            )));
        }
        Ok(TableGame { n, values })
    }

    pub fn from_fn(n: usize, f: impl Fn(Coalition) -> f64) -> Self {
        TableGame { n, values: (0..1u64 << n).map(|b| f(Coalition(b))).collect() }
    }

    /// Evaluates every coalition of `game`, in parallel for large games.
    pub fn tabulate(game: &dyn CoalitionalGame) -> Result<Self> {
        let n = game.n_players();
        if n >= 32 {
            return Err(Error::EnumerationLimit { players: n, limit: 31 });
        }
        let total = 1u64 << n;
        let workers = if total >= 1 << 12 {
            std::thread::available_parallelism().map_or(1, |w| w.get()).min(16)
        } else {
            1
        };
        let values = if workers == 1 {
            (0..total).map(|b| game.value(Coalition(b))).collect::<Result<Vec<_>>>()?
        } else {
            let chunk = total.div_ceil(workers as u64);
            let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers as u64)
                    .map(|w| {
                        scope.spawn(move || {
                            (w * chunk..((w + 1) * chunk).min(total))
                                .map(|b| game.value(Coalition(b)))
                                .collect::<Result<Vec<_>>>()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            let mut values = Vec::with_capacity(total as usize);
            for part in parts {
                values.extend(part?);
            }
            values
        };
        Ok(TableGame { n, values })
    }

    /// `alpha u + beta v`.
    pub fn combine(alpha: f64, u: &TableGame, beta: f64, v: &TableGame) -> Result<Self> {
        if u.n != v.n {
            return Err(Error::InvalidArgument("games have different player counts".into()));
        }
        let values = u.values.iter().zip(&v.values).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(TableGame { n: u.n, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, c: Coalition) -> f64 {
        self.values[c.bits() as usize]
    }
}

impl CoalitionalGame for TableGame {
    fn n_players(&self) -> usize {
        self.n
    }

    fn value(&self, c: Coalition) -> Result<f64> {
        Ok(self.get(c))
    }
}

/// A game backed by a closure.
pub struct FnGame<F> {
    n: usize,
    f: F,
}

impl<F: Fn(Coalition) -> f64 + Sync> FnGame<F> {
    pub fn new(n: usize, f: F) -> Self {
        FnGame { n, f }
    }
}

impl<F: Fn(Coalition) -> f64 + Sync> CoalitionalGame for FnGame<F> {
    fn n_players(&self) -> usize {
        self.n
    }

    fn value(&self, c: Coalition) -> Result<f64> {
        Ok((self.f)(c))
    }
}

/// The parliament vote: parties A and B hold 49 seats, C holds 2, and a
/// coalition wins with a majority of the 100 seats.
pub fn parliament_game() -> TableGame {
    let seats = [49u32, 49, 2];
    TableGame::from_fn(3, |c| {
        let total: u32 = c.members().map(|i| seats[i]).sum();
        if total > 50 {
            1.0
        } else {
            0.0
        }
    })
}

/// Attributions for one explanation target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub phi: Vec<f64>,
    /// `v(empty)`.
    pub baseline: f64,
    /// `v(F)`.
    pub grand: f64,
    /// `grand - baseline - sum(phi)`.
    pub residual: f64,
}

impl ShapleyReport {
    pub fn new(phi: Vec<f64>, baseline: f64, grand: f64) -> Self {
        let residual = grand - baseline - phi.iter().sum::<f64>();
        ShapleyReport { phi, baseline, grand, residual }
    }

    /// `sum_k w_k report_k`, term by term.
    pub fn weighted_sum(parts: &[(f64, &ShapleyReport)]) -> Option<Self> {
        let n = parts.first()?.1.phi.len();
        let mut phi = vec![0.0; n];
        let (mut baseline, mut grand) = (0.0, 0.0);
        for &(w, r) in parts {
            for (p, x) in phi.iter_mut().zip(&r.phi) {
                *p += w * x;
            }
            baseline += w * r.baseline;
            grand += w * r.grand;
        }
        Some(ShapleyReport::new(phi, baseline, grand))
    }
}

/// `C(n, k)` exactly.
fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// `|C|! (n - |C| - 1)! / n!` for every `|C| = k`, as `1 / (n C(n-1, k))`.
pub(crate) fn shapley_weights(n: usize) -> Vec<f64> {
    (0..n as u64)
        .map(|k| {
            let denom = n as u128 * binomial(n as u64 - 1, k);
            1.0 / denom as f64
        })
        .collect()
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// Shapley values by summing over all coalitions, with the default
/// enumeration ceiling.
pub fn shapley_exact(game: &dyn CoalitionalGame) -> Result<ShapleyReport> {
    shapley_exact_with_limit(game, max_exact_features())
}

pub fn shapley_exact_with_limit(game: &dyn CoalitionalGame, limit: usize) -> Result<ShapleyReport> {
    let n = game.n_players();
    if n > limit {
        return Err(Error::EnumerationLimit { players: n, limit });
    }
    let table = TableGame::tabulate(game)?;
    Ok(shapley_from_table(&table))
}

/// Shapley values of a fully tabulated game.
pub fn shapley_from_table(table: &TableGame) -> ShapleyReport {
    let n = table.n;
    let v = &table.values;
    if n == 0 {
        return ShapleyReport::new(Vec::new(), v[0], v[0]);
    }
    let weights = shapley_weights(n);
    // Sum marginal gains per coalition size first, then weight once.
    let mut by_size = vec![vec![Compensated::default(); n]; n];
    for mask in 0..v.len() {
        let size = (mask as u64).count_ones() as usize;
        if size == n {
            continue;
        }
        for (i, sums) in by_size[size].iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                sums.add(v[mask | 1 << i] - v[mask]);
            }
        }
    }
    let phi = (0..n)
        .map(|i| {
            let mut acc = Compensated::default();
            for k in 0..n {
                acc.add(weights[k] * by_size[k][i].value());
            }
            acc.value()
        })
        .collect();
    ShapleyReport::new(phi, v[0], v[v.len() - 1])
}

/// Shapley values as the average marginal contribution over all `n!`
/// orderings.
pub fn shapley_permutation(game: &dyn CoalitionalGame) -> Result<ShapleyReport> {
    let n = game.n_players();
    if n > MAX_PERMUTATION_FEATURES {
        return Err(Error::EnumerationLimit { players: n, limit: MAX_PERMUTATION_FEATURES });
    }
    let table = TableGame::tabulate(game)?;
    let v = &table.values;
    let mut order: Vec<usize> = (0..n).collect();
    let mut sums = vec![Compensated::default(); n];
    let mut count = 0u64;
    loop {
        let mut mask = 0usize;
        for &i in &order {
            sums[i].add(v[mask | 1 << i] - v[mask]);
            mask |= 1 << i;
        }
        count += 1;
        if !next_permutation(&mut order) {
            break;
        }
    }
    let phi = sums.iter().map(|s| s.value() / count as f64).collect();
    Ok(ShapleyReport::new(phi, v[0], v[v.len() - 1]))
}

fn next_permutation(xs: &mut [usize]) -> bool {
    let n = xs.len();
    if n < 2 {
        return false;
    }
    let Some(i) = (0..n - 1).rev().find(|&i| xs[i] < xs[i + 1]) else {
        return false;
    };
    let j = (i + 1..n).rev().find(|&j| xs[j] > xs[i]).expect("successor exists");
    xs.swap(i, j);
    xs[i + 1..].reverse();
    true
}

/// Outcome of checking a report against the Shapley axioms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub efficiency_residual: f64,
    pub efficiency: bool,
    /// Players whose marginal gain is zero for every coalition.
    pub null_players: Vec<usize>,
    pub nullity: bool,
    /// Pairs interchangeable in every coalition.
    pub symmetric_pairs: Vec<(usize, usize)>,
    pub symmetry: bool,
}

impl AxiomReport {
    pub fn all_hold(&self) -> bool {
        self.efficiency && self.nullity && self.symmetry
    }
}

/// Checks efficiency, nullity and symmetry of `report` on `game`.
pub fn verify_axioms(game: &dyn CoalitionalGame, report: &ShapleyReport) -> Result<AxiomReport> {
    let table = TableGame::tabulate(game)?;
    Ok(verify_axioms_table(&table, report))
}

pub fn verify_axioms_table(table: &TableGame, report: &ShapleyReport) -> AxiomReport {
    let n = table.n;
    let v = &table.values;
    let residual = v[v.len() - 1] - v[0] - report.phi.iter().sum::<f64>();
    let null_players: Vec<usize> = (0..n)
        .filter(|&i| (0..v.len()).filter(|m| m >> i & 1 == 0).all(|m| (v[m | 1 << i] - v[m]).abs() <= AXIOM_TOL))
        .collect();
    let mut symmetric_pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let sym = (0..v.len())
                .filter(|m| m >> i & 1 == 0 && m >> j & 1 == 0)
                .all(|m| (v[m | 1 << i] - v[m | 1 << j]).abs() <= AXIOM_TOL);
            if sym {
                symmetric_pairs.push((i, j));
            }
        }
    }
    AxiomReport {
        efficiency_residual: residual,
        efficiency: residual.abs() <= AXIOM_TOL,
        nullity: null_players.iter().all(|&i| report.phi[i].abs() <= AXIOM_TOL),
        symmetry: symmetric_pairs.iter().all(|&(i, j)| (report.phi[i] - report.phi[j]).abs() <= AXIOM_TOL),
        null_players,
        symmetric_pairs,
    }
}

/// `E_{s ~ p^pi}[phi(pi~_s^a)]` per feature.
pub fn global_behaviour_expectation(ctx: &ExplainContext, a: ActionId, removal: Removal) -> Result<Vec<f64>> {
    let mut out = vec![0.0; ctx.n_features()];
    for s in ctx.occ.support() {
        let game = CharacteristicGame::behaviour(*ctx, s, a, removal)?;
        let r = shapley_exact(&game)?;
        for (o, p) in out.iter_mut().zip(&r.phi) {
            *o += ctx.occ.prob(s) * p;
        }
    }
    Ok(out)
}

/// `E_{s ~ p^pi}[phi(v_hat_s)]` per feature.
pub fn global_prediction_expectation(
    ctx: &ExplainContext,
    vhat: &PredictionFunction,
    removal: Removal,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; ctx.n_features()];
    for s in ctx.occ.support() {
        let game = CharacteristicGame::prediction(*ctx, vhat, s, removal)?;
        let r = shapley_exact(&game)?;
        for (o, p) in out.iter_mut().zip(&r.phi) {
            *o += ctx.occ.prob(s) * p;
        }
    }
    Ok(out)
}

/// Policy-weighted behaviour explanation at `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeightedReport {
    /// Shapley values of `C -> sum_a pi(s, a) pi~_s^a(C)`.
    pub report: ShapleyReport,
    /// `sum_a pi(s, a) phi(pi~_s^a)`, computed action by action.
    pub combination: Vec<f64>,
    pub max_deviation: f64,
}

pub fn policy_weighted_behaviour(ctx: &ExplainContext, s: StateId, removal: Removal) -> Result<PolicyWeightedReport> {
    let n = ctx.n_features();
    let limit = max_exact_features();
    if n > limit {
        return Err(Error::EnumerationLimit { players: n, limit });
    }
    let mut parts = Vec::new();
    for (a, &w) in ctx.policy.row(s).iter().enumerate() {
        if w > 0.0 {
            let game = CharacteristicGame::behaviour(*ctx, s, a, removal)?;
            parts.push((w, TableGame::tabulate(&game)?));
        }
    }
    let mixed = TableGame::from_fn(n, |c| parts.iter().map(|(w, t)| w * t.get(c)).sum());
    let report = shapley_from_table(&mixed);
    let mut combination = vec![0.0; n];
    for (w, t) in &parts {
        for (c, p) in combination.iter_mut().zip(shapley_from_table(t).phi) {
            *c += w * p;
        }
    }
    let max_deviation = report
        .phi
        .iter()
        .zip(&combination)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(PolicyWeightedReport { report, combination, max_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parliament_is_a_three_way_split() {
        let r = shapley_exact(&parliament_game()).unwrap();
        assert_eq!(r.phi, vec![1.0 / 3.0; 3]);
        assert_eq!(r.residual, 0.0);
        let p = shapley_permutation(&parliament_game()).unwrap();
        assert_eq!(p.phi, r.phi);
    }

    #[test]
    fn null_second_player() {
        let g = TableGame::new(2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = shapley_permutation(&g).unwrap();
        assert_eq!(r.phi, vec![1.0, 0.0]);
        let ax = verify_axioms(&g, &r).unwrap();
        assert_eq!(ax.null_players, vec![1]);
        assert!(ax.all_hold());
    }

    #[test]
    fn constant_game_is_all_zero() {
        let g = TableGame::from_fn(5, |_| 3.25);
        assert!(shapley_exact(&g).unwrap().phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn weights_are_exact_ratios() {
        assert_eq!(binomial(19, 9), 92378);
        let w = shapley_weights(4);
        // 0!3!/4!, 1!2!/4!, 2!1!/4!, 3!0!/4!
        assert_eq!(w, vec![0.25, 1.0 / 12.0, 1.0 / 12.0, 0.25]);
    }

    #[test]
    fn enumeration_guard() {
        let g = FnGame::new(12, |c| c.len() as f64);
        assert!(matches!(
            shapley_exact_with_limit(&g, 10),
            Err(Error::EnumerationLimit { players: 12, limit: 10 })
        ));
        assert!(shapley_permutation(&g).is_err());
        let r = shapley_exact(&g).unwrap();
        assert!(r.phi.iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn permutations_visit_all_orders() {
        let mut xs = vec![0, 1, 2, 3];
        let mut count = 1;
        while next_permutation(&mut xs) {
            count += 1;
        }
        assert_eq!(count, 24);
    }
}
