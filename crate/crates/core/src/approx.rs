//! Monte Carlo estimators of characteristic values and Shapley values.
//!
//! Work is split across `workers` threads. Worker `k` draws from its own
//! ChaCha8 stream and owns a fixed share of the samples; partial sums are
//! reduced in worker order, so results depend only on the seed and the
//! worker count.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::characteristics::{
    CharacteristicGame, Coalition, ExplainContext, PredictionFunction, Removal,
};
use crate::error::{Error, Result};
use crate::mdp::{ActionId, StateId};
use crate::rng::{sample_weighted, stream_rng, Categorical};
use crate::shapley::{max_exact_features, shapley_from_table, shapley_weights, ShapleyReport, TableGame};

const MAX_WORKERS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    /// Rollouts longer than this are cut and counted as truncated.
    pub max_episode_steps: usize,
    pub workers: usize,
    /// Whether reports should carry standard errors.
    pub confidence: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { samples: 10_000, seed: 0, max_episode_steps: 10_000, workers: 4, confidence: true }
    }
}

impl McConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        McConfig { samples, seed, ..Default::default() }
    }

    fn check(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidArgument("samples must be at least 1".into()));
        }
        if self.workers == 0 || self.workers > MAX_WORKERS {
            return Err(Error::InvalidArgument(format!("workers must lie in 1..={MAX_WORKERS}")));
        }
        Ok(())
    }

    fn share(&self, worker: usize) -> u64 {
        let w = self.workers as u64;
        self.samples / w + u64::from((worker as u64) < self.samples % w)
    }
}

/// A scalar Monte Carlo estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
    pub workers: usize,
    /// Rollouts cut at `max_episode_steps`.
    pub truncated: u64,
}

/// Monte Carlo Shapley values with per-feature standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McShapleyReport {
    pub report: ShapleyReport,
    pub std_error: Vec<f64>,
    /// Standard error of the residual.
    pub residual_std_error: f64,
    pub samples: u64,
    /// Samples discarded because a conditional distribution had no mass.
    pub rejections: u64,
    pub workers: usize,
}

/// Running sums for a vector of sample means.
#[derive(Clone, Debug)]
struct Moments {
    n: u64,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments { n: 0, sum: vec![0.0; dim], sumsq: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for (i, &v) in x.iter().enumerate() {
            self.sum[i] += v;
            self.sumsq[i] += v * v;
        }
    }

    fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sumsq[i] += other.sumsq[i];
        }
    }

    fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.n as f64
    }

    fn std_error(&self, i: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sumsq[i] - self.sum[i] * self.sum[i] / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Runs `job(rng, count)` on every worker and returns the results in
/// worker order.
fn run_workers<T: Send>(
    cfg: &McConfig,
    stream_base: u64,
    job: impl Fn(&mut ChaCha8Rng, u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    cfg.check()?;
    let job = &job;
    let results: Vec<Result<T>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.workers)
            .map(|k| {
                scope.spawn(move || {
                    let mut rng = stream_rng(cfg.seed, stream_base + k as u64);
                    job(&mut rng, cfg.share(k))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    results.into_iter().collect()
}

fn sampler(ctx: &ExplainContext, s: StateId, c: Coalition, removal: Removal) -> Result<Categorical> {
    let dist = ctx.removal_distribution(s, c, removal)?;
    Categorical::new(dist).ok_or_else(|| Error::ZeroMassConditioning(format!("state {s}, coalition {:#b}", c.bits())))
}

/// Estimates `pi~_s^a(C)` by averaging `pi(s', a)` over `s' ~ p(. | s_C)`.
pub fn mc_policy_characteristic(
    ctx: &ExplainContext,
    s: StateId,
    a: ActionId,
    c: Coalition,
    removal: Removal,
    cfg: &McConfig,
) -> Result<McEstimate> {
    if a >= ctx.mdp.n_actions() {
        return Err(Error::InvalidArgument(format!("action index {a} out of range")));
    }
    let dist = sampler(ctx, s, c, removal)?;
    let parts = run_workers(cfg, 0, |rng, count| {
        let mut m = Moments::new(1);
        for _ in 0..count {
            m.push(&[ctx.policy.prob(dist.sample(rng), a)]);
        }
        Ok(m)
    })?;
    let m = reduce(parts, 1);
    Ok(McEstimate { mean: m.mean(0), std_error: m.std_error(0), samples: m.n, workers: cfg.workers, truncated: 0 })
}

fn reduce(parts: Vec<Moments>, dim: usize) -> Moments {
    let mut total = Moments::new(dim);
    for p in &parts {
        total.merge(p);
    }
    total
}

/// The state function explained by [`mc_shapley`].
#[derive(Clone, Copy, Debug)]
pub enum McTarget<'a> {
    /// Probability of one action.
    Behaviour(ActionId),
    Prediction(&'a PredictionFunction),
}

/// Permutation-sampling Shapley estimate for behaviour and prediction
/// games. Each sample draws an ordering and, for every feature `i` with
/// predecessors `C`, the difference `f(s') - f(s'')` with
/// `s' ~ p(. | s_{C+i})` and `s'' ~ p(. | s_C)`. The empty and full
/// coalitions use their exact values.
pub fn mc_shapley(
    ctx: &ExplainContext,
    target: McTarget,
    s: StateId,
    removal: Removal,
    cfg: &McConfig,
) -> Result<McShapleyReport> {
    ctx.check_state(s)?;
    let n = ctx.n_features();
    if n > 63 {
        return Err(Error::EnumerationLimit { players: n, limit: 63 });
    }
    let f = |x: StateId| match target {
        McTarget::Behaviour(a) => ctx.policy.prob(x, a),
        McTarget::Prediction(v) => v.vhat[x],
    };
    if let McTarget::Behaviour(a) = target {
        if a >= ctx.mdp.n_actions() {
            return Err(Error::InvalidArgument(format!("action index {a} out of range")));
        }
    }
    let full = Coalition::full(n);
    let exact_mean = |c: Coalition| -> Result<f64> {
        Ok(ctx.removal_distribution(s, c, removal)?.into_iter().map(|(x, w)| w * f(x)).sum())
    };
    let baseline = exact_mean(Coalition::EMPTY)?;
    let grand = f(s);
    let rejection_cap = cfg.samples.saturating_mul(100).max(1000);

    let parts = run_workers(cfg, 0, |rng, count| {
        let mut cache: HashMap<u64, Option<Categorical>> = HashMap::new();
        let mut draw = |c: Coalition, rng: &mut ChaCha8Rng| -> Result<Option<f64>> {
            if c == full {
                return Ok(Some(grand));
            }
            if c.is_empty() {
                return Ok(Some(baseline));
            }
            let d = match cache.entry(c.bits()) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(match sampler(ctx, s, c, removal) {
                    Ok(d) => Some(d),
                    Err(Error::ZeroMassConditioning(_)) => None,
                    Err(e) => return Err(e),
                }),
            };
            Ok(d.as_ref().map(|d| f(d.sample(rng))))
        };
        let mut m = Moments::new(n + 1);
        let mut rejections = 0u64;
        let mut order: Vec<usize> = (0..n).collect();
        let mut row = vec![0.0; n + 1];
        let mut accepted = 0;
        while accepted < count {
            order.shuffle(rng);
            let mut c = Coalition::EMPTY;
            let mut ok = true;
            for &i in &order {
                let with = draw(c.with(i), rng)?;
                let without = draw(c, rng)?;
                match (with, without) {
                    (Some(a), Some(b)) => row[i] = a - b,
                    _ => {
                        ok = false;
                        break;
                    }
                }
                c = c.with(i);
            }
            if !ok {
                rejections += 1;
                if rejections > rejection_cap {
                    return Err(Error::ZeroMassConditioning(format!(
                        "more than {rejection_cap} rejected samples at {}",
                        ctx.mdp.describe_state(s)
                    )));
                }
                continue;
            }
            row[n] = row[..n].iter().sum();
            m.push(&row);
            accepted += 1;
        }
        Ok((m, rejections))
    })?;

    let mut m = Moments::new(n + 1);
    let mut rejections = 0;
    for (p, r) in &parts {
        m.merge(p);
        rejections += r;
    }
    let phi: Vec<f64> = (0..n).map(|i| m.mean(i)).collect();
    let std_error = (0..n).map(|i| m.std_error(i)).collect();
    Ok(McShapleyReport {
        report: ShapleyReport::new(phi, baseline, grand),
        std_error,
        residual_std_error: m.std_error(n),
        samples: m.n,
        rejections,
        workers: cfg.workers,
    })
}

/// Rollout estimate of the outcome characteristic. Rollouts start at `s`;
/// at every visit to `s` a fresh `s' ~ p(. | s_C)` is drawn and an action
/// sampled from `pi(. | s')`, redrawn if unavailable at `s`. Elsewhere
/// actions follow `pi`.
pub fn mc_outcome_characteristic(
    ctx: &ExplainContext,
    s: StateId,
    c: Coalition,
    removal: Removal,
    cfg: &McConfig,
) -> Result<McEstimate> {
    mc_outcome_on_stream(ctx, s, c, removal, cfg, 0)
}

fn mc_outcome_on_stream(
    ctx: &ExplainContext,
    s: StateId,
    c: Coalition,
    removal: Removal,
    cfg: &McConfig,
    stream_base: u64,
) -> Result<McEstimate> {
    ctx.check_state(s)?;
    let mdp = ctx.mdp;
    let dist = sampler(ctx, s, c, removal)?;
    // Redrawing unavailable actions is the same as renormalising over A(s).
    ctx.modified_row(s, c, removal)?;
    let gamma = mdp.discount();
    let parts = run_workers(cfg, stream_base, |rng, count| {
        let mut m = Moments::new(1);
        let mut truncated = 0u64;
        for _ in 0..count {
            let mut x = s;
            let mut ret = 0.0;
            let mut scale = 1.0;
            let mut steps = 0;
            loop {
                if mdp.is_terminal(x) {
                    break;
                }
                if gamma < 1.0 && scale < 1e-12 {
                    break;
                }
                if steps == cfg.max_episode_steps {
                    truncated += 1;
                    break;
                }
                let a = if x == s {
                    loop {
                        let proxy = dist.sample(rng);
                        let a = sample_weighted(rng, ctx.policy.row(proxy));
                        if mdp.is_available(s, a) {
                            break a;
                        }
                    }
                } else {
                    sample_weighted(rng, ctx.policy.row(x))
                };
                let row = mdp.transitions(x, a);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut t = row[row.len() - 1];
                for cand in row {
                    acc += cand.prob;
                    if u < acc {
                        t = *cand;
                        break;
                    }
                }
                ret += scale * t.reward;
                scale *= gamma;
                x = t.next;
                steps += 1;
            }
            m.push(&[ret]);
        }
        Ok((m, truncated))
    })?;
    let mut m = Moments::new(1);
    let mut truncated = 0;
    for (p, t) in &parts {
        m.merge(p);
        truncated += t;
    }
    Ok(McEstimate { mean: m.mean(0), std_error: m.std_error(0), samples: m.n, workers: cfg.workers, truncated })
}

/// Outcome Shapley values from rollout estimates of every coalition,
/// combined with the exact Shapley weights. The full coalition uses
/// `grand` exactly. Standard errors propagate the independent per-coalition
/// errors.
pub fn mc_outcome_shapley(
    ctx: &ExplainContext,
    s: StateId,
    grand: f64,
    removal: Removal,
    cfg: &McConfig,
) -> Result<(McShapleyReport, u64)> {
    let n = ctx.n_features();
    let limit = max_exact_features();
    if n > limit {
        return Err(Error::EnumerationLimit { players: n, limit });
    }
    let full = Coalition::full(n);
    let mut values = vec![0.0; 1 << n];
    let mut variances = vec![0.0; 1 << n];
    let mut truncated = 0;
    for bits in 0..(1u64 << n) {
        if bits == full.bits() {
            values[bits as usize] = grand;
            continue;
        }
        let est = mc_outcome_on_stream(ctx, s, Coalition(bits), removal, cfg, bits * MAX_WORKERS as u64)?;
        values[bits as usize] = est.mean;
        variances[bits as usize] = est.std_error * est.std_error;
        truncated += est.truncated;
    }
    let report = shapley_from_table(&TableGame::new(n, values)?);
    // phi_i is linear in the coalition values; sum the squared coefficients.
    let weights = shapley_weights(n);
    let std_error = (0..n)
        .map(|i| {
            (0..1usize << n)
                .map(|d| {
                    let c = Coalition(d as u64);
                    let k = c.len();
                    let coef = if c.contains(i) { weights[k - 1] } else { -weights[k] };
                    coef * coef * variances[d]
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok((
        McShapleyReport {
            report,
            std_error,
            residual_std_error: 0.0,
            samples: cfg.samples,
            rejections: 0,
            workers: cfg.workers,
        },
        truncated,
    ))
}

/// Exact Shapley values of a behaviour or prediction target, for
/// comparison with [`mc_shapley`].
pub fn exact_for_target(ctx: &ExplainContext, target: McTarget, s: StateId, removal: Removal) -> Result<ShapleyReport> {
    let game = match target {
        McTarget::Behaviour(a) => CharacteristicGame::behaviour(*ctx, s, a, removal)?,
        McTarget::Prediction(v) => CharacteristicGame::prediction(*ctx, v, s, removal)?,
    };
    crate::shapley::shapley_exact(&game)
}
