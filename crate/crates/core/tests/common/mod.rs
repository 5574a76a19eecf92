#![allow(dead_code)]

use sverl::mdp::{FeatureSchema, FeatureValue, MdpBuilder, OccupancyDistribution, StochasticPolicy, TabularMdp};

/// Shapley values by averaging marginal contributions over every ordering,
/// generated recursively.
pub fn brute_shapley(n: usize, v: &dyn Fn(u64) -> f64) -> Vec<f64> {
    fn walk(n: usize, used: u64, order: &mut Vec<usize>, v: &dyn Fn(u64) -> f64, acc: &mut [f64], count: &mut f64) {
        if order.len() == n {
            let mut c = 0u64;
            for &i in order.iter() {
                acc[i] += v(c | 1 << i) - v(c);
                c |= 1 << i;
            }
            *count += 1.0;
            return;
        }
        for i in 0..n {
            if used >> i & 1 == 0 {
                order.push(i);
                walk(n, used | 1 << i, order, v, acc, count);
                order.pop();
            }
        }
    }
    let mut acc = vec![0.0; n];
    let mut count = 0.0;
    walk(n, 0, &mut Vec::new(), v, &mut acc, &mut count);
    acc.iter().map(|x| x / count).collect()
}

/// `E[f(S) | S_C = s_C]` by direct enumeration over the occupancy.
pub fn conditional_mean(mdp: &TabularMdp, occ: &OccupancyDistribution, s: usize, mask: u64, f: &dyn Fn(usize) -> f64) -> f64 {
    let fs = mdp.features(s);
    let mut num = 0.0;
    let mut den = 0.0;
    for x in 0..mdp.n_states() {
        if mdp.is_terminal(x) {
            continue;
        }
        let fx = mdp.features(x);
        if (0..fs.len()).all(|i| mask >> i & 1 == 0 || fs[i] == fx[i]) {
            num += occ.p[x] * f(x);
            den += occ.p[x];
        }
    }
    num / den
}

/// `E[f(tau(s, S', C))]` with `S'` drawn from the occupancy, where the
/// composite keeps the features of `s` in `C`.
pub fn marginal_mean(mdp: &TabularMdp, occ: &OccupancyDistribution, s: usize, mask: u64, f: &dyn Fn(usize) -> f64) -> f64 {
    let fs = mdp.features(s);
    let mut total = 0.0;
    for x in 0..mdp.n_states() {
        if mdp.is_terminal(x) || occ.p[x] == 0.0 {
            continue;
        }
        let composite: Vec<u32> =
            (0..fs.len()).map(|i| if mask >> i & 1 == 1 { fs[i] } else { mdp.features(x)[i] }).collect();
        let y = mdp.state_by_features(&composite).expect("composite is a state");
        total += occ.p[x] * f(y);
    }
    total
}

/// Parameters for a random MDP over a full `w x h` feature grid.
#[derive(Clone, Debug)]
pub struct RandomMdpParams {
    pub width: usize,
    pub height: usize,
    pub n_actions: usize,
    pub discount: f64,
    /// Flat list of raw weights; consumed cyclically.
    pub weights: Vec<f64>,
    pub rewards: Vec<f64>,
    pub terminate: f64,
}

/// Builds a random MDP whose non-terminal states form the full grid of
/// feature values `(x, y)`. Every action reaches the terminal state with
/// probability `terminate` (so every policy is proper) and spreads the rest
/// over up to three grid states.
pub fn random_mdp(params: &RandomMdpParams) -> TabularMdp {
    let schema = FeatureSchema::new(
        vec!["x".into(), "y".into()],
        vec![
            (0..params.width as i64).map(FeatureValue::Int).collect(),
            (0..params.height as i64).map(FeatureValue::Int).collect(),
        ],
    )
    .unwrap();
    let actions = (0..params.n_actions).map(|a| format!("a{a}")).collect();
    let mut b = MdpBuilder::new(schema, actions, params.discount);
    let n = params.width * params.height;
    for y in 0..params.height {
        for x in 0..params.width {
            b.add_state(&[FeatureValue::Int(x as i64), FeatureValue::Int(y as i64)]).unwrap();
        }
    }
    let end = b.add_terminal();
    let mut k = 0;
    let mut next_w = || {
        let w = params.weights[k % params.weights.len()];
        k += 1;
        w
    };
    let mut r = 0;
    for s in 0..n {
        for a in 0..params.n_actions {
            let targets: Vec<usize> = (0..3).map(|_| (next_w() * 1000.0) as usize % n).collect();
            let raw: Vec<f64> = (0..3).map(|_| 0.05 + next_w()).collect();
            let total: f64 = raw.iter().sum();
            for (t, w) in targets.iter().zip(&raw) {
                let reward = params.rewards[r % params.rewards.len()];
                r += 1;
                b.add_transition(s, a, *t, (1.0 - params.terminate) * w / total, reward);
            }
            b.add_transition(s, a, end, params.terminate, 0.0);
        }
        b.set_initial(s, 1.0 / n as f64);
    }
    b.build().unwrap()
}

/// A stochastic policy from raw positive weights.
pub fn random_policy(mdp: &TabularMdp, weights: &[f64]) -> StochasticPolicy {
    let mut k = 0;
    let rows = (0..mdp.n_states())
        .map(|s| {
            let mut row = vec![0.0; mdp.n_actions()];
            if !mdp.is_terminal(s) {
                for &a in mdp.available(s) {
                    row[a] = 0.01 + weights[k % weights.len()];
                    k += 1;
                }
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= total);
            }
            row
        })
        .collect();
    StochasticPolicy::from_rows(mdp, rows).unwrap()
}
