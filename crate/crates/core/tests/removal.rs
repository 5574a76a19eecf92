mod common;

use proptest::prelude::*;
use sverl::characteristics::{
    outcome_characteristic, outcome_characteristic_literal, policy_characteristic, prediction_characteristic,
    CharacteristicGame, Coalition, ExplainContext, MeanActionTable, OutcomeEvaluator, PredictionFunction, Removal,
    RemovalOptions,
};
use sverl::env;
use sverl::mdp::{
    conditional_state_distribution, policy_evaluation, steady_state_distribution, Assignment, SolverConfig,
    StochasticPolicy, ZeroMassPolicy,
};
use sverl::shapley::{shapley_exact, verify_axioms};
use sverl::Error;

use common::{conditional_mean, marginal_mean, random_mdp, random_policy, RandomMdpParams};

fn params_strategy() -> impl Strategy<Value = RandomMdpParams> {
    (
        1usize..=3,
        1usize..=3,
        1usize..=3,
        0.5f64..1.0,
        prop::collection::vec(0.0f64..1.0, 16..48),
        prop::collection::vec(-5.0f64..5.0, 4..12),
        0.05f64..0.5,
    )
        .prop_map(|(width, height, n_actions, discount, weights, rewards, terminate)| RandomMdpParams {
            width,
            height,
            n_actions,
            discount,
            weights,
            rewards,
            terminate,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditional_characteristics_match_enumeration(params in params_strategy(), pw in prop::collection::vec(0.0f64..1.0, 8..32)) {
        let mdp = random_mdp(&params);
        let policy = random_policy(&mdp, &pw);
        let occ = steady_state_distribution(&mdp, &policy).unwrap();
        let values = policy_evaluation(&mdp, &policy, 1e-12).unwrap();
        let vhat = PredictionFunction::from_values(&values);
        let ctx = ExplainContext::new(&mdp, &policy, &occ);
        for s in mdp.non_terminal_states() {
            for mask in 0..4u64 {
                let c = Coalition(mask);
                let want = conditional_mean(&mdp, &occ, s, mask, &|x| vhat.vhat[x]);
                let got = prediction_characteristic(&ctx, &vhat, s, c, Removal::Conditional).unwrap();
                prop_assert!((got - want).abs() < 1e-9);
                for a in 0..mdp.n_actions() {
                    let want = conditional_mean(&mdp, &occ, s, mask, &|x| policy.prob(x, a));
                    let got = policy_characteristic(&ctx, s, a, c, Removal::Conditional).unwrap();
                    prop_assert!((got - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn marginal_characteristics_match_enumeration(params in params_strategy(), pw in prop::collection::vec(0.0f64..1.0, 8..32)) {
        let mdp = random_mdp(&params);
        let policy = random_policy(&mdp, &pw);
        let occ = steady_state_distribution(&mdp, &policy).unwrap();
        let ctx = ExplainContext::new(&mdp, &policy, &occ);
        for s in mdp.non_terminal_states() {
            for mask in 0..4u64 {
                let want = marginal_mean(&mdp, &occ, s, mask, &|x| policy.prob(x, 0));
                let got = policy_characteristic(&ctx, s, 0, Coalition(mask), Removal::Marginal).unwrap();
                prop_assert!((got - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tower_property(params in params_strategy(), pw in prop::collection::vec(0.0f64..1.0, 8..32), mask in 0u64..4) {
        // sum over values x of S_C: p(S_C = x) p(s | S_C = x) = p(s)
        let mdp = random_mdp(&params);
        let policy = random_policy(&mdp, &pw);
        let occ = steady_state_distribution(&mdp, &policy).unwrap();
        let mut rebuilt = vec![0.0; mdp.n_states()];
        let mut seen = std::collections::HashSet::new();
        for s in mdp.non_terminal_states() {
            let a = Assignment::from_state(&mdp, s, mask);
            if !seen.insert(a.pairs().to_vec()) {
                continue;
            }
            let mass: f64 = mdp.non_terminal_states().filter(|&x| a.matches(mdp.features(x))).map(|x| occ.p[x]).sum();
            let cond = conditional_state_distribution(&mdp, &occ, &a, ZeroMassPolicy::Error).unwrap();
            for x in 0..mdp.n_states() {
                rebuilt[x] += mass * cond.p[x];
            }
        }
        for x in 0..mdp.n_states() {
            prop_assert!((rebuilt[x] - occ.p[x]).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_characteristic_is_the_best_approximation(
        params in params_strategy(),
        pw in prop::collection::vec(0.0f64..1.0, 8..32),
        mask in 0u64..4,
        perturb in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        // Among functions of S_C, the conditional mean minimises the
        // occupancy-weighted squared error; perturbing it cannot help.
        let mdp = random_mdp(&params);
        let policy = random_policy(&mdp, &pw);
        let occ = steady_state_distribution(&mdp, &policy).unwrap();
        let values = policy_evaluation(&mdp, &policy, 1e-12).unwrap();
        let vhat = PredictionFunction::from_values(&values);
        let ctx = ExplainContext::new(&mdp, &policy, &occ);
        let key = |x: usize| Assignment::from_state(&mdp, x, mask).pairs().to_vec();
        let mut keys: Vec<_> = mdp.non_terminal_states().map(key).collect();
        keys.sort();
        keys.dedup();
        let g = |x: usize| prediction_characteristic(&ctx, &vhat, x, Coalition(mask), Removal::Conditional).unwrap();
        let loss = |h: &dyn Fn(usize) -> f64| -> f64 {
            mdp.non_terminal_states().map(|x| occ.p[x] * (vhat.vhat[x] - h(x)).powi(2)).sum()
        };
        let best = loss(&g);
        let shifted = |x: usize| {
            let k = keys.iter().position(|k| *k == key(x)).unwrap();
            g(x) + perturb[k % perturb.len()]
        };
        prop_assert!(best <= loss(&shifted) + 1e-12);
    }

    #[test]
    fn outcome_routes_agree(params in params_strategy(), pw in prop::collection::vec(0.0f64..1.0, 8..32)) {
        let mdp = random_mdp(&params);
        let policy = random_policy(&mdp, &pw);
        let occ = steady_state_distribution(&mdp, &policy).unwrap();
        let ctx = ExplainContext::new(&mdp, &policy, &occ);
        let solver = SolverConfig::with_tol(1e-13);
        for s in mdp.non_terminal_states() {
            for mask in 0..4u64 {
                for removal in [Removal::Conditional, Removal::Marginal] {
                    let fast = outcome_characteristic(&ctx, s, Coalition(mask), removal, &solver).unwrap();
                    let literal = outcome_characteristic_literal(&ctx, s, Coalition(mask), removal, &solver).unwrap();
                    prop_assert!((fast - literal).abs() < 1e-9, "{fast} vs {literal}");
                }
            }
        }
    }

    #[test]
    fn marginal_equals_conditional_for_independent_features(
        px in prop::collection::vec(0.05f64..1.0, 3),
        py in prop::collection::vec(0.05f64..1.0, 3),
        f in prop::collection::vec(-5.0f64..5.0, 9),
    ) {
        // Occupancy p(x, y) = p(x) p(y): both removals coincide.
        let params = RandomMdpParams {
            width: 3, height: 3, n_actions: 1, discount: 0.9,
            weights: vec![0.3, 0.7, 0.1], rewards: vec![0.0], terminate: 0.5,
        };
        let mdp = random_mdp(&params);
        let policy = StochasticPolicy::uniform(&mdp);
        let (sx, sy): (f64, f64) = (px.iter().sum(), py.iter().sum());
        let mut p = vec![0.0; mdp.n_states()];
        for y in 0..3 {
            for x in 0..3 {
                p[y * 3 + x] = px[x] / sx * py[y] / sy;
            }
        }
        let occ = sverl::mdp::OccupancyDistribution { p };
        let vhat = PredictionFunction::new(&mdp, {
            let mut v = f.clone();
            v.push(0.0);
            v
        }).unwrap();
        let ctx = ExplainContext::new(&mdp, &policy, &occ);
        for s in mdp.non_terminal_states() {
            for mask in 0..4u64 {
                let c = prediction_characteristic(&ctx, &vhat, s, Coalition(mask), Removal::Conditional).unwrap();
                let m = prediction_characteristic(&ctx, &vhat, s, Coalition(mask), Removal::Marginal).unwrap();
                prop_assert!((c - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn game_reports_satisfy_axioms(params in params_strategy(), pw in prop::collection::vec(0.0f64..1.0, 8..32)) {
        let mdp = random_mdp(&params);
        let policy = random_policy(&mdp, &pw);
        let occ = steady_state_distribution(&mdp, &policy).unwrap();
        let values = policy_evaluation(&mdp, &policy, 1e-12).unwrap();
        let vhat = PredictionFunction::from_values(&values);
        let ctx = ExplainContext::new(&mdp, &policy, &occ);
        let solver = SolverConfig::default();
        for s in mdp.non_terminal_states() {
            let games = [
                CharacteristicGame::behaviour(ctx, s, 0, Removal::Conditional).unwrap(),
                CharacteristicGame::outcome(ctx, &values, s, Removal::Conditional, &solver).unwrap(),
                CharacteristicGame::prediction(ctx, &vhat, s, Removal::Marginal).unwrap(),
            ];
            for g in &games {
                let r = shapley_exact(g).unwrap();
                prop_assert!(r.residual.abs() < 1e-9);
                prop_assert!(verify_axioms(g, &r).unwrap().all_hold());
            }
        }
    }
}

#[test]
fn grand_coalition_returns_the_state_quantities() {
    let e = env::build("dice").unwrap();
    let occ = steady_state_distribution(&e.mdp, &e.policy).unwrap();
    let values = policy_evaluation(&e.mdp, &e.policy, 1e-12).unwrap();
    let vhat = PredictionFunction::from_values(&values);
    let ctx = ExplainContext::new(&e.mdp, &e.policy, &occ);
    let full = Coalition::full(2);
    for s in e.mdp.non_terminal_states() {
        for a in 0..4 {
            assert_eq!(policy_characteristic(&ctx, s, a, full, Removal::Marginal).unwrap(), e.policy.prob(s, a));
        }
        assert_eq!(prediction_characteristic(&ctx, &vhat, s, full, Removal::Conditional).unwrap(), values.v[s]);
        let o = outcome_characteristic(&ctx, s, full, Removal::Conditional, &SolverConfig::default()).unwrap();
        assert!((o - values.v[s]).abs() < 1e-9);
    }
}

#[test]
fn empty_coalition_is_the_occupancy_average() {
    let e = env::build("colour_grid").unwrap();
    let occ = steady_state_distribution(&e.mdp, &e.policy).unwrap();
    let ctx = ExplainContext::new(&e.mdp, &e.policy, &occ);
    for s in e.mdp.non_terminal_states() {
        for a in 0..4 {
            let want = occ.expectation(|x| e.policy.prob(x, a));
            for removal in [Removal::Conditional, Removal::Marginal] {
                let got = policy_characteristic(&ctx, s, a, Coalition::EMPTY, removal).unwrap();
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn roadsign_agent_a_outcome_table() {
    // Agent A follows the direction sign when it can see it and otherwise
    // turns uniformly at random.
    let e = env::build("roadsign").unwrap();
    let values = policy_evaluation(&e.mdp, &e.policy, 1e-12).unwrap();
    let near = e.mdp.state_by_values(&["L".into(), 2.into()]).unwrap();
    let far = e.mdp.state_by_values(&["R".into(), 10.into()]).unwrap();
    let solver = SolverConfig::default();
    for (s, follow) in [(far, [0.0, 1.0]), (near, [1.0, 0.0])] {
        let eval = OutcomeEvaluator::new(&e.mdp, &e.policy, s, &solver).unwrap();
        let v = |c: Coalition| {
            let row = if c.contains(0) { follow } else { [0.5, 0.5] };
            eval.value_with_row(&row).unwrap()
        };
        let table = sverl::shapley::TableGame::from_fn(2, v);
        let r = sverl::shapley::shapley_from_table(&table);
        if s == far {
            for c in 0..4 {
                assert!((table.get(Coalition(c)) - 8.0).abs() < 1e-9, "{c}");
            }
            assert!(r.phi.iter().all(|p| p.abs() < 1e-9));
        } else {
            let want = [4.0, 9.0, 4.0, 9.0];
            for c in 0..4 {
                assert!((table.get(Coalition(c)) - want[c as usize]).abs() < 1e-9);
            }
            assert!((r.phi[0] - 5.0).abs() < 1e-9 && r.phi[1].abs() < 1e-9);
        }
        assert!((v(Coalition::full(2)) - values.v[s]).abs() < 1e-9);
    }
}

#[test]
fn continuous_characteristic_averages_mean_actions() {
    let e = env::build("roadsign").unwrap();
    let occ = steady_state_distribution(&e.mdp, &e.policy).unwrap();
    let ctx = ExplainContext::new(&e.mdp, &e.policy, &occ);
    let means = MeanActionTable::new(&e.mdp, vec![0.8, -0.4, 0.0], 0.1).unwrap();
    let g = CharacteristicGame::continuous(ctx, &means, 0, Removal::Conditional).unwrap();
    assert!((g.evaluate(Coalition::EMPTY).unwrap() - 0.2).abs() < 1e-12);
    assert!((g.evaluate(Coalition::full(2)).unwrap() - 0.8).abs() < 1e-12);
    let r = shapley_exact(&g).unwrap();
    assert!((r.phi[0] - 0.3).abs() < 1e-12 && (r.phi[1] - 0.3).abs() < 1e-12);
}

#[test]
fn unvisited_conditioning_errors_or_falls_back() {
    // Turning left at the first sign ends the episode, so (L, 2) is never
    // visited.
    let e = env::build("roadsign").unwrap();
    let left = e.mdp.action_index("L").unwrap();
    let choice: Vec<_> = (0..e.mdp.n_states()).map(|s| (!e.mdp.is_terminal(s)).then_some(left)).collect();
    let policy = StochasticPolicy::deterministic(&e.mdp, &choice).unwrap();
    let occ = steady_state_distribution(&e.mdp, &policy).unwrap();
    let near = e.mdp.state_by_values(&["L".into(), 2.into()]).unwrap();
    assert_eq!(occ.p[near], 0.0);
    let ctx = ExplainContext::new(&e.mdp, &policy, &occ);
    let direction = Coalition::singleton(0);
    assert!(matches!(
        policy_characteristic(&ctx, near, left, direction, Removal::Conditional),
        Err(Error::ZeroMassConditioning(_))
    ));
    let lenient = ctx.with_options(RemovalOptions { zero_mass: ZeroMassPolicy::UniformFallback, ..Default::default() });
    assert_eq!(policy_characteristic(&lenient, near, left, direction, Removal::Conditional).unwrap(), 1.0);
}

#[test]
fn marginal_removal_rejects_missing_composites_unless_skipped() {
    let e = env::build("roadsign").unwrap();
    let occ = steady_state_distribution(&e.mdp, &e.policy).unwrap();
    let ctx = ExplainContext::new(&e.mdp, &e.policy, &occ);
    // (R, 10) with distance replaced by 2 gives (R, 2), which is no state.
    let err = policy_characteristic(&ctx, 0, 0, Coalition::singleton(0), Removal::Marginal);
    assert!(matches!(err, Err(Error::InvalidComposite(_))), "{err:?}");
    let skip = ctx.with_options(RemovalOptions { skip_invalid_composites: true, ..Default::default() });
    let p = policy_characteristic(&skip, 0, e.mdp.action_index("R").unwrap(), Coalition::singleton(0), Removal::Marginal)
        .unwrap();
    assert_eq!(p, 1.0);
}
