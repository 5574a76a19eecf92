mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use sverl::env::{self, build_tictactoe_with, minimax_value, taxi_state, OpponentTieBreak};
use sverl::explain::Explainer;
use sverl::mdp::{
    bellman_residual, greedy_policy, policy_evaluation, q_from_values, q_learning, simulate_occupancy,
    steady_state_distribution, value_iteration, MdpDocument, QLearningConfig, StochasticPolicy, TabularMdp,
};
use sverl::reproduce::{TAXI_STATES, TICTACTOE_STATE};

use common::{random_mdp, random_policy, RandomMdpParams};

#[test]
fn catalog_lists_seven_environments() {
    let names = env::environment_names();
    assert_eq!(names.len(), 7);
    assert!(names.contains(&"roadsign") && names.contains(&"taxi"));
    let counts: Vec<(usize, usize)> = names
        .iter()
        .map(|n| {
            let e = env::build(n).unwrap();
            (e.mdp.n_non_terminal(), e.mdp.n_features())
        })
        .collect();
    assert_eq!(counts, vec![(2, 2), (4, 2), (4, 2), (36, 2), (931, 9), (37, 16), (500, 4)]);
}

#[test]
fn unknown_environment_is_an_error() {
    assert!(matches!(env::build("nope"), Err(sverl::Error::UnknownEnvironment(_))));
}

#[test]
fn steady_state_matches_simulation_on_every_environment() {
    for name in env::environment_names() {
        let e = env::build(name).unwrap();
        let occ = steady_state_distribution(&e.mdp, &e.policy).unwrap();
        let sim = simulate_occupancy(&e.mdp, &e.policy, 400_000, 11);
        let worst = (0..e.mdp.n_states()).map(|s| (occ.p[s] - sim.p[s]).abs()).fold(0.0, f64::max);
        assert!(worst < 0.005, "{name}: {worst}");
        let total: f64 = occ.p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn reference_values_satisfy_their_bellman_equations() {
    for name in env::environment_names() {
        let e = env::build(name).unwrap();
        let v = policy_evaluation(&e.mdp, &e.policy, 1e-12).unwrap();
        let q = q_from_values(&e.mdp, &v.v);
        let na = e.mdp.n_actions();
        for s in e.mdp.non_terminal_states() {
            let backed: f64 = e.mdp.available(s).iter().map(|&a| e.policy.prob(s, a) * q[s * na + a]).sum();
            assert!((backed - v.v[s]).abs() < 1e-8, "{name} state {s}");
        }
    }
}

#[test]
fn value_iteration_policies_evaluate_to_their_values() {
    for name in ["dice", "tictactoe", "mastermind", "taxi", "five_state_grid", "colour_grid", "roadsign"] {
        let e = env::build(name).unwrap();
        let tol = 1e-10;
        let (vi, policy) = value_iteration(&e.mdp, tol).unwrap();
        assert!(bellman_residual(&e.mdp, &vi.v) < 1e-8, "{name}");
        let pe = policy_evaluation(&e.mdp, &policy, tol).unwrap();
        let worst = e.mdp.non_terminal_states().map(|s| (vi.v[s] - pe.v[s]).abs()).fold(0.0, f64::max);
        // VI stops within tol of its fixed point; allow the same slack on
        // each side, scaled by the horizon for discounted tasks.
        let slack = 2.0 * tol / (1.0 - e.mdp.discount()).max(1e-2);
        assert!(worst <= slack.max(2.0 * tol), "{name}: {worst}");
    }
}

#[test]
fn fixed_policies_match_their_reference_values() {
    let ex = Explainer::from_catalog("roadsign").unwrap();
    assert_eq!(ex.values.v[..2], [8.0, 9.0]);
    let ex = Explainer::from_catalog("five_state_grid").unwrap();
    let s1 = ex.select_state("x=1,y=1").unwrap();
    assert!((ex.occ.p[s1] - 1.0 / 7.0).abs() < 1e-12);
    assert!((ex.values.v[s1] - 6.0).abs() < 1e-9);
    let ex = Explainer::from_catalog("colour_grid").unwrap();
    for s in ex.mdp().non_terminal_states() {
        assert!((ex.occ.p[s] - 0.25).abs() < 1e-12);
        assert!((ex.values.v[s] - 10.0).abs() < 1e-8);
    }
}

#[test]
fn q_learning_recovers_the_optimal_roadsign_and_colour_grid_policies() {
    let e = env::build("roadsign").unwrap();
    let cfg = QLearningConfig { step_size: 1.0, episodes: 2_000, exploration: 0.3, seed: 5, ..Default::default() };
    let (_, learned) = q_learning(&e.mdp, &cfg).unwrap();
    let (_, optimal) = value_iteration(&e.mdp, 1e-12).unwrap();
    for s in e.mdp.non_terminal_states() {
        assert_eq!(learned.mode(s), optimal.mode(s));
    }
    let e = env::build("colour_grid").unwrap();
    let cfg = QLearningConfig { step_size: 0.2, episodes: 3_000, exploration: 0.3, seed: 5, max_steps: 200 };
    let (_, learned) = q_learning(&e.mdp, &cfg).unwrap();
    for s in e.mdp.non_terminal_states() {
        assert_eq!(learned.mode(s), e.policy.mode(s), "state {s}");
    }
}

/// Clue of `guess` against `code`: exact matches, then letters in common
/// that are not exact matches.
fn clue(code: [char; 2], guess: [char; 2]) -> (u8, u8) {
    let exact = (0..2).filter(|&i| code[i] == guess[i]).count();
    let common: usize = ['A', 'B']
        .iter()
        .map(|l| code.iter().filter(|c| *c == l).count().min(guess.iter().filter(|g| *g == l).count()))
        .sum();
    (exact as u8, (common - exact) as u8)
}

#[test]
fn mastermind_transitions_are_belief_updates() {
    let e = env::build("mastermind").unwrap();
    let mdp = &e.mdp;
    let codes: Vec<[char; 2]> = vec![['A', 'A'], ['A', 'B'], ['B', 'A'], ['B', 'B']];
    let history = |s: usize| -> Vec<([char; 2], (u8, u8))> {
        let v: Vec<String> = mdp.feature_values(s).iter().map(|v| v.to_string()).collect();
        (0..4)
            .filter(|r| v[r * 4] != "empty")
            .map(|r| {
                let g = [v[r * 4].chars().next().unwrap(), v[r * 4 + 1].chars().next().unwrap()];
                (g, (v[r * 4 + 2].parse().unwrap(), v[r * 4 + 3].parse().unwrap()))
            })
            .collect()
    };
    for s in mdp.non_terminal_states() {
        let h = history(s);
        let consistent: Vec<[char; 2]> =
            codes.iter().copied().filter(|&c| h.iter().all(|&(g, k)| clue(c, g) == k)).collect();
        assert!(!consistent.is_empty());
        for a in 0..4 {
            let guess = codes[a];
            let mut want: BTreeMap<String, f64> = BTreeMap::new();
            for &c in &consistent {
                let key = if c == guess || h.len() == 2 {
                    "end".to_string()
                } else {
                    let mut n = h.clone();
                    n.push((guess, clue(c, guess)));
                    format!("{n:?}")
                };
                *want.entry(key).or_default() += 1.0 / consistent.len() as f64;
            }
            let mut got: BTreeMap<String, f64> = BTreeMap::new();
            for t in mdp.transitions(s, a) {
                let key = if mdp.is_terminal(t.next) { "end".to_string() } else { format!("{:?}", history(t.next)) };
                *got.entry(key).or_default() += t.prob;
            }
            assert_eq!(want.len(), got.len(), "state {s} guess {a}");
            for (k, p) in &want {
                assert!((got[k] - p).abs() < 1e-12, "state {s} guess {a} {k}");
            }
        }
    }
    let v = policy_evaluation(mdp, &e.policy, 1e-12).unwrap();
    let start = mdp.initial().iter().position(|&p| p > 0.0).unwrap();
    assert!((v.v[start] + 1.0).abs() < 1e-12);
}

#[test]
fn tictactoe_values_are_zero_and_blocking_is_forced() {
    let ex = Explainer::from_catalog("tictactoe").unwrap();
    for s in ex.occ.support() {
        assert!(ex.values.v[s].abs() < 1e-9);
    }
    let s = ex.select_state(TICTACTOE_STATE).unwrap();
    assert!(ex.occ.p[s] > 0.0);
    let q = q_from_values(ex.mdp(), &ex.values.v);
    let na = ex.mdp().n_actions();
    let bc = ex.mdp().action_index("bc").unwrap();
    for &a in ex.mdp().available(s) {
        let want = if a == bc { 0.0 } else { -1.0 };
        assert!((q[s * na + a] - want).abs() < 1e-9, "{}", ex.mdp().action_name(a));
    }
    assert_eq!(ex.env.policy.mode(s), Some(bc));
}

#[test]
fn minimax_oracle_agrees_on_the_empty_board() {
    assert_eq!(minimax_value(&[0; 9], 2), 0);
    assert_eq!(minimax_value(&[0; 9], 1), 0);
    // O threatens the bottom row and X to move cannot also win.
    let b = [0, 0, 0, 0, 1, 0, 2, 0, 2];
    assert_eq!(minimax_value(&b, 1), 0);
    assert_eq!(minimax_value(&b, 2), -1);
}

#[test]
fn tictactoe_tie_breaks_agree_on_values() {
    let uniform = build_tictactoe_with(OpponentTieBreak::Uniform);
    let lowest = build_tictactoe_with(OpponentTieBreak::LowestIndex);
    let vu = policy_evaluation(&uniform.mdp, &uniform.policy, 1e-12).unwrap();
    let vl = policy_evaluation(&lowest.mdp, &lowest.policy, 1e-12).unwrap();
    let start = |m: &TabularMdp, v: &[f64]| m.initial().iter().zip(v).map(|(p, x)| p * x).sum::<f64>();
    assert!(start(&uniform.mdp, &vu.v).abs() < 1e-9);
    assert!(start(&lowest.mdp, &vl.v).abs() < 1e-9);
}

#[test]
fn taxi_dropoff_and_reference_states() {
    let ex = Explainer::from_catalog("taxi").unwrap();
    let mdp = ex.mdp();
    // In the taxi at B with destination B: drop off for +20.
    let at_b = taxi_state(mdp, 3, 4, "in-taxi", "B").unwrap();
    assert!((ex.values.v[at_b] - 20.0).abs() < 1e-9);
    assert_eq!(mdp.action_name(ex.env.policy.mode(at_b).unwrap()), "Dropoff");
    // One step north of B: one move then drop off.
    let above = taxi_state(mdp, 3, 3, "in-taxi", "B").unwrap();
    assert!((ex.values.v[above] - 19.0).abs() < 1e-9);
    for sel in TAXI_STATES {
        let s = ex.select_state(sel).unwrap();
        assert_eq!(mdp.action_name(ex.env.policy.mode(s).unwrap()), "South");
        assert!(ex.occ.p[s] > 0.0);
    }
    // Walls: moving east from (1, 0) is blocked by the wall right of R.
    let s = taxi_state(mdp, 1, 0, "R", "G").unwrap();
    let east = mdp.action_index("East").unwrap();
    let t = mdp.transitions(s, east);
    assert_eq!(t.len(), 1);
    assert_eq!(t[0].next, s);
    assert_eq!(t[0].reward, -1.0);
}

#[test]
fn dice_policy_rerolls_low_dice() {
    let ex = Explainer::from_catalog("dice").unwrap();
    let mdp = ex.mdp();
    let keep = mdp.action_index("keep").unwrap();
    let six_six = ex.select_state("d1=6,d2=6").unwrap();
    assert_eq!(ex.env.policy.mode(six_six), Some(keep));
    let one_one = ex.select_state("d1=1,d2=1").unwrap();
    assert_eq!(mdp.action_name(ex.env.policy.mode(one_one).unwrap()), "reroll-both");
    let s = ex.select_state("d1=3,d2=6").unwrap();
    assert_eq!(mdp.action_name(ex.env.policy.mode(s).unwrap()), "reroll-1");
    assert!((ex.values.v[s] - 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn interchange_round_trip_preserves_catalog_environments() {
    for name in ["roadsign", "dice", "mastermind"] {
        let e = env::build(name).unwrap();
        let text = e.mdp.to_json().unwrap();
        let back = TabularMdp::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(MdpDocument::from_mdp(&back), MdpDocument::from_mdp(&e.mdp));
    }
}

fn params_strategy() -> impl Strategy<Value = RandomMdpParams> {
    (
        1usize..=3,
        1usize..=3,
        1usize..=3,
        0.3f64..0.99,
        prop::collection::vec(0.0f64..1.0, 16..48),
        prop::collection::vec(-5.0f64..5.0, 4..12),
        0.02f64..0.5,
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
    fn greedy_evaluation_matches_value_iteration(params in params_strategy()) {
        let mdp = random_mdp(&params);
        let tol = 1e-10;
        let (vi, policy) = value_iteration(&mdp, tol).unwrap();
        prop_assert!(bellman_residual(&mdp, &vi.v) < 1e-8);
        let pe = policy_evaluation(&mdp, &policy, tol).unwrap();
        for s in mdp.non_terminal_states() {
            prop_assert!((vi.v[s] - pe.v[s]).abs() < 2.0 * tol / (1.0 - params.discount));
        }
        let greedy = greedy_policy(&mdp, &q_from_values(&mdp, &vi.v), 1e-9);
        prop_assert_eq!(greedy, policy);
    }

    #[test]
    fn occupancy_solves_the_visit_count_balance(params in params_strategy(), pw in prop::collection::vec(0.0f64..1.0, 8..32)) {
        // mu = d + gamma P^T mu, normalised.
        let mdp = random_mdp(&params);
        let policy = random_policy(&mdp, &pw);
        let occ = steady_state_distribution(&mdp, &policy).unwrap();
        let n = mdp.n_states();
        let mut inflow = mdp.initial().to_vec();
        let mut mu = vec![0.0; n];
        // Power iteration on the visit counts.
        for _ in 0..5_000 {
            let mut next = mdp.initial().to_vec();
            for s in mdp.non_terminal_states() {
                for &a in mdp.available(s) {
                    for t in mdp.transitions(s, a) {
                        if !mdp.is_terminal(t.next) {
                            next[t.next] += mdp.discount() * policy.prob(s, a) * t.prob * inflow[s];
                        }
                    }
                }
            }
            mu = next.clone();
            inflow = next;
        }
        let total: f64 = mu.iter().sum();
        for s in 0..n {
            prop_assert!((occ.p[s] - mu[s] / total).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_policy_is_valid_everywhere(params in params_strategy()) {
        let mdp = random_mdp(&params);
        let u = StochasticPolicy::uniform(&mdp);
        prop_assert!(u.validate(&mdp).is_ok());
        prop_assert!(policy_evaluation(&mdp, &u, 1e-10).is_ok());
    }
}
