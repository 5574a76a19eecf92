//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::cell::Cell;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sverl::approx::{exact_for_target, mc_outcome_characteristic, mc_shapley, McConfig, McTarget};
use sverl::characteristics::{Coalition, Removal};
use sverl::explain::{Explainer, ExplanationRequest, Method, Target};
use sverl::mdp::StateId;
use sverl::reproduce::{reproduce, TAXI_STATES, TICTACTOE_STATE};
use sverl::shapley::{
    global_behaviour_expectation, global_prediction_expectation, parliament_game, shapley_exact, shapley_from_table,
    shapley_permutation, ShapleyReport, TableGame,
};

type Check = Result<(), String>;

thread_local! {
    static WORST_RESIDUAL: Cell<f64> = const { Cell::new(0.0) };
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(label: &str, got: f64, want: f64, tol: f64) -> Check {
    ensure!((got - want).abs() < tol, "{label}: got {got}, want {want} (tol {tol})");
    Ok(())
}

/// Rounds to `d` decimals and compares with the printed value.
fn printed(label: &str, got: f64, want: f64, d: i32) -> Check {
    let scale = 10f64.powi(d);
    let rounded = (got * scale).round() / scale;
    ensure!((rounded - want).abs() < 0.5 / scale, "{label}: {got} prints as {rounded}, want {want}");
    Ok(())
}

fn record(r: &ShapleyReport) {
    WORST_RESIDUAL.with(|w| w.set(w.get().max(r.residual.abs())));
}

fn table_passes(id: &str) -> Check {
    let r = reproduce(id).map_err(|e| e.to_string())?;
    ensure!(r.pass, "reproduce {id} failed:\n{}", r.to_table());
    Ok(())
}

/// `[v(F), v({0}), v({1}), v({})]` and the Shapley report of a two-feature game.
fn two_feature(ex: &Explainer, target: Target, sel: &str, action: Option<&str>) -> Result<([f64; 4], ShapleyReport), String> {
    let s = ex.select_state(sel).map_err(|e| e.to_string())?;
    let a = action.map(|a| ex.select_action(a)).transpose().map_err(|e| e.to_string())?;
    let game = ex.game(target, s, a, Removal::Conditional).map_err(|e| e.to_string())?;
    let table = TableGame::tabulate(&game).map_err(|e| e.to_string())?;
    let r = shapley_from_table(&table);
    record(&r);
    let c = [
        table.get(Coalition::full(2)),
        table.get(Coalition::singleton(0)),
        table.get(Coalition::singleton(1)),
        table.get(Coalition::EMPTY),
    ];
    Ok((c, r))
}

fn check_row(label: &str, got: ([f64; 4], ShapleyReport), chars: [f64; 4], phi: [f64; 2], tol: f64) -> Check {
    for k in 0..4 {
        close(&format!("{label} v[{k}]"), got.0[k], chars[k], tol)?;
    }
    for i in 0..2 {
        close(&format!("{label} phi[{i}]"), got.1.phi[i], phi[i], tol)?;
    }
    Ok(())
}

fn catalog(name: &str) -> Result<Explainer, String> {
    Explainer::from_catalog(name).map_err(|e| e.to_string())
}

fn roadsign_behaviour() -> Check {
    let start = Instant::now();
    let ex = catalog("roadsign")?;
    let hi = [1.0, 1.0, 1.0, 0.5];
    let lo = [0.0, 0.0, 0.0, 0.5];
    for (sel, good, bad) in [("direction=R,distance=10", "R", "L"), ("direction=L,distance=2", "L", "R")] {
        check_row(&format!("{sel}/{good}"), two_feature(&ex, Target::Behaviour, sel, Some(good))?, hi, [0.25, 0.25], 1e-9)?;
        check_row(&format!("{sel}/{bad}"), two_feature(&ex, Target::Behaviour, sel, Some(bad))?, lo, [-0.25, -0.25], 1e-9)?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs:.3} s");
    table_passes("roadsign-behaviour")
}

fn roadsign_outcome() -> Check {
    let ex = catalog("roadsign")?;
    let r10 = two_feature(&ex, Target::Outcome, "direction=R,distance=10", None)?;
    for (k, phi) in r10.1.phi.iter().enumerate() {
        close(&format!("(R,10) phi[{k}]"), *phi, 0.0, 1e-9)?;
    }
    check_row("(L,2)", two_feature(&ex, Target::Outcome, "direction=L,distance=2", None)?, [9.0, 9.0, 9.0, 4.0], [2.5, 2.5], 1e-9)?;
    table_passes("roadsign-outcome")
}

fn roadsign_prediction() -> Check {
    let ex = catalog("roadsign")?;
    let r10 = two_feature(&ex, Target::Prediction, "direction=R,distance=10", None)?;
    let l2 = two_feature(&ex, Target::Prediction, "direction=L,distance=2", None)?;
    close("baseline", r10.0[3], 8.5, 1e-9)?;
    close("baseline", l2.0[3], 8.5, 1e-9)?;
    for i in 0..2 {
        close("(R,10) phi", r10.1.phi[i], -0.25, 1e-9)?;
        close("(L,2) phi", l2.1.phi[i], 0.25, 1e-9)?;
    }
    table_passes("roadsign-prediction")
}

fn colour_grid() -> Check {
    let ex = catalog("colour_grid")?;
    check_row("(3,green)/N", two_feature(&ex, Target::Behaviour, "index=3,colour=green", Some("N"))?, [1.0, 1.0, 0.5, 0.25], [0.625, 0.125], 1e-9)?;
    check_row("(3,green)/W", two_feature(&ex, Target::Behaviour, "index=3,colour=green", Some("W"))?, [0.0, 0.0, 0.5, 0.25], [-0.375, 0.125], 1e-9)?;
    check_row("(1,red)/E", two_feature(&ex, Target::Behaviour, "index=1,colour=red", Some("E"))?, [1.0, 1.0, 1.0, 0.25], [0.375, 0.375], 1e-9)?;
    for a in ["N", "S", "W"] {
        check_row(&format!("(1,red)/{a}"), two_feature(&ex, Target::Behaviour, "index=1,colour=red", Some(a))?, [0.0, 0.0, 0.0, 0.25], [-0.125, -0.125], 1e-9)?;
    }
    table_passes("colour-grid-behaviour")
}

fn five_state_grid() -> Check {
    let ex = catalog("five_state_grid")?;
    let s1 = ex.select_state("x=1,y=1").map_err(|e| e.to_string())?;
    let s2 = ex.select_state("x=2,y=1").map_err(|e| e.to_string())?;
    close("p(state 1)", ex.occ.prob(s1), 1.0 / 7.0, 1e-9)?;
    close("p(state 2)", ex.occ.prob(s2), 2.0 / 7.0, 1e-9)?;
    let (c1, r1) = two_feature(&ex, Target::Outcome, "x=1,y=1", None)?;
    for (k, want) in [6.0, 6.0, 4.0, 0.0].into_iter().enumerate() {
        printed(&format!("state 1 v[{k}]"), c1[k], want, 2)?;
        close(&format!("state 1 v[{k}]"), c1[k], want, 5e-3)?;
    }
    let (_, r2) = two_feature(&ex, Target::Outcome, "x=2,y=1", None)?;
    for (label, r, want) in [("state 1", &r1, [4.0, 2.0]), ("state 2", &r2, [0.33, -0.17])] {
        for i in 0..2 {
            printed(&format!("{label} phi[{i}]"), r.phi[i], want[i], 2)?;
            close(&format!("{label} phi[{i}]"), r.phi[i], want[i], 5e-3)?;
        }
    }
    table_passes("gridworld-behaviour")?;
    table_passes("gridworld-outcome")
}

fn dice() -> Check {
    let ex = catalog("dice")?;
    let s36 = ex.select_state("d1=3,d2=6").map_err(|e| e.to_string())?;
    printed("p(3,6)", ex.occ.prob(s36), 0.024, 3)?;
    close("p(3,6)", ex.occ.prob(s36), 0.024, 1e-3)?;
    for (sel, chars, phi) in [
        ("d1=3,d2=6", [0.67, 0.45, 0.90, 0.66], [-0.22, 0.23]),
        ("d1=1,d2=1", [0.36, 0.45, 0.45, 0.66], [-0.15, -0.15]),
    ] {
        let (c, r) = two_feature(&ex, Target::Prediction, sel, None)?;
        for k in 0..4 {
            printed(&format!("{sel} v[{k}]"), c[k], chars[k], 2)?;
        }
        for i in 0..2 {
            printed(&format!("{sel} phi[{i}]"), r.phi[i], phi[i], 2)?;
        }
    }
    // A die's attribution is negative exactly when the policy re-rolls it.
    let names = ex.mdp().schema().names().to_vec();
    for d1 in 1..=6 {
        for d2 in 1..=6 {
            let sel = format!("d1={d1},d2={d2}");
            let s = ex.select_state(&sel).map_err(|e| e.to_string())?;
            let a = ex.env.policy.mode(s).ok_or("dice policy has no mode")?;
            let action = ex.mdp().action_name(a).to_string();
            let (_, r) = two_feature(&ex, Target::Prediction, &sel, None)?;
            for (i, name) in names.iter().enumerate() {
                let rerolled = action == "reroll-both" || action == format!("reroll-{}", i + 1);
                ensure!((r.phi[i] < 0.0) == rerolled, "{sel}: phi_{name} = {} under {action}", r.phi[i]);
            }
        }
    }
    table_passes("dice-prediction")
}

fn tictactoe() -> Check {
    let ex = catalog("tictactoe")?;
    for s in ex.occ.support() {
        ensure!(ex.values.v[s].abs() < 1e-9, "v({s}) = {}", ex.values.v[s]);
    }
    let s = ex.select_state(TICTACTOE_STATE).map_err(|e| e.to_string())?;
    let pred = shapley_exact(&ex.game(Target::Prediction, s, None, Removal::Conditional).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    record(&pred);
    ensure!(pred.phi.len() == 9, "{} features", pred.phi.len());
    for (i, phi) in pred.phi.iter().enumerate() {
        close(&format!("prediction phi[{i}]"), *phi, 0.0, 1e-9)?;
    }
    let out = shapley_exact(&ex.game(Target::Outcome, s, None, Removal::Conditional).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    record(&out);
    let values = ex.mdp().feature_values(s);
    let opponent: Vec<usize> = (0..9).filter(|&i| values[i].to_string() == "O").collect();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| out.phi[j].total_cmp(&out.phi[i]));
    let mut top = order[..2].to_vec();
    top.sort_unstable();
    ensure!(top == opponent, "largest outcome attributions on {top:?}, O squares are {opponent:?}: {:?}", out.phi);
    table_passes("tictactoe-prediction")?;
    table_passes("tictactoe-outcome")
}

fn random_table(rng: &mut ChaCha8Rng, n: usize) -> TableGame {
    TableGame::new(n, (0..1usize << n).map(|_| rng.gen_range(-10.0..10.0)).collect()).unwrap()
}

fn axioms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..150 {
        let n = rng.gen_range(2..=6);
        let (u, v) = (random_table(&mut rng, n), random_table(&mut rng, n));
        let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let (ru, rv) = (shapley_from_table(&u), shapley_from_table(&v));
        record(&ru);
        let w = shapley_from_table(&TableGame::combine(a, &u, b, &v).map_err(|e| e.to_string())?);
        for i in 0..n {
            close(&format!("linearity #{trial}"), w.phi[i], a * ru.phi[i] + b * rv.phi[i], 1e-9)?;
        }

        let null = rng.gen_range(0..n);
        let nulled = TableGame::from_fn(n, |c| u.get(c.without(null)));
        let rn = shapley_from_table(&nulled);
        record(&rn);
        close(&format!("nullity #{trial}"), rn.phi[null], 0.0, 1e-12)?;

        let i = rng.gen_range(0..n);
        let j = (i + rng.gen_range(1..n)) % n;
        let sym = TableGame::from_fn(n, |c| if c.contains(j) && !c.contains(i) { u.get(c.without(j).with(i)) } else { u.get(c) });
        let rs = shapley_from_table(&sym);
        record(&rs);
        close(&format!("symmetry #{trial}"), rs.phi[i], rs.phi[j], 1e-9)?;
    }
    for trial in 0..60 {
        let n = 1 + trial % 8;
        let g = random_table(&mut rng, n);
        let (x, y) = (shapley_exact(&g).map_err(|e| e.to_string())?, shapley_permutation(&g).map_err(|e| e.to_string())?);
        for k in 0..n {
            close(&format!("exact vs permutation n={n}"), x.phi[k], y.phi[k], 1e-12)?;
        }
    }
    let p = shapley_exact(&parliament_game()).map_err(|e| e.to_string())?;
    record(&p);
    for phi in &p.phi {
        close("parliament", *phi, 1.0 / 3.0, 1e-15)?;
    }
    let worst = WORST_RESIDUAL.with(Cell::get);
    ensure!(worst < 1e-9, "largest efficiency residual {worst}");
    table_passes("parliament")
}

fn global_expectations() -> Check {
    for name in ["roadsign", "colour_grid", "five_state_grid", "dice"] {
        let ex = catalog(name)?;
        let ctx = ex.ctx();
        for a in 0..ex.mdp().n_actions() {
            let e = global_behaviour_expectation(&ctx, a, Removal::Conditional).map_err(|e| e.to_string())?;
            for x in e {
                close(&format!("{name} behaviour a={a}"), x, 0.0, 1e-8)?;
            }
        }
        let e = global_prediction_expectation(&ctx, &ex.vhat, Removal::Conditional).map_err(|e| e.to_string())?;
        for x in e {
            close(&format!("{name} prediction"), x, 0.0, 1e-8)?;
        }
    }
    table_passes("global-expectations")
}

fn monte_carlo() -> Check {
    let ex = catalog("dice")?;
    let s: StateId = ex.select_state("d1=3,d2=6").map_err(|e| e.to_string())?;
    let exact = exact_for_target(&ex.ctx(), McTarget::Prediction(&ex.vhat), s, Removal::Conditional).map_err(|e| e.to_string())?;
    let est = mc_shapley(&ex.ctx(), McTarget::Prediction(&ex.vhat), s, Removal::Conditional, &McConfig::new(1_000_000, 11))
        .map_err(|e| e.to_string())?;
    for i in 0..2 {
        let err = (est.report.phi[i] - exact.phi[i]).abs();
        ensure!(err < 3.0 * est.std_error[i], "phi[{i}] off by {err}, se {}", est.std_error[i]);
        ensure!(err < 0.01, "phi[{i}] off by {err}");
    }

    let rs = catalog("roadsign")?;
    let l2 = rs.select_state("direction=L,distance=2").map_err(|e| e.to_string())?;
    let v = mc_outcome_characteristic(&rs.ctx(), l2, Coalition::EMPTY, Removal::Conditional, &McConfig::new(100_000, 5))
        .map_err(|e| e.to_string())?;
    close("roadsign (L,2) empty-coalition rollout", v.mean, 4.0, 0.05)?;

    let mut req = ExplanationRequest::new("dice", Target::Prediction, "d1=3,d2=6");
    req.method = Method::Mc;
    req.samples = 50_000;
    req.seed = 99;
    let render = || -> Result<String, String> {
        let mut json = ex.explain(&req).map_err(|e| e.to_string())?.to_json().map_err(|e| e.to_string())?;
        // Wall-clock time is the one field allowed to differ between runs.
        let v: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
        let mut v = v;
        v["metadata"]["runtime_ms"] = serde_json::Value::Null;
        json = serde_json::to_string(&v).map_err(|e| e.to_string())?;
        Ok(json)
    };
    let (first, second) = (render()?, render()?);
    ensure!(first == second, "two runs with seed 99 differ");
    Ok(())
}

fn taxi() -> Check {
    let ex = catalog("taxi")?;
    let names = ex.mdp().schema().names().to_vec();
    ensure!(names.len() == 4, "taxi has {} features", names.len());
    for (k, sel) in TAXI_STATES.iter().enumerate() {
        let start = Instant::now();
        let s = ex.select_state(sel).map_err(|e| e.to_string())?;
        let a = ex.env.policy.mode(s).ok_or("taxi policy has no mode")?;
        for target in [Target::Behaviour, Target::Outcome, Target::Prediction] {
            let action = (target == Target::Behaviour).then_some(a);
            let game = ex.game(target, s, action, Removal::Conditional).map_err(|e| e.to_string())?;
            let r = shapley_exact(&game).map_err(|e| e.to_string())?;
            ensure!(r.residual.abs() < 1e-8, "{sel} {target}: residual {}", r.residual);
            if k == 0 && target == Target::Behaviour {
                let arg = (0..4).max_by(|&i, &j| r.phi[i].total_cmp(&r.phi[j])).unwrap();
                ensure!(names[arg] == "passenger", "largest behaviour attribution on {}: {:?}", names[arg], r.phi);
            }
        }
        let secs = start.elapsed().as_secs_f64();
        ensure!(secs < 60.0, "{sel} took {secs:.1} s");
    }
    table_passes("taxi")
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("road-sign behaviour", roadsign_behaviour),
        ("road-sign outcome", roadsign_outcome),
        ("road-sign prediction", roadsign_prediction),
        ("colour gridworld behaviour", colour_grid),
        ("five-state gridworld", five_state_grid),
        ("dice prediction and re-roll signs", dice),
        ("tic-tac-toe", tictactoe),
        ("axiom suite", axioms),
        ("global expectations vanish", global_expectations),
        ("monte carlo convergence and determinism", monte_carlo),
        ("taxi", taxi),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS {:>2} {name} ({secs:.2} s)", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2} s): {why}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
