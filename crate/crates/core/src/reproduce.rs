//! Recomputes the reference example tables and compares them with the
//! printed numbers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::characteristics::{Coalition, Removal};
use crate::error::{Error, Result};
use crate::explain::{to_canonical_json, Explainer, Target};
use crate::mdp::StateId;
use crate::shapley::{
    global_behaviour_expectation, global_prediction_expectation, parliament_game, shapley_exact, shapley_from_table,
    ShapleyReport, TableGame,
};

/// Table ids accepted by [`reproduce`], with their tolerances.
pub const TABLES: [(&str, &str); 12] = [
    ("roadsign-behaviour", "road-sign behaviour under conditional removal, 1e-9"),
    ("roadsign-outcome", "road-sign outcome for the agent that always acts optimally, 1e-9"),
    ("roadsign-prediction", "road-sign prediction, 1e-9"),
    ("colour-grid-behaviour", "2x2 colour gridworld behaviour, 1e-9"),
    ("gridworld-behaviour", "five-state gridworld action probabilities, 1e-9"),
    ("gridworld-outcome", "five-state gridworld outcome, two printed decimals"),
    ("dice-prediction", "dice prediction at printed precision, plus the re-roll sign pattern"),
    ("tictactoe-prediction", "tic-tac-toe: zero values and zero prediction attributions, 1e-9"),
    ("tictactoe-outcome", "tic-tac-toe outcome: largest attributions on the opponent's squares"),
    ("taxi", "taxi: four-feature games at two states, efficiency and passenger argmax"),
    ("global-expectations", "policy-weighted expectations of behaviour and prediction values vanish, 1e-8"),
    ("parliament", "three-party majority game, 1/3 each"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproductionRow {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    pub computed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Compared after rounding to this many decimals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decimals: Option<u32>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproductionReport {
    pub id: String,
    pub description: String,
    pub rows: Vec<ReproductionRow>,
    pub max_error: f64,
    pub runtime_ms: f64,
    pub pass: bool,
}

impl ReproductionReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReproductionRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{}: {}\n", self.id, self.description);
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        for r in &self.rows {
            let expected = match (r.expected, r.decimals) {
                (Some(e), Some(d)) => format!("{e:.d$}", d = d as usize),
                (Some(e), None) => format!("{e:.6}"),
                (None, _) => "-".to_string(),
            };
            out.push_str(&format!(
                "  {:<width$}  expected {:>10}  computed {:>12.6}  {}\n",
                r.label,
                expected,
                r.computed,
                if r.pass { "ok" } else { "MISMATCH" }
            ));
        }
        out.push_str(&format!(
            "{} {} (max abs error {:.2e}, {:.0} ms)\n",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.max_error,
            self.runtime_ms
        ));
        out
    }
}

#[derive(Default)]
struct Rows(Vec<ReproductionRow>);

impl Rows {
    fn exact(&mut self, label: impl Into<String>, expected: f64, computed: f64, tol: f64) {
        let error = (computed - expected).abs();
        self.0.push(ReproductionRow {
            label: label.into(),
            expected: Some(expected),
            computed,
            error: Some(error),
            tolerance: Some(tol),
            decimals: None,
            pass: error < tol,
        });
    }

    fn printed(&mut self, label: impl Into<String>, expected: f64, computed: f64, decimals: u32) {
        let scale = 10f64.powi(decimals as i32);
        let rounded = (computed * scale).round() / scale;
        let half = 0.5 / scale;
        let error = (computed - expected).abs();
        self.0.push(ReproductionRow {
            label: label.into(),
            expected: Some(expected),
            computed,
            error: Some(error),
            tolerance: Some(half),
            decimals: Some(decimals),
            pass: (rounded - expected).abs() < 1e-9 && error <= half,
        });
    }

    fn check(&mut self, label: impl Into<String>, ok: bool) {
        self.0.push(ReproductionRow {
            label: label.into(),
            expected: Some(1.0),
            computed: if ok { 1.0 } else { 0.0 },
            error: None,
            tolerance: None,
            decimals: None,
            pass: ok,
        });
    }

    fn info(&mut self, label: impl Into<String>, computed: f64) {
        self.0.push(ReproductionRow {
            label: label.into(),
            expected: None,
            computed,
            error: None,
            tolerance: None,
            decimals: None,
            pass: true,
        });
    }
}

/// Characteristic values in the order full, each singleton, empty (the
/// column order of the reference two-feature tables), and the Shapley
/// report.
fn two_feature_game(ex: &Explainer, target: Target, s: StateId, action: Option<usize>) -> Result<([f64; 4], ShapleyReport)> {
    let game = ex.game(target, s, action, Removal::Conditional)?;
    let table = TableGame::tabulate(&game)?;
    let chars = [
        table.get(Coalition::full(2)),
        table.get(Coalition::singleton(0)),
        table.get(Coalition::singleton(1)),
        table.get(Coalition::EMPTY),
    ];
    Ok((chars, shapley_from_table(&table)))
}

fn explainer(name: &str) -> Result<Explainer> {
    Explainer::from_catalog(name)
}

fn roadsign_behaviour(rows: &mut Rows) -> Result<()> {
    let ex = explainer("roadsign")?;
    let cols = ["Both", "Dir", "Dist", "{}"];
    for (sel, label, want) in [
        ("direction=R,distance=10", "(R,10)", [("L", [0.0, 0.0, 0.0, 0.5], [-0.25, -0.25]), ("R", [1.0, 1.0, 1.0, 0.5], [0.25, 0.25])]),
        ("direction=L,distance=2", "(L,2)", [("L", [1.0, 1.0, 1.0, 0.5], [0.25, 0.25]), ("R", [0.0, 0.0, 0.0, 0.5], [-0.25, -0.25])]),
    ] {
        let s = ex.select_state(sel)?;
        rows.exact(format!("{label} p"), 0.5, ex.occ.prob(s), 1e-9);
        for (a, chars, phi) in want {
            let (c, r) = two_feature_game(&ex, Target::Behaviour, s, Some(ex.select_action(a)?))?;
            for k in 0..4 {
                rows.exact(format!("{label} {a} v({})", cols[k]), chars[k], c[k], 1e-9);
            }
            rows.exact(format!("{label} {a} phi_dir"), phi[0], r.phi[0], 1e-9);
            rows.exact(format!("{label} {a} phi_dist"), phi[1], r.phi[1], 1e-9);
        }
    }
    Ok(())
}

fn roadsign_value_game(rows: &mut Rows, target: Target, want: [(&str, &str, [f64; 4], [f64; 2]); 2]) -> Result<()> {
    let ex = explainer("roadsign")?;
    let cols = ["Both", "Dir", "Dist", "{}"];
    for (sel, label, chars, phi) in want {
        let s = ex.select_state(sel)?;
        let (c, r) = two_feature_game(&ex, target, s, None)?;
        for k in 0..4 {
            rows.exact(format!("{label} v({})", cols[k]), chars[k], c[k], 1e-9);
        }
        rows.exact(format!("{label} phi_dir"), phi[0], r.phi[0], 1e-9);
        rows.exact(format!("{label} phi_dist"), phi[1], r.phi[1], 1e-9);
    }
    Ok(())
}

/// Action, characteristic values and attributions.
type ActionRow<'a> = (&'a str, [f64; 4], [f64; 2]);

fn colour_grid(rows: &mut Rows) -> Result<()> {
    let ex = explainer("colour_grid")?;
    let cols = ["Both", "I", "C", "{}"];
    let other = ([0.0, 0.0, 0.0, 0.25], [-0.125, -0.125]);
    let table: [(&str, &str, [ActionRow; 4]); 2] = [
        (
            "index=1,colour=red",
            "(1,red)",
            [
                ("N", other.0, other.1),
                ("E", [1.0, 1.0, 1.0, 0.25], [0.375, 0.375]),
                ("S", other.0, other.1),
                ("W", other.0, other.1),
            ],
        ),
        (
            "index=3,colour=green",
            "(3,green)",
            [
                ("N", [1.0, 1.0, 0.5, 0.25], [0.625, 0.125]),
                ("E", other.0, other.1),
                ("S", other.0, other.1),
                ("W", [0.0, 0.0, 0.5, 0.25], [-0.375, 0.125]),
            ],
        ),
    ];
    for (sel, label, actions) in table {
        let s = ex.select_state(sel)?;
        rows.exact(format!("{label} p"), 0.25, ex.occ.prob(s), 1e-9);
        for (a, chars, phi) in actions {
            let (c, r) = two_feature_game(&ex, Target::Behaviour, s, Some(ex.select_action(a)?))?;
            for k in 0..4 {
                rows.exact(format!("{label} {a} v({})", cols[k]), chars[k], c[k], 1e-9);
            }
            rows.exact(format!("{label} {a} phi_I"), phi[0], r.phi[0], 1e-9);
            rows.exact(format!("{label} {a} phi_C"), phi[1], r.phi[1], 1e-9);
        }
    }
    Ok(())
}

const GRID_STATES: [(&str, &str); 2] = [("x=1,y=1", "state 1"), ("x=2,y=1", "state 2")];

fn gridworld_behaviour(rows: &mut Rows) -> Result<()> {
    let ex = explainer("five_state_grid")?;
    let cols = ["Both", "x", "y", "{}"];
    let want: [[(&str, [f64; 4]); 4]; 2] = [
        [
            ("N", [0.0, 0.0, 2.0 / 3.0, 6.0 / 7.0]),
            ("E", [1.0, 1.0, 1.0 / 3.0, 1.0 / 7.0]),
            ("S", [0.0; 4]),
            ("W", [0.0; 4]),
        ],
        [
            ("N", [1.0, 1.0, 2.0 / 3.0, 6.0 / 7.0]),
            ("E", [0.0, 0.0, 1.0 / 3.0, 1.0 / 7.0]),
            ("S", [0.0; 4]),
            ("W", [0.0; 4]),
        ],
    ];
    for ((sel, label), actions) in GRID_STATES.iter().zip(want) {
        let s = ex.select_state(sel)?;
        for (a, chars) in actions {
            let (c, _) = two_feature_game(&ex, Target::Behaviour, s, Some(ex.select_action(a)?))?;
            for k in 0..4 {
                rows.exact(format!("{label} {a} pi({})", cols[k]), chars[k], c[k], 1e-9);
            }
        }
    }
    Ok(())
}

fn gridworld_outcome(rows: &mut Rows) -> Result<()> {
    let ex = explainer("five_state_grid")?;
    let cols = ["Both", "x", "y", "{}"];
    let want = [(1.0 / 7.0, [6.0, 6.0, 4.0, 0.0], [4.0, 2.0]), (2.0 / 7.0, [7.0, 7.0, 6.5, 6.83], [0.33, -0.17])];
    for ((sel, label), (p, chars, phi)) in GRID_STATES.iter().zip(want) {
        let s = ex.select_state(sel)?;
        rows.exact(format!("{label} p"), p, ex.occ.prob(s), 1e-9);
        let (c, r) = two_feature_game(&ex, Target::Outcome, s, None)?;
        for k in 0..4 {
            rows.printed(format!("{label} v({})", cols[k]), chars[k], c[k], 2);
        }
        rows.printed(format!("{label} phi_x"), phi[0], r.phi[0], 2);
        rows.printed(format!("{label} phi_y"), phi[1], r.phi[1], 2);
    }
    Ok(())
}

fn dice(rows: &mut Rows) -> Result<()> {
    let ex = explainer("dice")?;
    let cols = ["Both", "d1", "d2", "{}"];
    let want = [
        ("d1=3,d2=6", "(3,6)", 0.024, [0.67, 0.45, 0.90, 0.66], [-0.22, 0.23]),
        ("d1=1,d2=1", "(1,1)", 0.018, [0.36, 0.45, 0.45, 0.66], [-0.15, -0.15]),
    ];
    for (sel, label, p, chars, phi) in want {
        let s = ex.select_state(sel)?;
        rows.printed(format!("{label} p"), p, ex.occ.prob(s), 3);
        let (c, r) = two_feature_game(&ex, Target::Prediction, s, None)?;
        for k in 0..4 {
            rows.printed(format!("{label} v({})", cols[k]), chars[k], c[k], 2);
        }
        rows.printed(format!("{label} phi_d1"), phi[0], r.phi[0], 2);
        rows.printed(format!("{label} phi_d2"), phi[1], r.phi[1], 2);
    }
    let mdp = ex.mdp();
    let rerolls = |s: StateId, die: usize| {
        mdp.available(s).iter().any(|&a| {
            let name = mdp.action_name(a);
            ex.env.policy.prob(s, a) > 0.0 && (name == "reroll-both" || name == format!("reroll-{}", die + 1))
        })
    };
    for s in mdp.non_terminal_states() {
        let (_, r) = two_feature_game(&ex, Target::Prediction, s, None)?;
        for die in 0..2 {
            rows.check(
                format!("{} phi_d{} < 0 iff re-rolled", mdp.describe_state(s), die + 1),
                (r.phi[die] < 0.0) == rerolls(s, die),
            );
        }
    }
    Ok(())
}

/// O opened in a corner, X took the centre, O took the adjacent bottom
/// corner: X must now take the bottom centre.
pub const TICTACTOE_STATE: &str = "tl=empty,tc=empty,tr=empty,ml=empty,mc=X,mr=empty,bl=O,bc=empty,br=O";

fn tictactoe_prediction(rows: &mut Rows) -> Result<()> {
    let ex = explainer("tictactoe")?;
    let max_v = ex.occ.support().map(|s| ex.values.value(s).abs()).fold(0.0, f64::max);
    rows.exact("max |v| over visited states", 0.0, max_v, 1e-9);
    let s = ex.select_state(TICTACTOE_STATE)?;
    let r = shapley_exact(&ex.game(Target::Prediction, s, None, Removal::Conditional)?)?;
    for (name, phi) in ex.mdp().schema().names().iter().zip(&r.phi) {
        rows.exact(format!("phi_{name}"), 0.0, *phi, 1e-9);
    }
    Ok(())
}

fn top_two(phi: &[f64]) -> [usize; 2] {
    let mut idx: Vec<usize> = (0..phi.len()).collect();
    idx.sort_by(|&a, &b| phi[b].total_cmp(&phi[a]));
    let mut top = [idx[0], idx[1]];
    top.sort();
    top
}

fn tictactoe_outcome(rows: &mut Rows) -> Result<()> {
    let ex = explainer("tictactoe")?;
    let s = ex.select_state(TICTACTOE_STATE)?;
    let r = shapley_exact(&ex.game(Target::Outcome, s, None, Removal::Conditional)?)?;
    let names = ex.mdp().schema().names();
    for (name, phi) in names.iter().zip(&r.phi) {
        rows.info(format!("phi_{name}"), *phi);
    }
    rows.exact("efficiency residual", 0.0, r.residual, 1e-9);
    let opponent: Vec<usize> = (0..9).filter(|&i| ex.mdp().feature_values(s)[i].to_string() == "O").collect();
    rows.check("two largest attributions are the O squares", top_two(&r.phi).to_vec() == opponent);
    Ok(())
}

/// First state: passenger at B, destination G, taxi two rows above B.
/// Second state: passenger in the taxi, destination B, same cell.
pub const TAXI_STATES: [&str; 2] = [
    "x=3,y=2,passenger=B,destination=G",
    "x=3,y=2,passenger=in-taxi,destination=B",
];

fn taxi(rows: &mut Rows) -> Result<()> {
    let ex = explainer("taxi")?;
    let names = ex.mdp().schema().names().to_vec();
    for (k, sel) in TAXI_STATES.iter().enumerate() {
        let start = Instant::now();
        let s = ex.select_state(sel)?;
        let a = ex.env.policy.mode(s).ok_or_else(|| Error::InvalidPolicy("taxi policy has no mode".into()))?;
        let label = format!("state {}", k + 1);
        rows.check(format!("{label} policy moves South"), ex.mdp().action_name(a) == "South");
        for target in [Target::Behaviour, Target::Outcome, Target::Prediction] {
            let action = (target == Target::Behaviour).then_some(a);
            let r = shapley_exact(&ex.game(target, s, action, Removal::Conditional)?)?;
            for (name, phi) in names.iter().zip(&r.phi) {
                rows.info(format!("{label} {target} phi_{name}"), *phi);
            }
            rows.exact(format!("{label} {target} efficiency residual"), 0.0, r.residual, 1e-8);
            if k == 0 && target == Target::Behaviour {
                let arg = (0..r.phi.len()).max_by(|&i, &j| r.phi[i].total_cmp(&r.phi[j])).unwrap_or(0);
                rows.check(format!("{label} behaviour argmax is passenger"), names[arg] == "passenger");
            }
        }
        let secs = start.elapsed().as_secs_f64();
        rows.check(format!("{label} finished within 60 s"), secs < 60.0);
    }
    Ok(())
}

fn global_expectations(rows: &mut Rows) -> Result<()> {
    for name in ["roadsign", "colour_grid", "five_state_grid", "dice"] {
        let ex = explainer(name)?;
        let ctx = ex.ctx();
        let mut worst_b: f64 = 0.0;
        for a in 0..ex.mdp().n_actions() {
            let e = global_behaviour_expectation(&ctx, a, Removal::Conditional)?;
            worst_b = e.iter().fold(worst_b, |m, x| m.max(x.abs()));
        }
        rows.exact(format!("{name} max |E[phi]| behaviour"), 0.0, worst_b, 1e-8);
        let e = global_prediction_expectation(&ctx, &ex.vhat, Removal::Conditional)?;
        let worst_p = e.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        rows.exact(format!("{name} max |E[phi]| prediction"), 0.0, worst_p, 1e-8);
    }
    Ok(())
}

fn parliament(rows: &mut Rows) -> Result<()> {
    let r = shapley_exact(&parliament_game())?;
    for (i, phi) in r.phi.iter().enumerate() {
        rows.exact(format!("phi_party{}", i + 1), 1.0 / 3.0, *phi, 1e-15);
    }
    Ok(())
}

/// Recomputes one table.
pub fn reproduce(id: &str) -> Result<ReproductionReport> {
    let description = TABLES
        .iter()
        .find(|(t, _)| *t == id)
        .map(|(_, d)| d.to_string())
        .ok_or_else(|| Error::UnknownTable(id.to_string()))?;
    let start = Instant::now();
    let mut rows = Rows::default();
    match id {
        "roadsign-behaviour" => roadsign_behaviour(&mut rows)?,
        "roadsign-outcome" => roadsign_value_game(
            &mut rows,
            Target::Outcome,
            [
                ("direction=R,distance=10", "(R,10)", [8.0, 8.0, 8.0, 8.0], [0.0, 0.0]),
                ("direction=L,distance=2", "(L,2)", [9.0, 9.0, 9.0, 4.0], [2.5, 2.5]),
            ],
        )?,
        "roadsign-prediction" => roadsign_value_game(
            &mut rows,
            Target::Prediction,
            [
                ("direction=R,distance=10", "(R,10)", [8.0, 8.0, 8.0, 8.5], [-0.25, -0.25]),
                ("direction=L,distance=2", "(L,2)", [9.0, 9.0, 9.0, 8.5], [0.25, 0.25]),
            ],
        )?,
        "colour-grid-behaviour" => colour_grid(&mut rows)?,
        "gridworld-behaviour" => gridworld_behaviour(&mut rows)?,
        "gridworld-outcome" => gridworld_outcome(&mut rows)?,
        "dice-prediction" => dice(&mut rows)?,
        "tictactoe-prediction" => tictactoe_prediction(&mut rows)?,
        "tictactoe-outcome" => tictactoe_outcome(&mut rows)?,
        "taxi" => taxi(&mut rows)?,
        "global-expectations" => global_expectations(&mut rows)?,
        "parliament" => parliament(&mut rows)?,
        _ => unreachable!("id checked against TABLES"),
    }
    let rows = rows.0;
    let max_error = rows.iter().filter_map(|r| r.error).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.pass);
    Ok(ReproductionReport {
        id: id.to_string(),
        description,
        rows,
        max_error,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        pass,
    })
}

pub fn table_ids() -> impl Iterator<Item = &'static str> {
    TABLES.iter().map(|(id, _)| *id)
}
