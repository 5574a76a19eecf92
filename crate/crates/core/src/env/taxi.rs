use super::{optimal_policy, wrap, Environment, ReferenceKind};
use crate::mdp::{FeatureSchema, FeatureValue, MdpBuilder, StateId, TabularMdp};

const MAP: [&str; 7] = [
    "+---------+",
    "|R: | : :G|",
    "| : | : : |",
    "| : : : : |",
    "| | : | : |",
    "|Y| : |B: |",
    "+---------+",
];

/// Landmark names with their `(row, col)` cells.
pub const TAXI_LANDMARKS: [(&str, (usize, usize)); 4] =
    [("R", (0, 0)), ("G", (0, 4)), ("Y", (4, 0)), ("B", (4, 3))];

/// Actions in Taxi-v3 order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaxiAction {
    South = 0,
    North = 1,
    East = 2,
    West = 3,
    Pickup = 4,
    Dropoff = 5,
}

const IN_TAXI: usize = 4;

fn landmark_at(cell: (usize, usize)) -> Option<usize> {
    TAXI_LANDMARKS.iter().position(|&(_, c)| c == cell)
}

fn open(row: usize, col: usize, east: bool) -> bool {
    let line = MAP[row + 1].as_bytes();
    let idx = if east { 2 * col + 2 } else { 2 * col };
    line[idx] == b':'
}

/// Feature indices of the state with the taxi at `(row, col)`. `passenger`
/// is a landmark index or 4 for in-taxi.
fn features(row: usize, col: usize, passenger: usize, destination: usize) -> Vec<u32> {
    vec![col as u32, row as u32, passenger as u32, destination as u32]
}

/// Looks up a taxi state. `passenger` is a landmark name or `in-taxi`.
pub fn taxi_state(mdp: &TabularMdp, x: i64, y: i64, passenger: &str, destination: &str) -> Option<StateId> {
    mdp.state_by_values(&[x.into(), y.into(), passenger.into(), destination.into()])
}

/// Taxi-v3: features x (column), y (row), passenger location (landmark or
/// in-taxi) and destination. Every step costs -1, a successful drop-off
/// pays +20 and ends the episode, illegal pick-up or drop-off costs -10.
/// Episodes start uniformly over taxi cells and distinct passenger and
/// destination landmarks.
pub fn build_taxi() -> Environment {
    let landmarks: Vec<FeatureValue> = TAXI_LANDMARKS.iter().map(|&(n, _)| n.into()).collect();
    let mut passenger = landmarks.clone();
    passenger.push("in-taxi".into());
    let schema = FeatureSchema::new(
        vec!["x".into(), "y".into(), "passenger".into(), "destination".into()],
        vec![
            (0..5).map(FeatureValue::Int).collect(),
            (0..5).map(FeatureValue::Int).collect(),
            passenger,
            landmarks,
        ],
    )
    .expect("static schema");
    let actions = ["South", "North", "East", "West", "Pickup", "Dropoff"];
    let mut b = MdpBuilder::new(schema, actions.iter().map(|s| s.to_string()).collect(), 1.0);
    let mut id = vec![0usize; 500];
    let key = |row: usize, col: usize, p: usize, d: usize| ((row * 5 + col) * 5 + p) * 4 + d;
    for row in 0..5 {
        for col in 0..5 {
            for p in 0..5 {
                for d in 0..4 {
                    id[key(row, col, p, d)] = b.add_state_encoded(features(row, col, p, d), false);
                }
            }
        }
    }
    let end = b.add_terminal();
    let starts = 5 * 5 * 4 * 3;
    for row in 0..5 {
        for col in 0..5 {
            for p in 0..5 {
                for d in 0..4 {
                    let s = id[key(row, col, p, d)];
                    if p < IN_TAXI && p != d {
                        b.set_initial(s, 1.0 / starts as f64);
                    }
                    let mv = |r: usize, c: usize| id[key(r, c, p, d)];
                    b.add_transition(s, TaxiAction::South as usize, mv((row + 1).min(4), col), 1.0, -1.0);
                    b.add_transition(s, TaxiAction::North as usize, mv(row.saturating_sub(1), col), 1.0, -1.0);
                    let east = if col < 4 && open(row, col, true) { col + 1 } else { col };
                    b.add_transition(s, TaxiAction::East as usize, mv(row, east), 1.0, -1.0);
                    let west = if col > 0 && open(row, col, false) { col - 1 } else { col };
                    b.add_transition(s, TaxiAction::West as usize, mv(row, west), 1.0, -1.0);

                    let here = landmark_at((row, col));
                    if p < IN_TAXI && here == Some(p) {
                        b.add_transition(s, TaxiAction::Pickup as usize, id[key(row, col, IN_TAXI, d)], 1.0, -1.0);
                    } else {
                        b.add_transition(s, TaxiAction::Pickup as usize, s, 1.0, -10.0);
                    }
                    match here {
                        Some(l) if p == IN_TAXI && l == d => {
                            b.add_transition(s, TaxiAction::Dropoff as usize, end, 1.0, 20.0)
                        }
                        Some(l) if p == IN_TAXI => {
                            b.add_transition(s, TaxiAction::Dropoff as usize, id[key(row, col, l, d)], 1.0, -1.0)
                        }
                        _ => b.add_transition(s, TaxiAction::Dropoff as usize, s, 1.0, -10.0),
                    }
                }
            }
        }
    }
    let mdp = b.build().expect("valid Taxi MDP");
    let policy = optimal_policy(&mdp);
    wrap("taxi", mdp, policy, ReferenceKind::ValueIteration)
}
