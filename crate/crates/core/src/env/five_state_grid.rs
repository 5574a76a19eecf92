use super::{wrap, Environment, ReferenceKind};
use crate::mdp::{FeatureSchema, FeatureValue, MdpBuilder, StochasticPolicy};

const N: usize = 0;
const E: usize = 1;

/// Cells (x, y): state 1 at (1, 1), states 2, 3, 4 at (2, 1), (2, 2),
/// (2, 3), and the goal at (2, 4). Every action costs -1; entering the goal
/// adds +10. Moves off the open cells leave the agent in place.
pub fn build_five_state_grid() -> Environment {
    let schema = FeatureSchema::new(
        vec!["x".into(), "y".into()],
        vec![(1..=2).map(FeatureValue::Int).collect(), (1..=3).map(FeatureValue::Int).collect()],
    )
    .expect("static schema");
    let mut b = MdpBuilder::new(schema, vec!["N".into(), "E".into(), "S".into(), "W".into()], 1.0);
    let coords = [(1i64, 1i64), (2, 1), (2, 2), (2, 3)];
    let cells: Vec<usize> = coords
        .iter()
        .map(|&(x, y)| b.add_state(&[x.into(), y.into()]).expect("in domain"))
        .collect();
    let goal = b.add_terminal();
    let find = |x: i64, y: i64| {
        if (x, y) == (2, 4) {
            Some(goal)
        } else {
            coords.iter().position(|&c| c == (x, y)).map(|i| cells[i])
        }
    };
    for (i, &(x, y)) in coords.iter().enumerate() {
        for (a, (dx, dy)) in [(0, 1), (1, 0), (0, -1), (-1, 0)].into_iter().enumerate() {
            match find(x + dx, y + dy) {
                Some(next) if next == goal => b.add_transition(cells[i], a, goal, 1.0, 9.0),
                Some(next) => b.add_transition(cells[i], a, next, 1.0, -1.0),
                None => b.add_transition(cells[i], a, cells[i], 1.0, -1.0),
            }
        }
    }
    b.set_initial(cells[0], 0.5);
    b.set_initial(cells[1], 0.5);
    let mdp = b.build().expect("valid five-state grid");
    let policy = StochasticPolicy::deterministic(&mdp, &[Some(E), Some(N), Some(N), Some(N), None])
        .expect("valid policy");
    wrap("five_state_grid", mdp, policy, ReferenceKind::FixedTable)
}
