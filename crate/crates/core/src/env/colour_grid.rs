use super::{wrap, Environment, ReferenceKind};
use crate::mdp::{FeatureSchema, FeatureValue, MdpBuilder, StochasticPolicy};

const N: usize = 0;
const E: usize = 1;
const S: usize = 2;
const W: usize = 3;

/// 2x2 gridworld. Cells 1 2 on top, 3 4 below; colours red, blue, green,
/// green. The task never ends (discount 0.9); a move along the clockwise
/// cycle 1 -> 2 -> 4 -> 3 -> 1 earns +1, everything else 0, and moves into
/// a wall stay put.
pub fn build_colour_grid() -> Environment {
    let schema = FeatureSchema::new(
        vec!["index".into(), "colour".into()],
        vec![
            (1..=4).map(FeatureValue::Int).collect(),
            vec!["red".into(), "blue".into(), "green".into()],
        ],
    )
    .expect("static schema");
    let mut b = MdpBuilder::new(schema, vec!["N".into(), "E".into(), "S".into(), "W".into()], 0.9);
    let colours = ["red", "blue", "green", "green"];
    let cells: Vec<usize> = (0..4)
        .map(|i| b.add_state(&[FeatureValue::Int(i as i64 + 1), colours[i].into()]).expect("in domain"))
        .collect();
    // (row, col) of cell i is (i / 2, i % 2).
    let clockwise = [E, S, N, W];
    for i in 0..4 {
        let (r, c) = (i / 2, i % 2);
        for a in [N, E, S, W] {
            let (nr, nc) = match a {
                N if r > 0 => (r - 1, c),
                S if r < 1 => (r + 1, c),
                E if c < 1 => (r, c + 1),
                W if c > 0 => (r, c - 1),
                _ => (r, c),
            };
            let reward = if a == clockwise[i] { 1.0 } else { 0.0 };
            b.add_transition(cells[i], a, cells[nr * 2 + nc], 1.0, reward);
        }
        b.set_initial(cells[i], 0.25);
    }
    let mdp = b.build().expect("valid colour grid");
    let choice: Vec<Option<usize>> = clockwise.iter().map(|&a| Some(a)).collect();
    let policy = StochasticPolicy::deterministic(&mdp, &choice).expect("valid policy");
    wrap("colour_grid", mdp, policy, ReferenceKind::FixedTable)
}
