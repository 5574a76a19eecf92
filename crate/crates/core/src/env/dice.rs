use super::{optimal_policy, wrap, Environment, ReferenceKind};
use crate::mdp::{FeatureSchema, FeatureValue, MdpBuilder};

/// Two dice; each action keeps or re-rolls each die. After every action the
/// episode ends with probability 0.5, paying 1 if the dice sum to at least
/// 10. The reference policy is optimal.
pub fn build_dice() -> Environment {
    let faces: Vec<FeatureValue> = (1..=6).map(FeatureValue::Int).collect();
    let schema = FeatureSchema::new(vec!["d1".into(), "d2".into()], vec![faces.clone(), faces])
        .expect("static schema");
    let actions = ["keep", "reroll-1", "reroll-2", "reroll-both"];
    let mut b = MdpBuilder::new(schema, actions.iter().map(|s| s.to_string()).collect(), 1.0);
    let mut id = [[0usize; 6]; 6];
    for (d1, row) in id.iter_mut().enumerate() {
        for (d2, slot) in row.iter_mut().enumerate() {
            *slot = b.add_state_encoded(vec![d1 as u32, d2 as u32], false);
            b.set_initial(*slot, 1.0 / 36.0);
        }
    }
    let end = b.add_terminal();
    for d1 in 0..6 {
        for d2 in 0..6 {
            let s = id[d1][d2];
            for (a, (roll1, roll2)) in [(false, false), (true, false), (false, true), (true, true)]
                .into_iter()
                .enumerate()
            {
                let outcomes1: Vec<usize> = if roll1 { (0..6).collect() } else { vec![d1] };
                let outcomes2: Vec<usize> = if roll2 { (0..6).collect() } else { vec![d2] };
                let p = 1.0 / (outcomes1.len() * outcomes2.len()) as f64;
                for &n1 in &outcomes1 {
                    for &n2 in &outcomes2 {
                        let win = if n1 + n2 + 2 >= 10 { 1.0 } else { 0.0 };
                        b.add_transition(s, a, end, 0.5 * p, win);
                        b.add_transition(s, a, id[n1][n2], 0.5 * p, 0.0);
                    }
                }
            }
        }
    }
    let mdp = b.build().expect("valid dice MDP");
    let policy = optimal_policy(&mdp);
    wrap("dice", mdp, policy, ReferenceKind::ValueIteration)
}
