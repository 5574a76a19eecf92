use super::{wrap, Environment, ReferenceKind};
use crate::mdp::{FeatureSchema, FeatureValue, MdpBuilder, StochasticPolicy};

/// Road-sign task. States `(R, 10)` and `(L, 2)`; actions `L`, `R`.
///
/// From `(R, 10)` turning right reaches `(L, 2)`; turning left takes the
/// longer route straight to the goal (two moves, return 8). From `(L, 2)`
/// turning left reaches the goal and turning right leaves the map.
pub fn build_roadsign() -> Environment {
    let schema = FeatureSchema::new(
        vec!["direction".into(), "distance".into()],
        vec![vec!["L".into(), "R".into()], vec![2.into(), 10.into()]],
    )
    .expect("static schema");
    let mut b = MdpBuilder::new(schema, vec!["L".into(), "R".into()], 1.0);
    let far = b.add_state(&["R".into(), FeatureValue::Int(10)]).expect("in domain");
    let near = b.add_state(&["L".into(), FeatureValue::Int(2)]).expect("in domain");
    let end = b.add_terminal();
    let (left, right) = (0, 1);
    b.add_transition(far, right, near, 1.0, -1.0);
    b.add_transition(far, left, end, 1.0, 8.0);
    b.add_transition(near, left, end, 1.0, 9.0);
    b.add_transition(near, right, end, 1.0, -1.0);
    b.set_initial(far, 1.0);
    let mdp = b.build().expect("valid road-sign MDP");
    let policy = StochasticPolicy::deterministic(&mdp, &[Some(right), Some(left), None]).expect("valid policy");
    wrap("roadsign", mdp, policy, ReferenceKind::FixedTable)
}
