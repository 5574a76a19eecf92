use std::collections::{BTreeMap, HashMap, VecDeque};

use super::{optimal_policy, wrap, Environment, ReferenceKind};
use crate::mdp::{FeatureSchema, MdpBuilder};

/// Cells in reading order; 0 empty, 1 X, 2 O.
pub type Board = [u8; 9];

const LINES: [[usize; 3]; 8] = [
    [0, 1, 2],
    [3, 4, 5],
    [6, 7, 8],
    [0, 3, 6],
    [1, 4, 7],
    [2, 5, 8],
    [0, 4, 8],
    [2, 4, 6],
];

const CELLS: [&str; 9] = ["tl", "tc", "tr", "ml", "mc", "mr", "bl", "bc", "br"];

/// How the minimax opponent chooses between equally good cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OpponentTieBreak {
    /// Uniformly at random among the optimal cells.
    #[default]
    Uniform,
    LowestIndex,
}

fn winner(b: &Board) -> u8 {
    for l in LINES {
        if b[l[0]] != 0 && b[l[0]] == b[l[1]] && b[l[1]] == b[l[2]] {
            return b[l[0]];
        }
    }
    0
}

fn full(b: &Board) -> bool {
    b.iter().all(|&c| c != 0)
}

fn empties(b: &Board) -> impl Iterator<Item = usize> + '_ {
    (0..9).filter(|&i| b[i] == 0)
}

/// Game value for X (+1 win, 0 draw, -1 loss) under optimal play by both
/// sides, with `to_move` (1 = X, 2 = O) about to play.
pub fn minimax_value(b: &Board, to_move: u8) -> i8 {
    fn go(b: &Board, to_move: u8, memo: &mut HashMap<(Board, u8), i8>) -> i8 {
        match winner(b) {
            1 => return 1,
            2 => return -1,
            _ => {}
        }
        if full(b) {
            return 0;
        }
        if let Some(&v) = memo.get(&(*b, to_move)) {
            return v;
        }
        let mut best = if to_move == 1 { -2 } else { 2 };
        for i in empties(b).collect::<Vec<_>>() {
            let mut n = *b;
            n[i] = to_move;
            let v = go(&n, 3 - to_move, memo);
            best = if to_move == 1 { best.max(v) } else { best.min(v) };
        }
        memo.insert((*b, to_move), best);
        best
    }
    thread_local! {
        static MEMO: std::cell::RefCell<HashMap<(Board, u8), i8>> = std::cell::RefCell::new(HashMap::new());
    }
    MEMO.with(|m| go(b, to_move, &mut m.borrow_mut()))
}

/// Opponent replies to `b` (O to move) with their probabilities.
fn opponent_moves(b: &Board, tie: OpponentTieBreak) -> Vec<(usize, f64)> {
    let scored: Vec<(usize, i8)> = empties(b)
        .map(|i| {
            let mut n = *b;
            n[i] = 2;
            (i, minimax_value(&n, 1))
        })
        .collect();
    let best = scored.iter().map(|&(_, v)| v).min().expect("O has a move");
    let optimal: Vec<usize> = scored.iter().filter(|&&(_, v)| v == best).map(|&(i, _)| i).collect();
    match tie {
        OpponentTieBreak::Uniform => {
            let p = 1.0 / optimal.len() as f64;
            optimal.into_iter().map(|i| (i, p)).collect()
        }
        OpponentTieBreak::LowestIndex => vec![(optimal[0], 1.0)],
    }
}

pub fn build_tictactoe() -> Environment {
    build_tictactoe_with(OpponentTieBreak::default())
}

/// X plays against a minimax O that moves first. States are the boards with
/// X to move that can arise from any X play; the reference policy is
/// optimal for X (lowest cell index on ties).
pub fn build_tictactoe_with(tie: OpponentTieBreak) -> Environment {
    let schema = FeatureSchema::new(
        CELLS.iter().map(|c| c.to_string()).collect(),
        vec![vec!["empty".into(), "X".into(), "O".into()]; 9],
    )
    .expect("static schema");

    // Enumerate X-to-move boards and their outcomes before building.
    let mut initial: BTreeMap<Board, f64> = BTreeMap::new();
    for (i, p) in opponent_moves(&[0; 9], tie) {
        let mut b = [0; 9];
        b[i] = 2;
        *initial.entry(b).or_default() += p;
    }
    // Per X move: list of (next board or None for terminal, prob, reward).
    type Edge = (Option<Board>, f64, f64);
    let mut edges: BTreeMap<Board, Vec<(usize, Vec<Edge>)>> = BTreeMap::new();
    let mut queue: VecDeque<Board> = initial.keys().copied().collect();
    while let Some(b) = queue.pop_front() {
        if edges.contains_key(&b) {
            continue;
        }
        let mut moves = Vec::new();
        for a in empties(&b).collect::<Vec<_>>() {
            let mut n = b;
            n[a] = 1;
            let out: Vec<Edge> = if winner(&n) == 1 {
                vec![(None, 1.0, 1.0)]
            } else if full(&n) {
                vec![(None, 1.0, 0.0)]
            } else {
                opponent_moves(&n, tie)
                    .into_iter()
                    .map(|(o, p)| {
                        let mut m = n;
                        m[o] = 2;
                        if winner(&m) == 2 {
                            (None, p, -1.0)
                        } else if full(&m) {
                            (None, p, 0.0)
                        } else {
                            queue.push_back(m);
                            (Some(m), p, 0.0)
                        }
                    })
                    .collect()
            };
            moves.push((a, out));
        }
        edges.insert(b, moves);
    }

    let mut builder = MdpBuilder::new(schema, CELLS.iter().map(|c| c.to_string()).collect(), 1.0);
    let mut id: HashMap<Board, usize> = HashMap::new();
    for b in edges.keys() {
        id.insert(*b, builder.add_state_encoded(b.iter().map(|&c| c as u32).collect(), false));
    }
    let end = builder.add_terminal();
    for (b, moves) in &edges {
        let s = id[b];
        for (a, out) in moves {
            for &(next, p, r) in out {
                builder.add_transition(s, *a, next.map_or(end, |n| id[&n]), p, r);
            }
        }
    }
    for (b, p) in &initial {
        builder.set_initial(id[b], *p);
    }
    let mdp = builder.build().expect("valid Tic-Tac-Toe MDP");
    let policy = optimal_policy(&mdp);
    wrap("tictactoe", mdp, policy, ReferenceKind::ValueIteration)
}
