use std::collections::{BTreeMap, VecDeque};

use super::{optimal_policy, wrap, Environment, ReferenceKind};
use crate::mdp::{FeatureSchema, FeatureValue, MdpBuilder};

/// A two-letter code; `false` is A, `true` is B.
pub type Code = [bool; 2];

pub const MASTERMIND_CODES: [Code; 4] = [[false, false], [false, true], [true, false], [true, true]];

const ROWS: usize = 4;
const GUESSES: usize = 3;

/// `(position clue, misplaced clue)` of `guess` against `code`.
pub fn mastermind_clue(code: Code, guess: Code) -> (u8, u8) {
    let mut pos = 0;
    let mut rest_code = [0u8; 2];
    let mut rest_guess = [0u8; 2];
    for i in 0..2 {
        if code[i] == guess[i] {
            pos += 1;
        } else {
            rest_code[code[i] as usize] += 1;
            rest_guess[guess[i] as usize] += 1;
        }
    }
    let mis = (0..2).map(|l| rest_code[l].min(rest_guess[l])).sum();
    (pos, mis)
}

type History = Vec<(Code, (u8, u8))>;

fn consistent(history: &History) -> Vec<Code> {
    MASTERMIND_CODES
        .iter()
        .copied()
        .filter(|&c| history.iter().all(|&(g, clue)| mastermind_clue(c, g) == clue))
        .collect()
}

fn encode(history: &History) -> Vec<u32> {
    let mut f = vec![0u32; ROWS * 4];
    for (r, (g, (pos, mis))) in history.iter().enumerate() {
        f[r * 4] = 1 + g[0] as u32;
        f[r * 4 + 1] = 1 + g[1] as u32;
        f[r * 4 + 2] = 1 + *pos as u32;
        f[r * 4 + 3] = 1 + *mis as u32;
    }
    f
}

fn code_name(c: Code) -> String {
    c.iter().map(|&b| if b { 'B' } else { 'A' }).collect()
}

/// Belief MDP over visible boards. The hidden code is uniform over the four
/// codes; a guess moves to each consistent code's feedback with that code's
/// posterior probability. Wrong guesses cost -1; the episode ends on a
/// correct guess or after the third guess.
pub fn build_mastermind() -> Environment {
    let mut names = Vec::new();
    let mut domains = Vec::new();
    let letters: Vec<FeatureValue> = vec!["empty".into(), "A".into(), "B".into()];
    let clues: Vec<FeatureValue> = vec!["empty".into(), 0.into(), 1.into(), 2.into()];
    for r in 1..=ROWS {
        for (part, dom) in [("letter1", &letters), ("letter2", &letters), ("position", &clues), ("misplaced", &clues)] {
            names.push(format!("row{r}_{part}"));
            domains.push(dom.clone());
        }
    }
    let schema = FeatureSchema::new(names, domains).expect("static schema");
    let actions: Vec<String> = MASTERMIND_CODES.iter().map(|&c| code_name(c)).collect();

    let mut states: BTreeMap<Vec<u32>, History> = BTreeMap::new();
    let mut queue: VecDeque<History> = VecDeque::from([Vec::new()]);
    while let Some(h) = queue.pop_front() {
        let key = encode(&h);
        if states.contains_key(&key) {
            continue;
        }
        if h.len() + 1 < GUESSES {
            let codes = consistent(&h);
            for g in MASTERMIND_CODES {
                for &c in &codes {
                    if c != g {
                        let mut n = h.clone();
                        n.push((g, mastermind_clue(c, g)));
                        queue.push_back(n);
                    }
                }
            }
        }
        states.insert(key, h);
    }

    let mut b = MdpBuilder::new(schema, actions, 1.0);
    let ids: BTreeMap<Vec<u32>, usize> =
        states.keys().map(|k| (k.clone(), b.add_state_encoded(k.clone(), false))).collect();
    let end = b.add_terminal();
    for (key, h) in &states {
        let s = ids[key];
        let codes = consistent(h);
        let p = 1.0 / codes.len() as f64;
        for (a, g) in MASTERMIND_CODES.into_iter().enumerate() {
            for &c in &codes {
                if c == g {
                    b.add_transition(s, a, end, p, 0.0);
                } else if h.len() + 1 == GUESSES {
                    b.add_transition(s, a, end, p, -1.0);
                } else {
                    let mut n = h.clone();
                    n.push((g, mastermind_clue(c, g)));
                    b.add_transition(s, a, ids[&encode(&n)], p, -1.0);
                }
            }
        }
        if h.is_empty() {
            b.set_initial(s, 1.0);
        }
    }
    let mdp = b.build().expect("valid Mastermind MDP");
    let policy = optimal_policy(&mdp);
    wrap("mastermind", mdp, policy, ReferenceKind::ValueIteration)
}
