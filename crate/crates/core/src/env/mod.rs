//! Built-in environments, each with its reference policy.

mod colour_grid;
mod dice;
mod five_state_grid;
mod mastermind;
mod roadsign;
mod taxi;
mod tictactoe;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{value_iteration, StochasticPolicy, TabularMdp};

pub use colour_grid::build_colour_grid;
pub use dice::build_dice;
pub use five_state_grid::build_five_state_grid;
pub use mastermind::{build_mastermind, mastermind_clue, Code, MASTERMIND_CODES};
pub use roadsign::build_roadsign;
pub use taxi::{build_taxi, taxi_state, TaxiAction, TAXI_LANDMARKS};
pub use tictactoe::{build_tictactoe, build_tictactoe_with, minimax_value, Board, OpponentTieBreak};

/// How an environment's reference policy is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    ValueIteration,
    FixedTable,
}

/// A built MDP together with the policy being explained.
#[derive(Clone, Debug)]
pub struct Environment {
    pub name: String,
    pub mdp: TabularMdp,
    pub policy: StochasticPolicy,
    pub reference: ReferenceKind,
}

pub struct CatalogEntry {
    pub name: &'static str,
    pub doc: &'static str,
    pub reference: ReferenceKind,
    pub build: fn() -> Environment,
}

static CATALOG: [CatalogEntry; 7] = [
    CatalogEntry {
        name: "roadsign",
        doc: "two-state road-sign task, -1 per action and +10 at the goal",
        reference: ReferenceKind::FixedTable,
        build: build_roadsign,
    },
    CatalogEntry {
        name: "colour_grid",
        doc: "2x2 continuing gridworld with (index, colour) features and a clockwise policy",
        reference: ReferenceKind::FixedTable,
        build: build_colour_grid,
    },
    CatalogEntry {
        name: "five_state_grid",
        doc: "gridworld with (x, y) features, -1 per action and +10 at the goal",
        reference: ReferenceKind::FixedTable,
        build: build_five_state_grid,
    },
    CatalogEntry {
        name: "dice",
        doc: "two-dice re-roll game, reward 1 if the sum is at least 10 when the episode ends",
        reference: ReferenceKind::ValueIteration,
        build: build_dice,
    },
    CatalogEntry {
        name: "tictactoe",
        doc: "Tic-Tac-Toe as X against a minimax opponent that moves first",
        reference: ReferenceKind::ValueIteration,
        build: build_tictactoe,
    },
    CatalogEntry {
        name: "mastermind",
        doc: "two-letter Mastermind belief MDP over visible boards, three guesses",
        reference: ReferenceKind::ValueIteration,
        build: build_mastermind,
    },
    CatalogEntry {
        name: "taxi",
        doc: "Taxi-v3 layout: 5x5 grid, four landmarks, pick up and drop off",
        reference: ReferenceKind::ValueIteration,
        build: build_taxi,
    },
];

pub fn catalog() -> &'static [CatalogEntry] {
    &CATALOG
}

pub fn environment_names() -> Vec<&'static str> {
    CATALOG.iter().map(|e| e.name).collect()
}

/// Builds a catalog environment by name.
pub fn build(name: &str) -> Result<Environment> {
    CATALOG
        .iter()
        .find(|e| e.name == name)
        .map(|e| (e.build)())
        .ok_or_else(|| Error::UnknownEnvironment(name.to_string()))
}

/// One line per environment: `name<TAB>states<TAB>features`, where states
/// counts non-terminal states.
pub fn list_lines() -> String {
    let mut out = String::new();
    for e in &CATALOG {
        let env = (e.build)();
        out.push_str(&format!("{}\t{}\t{}\n", e.name, env.mdp.n_non_terminal(), env.mdp.n_features()));
    }
    out
}

pub(crate) fn optimal_policy(mdp: &TabularMdp) -> StochasticPolicy {
    value_iteration(mdp, 1e-12).expect("built-in environments are solvable").1
}

pub(crate) fn wrap(name: &str, mdp: TabularMdp, policy: StochasticPolicy, reference: ReferenceKind) -> Environment {
    Environment { name: name.to_string(), mdp, policy, reference }
}
