//! JSON interchange format for [`TabularMdp`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSchema, FeatureValue, MdpBuilder, TabularMdp};
use crate::error::{Error, Result};

/// One sparse entry `p(next | state, action)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionTriplet {
    pub state: usize,
    pub action: usize,
    pub next: usize,
    pub prob: f64,
}

/// Serialised MDP. `rewards[k]` is the reward of `transitions[k]`; terminal
/// states carry an empty feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub schema: FeatureSchema,
    pub states: Vec<Vec<FeatureValue>>,
    pub actions: Vec<String>,
    pub available: Vec<Vec<usize>>,
    pub transitions: Vec<TransitionTriplet>,
    pub rewards: Vec<f64>,
    pub discount: f64,
    pub initial: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl MdpDocument {
    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                for t in mdp.transitions(s, a) {
                    transitions.push(TransitionTriplet { state: s, action: a, next: t.next, prob: t.prob });
                    rewards.push(t.reward);
                }
            }
        }
        MdpDocument {
            schema: mdp.schema().clone(),
            states: (0..mdp.n_states())
                .map(|s| mdp.feature_values(s).into_iter().cloned().collect())
                .collect(),
            actions: mdp.actions().to_vec(),
            available: (0..mdp.n_states()).map(|s| mdp.available(s).to_vec()).collect(),
            transitions,
            rewards,
            discount: mdp.discount(),
            initial: mdp.initial().to_vec(),
            terminal: (0..mdp.n_states()).map(|s| mdp.is_terminal(s)).collect(),
        }
    }

    /// Rebuilds and validates the MDP.
    pub fn to_mdp(&self) -> Result<TabularMdp> {
        let n = self.states.len();
        if self.terminal.len() != n || self.initial.len() != n || self.available.len() != n {
            return Err(Error::Format(
                "`states`, `terminal`, `initial` and `available` must have equal length".into(),
            ));
        }
        if self.rewards.len() != self.transitions.len() {
            return Err(Error::Format("`rewards` must parallel `transitions`".into()));
        }
        let schema = FeatureSchema::new(self.schema.names().to_vec(), {
            (0..self.schema.len()).map(|i| self.schema.domain(i).to_vec()).collect()
        })?;
        let mut b = MdpBuilder::new(schema, self.actions.clone(), self.discount);
        for (values, &terminal) in self.states.iter().zip(&self.terminal) {
            if terminal && values.is_empty() {
                b.add_terminal();
            } else {
                let idx = b.schema().encode(values)?;
                b.add_state_encoded(idx, terminal);
            }
        }
        let na = self.actions.len();
        for (s, av) in self.available.iter().enumerate() {
            if av.iter().any(|&a| a >= na) {
                return Err(Error::Format(format!("state {s} lists an unknown action")));
            }
            b.set_available(s, av.clone());
        }
        for (t, &r) in self.transitions.iter().zip(&self.rewards) {
            if t.state >= n || t.action >= na {
                return Err(Error::Format(format!("transition {t:?} out of range")));
            }
            b.add_transition(t.state, t.action, t.next, t.prob, r);
        }
        for (s, &p) in self.initial.iter().enumerate() {
            b.set_initial(s, p);
        }
        b.build()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl TabularMdp {
    pub fn to_json(&self) -> Result<String> {
        MdpDocument::from_mdp(self).to_json()
    }

    pub fn from_json(text: &str) -> Result<TabularMdp> {
        MdpDocument::from_json(text)?.to_mdp()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TabularMdp> {
        let text = std::fs::read_to_string(path)?;
        TabularMdp::from_json(&text)
    }
}
