use std::collections::HashMap;
use std::fmt;

use super::{TabularMdp, PROB_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Discount,
    FeatureVector,
    FeatureMapNotInjective,
    TransitionRowNotStochastic,
    TransitionTarget,
    UnavailableActionTransition,
    NoAvailableActions,
    TerminalTransitions,
    InitialNotNormalised,
    InitialOnTerminal,
}

impl ViolationKind {
    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::Discount => "discount out of range",
            ViolationKind::FeatureVector => "feature vector malformed",
            ViolationKind::FeatureMapNotInjective => "feature map not injective",
            ViolationKind::TransitionRowNotStochastic => "transition row not stochastic",
            ViolationKind::TransitionTarget => "transition to unknown state",
            ViolationKind::UnavailableActionTransition => "transition for unavailable action",
            ViolationKind::NoAvailableActions => "non-terminal state without actions",
            ViolationKind::TerminalTransitions => "terminal state has outgoing transitions",
            ViolationKind::InitialNotNormalised => "initial distribution not normalised",
            ViolationKind::InitialOnTerminal => "initial distribution on terminal state",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.label(), self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }

    fn push(&mut self, kind: ViolationKind, detail: String) {
        self.violations.push(Violation { kind, detail });
    }
}

/// Lists every violated structural invariant of `mdp`. Empty means valid.
pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = mdp.n_states();
    let nf = mdp.n_features();

    if !(mdp.discount > 0.0 && mdp.discount <= 1.0) {
        report.push(ViolationKind::Discount, format!("gamma = {}", mdp.discount));
    }

    let mut seen: HashMap<&[u32], usize> = HashMap::new();
    for s in 0..n {
        let f = &mdp.features[s];
        if mdp.terminal[s] && f.is_empty() {
            continue;
        }
        if f.len() != nf {
            report.push(
                ViolationKind::FeatureVector,
                format!("state {s} has {} features, schema has {nf}", f.len()),
            );
            continue;
        }
        for (i, &v) in f.iter().enumerate() {
            if v as usize >= mdp.schema.domain(i).len() {
                report.push(
                    ViolationKind::FeatureVector,
                    format!("state {s}: value index {v} outside domain of `{}`", mdp.schema.name(i)),
                );
            }
        }
        if mdp.terminal[s] {
            continue;
        }
        if let Some(&other) = seen.get(f.as_slice()) {
            report.push(
                ViolationKind::FeatureMapNotInjective,
                format!("states {other} and {s} share feature vector {f:?}"),
            );
        } else {
            seen.insert(f, s);
        }
    }

    let na = mdp.n_actions();
    for s in 0..n {
        for a in 0..na {
            let row = mdp.transitions(s, a);
            if mdp.terminal[s] {
                if !row.is_empty() {
                    report.push(
                        ViolationKind::TerminalTransitions,
                        format!("terminal state {s}, action {}", mdp.action_name(a)),
                    );
                }
                continue;
            }
            let avail = mdp.is_available(s, a);
            if !avail {
                if !row.is_empty() {
                    report.push(
                        ViolationKind::UnavailableActionTransition,
                        format!("state {s}, action {}", mdp.action_name(a)),
                    );
                }
                continue;
            }
            let mut total = 0.0;
            for t in row {
                if t.next >= n {
                    report.push(ViolationKind::TransitionTarget, format!("state {s} -> {}", t.next));
                }
                if t.prob < 0.0 || !t.prob.is_finite() || !t.reward.is_finite() {
                    report.push(
                        ViolationKind::TransitionRowNotStochastic,
                        format!("state {s}, action {}: bad entry {t:?}", mdp.action_name(a)),
                    );
                }
                total += t.prob;
            }
            if (total - 1.0).abs() > PROB_TOL {
                report.push(
                    ViolationKind::TransitionRowNotStochastic,
                    format!("state {s}, action {}: row sums to {total}", mdp.action_name(a)),
                );
            }
        }
        if !mdp.terminal[s] && mdp.available(s).is_empty() {
            report.push(ViolationKind::NoAvailableActions, format!("state {s}"));
        }
        if mdp.available(s).iter().any(|&a| a >= na) {
            report.push(ViolationKind::TransitionTarget, format!("state {s} lists an unknown action"));
        }
    }

    let total: f64 = mdp.initial.iter().sum();
    if (total - 1.0).abs() > PROB_TOL || mdp.initial.iter().any(|&p| p < 0.0) {
        report.push(ViolationKind::InitialNotNormalised, format!("sums to {total}"));
    }
    for s in 0..n {
        if mdp.terminal[s] && mdp.initial[s] > 0.0 {
            report.push(ViolationKind::InitialOnTerminal, format!("state {s}"));
        }
    }
    report
}
