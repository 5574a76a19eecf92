//! End-to-end explanations: environment resolution, state selection,
//! report assembly and rendering.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::approx::{mc_outcome_shapley, mc_shapley, McConfig, McShapleyReport, McTarget};
use crate::characteristics::{
    CharacteristicGame, Coalition, ExplainContext, PredictionFunction, Removal, RemovalOptions,
};
use crate::env::{self, Environment, ReferenceKind};
use crate::error::{Error, Result};
use crate::mdp::{
    policy_evaluation_with, q_from_values, steady_state_distribution, value_iteration_with,
    ActionId, FeatureValue, OccupancyDistribution, SolverConfig, StateId, TabularMdp, ValueTable,
};
use crate::shapley::{max_exact_features, shapley_from_table, ShapleyReport, TableGame};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Behaviour,
    Outcome,
    Prediction,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Exact,
    Mc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputFormat {
    #[default]
    Table,
    Json,
    Csv,
}

fn bad_choice(what: &str, got: &str, allowed: &[&str]) -> Error {
    Error::InvalidArgument(format!("unknown {what} `{got}` (expected one of: {})", allowed.join(", ")))
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "behaviour" | "behavior" => Ok(Target::Behaviour),
            "outcome" => Ok(Target::Outcome),
            "prediction" => Ok(Target::Prediction),
            _ => Err(bad_choice("target", s, &["behaviour", "outcome", "prediction"])),
        }
    }
}

impl FromStr for Removal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" => Ok(Removal::Conditional),
            "marginal" => Ok(Removal::Marginal),
            _ => Err(bad_choice("removal", s, &["conditional", "marginal"])),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "mc" => Ok(Method::Mc),
            _ => Err(bad_choice("method", s, &["exact", "mc"])),
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(OutputFormat::Table),
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(bad_choice("output format", s, &["table", "json", "csv"])),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Behaviour => "behaviour",
            Target::Outcome => "outcome",
            Target::Prediction => "prediction",
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::Mc => "mc",
        })
    }
}

/// What to explain. `state` is a selector such as `direction=R,distance=10`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRequest {
    pub env: String,
    pub target: Target,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default)]
    pub all_actions: bool,
    #[serde(default)]
    pub removal: Removal,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub verbose: bool,
}

fn default_samples() -> u64 {
    100_000
}

fn default_tol() -> f64 {
    SolverConfig::default().tol
}

impl ExplanationRequest {
    pub fn new(env: impl Into<String>, target: Target, state: impl Into<String>) -> Self {
        ExplanationRequest {
            env: env.into(),
            target,
            state: state.into(),
            action: None,
            all_actions: false,
            removal: Removal::Conditional,
            method: Method::Exact,
            samples: default_samples(),
            seed: 0,
            tol: default_tol(),
            verbose: false,
        }
    }

    pub fn action(mut self, action: impl Into<String>) -> Self {
        self.action = Some(action.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub phi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionValue {
    pub coalition: Vec<String>,
    pub value: f64,
}

/// Attributions for one game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    pub attributions: Vec<FeatureAttribution>,
    pub baseline: f64,
    pub grand: f64,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub characteristic: Option<Vec<CoalitionValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejections: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<u64>,
}

impl Explanation {
    pub fn phi(&self) -> Vec<f64> {
        self.attributions.iter().map(|a| a.phi).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub method: Method,
    pub removal: Removal,
    pub tol: f64,
    pub max_exact_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub runtime_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub request: ExplanationRequest,
    pub environment: String,
    pub target: Target,
    pub state: String,
    pub steady_state_prob: f64,
    pub features: Vec<String>,
    pub explanations: Vec<Explanation>,
    pub metadata: ReportMetadata,
}

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn canonicalise(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                    *n = r;
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(canonicalise),
        serde_json::Value::Object(map) => map.values_mut().for_each(canonicalise),
        _ => {}
    }
}

/// Pretty JSON with sorted keys and every float rounded to 12 significant
/// digits, so equal reports print identically.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    canonicalise(&mut v);
    let mut out = serde_json::to_string_pretty(&v)?;
    out.push('\n');
    Ok(out)
}

impl ExplanationReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV with header `feature,phi,baseline,grand,residual`; with several
    /// actions the feature column reads `feature@action`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,phi,baseline,grand,residual\n");
        let tagged = self.explanations.len() > 1;
        for e in &self.explanations {
            for a in &e.attributions {
                let name = match (&e.action, tagged) {
                    (Some(act), true) => format!("{}@{}", a.feature, act),
                    _ => a.feature.clone(),
                };
                out.push_str(&format!("{},{},{},{},{}\n", csv_field(&name), a.phi, e.baseline, e.grand, e.residual));
            }
        }
        out
    }

    /// Human-readable rendering at three decimals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{} | state {} | p = {:.4} | {} | {} removal | {}\n",
            self.environment, self.state, self.steady_state_prob, self.target, self.metadata.removal, self.metadata.method
        );
        let width = self.features.iter().map(|f| f.len()).max().unwrap_or(7).max(7);
        for e in &self.explanations {
            if let Some(a) = &e.action {
                out.push_str(&format!("action {a}\n"));
            }
            let with_se = e.attributions.iter().any(|a| a.std_error.is_some());
            for a in &e.attributions {
                out.push_str(&format!("  {:<width$}  {:>8.3}", a.feature, a.phi));
                if let (true, Some(se)) = (with_se, a.std_error) {
                    out.push_str(&format!("  ± {se:.1e}"));
                }
                out.push('\n');
            }
            out.push_str(&format!(
                "  baseline {:.3}  grand {:.3}  residual {:.1e}",
                e.baseline, e.grand, e.residual
            ));
            if let Some(se) = e.residual_std_error {
                out.push_str(&format!(" ± {se:.1e}"));
            }
            out.push('\n');
            if let Some(r) = e.rejections.filter(|&r| r > 0) {
                out.push_str(&format!("  rejected permutations: {r}\n"));
            }
            if let Some(t) = e.truncated.filter(|&t| t > 0) {
                out.push_str(&format!("  truncated rollouts: {t}\n"));
            }
            if let Some(chars) = &e.characteristic {
                out.push_str("  characteristic values:\n");
                for cv in chars {
                    let label = if cv.coalition.is_empty() { "{}".to_string() } else { cv.coalition.join("+") };
                    out.push_str(&format!("    {label:<24} {:>10.3}\n", cv.value));
                }
            }
        }
        out
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        Ok(match format {
            OutputFormat::Table => self.to_table(),
            OutputFormat::Json => self.to_json()?,
            OutputFormat::Csv => self.to_csv(),
        })
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-state row of a [`SolveReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolvedState {
    pub state: String,
    pub value: f64,
    pub policy: Vec<(String, f64)>,
    pub steady_state_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub environment: String,
    pub reference: ReferenceKind,
    pub discount: f64,
    pub tol: f64,
    pub bellman_residual: f64,
    pub states: Vec<SolvedState>,
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,value,policy,steady_state_prob\n");
        for s in &self.states {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&s.state),
                s.value,
                csv_field(&policy_label(&s.policy)),
                s.steady_state_prob
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{} | discount {} | {} states | bellman residual {:.1e}\n",
            self.environment,
            self.discount,
            self.states.len(),
            self.bellman_residual
        );
        let width = self.states.iter().map(|s| s.state.len()).max().unwrap_or(5).max(5);
        out.push_str(&format!("  {:<width$}  {:>10}  {:>8}  policy\n", "state", "value", "p"));
        for s in &self.states {
            out.push_str(&format!(
                "  {:<width$}  {:>10.4}  {:>8.4}  {}\n",
                s.state,
                s.value,
                s.steady_state_prob,
                policy_label(&s.policy)
            ));
        }
        out
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        Ok(match format {
            OutputFormat::Table => self.to_table(),
            OutputFormat::Json => self.to_json()?,
            OutputFormat::Csv => self.to_csv(),
        })
    }
}

fn policy_label(row: &[(String, f64)]) -> String {
    row.iter()
        .map(|(a, p)| if (p - 1.0).abs() < 1e-12 { a.clone() } else { format!("{a}:{p:.3}") })
        .collect::<Vec<_>>()
        .join(" ")
}

/// An environment with everything the games need precomputed: the
/// steady-state distribution, `v^pi` and the prediction function.
#[derive(Clone, Debug)]
pub struct Explainer {
    pub env: Environment,
    pub occ: OccupancyDistribution,
    pub values: ValueTable,
    pub vhat: PredictionFunction,
    pub solver: SolverConfig,
    pub options: RemovalOptions,
}

impl Explainer {
    pub fn new(env: Environment, solver: SolverConfig) -> Result<Self> {
        let occ = steady_state_distribution(&env.mdp, &env.policy)?;
        let values = policy_evaluation_with(&env.mdp, &env.policy, &solver)?;
        let vhat = PredictionFunction::from_values(&values);
        Ok(Explainer { env, occ, values, vhat, solver, options: RemovalOptions::default() })
    }

    pub fn from_catalog(name: &str) -> Result<Self> {
        Self::new(env::build(name)?, SolverConfig::default())
    }

    /// Loads an interchange file and explains its value-iteration policy.
    pub fn from_file(path: impl AsRef<Path>, solver: SolverConfig) -> Result<Self> {
        let path = path.as_ref();
        let mdp = TabularMdp::load(path)?;
        let (_, policy) = value_iteration_with(&mdp, &solver)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mdp").to_string();
        Self::new(Environment { name, mdp, policy, reference: ReferenceKind::ValueIteration }, solver)
    }

    /// Resolves a catalog name, falling back to a file path.
    pub fn open(env_or_path: &str, solver: SolverConfig) -> Result<Self> {
        if env::environment_names().contains(&env_or_path) {
            return Self::new(env::build(env_or_path)?, solver);
        }
        if Path::new(env_or_path).is_file() {
            return Self::from_file(env_or_path, solver);
        }
        Err(Error::UnknownEnvironment(env_or_path.to_string()))
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.env.mdp
    }

    pub fn ctx(&self) -> ExplainContext<'_> {
        ExplainContext::new(&self.env.mdp, &self.env.policy, &self.occ).with_options(self.options)
    }

    /// Resolves `name=value,...` naming every feature exactly once.
    pub fn select_state(&self, selector: &str) -> Result<StateId> {
        let mdp = self.mdp();
        let schema = mdp.schema();
        let mut values: Vec<Option<FeatureValue>> = vec![None; schema.len()];
        for part in selector.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::StateSelector(format!("`{part}` is not of the form feature=value")))?;
            let i = schema
                .feature_index(name.trim())
                .ok_or_else(|| Error::StateSelector(format!("unknown feature `{}`", name.trim())))?;
            if values[i].is_some() {
                return Err(Error::StateSelector(format!("feature `{}` given twice", schema.name(i))));
            }
            values[i] = Some(FeatureValue::parse(value.trim()));
        }
        let missing: Vec<&str> =
            (0..schema.len()).filter(|&i| values[i].is_none()).map(|i| schema.name(i)).collect();
        if !missing.is_empty() {
            return Err(Error::StateSelector(format!("missing features: {}", missing.join(", "))));
        }
        let values: Vec<FeatureValue> = values.into_iter().flatten().collect();
        for (i, v) in values.iter().enumerate() {
            if schema.value_index(i, v).is_none() {
                return Err(Error::StateSelector(format!("`{v}` is not a value of feature `{}`", schema.name(i))));
            }
        }
        mdp.state_by_values(&values)
            .ok_or_else(|| Error::StateSelector(format!("no state matches `{selector}`")))
    }

    /// Accepts an action name or index.
    pub fn select_action(&self, selector: &str) -> Result<ActionId> {
        let mdp = self.mdp();
        if let Some(a) = mdp.action_index(selector) {
            return Ok(a);
        }
        match selector.parse::<usize>() {
            Ok(a) if a < mdp.n_actions() => Ok(a),
            _ => Err(Error::InvalidArgument(format!(
                "unknown action `{selector}` (actions: {})",
                mdp.actions().join(", ")
            ))),
        }
    }

    /// The exact game for one target at `s`; `action` is required for
    /// behaviour.
    pub fn game(&self, target: Target, s: StateId, action: Option<ActionId>, removal: Removal) -> Result<CharacteristicGame<'_>> {
        let ctx = self.ctx();
        match target {
            Target::Behaviour => {
                let a = action.ok_or_else(|| Error::InvalidArgument("behaviour explanations need an action".into()))?;
                CharacteristicGame::behaviour(ctx, s, a, removal)
            }
            Target::Outcome => CharacteristicGame::outcome(ctx, &self.values, s, removal, &self.solver),
            Target::Prediction => CharacteristicGame::prediction(ctx, &self.vhat, s, removal),
        }
    }

    pub fn solve_report(&self) -> SolveReport {
        let mdp = self.mdp();
        let states = mdp
            .non_terminal_states()
            .map(|s| SolvedState {
                state: mdp.describe_state(s),
                value: self.values.value(s),
                policy: mdp
                    .available(s)
                    .iter()
                    .filter(|&&a| self.env.policy.prob(s, a) > 0.0)
                    .map(|&a| (mdp.action_name(a).to_string(), self.env.policy.prob(s, a)))
                    .collect(),
                steady_state_prob: self.occ.prob(s),
            })
            .collect();
        SolveReport {
            environment: self.env.name.clone(),
            reference: self.env.reference,
            discount: mdp.discount(),
            tol: self.solver.tol,
            bellman_residual: bellman_residual_under(mdp, &self.env.policy, &self.values.v),
            states,
        }
    }

    pub fn explain(&self, req: &ExplanationRequest) -> Result<ExplanationReport> {
        let start = Instant::now();
        let mdp = self.mdp();
        let s = self.select_state(&req.state)?;
        let actions: Vec<Option<ActionId>> = match req.target {
            Target::Behaviour if req.all_actions => mdp.available(s).iter().map(|&a| Some(a)).collect(),
            Target::Behaviour => match &req.action {
                Some(a) => vec![Some(self.select_action(a)?)],
                None => {
                    return Err(Error::InvalidArgument(
                        "behaviour explanations need --action or --all-actions".into(),
                    ))
                }
            },
            _ => {
                if req.action.is_some() || req.all_actions {
                    return Err(Error::InvalidArgument("an action only applies to behaviour explanations".into()));
                }
                vec![None]
            }
        };
        let cfg = McConfig::new(req.samples, req.seed);
        let mut explanations = Vec::with_capacity(actions.len());
        for a in actions {
            explanations.push(self.explain_one(req, s, a, &cfg)?);
        }
        let mc = req.method == Method::Mc;
        Ok(ExplanationReport {
            request: req.clone(),
            environment: self.env.name.clone(),
            target: req.target,
            state: mdp.describe_state(s),
            steady_state_prob: self.occ.prob(s),
            features: mdp.schema().names().to_vec(),
            explanations,
            metadata: ReportMetadata {
                method: req.method,
                removal: req.removal,
                tol: self.solver.tol,
                max_exact_features: max_exact_features(),
                seed: mc.then_some(req.seed),
                samples: mc.then_some(req.samples),
                workers: mc.then_some(cfg.workers),
                runtime_ms: start.elapsed().as_secs_f64() * 1e3,
            },
        })
    }

    fn explain_one(&self, req: &ExplanationRequest, s: StateId, a: Option<ActionId>, cfg: &McConfig) -> Result<Explanation> {
        let mdp = self.mdp();
        let names = mdp.schema().names();
        let game = self.game(req.target, s, a, req.removal)?;
        let n = game.n_players();
        let table = if req.method == Method::Exact || req.verbose {
            let limit = max_exact_features();
            if n > limit {
                return Err(Error::EnumerationLimit { players: n, limit });
            }
            Some(TableGame::tabulate(&game)?)
        } else {
            None
        };
        let characteristic = match (&table, req.verbose) {
            (Some(t), true) => Some(
                (0..1u64 << n)
                    .map(|bits| {
                        let c = Coalition(bits);
                        CoalitionValue { coalition: c.members().map(|i| names[i].clone()).collect(), value: t.get(c) }
                    })
                    .collect(),
            ),
            _ => None,
        };
        let action = a.map(|a| mdp.action_name(a).to_string());
        let (report, se, residual_se, rejections, truncated) = match req.method {
            Method::Exact => (shapley_from_table(table.as_ref().expect("tabulated")), None, None, None, None),
            Method::Mc => {
                let ctx = self.ctx();
                let (r, truncated): (McShapleyReport, Option<u64>) = match req.target {
                    Target::Behaviour => (mc_shapley(&ctx, McTarget::Behaviour(a.expect("action")), s, req.removal, cfg)?, None),
                    Target::Prediction => (mc_shapley(&ctx, McTarget::Prediction(&self.vhat), s, req.removal, cfg)?, None),
                    Target::Outcome => {
                        let (r, t) = mc_outcome_shapley(&ctx, s, self.values.value(s), req.removal, cfg)?;
                        (r, Some(t))
                    }
                };
                let rejections = Some(r.rejections);
                (r.report, Some(r.std_error), Some(r.residual_std_error), rejections, truncated)
            }
        };
        Ok(build_explanation(names, action, &report, se, residual_se, characteristic, rejections, truncated))
    }
}

#[allow(clippy::too_many_arguments)]
fn build_explanation(
    names: &[String],
    action: Option<String>,
    report: &ShapleyReport,
    se: Option<Vec<f64>>,
    residual_std_error: Option<f64>,
    characteristic: Option<Vec<CoalitionValue>>,
    rejections: Option<u64>,
    truncated: Option<u64>,
) -> Explanation {
    let attributions = names
        .iter()
        .zip(&report.phi)
        .enumerate()
        .map(|(i, (f, &phi))| FeatureAttribution {
            feature: f.clone(),
            phi,
            std_error: se.as_ref().map(|se| se[i]),
        })
        .collect();
    Explanation {
        action,
        attributions,
        baseline: report.baseline,
        grand: report.grand,
        residual: report.residual,
        residual_std_error,
        characteristic,
        rejections,
        truncated,
    }
}

fn bellman_residual_under(mdp: &TabularMdp, policy: &crate::mdp::StochasticPolicy, v: &[f64]) -> f64 {
    let q = q_from_values(mdp, v);
    let na = mdp.n_actions();
    mdp.non_terminal_states()
        .map(|s| {
            let backed: f64 = mdp.available(s).iter().map(|&a| policy.prob(s, a) * q[s * na + a]).sum();
            (backed - v[s]).abs()
        })
        .fold(0.0, f64::max)
}
