//! Experiment configuration: JSON parsing, defaults and validation.

use std::fmt;
use std::path::PathBuf;

use mechsim_core::distopt::CommGraph;
use mechsim_core::mechanism::{Mechanism, DEFAULT_P_BAR};
use mechsim_core::numerics::{EvaluationFunction, FeasibleSet, QuadraticForm};
use mechsim_core::scenario::{build_ev_instance, random_quadratic_instance, EvParams, SYNTHETIC_DAY};
use serde::{Deserialize, Serialize};

use crate::experiment::ExperimentKind;

/// Largest sweep the runner accepts.
pub const MAX_CELLS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: ExperimentKind,
    pub scenario: ScenarioSpec,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    #[serde(default)]
    pub graph: GraphSpec,
    #[serde(default = "default_k_f")]
    pub k_f: usize,
    /// Width of the window the filter start is drawn from.
    #[serde(default = "default_window")]
    pub k_s_window: usize,
    /// Fixed filter start; drawn per cell when absent.
    #[serde(default)]
    pub k_s: Option<usize>,
    #[serde(default)]
    pub step_rule: StepRuleSpec,
    #[serde(default = "default_p_bar")]
    pub p_bar: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub equilibrium: Option<EquilibriumSpec>,
    #[serde(default)]
    pub demo: Option<DemoSpec>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_mechanism() -> Mechanism {
    Mechanism::DeVcgG
}
fn default_k_f() -> usize {
    300
}
fn default_window() -> usize {
    4
}
fn default_p_bar() -> f64 {
    DEFAULT_P_BAR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// Small EV instance with 4 or 6 slots.
    EvDesk { horizon: usize },
    /// EV instance over the built-in 24-slot demand profile.
    EvDay,
    Ev { params: EvParams },
    /// Random isotropic quadratics.
    Synthetic {
        agents: usize,
        #[serde(default = "one")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Quadratic { functions: Vec<QuadraticForm>, lower: Vec<f64>, upper: Vec<f64> },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    #[default]
    Complete,
    Ring,
    Path,
    Edges { edges: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRuleSpec {
    pub a: f64,
    pub b: f64,
}

impl Default for StepRuleSpec {
    fn default() -> Self {
        StepRuleSpec { a: 1.0, b: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Every combination of per-agent values.
    #[default]
    Grid,
    /// The truthful profile plus one agent deviating at a time.
    Unilateral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Name of the swept quantity; filled in from the experiment when absent.
    #[serde(default)]
    pub parameter: Option<String>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub mode: SweepMode,
    /// Independent draws per value (range sweeps).
    #[serde(default = "one")]
    pub repeats: usize,
    /// The shifting agent (malice sweeps).
    #[serde(default)]
    pub agent: usize,
    /// TISD perturbation range applied on top (malice sweeps).
    #[serde(default)]
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSpec {
    /// Offset of the "huge shift" strategy; defaults to `−2 p̄`.
    #[serde(default)]
    pub shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSpec {
    #[serde(default)]
    pub agent: usize,
    /// Offset the agent adds in every sequence without another agent.
    #[serde(default)]
    pub shift: f64,
    /// TISD α perturbation range for every agent (EV only).
    #[serde(default)]
    pub range: f64,
}

/// One problem found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "line {l} column {c}: ")?;
        }
        let path = if self.path.is_empty() || self.path == "." { "<root>" } else { &self.path };
        write!(f, "{path}: {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub source_name: String,
    pub issues: Vec<Issue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {issue}", self.source_name)?;
        }
        Ok(())
    }
}

impl ConfigError {
    fn new(source_name: &str, issues: Vec<Issue>) -> Self {
        ConfigError { source_name: source_name.to_string(), issues }
    }
}

/// Parses and validates a configuration. `source_name` labels messages.
pub fn parse(text: &str, source_name: &str) -> Result<Config, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: Config = match serde_path_to_error::deserialize(&mut de) {
        Ok(c) => c,
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner();
            return Err(ConfigError::new(
                source_name,
                vec![Issue {
                    path,
                    line: Some(inner.line()),
                    column: Some(inner.column()),
                    message: strip_position(&inner.to_string()),
                }],
            ));
        }
    };
    if let Err(e) = de.end() {
        return Err(ConfigError::new(
            source_name,
            vec![Issue {
                path: String::new(),
                line: Some(e.line()),
                column: Some(e.column()),
                message: strip_position(&e.to_string()),
            }],
        ));
    }
    let issues = config.validate();
    if issues.is_empty() {
        Ok(config.resolved())
    } else {
        Err(ConfigError::new(source_name, issues))
    }
}

// serde_json appends " at line L column C"; the issue carries those separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(k) => msg[..k].to_string(),
        None => msg.to_string(),
    }
}

fn issue(path: impl Into<String>, message: impl Into<String>) -> Issue {
    Issue { path: path.into(), line: None, column: None, message: message.into() }
}

/// Truth and feasible set built from a scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: Vec<EvaluationFunction>,
    pub feasible: FeasibleSet,
    pub ev: Option<EvParams>,
}

impl ScenarioSpec {
    pub fn ev_params(&self) -> Option<EvParams> {
        match self {
            ScenarioSpec::EvDesk { horizon } => EvParams::desk(*horizon).ok(),
            ScenarioSpec::EvDay => Some(EvParams::case_study(SYNTHETIC_DAY.to_vec())),
            ScenarioSpec::Ev { params } => Some(params.clone()),
            _ => None,
        }
    }

    pub fn is_ev(&self) -> bool {
        matches!(self, ScenarioSpec::EvDesk { .. } | ScenarioSpec::EvDay | ScenarioSpec::Ev { .. })
    }

    pub fn n_agents(&self) -> usize {
        match self {
            ScenarioSpec::Synthetic { agents, .. } => *agents,
            ScenarioSpec::Quadratic { functions, .. } => functions.len(),
            s => s.ev_params().map(|p| p.n_agents()).unwrap_or(0),
        }
    }

    pub fn build(&self) -> mechsim_core::Result<Scenario> {
        match self {
            ScenarioSpec::Synthetic { agents, dim, seed } => {
                let inst = random_quadratic_instance(*agents, *dim, *seed)?;
                Ok(Scenario { truth: inst.costs, feasible: inst.feasible, ev: None })
            }
            ScenarioSpec::Quadratic { functions, lower, upper } => Ok(Scenario {
                truth: functions.iter().cloned().map(EvaluationFunction::quadratic).collect(),
                feasible: FeasibleSet::from_box(lower.clone(), upper.clone())?,
                ev: None,
            }),
            s => {
                let params = match s {
                    ScenarioSpec::EvDesk { horizon } => EvParams::desk(*horizon)?,
                    _ => s.ev_params().expect("EV scenario"),
                };
                let inst = build_ev_instance(&params)?;
                Ok(Scenario { truth: inst.costs, feasible: inst.feasible, ev: Some(params) })
            }
        }
    }

    fn validate(&self, out: &mut Vec<Issue>) {
        match self {
            ScenarioSpec::EvDesk { horizon } => {
                if *horizon != 4 && *horizon != 6 {
                    out.push(issue("scenario.horizon", format!("desk instances have 4 or 6 slots, not {horizon}")));
                }
            }
            ScenarioSpec::EvDay => {}
            ScenarioSpec::Ev { params } => {
                let before = out.len();
                if !(params.beta >= 0.0) {
                    out.push(issue("scenario.params.beta", format!("must not be negative, got {}", params.beta)));
                }
                for (k, a) in params.alpha.iter().enumerate() {
                    if !(*a > 0.0) || !a.is_finite() {
                        out.push(issue(format!("scenario.params.alpha[{k}]"), format!("must be positive, got {a}")));
                    }
                }
                for (k, s) in params.soc0.iter().enumerate() {
                    if !(0.0..1.0).contains(s) {
                        out.push(issue(format!("scenario.params.soc0[{k}]"), format!("must lie in [0, 1), got {s}")));
                    }
                }
                if out.len() == before {
                    if let Err(e) = params.validate() {
                        out.push(issue("scenario.params", e.to_string()));
                    }
                }
            }
            ScenarioSpec::Synthetic { agents, dim, .. } => {
                if *agents == 0 {
                    out.push(issue("scenario.agents", "need at least one agent"));
                }
                if *dim == 0 {
                    out.push(issue("scenario.dim", "need at least one dimension"));
                }
            }
            ScenarioSpec::Quadratic { functions, lower, upper } => {
                if functions.is_empty() {
                    out.push(issue("scenario.functions", "need at least one agent"));
                }
                if lower.len() != upper.len() {
                    out.push(issue("scenario.upper", format!("{} bounds for {} lower bounds", upper.len(), lower.len())));
                }
                for (k, (l, u)) in lower.iter().zip(upper).enumerate() {
                    if !(l <= u) {
                        out.push(issue(format!("scenario.lower[{k}]"), format!("lower bound {l} exceeds upper bound {u}")));
                    }
                }
                for (k, f) in functions.iter().enumerate() {
                    if f.dim() != lower.len() {
                        out.push(issue(
                            format!("scenario.functions[{k}]"),
                            format!("dimension {} does not match the {}-dimensional box", f.dim(), lower.len()),
                        ));
                    }
                }
            }
        }
    }
}

impl GraphSpec {
    pub fn build(&self, n: usize) -> mechsim_core::Result<CommGraph> {
        match self {
            GraphSpec::Complete => CommGraph::complete(n),
            GraphSpec::Ring => CommGraph::ring(n),
            GraphSpec::Path => CommGraph::path(n),
            GraphSpec::Edges { edges } => CommGraph::new(n, edges.clone()),
        }
    }
}

impl Config {
    /// Sweep experiments fill in the parameter name; everything else is
    /// already explicit after deserialisation.
    pub fn resolved(mut self) -> Self {
        let name = self.experiment.sweep_parameter(&self.scenario);
        if let (Some(sweep), Some(name)) = (self.sweep.as_mut(), name) {
            sweep.parameter.get_or_insert_with(|| name.to_string());
        }
        if self.experiment == ExperimentKind::Equilibrium {
            let shift = -2.0 * self.p_bar;
            self.equilibrium.get_or_insert(EquilibriumSpec { shift: None }).shift.get_or_insert(shift);
        }
        if self.experiment == ExperimentKind::FilterDemo && self.demo.is_none() {
            self.demo = Some(DemoSpec { agent: 0, shift: 0.0, range: 0.0 });
        }
        self
    }

    /// All semantic problems, each with the path of the offending field.
    pub fn validate(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        if self.k_f == 0 {
            out.push(issue("k_f", "must be at least 1"));
        }
        if self.k_s_window == 0 {
            out.push(issue("k_s_window", "must be at least 1"));
        } else if self.k_s_window >= self.k_f {
            out.push(issue("k_s_window", format!("must be below k_f = {}, got {}", self.k_f, self.k_s_window)));
        }
        if let Some(k_s) = self.k_s {
            if k_s > self.k_f {
                out.push(issue("k_s", format!("must not exceed k_f = {}, got {k_s}", self.k_f)));
            }
        }
        let StepRuleSpec { a, b } = self.step_rule;
        if !(a > 0.0) || !a.is_finite() {
            out.push(issue("step_rule.a", format!("must be positive, got {a}")));
        }
        if !(b > 0.0) || !b.is_finite() {
            out.push(issue("step_rule.b", format!("must be positive, got {b}")));
        }
        if !(self.p_bar > 0.0) || !self.p_bar.is_finite() {
            out.push(issue("p_bar", format!("must be positive, got {}", self.p_bar)));
        }

        let before = out.len();
        self.scenario.validate(&mut out);
        let n = self.scenario.n_agents();
        if out.len() == before && n > 0 {
            if let Err(e) = self.graph.build(n) {
                out.push(issue("graph", e.to_string()));
            }
        }

        let kind = self.experiment;
        let check_unused = |present: bool, field: &str, out: &mut Vec<Issue>| {
            if present {
                out.push(issue(field, format!("not used by experiment `{}`", kind.name())));
            }
        };
        check_unused(self.sweep.is_some() && !kind.is_sweep(), "sweep", &mut out);
        check_unused(self.equilibrium.is_some() && kind != ExperimentKind::Equilibrium, "equilibrium", &mut out);
        check_unused(self.demo.is_some() && kind != ExperimentKind::FilterDemo, "demo", &mut out);

        if kind.is_sweep() {
            match &self.sweep {
                None => out.push(issue("sweep", format!("experiment `{}` needs a sweep section", kind.name()))),
                Some(s) => self.validate_sweep(s, n, &mut out),
            }
        }
        if let Some(eq) = &self.equilibrium {
            if let Some(shift) = eq.shift {
                if !(shift < 0.0) || !shift.is_finite() {
                    out.push(issue("equilibrium.shift", format!("must be negative, got {shift}")));
                }
            }
            if n > 0 && 3u128.checked_pow(n as u32).is_none_or(|c| c > MAX_CELLS as u128) {
                out.push(issue("scenario", format!("{n} agents give too many equilibrium profiles")));
            }
        }
        if let Some(d) = &self.demo {
            if d.agent >= n.max(1) {
                out.push(issue("demo.agent", format!("agent {} does not exist", d.agent)));
            }
            if !(d.shift <= 0.0) {
                out.push(issue("demo.shift", format!("must not be positive, got {}", d.shift)));
            }
            self.validate_range(d.range, "demo.range", &mut out);
        }
        out
    }

    fn validate_range(&self, range: f64, path: &str, out: &mut Vec<Issue>) {
        if !(range >= 0.0) || !range.is_finite() {
            out.push(issue(path, format!("must be non-negative, got {range}")));
        } else if range > 0.0 && !self.scenario.is_ev() {
            out.push(issue(path, "α perturbations need an EV scenario"));
        }
    }

    fn validate_sweep(&self, s: &SweepSpec, n: usize, out: &mut Vec<Issue>) {
        let kind = self.experiment;
        if let (Some(given), Some(expected)) = (&s.parameter, kind.sweep_parameter(&self.scenario)) {
            if given != expected {
                out.push(issue("sweep.parameter", format!("experiment `{}` sweeps `{expected}`, not `{given}`", kind.name())));
            }
        }
        if s.values.is_empty() {
            out.push(issue("sweep.values", "need at least one value"));
        }
        for (k, v) in s.values.iter().enumerate() {
            let ok = match kind {
                ExperimentKind::TisiSweep => *v > 0.0,
                ExperimentKind::TisdRangeSweep => *v >= 0.0,
                _ => *v <= 0.0,
            };
            if !ok || !v.is_finite() {
                let need = match kind {
                    ExperimentKind::TisiSweep => "positive",
                    ExperimentKind::TisdRangeSweep => "non-negative",
                    _ => "non-positive",
                };
                out.push(issue(format!("sweep.values[{k}]"), format!("must be {need}, got {v}")));
            }
        }
        if s.repeats == 0 {
            out.push(issue("sweep.repeats", "must be at least 1"));
        }
        if s.repeats != 1 && kind != ExperimentKind::TisdRangeSweep {
            out.push(issue("sweep.repeats", "only range sweeps take repeats"));
        }
        if s.mode != SweepMode::Grid && kind != ExperimentKind::TisiSweep {
            out.push(issue("sweep.mode", "only TISI sweeps take a mode"));
        }
        if kind != ExperimentKind::MaliceSweep {
            if s.agent != 0 {
                out.push(issue("sweep.agent", "only malice sweeps take an agent"));
            }
            if s.range != 0.0 {
                out.push(issue("sweep.range", "only malice sweeps take a base range"));
            }
        }
        match kind {
            ExperimentKind::TisiSweep => {
                if !s.values.contains(&1.0) {
                    out.push(issue("sweep.values", "must contain the truthful factor 1"));
                }
                if s.mode == SweepMode::Grid && n > 0 {
                    let cells = (s.values.len() as u128).checked_pow(n as u32);
                    if cells.is_none_or(|c| c > MAX_CELLS as u128) {
                        out.push(issue("sweep.values", format!("a full grid over {n} agents is too large; use mode `unilateral`")));
                    }
                }
            }
            ExperimentKind::TisdRangeSweep => {
                if !self.scenario.is_ev() {
                    out.push(issue("scenario", "range sweeps need an EV scenario"));
                }
                if s.values.len().saturating_mul(s.repeats) > MAX_CELLS {
                    out.push(issue("sweep.repeats", "too many cells"));
                }
            }
            ExperimentKind::MaliceSweep => {
                if s.agent >= n.max(1) {
                    out.push(issue("sweep.agent", format!("agent {} does not exist", s.agent)));
                }
                self.validate_range(s.range, "sweep.range", out);
            }
            _ => {}
        }
    }
}
