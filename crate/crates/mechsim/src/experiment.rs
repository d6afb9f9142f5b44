//! Experiment plans: how a configuration expands into cells, and how cells run.

use mechsim_core::distopt::{SequenceSet, StepRule};
use mechsim_core::filter::{draw_filter_start, RepairRecord};
use mechsim_core::game::{
    brute_force_nash, diagnose, epsilon_dse_check, simulate, AgentStrategy, DseScope, GameEnv, GridGame, NashOptions,
    RunDiagnostics, StrategyProfile, maliciousness_bound_check,
};
use mechsim_core::mechanism::{Mechanism, SettlementReport};
use mechsim_core::numerics::{EvaluationFunction, QuadraticForm};
use mechsim_core::scenario::tisd_perturbation;
use mechsim_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, Scenario, ScenarioSpec, SweepMode};

/// Mixed into cell seeds before drawing α perturbations, so they do not reuse
/// the stream that picks the filter start.
const PERTURBATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TisiSweep,
    TisdRangeSweep,
    MaliceSweep,
    Equilibrium,
    FilterDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::TisiSweep,
        ExperimentKind::TisdRangeSweep,
        ExperimentKind::MaliceSweep,
        ExperimentKind::Equilibrium,
        ExperimentKind::FilterDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TisiSweep => "tisi-sweep",
            ExperimentKind::TisdRangeSweep => "tisd-range-sweep",
            ExperimentKind::MaliceSweep => "malice-sweep",
            ExperimentKind::Equilibrium => "equilibrium",
            ExperimentKind::FilterDemo => "filter-demo",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::TisiSweep => "grid of misreported cost parameters, same report in every sequence",
            ExperimentKind::TisdRangeSweep => "random per-sequence α perturbations of growing range",
            ExperimentKind::MaliceSweep => "one agent lowers its value in sequences without the others",
            ExperimentKind::Equilibrium => "pure Nash equilibria over {truthful, quit, huge shift}",
            ExperimentKind::FilterDemo => "one run with full traces and the filter repair log",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(self, ExperimentKind::TisiSweep | ExperimentKind::TisdRangeSweep | ExperimentKind::MaliceSweep)
    }

    pub fn sweep_parameter(self, scenario: &ScenarioSpec) -> Option<&'static str> {
        match self {
            ExperimentKind::TisiSweep if scenario.is_ev() => Some("alpha-factor"),
            ExperimentKind::TisiSweep => Some("scale"),
            ExperimentKind::TisdRangeSweep => Some("range"),
            ExperimentKind::MaliceSweep => Some("gamma"),
            _ => None,
        }
    }
}

/// One cell of an experiment before it runs.
#[derive(Debug, Clone)]
pub struct CellSpec {
    pub index: usize,
    pub coords: Vec<f64>,
    pub seed: u64,
    pub k_s: usize,
    pub profile: StrategyProfile,
}

/// Where a cell sits in the sweep and how it was seeded. Enough, together
/// with the resolved configuration, to rebuild the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub index: usize,
    pub coords: Vec<f64>,
    pub seed: u64,
    pub k_s: usize,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub config: Config,
    pub scenario: Scenario,
    pub env: GameEnv,
    pub coord_names: Vec<String>,
    pub cell_count: usize,
    /// Strategy grid for experiments analysed as finite games.
    pub grid: Option<GridGame>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub record: CellRecord,
    pub report: SettlementReport,
    pub diagnostics: Option<RunDiagnostics>,
    pub repair_log: Vec<RepairRecord>,
    pub sequences: Option<SequenceSet>,
    /// Whether every shift sat inside its admissible band (malice sweeps).
    pub bands_passed: Option<bool>,
}

/// Seed of cell `index`.
pub fn cell_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// `f · v` for a quadratic evaluation; EV costs scale α instead.
fn scaled(truth: &EvaluationFunction, factor: f64) -> Result<EvaluationFunction> {
    let q = truth
        .as_quadratic()
        .ok_or_else(|| Error::InvalidParameter("scaling needs a quadratic evaluation".into()))?;
    let m = q.matrix().iter().map(|v| v * factor).collect();
    let b = q.linear().iter().map(|v| v * factor).collect();
    Ok(EvaluationFunction::quadratic(QuadraticForm::new(m, b, q.constant() * factor)?))
}

impl Plan {
    pub fn new(config: Config) -> Result<Self> {
        let scenario = config.scenario.build()?;
        let n = scenario.truth.len();
        let graph = config.graph.build(n)?;
        let mut env = GameEnv::new(graph, scenario.feasible.clone(), scenario.truth.clone(), config.k_f, 0)?;
        env.rule = StepRule::new(config.step_rule.a, config.step_rule.b)?;
        env.p_bar = config.p_bar;

        let agent_names = |prefix: &str| (0..n).map(|i| format!("{prefix}_{i}")).collect::<Vec<_>>();
        let mut grid = None;
        let (coord_names, cell_count) = match config.experiment {
            ExperimentKind::TisiSweep => {
                let sweep = config.sweep.as_ref().expect("validated");
                let name = config.experiment.sweep_parameter(&config.scenario).expect("sweep");
                let count = match sweep.mode {
                    SweepMode::Grid => sweep.values.len().pow(n as u32),
                    SweepMode::Unilateral => 1 + n * sweep.values.iter().filter(|v| **v != 1.0).count(),
                };
                (agent_names(name), count)
            }
            ExperimentKind::TisdRangeSweep => {
                let sweep = config.sweep.as_ref().expect("validated");
                (vec!["range".into(), "draw".into()], sweep.values.len() * sweep.repeats)
            }
            ExperimentKind::MaliceSweep => {
                (vec!["gamma".into()], config.sweep.as_ref().expect("validated").values.len())
            }
            ExperimentKind::Equilibrium => {
                let shift = config.equilibrium.as_ref().and_then(|e| e.shift).unwrap_or(-2.0 * config.p_bar);
                let grids = (0..n)
                    .map(|i| {
                        let f = &scenario.truth[i];
                        let offsets: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, shift)).collect();
                        Ok(vec![
                            ("truthful".to_string(), AgentStrategy::truthful(f.clone())),
                            ("quit".to_string(), AgentStrategy::Quit),
                            ("shift".to_string(), AgentStrategy::shifted(f.clone(), &offsets)?),
                        ])
                    })
                    .collect::<Result<Vec<_>>>()?;
                let g = GridGame::new(grids, vec![Some(0); n])?;
                let count = g.profile_count();
                grid = Some(g);
                (agent_names("s"), count)
            }
            ExperimentKind::FilterDemo => (vec!["shift".into(), "range".into()], 1),
        };
        Ok(Plan { config, scenario, env, coord_names, cell_count, grid })
    }

    pub fn n_agents(&self) -> usize {
        self.scenario.truth.len()
    }

    /// Seed and filter start of a fresh cell.
    pub fn record(&self, index: usize) -> Result<CellRecord> {
        let seed = cell_seed(self.config.seed, index);
        let k_s = match self.config.k_s {
            Some(k) => k,
            None => draw_filter_start(self.config.k_f, self.config.k_s_window, seed)?,
        };
        let (coords, _) = self.strategies(index, seed)?;
        Ok(CellRecord { index, coords, seed, k_s })
    }

    pub fn records(&self) -> Result<Vec<CellRecord>> {
        (0..self.cell_count).map(|i| self.record(i)).collect()
    }

    /// Declared evaluation of agent `i` when misreporting by `factor`.
    fn tisi_report(&self, i: usize, factor: f64) -> Result<EvaluationFunction> {
        match &self.scenario.ev {
            Some(p) => Ok(p.cost(i, p.alpha[i] * factor, p.gamma(i))),
            None => scaled(&self.scenario.truth[i], factor),
        }
    }

    /// Per-agent strategies with α perturbed by up to `range` in every
    /// sequence without another agent, plus `shift` for `shifter`.
    fn perturbed_profile(&self, range: f64, seed: u64, shifter: Option<(usize, f64)>) -> Result<StrategyProfile> {
        let n = self.n_agents();
        let alphas = match (&self.scenario.ev, range > 0.0) {
            (Some(p), true) => Some(tisd_perturbation(&p.alpha, range, seed ^ PERTURBATION_SALT)?),
            _ => None,
        };
        let agents = (0..n)
            .map(|i| {
                let truth = self.scenario.truth[i].clone();
                let shift = shifter.filter(|(a, _)| *a == i).map(|(_, c)| c);
                match (&alphas, shift) {
                    (None, None) => Ok(AgentStrategy::truthful(truth)),
                    (None, Some(c)) => {
                        let offsets: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, c)).collect();
                        AgentStrategy::shifted(truth, &offsets)
                    }
                    (Some(a), shift) => {
                        let p = self.scenario.ev.as_ref().expect("EV");
                        let per_sequence = (0..n)
                            .filter(|&j| j != i)
                            .map(|j| {
                                let f = p.cost(i, a[i][j], p.gamma(i));
                                (j, match shift {
                                    Some(c) => f.shifted(c),
                                    None => f,
                                })
                            })
                            .collect();
                        Ok(AgentStrategy::Tisd { social: truth, per_sequence })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        StrategyProfile::new(agents)
    }

    /// Coordinates and strategy profile of cell `index`.
    pub fn strategies(&self, index: usize, seed: u64) -> Result<(Vec<f64>, StrategyProfile)> {
        if index >= self.cell_count {
            return Err(Error::InvalidParameter(format!("cell {index} out of range (have {})", self.cell_count)));
        }
        let n = self.n_agents();
        let cfg = &self.config;
        match cfg.experiment {
            ExperimentKind::TisiSweep => {
                let sweep = cfg.sweep.as_ref().expect("validated");
                let factors: Vec<f64> = match sweep.mode {
                    SweepMode::Grid => {
                        let m = sweep.values.len();
                        let mut rest = index;
                        let mut idx = vec![0; n];
                        for i in (0..n).rev() {
                            idx[i] = rest % m;
                            rest /= m;
                        }
                        idx.iter().map(|&k| sweep.values[k]).collect()
                    }
                    SweepMode::Unilateral => {
                        let mut f = vec![1.0; n];
                        if index > 0 {
                            let devs: Vec<f64> = sweep.values.iter().copied().filter(|v| *v != 1.0).collect();
                            let k = index - 1;
                            f[k / devs.len()] = devs[k % devs.len()];
                        }
                        f
                    }
                };
                let agents = factors
                    .iter()
                    .enumerate()
                    .map(|(i, &f)| {
                        if f == 1.0 {
                            Ok(AgentStrategy::truthful(self.scenario.truth[i].clone()))
                        } else {
                            self.tisi_report(i, f).map(AgentStrategy::Tisi)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((factors, StrategyProfile::new(agents)?))
            }
            ExperimentKind::TisdRangeSweep => {
                let sweep = cfg.sweep.as_ref().expect("validated");
                let range = sweep.values[index / sweep.repeats];
                let draw = index % sweep.repeats;
                Ok((vec![range, draw as f64], self.perturbed_profile(range, seed, None)?))
            }
            ExperimentKind::MaliceSweep => {
                let sweep = cfg.sweep.as_ref().expect("validated");
                let gamma = sweep.values[index];
                Ok((vec![gamma], self.perturbed_profile(sweep.range, seed, Some((sweep.agent, gamma)))?))
            }
            ExperimentKind::Equilibrium => {
                let grid = self.grid.as_ref().expect("equilibrium grid");
                let coords = grid.indices(index).into_iter().map(|k| k as f64).collect();
                Ok((coords, grid.profile(index)?))
            }
            ExperimentKind::FilterDemo => {
                let demo = cfg.demo.as_ref().expect("resolved");
                let shifter = (demo.shift != 0.0).then_some((demo.agent, demo.shift));
                Ok((vec![demo.shift, demo.range], self.perturbed_profile(demo.range, seed, shifter)?))
            }
        }
    }

    pub fn spec(&self, record: &CellRecord) -> Result<CellSpec> {
        let (coords, profile) = self.strategies(record.index, record.seed)?;
        Ok(CellSpec { index: record.index, coords, seed: record.seed, k_s: record.k_s, profile })
    }

    /// Runs one cell.
    pub fn run_cell(&self, record: &CellRecord) -> Result<CellResult> {
        let spec = self.spec(record)?;
        let mut env = self.env.clone();
        env.k_s = spec.k_s;
        let sim = simulate(&spec.profile, self.config.mechanism, &env)?;
        let kind = self.config.experiment;
        let diagnostics = match kind {
            ExperimentKind::Equilibrium => None,
            _ => Some(diagnose(&spec.profile, &env, &sim)?),
        };
        let bands_passed = match (kind, self.config.sweep.as_ref()) {
            (ExperimentKind::MaliceSweep, Some(s)) if s.range == 0.0 => {
                let eps = diagnostics.map(|d| d.epsilon).unwrap_or(0.0);
                Some(maliciousness_bound_check(&spec.profile, &sim.report, &self.scenario.truth, eps)?.passed)
            }
            _ => None,
        };
        let keep = kind == ExperimentKind::FilterDemo;
        Ok(CellResult {
            record: CellRecord { index: spec.index, coords: spec.coords, seed: spec.seed, k_s: spec.k_s },
            report: sim.report,
            diagnostics,
            repair_log: if keep { sim.repair_log } else { Vec::new() },
            sequences: if keep { sim.sequences } else { None },
            bands_passed,
        })
    }

    /// Runs every cell on a pool of `jobs` workers (0 picks the default) and
    /// returns results in cell order.
    pub fn run_all(&self, records: &[CellRecord], jobs: usize) -> Result<Vec<CellResult>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
        let results: Vec<Result<CellResult>> = pool.install(|| records.par_iter().map(|r| self.run_cell(r)).collect());
        results.into_iter().collect()
    }

    pub fn summarize(&self, results: &[CellResult]) -> Result<Summary> {
        let n = self.n_agents();
        let epsilon = results
            .iter()
            .filter_map(|r| r.diagnostics.map(|d| d.epsilon))
            .fold(0.0, f64::max);
        let cfg = &self.config;
        Ok(match cfg.experiment {
            ExperimentKind::TisiSweep => {
                let sweep = cfg.sweep.as_ref().expect("validated");
                let truth_cell = &results[truthful_tisi_cell(sweep.mode, &sweep.values, n)];
                // Largest gain of each agent over the truthful profile.
                let unilateral = (0..n)
                    .map(|i| {
                        let base = truth_cell.report.payoffs[i];
                        results
                            .iter()
                            .filter(|r| (0..n).all(|j| j == i || r.record.coords[j] == 1.0))
                            .map(|r| (r.report.payoffs[i] - base, r.record.coords[i]))
                            .fold(AgentGain { agent: i, max_gain: 0.0, factor: 1.0 }, |acc, (g, f)| {
                                if g > acc.max_gain {
                                    AgentGain { agent: i, max_gain: g, factor: f }
                                } else {
                                    acc
                                }
                            })
                    })
                    .collect();
                let all_opponents = match sweep.mode {
                    SweepMode::Grid => Some(tisi_dse(&sweep.values, results, n, epsilon)?),
                    SweepMode::Unilateral => None,
                };
                Summary::TisiSweep { epsilon, unilateral, all_opponents }
            }
            ExperimentKind::TisdRangeSweep => {
                let sweep = cfg.sweep.as_ref().expect("validated");
                let ranges: Vec<RangeRow> = sweep
                    .values
                    .iter()
                    .enumerate()
                    .map(|(k, &range)| {
                        let cells = &results[k * sweep.repeats..(k + 1) * sweep.repeats];
                        let mean_payoffs = (0..n)
                            .map(|i| cells.iter().map(|c| c.report.payoffs[i]).sum::<f64>() / cells.len() as f64)
                            .collect();
                        let penalized_cells = cells.iter().filter(|c| c.report.penalties.iter().any(|p| *p > 0.0)).count();
                        RangeRow { range, mean_payoffs, penalized_cells }
                    })
                    .collect();
                let truthful_within_epsilon = ranges.iter().find(|r| r.range == 0.0).map(|zero| {
                    (0..n)
                        .map(|i| {
                            let best = ranges.iter().map(|r| r.mean_payoffs[i]).fold(f64::NEG_INFINITY, f64::max);
                            zero.mean_payoffs[i] >= best - epsilon
                        })
                        .collect()
                });
                Summary::TisdRangeSweep { epsilon, ranges, truthful_within_epsilon }
            }
            ExperimentKind::MaliceSweep => {
                let sweep = cfg.sweep.as_ref().expect("validated");
                let cells = results
                    .iter()
                    .map(|r| MaliceRow {
                        gamma: r.record.coords[0],
                        payoffs: r.report.payoffs.clone(),
                        penalties: r.report.penalties.clone(),
                        bands_passed: r.bands_passed,
                    })
                    .collect();
                Summary::MaliceSweep { agent: sweep.agent, epsilon, cells }
            }
            ExperimentKind::Equilibrium => {
                let mut grid = self.grid.clone().expect("equilibrium grid");
                for r in results {
                    grid.set_payoffs(r.record.index, r.report.payoffs.clone())?;
                }
                Summary::Equilibrium {
                    mechanism: cfg.mechanism,
                    labels: vec!["truthful".into(), "quit".into(), "shift".into()],
                    nash: brute_force_nash(&grid, NashOptions::default())?,
                    malicious_nash: brute_force_nash(&grid, NashOptions::malicious())?,
                }
            }
            ExperimentKind::FilterDemo => {
                let r = &results[0];
                let total_repair = (0..n)
                    .map(|i| r.repair_log.iter().filter(|x| x.agent == i).map(|x| x.repair).sum())
                    .collect();
                let repaired_points = (0..n)
                    .map(|i| r.repair_log.iter().filter(|x| x.agent == i && !x.passed).count())
                    .collect();
                Summary::FilterDemo { k_s: r.record.k_s, total_repair, repaired_points, penalties: r.report.penalties.clone() }
            }
        })
    }

    /// Payoff tensor rows for experiments analysed as finite games.
    pub fn tensor(&self, results: &[CellResult]) -> Option<Vec<(Vec<usize>, usize, f64)>> {
        let cfg = &self.config;
        let n = self.n_agents();
        let grid_like = cfg.experiment == ExperimentKind::Equilibrium
            || (cfg.experiment == ExperimentKind::TisiSweep
                && cfg.sweep.as_ref().is_some_and(|s| s.mode == SweepMode::Grid));
        if !grid_like {
            return None;
        }
        let m = match cfg.experiment {
            ExperimentKind::Equilibrium => 3,
            _ => cfg.sweep.as_ref().map(|s| s.values.len()).unwrap_or(1),
        };
        let mut rows = Vec::with_capacity(results.len() * n);
        for r in results {
            let mut idx = vec![0; n];
            let mut rest = r.record.index;
            for i in (0..n).rev() {
                idx[i] = rest % m;
                rest /= m;
            }
            for (i, u) in r.report.payoffs.iter().enumerate() {
                rows.push((idx.clone(), i, *u));
            }
        }
        Some(rows)
    }
}

fn truthful_tisi_cell(mode: SweepMode, values: &[f64], n: usize) -> usize {
    match mode {
        SweepMode::Unilateral => 0,
        SweepMode::Grid => {
            let m = values.len();
            let t = values.iter().position(|v| *v == 1.0).expect("validated");
            (0..n).fold(0, |acc, _| acc * m + t)
        }
    }
}

/// Truthful reporting against every profile of the others.
fn tisi_dse(values: &[f64], results: &[CellResult], n: usize, eps: f64) -> Result<DseSummary> {
    let labels: Vec<(String, AgentStrategy)> = values.iter().map(|v| (format!("{v}"), AgentStrategy::Quit)).collect();
    let t = values.iter().position(|v| *v == 1.0).expect("validated");
    // Only the payoff tensor is consulted; the placeholder strategies are never run.
    let mut grid = GridGame::new(vec![labels; n], vec![Some(t); n])?;
    for r in results {
        grid.set_payoffs(r.record.index, r.report.payoffs.clone())?;
    }
    let verdict = epsilon_dse_check(&grid, &vec![t; n], eps, DseScope::AllOpponents)?;
    Ok(DseSummary { passed: verdict.passed, max_gain: verdict.max_gain, epsilon: eps, worst: verdict.worst })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentGain {
    pub agent: usize,
    /// Largest payoff gain over truth with the others truthful.
    pub max_gain: f64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DseSummary {
    pub passed: bool,
    pub max_gain: f64,
    pub epsilon: f64,
    /// `(agent, opponents' indices, deviation index)` of the largest gain.
    pub worst: Option<(usize, Vec<usize>, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeRow {
    pub range: f64,
    pub mean_payoffs: Vec<f64>,
    pub penalized_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaliceRow {
    pub gamma: f64,
    pub payoffs: Vec<f64>,
    pub penalties: Vec<f64>,
    pub bands_passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Summary {
    TisiSweep {
        /// Largest measured optimality gap over all cells.
        epsilon: f64,
        unilateral: Vec<AgentGain>,
        all_opponents: Option<DseSummary>,
    },
    TisdRangeSweep {
        epsilon: f64,
        ranges: Vec<RangeRow>,
        /// Per agent: is the unperturbed payoff within `epsilon` of the best range?
        truthful_within_epsilon: Option<Vec<bool>>,
    },
    MaliceSweep {
        agent: usize,
        epsilon: f64,
        cells: Vec<MaliceRow>,
    },
    Equilibrium {
        mechanism: Mechanism,
        labels: Vec<String>,
        nash: Vec<Vec<usize>>,
        malicious_nash: Vec<Vec<usize>>,
    },
    FilterDemo {
        k_s: usize,
        total_repair: Vec<f64>,
        repaired_points: Vec<usize>,
        penalties: Vec<f64>,
    },
}
