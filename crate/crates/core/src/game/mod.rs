//! Strategy models, payoffs and grid equilibrium analysis.

mod grid;
mod malice;
mod strategy;

use alloc::vec;
use alloc::vec::Vec;

pub use grid::{best_response, brute_force_nash, epsilon_dse_check, DseScope, DseVerdict, GridGame, NashOptions};
pub use malice::{maliciousness_bound_check, BandCheck, MaliceVerdict};
pub use strategy::{AgentStrategy, StrategyProfile};

use crate::distopt::{run_all_sequences, CommGraph, SequenceSet, StepRule};
use crate::filter::RepairRecord;
use crate::mechanism::{
    centralized_minimize, collect_messages, propose_budgets, select_outcomes, settle_devcg, settle_devcg_g,
    Mechanism, SettlementReport,
};
use crate::numerics::{EvaluationFunction, FeasibleSet};
use crate::{Error, Result};

/// Everything a simulation needs besides the strategy profile.
#[derive(Debug, Clone)]
pub struct GameEnv {
    pub graph: CommGraph,
    pub feasible: FeasibleSet,
    /// Initial state per agent id.
    pub x0: Vec<Vec<f64>>,
    pub k_f: usize,
    pub k_s: usize,
    pub rule: StepRule,
    /// True costs, which determine payoffs.
    pub truth: Vec<EvaluationFunction>,
    pub p_bar: f64,
}

impl GameEnv {
    /// Every agent starts from the projection of the origin.
    pub fn new(graph: CommGraph, feasible: FeasibleSet, truth: Vec<EvaluationFunction>, k_f: usize, k_s: usize) -> Result<Self> {
        if graph.n_agents() != truth.len() {
            return Err(Error::InvalidParameter("graph and population sizes differ".into()));
        }
        if k_f == 0 || k_s > k_f {
            return Err(Error::InvalidParameter(alloc::format!("need 1 ≤ k_f and k_s ≤ k_f, got {k_s} and {k_f}")));
        }
        let x0 = vec![feasible.project_origin(); truth.len()];
        Ok(GameEnv { graph, feasible, x0, k_f, k_s, rule: StepRule::default(), truth, p_bar: crate::mechanism::DEFAULT_P_BAR })
    }

    pub fn n_agents(&self) -> usize {
        self.truth.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub report: SettlementReport,
    pub repair_log: Vec<RepairRecord>,
    pub sequences: Option<SequenceSet>,
}

/// Settles a profile whose sequences have already been run (`None` when
/// nobody participates).
pub fn settle_sequences(
    profile: &StrategyProfile,
    mech: Mechanism,
    env: &GameEnv,
    sequences: Option<SequenceSet>,
) -> Result<Simulation> {
    let mut bundles = sequences.as_ref().map(collect_messages).unwrap_or_default();
    let outcomes = select_outcomes(&bundles)?;
    if !bundles.is_empty() {
        propose_budgets(&mut bundles, profile, &outcomes)?;
    }
    let (report, repair_log) = match mech {
        Mechanism::DeVcg => (settle_devcg(&bundles, &outcomes, &env.truth, env.p_bar)?, Vec::new()),
        Mechanism::DeVcgG => {
            let s = settle_devcg_g(&bundles, &outcomes, &env.truth, env.p_bar, env.k_s)?;
            (s.report, s.repair_log)
        }
    };
    Ok(Simulation { report, repair_log, sequences })
}

/// Runs all sequences serially and settles.
pub fn simulate(profile: &StrategyProfile, mech: Mechanism, env: &GameEnv) -> Result<Simulation> {
    if profile.n_agents() != env.n_agents() {
        return Err(Error::InvalidParameter("profile and population sizes differ".into()));
    }
    let sequences = if profile.participants().is_empty() {
        None
    } else {
        Some(run_all_sequences(&env.graph, profile, &env.feasible, &env.x0, env.k_f, env.rule)?)
    };
    settle_sequences(profile, mech, env, sequences)
}

/// Payoffs `u_i = −f_i(o*) − p_i` under the true costs.
pub fn payoff(profile: &StrategyProfile, mech: Mechanism, env: &GameEnv) -> Result<Vec<f64>> {
    Ok(simulate(profile, mech, env)?.report.payoffs)
}

/// How far a run is from exact optimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunDiagnostics {
    /// Disagreement of the social sequence at `k_f`.
    pub disagreement: f64,
    /// `Σ v_i(o*) − min Σ v_i` over the declared social evaluations, when the
    /// centralized minimiser applies.
    pub optimality_gap: Option<f64>,
    /// Tolerance used in incentive checks: the optimality gap when known,
    /// else the disagreement.
    pub epsilon: f64,
}

/// Diagnostics of a finished simulation.
///
/// A unilateral deviation leaves every sequence without the deviator
/// untouched, so it can gain at most the social optimality gap; the same
/// bound covers quitting. This gap is what `epsilon` reports.
pub fn diagnose(profile: &StrategyProfile, env: &GameEnv, sim: &Simulation) -> Result<RunDiagnostics> {
    let Some(set) = &sim.sequences else {
        return Ok(RunDiagnostics { disagreement: 0.0, optimality_gap: Some(0.0), epsilon: 0.0 });
    };
    let disagreement = crate::distopt::disagreement(&set.social, set.k_f());
    let declared: Vec<&EvaluationFunction> = set
        .participants
        .iter()
        .map(|&i| profile.evaluation(i, crate::distopt::SequenceId::Social).ok_or(Error::EmptyEvaluation))
        .collect::<Result<_>>()?;
    let gap = match centralized_minimize(&declared, &env.feasible) {
        Ok((_, best)) => {
            let at = declared.iter().map(|v| v.evaluate(&sim.report.o_star)).sum::<Result<f64>>()?;
            Some((at - best).max(0.0))
        }
        Err(Error::Oracle(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RunDiagnostics { disagreement, optimality_gap: gap, epsilon: gap.unwrap_or(disagreement) })
}
