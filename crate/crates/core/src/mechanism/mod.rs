//! The central authority: message collection, outcome selection and
//! settlement under DeVCG and its gradient-filtered variant DeVCG-G.

mod centralized;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use centralized::{centralized_minimize, vcg_payment_centralized};

use crate::distopt::{SequenceId, SequenceSet};
use crate::filter::{filter_stream, InterleavedStream, RepairRecord};
use crate::game::StrategyProfile;
use crate::numerics::linalg::{componentwise_median, dot, sub};
use crate::numerics::EvaluationFunction;
use crate::{Error, Result};

/// Default payment charged to everyone when nobody participates.
pub const DEFAULT_P_BAR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Mechanism {
    #[cfg_attr(feature = "serde", serde(rename = "devcg"))]
    DeVcg,
    #[cfg_attr(feature = "serde", serde(rename = "devcg-g"))]
    DeVcgG,
}

impl core::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Mechanism::DeVcg => "devcg",
            Mechanism::DeVcgG => "devcg-g",
        })
    }
}

/// An agent's states and gradients in one sequence, per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceHistory {
    pub id: SequenceId,
    pub states: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<f64>>,
}

/// `τ_i = (v_i(o*), (v_ij(o_j))_{j≠i})`
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BudgetProposal {
    pub social: f64,
    pub sequences: Vec<(usize, f64)>,
}

impl BudgetProposal {
    pub fn sequence(&self, j: usize) -> Option<f64> {
        self.sequences.iter().find(|(k, _)| *k == j).map(|(_, v)| *v)
    }
}

/// Everything one agent sends to the central authority. The budget
/// proposal is added in a second phase, after outcomes are published.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageBundle {
    pub agent: usize,
    /// Social sequence first, then the sequences without each other participant.
    pub history: Vec<SequenceHistory>,
    pub budget: Option<BudgetProposal>,
}

impl MessageBundle {
    pub fn sequence(&self, id: SequenceId) -> Option<&SequenceHistory> {
        self.history.iter().find(|h| h.id == id)
    }

    pub fn k_f(&self) -> usize {
        self.history[0].states.len() - 1
    }

    pub fn final_state(&self, id: SequenceId) -> Option<&[f64]> {
        self.sequence(id)?.states.last().map(Vec::as_slice)
    }

    /// `g_i^{k_f}` from the social sequence.
    pub fn final_gradient(&self) -> Option<&[f64]> {
        self.sequence(SequenceId::Social)?.gradients.last().map(Vec::as_slice)
    }
}

/// Splits the traces into one bundle per participant.
pub fn collect_messages(set: &SequenceSet) -> Vec<MessageBundle> {
    set.participants
        .iter()
        .map(|&agent| {
            let history = set
                .iter()
                .filter_map(|trace| {
                    let p = trace.position(agent)?;
                    Some(SequenceHistory {
                        id: trace.id,
                        states: trace.states.iter().map(|s| s[p].clone()).collect(),
                        gradients: trace.gradients.iter().map(|g| g[p].clone()).collect(),
                    })
                })
                .collect();
            MessageBundle { agent, history, budget: None }
        })
        .collect()
}

/// `o*` and the sequence outcomes `o_i` (absent with a single participant).
#[derive(Debug, Clone, PartialEq)]
pub struct Outcomes {
    pub participants: Vec<usize>,
    pub o_star: Vec<f64>,
    pub o_seq: Vec<(usize, Vec<f64>)>,
}

impl Outcomes {
    pub fn sequence(&self, i: usize) -> Option<&[f64]> {
        self.o_seq.iter().find(|(k, _)| *k == i).map(|(_, o)| o.as_slice())
    }
}

/// Component-wise medians of the final states. No bundles means everyone quit
/// and yields empty outcomes.
pub fn select_outcomes(bundles: &[MessageBundle]) -> Result<Outcomes> {
    let participants: Vec<usize> = bundles.iter().map(|b| b.agent).collect();
    let social: Vec<&[f64]> = bundles
        .iter()
        .map(|b| b.final_state(SequenceId::Social).ok_or_else(|| missing(b.agent, SequenceId::Social)))
        .collect::<Result<_>>()?;
    let o_star = componentwise_median(&social);
    let mut o_seq = Vec::new();
    if bundles.len() > 1 {
        for &i in &participants {
            let id = SequenceId::Without(i);
            let states: Vec<&[f64]> = bundles
                .iter()
                .filter(|b| b.agent != i)
                .map(|b| b.final_state(id).ok_or_else(|| missing(b.agent, id)))
                .collect::<Result<_>>()?;
            o_seq.push((i, componentwise_median(&states)));
        }
    }
    Ok(Outcomes { participants, o_star, o_seq })
}

fn missing(agent: usize, id: SequenceId) -> Error {
    Error::MissingSequence(format!("{id} for agent {agent}"))
}

/// Phase two: every participant evaluates its declared functions at the
/// published outcomes.
pub fn propose_budgets(bundles: &mut [MessageBundle], profile: &StrategyProfile, outcomes: &Outcomes) -> Result<()> {
    propose_budgets_with(bundles, profile, outcomes, |_, _| {})
}

/// Like [`propose_budgets`], then lets `tamper` rewrite each proposal.
pub fn propose_budgets_with<F>(
    bundles: &mut [MessageBundle],
    profile: &StrategyProfile,
    outcomes: &Outcomes,
    mut tamper: F,
) -> Result<()>
where
    F: FnMut(usize, &mut BudgetProposal),
{
    for b in bundles.iter_mut() {
        let i = b.agent;
        let declared = |id| profile.evaluation(i, id).ok_or(Error::EmptyEvaluation);
        let social = declared(SequenceId::Social)?.evaluate(&outcomes.o_star)?;
        let mut sequences = Vec::new();
        for (j, o_j) in &outcomes.o_seq {
            if *j != i {
                sequences.push((*j, declared(SequenceId::Without(*j))?.evaluate(o_j)?));
            }
        }
        let mut proposal = BudgetProposal { social, sequences };
        tamper(i, &mut proposal);
        b.budget = Some(proposal);
    }
    Ok(())
}

/// Result of one mechanism run. Vectors are indexed by agent id.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SettlementReport {
    pub participants: Vec<usize>,
    pub o_star: Vec<f64>,
    pub o_seq: Vec<Option<Vec<f64>>>,
    pub payments: Vec<f64>,
    pub penalties: Vec<f64>,
    pub e_terms: Vec<f64>,
    pub payoffs: Vec<f64>,
    pub quit: bool,
}

impl SettlementReport {
    pub fn n_agents(&self) -> usize {
        self.payments.len()
    }

    fn all_quit(n_agents: usize, p_bar: f64) -> Self {
        SettlementReport {
            participants: Vec::new(),
            o_star: Vec::new(),
            o_seq: vec![None; n_agents],
            payments: vec![p_bar; n_agents],
            penalties: vec![0.0; n_agents],
            e_terms: vec![0.0; n_agents],
            payoffs: vec![-p_bar; n_agents],
            quit: true,
        }
    }
}

/// DeVCG-G settlement plus the per-point filter log.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSettlement {
    pub report: SettlementReport,
    pub repair_log: Vec<RepairRecord>,
}

/// `Σ_{j≠i} (τ_j)_0 − Σ_{j≠i} (τ_j)_i` for participant `i`.
fn vcg_payment(bundles: &[MessageBundle], i: usize) -> Result<f64> {
    let mut at_social = 0.0;
    let mut without_i = 0.0;
    for b in bundles.iter().filter(|b| b.agent != i) {
        let tau = b.budget.as_ref().ok_or(Error::MissingBudget(b.agent))?;
        at_social += tau.social;
        without_i += tau.sequence(i).ok_or(Error::MissingBudget(b.agent))?;
    }
    Ok(at_social - without_i)
}

fn base_report(bundles: &[MessageBundle], outcomes: &Outcomes, truth: &[EvaluationFunction]) -> Result<SettlementReport> {
    let n = truth.len();
    if let Some(b) = bundles.iter().find(|b| b.agent >= n) {
        return Err(Error::InvalidParameter(format!("agent {} outside the population of {n}", b.agent)));
    }
    let mut o_seq = vec![None; n];
    for (i, o) in &outcomes.o_seq {
        o_seq[*i] = Some(o.clone());
    }
    let mut payments = vec![0.0; n];
    for b in bundles {
        payments[b.agent] = vcg_payment(bundles, b.agent)?;
    }
    Ok(SettlementReport {
        participants: outcomes.participants.clone(),
        o_star: outcomes.o_star.clone(),
        o_seq,
        payments,
        penalties: vec![0.0; n],
        e_terms: vec![0.0; n],
        payoffs: vec![0.0; n],
        quit: false,
    })
}

fn fill_payoffs(report: &mut SettlementReport, truth: &[EvaluationFunction]) -> Result<()> {
    for (i, f) in truth.iter().enumerate() {
        report.payoffs[i] = -f.evaluate(&report.o_star)? - report.payments[i];
    }
    Ok(())
}

/// DeVCG settlement. `truth` holds the true costs of all agents, which
/// determine payoffs only.
pub fn settle_devcg(
    bundles: &[MessageBundle],
    outcomes: &Outcomes,
    truth: &[EvaluationFunction],
    p_bar: f64,
) -> Result<SettlementReport> {
    if bundles.is_empty() {
        return Ok(SettlementReport::all_quit(truth.len(), p_bar));
    }
    let mut report = base_report(bundles, outcomes, truth)?;
    fill_payoffs(&mut report, truth)?;
    Ok(report)
}

/// DeVCG-G settlement: DeVCG payments plus `π_i = k_f·e_i + 1` whenever
/// `e_i ≠ 0`, where `e_i` is the filter repair over steps `k_s..=k_f` minus
/// `Σ_{j≠i} min{0, (τ_i)_j − (τ_i)_0 − g_iᵀ(o_j − o*)}`.
pub fn settle_devcg_g(
    bundles: &[MessageBundle],
    outcomes: &Outcomes,
    truth: &[EvaluationFunction],
    p_bar: f64,
    k_s: usize,
) -> Result<FilteredSettlement> {
    if bundles.is_empty() {
        return Ok(FilteredSettlement { report: SettlementReport::all_quit(truth.len(), p_bar), repair_log: Vec::new() });
    }
    let mut report = base_report(bundles, outcomes, truth)?;
    let mut repair_log = Vec::new();
    for b in bundles {
        let i = b.agent;
        let k_f = b.k_f();
        let stream = InterleavedStream::from_history(i, &outcomes.participants, k_s, k_f, |id, k| {
            let h = b.sequence(id)?;
            Some((h.states.get(k)?.as_slice(), h.gradients.get(k)?.as_slice()))
        })?;
        let state = filter_stream(&stream)?;
        repair_log.extend(state.log(&stream));

        let tau = b.budget.as_ref().ok_or(Error::MissingBudget(i))?;
        let g = b.final_gradient().ok_or_else(|| missing(i, SequenceId::Social))?;
        let mut gap = 0.0;
        for (j, o_j) in &outcomes.o_seq {
            if *j == i {
                continue;
            }
            let tau_j = tau.sequence(*j).ok_or(Error::MissingBudget(i))?;
            let slack = tau_j - tau.social - dot(g, &sub(o_j, &outcomes.o_star));
            gap += slack.min(0.0);
        }
        let e = state.total_repair - gap;
        report.e_terms[i] = e;
        if e != 0.0 {
            let pi = k_f as f64 * e + 1.0;
            report.penalties[i] = pi;
            report.payments[i] += pi;
        }
    }
    fill_payoffs(&mut report, truth)?;
    Ok(FilteredSettlement { report, repair_log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distopt::{run_all_sequences, CommGraph, StepRule};
    use crate::game::AgentStrategy;
    use crate::numerics::{FeasibleSet, QuadraticForm};
    use proptest::prelude::*;

    fn parabola(w: f64, c: f64) -> EvaluationFunction {
        EvaluationFunction::quadratic(QuadraticForm::scalar(w, c).unwrap())
    }

    fn line() -> FeasibleSet {
        FeasibleSet::from_box(vec![-10.0], vec![10.0]).unwrap()
    }

    fn bundle(agent: usize, social: &[f64], others: &[(usize, &[f64])]) -> MessageBundle {
        let hist = |id, x: &[f64]| SequenceHistory { id, states: vec![x.to_vec()], gradients: vec![vec![0.0; x.len()]] };
        let mut history = vec![hist(SequenceId::Social, social)];
        history.extend(others.iter().map(|(j, x)| hist(SequenceId::Without(*j), x)));
        MessageBundle { agent, history, budget: None }
    }

    fn run(profile: &StrategyProfile, k_f: usize) -> (Vec<MessageBundle>, Outcomes) {
        let n = profile.n_agents();
        let g = CommGraph::complete(n).unwrap();
        let set = run_all_sequences(&g, profile, &line(), &vec![vec![0.0]; n], k_f, StepRule::default()).unwrap();
        let mut bundles = collect_messages(&set);
        let outcomes = select_outcomes(&bundles).unwrap();
        propose_budgets(&mut bundles, profile, &outcomes).unwrap();
        (bundles, outcomes)
    }

    #[test]
    fn medians() {
        let b = [bundle(0, &[1.0], &[]), bundle(1, &[3.0], &[]), bundle(2, &[2.0], &[])];
        assert_eq!(select_outcomes(&b[..1]).unwrap().o_star, [1.0]);
        let three: Vec<_> = b.iter().map(|x| x.agent).collect();
        assert_eq!(three.len(), 3);
        let with_seq = [
            bundle(0, &[1.0], &[(1, &[5.0]), (2, &[7.0])]),
            bundle(1, &[3.0], &[(0, &[4.0]), (2, &[8.0])]),
            bundle(2, &[2.0], &[(0, &[6.0]), (1, &[9.0])]),
        ];
        let o = select_outcomes(&with_seq).unwrap();
        assert_eq!(o.o_star, [2.0]);
        assert_eq!(o.sequence(0), Some(&[5.0][..]));
        assert_eq!(o.sequence(2), Some(&[7.5][..]));
        let pair = [bundle(0, &[1.0], &[(1, &[0.0])]), bundle(1, &[3.0], &[(0, &[0.0])])];
        assert_eq!(select_outcomes(&pair).unwrap().o_star, [2.0]);
        let grid = [bundle(0, &[0.0, 9.0], &[]), bundle(1, &[5.0, 5.0], &[]), bundle(2, &[9.0, 0.0], &[])];
        assert_eq!(componentwise_median(&grid.iter().map(|b| b.final_state(SequenceId::Social).unwrap()).collect::<Vec<_>>()), [5.0, 5.0]);
    }

    #[test]
    fn truthful_pair_matches_centralized_vcg() {
        let fs = [parabola(1.0, 1.0), parabola(1.0, -1.0)];
        let profile = StrategyProfile::truthful(&fs).unwrap();
        let (bundles, outcomes) = run(&profile, 2000);
        let r = settle_devcg(&bundles, &outcomes, &fs, DEFAULT_P_BAR).unwrap();
        let (_, oracle) = vcg_payment_centralized(&fs, &line()).unwrap();
        for i in 0..2 {
            assert!((r.payments[i] - oracle[i]).abs() < 0.05, "{} vs {}", r.payments[i], oracle[i]);
        }
        assert!((r.payoffs[0] - r.payoffs[1]).abs() < 1e-2);
    }

    #[test]
    fn everyone_quits() {
        let fs = [parabola(1.0, 1.0), parabola(1.0, -1.0)];
        let r = settle_devcg(&[], &select_outcomes(&[]).unwrap(), &fs, 77.0).unwrap();
        assert!(r.quit);
        assert_eq!(r.payoffs, [-77.0, -77.0]);
        assert_eq!(r.payments, [77.0, 77.0]);
    }

    #[test]
    fn single_participant_pays_nothing() {
        let fs = [parabola(1.0, 1.0), parabola(1.0, -1.0)];
        let profile = StrategyProfile::new(vec![AgentStrategy::Tisi(fs[0].clone()), AgentStrategy::Quit]).unwrap();
        let (bundles, outcomes) = run(&profile, 500);
        let r = settle_devcg(&bundles, &outcomes, &fs, DEFAULT_P_BAR).unwrap();
        assert_eq!(r.payments, [0.0, 0.0]);
        assert_eq!(r.payoffs[0], -fs[0].evaluate(&r.o_star).unwrap());
        assert!(outcomes.o_seq.is_empty());
        let g = settle_devcg_g(&bundles, &outcomes, &fs, DEFAULT_P_BAR, 497).unwrap();
        assert_eq!(g.report, r);
    }

    #[test]
    fn missing_budget_is_an_error() {
        let fs = [parabola(1.0, 1.0), parabola(1.0, -1.0)];
        let profile = StrategyProfile::truthful(&fs).unwrap();
        let (mut bundles, outcomes) = run(&profile, 20);
        bundles[1].budget = None;
        assert_eq!(settle_devcg(&bundles, &outcomes, &fs, 1.0), Err(Error::MissingBudget(1)));
    }

    #[test]
    fn own_budget_does_not_move_own_payment() {
        let fs = [parabola(1.0, 1.0), parabola(2.0, -1.0), parabola(0.5, 0.3)];
        let profile = StrategyProfile::truthful(&fs).unwrap();
        let (mut bundles, outcomes) = run(&profile, 200);
        let before = settle_devcg(&bundles, &outcomes, &fs, 1.0).unwrap();
        let tau = bundles[0].budget.as_mut().unwrap();
        tau.social += 13.0;
        tau.sequences[0].1 -= 4.0;
        let after = settle_devcg(&bundles, &outcomes, &fs, 1.0).unwrap();
        assert_eq!(before.payments[0], after.payments[0]);
        assert_ne!(before.payments[1], after.payments[1]);
    }

    #[test]
    fn tisi_settlements_coincide() {
        let fs = [parabola(1.0, 1.0), parabola(2.0, -1.0), parabola(0.5, 0.3)];
        let profile = StrategyProfile::truthful(&fs).unwrap();
        let (bundles, outcomes) = run(&profile, 300);
        let plain = settle_devcg(&bundles, &outcomes, &fs, DEFAULT_P_BAR).unwrap();
        let filtered = settle_devcg_g(&bundles, &outcomes, &fs, DEFAULT_P_BAR, 296).unwrap();
        assert_eq!(plain, filtered.report);
        assert_eq!(filtered.repair_log.len(), 3 * 3 * 5);
        assert!(filtered.repair_log.iter().all(|r| r.passed));
    }

    #[test]
    fn small_shift_is_harmless_large_shift_is_penalised() {
        let fs = [parabola(1.0, 1.0), parabola(2.0, -1.0), parabola(0.5, 0.3)];
        let honest = StrategyProfile::truthful(&fs).unwrap();
        let (hb, ho) = run(&honest, 300);
        let base = settle_devcg_g(&hb, &ho, &fs, DEFAULT_P_BAR, 296).unwrap().report;
        for (c, punished) in [(0.0, false), (-1e-6, false), (-50.0, true)] {
            let p = honest.with(0, AgentStrategy::shifted(fs[0].clone(), &[(1, c), (2, c)]).unwrap()).unwrap();
            let (b, o) = run(&p, 300);
            let r = settle_devcg_g(&b, &o, &fs, DEFAULT_P_BAR, 296).unwrap().report;
            assert_eq!(r.penalties[0] > 1.0, punished, "c = {c}");
            if punished {
                assert!(r.payoffs[0] < base.payoffs[0]);
                assert_eq!(r.penalties[0], 300.0 * r.e_terms[0] + 1.0);
            } else {
                assert_eq!(r.e_terms[0], 0.0);
            }
        }
    }

    #[test]
    fn tampered_budget_triggers_gap_term() {
        let fs = [parabola(1.0, 1.0), parabola(2.0, -1.0)];
        let profile = StrategyProfile::truthful(&fs).unwrap();
        let g = CommGraph::complete(2).unwrap();
        let set = run_all_sequences(&g, &profile, &line(), &vec![vec![0.0]; 2], 100, StepRule::default()).unwrap();
        let mut bundles = collect_messages(&set);
        let o = select_outcomes(&bundles).unwrap();
        propose_budgets_with(&mut bundles, &profile, &o, |i, tau| {
            if i == 1 {
                tau.sequences[0].1 -= 100.0;
            }
        })
        .unwrap();
        let r = settle_devcg_g(&bundles, &o, &fs, DEFAULT_P_BAR, 97).unwrap().report;
        assert!(r.e_terms[1] > 0.0 && r.penalties[1] > 1.0);
        assert_eq!(r.e_terms[0], 0.0);
    }

    proptest! {
        #[test]
        fn unanimous_median(d in proptest::collection::vec(-5.0f64..5.0, 1..4), n in 1usize..5) {
            let b: Vec<_> = (0..n).map(|i| bundle(i, &d, &[])).collect();
            let o = select_outcomes(&b[..1]).unwrap();
            prop_assert_eq!(&o.o_star, &d);
            let social: Vec<&[f64]> = b.iter().map(|x| x.final_state(SequenceId::Social).unwrap()).collect();
            prop_assert_eq!(componentwise_median(&social), d);
        }

        #[test]
        fn payoff_decomposition_and_penalty_range(
            c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, shift in -20.0f64..0.0,
        ) {
            let fs = [parabola(1.0, c1), parabola(1.5, c2)];
            let p = StrategyProfile::new(vec![
                AgentStrategy::shifted(fs[0].clone(), &[(1, shift)]).unwrap(),
                AgentStrategy::Tisi(fs[1].clone()),
            ]).unwrap();
            let (b, o) = run(&p, 60);
            let r = settle_devcg_g(&b, &o, &fs, DEFAULT_P_BAR, 57).unwrap().report;
            for i in 0..2 {
                prop_assert_eq!(r.payoffs[i], -fs[i].evaluate(&r.o_star).unwrap() - r.payments[i]);
                prop_assert!(r.penalties[i] == 0.0 || r.penalties[i] > 1.0);
                prop_assert!(r.e_terms[i] >= 0.0);
            }
        }
    }
}
