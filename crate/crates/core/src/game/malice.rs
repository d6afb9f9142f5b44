use alloc::vec::Vec;

use super::StrategyProfile;
use crate::mechanism::SettlementReport;
use crate::numerics::linalg::{dot, sub};
use crate::numerics::EvaluationFunction;
use crate::{Error, Result};

/// One shift `c_ij` against its admissible band at the realised outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandCheck {
    pub agent: usize,
    pub sequence: usize,
    pub offset: f64,
    /// `f_i(o*) + ∇f_i(o*)ᵀ(o_j − o*) − f_i(o_j)`
    pub lower: f64,
    /// Distance inside the band; negative when outside.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaliceVerdict {
    pub passed: bool,
    pub bands: Vec<BandCheck>,
    /// Per victim `i`: `(|Σ_{j≠i} c_ji|, Σ_j f_j(o_i) − Σ_j f_j(o*) + eps)`.
    pub aggregate: Vec<(usize, f64, f64)>,
}

/// Checks every participant's shifts against
/// `f_i(o*) + ∇f_i(o*)ᵀ(o_j − o*) − f_i(o_j) ≤ c_ij ≤ 0` (with slack `eps`)
/// and every victim's total loss against
/// `|Σ_{j≠i} c_ji| ≤ Σ_j f_j(o_i) − Σ_j f_j(o*) + eps`, sums over participants.
///
/// Profiles whose sequence evaluations are not shifts of the social
/// evaluation are rejected.
pub fn maliciousness_bound_check(
    profile: &StrategyProfile,
    report: &SettlementReport,
    truth: &[EvaluationFunction],
    eps: f64,
) -> Result<MaliceVerdict> {
    let parts = &report.participants;
    let o_star = &report.o_star;
    let mut bands = Vec::new();
    for &i in parts {
        let grad = truth[i].subgradient(o_star)?;
        let at_star = truth[i].evaluate(o_star)?;
        for &j in parts.iter().filter(|&&j| j != i) {
            let o_j = report.o_seq[j].as_ref().ok_or_else(|| Error::MissingSequence(alloc::format!("outcome {j}")))?;
            let c = profile.agent(i).offset(j).ok_or_else(|| {
                Error::InvalidParameter(alloc::format!("agent {i} does not use a shifted evaluation in sequence {j}"))
            })?;
            let lower = at_star + dot(&grad, &sub(o_j, o_star)) - truth[i].evaluate(o_j)?;
            let margin = (c - lower).min(-c) + eps;
            bands.push(BandCheck { agent: i, sequence: j, offset: c, lower, margin });
        }
    }
    let mut aggregate = Vec::new();
    if parts.len() > 1 {
        let social: f64 = parts.iter().map(|&j| truth[j].evaluate(o_star)).sum::<Result<f64>>()?;
        for &i in parts {
            let o_i = report.o_seq[i].as_ref().ok_or_else(|| Error::MissingSequence(alloc::format!("outcome {i}")))?;
            let at_i: f64 = parts.iter().map(|&j| truth[j].evaluate(o_i)).sum::<Result<f64>>()?;
            let loss: f64 = bands.iter().filter(|b| b.sequence == i).map(|b| b.offset).sum::<f64>().abs();
            aggregate.push((i, loss, at_i - social + eps));
        }
    }
    let passed = bands.iter().all(|b| b.margin >= 0.0) && aggregate.iter().all(|(_, loss, bound)| loss <= bound);
    Ok(MaliceVerdict { passed, bands, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distopt::CommGraph;
    use crate::game::{simulate, AgentStrategy, GameEnv};
    use crate::mechanism::Mechanism;
    use crate::numerics::{FeasibleSet, QuadraticForm};
    use alloc::vec;

    fn setup() -> (Vec<EvaluationFunction>, GameEnv) {
        let truth: Vec<_> = [(1.0, 1.0), (2.0, -1.0), (0.5, 2.0)]
            .iter()
            .map(|&(w, c)| EvaluationFunction::quadratic(QuadraticForm::scalar(w, c).unwrap()))
            .collect();
        let x = FeasibleSet::from_box(vec![-10.0], vec![10.0]).unwrap();
        let env = GameEnv::new(CommGraph::complete(3).unwrap(), x, truth.clone(), 300, 296).unwrap();
        (truth, env)
    }

    #[test]
    fn band_endpoints() {
        let (truth, env) = setup();
        let honest = StrategyProfile::truthful(&truth).unwrap();
        let base = simulate(&honest, Mechanism::DeVcgG, &env).unwrap().report;
        let v = maliciousness_bound_check(&honest, &base, &truth, 0.0).unwrap();
        assert!(v.passed);
        let lower = v.bands.iter().find(|b| b.agent == 0 && b.sequence == 1).unwrap().lower;
        assert!(lower < 0.0);
        for (c, ok) in [(lower, true), (lower - 1.0, false)] {
            let p = honest.with(0, AgentStrategy::shifted(truth[0].clone(), &[(1, c)]).unwrap()).unwrap();
            let r = simulate(&p, Mechanism::DeVcgG, &env).unwrap().report;
            let v = maliciousness_bound_check(&p, &r, &truth, 0.0).unwrap();
            assert_eq!(v.passed, ok, "c = {c}");
            let b = v.bands.iter().find(|b| b.agent == 0 && b.sequence == 1).unwrap();
            if ok {
                assert_eq!(b.margin, 0.0);
            }
        }
    }

    #[test]
    fn non_shift_profiles_are_rejected() {
        let (truth, env) = setup();
        let honest = StrategyProfile::truthful(&truth).unwrap();
        let r = simulate(&honest, Mechanism::DeVcg, &env).unwrap().report;
        let odd = honest
            .with(0, AgentStrategy::Tisd { social: truth[0].clone(), per_sequence: vec![(1, truth[1].clone())] })
            .unwrap();
        assert!(maliciousness_bound_check(&odd, &r, &truth, 0.0).is_err());
    }
}
