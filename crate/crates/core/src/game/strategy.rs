use alloc::format;
use alloc::vec::Vec;

use crate::distopt::SequenceId;
use crate::numerics::EvaluationFunction;
use crate::{Error, Result};

/// What one agent declares in each sequence.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum AgentStrategy {
    Quit,
    /// One evaluation function in every sequence.
    Tisi(EvaluationFunction),
    /// A social evaluation plus per-sequence replacements. Sequences not
    /// listed fall back to the social evaluation.
    Tisd {
        social: EvaluationFunction,
        per_sequence: Vec<(usize, EvaluationFunction)>,
    },
}

impl AgentStrategy {
    pub fn truthful(f: EvaluationFunction) -> Self {
        AgentStrategy::Tisi(f)
    }

    /// Declares `social` in the social sequence and `social + c` in the
    /// sequence without agent `j` for each `(j, c)`. Offsets must be non-positive.
    pub fn shifted(social: EvaluationFunction, offsets: &[(usize, f64)]) -> Result<Self> {
        if let Some(&(j, c)) = offsets.iter().find(|(_, c)| !(*c <= 0.0)) {
            return Err(Error::InvalidParameter(format!("offset for sequence {j} must be non-positive, got {c}")));
        }
        let per_sequence = offsets.iter().map(|&(j, c)| (j, social.clone().shifted(c))).collect();
        Ok(AgentStrategy::Tisd { social, per_sequence })
    }

    pub fn participates(&self) -> bool {
        match self {
            AgentStrategy::Quit => false,
            AgentStrategy::Tisi(v) => !v.is_empty(),
            AgentStrategy::Tisd { social, .. } => !social.is_empty(),
        }
    }

    pub fn social(&self) -> Option<&EvaluationFunction> {
        match self {
            AgentStrategy::Quit => None,
            AgentStrategy::Tisi(v) | AgentStrategy::Tisd { social: v, .. } => Some(v),
        }
    }

    /// The evaluation used in sequence `id`; `None` when quitting.
    pub fn evaluation(&self, id: SequenceId) -> Option<&EvaluationFunction> {
        if !self.participates() {
            return None;
        }
        match (self, id) {
            (AgentStrategy::Tisd { social, per_sequence }, SequenceId::Without(j)) => Some(
                per_sequence.iter().find(|(k, _)| *k == j).map(|(_, v)| v).unwrap_or(social),
            ),
            _ => self.social(),
        }
    }

    /// Sequence-independent in effect: every sequence uses the social function.
    pub fn is_tisi(&self) -> bool {
        match self {
            AgentStrategy::Tisd { social, per_sequence } => per_sequence.iter().all(|(_, v)| v == social),
            _ => true,
        }
    }

    /// The constant `c` such that the evaluation in the sequence without `j`
    /// equals the social evaluation plus `c`, if it has that form.
    pub fn offset(&self, j: usize) -> Option<f64> {
        let social = self.social()?;
        let v = self.evaluation(SequenceId::Without(j))?;
        if v == social {
            return Some(0.0);
        }
        let mut peeled = v;
        let mut c = 0.0;
        while let EvaluationFunction::Shifted { base, shift } = peeled {
            c += shift;
            peeled = base;
            if peeled == social {
                return Some(c);
            }
        }
        None
    }
}

/// One strategy per agent, indexed by agent id.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<AgentStrategy>", into = "Vec<AgentStrategy>"))]
pub struct StrategyProfile {
    agents: Vec<AgentStrategy>,
}

impl TryFrom<Vec<AgentStrategy>> for StrategyProfile {
    type Error = Error;
    fn try_from(agents: Vec<AgentStrategy>) -> Result<Self> {
        Self::new(agents)
    }
}

impl From<StrategyProfile> for Vec<AgentStrategy> {
    fn from(p: StrategyProfile) -> Self {
        p.agents
    }
}

impl StrategyProfile {
    pub fn new(agents: Vec<AgentStrategy>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidParameter("profile needs at least one agent".into()));
        }
        let mut dim = None;
        for (i, s) in agents.iter().enumerate() {
            if let AgentStrategy::Tisd { social, per_sequence } = s {
                for (j, v) in per_sequence {
                    if *j == i || *j >= agents.len() {
                        return Err(Error::InvalidParameter(format!("agent {i} declares for invalid sequence {j}")));
                    }
                    if social.is_empty() != v.is_empty() {
                        return Err(Error::InvalidParameter(format!(
                            "agent {i} mixes participation and quitting across sequences"
                        )));
                    }
                }
            }
            let declared = s.social().into_iter().chain(match s {
                AgentStrategy::Tisd { per_sequence, .. } => per_sequence.iter().map(|(_, v)| v).collect(),
                _ => Vec::new(),
            });
            for v in declared {
                if let Some(d) = v.dimension() {
                    match dim {
                        None => dim = Some(d),
                        Some(e) if e != d => return Err(Error::Dimension { expected: e, got: d }),
                        _ => {}
                    }
                }
            }
        }
        Ok(StrategyProfile { agents })
    }

    /// Everyone truthful with the given functions.
    pub fn truthful(truth: &[EvaluationFunction]) -> Result<Self> {
        Self::new(truth.iter().cloned().map(AgentStrategy::Tisi).collect())
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, i: usize) -> &AgentStrategy {
        &self.agents[i]
    }

    pub fn agents(&self) -> &[AgentStrategy] {
        &self.agents
    }

    pub fn participants(&self) -> Vec<usize> {
        (0..self.agents.len()).filter(|&i| self.agents[i].participates()).collect()
    }

    pub fn evaluation(&self, agent: usize, id: SequenceId) -> Option<&EvaluationFunction> {
        self.agents.get(agent)?.evaluation(id)
    }

    pub fn is_tisi(&self) -> bool {
        self.agents.iter().all(AgentStrategy::is_tisi)
    }

    /// Copy with agent `i`'s strategy replaced.
    pub fn with(&self, i: usize, strategy: AgentStrategy) -> Result<Self> {
        let mut agents = self.agents.clone();
        agents[i] = strategy;
        Self::new(agents)
    }
}
