//! The negotiation dynamic: a synchronous distributed projected subgradient
//! method over a communication graph with Metropolis mixing weights.
//!
//! Every agent keeps a local estimate of the full decision vector. One step
//! is a round in which every agent sends its estimate to its neighbours,
//! mixes what it received, takes a subgradient step on its own evaluation
//! function and projects back into the feasible set:
//!
//! `x_i ← P_X( Σ_j w_ij x_j − α_k · |participants| · g_i )`, `α_k = a / (k + b)`.
//!
//! The participant-count factor makes the network average follow a
//! subgradient step on the sum of the evaluation functions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::game::StrategyProfile;
use crate::numerics::linalg::{distance, norm};
use crate::numerics::{EvaluationFunction, FeasibleSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CommGraph {
    n_agents: usize,
    edges: Vec<(usize, usize)>,
    #[cfg_attr(feature = "serde", serde(skip))]
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Undirected graph on `n_agents` nodes. Must be connected.
    pub fn new(n_agents: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::InvalidParameter("graph needs at least one agent".into()));
        }
        let mut neighbors = vec![Vec::new(); n_agents];
        let mut canonical = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n_agents || b >= n_agents || a == b {
                return Err(Error::InvalidParameter(format!("invalid edge ({a}, {b})")));
            }
            let e = (a.min(b), a.max(b));
            if !canonical.contains(&e) {
                canonical.push(e);
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        canonical.sort_unstable();
        let graph = CommGraph { n_agents, edges: canonical, neighbors };
        let everyone: Vec<usize> = (0..n_agents).collect();
        if !graph.is_connected(&everyone) {
            return Err(Error::Disconnected { removed: None });
        }
        Ok(graph)
    }

    pub fn complete(n_agents: usize) -> Result<Self> {
        let edges = (0..n_agents)
            .flat_map(|a| (a + 1..n_agents).map(move |b| (a, b)))
            .collect();
        Self::new(n_agents, edges)
    }

    pub fn ring(n_agents: usize) -> Result<Self> {
        let edges = match n_agents {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            n => (0..n).map(|a| (a, (a + 1) % n)).collect(),
        };
        Self::new(n_agents, edges)
    }

    pub fn path(n_agents: usize) -> Result<Self> {
        Self::new(n_agents, (1..n_agents).map(|a| (a - 1, a)).collect())
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Whether the subgraph induced by `members` is connected.
    pub fn is_connected(&self, members: &[usize]) -> bool {
        let Some(&start) = members.first() else {
            return true;
        };
        let mut seen = vec![false; self.n_agents];
        let mut inside = vec![false; self.n_agents];
        for &m in members {
            inside[m] = true;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.neighbors[v] {
                if inside[w] && !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == members.len()
    }

    /// Metropolis weights on the subgraph induced by `participants`.
    pub fn mixing(&self, participants: &[usize]) -> Result<MixingMatrix> {
        if participants.iter().any(|&p| p >= self.n_agents) {
            return Err(Error::InvalidParameter("participant outside the graph".into()));
        }
        if !self.is_connected(participants) {
            return Err(Error::Disconnected { removed: None });
        }
        let m = participants.len();
        let local: Vec<Vec<usize>> = participants
            .iter()
            .map(|&p| {
                (0..m)
                    .filter(|&q| participants[q] != p && self.adjacent(p, participants[q]))
                    .collect()
            })
            .collect();
        let mut weights = vec![0.0; m * m];
        for p in 0..m {
            for &q in &local[p] {
                weights[p * m + q] = 1.0 / (1.0 + local[p].len().max(local[q].len()) as f64);
            }
        }
        for p in 0..m {
            let off: f64 = local[p].iter().map(|&q| weights[p * m + q]).sum();
            weights[p * m + p] = 1.0 - off;
        }
        Ok(MixingMatrix { participants: participants.to_vec(), local, weights })
    }
}

/// Doubly stochastic weights over a participant subset, indexed by position.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    participants: Vec<usize>,
    local: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl MixingMatrix {
    pub fn size(&self) -> usize {
        self.participants.len()
    }

    pub fn weight(&self, p: usize, q: usize) -> f64 {
        self.weights[p * self.size() + q]
    }

    pub fn neighbors(&self, p: usize) -> &[usize] {
        &self.local[p]
    }

    /// One mixing round: every position sends its estimate to its
    /// neighbours, then mixes its own estimate with the received ones in
    /// ascending sender order.
    pub fn mix(&self, states: &[Vec<f64>], step: usize) -> Vec<Vec<f64>> {
        let m = self.size();
        let mut inbox: Vec<Vec<EdgeMessage<'_>>> = (0..m).map(|_| Vec::new()).collect();
        for p in 0..m {
            for &q in &self.local[p] {
                inbox[q].push(EdgeMessage {
                    sender: self.participants[p],
                    receiver: self.participants[q],
                    step,
                    payload: &states[p],
                });
            }
        }
        (0..m)
            .map(|p| {
                let w_self = self.weight(p, p);
                let mut out: Vec<f64> = states[p].iter().map(|v| w_self * v).collect();
                inbox[p].sort_by_key(|msg| msg.sender);
                for msg in &inbox[p] {
                    let q = self.position(msg.sender).expect("sender participates");
                    let w = self.weight(p, q);
                    for (o, v) in out.iter_mut().zip(msg.payload) {
                        *o += w * v;
                    }
                }
                out
            })
            .collect()
    }

    fn position(&self, agent: usize) -> Option<usize> {
        self.participants.iter().position(|&a| a == agent)
    }
}

/// The state estimate transmitted along an edge in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMessage<'a> {
    pub sender: usize,
    pub receiver: usize,
    pub step: usize,
    pub payload: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRule {
    pub a: f64,
    pub b: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule { a: 1.0, b: 10.0 }
    }
}

impl StepRule {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("step rule needs a > 0 and b > 0, got ({a}, {b})")));
        }
        Ok(StepRule { a, b })
    }

    pub fn step(&self, k: usize) -> f64 {
        self.a / (k as f64 + self.b)
    }
}

/// Which optimisation problem a trace solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SequenceId {
    Social,
    Without(usize),
}

impl core::fmt::Display for SequenceId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SequenceId::Social => f.write_str("social"),
            SequenceId::Without(j) => write!(f, "without-{j}"),
        }
    }
}

/// Per-step states and gradients of one run, indexed `[step][position][coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrace {
    pub id: SequenceId,
    pub participants: Vec<usize>,
    pub states: Vec<Vec<Vec<f64>>>,
    pub gradients: Vec<Vec<Vec<f64>>>,
    pub rule: StepRule,
}

impl SequenceTrace {
    pub fn k_f(&self) -> usize {
        self.states.len() - 1
    }

    pub fn position(&self, agent: usize) -> Option<usize> {
        self.participants.iter().position(|&a| a == agent)
    }

    pub fn state(&self, k: usize, agent: usize) -> Option<&[f64]> {
        let p = self.position(agent)?;
        self.states.get(k).map(|s| s[p].as_slice())
    }

    pub fn gradient(&self, k: usize, agent: usize) -> Option<&[f64]> {
        let p = self.position(agent)?;
        self.gradients.get(k).map(|g| g[p].as_slice())
    }

    pub fn final_state(&self, agent: usize) -> Option<&[f64]> {
        self.state(self.k_f(), agent)
    }
}

/// Runs `k_f` synchronous rounds for `participants`, each using `evals[p]`
/// and starting from `x0[p]` (projected into `feasible`).
#[allow(clippy::too_many_arguments)]
pub fn run_sequence(
    graph: &CommGraph,
    id: SequenceId,
    participants: &[usize],
    evals: &[&EvaluationFunction],
    feasible: &FeasibleSet,
    x0: &[Vec<f64>],
    k_f: usize,
    rule: StepRule,
) -> Result<SequenceTrace> {
    if participants.is_empty() {
        return Err(Error::InvalidParameter("sequence without participants".into()));
    }
    if k_f == 0 {
        return Err(Error::InvalidParameter("k_f must be at least 1".into()));
    }
    if evals.len() != participants.len() || x0.len() != participants.len() {
        return Err(Error::InvalidParameter("one evaluation and start point per participant".into()));
    }
    for v in evals {
        if v.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let d = v.dimension().unwrap_or(0);
        if d != feasible.dim() {
            return Err(Error::Dimension { expected: feasible.dim(), got: d });
        }
    }
    let mixing = graph.mixing(participants).map_err(|e| match (e, id) {
        (Error::Disconnected { .. }, SequenceId::Without(j)) => Error::Disconnected { removed: Some(j) },
        (e, _) => e,
    })?;
    let scale = participants.len() as f64;
    let n = feasible.dim();

    let mut current: Vec<Vec<f64>> = x0.iter().map(|x| feasible.project(x)).collect::<Result<_>>()?;
    let mut states = Vec::with_capacity(k_f + 1);
    let mut gradients = Vec::with_capacity(k_f + 1);
    for k in 0..=k_f {
        let mut grads = vec![vec![0.0; n]; participants.len()];
        for (p, g) in grads.iter_mut().enumerate() {
            evals[p].subgradient_into(&current[p], g)?;
        }
        if k < k_f {
            let alpha = rule.step(k) * scale;
            let mut next = mixing.mix(&current, k);
            for (x, g) in next.iter_mut().zip(&grads) {
                for (xi, gi) in x.iter_mut().zip(g) {
                    *xi -= alpha * gi;
                }
                feasible.project_in_place(x)?;
            }
            states.push(core::mem::replace(&mut current, next));
        } else {
            states.push(core::mem::take(&mut current));
        }
        gradients.push(grads);
    }
    Ok(SequenceTrace { id, participants: participants.to_vec(), states, gradients, rule })
}

/// `max_{p,q} ‖x_p − x_q‖ + α_k ‖Σ_p g_p‖` at step `k`.
pub fn disagreement(trace: &SequenceTrace, k: usize) -> f64 {
    let Some(states) = trace.states.get(k) else {
        return f64::NAN;
    };
    let mut spread: f64 = 0.0;
    for p in 0..states.len() {
        for q in p + 1..states.len() {
            spread = spread.max(distance(&states[p], &states[q]));
        }
    }
    let grads = &trace.gradients[k];
    let mut total = vec![0.0; grads[0].len()];
    for g in grads {
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    spread + trace.rule.step(k) * norm(&total)
}

/// One optimisation problem to run: who participates with which function.
#[derive(Debug, Clone)]
pub struct SequenceJob<'a> {
    pub id: SequenceId,
    pub participants: Vec<usize>,
    pub evals: Vec<&'a EvaluationFunction>,
}

/// The social problem plus one leave-one-out problem per participant.
/// With a single participant there is no leave-one-out problem.
pub fn sequence_jobs(profile: &StrategyProfile) -> Result<Vec<SequenceJob<'_>>> {
    let participants = profile.participants();
    if participants.is_empty() {
        return Err(Error::InvalidParameter("at least one participant is required".into()));
    }
    let collect = |id: SequenceId, members: Vec<usize>| -> SequenceJob<'_> {
        let evals = members
            .iter()
            .map(|&a| profile.evaluation(a, id).expect("participant has an evaluation"))
            .collect();
        SequenceJob { id, participants: members, evals }
    };
    let mut jobs = vec![collect(SequenceId::Social, participants.clone())];
    if participants.len() > 1 {
        for &j in &participants {
            let rest = participants.iter().copied().filter(|&a| a != j).collect();
            jobs.push(collect(SequenceId::Without(j), rest));
        }
    }
    Ok(jobs)
}

pub fn run_job(
    graph: &CommGraph,
    job: &SequenceJob<'_>,
    feasible: &FeasibleSet,
    initial: &[Vec<f64>],
    k_f: usize,
    rule: StepRule,
) -> Result<SequenceTrace> {
    let x0: Vec<Vec<f64>> = job
        .participants
        .iter()
        .map(|&a| initial.get(a).cloned().ok_or(Error::InvalidParameter(format!("no initial state for agent {a}"))))
        .collect::<Result<_>>()?;
    run_sequence(graph, job.id, &job.participants, &job.evals, feasible, &x0, k_f, rule)
}

/// Traces of the social sequence and every leave-one-out sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    pub participants: Vec<usize>,
    pub social: SequenceTrace,
    pub leave_one_out: Vec<SequenceTrace>,
}

impl SequenceSet {
    /// Assembles a set from traces in job order (social first).
    pub fn from_traces(mut traces: Vec<SequenceTrace>) -> Result<Self> {
        if traces.is_empty() || traces[0].id != SequenceId::Social {
            return Err(Error::MissingSequence("social sequence".into()));
        }
        let social = traces.remove(0);
        let participants = social.participants.clone();
        Ok(SequenceSet { participants, social, leave_one_out: traces })
    }

    pub fn without(&self, agent: usize) -> Option<&SequenceTrace> {
        self.leave_one_out.iter().find(|t| t.id == SequenceId::Without(agent))
    }

    pub fn trace(&self, id: SequenceId) -> Option<&SequenceTrace> {
        match id {
            SequenceId::Social => Some(&self.social),
            SequenceId::Without(j) => self.without(j),
        }
    }

    pub fn k_f(&self) -> usize {
        self.social.k_f()
    }

    pub fn len(&self) -> usize {
        1 + self.leave_one_out.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = &SequenceTrace> {
        core::iter::once(&self.social).chain(&self.leave_one_out)
    }
}

/// Runs every sequence of `profile` serially.
pub fn run_all_sequences(
    graph: &CommGraph,
    profile: &StrategyProfile,
    feasible: &FeasibleSet,
    initial: &[Vec<f64>],
    k_f: usize,
    rule: StepRule,
) -> Result<SequenceSet> {
    let traces = sequence_jobs(profile)?
        .iter()
        .map(|job| run_job(graph, job, feasible, initial, k_f, rule))
        .collect::<Result<Vec<_>>>()?;
    SequenceSet::from_traces(traces)
}
