//! The gradient filter run by the central authority for each agent.
//!
//! An agent's (state, gradient) pairs from all sequences are interleaved
//! into one causal stream. Each incoming gradient is projected onto the set
//! of gradients that keep the stream cyclically monotone, i.e. consistent
//! with some convex function. The squared size of those repairs enters the
//! agent's penalty.
//!
//! `F[τ][m]` holds the longest path value from point `τ` to point `m`,
//! where an edge `a → b` is worth `ξ̃_aᵀ(η_b − η_a)`. A new pair `(η_s, ξ)`
//! is consistent iff every cycle through it is non-positive:
//!
//! `ξᵀ(η_τ − η_s) + F[τ][m] + ξ̃_mᵀ(η_s − η_m) ≤ 0` for all `τ, m < s`.
//!
//! For fixed `τ` only the largest `F[τ][m] + ξ̃_mᵀ(η_s − η_m)` matters, so
//! the QP has one halfspace per earlier point.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distopt::{SequenceId, SequenceTrace};
use crate::numerics::linalg::{dot, norm_sq, sub};
use crate::numerics::{solve_projection_qp, HalfSpace};
use crate::{Error, Result};

/// Slack used when testing an incoming gradient for pass-through.
pub const PASS_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StreamPoint {
    pub step: usize,
    pub sequence: SequenceId,
    pub state: Vec<f64>,
    pub gradient: Vec<f64>,
}

/// Cross-sequence data of one agent in filtering order.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedStream {
    pub agent: usize,
    /// Global stream index of the first point (`I · k_s`).
    pub offset: usize,
    pub points: Vec<StreamPoint>,
}

impl InterleavedStream {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Builds the stream from any history source. `lookup(id, k)` returns
    /// the agent's state and gradient at step `k` of sequence `id`.
    ///
    /// Per step the order is the social sequence, then the sequences
    /// without `j` for every other participant `j` in ascending order.
    pub fn from_history<'a, F>(agent: usize, participants: &[usize], k_s: usize, k_f: usize, mut lookup: F) -> Result<Self>
    where
        F: FnMut(SequenceId, usize) -> Option<(&'a [f64], &'a [f64])>,
    {
        if k_s > k_f {
            return Err(Error::InvalidParameter(format!("filter start {k_s} after final step {k_f}")));
        }
        if !participants.contains(&agent) {
            return Err(Error::MissingSequence(format!("agent {agent} does not participate")));
        }
        let mut order = vec![SequenceId::Social];
        if participants.len() > 1 {
            order.extend(participants.iter().filter(|&&j| j != agent).map(|&j| SequenceId::Without(j)));
        }
        let mut points = Vec::with_capacity(order.len() * (k_f - k_s + 1));
        for k in k_s..=k_f {
            for &id in &order {
                let (state, gradient) = lookup(id, k)
                    .ok_or_else(|| Error::MissingSequence(format!("{id} step {k} for agent {agent}")))?;
                points.push(StreamPoint { step: k, sequence: id, state: state.to_vec(), gradient: gradient.to_vec() });
            }
        }
        Ok(InterleavedStream { agent, offset: order.len() * k_s, points })
    }
}

/// Interleaves `agent`'s data from the social trace and the leave-one-out
/// traces over steps `k_s..=k_f`. The participant set is taken from the
/// social trace.
pub fn interleave(traces: &[SequenceTrace], agent: usize, k_s: usize, k_f: usize) -> Result<InterleavedStream> {
    let social = traces
        .iter()
        .find(|t| t.id == SequenceId::Social)
        .ok_or_else(|| Error::MissingSequence("social sequence".into()))?;
    InterleavedStream::from_history(agent, &social.participants, k_s, k_f, |id, k| {
        let t = traces.iter().find(|t| t.id == id)?;
        Some((t.state(k, agent)?, t.gradient(k, agent)?))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub repaired: Vec<Vec<f64>>,
    /// Longest path values between processed points, row-major `len × len`.
    pub paths: Vec<f64>,
    /// `‖ξ̃ − ξ‖²` per point.
    pub repairs: Vec<f64>,
    /// Whether the point passed through unchanged.
    pub passed: Vec<bool>,
    pub total_repair: f64,
}

impl FilterState {
    pub fn len(&self) -> usize {
        self.repaired.len()
    }

    pub fn is_empty(&self) -> bool {
        self.repaired.is_empty()
    }

    pub fn path(&self, from: usize, to: usize) -> f64 {
        self.paths[from * self.len() + to]
    }

    pub fn log(&self, stream: &InterleavedStream) -> Vec<RepairRecord> {
        stream
            .points
            .iter()
            .enumerate()
            .map(|(s, p)| RepairRecord {
                agent: stream.agent,
                t: stream.offset + s,
                step: p.step,
                sequence: p.sequence,
                repair: self.repairs[s],
                passed: self.passed[s],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RepairRecord {
    pub agent: usize,
    pub t: usize,
    pub step: usize,
    pub sequence: SequenceId,
    pub repair: f64,
    pub passed: bool,
}

/// Runs the causal filter over the whole stream.
pub fn filter_stream(stream: &InterleavedStream) -> Result<FilterState> {
    let len = stream.len();
    let mut repaired: Vec<Vec<f64>> = Vec::with_capacity(len);
    let mut repairs = Vec::with_capacity(len);
    let mut passed = Vec::with_capacity(len);
    let mut total_repair = 0.0;
    // square matrix of side `s`, regrown per point
    let mut paths: Vec<f64> = Vec::new();

    for (s, point) in stream.points.iter().enumerate() {
        let eta = &point.state;
        let xi = &point.gradient;
        if eta.len() != xi.len() || repaired.first().is_some_and(|r: &Vec<f64>| r.len() != xi.len()) {
            return Err(Error::Filter {
                index: stream.offset + s,
                source: Box::new(Error::Dimension { expected: repaired.first().map_or(eta.len(), Vec::len), got: xi.len() }),
            });
        }
        // back[m] = ξ̃_mᵀ(η_s − η_m): value of the edge m → s
        let back: Vec<f64> = (0..s).map(|m| dot(&repaired[m], &sub(eta, &stream.points[m].state))).collect();
        // into[τ] = F[τ][s] before ξ̃_s is known
        let into: Vec<f64> = (0..s)
            .map(|tau| (0..s).map(|m| paths[tau * s + m] + back[m]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let constraints: Vec<HalfSpace> = (0..s)
            .map(|tau| HalfSpace::new(sub(&stream.points[tau].state, eta), -into[tau]))
            .collect();

        let ok = constraints.iter().all(|c| dot(&c.normal, xi) <= c.offset + PASS_SLACK);
        let fixed = if ok {
            xi.clone()
        } else {
            solve_projection_qp(xi, &constraints)
                .map_err(|e| Error::Filter { index: stream.offset + s, source: Box::new(e) })?
                .point
        };
        let r = if ok { 0.0 } else { norm_sq(&sub(&fixed, xi)) };
        total_repair += r;
        repairs.push(r);
        passed.push(ok);

        // out[m] = F[s][m]
        let out: Vec<f64> = (0..s)
            .map(|m| {
                (0..s)
                    .map(|tau| dot(&fixed, &sub(&stream.points[tau].state, eta)) + paths[tau * s + m])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let n = s + 1;
        let mut grown = vec![0.0; n * n];
        for tau in 0..s {
            for m in 0..s {
                grown[tau * n + m] = paths[tau * s + m].max(into[tau] + out[m]);
            }
            grown[tau * n + s] = into[tau];
            grown[s * n + tau] = out[tau];
        }
        grown[s * n + s] = 0.0;
        paths = grown;
        repaired.push(fixed);
    }
    Ok(FilterState { repaired, paths, repairs, passed, total_repair })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyVerdict {
    pub consistent: bool,
    pub first_violation: Option<usize>,
    pub repair: f64,
}

/// Whether the stream is consistent with a single convex function, judged by
/// whether the filter has to repair anything. A filter failure counts as
/// inconsistent with infinite repair.
pub fn check_consistency(stream: &InterleavedStream) -> ConsistencyVerdict {
    match filter_stream(stream) {
        Ok(state) => {
            let first = state.passed.iter().position(|p| !p).map(|s| stream.offset + s);
            ConsistencyVerdict { consistent: first.is_none(), first_violation: first, repair: state.total_repair }
        }
        Err(Error::Filter { index, .. }) => {
            ConsistencyVerdict { consistent: false, first_violation: Some(index), repair: f64::INFINITY }
        }
        Err(_) => ConsistencyVerdict { consistent: false, first_violation: None, repair: f64::INFINITY },
    }
}

/// Largest cycle sum `Σ ξ_aᵀ(η_next − η_a)` over all cycles of length 2 and 3.
/// Positive values certify that no convex function fits the data.
pub fn short_cycle_excess(points: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let edge = |a: usize, b: usize| dot(&points[a].1, &sub(&points[b].0, &points[a].0));
    let n = points.len();
    let mut worst = f64::NEG_INFINITY;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            worst = worst.max(edge(a, b) + edge(b, a));
            for c in 0..n {
                if c != a && c != b {
                    worst = worst.max(edge(a, b) + edge(b, c) + edge(c, a));
                }
            }
        }
    }
    worst
}

/// Draws the filter start step uniformly from `[max(0, k_f − window), k_f − 1]`.
pub fn draw_filter_start(k_f: usize, window: usize, seed: u64) -> Result<usize> {
    if k_f == 0 || window == 0 {
        return Err(Error::InvalidParameter(format!("need k_f ≥ 1 and window ≥ 1, got {k_f} and {window}")));
    }
    let lo = k_f.saturating_sub(window);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rng.random_range(lo..k_f))
}
