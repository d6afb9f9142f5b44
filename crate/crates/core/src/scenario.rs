//! Instance builders: the EV-charging case study and random quadratics.
//!
//! EV agent `i` chooses energies `x_it` for slots `t` and pays
//!
//! `f_i(x) = Σ_t d·x_it² + α_i(Σ_t x_it − Γ_i)² + (β/N) Σ_t (D_t + Σ_j x_jt)² + 200 + γ_i`
//!
//! with `Γ_i = Θ(s̄ − s_i0)` the energy needed to reach the target state of
//! charge. The common feasible set is `0 ≤ x_it ≤ x_max` with the block caps
//! `Σ_t x_it ≤ Γ_i`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{BlockCap, EvCost, EvaluationFunction, FeasibleSet, QuadraticForm};
use crate::{Error, Result};

/// Fixed part of every agent's cost.
pub const BASE_COST: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EvParams {
    /// Coupling weight β.
    #[cfg_attr(feature = "serde", serde(default = "defaults::beta"))]
    pub beta: f64,
    pub alpha: Vec<f64>,
    /// Constants γ_i; empty means all zero.
    #[cfg_attr(feature = "serde", serde(default))]
    pub gamma: Vec<f64>,
    /// Initial states of charge s_i0.
    pub soc0: Vec<f64>,
    /// Battery capacity Θ in kWh.
    #[cfg_attr(feature = "serde", serde(default = "defaults::capacity"))]
    pub capacity: f64,
    /// Target state of charge s̄.
    #[cfg_attr(feature = "serde", serde(default = "defaults::soc_max"))]
    pub soc_max: f64,
    /// Background demand D_t, one entry per slot.
    pub demand: Vec<f64>,
    /// Slot length ΔT in hours. Energies are per slot, so it only labels output.
    #[cfg_attr(feature = "serde", serde(default = "defaults::slot_hours"))]
    pub slot_hours: f64,
    #[cfg_attr(feature = "serde", serde(default = "defaults::degradation"))]
    pub degradation: f64,
    /// Per-slot upper bound; defaults to Θ/4.
    #[cfg_attr(feature = "serde", serde(default))]
    pub x_max: Option<f64>,
}

#[cfg(feature = "serde")]
mod defaults {
    pub fn beta() -> f64 {
        0.005
    }
    pub fn capacity() -> f64 {
        30.0
    }
    pub fn soc_max() -> f64 {
        0.9
    }
    pub fn slot_hours() -> f64 {
        1.0
    }
    pub fn degradation() -> f64 {
        0.002
    }
}

/// Synthetic 24-slot background demand in kW with an evening peak.
pub const SYNTHETIC_DAY: [f64; 24] = [
    22.0, 19.0, 17.0, 16.0, 16.0, 18.0, 24.0, 31.0, 34.0, 32.0, 29.0, 28.0, 28.0, 27.0, 27.0, 29.0, 34.0, 41.0,
    46.0, 47.0, 43.0, 36.0, 30.0, 25.0,
];

impl EvParams {
    /// Four agents with the case-study parameters over the given demand.
    pub fn case_study(demand: Vec<f64>) -> Self {
        EvParams {
            beta: 0.005,
            alpha: vec![10.0, 4.0, 8.0, 7.0],
            gamma: vec![0.0; 4],
            soc0: vec![0.1, 0.15, 0.23, 0.14],
            capacity: 30.0,
            soc_max: 0.9,
            demand,
            slot_hours: 1.0,
            degradation: 0.002,
            x_max: None,
        }
    }

    /// Desk-scale instance with 4 or 6 slots and explicit demand.
    pub fn desk(horizon: usize) -> Result<Self> {
        match horizon {
            4 => Ok(Self::case_study(vec![30.0, 18.0, 10.0, 22.0])),
            6 => Ok(Self::case_study(vec![30.0, 24.0, 16.0, 10.0, 14.0, 26.0])),
            h => Err(Error::InvalidParameter(format!("desk instances have 4 or 6 slots, not {h}"))),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.alpha.len()
    }

    pub fn horizon(&self) -> usize {
        self.demand.len()
    }

    pub fn dim(&self) -> usize {
        self.n_agents() * self.horizon()
    }

    pub fn energy_cap(&self, i: usize) -> f64 {
        self.capacity * (self.soc_max - self.soc0[i])
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.gamma.get(i).copied().unwrap_or(0.0)
    }

    pub fn x_max(&self) -> f64 {
        self.x_max.unwrap_or(self.capacity / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidParameter(m));
        let n = self.n_agents();
        if n == 0 {
            return bad("at least one agent (alpha entry) is required".into());
        }
        if self.soc0.len() != n {
            return bad(format!("soc0 has {} entries for {n} agents", self.soc0.len()));
        }
        if !self.gamma.is_empty() && self.gamma.len() != n {
            return bad(format!("gamma has {} entries for {n} agents", self.gamma.len()));
        }
        if self.demand.is_empty() {
            return bad("demand needs at least one slot".into());
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return bad(format!("alpha must be positive, got {a}"));
        }
        if !(self.capacity > 0.0) || !(self.degradation > 0.0) || !(self.slot_hours > 0.0) {
            return bad("capacity, degradation and slot length must be positive".into());
        }
        if !(self.x_max() > 0.0) || !self.x_max().is_finite() {
            return bad(format!("x_max must be positive, got {}", self.x_max()));
        }
        for i in 0..n {
            if !(self.energy_cap(i) > 0.0) {
                return bad(format!("agent {i} needs Γ = Θ(s̄ − s0) > 0, got {}", self.energy_cap(i)));
            }
        }
        if self.demand.iter().chain(&self.gamma).chain(&self.soc0).any(|v| !v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    /// Agent `i`'s cost with a given (possibly false) α and γ.
    pub fn cost(&self, i: usize, alpha: f64, gamma: f64) -> EvaluationFunction {
        EvaluationFunction::EvCost(EvCost {
            agent: i,
            n_agents: self.n_agents(),
            horizon: self.horizon(),
            degradation: self.degradation,
            alpha,
            energy_cap: self.energy_cap(i),
            beta: self.beta,
            demand: self.demand.clone(),
            constant: BASE_COST + gamma,
        })
    }

    pub fn feasible_set(&self) -> Result<FeasibleSet> {
        let n = self.horizon();
        let caps = (0..self.n_agents())
            .map(|i| BlockCap { start: i * n, len: n, cap: self.energy_cap(i) })
            .collect();
        FeasibleSet::new(vec![0.0; self.dim()], vec![self.x_max(); self.dim()], caps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub costs: Vec<EvaluationFunction>,
    pub feasible: FeasibleSet,
}

/// True costs and the common feasible set of an EV instance.
pub fn build_ev_instance(params: &EvParams) -> Result<Instance> {
    params.validate()?;
    let costs = (0..params.n_agents())
        .map(|i| params.cost(i, params.alpha[i], params.gamma(i)))
        .collect();
    Ok(Instance { costs, feasible: params.feasible_set()? })
}

/// `α_i(j) = α_i + ε(i, j)` with `ε` uniform on `[−range, range]`; the
/// diagonal keeps the true value. Draws are made row by row, skipping the
/// diagonal, from a ChaCha8 stream seeded with `seed`.
pub fn tisd_perturbation(alpha_true: &[f64], range: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(range >= 0.0) || !range.is_finite() {
        return Err(Error::InvalidParameter(format!("range must be non-negative, got {range}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = alpha_true.len();
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        alpha_true[i]
                    } else {
                        let u: f64 = rng.random();
                        alpha_true[i] + range * (2.0 * u - 1.0)
                    }
                })
                .collect()
        })
        .collect())
}

/// Random isotropic quadratics `w‖x − c‖²` with `w ∈ [0.5, 2]`,
/// `c ∈ [−2, 2]^dim`, over the box `[−10, 10]^dim`.
pub fn random_quadratic_instance(n_agents: usize, dim: usize, seed: u64) -> Result<Instance> {
    if n_agents == 0 || dim == 0 {
        return Err(Error::InvalidParameter("need at least one agent and one dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs = (0..n_agents)
        .map(|_| {
            let w = rng.random_range(0.5..2.0);
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            QuadraticForm::isotropic(w, c).map(EvaluationFunction::quadratic)
        })
        .collect::<Result<_>>()?;
    Ok(Instance { costs, feasible: FeasibleSet::from_box(vec![-10.0; dim], vec![10.0; dim])? })
}
