use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::feasible::FeasibleSet;
use super::linalg::{dot, mat_vec, norm, symmetric_eigenvalues};
use crate::{Error, Result};

/// `½ xᵀQx + bᵀx + c` with `Q ⪰ μI`, `μ > 0`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "QuadraticParts", into = "QuadraticParts"))]
pub struct QuadraticForm {
    dim: usize,
    q: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    mu: f64,
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticParts {
    q: Vec<f64>,
    b: Vec<f64>,
    #[serde(default)]
    c: f64,
}

#[cfg(feature = "serde")]
impl TryFrom<QuadraticParts> for QuadraticForm {
    type Error = Error;

    fn try_from(p: QuadraticParts) -> Result<Self> {
        QuadraticForm::new(p.q, p.b, p.c)
    }
}

#[cfg(feature = "serde")]
impl From<QuadraticForm> for QuadraticParts {
    fn from(f: QuadraticForm) -> Self {
        QuadraticParts { q: f.q, b: f.b, c: f.c }
    }
}

impl QuadraticForm {
    /// Builds the form from a row-major symmetric `q`. The strong convexity
    /// modulus is the smallest eigenvalue of `q` and must be positive.
    pub fn new(q: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let dim = b.len();
        if dim == 0 || q.len() != dim * dim {
            return Err(Error::InvalidParameter(format!(
                "quadratic form needs a {dim}x{dim} matrix, got {} entries",
                q.len()
            )));
        }
        if q.iter().chain(&b).any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::InvalidParameter("non-finite quadratic coefficient".into()));
        }
        for i in 0..dim {
            for j in i + 1..dim {
                let (a, t) = (q[i * dim + j], q[j * dim + i]);
                if (a - t).abs() > 1e-12 * (1.0 + a.abs().max(t.abs())) {
                    return Err(Error::InvalidParameter("quadratic matrix is not symmetric".into()));
                }
            }
        }
        let mu = symmetric_eigenvalues(&q, dim).into_iter().fold(f64::INFINITY, f64::min);
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "quadratic form is not strongly convex (smallest eigenvalue {mu:e})"
            )));
        }
        Ok(QuadraticForm { dim, q, b, c, mu })
    }

    /// `weight · (x − center)²` on the real line.
    pub fn scalar(weight: f64, center: f64) -> Result<Self> {
        Self::isotropic(weight, vec![center])
    }

    /// `weight · ‖x − center‖²`.
    pub fn isotropic(weight: f64, center: Vec<f64>) -> Result<Self> {
        let n = center.len();
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = 2.0 * weight;
        }
        let b = center.iter().map(|c| -2.0 * weight * c).collect();
        let c = weight * dot(&center, &center);
        Self::new(q, b, c)
    }

    /// Convex (possibly singular) form; `mu` is taken as given.
    pub(crate) fn from_parts(q: Vec<f64>, b: Vec<f64>, c: f64, mu: f64) -> Self {
        QuadraticForm { dim: b.len(), q, b, c, mu }
    }

    /// Sum of forms of equal dimension.
    pub fn sum<'a>(forms: impl IntoIterator<Item = &'a QuadraticForm>) -> Option<QuadraticForm> {
        let mut it = forms.into_iter();
        let first = it.next()?.clone();
        let mut acc = first;
        for f in it {
            if f.dim != acc.dim {
                return None;
            }
            for (a, v) in acc.q.iter_mut().zip(&f.q) {
                *a += v;
            }
            for (a, v) in acc.b.iter_mut().zip(&f.b) {
                *a += v;
            }
            acc.c += f.c;
            acc.mu += f.mu;
        }
        Some(acc)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.q
    }

    pub fn linear(&self) -> &[f64] {
        &self.b
    }

    pub fn constant(&self) -> f64 {
        self.c
    }

    pub fn strong_convexity(&self) -> f64 {
        self.mu
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let qx = mat_vec(&self.q, self.dim, self.dim, x);
        0.5 * dot(x, &qx) + dot(&self.b, x) + self.c
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&self.q[r * n..(r + 1) * n], x) + self.b[r];
        }
    }

    /// Upper bound on `‖Qx + b‖` over the box of `set`.
    pub fn lipschitz(&self, set: &FeasibleSet) -> f64 {
        let n = self.dim;
        let reach: Vec<f64> = (0..n)
            .map(|c| set.lower()[c].abs().max(set.upper()[c].abs()))
            .collect();
        let row_bounds: Vec<f64> = (0..n)
            .map(|r| {
                self.b[r].abs()
                    + (0..n).map(|c| self.q[r * n + c].abs() * reach[c]).sum::<f64>()
            })
            .collect();
        norm(&row_bounds)
    }
}

/// Per-agent EV charging cost over the joint schedule `x = (x_1, …, x_N)`,
/// each block holding one slot value per horizon step:
///
/// `Σ_t d·x_it² + α(Σ_t x_it − Γ)² + (β/N) Σ_t (D_t + Σ_j x_jt)² + constant`
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvCost {
    pub agent: usize,
    pub n_agents: usize,
    pub horizon: usize,
    pub degradation: f64,
    pub alpha: f64,
    pub energy_cap: f64,
    pub beta: f64,
    pub demand: Vec<f64>,
    pub constant: f64,
}

impl EvCost {
    pub fn dim(&self) -> usize {
        self.n_agents * self.horizon
    }

    /// Strong convexity modulus along the agent's own charging block.
    /// Along other agents' blocks the cost is only convex.
    pub fn block_modulus(&self) -> f64 {
        2.0 * self.degradation + 2.0 * self.beta / self.n_agents as f64
    }

    fn slot_totals(&self, x: &[f64]) -> Vec<f64> {
        let n = self.horizon;
        (0..n)
            .map(|t| {
                let mut s = self.demand[t];
                for j in 0..self.n_agents {
                    s += x[j * n + t];
                }
                s
            })
            .collect()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.horizon;
        let own = &x[self.agent * n..(self.agent + 1) * n];
        let degradation: f64 = own.iter().map(|v| self.degradation * v * v).sum();
        let deficit = own.iter().sum::<f64>() - self.energy_cap;
        let coupling: f64 = self.slot_totals(x).iter().map(|s| s * s).sum();
        degradation
            + self.alpha * deficit * deficit
            + self.beta / self.n_agents as f64 * coupling
            + self.constant
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.horizon;
        let scale = 2.0 * self.beta / self.n_agents as f64;
        let totals = self.slot_totals(x);
        for j in 0..self.n_agents {
            for t in 0..n {
                out[j * n + t] = scale * totals[t];
            }
        }
        let own = self.agent * n..(self.agent + 1) * n;
        let deficit = x[own.clone()].iter().sum::<f64>() - self.energy_cap;
        for k in own {
            out[k] += 2.0 * self.degradation * x[k] + 2.0 * self.alpha * deficit;
        }
    }

    /// Dense quadratic representation (convex, singular across blocks).
    pub fn to_quadratic(&self) -> QuadraticForm {
        let n = self.horizon;
        let dim = self.dim();
        let scale = 2.0 * self.beta / self.n_agents as f64;
        let mut q = vec![0.0; dim * dim];
        let mut b = vec![0.0; dim];
        for j in 0..self.n_agents {
            for k in 0..self.n_agents {
                for t in 0..n {
                    q[(j * n + t) * dim + k * n + t] += scale;
                }
            }
            for t in 0..n {
                b[j * n + t] += scale * self.demand[t];
            }
        }
        let base = self.agent * n;
        for s in 0..n {
            for t in 0..n {
                q[(base + s) * dim + base + t] += 2.0 * self.alpha;
            }
            q[(base + s) * dim + base + s] += 2.0 * self.degradation;
            b[base + s] -= 2.0 * self.alpha * self.energy_cap;
        }
        let demand_sq: f64 = self.demand.iter().map(|d| d * d).sum();
        let c = self.alpha * self.energy_cap * self.energy_cap
            + self.beta / self.n_agents as f64 * demand_sq
            + self.constant;
        QuadraticForm::from_parts(q, b, c, 0.0)
    }
}

/// An element of the admissible evaluation space, including the
/// distinguished non-participation element.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum EvaluationFunction {
    Quadratic(QuadraticForm),
    EvCost(EvCost),
    Shifted { base: Box<EvaluationFunction>, shift: f64 },
    Empty,
}

impl EvaluationFunction {
    pub fn quadratic(form: QuadraticForm) -> Self {
        EvaluationFunction::Quadratic(form)
    }

    /// `self + shift`. Shifting the empty element keeps it empty.
    pub fn shifted(self, shift: f64) -> Self {
        match self {
            EvaluationFunction::Empty => EvaluationFunction::Empty,
            base => EvaluationFunction::Shifted { base: Box::new(base), shift },
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, EvaluationFunction::Empty)
    }

    pub fn dimension(&self) -> Option<usize> {
        match self {
            EvaluationFunction::Quadratic(q) => Some(q.dim()),
            EvaluationFunction::EvCost(e) => Some(e.dim()),
            EvaluationFunction::Shifted { base, .. } => base.dimension(),
            EvaluationFunction::Empty => None,
        }
    }

    /// Total additive shift applied on top of the underlying family member.
    pub fn total_shift(&self) -> f64 {
        match self {
            EvaluationFunction::Shifted { base, shift } => base.total_shift() + shift,
            _ => 0.0,
        }
    }

    /// The family member with every shift wrapper removed.
    pub fn unshifted(&self) -> &EvaluationFunction {
        match self {
            EvaluationFunction::Shifted { base, .. } => base.unshifted(),
            other => other,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        match self.dimension() {
            None => Err(Error::EmptyEvaluation),
            Some(n) if n != x.len() => Err(Error::Dimension { expected: n, got: x.len() }),
            Some(_) => Ok(()),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.value_unchecked(x))
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            EvaluationFunction::Quadratic(q) => q.value(x),
            EvaluationFunction::EvCost(e) => e.value(x),
            EvaluationFunction::Shifted { base, shift } => base.value_unchecked(x) + shift,
            EvaluationFunction::Empty => unreachable!("checked by check_dim"),
        }
    }

    pub fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.subgradient_into(x, &mut out)?;
        Ok(out)
    }

    pub fn subgradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        if out.len() != x.len() {
            return Err(Error::Dimension { expected: x.len(), got: out.len() });
        }
        match self.unshifted() {
            EvaluationFunction::Quadratic(q) => q.gradient_into(x, out),
            EvaluationFunction::EvCost(e) => e.gradient_into(x, out),
            EvaluationFunction::Shifted { .. } | EvaluationFunction::Empty => unreachable!(),
        }
        Ok(())
    }

    /// Global strong convexity modulus. EV costs are strongly convex only
    /// along their own block and report 0 here.
    pub fn strong_convexity(&self) -> f64 {
        match self.unshifted() {
            EvaluationFunction::Quadratic(q) => q.strong_convexity(),
            _ => 0.0,
        }
    }

    /// Bound on the subgradient norm over `set`.
    pub fn lipschitz(&self, set: &FeasibleSet) -> f64 {
        match self.as_quadratic() {
            Some(q) => q.lipschitz(set),
            None => 0.0,
        }
    }

    /// Dense quadratic representation including shifts; `None` for the empty element.
    pub fn as_quadratic(&self) -> Option<QuadraticForm> {
        match self {
            EvaluationFunction::Quadratic(q) => Some(q.clone()),
            EvaluationFunction::EvCost(e) => Some(e.to_quadratic()),
            EvaluationFunction::Shifted { base, shift } => {
                let mut q = base.as_quadratic()?;
                q.c += shift;
                Some(q)
            }
            EvaluationFunction::Empty => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn parabola() -> EvaluationFunction {
        EvaluationFunction::quadratic(QuadraticForm::scalar(1.0, 1.0).unwrap())
    }

    fn ev_agent0() -> EvCost {
        // agent 1 of the EV example: alpha 10, s0 0.1, capacity 30, soc max 0.9
        EvCost {
            agent: 0,
            n_agents: 4,
            horizon: 4,
            degradation: 0.002,
            alpha: 10.0,
            energy_cap: 30.0 * (0.9 - 0.1),
            beta: 0.005,
            demand: vec![0.0; 4],
            constant: 200.0,
        }
    }

    #[test]
    fn evaluate_parabola_minimum() {
        assert_eq!(parabola().evaluate(&[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn shifted_value_adds_constant() {
        assert_eq!(parabola().shifted(-3.0).evaluate(&[1.0]).unwrap(), -3.0);
    }

    #[test]
    fn ev_cost_at_origin() {
        let f = EvaluationFunction::EvCost(ev_agent0());
        let v = f.evaluate(&[0.0; 16]).unwrap();
        assert_relative_eq!(v, 5960.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_has_no_value() {
        let e = EvaluationFunction::Empty;
        assert_eq!(e.evaluate(&[0.0]), Err(Error::EmptyEvaluation));
        assert_eq!(e.subgradient(&[0.0]), Err(Error::EmptyEvaluation));
        assert!(e.clone().shifted(1.0).is_empty());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert_eq!(
            parabola().evaluate(&[0.0, 1.0]),
            Err(Error::Dimension { expected: 1, got: 2 })
        );
    }

    #[test]
    fn parabola_gradient() {
        assert_eq!(parabola().subgradient(&[0.0]).unwrap(), vec![-2.0]);
    }

    #[test]
    fn square_gradient_matches_central_difference() {
        let f = EvaluationFunction::quadratic(QuadraticForm::scalar(1.0, 0.0).unwrap());
        let h = 1e-5;
        let fd = (f.evaluate(&[0.5 + h]).unwrap() - f.evaluate(&[0.5 - h]).unwrap()) / (2.0 * h);
        let g = f.subgradient(&[0.5]).unwrap()[0];
        assert!((g - fd).abs() <= 1e-6);
    }

    #[test]
    fn quadratic_rejects_indefinite_and_asymmetric() {
        assert!(QuadraticForm::new(vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0], 0.0).is_err());
        assert!(QuadraticForm::new(vec![1.0, 0.5, 0.0, 1.0], vec![0.0, 0.0], 0.0).is_err());
        assert!(QuadraticForm::new(vec![1.0], vec![0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn quadratic_modulus_is_smallest_eigenvalue() {
        let q = QuadraticForm::new(vec![2.0, 1.0, 1.0, 2.0], vec![0.0, 0.0], 0.0).unwrap();
        assert_relative_eq!(q.strong_convexity(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ev_dense_form_agrees_with_direct_formula() {
        let mut e = ev_agent0();
        e.demand = vec![30.0, 18.0, 10.0, 22.0];
        let f = EvaluationFunction::EvCost(e.clone());
        let q = EvaluationFunction::Quadratic(e.to_quadratic());
        let x: Vec<f64> = (0..16).map(|k| 0.3 * k as f64 - 1.0).collect();
        assert_relative_eq!(f.evaluate(&x).unwrap(), q.evaluate(&x).unwrap(), max_relative = 1e-12);
        let (g1, g2) = (f.subgradient(&x).unwrap(), q.subgradient(&x).unwrap());
        for (a, b) in g1.iter().zip(&g2) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    fn arb_quadratic(dim: usize) -> impl Strategy<Value = EvaluationFunction> {
        (
            proptest::collection::vec(-1.0f64..1.0, dim * dim),
            proptest::collection::vec(-3.0f64..3.0, dim),
            0.1f64..2.0,
            -5.0f64..5.0,
        )
            .prop_map(move |(m, b, mu, c)| {
                // Q = MᵀM + μI
                let mut q = vec![0.0; dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        q[i * dim + j] = (0..dim).map(|k| m[k * dim + i] * m[k * dim + j]).sum();
                    }
                    q[i * dim + i] += mu;
                }
                EvaluationFunction::quadratic(QuadraticForm::new(q, b, c).unwrap())
            })
    }

    proptest! {
        #[test]
        fn strong_convexity_inequality_holds(
            f in arb_quadratic(3),
            shift in -10.0f64..10.0,
            x1 in proptest::collection::vec(-5.0f64..5.0, 3),
            x2 in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            for v in [f.clone(), f.shifted(shift)] {
                let mu = v.strong_convexity();
                let g = v.subgradient(&x1).unwrap();
                let d: Vec<f64> = x2.iter().zip(&x1).map(|(a, b)| a - b).collect();
                let lhs = v.evaluate(&x2).unwrap();
                let rhs = v.evaluate(&x1).unwrap() + dot(&g, &d) + 0.5 * mu * dot(&d, &d);
                prop_assert!(lhs >= rhs - 1e-9 * (1.0 + lhs.abs()));
            }
        }

        #[test]
        fn shift_preserves_gradient(f in arb_quadratic(2), c in -100.0f64..100.0,
                                    x in proptest::collection::vec(-5.0f64..5.0, 2)) {
            let s = f.clone().shifted(c);
            prop_assert_eq!(s.subgradient(&x).unwrap(), f.subgradient(&x).unwrap());
            prop_assert_eq!(s.evaluate(&x).unwrap(), f.evaluate(&x).unwrap() + c);
        }

        #[test]
        fn gradient_matches_finite_differences(f in arb_quadratic(3),
                                               x in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let g = f.subgradient(&x).unwrap();
            let h = 1e-5;
            for k in 0..3 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += h;
                xm[k] -= h;
                let fd = (f.evaluate(&xp).unwrap() - f.evaluate(&xm).unwrap()) / (2.0 * h);
                prop_assert!((g[k] - fd).abs() <= 1e-5 * (1.0 + g[k].abs()));
            }
        }

        #[test]
        fn ev_cost_block_convexity(x1 in proptest::collection::vec(0.0f64..7.5, 16),
                                   x2 in proptest::collection::vec(0.0f64..7.5, 16),
                                   alpha in 1.0f64..12.0) {
            let mut e = ev_agent0();
            e.alpha = alpha;
            e.demand = vec![30.0, 18.0, 10.0, 22.0];
            let mu = e.block_modulus();
            let f = EvaluationFunction::EvCost(e);
            let g = f.subgradient(&x1).unwrap();
            // convex on the whole space
            let d: Vec<f64> = x2.iter().zip(&x1).map(|(a, b)| a - b).collect();
            let lhs = f.evaluate(&x2).unwrap();
            prop_assert!(lhs >= f.evaluate(&x1).unwrap() + dot(&g, &d) - 1e-8 * lhs.abs());
            // strongly convex along the own block
            let mut y = x1.clone();
            y[..4].copy_from_slice(&x2[..4]);
            let dy: Vec<f64> = y.iter().zip(&x1).map(|(a, b)| a - b).collect();
            let lhs = f.evaluate(&y).unwrap();
            let rhs = f.evaluate(&x1).unwrap() + dot(&g, &dy) + 0.5 * mu * dot(&dy, &dy);
            prop_assert!(lhs >= rhs - 1e-8 * lhs.abs());
        }

        #[test]
        fn ev_gradient_matches_finite_differences(x in proptest::collection::vec(0.5f64..7.0, 16),
                                                  agent in 0usize..4) {
            let mut e = ev_agent0();
            e.agent = agent;
            e.demand = vec![30.0, 18.0, 10.0, 22.0];
            let f = EvaluationFunction::EvCost(e);
            let g = f.subgradient(&x).unwrap();
            let h = 1e-4;
            for k in 0..16 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += h;
                xm[k] -= h;
                let fd = (f.evaluate(&xp).unwrap() - f.evaluate(&xm).unwrap()) / (2.0 * h);
                prop_assert!((g[k] - fd).abs() <= 1e-5 * (1.0 + g[k].abs()));
            }
        }
    }

    #[test]
    fn lipschitz_bounds_gradient_on_box() {
        let set = FeasibleSet::from_box(vec![-2.0; 2], vec![2.0; 2]).unwrap();
        let f = EvaluationFunction::quadratic(
            QuadraticForm::new(vec![2.0, 0.5, 0.5, 1.0], vec![1.0, -1.0], 0.0).unwrap(),
        );
        let l = f.lipschitz(&set);
        for &a in &[-2.0, 0.0, 2.0] {
            for &b in &[-2.0, 0.3, 2.0] {
                assert!(norm(&f.subgradient(&[a, b]).unwrap()) <= l + 1e-12);
            }
        }
    }
}
