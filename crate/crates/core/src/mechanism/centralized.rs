//! Trusted centralized VCG, used as a test oracle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::linalg::{backward_subst_transposed, cholesky, distance, forward_subst, symmetric_eigenvalues};
use crate::numerics::{solve_projection_qp, EvaluationFunction, FeasibleSet, HalfSpace, QuadraticForm};
use crate::{Error, Result};

const MAX_PROX_ITERATIONS: usize = 20_000;

/// Minimises `Σ evals` over `set`. Returns the minimiser and the minimum.
///
/// Strongly convex sums are solved exactly: with `Q = LLᵀ` and `y = Lᵀx`
/// the problem is the projection of `−L⁻¹b` onto the transformed feasible
/// polyhedron. Singular sums (EV costs without one agent) go through the
/// proximal point method, each step being such a projection.
pub fn centralized_minimize(evals: &[&EvaluationFunction], set: &FeasibleSet) -> Result<(Vec<f64>, f64)> {
    if evals.iter().any(|v| v.is_empty()) {
        return Err(Error::EmptyEvaluation);
    }
    let forms: Vec<QuadraticForm> = evals
        .iter()
        .map(|v| v.as_quadratic().ok_or_else(|| Error::Oracle("not a quadratic family".into())))
        .collect::<Result<_>>()?;
    let total = QuadraticForm::sum(&forms).ok_or_else(|| Error::Oracle("no functions or mixed dimensions".into()))?;
    let n = total.dim();
    if n != set.dim() {
        return Err(Error::Dimension { expected: set.dim(), got: n });
    }
    let eig = symmetric_eigenvalues(total.matrix(), n);
    let hi = eig.iter().fold(0.0f64, |m, v| m.max(*v));
    let lo = eig.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let halfspaces = halfspaces(set);

    let x = if lo >= 1e-6 * hi.max(1.0) {
        let l = cholesky(total.matrix(), n).ok_or_else(|| Error::Oracle("Cholesky failed".into()))?;
        transformed_projection(&l, n, total.linear(), &halfspaces)?
    } else {
        let rho = 1e-3 * hi.max(1.0);
        let mut shifted = total.matrix().to_vec();
        for i in 0..n {
            shifted[i * n + i] += rho;
        }
        let l = cholesky(&shifted, n).ok_or_else(|| Error::Oracle("Cholesky failed".into()))?;
        let mut x = set.project_origin();
        let mut value = total.value(&x);
        let mut converged = false;
        for _ in 0..MAX_PROX_ITERATIONS {
            let b: Vec<f64> = total.linear().iter().zip(&x).map(|(b, x)| b - rho * x).collect();
            let next = transformed_projection(&l, n, &b, &halfspaces)?;
            let next_value = total.value(&next);
            let moved = distance(&next, &x);
            let dropped = value - next_value;
            x = next;
            value = next_value;
            if moved <= 1e-12 * (1.0 + crate::numerics::linalg::norm(&x)) || dropped.abs() <= 1e-15 * (1.0 + value.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Oracle(format!("proximal point did not converge in {MAX_PROX_ITERATIONS} iterations")));
        }
        x
    };
    let value = evals.iter().map(|v| v.evaluate(&x)).sum::<Result<f64>>()?;
    Ok((x, value))
}

fn halfspaces(set: &FeasibleSet) -> Vec<HalfSpace> {
    let n = set.dim();
    let mut out = Vec::with_capacity(2 * n + set.caps().len());
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        out.push(HalfSpace::new(e.clone(), set.upper()[k]));
        e[k] = -1.0;
        out.push(HalfSpace::new(e, -set.lower()[k]));
    }
    for cap in set.caps() {
        let mut a = vec![0.0; n];
        a[cap.start..cap.start + cap.len].fill(1.0);
        out.push(HalfSpace::new(a, cap.cap));
    }
    out
}

/// argmin `½xᵀLLᵀx + bᵀx` subject to `halfspaces`.
fn transformed_projection(l: &[f64], n: usize, b: &[f64], halfspaces: &[HalfSpace]) -> Result<Vec<f64>> {
    let mut target = b.to_vec();
    forward_subst(l, n, &mut target);
    target.iter_mut().for_each(|v| *v = -*v);
    let transformed: Vec<HalfSpace> = halfspaces
        .iter()
        .map(|h| {
            let mut a = h.normal.clone();
            forward_subst(l, n, &mut a);
            HalfSpace::new(a, h.offset)
        })
        .collect();
    let mut x = solve_projection_qp(&target, &transformed)
        .map_err(|e| Error::Oracle(format!("transformed projection failed: {e}")))?
        .point;
    backward_subst_transposed(l, n, &mut x);
    Ok(x)
}

/// Centralized VCG: the social optimum and Clarke pivot payments
/// `p_i = Σ_{j≠i} v_j(o*) − min Σ_{j≠i} v_j`.
pub fn vcg_payment_centralized(evals: &[EvaluationFunction], set: &FeasibleSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let all: Vec<&EvaluationFunction> = evals.iter().collect();
    let (o_star, _) = centralized_minimize(&all, set)?;
    let mut payments = Vec::with_capacity(evals.len());
    for i in 0..evals.len() {
        let others: Vec<&EvaluationFunction> = all.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        if others.is_empty() {
            payments.push(0.0);
            continue;
        }
        let at_social = others.iter().map(|v| v.evaluate(&o_star)).sum::<Result<f64>>()?;
        let (_, best) = centralized_minimize(&others, set)?;
        payments.push(at_social - best);
    }
    Ok((o_star, payments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{BlockCap, EvCost};

    fn parabola(w: f64, c: f64) -> EvaluationFunction {
        EvaluationFunction::quadratic(QuadraticForm::scalar(w, c).unwrap())
    }

    fn line() -> FeasibleSet {
        FeasibleSet::from_box(vec![-10.0], vec![10.0]).unwrap()
    }

    #[test]
    fn symmetric_pair() {
        let (o, p) = vcg_payment_centralized(&[parabola(1.0, 1.0), parabola(1.0, -1.0)], &line()).unwrap();
        assert!(o[0].abs() < 1e-12);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_agent_pays_nothing() {
        let (o, p) = vcg_payment_centralized(&[parabola(2.0, 3.0)], &line()).unwrap();
        assert!((o[0] - 3.0).abs() < 1e-12);
        assert_eq!(p, vec![0.0]);
    }

    #[test]
    fn identical_agents_pay_nothing() {
        let (o, p) = vcg_payment_centralized(&vec![parabola(1.0, 0.0); 3], &line()).unwrap();
        assert!(o[0].abs() < 1e-12);
        assert!(p.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn respects_bounds() {
        let set = FeasibleSet::from_box(vec![0.0], vec![1.0]).unwrap();
        let (x, v) = centralized_minimize(&[&parabola(1.0, 3.0)], &set).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (v - 4.0).abs() < 1e-10);
    }

    fn ev(agent: usize, alpha: f64, cap: f64) -> EvaluationFunction {
        EvaluationFunction::EvCost(EvCost {
            agent,
            n_agents: 2,
            horizon: 2,
            degradation: 0.002,
            alpha,
            energy_cap: cap,
            beta: 0.005,
            demand: vec![10.0, 2.0],
            constant: 200.0,
        })
    }

    #[test]
    fn singular_sum_matches_grid_search() {
        let set = FeasibleSet::new(
            vec![0.0; 4],
            vec![3.0; 4],
            vec![BlockCap { start: 0, len: 2, cap: 4.0 }, BlockCap { start: 2, len: 2, cap: 5.0 }],
        )
        .unwrap();
        let f = ev(0, 2.0, 4.0);
        // only agent 0's cost: the other block is pushed to zero
        let (x, v) = centralized_minimize(&[&f], &set).unwrap();
        let mut best = f64::INFINITY;
        let steps = 120;
        for i in 0..=steps {
            for j in 0..=steps {
                let p = [3.0 * i as f64 / steps as f64, 3.0 * j as f64 / steps as f64, 0.0, 0.0];
                if p[0] + p[1] <= 4.0 {
                    best = best.min(f.evaluate(&p).unwrap());
                }
            }
        }
        assert!(v <= best + 1e-9, "{v} vs {best}");
        assert!(best - v < 1e-3);
        assert!(set.contains(&x, 1e-9));
        assert!(x[2].abs() < 1e-6 && x[3].abs() < 1e-6);
    }

    #[test]
    fn valley_filling() {
        let set = FeasibleSet::from_box(vec![0.0; 4], vec![20.0; 4]).unwrap();
        let (fa, fb) = (ev(0, 3.0, 6.0), ev(1, 3.0, 6.0));
        let (x, _) = centralized_minimize(&[&fa, &fb], &set).unwrap();
        // more charging in the low-demand slot
        assert!(x[1] + x[3] > x[0] + x[2]);
    }
}
