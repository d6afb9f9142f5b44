use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{axpy, cholesky, cholesky_solve, dot, norm};
use crate::{Error, Result};

/// `normalᵀ x ≤ offset`
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        HalfSpace { normal, offset }
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub point: Vec<f64>,
    /// One multiplier per input constraint, zero when inactive.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

impl QpSolution {
    /// `‖x − target + Σ λ_k a_k‖∞`
    pub fn stationarity_residual(&self, target: &[f64], constraints: &[HalfSpace]) -> f64 {
        let mut r: Vec<f64> = self.point.iter().zip(target).map(|(x, t)| x - t).collect();
        for (c, l) in constraints.iter().zip(&self.multipliers) {
            axpy(*l, &c.normal, &mut r);
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

const ZERO_NORMAL: f64 = 1e-14;
const VIOLATION_TOL: f64 = 1e-11;
const DEPENDENT_TOL: f64 = 1e-12;

/// Euclidean projection of `target` onto `{x : a_kᵀx ≤ b_k ∀k}`.
///
/// Dual active-set method (Goldfarb–Idnani specialised to an identity
/// Hessian): start at the unconstrained minimiser, repeatedly add the most
/// violated constraint and move along the direction that keeps the active
/// set tight, dropping constraints whose multipliers would turn negative.
/// Rows are normalised internally; multipliers are reported for the
/// original rows.
pub fn solve_projection_qp(target: &[f64], constraints: &[HalfSpace]) -> Result<QpSolution> {
    let n = target.len();
    let m = constraints.len();
    let mut rows: Vec<(usize, Vec<f64>, f64, f64)> = Vec::with_capacity(m);
    for (k, c) in constraints.iter().enumerate() {
        if c.normal.len() != n {
            return Err(Error::Dimension { expected: n, got: c.normal.len() });
        }
        let scale = norm(&c.normal);
        if scale <= ZERO_NORMAL {
            if c.offset < -VIOLATION_TOL {
                return Err(Error::QpInfeasible { max_violation: -c.offset });
            }
            continue;
        }
        let a: Vec<f64> = c.normal.iter().map(|v| v / scale).collect();
        rows.push((k, a, c.offset / scale, scale));
    }

    let mut x = target.to_vec();
    let mut active: Vec<usize> = Vec::new(); // indices into `rows`
    let mut u: Vec<f64> = Vec::new();
    let cap = 50 * (rows.len() + n) + 100;
    let mut iterations = 0;

    loop {
        // most violated constraint
        let mut pick = None;
        let mut worst = 0.0;
        for (r, (_, a, b, _)) in rows.iter().enumerate() {
            if active.contains(&r) {
                continue;
            }
            let s = dot(a, &x) - b;
            if s > VIOLATION_TOL * (1.0 + b.abs()) && s > worst {
                worst = s;
                pick = Some(r);
            }
        }
        let Some(p) = pick else { break };
        let mut lambda_p = 0.0;

        loop {
            iterations += 1;
            if iterations > cap {
                return Err(Error::QpIterationLimit { iterations: cap });
            }
            let ap = &rows[p].1;
            let (z, r) = step_direction(&rows, &active, ap, n)?;
            let z_norm_sq = dot(&z, &z);

            // partial step: first active multiplier to hit zero
            let mut partial = f64::INFINITY;
            let mut leaving = None;
            for (idx, (rk, uk)) in r.iter().zip(&u).enumerate() {
                if *rk > 0.0 {
                    let t = uk / rk;
                    if t < partial {
                        partial = t;
                        leaving = Some(idx);
                    }
                }
            }
            let s = dot(ap, &x) - rows[p].2;
            let full = if z_norm_sq > DEPENDENT_TOL * DEPENDENT_TOL { s / z_norm_sq } else { f64::INFINITY };
            let step = partial.min(full);
            if !step.is_finite() {
                return Err(Error::QpInfeasible { max_violation: s });
            }
            if full.is_finite() {
                // z is the descent direction -(a_p - N r)
                axpy(-step, &z, &mut x);
            }
            for (uk, rk) in u.iter_mut().zip(&r) {
                *uk -= step * rk;
            }
            lambda_p += step;

            if full <= partial {
                active.push(p);
                u.push(lambda_p);
                break;
            }
            let l = leaving.expect("partial step has a leaving index");
            active.remove(l);
            u.remove(l);
        }
    }

    let mut multipliers = vec![0.0; m];
    for (r, ur) in active.iter().zip(&u) {
        let (k, _, _, scale) = &rows[*r];
        multipliers[*k] = ur.max(0.0) / scale;
    }
    let max_violation = constraints
        .iter()
        .map(|c| c.violation(&x))
        .fold(f64::NEG_INFINITY, f64::max);
    if max_violation > 1e-8 {
        return Err(Error::QpInfeasible { max_violation });
    }
    Ok(QpSolution { point: x, multipliers, iterations })
}

/// Returns `(a_p − N r, r)` with `r = (NᵀN)⁻¹Nᵀa_p`, `N` the active normals.
fn step_direction(
    rows: &[(usize, Vec<f64>, f64, f64)],
    active: &[usize],
    ap: &[f64],
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = active.len();
    if q == 0 {
        return Ok((ap.to_vec(), Vec::new()));
    }
    let mut gram = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..=i {
            let v = dot(&rows[active[i]].1, &rows[active[j]].1);
            gram[i * q + j] = v;
            gram[j * q + i] = v;
        }
    }
    let mut r: Vec<f64> = active.iter().map(|&k| dot(&rows[k].1, ap)).collect();
    let l = cholesky(&gram, q).ok_or(Error::QpInfeasible { max_violation: f64::NAN })?;
    cholesky_solve(&l, q, &mut r);
    let mut z = ap.to_vec();
    for (k, rk) in active.iter().zip(&r) {
        axpy(-rk, &rows[*k].1, &mut z);
    }
    debug_assert_eq!(z.len(), n);
    Ok((z, r))
}
