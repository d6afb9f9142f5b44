use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// `Σ_{k ∈ block} x_k ≤ cap` over the contiguous coordinates `start..start + len`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockCap {
    pub start: usize,
    pub len: usize,
    pub cap: f64,
}

/// A box with optional non-overlapping per-block budget caps.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeasibleSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
    caps: Vec<BlockCap>,
}

impl FeasibleSet {
    pub fn from_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(lower, upper, Vec::new())
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>, mut caps: Vec<BlockCap>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidParameter(format!(
                "box bounds need equal non-zero length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(Error::InvalidParameter(format!(
                    "coordinate {k} has invalid bounds [{l}, {u}]"
                )));
            }
        }
        caps.sort_by_key(|c| c.start);
        let mut end = 0;
        for c in &caps {
            if c.len == 0 || c.start < end || c.start + c.len > lower.len() {
                return Err(Error::InvalidParameter(format!(
                    "budget cap block {}..{} is empty, overlapping or out of range",
                    c.start,
                    c.start + c.len
                )));
            }
            end = c.start + c.len;
            let floor: f64 = lower[c.start..end].iter().sum();
            if !c.cap.is_finite() || floor > c.cap {
                return Err(Error::InvalidParameter(format!(
                    "budget cap {} on block {}..{end} is below the box floor {floor}",
                    c.cap, c.start
                )));
            }
        }
        Ok(FeasibleSet { lower, upper, caps })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn caps(&self) -> &[BlockCap] {
        &self.caps
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
            && self
                .caps
                .iter()
                .all(|c| x[c.start..c.start + c.len].iter().sum::<f64>() <= c.cap + tol)
    }

    /// Euclidean projection. Coordinates outside capped blocks are clamped;
    /// a capped block is projected exactly onto `{l ≤ y ≤ u, Σ y ≤ cap}`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        self.project_in_place(&mut y)?;
        Ok(y)
    }

    pub fn project_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        // Capped blocks are projected from the raw values: clamping first
        // and then enforcing the cap is not the Euclidean projection.
        for c in &self.caps {
            let r = c.start..c.start + c.len;
            let clamped: f64 = x[r.clone()]
                .iter()
                .zip(self.lower[r.clone()].iter().zip(&self.upper[r.clone()]))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .sum();
            if clamped > c.cap {
                project_capped_block(&mut x[r.clone()], &self.lower[r.clone()], &self.upper[r], c.cap);
            }
        }
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
        Ok(())
    }

    /// Default common initial state: the projection of the origin.
    pub fn project_origin(&self) -> Vec<f64> {
        let zero = alloc::vec![0.0; self.dim()];
        self.project(&zero).expect("dimension matches")
    }
}

/// Projects `x` onto `{l ≤ y ≤ u, Σ y ≤ cap}`
/// when the cap is violated: `y = clamp(x − λ, l, u)` with `Σ y = cap`.
/// `s(λ)` is piecewise linear and non-increasing, so λ is found by walking
/// the sorted breakpoints and solving on the bracketing segment.
fn project_capped_block(x: &mut [f64], lower: &[f64], upper: &[f64], cap: f64) {
    let level = |lambda: f64| -> f64 {
        x.iter()
            .zip(lower.iter().zip(upper))
            .map(|(v, (l, u))| (v - lambda).clamp(*l, *u))
            .sum()
    };
    let mut breaks: Vec<f64> = x
        .iter()
        .zip(lower.iter().zip(upper))
        .flat_map(|(v, (l, u))| [v - u, v - l])
        .filter(|b| *b > 0.0)
        .collect();
    breaks.push(0.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut lo = 0.0;
    let mut s_lo = level(lo);
    let mut lambda = None;
    for &b in &breaks[1..] {
        let s_b = level(b);
        if s_b <= cap {
            // linear on [lo, b]
            let t = if s_lo > s_b { (s_lo - cap) / (s_lo - s_b) } else { 0.0 };
            lambda = Some(lo + t * (b - lo));
            break;
        }
        lo = b;
        s_lo = s_b;
    }
    // every coordinate sits at its lower bound past the last breakpoint
    let lambda = lambda.unwrap_or(lo);
    for (v, (l, u)) in x.iter_mut().zip(lower.iter().zip(upper)) {
        *v = (*v - lambda).clamp(*l, *u);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::distance;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn clamps_to_box() {
        let s = FeasibleSet::from_box(vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert_eq!(s.project(&[2.0, -1.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn feasible_point_unchanged() {
        let s = FeasibleSet::from_box(vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert_eq!(s.project(&[0.25, 0.75]).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn capped_block_projection_matches_grid_oracle() {
        let s = FeasibleSet::new(
            vec![0.0; 2],
            vec![1.0; 2],
            vec![BlockCap { start: 0, len: 2, cap: 1.0 }],
        )
        .unwrap();
        let p = s.project(&[1.0, 1.0]).unwrap();
        // brute force over a 1e-3 grid of the feasible triangle
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=1000 {
            for j in 0..=(1000 - i) {
                let (a, b) = (i as f64 * 1e-3, j as f64 * 1e-3);
                let d = (a - 1.0) * (a - 1.0) + (b - 1.0) * (b - 1.0);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        assert!((p[0] - best.1).abs() < 1e-3 && (p[1] - best.2).abs() < 1e-3);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_sets() {
        assert!(FeasibleSet::from_box(vec![], vec![]).is_err());
        assert!(FeasibleSet::from_box(vec![1.0], vec![0.0]).is_err());
        assert!(FeasibleSet::from_box(vec![0.0], vec![f64::INFINITY]).is_err());
        let cap = BlockCap { start: 0, len: 2, cap: 0.5 };
        assert!(FeasibleSet::new(vec![1.0; 2], vec![2.0; 2], vec![cap]).is_err());
        let cap = BlockCap { start: 1, len: 2, cap: 5.0 };
        assert!(FeasibleSet::new(vec![0.0; 2], vec![2.0; 2], vec![cap]).is_err());
    }

    fn capped() -> FeasibleSet {
        FeasibleSet::new(
            vec![0.0; 6],
            vec![2.0; 6],
            vec![BlockCap { start: 0, len: 3, cap: 3.0 }, BlockCap { start: 3, len: 3, cap: 1.5 }],
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn projection_is_feasible_idempotent_nonexpansive(
            x in proptest::collection::vec(-4.0f64..6.0, 6),
            y in proptest::collection::vec(-4.0f64..6.0, 6),
        ) {
            let s = capped();
            let px = s.project(&x).unwrap();
            let py = s.project(&y).unwrap();
            prop_assert!(s.contains(&px, 1e-12));
            let ppx = s.project(&px).unwrap();
            for (a, b) in px.iter().zip(&ppx) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            prop_assert!(distance(&px, &py) <= distance(&x, &y) + 1e-12);
        }

        #[test]
        fn projection_beats_feasible_samples(
            x in proptest::collection::vec(-4.0f64..6.0, 3),
            z in proptest::collection::vec(0.0f64..2.0, 3),
        ) {
            let s = FeasibleSet::new(vec![0.0; 3], vec![2.0; 3],
                                     vec![BlockCap { start: 0, len: 3, cap: 2.5 }]).unwrap();
            let p = s.project(&x).unwrap();
            if s.contains(&z, 0.0) {
                prop_assert!(distance(&p, &x) <= distance(&z, &x) + 1e-12);
            }
        }
    }
}
