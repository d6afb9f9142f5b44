use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{AgentStrategy, StrategyProfile};
use crate::{Error, Result};

/// Upper bound on the number of profiles `brute_force_nash` will enumerate.
pub const MAX_PROFILES: u128 = 1_000_000;

/// A finite game: one strategy list per agent and a payoff tensor filled by
/// simulation. Profiles are numbered in mixed radix with agent 0 varying
/// slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGame {
    strategies: Vec<Vec<AgentStrategy>>,
    labels: Vec<Vec<String>>,
    truthful: Vec<Option<usize>>,
    payoffs: Vec<Option<Vec<f64>>>,
}

impl GridGame {
    /// `grids[i]` lists `(label, strategy)` pairs for agent `i`; `truthful[i]`
    /// marks the truthful entry, which wins ties.
    pub fn new(grids: Vec<Vec<(String, AgentStrategy)>>, truthful: Vec<Option<usize>>) -> Result<Self> {
        if grids.is_empty() || truthful.len() != grids.len() {
            return Err(Error::InvalidParameter("one grid and truthful marker per agent".into()));
        }
        let mut count: u128 = 1;
        for (i, g) in grids.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::EmptyGrid(i));
            }
            if truthful[i].is_some_and(|t| t >= g.len()) {
                return Err(Error::InvalidParameter(alloc::format!("truthful index out of range for agent {i}")));
            }
            count = count.saturating_mul(g.len() as u128);
        }
        if count > MAX_PROFILES {
            return Err(Error::GridTooLarge { profiles: count, limit: MAX_PROFILES });
        }
        let (labels, strategies) = grids.into_iter().map(|g| g.into_iter().unzip()).unzip();
        Ok(GridGame { strategies, labels, truthful, payoffs: vec![None; count as usize] })
    }

    pub fn n_agents(&self) -> usize {
        self.strategies.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.strategies.iter().map(Vec::len).collect()
    }

    pub fn label(&self, agent: usize, k: usize) -> &str {
        &self.labels[agent][k]
    }

    pub fn truthful(&self, agent: usize) -> Option<usize> {
        self.truthful[agent]
    }

    pub fn profile_count(&self) -> usize {
        self.payoffs.len()
    }

    pub fn cell(&self, indices: &[usize]) -> usize {
        indices.iter().zip(&self.strategies).fold(0, |acc, (k, g)| acc * g.len() + k)
    }

    pub fn indices(&self, mut cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents()];
        for (i, g) in self.strategies.iter().enumerate().rev() {
            out[i] = cell % g.len();
            cell /= g.len();
        }
        out
    }

    pub fn profile(&self, cell: usize) -> Result<StrategyProfile> {
        let idx = self.indices(cell);
        StrategyProfile::new(idx.iter().enumerate().map(|(i, &k)| self.strategies[i][k].clone()).collect())
    }

    pub fn set_payoffs(&mut self, cell: usize, payoffs: Vec<f64>) -> Result<()> {
        if payoffs.len() != self.n_agents() || payoffs.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("cell {cell} needs one finite payoff per agent")));
        }
        self.payoffs[cell] = Some(payoffs);
        Ok(())
    }

    /// Fills every cell serially.
    pub fn fill<F>(&mut self, mut eval: F) -> Result<()>
    where
        F: FnMut(usize, &StrategyProfile) -> Result<Vec<f64>>,
    {
        for cell in 0..self.profile_count() {
            let p = self.profile(cell)?;
            let u = eval(cell, &p)?;
            self.set_payoffs(cell, u)?;
        }
        Ok(())
    }

    pub fn payoffs(&self, cell: usize) -> Result<&[f64]> {
        self.payoffs.get(cell).and_then(|p| p.as_deref()).ok_or(Error::UnfilledCell(cell))
    }

    fn payoff(&self, indices: &[usize], agent: usize) -> Result<f64> {
        Ok(self.payoffs(self.cell(indices))?[agent])
    }

    /// Payoff tensor rows `(indices, agent, payoff)` in cell order.
    pub fn tensor_rows(&self) -> Result<Vec<(Vec<usize>, usize, f64)>> {
        let mut rows = Vec::with_capacity(self.profile_count() * self.n_agents());
        for cell in 0..self.profile_count() {
            let idx = self.indices(cell);
            for (i, u) in self.payoffs(cell)?.iter().enumerate() {
                rows.push((idx.clone(), i, *u));
            }
        }
        Ok(rows)
    }
}

/// Best grid strategy of `agent` with the others fixed at `profile`. Payoffs
/// within `tol` of the maximum tie; ties go to the truthful entry, then to the
/// lowest index.
pub fn best_response(grid: &GridGame, agent: usize, profile: &[usize], tol: f64) -> Result<(usize, f64)> {
    let n = grid.sizes()[agent];
    if n == 0 {
        return Err(Error::EmptyGrid(agent));
    }
    let mut idx = profile.to_vec();
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        idx[agent] = k;
        values.push(grid.payoff(&idx, agent)?);
    }
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pick = grid
        .truthful(agent)
        .filter(|&t| values[t] >= best - tol)
        .unwrap_or_else(|| values.iter().position(|v| *v >= best - tol).expect("non-empty"));
    Ok((pick, values[pick]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DseScope {
    /// Deviations from the candidate profile only.
    Unilateral,
    /// The candidate strategy of each agent against every profile of the others.
    AllOpponents,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DseVerdict {
    pub passed: bool,
    /// Largest `u_i(deviation) − u_i(candidate)` found (0 if none is positive).
    pub max_gain: f64,
    /// `max_gain − eps`; positive when the check fails.
    pub worst_margin: f64,
    /// `(agent, opponents' profile, deviation index)` attaining `max_gain`.
    pub worst: Option<(usize, Vec<usize>, usize)>,
}

/// Checks `u_i(candidate) + eps ≥ u_i(deviation)` for every grid deviation.
pub fn epsilon_dse_check(grid: &GridGame, candidate: &[usize], eps: f64, scope: DseScope) -> Result<DseVerdict> {
    let sizes = grid.sizes();
    let mut max_gain = 0.0f64;
    let mut worst = None;
    for i in 0..grid.n_agents() {
        let bases: Vec<Vec<usize>> = match scope {
            DseScope::Unilateral => vec![candidate.to_vec()],
            DseScope::AllOpponents => (0..grid.profile_count())
                .map(|c| grid.indices(c))
                .filter(|idx| idx[i] == candidate[i])
                .collect(),
        };
        for base in bases {
            let own = grid.payoff(&base, i)?;
            let mut idx = base.clone();
            for k in 0..sizes[i] {
                idx[i] = k;
                let gain = grid.payoff(&idx, i)? - own;
                if gain > max_gain {
                    max_gain = gain;
                    worst = Some((i, base.clone(), k));
                }
            }
        }
    }
    Ok(DseVerdict { passed: max_gain <= eps, max_gain, worst_margin: max_gain - eps, worst })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashOptions {
    /// Payoff differences within `tol` count as ties.
    pub tol: f64,
    /// Break own-payoff ties by preferring lower total payoff of the others.
    pub malicious_tiebreak: bool,
    /// Remove weakly dominated strategies (one simultaneous round) first.
    pub eliminate_weakly_dominated: bool,
}

impl Default for NashOptions {
    fn default() -> Self {
        NashOptions { tol: 1e-9, malicious_tiebreak: false, eliminate_weakly_dominated: false }
    }
}

impl NashOptions {
    /// Agents that value their own payoff first and harm to others second,
    /// with weakly dominated strategies removed.
    pub fn malicious() -> Self {
        NashOptions { tol: 1e-9, malicious_tiebreak: true, eliminate_weakly_dominated: true }
    }
}

/// `Some(Ordering)` comparing outcome `a` to `b` from agent `i`'s viewpoint.
fn prefer(a: &[f64], b: &[f64], i: usize, opts: &NashOptions) -> core::cmp::Ordering {
    use core::cmp::Ordering::*;
    let d = a[i] - b[i];
    if d > opts.tol {
        return Greater;
    }
    if d < -opts.tol {
        return Less;
    }
    if opts.malicious_tiebreak {
        let others = |u: &[f64]| u.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum::<f64>();
        let e = others(b) - others(a);
        let scale = opts.tol * (1.0 + others(a).abs().max(others(b).abs()));
        if e > scale {
            return Greater;
        }
        if e < -scale {
            return Less;
        }
    }
    Equal
}

/// All pure Nash equilibria of the (optionally reduced) grid, as index vectors.
pub fn brute_force_nash(grid: &GridGame, opts: NashOptions) -> Result<Vec<Vec<usize>>> {
    let n = grid.n_agents();
    for cell in 0..grid.profile_count() {
        grid.payoffs(cell)?;
    }
    let all: Vec<Vec<usize>> = grid.sizes().iter().map(|&s| (0..s).collect()).collect();
    let alive = if opts.eliminate_weakly_dominated { eliminate(grid, &all, &opts)? } else { all };

    let mut out = Vec::new();
    for cell in 0..grid.profile_count() {
        let idx = grid.indices(cell);
        if (0..n).any(|i| !alive[i].contains(&idx[i])) {
            continue;
        }
        let here = grid.payoffs(cell)?;
        let mut stable = true;
        'agents: for i in 0..n {
            let mut dev = idx.clone();
            for &k in &alive[i] {
                dev[i] = k;
                if prefer(grid.payoffs(grid.cell(&dev))?, here, i, &opts) == core::cmp::Ordering::Greater {
                    stable = false;
                    break 'agents;
                }
            }
        }
        if stable {
            out.push(idx);
        }
    }
    Ok(out)
}

/// One simultaneous round: for each agent drop every strategy that some other
/// strategy weakly dominates against all surviving opponent profiles.
fn eliminate(grid: &GridGame, alive: &[Vec<usize>], opts: &NashOptions) -> Result<Vec<Vec<usize>>> {
    let n = grid.n_agents();
    let opponents = |i: usize| -> Vec<Vec<usize>> {
        (0..grid.profile_count())
            .map(|c| grid.indices(c))
            .filter(|idx| idx[i] == 0 && (0..n).all(|j| j == i || alive[j].contains(&idx[j])))
            .collect()
    };
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let opp = opponents(i);
        let dominated = |s: usize, t: usize| -> Result<bool> {
            let mut strict = false;
            for base in &opp {
                let (mut a, mut b) = (base.clone(), base.clone());
                a[i] = t;
                b[i] = s;
                match prefer(grid.payoffs(grid.cell(&a))?, grid.payoffs(grid.cell(&b))?, i, opts) {
                    core::cmp::Ordering::Less => return Ok(false),
                    core::cmp::Ordering::Greater => strict = true,
                    core::cmp::Ordering::Equal => {}
                }
            }
            Ok(strict)
        };
        let mut keep = Vec::new();
        for &s in &alive[i] {
            let mut beaten = false;
            for &t in &alive[i] {
                if t != s && dominated(s, t)? {
                    beaten = true;
                    break;
                }
            }
            if !beaten {
                keep.push(s);
            }
        }
        next.push(keep);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{EvaluationFunction, QuadraticForm};
    use alloc::string::ToString;

    fn parabola(c: f64) -> EvaluationFunction {
        EvaluationFunction::quadratic(QuadraticForm::scalar(1.0, c).unwrap())
    }

    fn labelled(n: usize) -> Vec<(String, AgentStrategy)> {
        (0..n).map(|k| (k.to_string(), AgentStrategy::Tisi(parabola(k as f64)))).collect()
    }

    /// Two-agent game from a payoff table `u[a][b] = (u_0, u_1)`.
    fn table(u: &[&[(f64, f64)]], truthful: [Option<usize>; 2]) -> GridGame {
        let mut g = GridGame::new(vec![labelled(u.len()), labelled(u[0].len())], truthful.to_vec()).unwrap();
        for (a, row) in u.iter().enumerate() {
            for (b, &(x, y)) in row.iter().enumerate() {
                let c = g.cell(&[a, b]);
                g.set_payoffs(c, vec![x, y]).unwrap();
            }
        }
        g
    }

    #[test]
    fn indexing_round_trips() {
        let g = GridGame::new(vec![labelled(2), labelled(3), labelled(4)], vec![None; 3]).unwrap();
        assert_eq!(g.profile_count(), 24);
        for c in 0..24 {
            assert_eq!(g.cell(&g.indices(c)), c);
        }
        assert_eq!(g.indices(5), [0, 1, 1]);
        assert!(matches!(g.payoffs(0), Err(Error::UnfilledCell(0))));
        assert!(matches!(GridGame::new(vec![labelled(0)], vec![None]), Err(Error::EmptyGrid(0))));
        assert!(matches!(
            GridGame::new(vec![labelled(1000), labelled(1000), labelled(2)], vec![None; 3]),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn best_response_ties_go_to_truth_then_lowest() {
        let g = table(&[&[(1.0, 0.0), (0.0, 0.0)], &[(3.0, 0.0), (0.0, 0.0)], &[(3.0, 0.0), (0.0, 0.0)]], [Some(2), None]);
        assert_eq!(best_response(&g, 0, &[0, 0], 1e-9).unwrap(), (2, 3.0));
        let h = table(&[&[(1.0, 0.0)], &[(3.0, 0.0)], &[(3.0, 0.0)]], [None, None]);
        assert_eq!(best_response(&h, 0, &[0, 0], 1e-9).unwrap().0, 1);
        let single = table(&[&[(5.0, 1.0)]], [None, None]);
        assert_eq!(best_response(&single, 1, &[0, 0], 0.0).unwrap(), (0, 1.0));
    }

    #[test]
    fn dse_check() {
        // agent 0: strategy 1 strictly better than 0 against everything
        let g = table(&[&[(0.0, 1.0), (0.0, 1.0)], &[(2.0, 1.0), (2.0, 1.0)]], [Some(0), Some(0)]);
        let v = epsilon_dse_check(&g, &[0, 0], 1.0, DseScope::Unilateral).unwrap();
        assert!(!v.passed && (v.worst_margin - 1.0).abs() < 1e-12);
        assert_eq!(v.worst, Some((0, vec![0, 0], 1)));
        assert!(epsilon_dse_check(&g, &[0, 0], f64::INFINITY, DseScope::AllOpponents).unwrap().passed);
        assert!(epsilon_dse_check(&g, &[1, 0], 0.0, DseScope::AllOpponents).unwrap().passed);
    }

    #[test]
    fn prisoners_dilemma() {
        let g = table(&[&[(3.0, 3.0), (0.0, 5.0)], &[(5.0, 0.0), (1.0, 1.0)]], [None, None]);
        assert_eq!(brute_force_nash(&g, NashOptions::default()).unwrap(), vec![vec![1, 1]]);
        assert_eq!(brute_force_nash(&g, NashOptions::malicious()).unwrap(), vec![vec![1, 1]]);
    }

    #[test]
    fn malicious_tiebreak_and_elimination() {
        // own payoffs tie everywhere for agent 1, strategy 1 hurts agent 0
        let g = table(&[&[(2.0, 0.0), (1.0, 0.0)], &[(0.0, 0.0), (-1.0, 0.0)]], [Some(0), Some(0)]);
        assert_eq!(brute_force_nash(&g, NashOptions::default()).unwrap(), vec![vec![0, 0], vec![0, 1]]);
        let m = NashOptions { malicious_tiebreak: true, ..NashOptions::default() };
        assert_eq!(brute_force_nash(&g, m).unwrap(), vec![vec![0, 1]]);
        assert_eq!(brute_force_nash(&g, NashOptions::malicious()).unwrap(), vec![vec![0, 1]]);
    }

    #[test]
    fn one_agent_game() {
        let mut g = GridGame::new(vec![labelled(3)], vec![None]).unwrap();
        for (c, u) in [4.0, 7.0, 7.0].into_iter().enumerate() {
            g.set_payoffs(c, vec![u]).unwrap();
        }
        assert_eq!(brute_force_nash(&g, NashOptions::default()).unwrap(), vec![vec![1], vec![2]]);
    }
}
