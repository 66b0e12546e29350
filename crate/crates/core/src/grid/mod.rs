//! Exact fixed points of the empirical, full-information and true Bellman
//! operators on a uniform grid over a box of dimension one or two.
//!
//! Off-grid evaluation is multilinear interpolation with clamping, a convex
//! combination of node values, so every discretized operator is a
//! `gamma`-contraction in the sup norm.

mod consistency;
pub mod quadrature;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mdp::{
    value_iterate, DiscountedProblem, IterationDiagnostics, QFunction, StateSpace, StateVector, SupDistance,
};
use crate::residual::{EmpiricalKernel, TransitionMean};

pub use consistency::{
    consistency_curve, median, true_fixed_point, ConsistencyConfig, ConsistencyCurve, ConsistencyRow,
};
pub use quadrature::{gauss_hermite, gaussian_rule};

/// Uniform tensor grid spanning a box exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    steps: Vec<f64>,
}

impl Grid {
    pub fn uniform(space: &StateSpace, counts: &[usize]) -> Result<Self> {
        let d = space.dim();
        if d == 0 || d > 2 {
            return Err(Error::invalid(format!(
                "grid solving supports 1 or 2 dimensions, got {d}"
            )));
        }
        if counts.len() != d {
            return Err(Error::DimensionMismatch {
                context: "grid node counts",
                expected: d,
                got: counts.len(),
            });
        }
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::invalid("a grid needs at least 2 nodes per dimension"));
        }
        if counts.iter().product::<usize>() > u32::MAX as usize {
            return Err(Error::invalid("grid too large"));
        }
        let steps = (0..d)
            .map(|k| (space.upper()[k] - space.lower()[k]) / (counts[k] - 1) as f64)
            .collect();
        Ok(Self {
            lower: space.lower().to_vec(),
            upper: space.upper().to_vec(),
            counts: counts.to_vec(),
            steps,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn space(&self) -> StateSpace {
        StateSpace::new(self.lower.clone(), self.upper.clone()).expect("grid box is valid")
    }

    /// Coordinate of node `i` along dimension `k`; endpoints are exact.
    pub fn coord(&self, k: usize, i: usize) -> f64 {
        if i + 1 == self.counts[k] {
            self.upper[k]
        } else {
            self.lower[k] + i as f64 * self.steps[k]
        }
    }

    /// Row-major multi-index of a flat node index.
    fn multi_index(&self, node: usize) -> [usize; 2] {
        if self.dim() == 1 {
            [node, 0]
        } else {
            [node / self.counts[1], node % self.counts[1]]
        }
    }

    pub fn node_state(&self, node: usize) -> StateVector {
        let idx = self.multi_index(node);
        (0..self.dim()).map(|k| self.coord(k, idx[k])).collect()
    }

    pub fn nodes(&self) -> Vec<StateVector> {
        (0..self.num_nodes()).map(|n| self.node_state(n)).collect()
    }

    /// Clamped cell location of `x`: base node index and per-dimension fractions in `[0, 1]`.
    pub fn locate(&self, x: &[f64]) -> (usize, [f64; 2]) {
        let mut frac = [0.0; 2];
        let mut idx = [0usize; 2];
        for k in 0..self.dim() {
            let xk = x[k].clamp(self.lower[k], self.upper[k]);
            let u = (xk - self.lower[k]) / self.steps[k];
            let i = (u.floor().max(0.0) as usize).min(self.counts[k] - 2);
            idx[k] = i;
            frac[k] = (u - i as f64).clamp(0.0, 1.0);
        }
        let base = if self.dim() == 1 {
            idx[0]
        } else {
            idx[0] * self.counts[1] + idx[1]
        };
        (base, frac)
    }

    /// Interpolates the action-`a` column of `values` (layout `node * n_actions + a`).
    #[inline]
    fn interp(&self, values: &[f64], n_actions: usize, base: usize, frac: [f64; 2], a: usize) -> f64 {
        let at = |node: usize| values[node * n_actions + a];
        let t0 = frac[0];
        if self.dim() == 1 {
            (1.0 - t0) * at(base) + t0 * at(base + 1)
        } else {
            let t1 = frac[1];
            let s = self.counts[1];
            (1.0 - t0) * ((1.0 - t1) * at(base) + t1 * at(base + 1))
                + t0 * ((1.0 - t1) * at(base + s) + t1 * at(base + s + 1))
        }
    }

    #[inline]
    fn interp_min(&self, values: &[f64], n_actions: usize, base: usize, frac: [f64; 2]) -> f64 {
        (0..n_actions)
            .map(|a| self.interp(values, n_actions, base, frac, a))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Q-function stored at grid nodes, multilinear in between.
#[derive(Debug, Clone, PartialEq)]
pub struct GridQ {
    grid: Arc<Grid>,
    n_actions: usize,
    values: Vec<f64>,
}

impl GridQ {
    pub fn new(grid: Arc<Grid>, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::EmptySupport);
        }
        let expected = grid.num_nodes() * n_actions;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "GridQ values",
                expected,
                got: values.len(),
            });
        }
        let bad: Vec<f64> = values.iter().copied().filter(|v| !v.is_finite()).take(4).collect();
        if !bad.is_empty() {
            return Err(Error::NumericBlowup(bad));
        }
        Ok(Self {
            grid,
            n_actions,
            values,
        })
    }

    pub fn constant(grid: Arc<Grid>, n_actions: usize, value: f64) -> Result<Self> {
        let n = grid.num_nodes() * n_actions;
        Self::new(grid, n_actions, vec![value; n])
    }

    pub fn from_fn(grid: Arc<Grid>, n_actions: usize, f: impl Fn(&[f64], usize) -> f64) -> Result<Self> {
        let values = (0..grid.num_nodes())
            .flat_map(|node| {
                let s = grid.node_state(node);
                (0..n_actions).map(|a| f(&s, a)).collect::<Vec<_>>()
            })
            .collect();
        Self::new(grid, n_actions, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, node: usize, a: usize) -> f64 {
        self.values[node * self.n_actions + a]
    }

    /// `V(node) = min_a Q(node, a)` for every node.
    pub fn node_values(&self) -> Vec<f64> {
        self.values
            .chunks(self.n_actions)
            .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// `max_node |V_self(node) - V_other(node)|`.
    pub fn value_sup_distance(&self, other: &GridQ) -> f64 {
        self.node_values()
            .iter()
            .zip(other.node_values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

impl QFunction for GridQ {
    fn num_actions(&self) -> usize {
        self.n_actions
    }

    fn eval(&self, s: &[f64], a: usize) -> f64 {
        let (base, frac) = self.grid.locate(s);
        self.grid.interp(&self.values, self.n_actions, base, frac, a)
    }
}

impl SupDistance for GridQ {
    fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Explicit weighted successor list for `(s, a)`.
pub type ScenarioFn = Arc<dyn Fn(&[f64], usize) -> Vec<(StateVector, f64)> + Send + Sync>;

/// Where the successor distribution of the operator comes from.
#[derive(Clone)]
pub enum ScenarioSource {
    /// Uniform atoms of an empirical (or full-information) kernel.
    Kernel(EmpiricalKernel),
    /// `f(s, a) + eps` with `eps ~ N(0, diag(std^2))`, integrated by Gauss-Hermite.
    Quadrature {
        mean: Arc<dyn TransitionMean>,
        noise_std: Vec<f64>,
        nodes: usize,
    },
    Explicit(ScenarioFn),
}

impl ScenarioSource {
    /// True-operator source of an environment with known `f*` and Gaussian noise.
    pub fn true_operator(env: Arc<dyn Environment>, nodes: usize) -> Result<Self> {
        let noise = env
            .gaussian_noise()
            .ok_or_else(|| Error::invalid(format!("environment {} has no Gaussian noise law", env.name())))?;
        let probe = vec![0.0; env.space().dim()];
        if env.true_mean(&probe, 0).is_none() {
            return Err(Error::invalid(format!(
                "environment {} has no closed-form f*",
                env.name()
            )));
        }
        Ok(Self::Quadrature {
            mean: Arc::new(crate::env::TrueDynamics(env)),
            noise_std: noise.std,
            nodes,
        })
    }

    fn scenarios(&self, space: &StateSpace, s: &[f64], a: usize) -> Result<(Vec<StateVector>, Option<Vec<f64>>)> {
        match self {
            Self::Kernel(k) => Ok((k.support(s, a), None)),
            Self::Quadrature { mean, noise_std, nodes } => {
                let center = mean.predict(s, a);
                if noise_std.len() != center.len() {
                    return Err(Error::DimensionMismatch {
                        context: "quadrature noise std",
                        expected: center.len(),
                        got: noise_std.len(),
                    });
                }
                let mut states = vec![center];
                let mut weights = vec![1.0];
                for (k, &sd) in noise_std.iter().enumerate() {
                    if sd == 0.0 {
                        continue;
                    }
                    let (off, w) = gaussian_rule(*nodes, sd)?;
                    let mut ns = Vec::with_capacity(states.len() * off.len());
                    let mut nw = Vec::with_capacity(states.len() * off.len());
                    for (x, wx) in states.iter().zip(&weights) {
                        for (o, wo) in off.iter().zip(&w) {
                            let mut y = x.clone();
                            y[k] += o;
                            ns.push(y);
                            nw.push(wx * wo);
                        }
                    }
                    states = ns;
                    weights = nw;
                }
                for x in &mut states {
                    space.project_in_place(x);
                }
                Ok((states, Some(weights)))
            }
            Self::Explicit(f) => {
                let (states, weights): (Vec<_>, Vec<_>) = f(s, a).into_iter().unzip();
                let total: f64 = weights.iter().sum();
                if states.is_empty() || !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
                    return Err(Error::EmptySupport);
                }
                Ok((states, Some(weights.iter().map(|w| w / total).collect())))
            }
        }
    }
}

/// Successor atoms of every `(node, a)` cell, precomputed as interpolation stencils.
pub struct ScenarioTable {
    grid: Arc<Grid>,
    n_actions: usize,
    costs: Vec<f64>,
    offsets: Vec<usize>,
    bases: Vec<u32>,
    fracs: Vec<[f64; 2]>,
    /// Per-atom probabilities; empty means uniform within each cell.
    weights: Vec<f64>,
}

impl ScenarioTable {
    pub fn build(problem: &DiscountedProblem, source: &ScenarioSource, grid: Arc<Grid>) -> Result<Self> {
        if problem.space.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                context: "grid vs problem dimension",
                expected: problem.space.dim(),
                got: grid.dim(),
            });
        }
        let n_actions = problem.num_actions();
        let cells = grid.num_nodes() * n_actions;
        let per_cell: Vec<Result<(f64, Vec<u32>, Vec<[f64; 2]>, Option<Vec<f64>>)>> = (0..cells)
            .into_par_iter()
            .map(|cell| {
                let (node, a) = (cell / n_actions, cell % n_actions);
                let s = grid.node_state(node);
                let (states, w) = source.scenarios(&problem.space, &s, a)?;
                if states.is_empty() {
                    return Err(Error::EmptySupport);
                }
                let mut bases = Vec::with_capacity(states.len());
                let mut fracs = Vec::with_capacity(states.len());
                for x in &states {
                    if x.len() != grid.dim() {
                        return Err(Error::DimensionMismatch {
                            context: "scenario state",
                            expected: grid.dim(),
                            got: x.len(),
                        });
                    }
                    let (b, f) = grid.locate(x);
                    bases.push(b as u32);
                    fracs.push(f);
                }
                Ok((problem.cost(&s, a), bases, fracs, w))
            })
            .collect();
        let mut table = Self {
            grid,
            n_actions,
            costs: Vec::with_capacity(cells),
            offsets: vec![0],
            bases: Vec::new(),
            fracs: Vec::new(),
            weights: Vec::new(),
        };
        let uniform = matches!(source, ScenarioSource::Kernel(_));
        for item in per_cell {
            let (c, b, f, w) = item?;
            table.costs.push(c);
            table.bases.extend(b);
            table.fracs.extend(f);
            if !uniform {
                table.weights.extend(w.expect("weighted source"));
            }
            table.offsets.push(table.bases.len());
        }
        Ok(table)
    }

    pub fn num_atoms(&self) -> usize {
        self.bases.len()
    }

    /// `(T Q)(node, a) = c(node, a) + gamma * E[min_a' Q(s', a')]`.
    pub fn apply(&self, gamma: f64, q: &GridQ) -> GridQ {
        assert_eq!(q.n_actions, self.n_actions, "action count mismatch");
        assert!(
            Arc::ptr_eq(&q.grid, &self.grid) || *q.grid == *self.grid,
            "grid mismatch"
        );
        let vals = &q.values;
        let values: Vec<f64> = (0..self.costs.len())
            .into_par_iter()
            .map(|cell| {
                let (lo, hi) = (self.offsets[cell], self.offsets[cell + 1]);
                let mut acc = 0.0;
                if self.weights.is_empty() {
                    for k in lo..hi {
                        acc += self
                            .grid
                            .interp_min(vals, self.n_actions, self.bases[k] as usize, self.fracs[k]);
                    }
                    acc /= (hi - lo) as f64;
                } else {
                    for k in lo..hi {
                        acc += self.weights[k]
                            * self
                                .grid
                                .interp_min(vals, self.n_actions, self.bases[k] as usize, self.fracs[k]);
                    }
                }
                self.costs[cell] + gamma * acc
            })
            .collect();
        GridQ {
            grid: self.grid.clone(),
            n_actions: self.n_actions,
            values,
        }
    }
}

/// One application of the operator induced by `source`.
pub fn apply_operator_on_grid(q: &GridQ, problem: &DiscountedProblem, source: &ScenarioSource) -> Result<GridQ> {
    let table = ScenarioTable::build(problem, source, q.grid.clone())?;
    Ok(table.apply(problem.gamma(), q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub q: GridQ,
    pub diagnostics: IterationDiagnostics,
    /// `||T Q - Q||_inf` at the returned iterate.
    pub fixed_point_residual: f64,
}

pub fn solve_with_table(table: &ScenarioTable, gamma: f64, tol: f64, max_iter: usize) -> Result<Solution> {
    let q0 = GridQ::constant(table.grid.clone(), table.n_actions, 0.0)?;
    let (q, diagnostics) = value_iterate(|q: &GridQ| table.apply(gamma, q), q0, tol, max_iter)?;
    if let Some(bad) = q.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NumericBlowup(vec![*bad]));
    }
    let fixed_point_residual = table.apply(gamma, &q).sup_distance(&q);
    Ok(Solution {
        q,
        diagnostics,
        fixed_point_residual,
    })
}

pub fn solve_fixed_point(
    problem: &DiscountedProblem,
    source: &ScenarioSource,
    grid: Arc<Grid>,
    tol: f64,
    max_iter: usize,
) -> Result<Solution> {
    let table = ScenarioTable::build(problem, source, grid)?;
    solve_with_table(&table, problem.gamma(), tol, max_iter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub per_action: Vec<f64>,
    pub max: f64,
}

/// Largest adjacent-node slope `|dQ| / h` per action.
pub fn estimate_lipschitz(q: &GridQ) -> LipschitzEstimate {
    let g = &q.grid;
    let mut per_action = vec![0.0f64; q.n_actions];
    for node in 0..g.num_nodes() {
        let idx = g.multi_index(node);
        for k in 0..g.dim() {
            if idx[k] + 1 >= g.counts[k] {
                continue;
            }
            let next = if k == 0 && g.dim() == 2 {
                node + g.counts[1]
            } else {
                node + 1
            };
            for (a, slot) in per_action.iter_mut().enumerate() {
                let slope = (q.get(next, a) - q.get(node, a)).abs() / g.steps[k];
                *slot = slot.max(slope);
            }
        }
    }
    let max = per_action.iter().copied().fold(0.0, f64::max);
    LipschitzEstimate { per_action, max }
}

/// `sup_{node, a} (1/N) sum_i ||(f_hat(s,a) + e_hat_i) - (f*(s,a) + e_i)||`, the
/// scenario discrepancy between two kernels with aligned residuals.
pub fn scenario_discrepancy(
    grid: &Grid,
    n_actions: usize,
    hat: &EmpiricalKernel,
    star: &EmpiricalKernel,
) -> Result<f64> {
    let (rh, rs) = (&hat.residuals().residuals, &star.residuals().residuals);
    if rh.len() != rs.len() {
        return Err(Error::DimensionMismatch {
            context: "aligned residual counts",
            expected: rs.len(),
            got: rh.len(),
        });
    }
    let mut sup = 0.0f64;
    for node in 0..grid.num_nodes() {
        let s = grid.node_state(node);
        for a in 0..n_actions {
            let (ch, cs) = (hat.predict(&s, a), star.predict(&s, a));
            let total: f64 = rh
                .iter()
                .zip(rs)
                .map(|(eh, es)| {
                    (0..ch.len())
                        .map(|k| ((ch[k] + eh[k]) - (cs[k] + es[k])).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum();
            sup = sup.max(total / rh.len() as f64);
        }
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{problem_of, problem_with_gamma, Synthetic1d, TrueDynamics};
    use crate::mdp::ActionSet;
    use crate::residual::ResidualSet;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit_grid(n: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(&StateSpace::new(vec![-1.0], vec![1.0]).unwrap(), &[n]).unwrap())
    }

    fn self_loop() -> ScenarioSource {
        ScenarioSource::Explicit(Arc::new(|s: &[f64], _a| vec![(s.to_vec(), 1.0)]))
    }

    fn const_cost_problem(gamma: f64) -> DiscountedProblem {
        DiscountedProblem::new(
            StateSpace::new(vec![-1.0], vec![1.0]).unwrap(),
            ActionSet::from_scalars(&[("a", 0.0), ("b", 1.0)]).unwrap(),
            Arc::new(|_s: &[f64], _a| 1.0),
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn grid_validation_and_nodes() {
        let sp = StateSpace::new(vec![-1.0], vec![1.0]).unwrap();
        assert!(Grid::uniform(&sp, &[1]).is_err());
        let cp = StateSpace::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
        assert!(Grid::uniform(&cp, &[3, 3, 3, 3]).is_err());
        let g = Grid::uniform(&sp, &[401]).unwrap();
        assert_eq!(g.node_state(0), vec![-1.0]);
        assert_eq!(g.node_state(400), vec![1.0]);
        assert!((g.node_state(200)[0]).abs() < 1e-15);
        let g2 = Grid::uniform(&StateSpace::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(), &[3, 5]).unwrap();
        assert_eq!(g2.node_state(7), vec![0.5, 1.0]);
    }

    #[test]
    fn interpolation_reproduces_affine_functions_and_clamps() {
        let g = Arc::new(Grid::uniform(&StateSpace::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap(), &[7, 9]).unwrap());
        let q = GridQ::from_fn(g, 2, |s, a| 2.0 * s[0] - 0.5 * s[1] + a as f64).unwrap();
        let mut r = rng::rng_from_seed(3);
        for _ in 0..200 {
            let s = [r.random_range(-1.0..1.0), r.random_range(0.0..2.0)];
            assert!((q.eval(&s, 1) - (2.0 * s[0] - 0.5 * s[1] + 1.0)).abs() < 1e-12);
        }
        assert!((q.eval(&[5.0, -3.0], 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_zero_gives_costs() {
        let env: Arc<dyn Environment> = Arc::new(Synthetic1d::default());
        let p = problem_with_gamma(env.clone(), 0.0).unwrap();
        let g = unit_grid(21);
        let q = GridQ::constant(g.clone(), 3, 5.0).unwrap();
        let out = apply_operator_on_grid(&q, &p, &ScenarioSource::true_operator(env.clone(), 16).unwrap()).unwrap();
        for node in 0..21 {
            let s = g.node_state(node);
            for a in 0..3 {
                assert_eq!(out.get(node, a), env.cost(&s, a));
            }
        }
    }

    #[test]
    fn self_loop_examples() {
        let g = unit_grid(11);
        let q0 = GridQ::constant(g.clone(), 2, 0.0).unwrap();
        let once = apply_operator_on_grid(&q0, &const_cost_problem(0.5), &self_loop()).unwrap();
        assert!(once.values().iter().all(|v| *v == 1.0));
        let sol = solve_fixed_point(&const_cost_problem(0.9), &self_loop(), g, 1e-12, 10_000).unwrap();
        assert!(sol.q.values().iter().all(|v| (v - 10.0).abs() < 1e-10));
        assert!(sol.diagnostics.worst_rate_violation(0.9, 1e-10) <= 0.0);
    }

    #[test]
    fn non_convergence_is_an_error() {
        let err = solve_fixed_point(&const_cost_problem(0.9), &self_loop(), unit_grid(5), 1e-12, 3).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 3, .. }));
    }

    #[test]
    fn quadrature_operator_matches_monte_carlo() {
        let env: Arc<dyn Environment> = Arc::new(Synthetic1d::default());
        let p = problem_of(env.clone()).unwrap();
        let g = unit_grid(41);
        let q = GridQ::from_fn(g.clone(), 3, |s, a| s[0] * s[0] + 0.1 * a as f64).unwrap();
        let out = apply_operator_on_grid(&q, &p, &ScenarioSource::true_operator(env.clone(), 64).unwrap()).unwrap();
        let mut r = rng::rng_from_seed(2024);
        let draws = 1_000_000;
        for node in [0, 10, 20, 33, 40] {
            let s = g.node_state(node)[0];
            for a in 0..3 {
                let center = Synthetic1d::f_star(s, a);
                let mut acc = 0.0;
                for _ in 0..draws {
                    let z: f64 = r.sample(StandardNormal);
                    let x = (center + 0.1 * z).clamp(-1.0, 1.0);
                    acc += (0..3).map(|b| q.eval(&[x], b)).fold(f64::INFINITY, f64::min);
                }
                let mc = env.cost(&[s], a) + 0.9 * acc / draws as f64;
                assert!(
                    (mc - out.get(node, a)).abs() < 1e-3,
                    "node {node} a {a}: {mc} vs {}",
                    out.get(node, a)
                );
            }
        }
    }

    /// Straight-loop value iteration for synthetic1d with its own interpolation.
    fn dense_oracle(n: usize, tol: f64) -> Vec<f64> {
        let (off, w) = gaussian_rule(64, 0.1).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let h = 2.0 / (n - 1) as f64;
        let mut q = vec![0.0; n * 3];
        loop {
            let lerp_min = |x: f64| {
                let x = x.clamp(-1.0, 1.0);
                let u = (x + 1.0) / h;
                let i = (u.floor() as usize).min(n - 2);
                let t = u - i as f64;
                let mut best = f64::INFINITY;
                for a in 0..3 {
                    best = best.min((1.0 - t) * q[3 * i + a] + t * q[3 * (i + 1) + a]);
                }
                best
            };
            let mut next = vec![0.0; n * 3];
            for i in 0..n {
                for a in 0..3 {
                    let u = [-0.2, 0.0, 0.2][a];
                    let mean = 0.8 * xs[i] + u;
                    let ev: f64 = off.iter().zip(&w).map(|(o, wk)| wk * lerp_min(mean + o)).sum();
                    next[3 * i + a] = xs[i] * xs[i] + 0.01 * u * u + 0.9 * ev;
                }
            }
            let delta = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            q = next;
            if delta <= tol {
                return q;
            }
        }
    }

    #[test]
    fn true_operator_solve_matches_dense_oracle() {
        let env: Arc<dyn Environment> = Arc::new(Synthetic1d::default());
        let p = problem_of(env.clone()).unwrap();
        let sol = solve_fixed_point(
            &p,
            &ScenarioSource::true_operator(env, 64).unwrap(),
            unit_grid(401),
            1e-10,
            10_000,
        )
        .unwrap();
        let oracle = dense_oracle(401, 1e-10);
        let gap = sol
            .q
            .values()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-6, "gap {gap}");
        assert!(sol.fixed_point_residual <= 1e-10);
        assert!(sol.diagnostics.worst_rate_violation(0.9, 1e-10) <= 0.0);
    }

    #[test]
    fn zero_residual_kernel_equals_deterministic_model() {
        let env: Arc<dyn Environment> = Arc::new(Synthetic1d::default());
        let p = problem_of(env.clone()).unwrap();
        let g = unit_grid(101);
        let kernel = EmpiricalKernel::new(
            Arc::new(TrueDynamics(env.clone())),
            ResidualSet::zeros(7, 1),
            env.space().clone(),
        )
        .unwrap();
        let det = ScenarioSource::Explicit(Arc::new(|s: &[f64], a| {
            vec![(vec![Synthetic1d::f_star(s[0], a).clamp(-1.0, 1.0)], 1.0)]
        }));
        let a = solve_fixed_point(&p, &ScenarioSource::Kernel(kernel), g.clone(), 1e-10, 10_000).unwrap();
        let b = solve_fixed_point(&p, &det, g, 1e-10, 10_000).unwrap();
        assert!(a.q.sup_distance(&b.q) < 1e-12);
    }

    #[test]
    fn lipschitz_examples() {
        let g = unit_grid(51);
        assert_eq!(
            estimate_lipschitz(&GridQ::constant(g.clone(), 2, 4.0).unwrap()).max,
            0.0
        );
        let est = estimate_lipschitz(&GridQ::from_fn(g, 2, |s, a| 3.0 * s[0] * (1 - a) as f64).unwrap());
        assert!((est.per_action[0] - 3.0).abs() < 1e-12);
        assert_eq!(est.per_action[1], 0.0);
        assert!((est.max - 3.0).abs() < 1e-12);
        let g2 = Arc::new(Grid::uniform(&StateSpace::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(), &[5, 9]).unwrap());
        let est2 = estimate_lipschitz(&GridQ::from_fn(g2, 1, |s, _| s[0] - 4.0 * s[1]).unwrap());
        assert!((est2.max - 4.0).abs() < 1e-12);
    }

    #[test]
    fn value_distance_bounded_by_q_distance() {
        let g = unit_grid(31);
        let mut r = rng::rng_from_seed(8);
        for _ in 0..50 {
            let a = GridQ::new(g.clone(), 3, (0..93).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
            let b = GridQ::new(g.clone(), 3, (0..93).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
            assert!(a.value_sup_distance(&b) <= a.sup_distance(&b));
        }
    }

    #[test]
    fn gridq_rejects_bad_values() {
        let g = unit_grid(3);
        assert!(matches!(
            GridQ::new(g.clone(), 1, vec![0.0, f64::NAN, 1.0]),
            Err(Error::NumericBlowup(_))
        ));
        assert!(GridQ::new(g, 1, vec![0.0; 4]).is_err());
    }
}
