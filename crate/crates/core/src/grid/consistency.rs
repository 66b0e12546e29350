//! Error of the empirical fixed point against the true one as the dataset grows.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_lipschitz, scenario_discrepancy, solve_with_table, Grid, GridQ, ScenarioSource, ScenarioTable};
use crate::env::{generate_dataset, problem_of, BehaviorPolicy, Environment, TrueDynamics};
use crate::error::{Error, Result};
use crate::mdp::SupDistance;
use crate::residual::{
    compute_residuals, fit_regression, full_information_kernel, true_residuals, EmpiricalKernel, RegressionConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyConfig {
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub grid_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Trajectory length used to collect `N` samples (`ceil(N / horizon)` trajectories).
    pub horizon: usize,
    pub quadrature_nodes: usize,
    pub regression: RegressionConfig,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            n_values: vec![50, 200, 800, 3200],
            seeds: (0..10).collect(),
            grid_nodes: 401,
            tol: 1e-10,
            max_iter: 10_000,
            horizon: 10,
            quadrature_nodes: 64,
            regression: RegressionConfig::linear(),
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("consistency needs at least one N and one seed"));
        }
        if self.n_values.contains(&0) {
            return Err(Error::invalid("N must be >= 1"));
        }
        if self.horizon == 0 || self.quadrature_nodes == 0 {
            return Err(Error::invalid("horizon and quadrature_nodes must be >= 1"));
        }
        self.regression.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub seed: u64,
    pub err_hat_q_vs_q_star: f64,
    pub err_hat_q_vs_q_star_n: f64,
    pub err_q_star_n_vs_q_star: f64,
    /// `||V_hat_N - V*||_inf` at grid nodes.
    pub err_hat_v_vs_v_star: f64,
    pub iters: usize,
    pub wall_ms: u64,
    /// Adjacent-node Lipschitz estimate of `Q*_N`.
    pub lipschitz_q_star_n: f64,
    pub scenario_discrepancy: f64,
    /// `gamma * L / (1 - gamma) * discrepancy`.
    pub discrepancy_bound: f64,
    /// Worst `delta_{k+1} - gamma * delta_k` over the three solves.
    pub worst_rate_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCurve {
    pub gamma: f64,
    pub q_star_sup_norm: f64,
    pub q_star_iters: usize,
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyCurve {
    pub const CSV_HEADER: &'static str =
        "N,seed,err_hatQ_vs_Qstar,err_hatQ_vs_QstarN,err_QstarN_vs_Qstar,iters,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{},{}",
                r.n,
                r.seed,
                r.err_hat_q_vs_q_star,
                r.err_hat_q_vs_q_star_n,
                r.err_q_star_n_vs_q_star,
                r.iters,
                r.wall_ms
            );
        }
        out
    }

    /// Median of `||Q_hat_N - Q*||` for each `N`, in first-seen order of `N`.
    pub fn medians(&self) -> Vec<(usize, f64)> {
        let mut ns: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !ns.contains(&r.n) {
                ns.push(r.n);
            }
        }
        ns.into_iter()
            .map(|n| {
                let errs: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.n == n)
                    .map(|r| r.err_hat_q_vs_q_star)
                    .collect();
                (n, median(errs))
            })
            .collect()
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// For each `(N, seed)`: collect `N` transitions, fit `f_hat`, and solve the
/// empirical and full-information fixed points; compare both with the
/// quadrature fixed point `Q*` on one shared grid.
///
/// With `record_time` unset the `wall_ms` column is zero so outputs are reproducible.
pub fn consistency_curve(
    env: Arc<dyn Environment>,
    cfg: &ConsistencyConfig,
    record_time: bool,
) -> Result<ConsistencyCurve> {
    cfg.validate()?;
    let problem = problem_of(env.clone())?;
    let gamma = problem.gamma();
    let grid = Arc::new(Grid::uniform(env.space(), &vec![cfg.grid_nodes; env.space().dim()])?);
    let star_table = ScenarioTable::build(
        &problem,
        &ScenarioSource::true_operator(env.clone(), cfg.quadrature_nodes)?,
        grid.clone(),
    )?;
    let q_star = solve_with_table(&star_table, gamma, cfg.tol, cfg.max_iter)?;
    let star_excess = q_star.diagnostics.worst_rate_violation(gamma, 0.0);

    let cells: Vec<(usize, u64)> = cfg
        .n_values
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(n, seed)| -> Result<ConsistencyRow> {
            let started = Instant::now();
            let trajectories = n.div_ceil(cfg.horizon);
            let dataset = generate_dataset(
                env.as_ref(),
                BehaviorPolicy::UniformRandom,
                trajectories,
                cfg.horizon,
                seed,
            )?
            .truncated(n);
            if dataset.len() != n {
                return Err(Error::invalid(format!(
                    "collected {} transitions, wanted {n} (episodes terminated early)",
                    dataset.len()
                )));
            }
            let (model, _) = fit_regression(&dataset, &cfg.regression, seed)?;
            let hat_res = compute_residuals(&model, &dataset)?;
            let hat = EmpiricalKernel::new(Arc::new(model), hat_res, env.space().clone())?;
            let star = full_information_kernel(
                Arc::new(TrueDynamics(env.clone())),
                true_residuals(env.clone(), &dataset)?,
                env.space().clone(),
            )?;
            let hat_sol = solve_with_table(
                &ScenarioTable::build(&problem, &ScenarioSource::Kernel(hat.clone()), grid.clone())?,
                gamma,
                cfg.tol,
                cfg.max_iter,
            )?;
            let star_n_sol = solve_with_table(
                &ScenarioTable::build(&problem, &ScenarioSource::Kernel(star.clone()), grid.clone())?,
                gamma,
                cfg.tol,
                cfg.max_iter,
            )?;
            let lip = estimate_lipschitz(&star_n_sol.q).max;
            let disc = scenario_discrepancy(&grid, problem.num_actions(), &hat, &star)?;
            let wall_ms = if record_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            };
            Ok(ConsistencyRow {
                n,
                seed,
                err_hat_q_vs_q_star: hat_sol.q.sup_distance(&q_star.q),
                err_hat_q_vs_q_star_n: hat_sol.q.sup_distance(&star_n_sol.q),
                err_q_star_n_vs_q_star: star_n_sol.q.sup_distance(&q_star.q),
                err_hat_v_vs_v_star: hat_sol.q.value_sup_distance(&q_star.q),
                iters: hat_sol.diagnostics.iterations,
                wall_ms,
                lipschitz_q_star_n: lip,
                scenario_discrepancy: disc,
                discrepancy_bound: gamma * lip / (1.0 - gamma) * disc,
                worst_rate_excess: hat_sol
                    .diagnostics
                    .worst_rate_violation(gamma, 0.0)
                    .max(star_n_sol.diagnostics.worst_rate_violation(gamma, 0.0))
                    .max(star_excess),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyCurve {
        gamma,
        q_star_sup_norm: q_star.q.sup_norm(),
        q_star_iters: q_star.diagnostics.iterations,
        rows,
    })
}

/// Convenience for tests and reports: `Q*` on the default grid.
pub fn true_fixed_point(env: Arc<dyn Environment>, cfg: &ConsistencyConfig) -> Result<GridQ> {
    let problem = problem_of(env.clone())?;
    let grid = Arc::new(Grid::uniform(env.space(), &vec![cfg.grid_nodes; env.space().dim()])?);
    let src = ScenarioSource::true_operator(env, cfg.quadrature_nodes)?;
    Ok(super::solve_fixed_point(&problem, &src, grid, cfg.tol, cfg.max_iter)?.q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Synthetic1d;

    fn small_cfg(ns: Vec<usize>, seeds: Vec<u64>) -> ConsistencyConfig {
        ConsistencyConfig {
            n_values: ns,
            seeds,
            grid_nodes: 101,
            ..ConsistencyConfig::default()
        }
    }

    #[test]
    fn rows_satisfy_triangle_and_value_inequalities() {
        let env: Arc<dyn Environment> = Arc::new(Synthetic1d::default());
        let curve = consistency_curve(env, &small_cfg(vec![30, 120], vec![1, 2]), false).unwrap();
        assert_eq!(curve.rows.len(), 4);
        for r in &curve.rows {
            assert!(r.err_hat_q_vs_q_star <= r.err_hat_q_vs_q_star_n + r.err_q_star_n_vs_q_star + 1e-12);
            assert!(r.err_hat_v_vs_v_star <= r.err_hat_q_vs_q_star);
            assert!(r.err_hat_q_vs_q_star_n <= 1.1 * r.discrepancy_bound + 1e-12);
            assert!(r.worst_rate_excess <= 1e-10);
            assert_eq!(r.wall_ms, 0);
        }
        let csv = curve.to_csv();
        assert!(csv.starts_with(ConsistencyCurve::CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn large_sample_beats_small_sample() {
        let env: Arc<dyn Environment> = Arc::new(Synthetic1d::default());
        let curve = consistency_curve(env, &small_cfg(vec![100, 10_000], vec![0, 1, 2]), false).unwrap();
        let m = curve.medians();
        assert!(m[1].1 < m[0].1, "{m:?}");
    }

    #[test]
    fn reproducible() {
        let env: Arc<dyn Environment> = Arc::new(Synthetic1d::default());
        let cfg = small_cfg(vec![40], vec![5]);
        let a = consistency_curve(env.clone(), &cfg, false).unwrap().to_csv();
        let b = consistency_curve(env, &cfg, false).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
