//! Grid-based checks of the operator and fixed-point properties on the
//! one-dimensional synthetic environment.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    generate_dataset, problem_of, problem_with_gamma, BehaviorPolicy, Environment, OfflineDataset, Synthetic1d,
    TrueDynamics,
};
use crate::error::Result;
use crate::grid::{
    consistency_curve, estimate_lipschitz, solve_with_table, ConsistencyConfig, ConsistencyCurve, Grid, GridQ,
    ScenarioSource, ScenarioTable,
};
use crate::mdp::{DiscountedProblem, SupDistance};
use crate::residual::{
    compute_residuals, fit_regression, full_information_kernel, true_residuals, EmpiricalKernel, TransitionMean,
};
use crate::rng::{self, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub noise_std: f64,
    pub gamma: f64,
    pub seed: u64,
    pub consistency: ConsistencyConfig,
    pub contraction_pairs: usize,
    /// Sample size behind the empirical and full-information kernels used for
    /// the contraction, Lipschitz and identity checks.
    pub kernel_samples: usize,
    pub lipschitz_draws: usize,
    pub lipschitz_slack: f64,
    /// Sample size whose consistency rows feed the error-bound check.
    pub bound_samples: usize,
    pub bound_slack: f64,
    pub injection_samples: usize,
    pub injection_grid_nodes: usize,
    /// Required ratio of the largest-N median error to `||Q*||_inf`.
    pub final_error_fraction: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.1,
            gamma: 0.9,
            seed: 0,
            consistency: ConsistencyConfig::default(),
            contraction_pairs: 100,
            kernel_samples: 200,
            lipschitz_draws: 10,
            lipschitz_slack: 0.05,
            bound_samples: 200,
            bound_slack: 0.10,
            injection_samples: 10_000,
            injection_grid_nodes: 101,
            final_error_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub config: TheoryConfig,
    pub checks: Vec<Check>,
    pub consistency: ConsistencyCurve,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{} {}: measured {:.6e}, threshold {:.6e} ({})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.threshold,
                c.detail
            );
        }
        out
    }
}

fn check(name: &str, measured: f64, threshold: f64, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        measured,
        threshold,
        detail,
    }
}

/// Empirical (linear fit) and full-information kernels from one dataset.
fn kernels(
    env: &Arc<dyn Environment>,
    n: usize,
    seed: u64,
    cfg: &TheoryConfig,
) -> Result<(OfflineDataset, EmpiricalKernel, EmpiricalKernel)> {
    let horizon = cfg.consistency.horizon;
    let data = generate_dataset(
        env.as_ref(),
        BehaviorPolicy::UniformRandom,
        n.div_ceil(horizon),
        horizon,
        seed,
    )?
    .truncated(n);
    let (model, _) = fit_regression(&data, &cfg.consistency.regression, seed)?;
    let res = compute_residuals(&model, &data)?;
    let hat = EmpiricalKernel::new(Arc::new(model), res, env.space().clone())?;
    let star = full_information_kernel(
        Arc::new(TrueDynamics(env.clone())),
        true_residuals(env.clone(), &data)?,
        env.space().clone(),
    )?;
    Ok((data, hat, star))
}

/// Worst `||T Q1 - T Q2|| / ||Q1 - Q2||` over random pairs.
fn worst_ratio(
    table: &ScenarioTable,
    gamma: f64,
    grid: &Arc<Grid>,
    n_actions: usize,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let mut r = rng::rng_from_seed(seed);
    let cells = grid.num_nodes() * n_actions;
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let scale = 10f64.powf(r.random_range(-1.0..2.0));
        let q1 = GridQ::new(
            grid.clone(),
            n_actions,
            (0..cells).map(|_| scale * r.random_range(-1.0..1.0)).collect(),
        )?;
        let q2 = GridQ::new(
            grid.clone(),
            n_actions,
            (0..cells).map(|_| scale * r.random_range(-1.0..1.0)).collect(),
        )?;
        let num = table.apply(gamma, &q1).sup_distance(&table.apply(gamma, &q2));
        worst = worst.max(num / q1.sup_distance(&q2));
    }
    Ok(worst)
}

/// Runs every check. Individual failures are reported, not returned as errors.
pub fn run_theory_suite(cfg: &TheoryConfig) -> Result<TheoryReport> {
    let env: Arc<dyn Environment> = Arc::new(Synthetic1d::new(cfg.noise_std, cfg.gamma)?);
    let problem = problem_of(env.clone())?;
    let gamma = problem.gamma();
    let n_actions = problem.num_actions();
    let grid = Arc::new(Grid::uniform(env.space(), &[cfg.consistency.grid_nodes])?);
    let mut checks = Vec::new();

    // Contraction of the three operators, and the gamma = 0 degenerate case.
    let (data0, hat, star) = kernels(
        &env,
        cfg.kernel_samples,
        rng::derive_seed(cfg.seed, &[tags::THEORY, 0]),
        cfg,
    )?;
    let sources = [
        ("residuals", ScenarioSource::Kernel(hat.clone())),
        ("full-information", ScenarioSource::Kernel(star.clone())),
        (
            "true",
            ScenarioSource::true_operator(env.clone(), cfg.consistency.quadrature_nodes)?,
        ),
    ];
    for (k, (label, src)) in sources.iter().enumerate() {
        let table = ScenarioTable::build(&problem, src, grid.clone())?;
        let worst = worst_ratio(
            &table,
            gamma,
            &grid,
            n_actions,
            cfg.contraction_pairs,
            rng::derive_seed(cfg.seed, &[tags::THEORY, 1, k as u64]),
        )?;
        checks.push(check(
            &format!("contraction/{label}"),
            worst,
            gamma + 1e-9,
            worst <= gamma + 1e-9,
            format!("worst ratio over {} random pairs", cfg.contraction_pairs),
        ));
    }
    let p0: DiscountedProblem = problem_with_gamma(env.clone(), 0.0)?;
    let t0 = ScenarioTable::build(&p0, &sources[0].1, grid.clone())?;
    let r0 = worst_ratio(
        &t0,
        0.0,
        &grid,
        n_actions,
        10,
        rng::derive_seed(cfg.seed, &[tags::THEORY, 2]),
    )?;
    checks.push(check(
        "contraction/gamma-zero",
        r0,
        0.0,
        r0 == 0.0,
        "ratio with gamma = 0".into(),
    ));

    // Residual identity e_hat - e = f* - f_hat at every sample.
    let truth = TrueDynamics(env.clone());
    let mut identity_gap = 0.0f64;
    for (t, (eh, es)) in data0
        .samples
        .iter()
        .zip(hat.residuals().residuals.iter().zip(&star.residuals().residuals))
    {
        let (fh, fs) = (hat.predict(&t.s, t.a), truth.predict(&t.s, t.a));
        for k in 0..eh.len() {
            identity_gap = identity_gap.max(((eh[k] - es[k]) - (fs[k] - fh[k])).abs());
        }
    }
    checks.push(check(
        "residual-identity",
        identity_gap,
        1e-12,
        identity_gap <= 1e-12,
        format!("max over {} samples", cfg.kernel_samples),
    ));

    // Lipschitz bound for full-information fixed points.
    let bound = Synthetic1d::LIPSCHITZ_COST / (1.0 - gamma * Synthetic1d::LIPSCHITZ_F);
    let mut worst_lip = 0.0f64;
    let mut worst_rate = 0.0f64;
    for d in 0..cfg.lipschitz_draws {
        let (_, _, star_d) = kernels(
            &env,
            cfg.kernel_samples,
            rng::derive_seed(cfg.seed, &[tags::THEORY, 3, d as u64]),
            cfg,
        )?;
        let table = ScenarioTable::build(&problem, &ScenarioSource::Kernel(star_d), grid.clone())?;
        let sol = solve_with_table(&table, gamma, cfg.consistency.tol, cfg.consistency.max_iter)?;
        worst_lip = worst_lip.max(estimate_lipschitz(&sol.q).max);
        worst_rate = worst_rate.max(sol.diagnostics.worst_rate_violation(gamma, 0.0));
    }
    let lip_limit = bound * (1.0 + cfg.lipschitz_slack);
    checks.push(check(
        "lipschitz-bound",
        worst_lip,
        lip_limit,
        worst_lip <= lip_limit,
        format!(
            "max over {} residual draws; L_c/(1-gamma L_f) = {bound:.4}",
            cfg.lipschitz_draws
        ),
    ));

    // Consistency curve and the checks derived from its rows.
    let mut ccfg = cfg.consistency.clone();
    if !ccfg.n_values.contains(&cfg.bound_samples) {
        ccfg.n_values.push(cfg.bound_samples);
    }
    let curve = consistency_curve(env.clone(), &ccfg, false)?;
    let medians: Vec<(usize, f64)> = curve
        .medians()
        .into_iter()
        .filter(|(n, _)| cfg.consistency.n_values.contains(n))
        .collect();
    let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
    let worst_step = medians
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(check(
        "consistency/monotone",
        worst_step,
        0.0,
        decreasing,
        format!("medians {medians:?}"),
    ));
    let last = medians.last().map_or(f64::NAN, |m| m.1);
    let limit = cfg.final_error_fraction * curve.q_star_sup_norm;
    checks.push(check(
        "consistency/final-error",
        last,
        limit,
        last < limit,
        format!("||Q*||_inf = {:.6}", curve.q_star_sup_norm),
    ));
    let value_excess = curve
        .rows
        .iter()
        .map(|r| r.err_hat_v_vs_v_star - r.err_hat_q_vs_q_star)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(check(
        "value-gap-bounded-by-q-gap",
        value_excess,
        0.0,
        value_excess <= 0.0,
        format!("max of ||V_hat - V*|| - ||Q_hat - Q*|| over {} runs", curve.rows.len()),
    ));
    let bound_rows: Vec<_> = curve.rows.iter().filter(|r| r.n == cfg.bound_samples).collect();
    let bound_ratio = bound_rows
        .iter()
        .map(|r| r.err_hat_q_vs_q_star_n / r.discrepancy_bound)
        .fold(0.0f64, f64::max);
    checks.push(check(
        "error-bound",
        bound_ratio,
        1.0 + cfg.bound_slack,
        bound_ratio <= 1.0 + cfg.bound_slack,
        format!(
            "max ||Q_hat_N - Q*_N|| / bound over {} seeds at N = {}",
            bound_rows.len(),
            cfg.bound_samples
        ),
    ));
    worst_rate = curve
        .rows
        .iter()
        .map(|r| r.worst_rate_excess)
        .fold(worst_rate, f64::max);
    checks.push(check(
        "rate",
        worst_rate,
        1e-10,
        worst_rate <= 1e-10,
        "max of delta_{k+1} - gamma delta_k over all solves".into(),
    ));

    // Injecting f_hat = f* makes the two kernels identical.
    let inj_grid = Arc::new(Grid::uniform(env.space(), &[cfg.injection_grid_nodes])?);
    let horizon = cfg.consistency.horizon;
    let data = generate_dataset(
        env.as_ref(),
        BehaviorPolicy::UniformRandom,
        cfg.injection_samples.div_ceil(horizon),
        horizon,
        rng::derive_seed(cfg.seed, &[tags::THEORY, 4]),
    )?
    .truncated(cfg.injection_samples);
    let f_star: Arc<dyn TransitionMean> = Arc::new(TrueDynamics(env.clone()));
    let injected = EmpiricalKernel::new(
        f_star.clone(),
        compute_residuals(f_star.as_ref(), &data)?,
        env.space().clone(),
    )?;
    let full = full_information_kernel(f_star, true_residuals(env.clone(), &data)?, env.space().clone())?;
    let a = solve_with_table(
        &ScenarioTable::build(&problem, &ScenarioSource::Kernel(injected), inj_grid.clone())?,
        gamma,
        cfg.consistency.tol,
        cfg.consistency.max_iter,
    )?;
    let b = solve_with_table(
        &ScenarioTable::build(&problem, &ScenarioSource::Kernel(full), inj_grid)?,
        gamma,
        cfg.consistency.tol,
        cfg.consistency.max_iter,
    )?;
    let gap = a.q.sup_distance(&b.q);
    checks.push(check(
        "injection",
        gap,
        0.0,
        gap == 0.0,
        format!("||Q_hat_N - Q*_N|| with f_hat = f*, N = {}", cfg.injection_samples),
    ));

    Ok(TheoryReport {
        config: cfg.clone(),
        checks,
        consistency: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_suite_passes() {
        let cfg = TheoryConfig {
            consistency: ConsistencyConfig {
                n_values: vec![50, 2000],
                seeds: vec![0, 1, 2],
                grid_nodes: 101,
                ..ConsistencyConfig::default()
            },
            contraction_pairs: 20,
            lipschitz_draws: 2,
            bound_samples: 50,
            injection_samples: 500,
            injection_grid_nodes: 51,
            ..TheoryConfig::default()
        };
        let report = run_theory_suite(&cfg).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        assert_eq!(report.check("contraction/gamma-zero").unwrap().measured, 0.0);
        assert_eq!(report.check("injection").unwrap().measured, 0.0);
        assert_eq!(report.checks.len(), 12);
    }
}
