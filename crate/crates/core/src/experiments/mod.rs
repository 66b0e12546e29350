//! Batch experiments: sample-size sweeps, paired residuals / no-residuals
//! comparisons, and the grid-based verification suite.

mod theory;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dqn::{build_kernel, train_in_simulator, DqnConfig, SimulatorMode, TrainReport};
use crate::env::{self, generate_dataset, BehaviorPolicy};
use crate::error::{Error, Result};
use crate::io;
use crate::residual::RegressionConfig;

pub use theory::{run_theory_suite, Check, TheoryConfig, TheoryReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub env: String,
    /// Overrides the environment's default noise level.
    pub noise_std: Option<f64>,
    pub n_trajectories: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Step cap for logged trajectories.
    pub data_horizon: usize,
    /// Training template; `seed` is replaced per cell.
    pub dqn: DqnConfig,
    pub regression: RegressionConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            env: "cartpole".into(),
            noise_std: None,
            n_trajectories: vec![500, 1000],
            seeds: (0..5).collect(),
            data_horizon: 500,
            dqn: DqnConfig {
                episodes: 300,
                ..DqnConfig::default()
            },
            regression: RegressionConfig::default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("sweep needs nonempty n_trajectories and seeds"));
        }
        if self.n_trajectories.contains(&0) {
            return Err(Error::invalid("n_trajectories entries must be >= 1"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::invalid("sweep seeds must be distinct"));
        }
        if self.data_horizon == 0 {
            return Err(Error::invalid("data_horizon must be >= 1"));
        }
        env::by_name(&self.env, self.noise_std)?;
        self.dqn.validate()?;
        self.regression.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub samples: usize,
    pub dataset_hash: String,
    /// Mean simulator return over the last 10% of episodes.
    pub train_return: f64,
    pub test_return_mean: f64,
    pub test_return_std: f64,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub n: usize,
    pub seed: u64,
    pub mode: SimulatorMode,
    pub result: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub mode: SimulatorMode,
    pub runs: usize,
    pub failed: usize,
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub cells: Vec<CellOutcome>,
    pub summary: Vec<SummaryRow>,
}

/// Fraction of final episodes averaged into a cell's training return.
pub const TRAIN_RETURN_TAIL: f64 = 0.1;

fn run_cell(spec: &SweepSpec, n: usize, seed: u64, modes: &[SimulatorMode]) -> Vec<CellOutcome> {
    let shared = (|| -> Result<_> {
        let env = env::by_name(&spec.env, spec.noise_std)?;
        let data = generate_dataset(env.as_ref(), BehaviorPolicy::UniformRandom, n, spec.data_horizon, seed)?;
        let hash = io::sha256_hex(data.to_jsonl().as_bytes());
        let (kernel, trace) = build_kernel(&data, env.as_ref(), &spec.regression, seed)?;
        Ok((env, data.len(), hash, kernel, trace))
    })();
    let (env, samples, hash, kernel, trace) = match shared {
        Ok(v) => v,
        Err(e) => {
            return modes
                .iter()
                .map(|&mode| CellOutcome {
                    n,
                    seed,
                    mode,
                    result: Err(e.to_string()),
                })
                .collect()
        }
    };
    let cfg = DqnConfig {
        seed,
        ..spec.dqn.clone()
    };
    modes
        .par_iter()
        .map(|&mode| {
            let result = train_in_simulator(kernel.clone(), env.as_ref(), &cfg, mode, false)
                .map(|out| {
                    let mut report = out.report;
                    report.regression = Some(spec.regression.clone());
                    report.regression_fit = trace.clone();
                    let test = report.final_eval;
                    CellMetrics {
                        samples,
                        dataset_hash: hash.clone(),
                        train_return: report.late_train_return(TRAIN_RETURN_TAIL).unwrap_or(f64::NAN),
                        test_return_mean: test.map_or(f64::NAN, |t| t.mean),
                        test_return_std: test.map_or(f64::NAN, |t| t.std),
                        report,
                    }
                })
                .map_err(|e| e.to_string());
            CellOutcome { n, seed, mode, result }
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let s = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (m, s)
}

/// Runs every `(n, seed)` cell (in parallel) for the given simulator modes.
/// A failing cell is recorded, not propagated.
pub fn run_cells(spec: &SweepSpec, modes: &[SimulatorMode]) -> Result<SweepResults> {
    spec.validate()?;
    let keys: Vec<(usize, u64)> = spec
        .n_trajectories
        .iter()
        .flat_map(|&n| spec.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let mut cells: Vec<CellOutcome> = keys
        .par_iter()
        .flat_map_iter(|&(n, seed)| run_cell(spec, n, seed, modes))
        .collect();
    cells.sort_by_key(|c| (c.n, c.mode.label(), c.seed));
    let mut ns = spec.n_trajectories.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut summary = Vec::new();
    for &n in &ns {
        for &mode in modes {
            let group: Vec<&CellOutcome> = cells.iter().filter(|c| c.n == n && c.mode == mode).collect();
            let ok: Vec<&CellMetrics> = group.iter().filter_map(|c| c.result.as_ref().ok()).collect();
            let (train_mean, train_std) = mean_std(&ok.iter().map(|m| m.train_return).collect::<Vec<_>>());
            let (test_mean, test_std) = mean_std(&ok.iter().map(|m| m.test_return_mean).collect::<Vec<_>>());
            summary.push(SummaryRow {
                n,
                mode,
                runs: ok.len(),
                failed: group.len() - ok.len(),
                train_mean,
                train_std,
                test_mean,
                test_std,
            });
        }
    }
    Ok(SweepResults { cells, summary })
}

/// Residuals-based training for every `(n, seed)`.
pub fn run_sample_size_sweep(spec: &SweepSpec) -> Result<SweepResults> {
    run_cells(spec, &[SimulatorMode::Residuals])
}

/// Paired residuals / no-residuals training sharing dataset, model and seeds.
pub fn run_model_comparison(spec: &SweepSpec) -> Result<SweepResults> {
    run_cells(spec, &[SimulatorMode::Residuals, SimulatorMode::PointPrediction])
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; NaN when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:e}")
    }
}

impl SweepResults {
    pub fn summary_for(&self, mode: SimulatorMode) -> Vec<&SummaryRow> {
        self.summary.iter().filter(|r| r.mode == mode).collect()
    }

    /// Spearman correlation between `n` and mean test return across `n` values.
    pub fn n_test_spearman(&self, mode: SimulatorMode) -> f64 {
        let rows: Vec<&SummaryRow> = self.summary_for(mode).into_iter().filter(|r| r.runs > 0).collect();
        let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let ts: Vec<f64> = rows.iter().map(|r| r.test_mean).collect();
        spearman(&ns, &ts)
    }

    pub const SUMMARY_HEADER: &'static str =
        "n,variant,runs,failed,train_return_mean,train_return_std,test_return_mean,test_return_std";
    pub const CELLS_HEADER: &'static str =
        "n,seed,variant,samples,train_return,test_return_mean,test_return_std,status";
    pub const CURVES_HEADER: &'static str = "n,seed,variant,episode,train_return,eval_return_mean,eval_return_std";

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{}\n", Self::SUMMARY_HEADER);
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.n,
                r.mode.label(),
                r.runs,
                r.failed,
                fmt_f(r.train_mean),
                fmt_f(r.train_std),
                fmt_f(r.test_mean),
                fmt_f(r.test_std)
            );
        }
        out
    }

    pub fn cells_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CELLS_HEADER);
        for c in &self.cells {
            let _ = match &c.result {
                Ok(m) => writeln!(
                    out,
                    "{},{},{},{},{},{},{},ok",
                    c.n,
                    c.seed,
                    c.mode.label(),
                    m.samples,
                    fmt_f(m.train_return),
                    fmt_f(m.test_return_mean),
                    fmt_f(m.test_return_std)
                ),
                Err(e) => writeln!(
                    out,
                    "{},{},{},,,,,\"error: {}\"",
                    c.n,
                    c.seed,
                    c.mode.label(),
                    e.replace('"', "'")
                ),
            };
        }
        out
    }

    /// Per-episode training returns and periodic evaluations, plot-ready.
    pub fn curves_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CURVES_HEADER);
        for c in &self.cells {
            if let Ok(m) = &c.result {
                for e in &m.report.episodes {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        c.n,
                        c.seed,
                        c.mode.label(),
                        e.episode,
                        e.train_return,
                        e.eval.map(|v| fmt_f(v.mean)).unwrap_or_default(),
                        e.eval.map(|v| fmt_f(v.std)).unwrap_or_default()
                    );
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub files: Vec<ManifestEntry>,
}

/// Writes `summary.csv`, `cells.csv`, `curves.csv` and `manifest.json` into `dir`.
pub fn write_sweep_outputs(dir: &Path, kind: &str, spec: &SweepSpec, results: &SweepResults) -> Result<Vec<PathBuf>> {
    let hash = io::config_hash(spec);
    let files = [
        ("summary.csv", results.summary_csv()),
        ("cells.csv", results.cells_csv()),
        ("curves.csv", results.curves_csv()),
    ];
    let mut entries = Vec::new();
    let mut paths = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        io::atomic_write(&path, text.as_bytes())?;
        entries.push(ManifestEntry {
            path: name.to_string(),
            sha256: io::sha256_hex(text.as_bytes()),
            config_hash: hash.clone(),
            seeds: spec.seeds.clone(),
        });
        paths.push(path);
    }
    let manifest = Manifest {
        kind: kind.to_string(),
        config_hash: hash,
        seeds: spec.seeds.clone(),
        config: serde_json::to_value(spec).expect("serializable spec"),
        files: entries,
    };
    let mpath = dir.join("manifest.json");
    io::write_json(&mpath, &manifest)?;
    paths.push(mpath);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(env: &str, noise: Option<f64>, ns: Vec<usize>, seeds: Vec<u64>) -> SweepSpec {
        SweepSpec {
            env: env.into(),
            noise_std: noise,
            n_trajectories: ns,
            seeds,
            data_horizon: 20,
            dqn: DqnConfig {
                episodes: 4,
                batch_size: 8,
                target_sync: 10,
                hidden: vec![8],
                horizon_cap: 20,
                eval_every: 2,
                eval_episodes: 2,
                final_eval_episodes: 3,
                ..DqnConfig::default()
            },
            regression: RegressionConfig::linear(),
        }
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]) - 0.5).abs() < 1e-12);
        // Ties take average ranks: ranks (1, 2.5, 2.5) vs (1, 2, 3).
        let r = spearman(&[1.0, 2.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!((r - 0.8660254037844386).abs() < 1e-12, "{r}");
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
    }

    #[test]
    fn single_cell_single_row() {
        let res = run_sample_size_sweep(&tiny_spec("synthetic1d", None, vec![3], vec![1])).unwrap();
        assert_eq!(res.cells.len(), 1);
        assert_eq!(res.summary.len(), 1);
        assert_eq!(res.summary[0].runs, 1);
        assert_eq!(res.summary_csv().lines().count(), 2);
    }

    #[test]
    fn repeated_sweep_is_identical() {
        let spec = tiny_spec("cartpole", None, vec![3, 5], vec![0, 1]);
        let a = run_sample_size_sweep(&spec).unwrap();
        let b = run_sample_size_sweep(&spec).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.cells_csv(), b.cells_csv());
        assert_eq!(a.curves_csv(), b.curves_csv());
        let dir = tempfile::tempdir().unwrap();
        let (d1, d2) = (dir.path().join("a"), dir.path().join("b"));
        write_sweep_outputs(&d1, "sweep", &spec, &a).unwrap();
        write_sweep_outputs(&d2, "sweep", &spec, &b).unwrap();
        for f in ["summary.csv", "cells.csv", "curves.csv", "manifest.json"] {
            assert_eq!(std::fs::read(d1.join(f)).unwrap(), std::fs::read(d2.join(f)).unwrap());
        }
    }

    #[test]
    fn comparison_shares_datasets_and_zero_noise_collapses_variants() {
        let res = run_model_comparison(&tiny_spec("cartpole", Some(0.0), vec![4], vec![2, 3])).unwrap();
        assert_eq!(res.cells.len(), 4);
        for seed in [2, 3] {
            let pair: Vec<&CellMetrics> = res
                .cells
                .iter()
                .filter(|c| c.seed == seed)
                .map(|c| c.result.as_ref().unwrap())
                .collect();
            assert_eq!(pair[0].dataset_hash, pair[1].dataset_hash);
        }
        // Without noise the residuals are fitting error only; the two modes
        // then differ solely by that error, which the regression keeps tiny.
        let synth = run_model_comparison(&tiny_spec("synthetic1d", Some(0.0), vec![4], vec![2])).unwrap();
        let curves: Vec<Vec<f64>> = synth
            .cells
            .iter()
            .map(|c| {
                c.result
                    .as_ref()
                    .unwrap()
                    .report
                    .episodes
                    .iter()
                    .map(|e| e.train_return)
                    .collect()
            })
            .collect();
        let gap = curves[0]
            .iter()
            .zip(&curves[1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-6, "{gap}");
    }

    #[test]
    fn failed_cells_are_recorded_not_propagated() {
        // Unregularized least squares on an intercept plus full one-hot design is singular.
        let broken = SweepSpec {
            regression: RegressionConfig {
                ridge: 0.0,
                ..RegressionConfig::linear()
            },
            ..tiny_spec("synthetic1d", None, vec![2], vec![0, 1])
        };
        let res = run_sample_size_sweep(&broken).unwrap();
        assert_eq!(res.cells.len(), 2);
        assert!(res
            .cells
            .iter()
            .all(|c| c.result.as_ref().unwrap_err().contains("singular")));
        assert_eq!((res.summary[0].runs, res.summary[0].failed), (0, 2));
        assert!(res.cells_csv().lines().nth(1).unwrap().contains("error"));

        let good = run_cell(
            &tiny_spec("synthetic1d", None, vec![2], vec![0]),
            2,
            0,
            &[SimulatorMode::Residuals],
        );
        assert!(good[0].result.is_ok());
    }

    #[test]
    fn spec_validation() {
        let mut spec = tiny_spec("synthetic1d", None, vec![2], vec![0, 0]);
        assert!(spec.validate().is_err());
        spec.seeds = vec![0];
        spec.n_trajectories = vec![];
        assert!(spec.validate().is_err());
    }
}
