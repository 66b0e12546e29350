use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use resid_rl::approx::Mlp;
use resid_rl::dqn::{self, DqnConfig, QNetwork, SimulatorMode};
use resid_rl::env::{self, generate_dataset, problem_of, BehaviorPolicy, Environment, OfflineDataset, TrueDynamics};
use resid_rl::experiments::{self, run_theory_suite, SweepSpec, TheoryConfig};
use resid_rl::grid::{solve_fixed_point, Grid, ScenarioSource};
use resid_rl::io::{self, OutputMeta};
use resid_rl::residual::{
    compute_residuals, fit_regression, full_information_kernel, true_residuals, EmpiricalKernel, RegressionConfig,
    RegressionKind, RegressionModel,
};
use resid_rl::rng::{derive_seed, tags};

use crate::config::{section, RunConfig};
use crate::{CliError, Command, Common, DqnArgs, EnvArgs, KindArg, OperatorArg, RegressionArgs, SweepArgs, TrainArgs};

const DEFAULT_ENV: &str = "synthetic1d";
const DEFAULT_TRAJECTORIES: usize = 20;
const DEFAULT_HORIZON: usize = 50;

type CmdResult = Result<(), CliError>;

pub fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::GenData {
            common,
            env,
            trajectories,
            horizon,
        } => gen_data(&common, &env, trajectories, horizon),
        Command::FitModel {
            common,
            data,
            regression,
        } => fit_model(&common, data, &regression),
        Command::Solve {
            common,
            env,
            operator,
            grid,
            tol,
            max_iter,
            quadrature_nodes,
            data,
            trajectories,
            horizon,
            model,
            regression,
        } => solve(
            &common,
            &env,
            SolveFlags {
                operator,
                grid,
                tol,
                max_iter,
                quadrature_nodes,
                data,
                trajectories,
                horizon,
                model,
            },
            &regression,
        ),
        Command::Train(a) => train(&a, SimulatorMode::Residuals),
        Command::TrainBaseline(a) => train(&a, SimulatorMode::PointPrediction),
        Command::Evaluate {
            common,
            env,
            model,
            random,
            episodes,
            horizon_cap,
        } => evaluate(&common, &env, model, random, episodes, horizon_cap),
        Command::Sweep(a) => sweep(&a, false),
        Command::CompareModels(a) => sweep(&a, true),
        Command::Verify { common, suite, env } => verify(&common, &suite, &env),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_file(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file not found: {}", path.display())))
    }
}

fn file_sha256(path: &Path) -> Result<String, CliError> {
    require_file(path)?;
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(io::sha256_hex(&bytes))
}

fn load_dataset(path: &Path) -> Result<(OfflineDataset, String), CliError> {
    let hash = file_sha256(path)?;
    require_file(&io::sidecar_path(path))?;
    Ok((OfflineDataset::load(path)?, hash))
}

fn out_path(common: &Common, cfg: &RunConfig, default: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output.path.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}

fn make_env(name: &str, noise: Option<f64>) -> Result<Arc<dyn Environment>, CliError> {
    Ok(env::by_name(name, noise)?)
}

fn regression_config(cfg: &RunConfig, args: &RegressionArgs) -> Result<RegressionConfig, CliError> {
    let mut r: RegressionConfig = section(&cfg.regression, "regression")?;
    if let Some(k) = args.regression {
        r.kind = match k {
            KindArg::Linear => RegressionKind::Linear,
            KindArg::Mlp => RegressionKind::Mlp,
        };
    }
    if let Some(e) = args.regression_epochs {
        r.epochs = e;
    }
    if let Some(h) = args.regression_hidden {
        r.hidden = h;
    }
    r.validate()?;
    Ok(r)
}

fn apply_dqn_flags(d: &mut DqnConfig, a: &DqnArgs) {
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f.clone() { d.$f = v; } )* };
    }
    set!(
        episodes,
        lr,
        gamma,
        batch_size,
        target_sync,
        horizon_cap,
        hidden,
        eval_every,
        eval_episodes,
        final_eval_episodes
    );
}

fn print_summary(cmd: &str, body: &str, hash: &str) {
    println!("{cmd}: {body} config_hash={hash}");
}

fn gen_data(common: &Common, ea: &EnvArgs, trajectories: Option<usize>, horizon: Option<usize>) -> CmdResult {
    let cfg = RunConfig::load(common.config.as_deref())?;
    #[derive(Serialize)]
    struct Run<'a> {
        command: &'a str,
        env: String,
        noise_std: Option<f64>,
        trajectories: usize,
        horizon: usize,
        seed: u64,
    }
    let run = Run {
        command: "gen-data",
        env: ea
            .env
            .clone()
            .or(cfg.env.name.clone())
            .unwrap_or_else(|| DEFAULT_ENV.into()),
        noise_std: ea.noise_std.or(cfg.env.noise_std),
        trajectories: trajectories.or(cfg.data.trajectories).unwrap_or(DEFAULT_TRAJECTORIES),
        horizon: horizon.or(cfg.data.horizon).unwrap_or(DEFAULT_HORIZON),
        seed: cfg.resolve_seed(common.seed)?,
    };
    if run.trajectories == 0 || run.horizon == 0 {
        return Err(usage("trajectories and horizon must be >= 1"));
    }
    let env = make_env(&run.env, run.noise_std)?;
    let hash = io::config_hash(&run);
    let mut ds = generate_dataset(
        env.as_ref(),
        BehaviorPolicy::UniformRandom,
        run.trajectories,
        run.horizon,
        run.seed,
    )?;
    ds.meta.config_hash = Some(hash.clone());
    let out = out_path(common, &cfg, "data.jsonl");
    ds.save(&out)?;
    print_summary(
        "gen-data",
        &format!(
            "N={} trajectories={} path={}",
            ds.len(),
            run.trajectories,
            out.display()
        ),
        &hash,
    );
    Ok(())
}

fn fit_model(common: &Common, data: Option<PathBuf>, ra: &RegressionArgs) -> CmdResult {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let data = data
        .or(cfg.data.path.clone())
        .ok_or_else(|| usage("fit-model needs --data"))?;
    let (ds, data_hash) = load_dataset(&data)?;
    #[derive(Serialize)]
    struct Run<'a> {
        command: &'a str,
        dataset_sha256: String,
        regression: RegressionConfig,
        seed: u64,
    }
    let run = Run {
        command: "fit-model",
        dataset_sha256: data_hash,
        regression: regression_config(&cfg, ra)?,
        seed: cfg.resolve_seed(common.seed)?,
    };
    let hash = io::config_hash(&run);
    // Same seed derivation as the trainers, so `train --seed s` refits this exact model.
    let (model, trace) = fit_regression(&ds, &run.regression, derive_seed(run.seed, &[tags::REGRESSION]))?;
    let residuals = compute_residuals(&model, &ds)?;
    let out = out_path(common, &cfg, "model.json");
    let res_path = out.with_extension("residuals.json");
    let meta = OutputMeta::new("fit-model", &run, vec![run.seed]);
    model.save(
        &out,
        json!({ "config_hash": hash, "seed": run.seed, "env": ds.meta.env, "noise_std": ds.meta.noise_std }),
    )?;
    io::write_json(&io::sidecar_path(&out), &meta)?;
    residuals.save(&res_path)?;
    io::write_json(&io::sidecar_path(&res_path), &meta)?;
    let rms = (residuals.residuals.iter().flatten().map(|e| e * e).sum::<f64>()
        / (residuals.len() * residuals.dim()) as f64)
        .sqrt();
    let mut body = format!("samples={} residual_rms={rms:.6e}", ds.len());
    if let Some(t) = trace.as_ref().and_then(|t| t.epoch_losses.last()) {
        let _ = write!(body, " final_loss={t:.6e}");
    }
    let _ = write!(body, " model={} residuals={}", out.display(), res_path.display());
    print_summary("fit-model", &body, &hash);
    Ok(())
}

struct SolveFlags {
    operator: Option<OperatorArg>,
    grid: Option<usize>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    quadrature_nodes: Option<usize>,
    data: Option<PathBuf>,
    trajectories: Option<usize>,
    horizon: Option<usize>,
    model: Option<PathBuf>,
}

fn parse_operator(s: &str) -> Result<OperatorArg, CliError> {
    match s {
        "residual" => Ok(OperatorArg::Residual),
        "full-information" => Ok(OperatorArg::FullInformation),
        "true" => Ok(OperatorArg::True),
        other => Err(usage(format!("solver.operator: unknown operator {other:?}"))),
    }
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
enum DataSource {
    File { sha256: String },
    Generated { trajectories: usize, horizon: usize },
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModelSource {
    File {
        sha256: String,
        #[serde(skip)]
        path: PathBuf,
    },
    Fitted(RegressionConfig),
}

fn solve(common: &Common, ea: &EnvArgs, f: SolveFlags, ra: &RegressionArgs) -> CmdResult {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let operator = match (f.operator, &cfg.solver.operator) {
        (Some(op), _) => op,
        (None, Some(s)) => parse_operator(s)?,
        (None, None) => OperatorArg::Residual,
    };
    let env_name = ea
        .env
        .clone()
        .or(cfg.env.name.clone())
        .unwrap_or_else(|| DEFAULT_ENV.into());
    let noise_std = ea.noise_std.or(cfg.env.noise_std);
    let env = make_env(&env_name, noise_std)?;
    let seed = cfg.resolve_seed(common.seed)?;
    let nodes = f.grid.or(cfg.solver.grid).unwrap_or(401);
    let tol = f.tol.or(cfg.solver.tol).unwrap_or(1e-10);
    let max_iter = f.max_iter.or(cfg.solver.max_iter).unwrap_or(10_000);
    let qn = f.quadrature_nodes.or(cfg.solver.quadrature_nodes).unwrap_or(64);
    if !(tol > 0.0 && tol.is_finite()) || max_iter == 0 || qn == 0 {
        return Err(usage("solver: tol must be > 0, max_iter and quadrature_nodes >= 1"));
    }

    // Residual operators need a dataset and (for the empirical one) a mean model.
    let mut data_source = None;
    let mut model_source = None;
    let mut dataset = None;
    if operator != OperatorArg::True {
        let (ds, src) = match f.data.or(cfg.data.path.clone()) {
            Some(p) => {
                let (ds, sha256) = load_dataset(&p)?;
                (ds, DataSource::File { sha256 })
            }
            None => {
                let trajectories = f.trajectories.or(cfg.data.trajectories).unwrap_or(DEFAULT_TRAJECTORIES);
                let horizon = f.horizon.or(cfg.data.horizon).unwrap_or(DEFAULT_HORIZON);
                if trajectories == 0 || horizon == 0 {
                    return Err(usage("trajectories and horizon must be >= 1"));
                }
                let ds = generate_dataset(env.as_ref(), BehaviorPolicy::UniformRandom, trajectories, horizon, seed)?;
                (ds, DataSource::Generated { trajectories, horizon })
            }
        };
        if ds.meta.env != env.name() {
            return Err(usage(format!(
                "dataset is for {:?}, solving {:?}",
                ds.meta.env,
                env.name()
            )));
        }
        if operator == OperatorArg::Residual {
            model_source = Some(match f.model.or(cfg.solver.model.clone()) {
                Some(path) => ModelSource::File {
                    sha256: file_sha256(&path)?,
                    path,
                },
                None => ModelSource::Fitted(regression_config(&cfg, ra)?),
            });
        }
        data_source = Some(src);
        dataset = Some(ds);
    }

    #[derive(Serialize)]
    struct Run<'a> {
        command: &'a str,
        env: &'a str,
        noise_std: Option<f64>,
        operator: OperatorArg,
        grid: usize,
        tol: f64,
        max_iter: usize,
        quadrature_nodes: usize,
        data: Option<DataSource>,
        model: Option<ModelSource>,
        seed: u64,
    }
    let run = Run {
        command: "solve",
        env: &env_name,
        noise_std,
        operator,
        grid: nodes,
        tol,
        max_iter,
        quadrature_nodes: qn,
        data: data_source,
        model: model_source,
        seed,
    };
    let hash = io::config_hash(&run);

    let space = env.space().clone();
    let source = match (operator, dataset) {
        (OperatorArg::True, _) => ScenarioSource::true_operator(env.clone(), qn)?,
        (OperatorArg::FullInformation, Some(ds)) => ScenarioSource::Kernel(full_information_kernel(
            Arc::new(TrueDynamics(env.clone())),
            true_residuals(env.clone(), &ds)?,
            space.clone(),
        )?),
        (OperatorArg::Residual, Some(ds)) => {
            let model = match &run.model {
                Some(ModelSource::File { path, .. }) => RegressionModel::load(path)?,
                Some(ModelSource::Fitted(r)) => fit_regression(&ds, r, derive_seed(seed, &[tags::REGRESSION]))?.0,
                None => unreachable!("residual operator always has a model source"),
            };
            let res = compute_residuals(&model, &ds)?;
            ScenarioSource::Kernel(EmpiricalKernel::new(Arc::new(model), res, space.clone())?)
        }
        _ => unreachable!("dataset present for residual operators"),
    };
    let grid = Arc::new(Grid::uniform(&space, &vec![nodes; space.dim()])?);
    let problem = problem_of(env.clone())?;
    let sol = solve_fixed_point(&problem, &source, grid.clone(), tol, max_iter)?;

    let n_actions = problem.num_actions();
    let mut csv = String::new();
    let cols: Vec<String> = (0..space.dim())
        .map(|k| format!("s{k}"))
        .chain((0..n_actions).map(|a| format!("q{a}")))
        .chain(std::iter::once("v".to_string()))
        .collect();
    csv.push_str(&cols.join(","));
    csv.push('\n');
    let v = sol.q.node_values();
    for (node, s) in grid.nodes().iter().enumerate() {
        let mut row: Vec<String> = s.iter().map(|x| format!("{x:e}")).collect();
        row.extend((0..n_actions).map(|a| format!("{:e}", sol.q.get(node, a))));
        row.push(format!("{:e}", v[node]));
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let out = out_path(common, &cfg, "solution.csv");
    io::write_with_sidecar(&out, csv.as_bytes(), &OutputMeta::new("solve", &run, vec![seed]))?;
    print_summary(
        "solve",
        &format!(
            "operator={} iterations={} sup_norm={:.6e} fixed_point_residual={:.3e} path={}",
            serde_json::to_value(operator)
                .expect("operator")
                .as_str()
                .unwrap_or_default(),
            sol.diagnostics.iterations,
            sol.q.sup_norm(),
            sol.fixed_point_residual,
            out.display()
        ),
        &hash,
    );
    Ok(())
}

fn train(a: &TrainArgs, mode: SimulatorMode) -> CmdResult {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let command = match mode {
        SimulatorMode::Residuals => "train",
        SimulatorMode::PointPrediction => "train-baseline",
    };
    let data = a
        .data
        .clone()
        .or(cfg.data.path.clone())
        .ok_or_else(|| usage(format!("{command} needs --data")))?;
    let (ds, data_hash) = load_dataset(&data)?;
    let env_name = a
        .env
        .env
        .clone()
        .or(cfg.env.name.clone())
        .unwrap_or_else(|| ds.meta.env.clone());
    let noise_std = a.env.noise_std.or(cfg.env.noise_std).or(ds.meta.noise_std);
    let env = make_env(&env_name, noise_std)?;
    let seed = cfg.resolve_seed(a.common.seed)?;
    let mut dqn_cfg: DqnConfig = section(&cfg.dqn, "dqn")?;
    apply_dqn_flags(&mut dqn_cfg, &a.dqn);
    dqn_cfg.seed = seed;
    dqn_cfg.validate()?;

    #[derive(Serialize)]
    struct Run<'a> {
        command: &'a str,
        dataset_sha256: String,
        env: &'a str,
        noise_std: Option<f64>,
        dqn: &'a DqnConfig,
        regression: RegressionConfig,
        seed: u64,
    }
    let run = Run {
        command,
        dataset_sha256: data_hash,
        env: &env_name,
        noise_std,
        dqn: &dqn_cfg,
        regression: regression_config(&cfg, &a.regression)?,
        seed,
    };
    let hash = io::config_hash(&run);
    let outcome = match mode {
        SimulatorMode::Residuals => dqn::train(&ds, env.as_ref(), &dqn_cfg, &run.regression)?,
        SimulatorMode::PointPrediction => {
            dqn::train_baseline_no_residuals(&ds, env.as_ref(), &dqn_cfg, &run.regression)?
        }
    };
    let report = &outcome.report;
    let dir = out_path(&a.common, &cfg, &format!("{command}-out"));
    let meta = OutputMeta::new(command, &run, vec![seed]);
    io::write_with_sidecar(&dir.join("report.csv"), report.to_csv().as_bytes(), &meta)?;
    let mut report_json = serde_json::to_string_pretty(report).expect("serializable report");
    report_json.push('\n');
    io::write_with_sidecar(&dir.join("report.json"), report_json.as_bytes(), &meta)?;
    let qpath = dir.join("qnet.json");
    outcome.q.0.save(
        &qpath,
        json!({
            "config_hash": hash,
            "seed": seed,
            "env": env_name,
            "noise_std": noise_std,
            "mode": mode.label(),
        }),
    )?;
    io::write_json(&io::sidecar_path(&qpath), &meta)?;

    let mut body = format!(
        "mode={} episodes={} env_steps={}",
        mode.label(),
        report.episodes.len(),
        report.env_steps
    );
    if let Some(t) = report.late_train_return(experiments::TRAIN_RETURN_TAIL) {
        let _ = write!(body, " train_return={t:.3}");
    }
    if let Some(e) = report.final_eval {
        let _ = write!(body, " test_return={:.3}+-{:.3}", e.mean, e.std);
    }
    let _ = write!(body, " out={}", dir.display());
    print_summary(command, &body, &hash);
    Ok(())
}

fn evaluate(
    common: &Common,
    ea: &EnvArgs,
    model: Option<PathBuf>,
    random: bool,
    episodes: Option<usize>,
    horizon_cap: Option<usize>,
) -> CmdResult {
    let cfg = RunConfig::load(common.config.as_deref())?;
    if random && model.is_some() {
        return Err(usage("pass either --model or --random, not both"));
    }
    let model = if random {
        None
    } else {
        model.or(cfg.evaluate.model.clone())
    };
    if !random && model.is_none() {
        return Err(usage("evaluate needs --model or --random"));
    }
    let (net, meta_json, model_sha) = match &model {
        Some(p) => {
            let sha = file_sha256(p)?;
            let (net, meta) = Mlp::load(p)?;
            (Some(QNetwork(net)), meta, Some(sha))
        }
        None => (None, serde_json::Value::Null, None),
    };
    let env_name = ea
        .env
        .clone()
        .or(cfg.env.name.clone())
        .or_else(|| meta_json.get("env").and_then(|v| v.as_str()).map(String::from))
        .unwrap_or_else(|| DEFAULT_ENV.into());
    let noise_std = ea
        .noise_std
        .or(cfg.env.noise_std)
        .or_else(|| meta_json.get("noise_std").and_then(|v| v.as_f64()));
    let env = make_env(&env_name, noise_std)?;
    if let Some(q) = &net {
        if q.0.input_dim() != env.space().dim() || q.0.output_dim() != env.actions().len() {
            return Err(usage(format!(
                "model maps {} -> {} but {env_name} has state dim {} and {} actions",
                q.0.input_dim(),
                q.0.output_dim(),
                env.space().dim(),
                env.actions().len()
            )));
        }
    }

    #[derive(Serialize)]
    struct Run<'a> {
        command: &'a str,
        model_sha256: Option<String>,
        env: &'a str,
        noise_std: Option<f64>,
        episodes: usize,
        horizon_cap: usize,
        seed: u64,
    }
    let run = Run {
        command: "evaluate",
        model_sha256: model_sha,
        env: &env_name,
        noise_std,
        episodes: episodes.or(cfg.evaluate.episodes).unwrap_or(100),
        horizon_cap: horizon_cap.or(cfg.evaluate.horizon_cap).unwrap_or(500),
        seed: cfg.resolve_seed(common.seed)?,
    };
    if run.episodes == 0 || run.horizon_cap == 0 {
        return Err(usage("evaluate: episodes and horizon_cap must be >= 1"));
    }
    let hash = io::config_hash(&run);
    // Same stream as the trainers' final evaluation.
    let eval_seed = derive_seed(run.seed, &[tags::FINAL_EVALUATION]);
    let summary = match &net {
        Some(q) => dqn::evaluate(q, env.as_ref(), run.episodes, run.horizon_cap, eval_seed)?,
        None => dqn::evaluate_random(env.as_ref(), run.episodes, run.horizon_cap, eval_seed)?,
    };
    let out = out_path(common, &cfg, "eval.json");
    let mut text = serde_json::to_string_pretty(&json!({
        "policy": if net.is_some() { "model" } else { "random" },
        "summary": summary,
    }))
    .expect("serializable summary");
    text.push('\n');
    io::write_with_sidecar(
        &out,
        text.as_bytes(),
        &OutputMeta::new("evaluate", &run, vec![run.seed]),
    )?;
    print_summary(
        "evaluate",
        &format!(
            "policy={} episodes={} mean={:.3} std={:.3} path={}",
            if net.is_some() { "model" } else { "random" },
            summary.episodes,
            summary.mean,
            summary.std,
            out.display()
        ),
        &hash,
    );
    Ok(())
}

fn sweep(a: &SweepArgs, compare: bool) -> CmdResult {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let kind = if compare { "compare-models" } else { "sweep" };
    let defaults = SweepSpec::default();
    let explicit_seed = match (a.common.seed, cfg.seed, std::env::var_os(crate::config::SEED_ENV)) {
        (None, None, None) => None,
        _ => Some(cfg.resolve_seed(a.common.seed)?),
    };
    let seeds = a
        .seeds
        .clone()
        .or(cfg.sweep.seeds.clone())
        .or(explicit_seed.map(|s| vec![s]))
        .unwrap_or(defaults.seeds.clone());
    let mut dqn_cfg: DqnConfig = section(&cfg.dqn, "dqn")?;
    if !cfg.dqn.as_ref().is_some_and(|t| t.contains_key("episodes")) {
        dqn_cfg.episodes = defaults.dqn.episodes;
    }
    apply_dqn_flags(&mut dqn_cfg, &a.dqn);
    let spec = SweepSpec {
        env: a
            .env
            .env
            .clone()
            .or(cfg.env.name.clone())
            .unwrap_or(defaults.env.clone()),
        noise_std: a.env.noise_std.or(cfg.env.noise_std),
        n_trajectories: a
            .n
            .clone()
            .or(cfg.sweep.n_trajectories.clone())
            .unwrap_or(defaults.n_trajectories.clone()),
        seeds,
        data_horizon: a
            .data_horizon
            .or(cfg.sweep.data_horizon)
            .unwrap_or(defaults.data_horizon),
        dqn: dqn_cfg,
        regression: regression_config(&cfg, &a.regression)?,
    };
    spec.validate()?;
    let hash = io::config_hash(&spec);
    let results = if compare {
        experiments::run_model_comparison(&spec)?
    } else {
        experiments::run_sample_size_sweep(&spec)?
    };
    let dir = out_path(&a.common, &cfg, &format!("{kind}-out"));
    experiments::write_sweep_outputs(&dir, kind, &spec, &results)?;
    for r in &results.summary {
        println!(
            "  n={} variant={} runs={} failed={} train={:.3}+-{:.3} test={:.3}+-{:.3}",
            r.n,
            r.mode.label(),
            r.runs,
            r.failed,
            r.train_mean,
            r.train_std,
            r.test_mean,
            r.test_std
        );
    }
    let mut body = format!("cells={} out={}", results.cells.len(), dir.display());
    if !compare {
        let _ = write!(
            body,
            " spearman_n_test={:.3}",
            results.n_test_spearman(SimulatorMode::Residuals)
        );
    }
    print_summary(kind, &body, &hash);
    let failed: Vec<String> = results
        .cells
        .iter()
        .filter_map(|c| {
            c.result
                .as_ref()
                .err()
                .map(|e| format!("n={} seed={} {}: {e}", c.n, c.seed, c.mode.label()))
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} cell(s) failed:\n{}",
            failed.len(),
            failed.join("\n")
        )))
    }
}

fn verify(common: &Common, suite: &str, env_name: &str) -> CmdResult {
    let cfg = RunConfig::load(common.config.as_deref())?;
    if suite != "theory" {
        return Err(usage(format!("unknown suite {suite:?} (available: theory)")));
    }
    if env_name != "synthetic1d" {
        return Err(usage(format!("the theory suite runs on synthetic1d, not {env_name:?}")));
    }
    let mut tc: TheoryConfig = section(&cfg.theory, "theory")?;
    tc.seed = cfg.resolve_seed(common.seed)?;
    tc.consistency.validate()?;
    let hash = io::config_hash(&tc);
    let report = run_theory_suite(&tc)?;
    print!("{}", report.to_text());
    if let Some(out) = common.out.clone().or(cfg.output.path.clone()) {
        let mut text = serde_json::to_string_pretty(&report).expect("serializable report");
        text.push('\n');
        io::write_with_sidecar(&out, text.as_bytes(), &OutputMeta::new("verify", &tc, vec![tc.seed]))?;
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        print_summary(
            "verify",
            &format!("suite=theory checks={} all checks passed", report.checks.len()),
            &hash,
        );
        Ok(())
    } else {
        print_summary(
            "verify",
            &format!("suite=theory {failed} of {} checks failed", report.checks.len()),
            &hash,
        );
        Err(CliError::Runtime(format!("{failed} theory check(s) failed")))
    }
}
