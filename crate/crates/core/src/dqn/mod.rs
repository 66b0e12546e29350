//! Offline deep Q-learning inside a simulator built from a fitted model and
//! its empirical residuals.

mod eval;
mod replay;

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{AdamConfig, AdamState, FitTrace, Mlp};
use crate::env::{Environment, OfflineDataset, TransitionSample};
use crate::error::{Error, Result};
use crate::mdp::{argmin, QFunction};
use crate::residual::{compute_residuals, fit_regression, EmpiricalKernel, RegressionConfig, ResidualSet};
use crate::rng::{self, tags};

pub use eval::{evaluate, evaluate_policy, evaluate_random, EvalSummary};
pub use replay::ReplayMemory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_min: f64,
    /// Decay constant in environment steps.
    pub eps_decay: f64,
    pub batch_size: usize,
    /// Gradient steps between hard target-network copies.
    pub target_sync: usize,
    pub episodes: usize,
    pub horizon_cap: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    /// Evaluate in the true environment every this many episodes (0 disables).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Greedy episodes for the evaluation after training (0 disables).
    pub final_eval_episodes: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-4,
            eps_start: 0.9,
            eps_min: 0.01,
            eps_decay: 2000.0,
            batch_size: 128,
            target_sync: 500,
            episodes: 1000,
            horizon_cap: 500,
            replay_capacity: 10_000,
            hidden: vec![64, 64],
            eval_every: 10,
            eval_episodes: 20,
            final_eval_episodes: 100,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("dqn.{m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(&format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(&format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.eps_min > 0.0 && self.eps_min <= self.eps_start && self.eps_start <= 1.0) {
            return fail("epsilon must satisfy 0 < eps_min <= eps_start <= 1");
        }
        if !(self.eps_decay > 0.0 && self.eps_decay.is_finite()) {
            return fail("eps_decay must be > 0");
        }
        if self.batch_size == 0 || self.target_sync == 0 {
            return fail("batch_size and target_sync must be >= 1");
        }
        if self.horizon_cap == 0 || self.replay_capacity == 0 {
            return fail("horizon_cap and replay_capacity must be >= 1");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return fail("hidden layer widths must be >= 1");
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return fail("eval_episodes must be >= 1 when eval_every > 0");
        }
        Ok(())
    }
}

/// `max(eps_min, eps_start * exp(-step / eps_decay))`.
pub fn epsilon_at(step: u64, cfg: &DqnConfig) -> f64 {
    (cfg.eps_start * (-(step as f64) / cfg.eps_decay).exp()).max(cfg.eps_min)
}

/// Q-network mapping a state to one value per action.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork(pub Mlp);

impl QNetwork {
    pub fn init(state_dim: usize, num_actions: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(num_actions);
        Ok(Self(Mlp::init(&sizes, &mut rng::stream(seed, &[tags::QNET_INIT]))?))
    }

    pub fn q_values(&self, s: &[f64]) -> Vec<f64> {
        self.0.forward_batch(s, 1)
    }
}

impl QFunction for QNetwork {
    fn num_actions(&self) -> usize {
        self.0.output_dim()
    }

    fn eval(&self, s: &[f64], a: usize) -> f64 {
        self.q_values(s)[a]
    }

    fn min_action(&self, s: &[f64]) -> (usize, f64) {
        argmin(self.q_values(s))
    }
}

/// `y_j = c_j + gamma * min_a' Q_target(s'_j, a')`, or `c_j` on terminal transitions.
pub fn td_targets(target: &Mlp, batch: &[&TransitionSample], gamma: f64) -> Vec<f64> {
    let width = target.output_dim();
    let next: Vec<f64> = batch.iter().flat_map(|t| t.s_next.iter().copied()).collect();
    let q_next = target.forward_batch(&next, batch.len());
    batch
        .iter()
        .enumerate()
        .map(|(j, t)| {
            if t.done {
                t.c
            } else {
                let row = &q_next[j * width..(j + 1) * width];
                t.c + gamma * row.iter().copied().fold(f64::INFINITY, f64::min)
            }
        })
        .collect()
}

/// Online and target networks with their optimizer state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub online: Mlp,
    pub target: Mlp,
    adam: AdamState,
    gamma: f64,
    target_sync: usize,
    grad_steps: u64,
    syncs: u64,
}

impl Learner {
    pub fn new(net: Mlp, gamma: f64, lr: f64, target_sync: usize) -> Self {
        Self {
            target: net.clone(),
            adam: AdamState::new(net.num_params(), AdamConfig::with_lr(lr)),
            online: net,
            gamma,
            target_sync,
            grad_steps: 0,
            syncs: 0,
        }
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    /// One Adam step on the squared TD error of `batch`; copies the online
    /// network into the target every `target_sync` steps. Returns the loss.
    pub fn update(&mut self, batch: &[&TransitionSample]) -> Result<f64> {
        let y = td_targets(&self.target, batch, self.gamma);
        let inputs: Vec<f64> = batch.iter().flat_map(|t| t.s.iter().copied()).collect();
        let cols: Vec<usize> = batch.iter().map(|t| t.a).collect();
        let (loss, grads) = self.online.selected_mse_grad(&inputs, &cols, &y);
        if !loss.is_finite() {
            return Err(Error::NumericBlowup(vec![loss]));
        }
        self.adam.step(self.online.params_mut(), &grads)?;
        self.grad_steps += 1;
        if self.grad_steps % self.target_sync as u64 == 0 {
            self.target = self.online.clone();
            self.syncs += 1;
        }
        Ok(loss)
    }
}

/// How the simulator produces `s_{t+1}` from `(s_t, a_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulatorMode {
    /// `Proj_S(f_hat(s, a) + e_I)` with `I` uniform over the residuals.
    Residuals,
    /// `Proj_S(f_hat(s, a))`, no residual.
    PointPrediction,
}

impl SimulatorMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::Residuals => "residuals",
            Self::PointPrediction => "no-residuals",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: usize,
    pub train_return: f64,
    pub eval: Option<EvalSummary>,
    /// Mean minibatch loss over the episode's updates, if any.
    pub loss_mean: Option<f64>,
    /// Exploration rate at the episode's last step.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: SimulatorMode,
    pub config: DqnConfig,
    pub regression: Option<RegressionConfig>,
    pub regression_fit: Option<FitTrace>,
    pub episodes: Vec<EpisodeRecord>,
    pub final_eval: Option<EvalSummary>,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub target_syncs: u64,
    /// Zero unless timing was requested, so reports stay reproducible.
    pub wall_ms: u64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "episode,train_return,eval_return_mean,eval_return_std,loss_mean,epsilon";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.episodes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:e}",
                r.episode,
                r.train_return,
                opt(r.eval.map(|e| e.mean)),
                opt(r.eval.map(|e| e.std)),
                opt(r.loss_mean),
                r.epsilon
            );
        }
        out
    }

    /// Mean simulator return over the final `frac` of episodes (at least one).
    pub fn late_train_return(&self, frac: f64) -> Option<f64> {
        if self.episodes.is_empty() {
            return None;
        }
        let k = ((self.episodes.len() as f64 * frac).ceil() as usize).clamp(1, self.episodes.len());
        let tail = &self.episodes[self.episodes.len() - k..];
        Some(tail.iter().map(|r| r.train_return).sum::<f64>() / k as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub q: QNetwork,
    pub kernel: EmpiricalKernel,
    pub report: TrainReport,
}

/// Fits `f_hat` and the residuals on `dataset`, the shared first step of both trainers.
pub fn build_kernel(
    dataset: &OfflineDataset,
    env: &dyn Environment,
    regression: &RegressionConfig,
    seed: u64,
) -> Result<(EmpiricalKernel, Option<FitTrace>)> {
    if dataset.is_empty() {
        return Err(Error::invalid("training needs a nonempty dataset"));
    }
    if dataset.state_dim() != env.space().dim() || dataset.meta.num_actions != env.actions().len() {
        return Err(Error::DimensionMismatch {
            context: "dataset vs environment state dimension",
            expected: env.space().dim(),
            got: dataset.state_dim(),
        });
    }
    let (model, trace) = fit_regression(dataset, regression, rng::derive_seed(seed, &[tags::REGRESSION]))?;
    let residuals: ResidualSet = compute_residuals(&model, dataset)?;
    Ok((
        EmpiricalKernel::new(Arc::new(model), residuals, env.space().clone())?,
        trace,
    ))
}

/// Residuals-based offline DQN.
pub fn train(
    dataset: &OfflineDataset,
    env: &dyn Environment,
    cfg: &DqnConfig,
    regression: &RegressionConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (kernel, trace) = build_kernel(dataset, env, regression, cfg.seed)?;
    let mut out = train_in_simulator(kernel, env, cfg, SimulatorMode::Residuals, false)?;
    out.report.regression = Some(regression.clone());
    out.report.regression_fit = trace;
    Ok(out)
}

/// Same as [`train`] but the simulator uses the point prediction only.
pub fn train_baseline_no_residuals(
    dataset: &OfflineDataset,
    env: &dyn Environment,
    cfg: &DqnConfig,
    regression: &RegressionConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (kernel, trace) = build_kernel(dataset, env, regression, cfg.seed)?;
    let mut out = train_in_simulator(kernel, env, cfg, SimulatorMode::PointPrediction, false)?;
    out.report.regression = Some(regression.clone());
    out.report.regression_fit = trace;
    Ok(out)
}

/// The training loop proper, given an already-built simulator.
///
/// Episode `e` draws exploration, initial state and minibatches from stream
/// `[AGENT, e]` and residual indices from `[SIMULATOR, e]`, so the two
/// simulator modes consume identical agent randomness.
pub fn train_in_simulator(
    kernel: EmpiricalKernel,
    env: &dyn Environment,
    cfg: &DqnConfig,
    mode: SimulatorMode,
    record_time: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let space = env.space().clone();
    let n_actions = env.actions().len();
    let q0 = QNetwork::init(space.dim(), n_actions, &cfg.hidden, cfg.seed)?;
    let mut learner = Learner::new(q0.0, cfg.gamma, cfg.lr, cfg.target_sync);
    let mut replay = ReplayMemory::new(cfg.replay_capacity)?;
    let cap = env.max_steps().map_or(cfg.horizon_cap, |m| m.min(cfg.horizon_cap));
    let mut env_steps: u64 = 0;
    let mut records = Vec::with_capacity(cfg.episodes);

    for ep in 0..cfg.episodes {
        let mut agent = rng::stream(cfg.seed, &[tags::AGENT, ep as u64]);
        let mut sim = rng::stream(cfg.seed, &[tags::SIMULATOR, ep as u64]);
        let mut s = env.initial_state(&mut agent);
        let (mut total, mut steps, mut loss_sum, mut updates) = (0.0, 0, 0.0, 0usize);
        let mut eps = epsilon_at(env_steps, cfg);
        for _ in 0..cap {
            eps = epsilon_at(env_steps, cfg);
            let explore = agent.random::<f64>() < eps;
            let a = if explore {
                agent.random_range(0..n_actions)
            } else {
                argmin(learner.online.forward_batch(&s, 1)).0
            };
            let s_next = match mode {
                SimulatorMode::Residuals => kernel.sample(&s, a, &mut sim),
                SimulatorMode::PointPrediction => kernel.point(&s, a),
            };
            space.check(&s_next)?;
            let c = env.cost(&s, a);
            let done = env.is_terminal(&s_next);
            total += env.reward(c);
            steps += 1;
            env_steps += 1;
            replay.push(TransitionSample {
                s: std::mem::take(&mut s),
                a,
                c,
                s_next: s_next.clone(),
                done,
            });
            if let Some(batch) = replay.sample(cfg.batch_size, &mut agent) {
                loss_sum += learner.update(&batch)?;
                updates += 1;
            }
            s = s_next;
            if done {
                break;
            }
        }
        let eval = if cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0 {
            let q = QNetwork(learner.online.clone());
            let seed = rng::derive_seed(cfg.seed, &[tags::EVALUATION, ep as u64]);
            Some(evaluate(&q, env, cfg.eval_episodes, cfg.horizon_cap, seed)?)
        } else {
            None
        };
        records.push(EpisodeRecord {
            episode: ep,
            steps,
            train_return: total,
            eval,
            loss_mean: (updates > 0).then(|| loss_sum / updates as f64),
            epsilon: eps,
        });
    }

    let q = QNetwork(learner.online.clone());
    let final_eval = if cfg.final_eval_episodes > 0 && cfg.episodes > 0 {
        let seed = rng::derive_seed(cfg.seed, &[tags::FINAL_EVALUATION]);
        Some(evaluate(&q, env, cfg.final_eval_episodes, cfg.horizon_cap, seed)?)
    } else {
        None
    };
    let report = TrainReport {
        mode,
        config: cfg.clone(),
        regression: None,
        regression_fit: None,
        episodes: records,
        final_eval,
        env_steps,
        grad_steps: learner.grad_steps(),
        target_syncs: learner.syncs(),
        wall_ms: if record_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        },
    };
    Ok(TrainOutcome { q, kernel, report })
}
