//! Empirical-residual machinery: fit a next-state regression on the logged
//! data, keep the residuals `s'_i - f_hat(s_i, a_i)`, and turn the pair into a
//! transition kernel whose `N` equally weighted atoms are
//! `Proj_S(f_hat(s, a) + e_i)`.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{fit_linear, fit_mlp, FitTrace, LinearModel, Mlp, MlpFile, MlpTrainConfig};
use crate::env::{Environment, OfflineDataset, TrueDynamics};
use crate::error::{Error, Result};
use crate::io;
use crate::mdp::{StateSpace, StateVector};
use crate::rng::{self, SimRng};

/// Orthogonal projection onto a box state space.
pub fn project(space: &StateSpace, x: &[f64]) -> StateVector {
    space.project(x)
}

/// A next-state predictor `(s, a) -> f(s, a)`.
pub trait TransitionMean: Send + Sync {
    fn state_dim(&self) -> usize;
    fn predict(&self, s: &[f64], a: usize) -> StateVector;
}

/// State followed by a one-hot action code.
pub fn encode_state_action(s: &[f64], a: usize, num_actions: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.len() + num_actions);
    x.extend_from_slice(s);
    x.extend((0..num_actions).map(|k| if k == a { 1.0 } else { 0.0 }));
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionKind {
    Linear,
    Mlp,
}

/// How to fit `f_hat`. Fields irrelevant to `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub kind: RegressionKind,
    /// Ridge penalty for the linear fit. The one-hot action code is collinear
    /// with the intercept, so a small positive value keeps the system definite.
    pub ridge: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            kind: RegressionKind::Mlp,
            ridge: 1e-6,
            hidden: 64,
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

impl RegressionConfig {
    pub fn linear() -> Self {
        Self {
            kind: RegressionKind::Linear,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid("regression.ridge must be finite and >= 0"));
        }
        if self.kind == RegressionKind::Mlp {
            if self.hidden == 0 || self.batch_size == 0 {
                return Err(Error::invalid(
                    "regression.hidden and regression.batch_size must be >= 1",
                ));
            }
            if !(self.lr > 0.0 && self.lr.is_finite()) {
                return Err(Error::invalid("regression.lr must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Linear(LinearModel),
    Mlp(Mlp),
}

/// Fitted `f_hat` over the (state, one-hot action) encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub state_dim: usize,
    pub num_actions: usize,
    pub predictor: Predictor,
}

impl TransitionMean for RegressionModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn predict(&self, s: &[f64], a: usize) -> StateVector {
        let x = encode_state_action(s, a, self.num_actions);
        match &self.predictor {
            Predictor::Linear(m) => m.predict(&x),
            Predictor::Mlp(net) => net.forward_batch(&x, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ModelFileBody {
    Linear { model: LinearModel },
    Mlp { network: MlpFile },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    state_dim: usize,
    num_actions: usize,
    body: ModelFileBody,
    #[serde(default)]
    metadata: serde_json::Value,
}

impl RegressionModel {
    pub fn save(&self, path: &Path, metadata: serde_json::Value) -> Result<()> {
        let body = match &self.predictor {
            Predictor::Linear(m) => ModelFileBody::Linear { model: m.clone() },
            Predictor::Mlp(net) => ModelFileBody::Mlp {
                network: net.to_file(serde_json::Value::Null),
            },
        };
        io::write_json(
            path,
            &ModelFile {
                state_dim: self.state_dim,
                num_actions: self.num_actions,
                body,
                metadata,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let predictor = match file.body {
            ModelFileBody::Linear { model } => Predictor::Linear(model),
            ModelFileBody::Mlp { network } => Predictor::Mlp(network.into_mlp()?.0),
        };
        let model = Self {
            state_dim: file.state_dim,
            num_actions: file.num_actions,
            predictor,
        };
        let (din, dout) = match &model.predictor {
            Predictor::Linear(m) => (m.in_dim, m.out_dim),
            Predictor::Mlp(n) => (n.input_dim(), n.output_dim()),
        };
        if din != model.state_dim + model.num_actions || dout != model.state_dim {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: 0,
                message: format!("model shape {din}->{dout} inconsistent with state/action dims"),
            });
        }
        Ok(model)
    }
}

/// Fits `f_hat` on `(s_i, a_i) -> s'_i` by least squares (linear) or minibatch Adam (MLP).
pub fn fit_regression(
    dataset: &OfflineDataset,
    cfg: &RegressionConfig,
    seed: u64,
) -> Result<(RegressionModel, Option<FitTrace>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot fit a regression on an empty dataset"));
    }
    let state_dim = dataset.state_dim();
    let num_actions = dataset.meta.num_actions;
    let xs: Vec<Vec<f64>> = dataset
        .samples
        .iter()
        .map(|t| encode_state_action(&t.s, t.a, num_actions))
        .collect();
    let ys: Vec<Vec<f64>> = dataset.samples.iter().map(|t| t.s_next.clone()).collect();
    let (predictor, trace) = match cfg.kind {
        RegressionKind::Linear => (Predictor::Linear(fit_linear(&xs, &ys, cfg.ridge)?), None),
        RegressionKind::Mlp => {
            let sizes = [state_dim + num_actions, cfg.hidden, state_dim];
            let mut init_rng = rng::stream(seed, &[rng::tags::REGRESSION, 0]);
            let net0 = Mlp::init(&sizes, &mut init_rng)?;
            let train = MlpTrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                seed: rng::derive_seed(seed, &[rng::tags::REGRESSION, 1]),
            };
            let (net, trace) = fit_mlp(&net0, &xs, &ys, &train)?;
            (Predictor::Mlp(net), Some(trace))
        }
    };
    Ok((
        RegressionModel {
            state_dim,
            num_actions,
            predictor,
        },
        trace,
    ))
}

/// Residuals `e_i = s'_i - f(s_i, a_i)` in dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualSet {
    pub residuals: Vec<StateVector>,
    #[serde(default)]
    pub source: String,
}

impl ResidualSet {
    pub fn new(residuals: Vec<StateVector>, source: impl Into<String>) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::EmptySupport);
        }
        let d = residuals[0].len();
        if residuals.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("residuals must share one dimension"));
        }
        Ok(Self {
            residuals,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.residuals[0].len()
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            residuals: vec![vec![0.0; dim]; n],
            source: "zeros".into(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let set: ResidualSet = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::new(set.residuals, set.source)
    }
}

pub fn compute_residuals(model: &dyn TransitionMean, dataset: &OfflineDataset) -> Result<ResidualSet> {
    if model.state_dim() != dataset.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "model vs dataset state dimension",
            expected: dataset.state_dim(),
            got: model.state_dim(),
        });
    }
    let residuals = dataset
        .samples
        .iter()
        .map(|t| {
            let pred = model.predict(&t.s, t.a);
            t.s_next.iter().zip(&pred).map(|(y, p)| y - p).collect()
        })
        .collect();
    ResidualSet::new(residuals, format!("{}:{}", dataset.meta.env, dataset.meta.seed))
}

/// Residuals of the true dynamics, `e_i = s'_i - f*(s_i, a_i)`.
pub fn true_residuals(env: Arc<dyn Environment>, dataset: &OfflineDataset) -> Result<ResidualSet> {
    if env.true_mean(&dataset.samples[0].s, dataset.samples[0].a).is_none() {
        return Err(Error::invalid(format!(
            "environment {} has no closed-form f*",
            env.name()
        )));
    }
    compute_residuals(&TrueDynamics(env), dataset)
}

/// `(1/N) sum_i delta_{Proj_S(f(s, a) + e_i)}`.
#[derive(Clone)]
pub struct EmpiricalKernel {
    mean: Arc<dyn TransitionMean>,
    residuals: ResidualSet,
    space: StateSpace,
}

impl std::fmt::Debug for EmpiricalKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmpiricalKernel")
            .field("atoms", &self.residuals.len())
            .field("space", &self.space)
            .finish_non_exhaustive()
    }
}

impl EmpiricalKernel {
    pub fn new(mean: Arc<dyn TransitionMean>, residuals: ResidualSet, space: StateSpace) -> Result<Self> {
        if residuals.dim() != space.dim() || mean.state_dim() != space.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel dimensions",
                expected: space.dim(),
                got: residuals.dim(),
            });
        }
        Ok(Self { mean, residuals, space })
    }

    pub fn num_atoms(&self) -> usize {
        self.residuals.len()
    }

    pub fn residuals(&self) -> &ResidualSet {
        &self.residuals
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn mean(&self) -> &dyn TransitionMean {
        self.mean.as_ref()
    }

    pub fn predict(&self, s: &[f64], a: usize) -> StateVector {
        self.mean.predict(s, a)
    }

    fn atom(&self, center: &[f64], i: usize) -> StateVector {
        let mut x: StateVector = center
            .iter()
            .zip(&self.residuals.residuals[i])
            .map(|(c, e)| c + e)
            .collect();
        self.space.project_in_place(&mut x);
        debug_assert!(self.space.contains(&x));
        x
    }

    /// All `N` atoms at `(s, a)`, in residual order.
    pub fn support(&self, s: &[f64], a: usize) -> Vec<StateVector> {
        let center = self.mean.predict(s, a);
        (0..self.num_atoms()).map(|i| self.atom(&center, i)).collect()
    }

    /// One atom drawn uniformly with replacement.
    pub fn sample(&self, s: &[f64], a: usize, rng: &mut SimRng) -> StateVector {
        let i = rng.random_range(0..self.num_atoms());
        let center = self.mean.predict(s, a);
        self.atom(&center, i)
    }

    /// `Proj_S(f(s, a))`, the point prediction with no residual.
    pub fn point(&self, s: &[f64], a: usize) -> StateVector {
        self.space.project(&self.mean.predict(s, a))
    }
}

pub fn kernel_support(kernel: &EmpiricalKernel, s: &[f64], a: usize) -> Vec<StateVector> {
    kernel.support(s, a)
}

pub fn kernel_sample(kernel: &EmpiricalKernel, s: &[f64], a: usize, rng: &mut SimRng) -> StateVector {
    kernel.sample(s, a, rng)
}

/// Kernel built from the true transition function and true noise realizations.
pub fn full_information_kernel(
    f_star: Arc<dyn TransitionMean>,
    true_residuals: ResidualSet,
    space: StateSpace,
) -> Result<EmpiricalKernel> {
    EmpiricalKernel::new(f_star, true_residuals, space)
}
