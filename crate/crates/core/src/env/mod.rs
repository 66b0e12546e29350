//! Ground-truth simulators and offline data collection.
//!
//! An [`Environment`] factors its transition as `s' = g(s, a, noise)` with all
//! randomness carried by the noise draw, so stepping is a pure function.

mod cartpole;
mod dataset;
mod synthetic;

use std::sync::Arc;

pub use cartpole::{cartpole_step, CartPole, CartPoleParams};
pub use dataset::{generate_dataset, BehaviorPolicy, DatasetMeta, OfflineDataset, TransitionSample};
pub use synthetic::{synthetic1d_step, Synthetic1d};

use crate::error::{Error, Result};
use crate::mdp::{ActionSet, DiscountedProblem, StateSpace, StateVector};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: StateVector,
    pub cost: f64,
    pub done: bool,
}

/// Additive Gaussian noise on selected state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNoise {
    /// Per-coordinate standard deviation; zero means the coordinate is noiseless.
    pub std: Vec<f64>,
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &str;
    fn space(&self) -> &StateSpace;
    fn actions(&self) -> &ActionSet;
    fn gamma(&self) -> f64;

    /// Immediate cost `c(s, a)`.
    fn cost(&self, s: &[f64], a: usize) -> f64;

    /// Absorbing-state test applied to a successor.
    fn is_terminal(&self, s: &[f64]) -> bool;

    /// Episode step cap used when rolling out; `None` for infinite-horizon envs.
    fn max_steps(&self) -> Option<usize>;

    fn initial_state(&self, rng: &mut SimRng) -> StateVector;

    fn sample_noise(&self, rng: &mut SimRng) -> Vec<f64>;

    fn step(&self, s: &[f64], a: usize, noise: &[f64]) -> Result<Step>;

    /// The true mean transition `f*(s, a)` when it is known in closed form.
    fn true_mean(&self, _s: &[f64], _a: usize) -> Option<StateVector> {
        None
    }

    /// The noise law when it is additive Gaussian (used by quadrature oracles).
    fn gaussian_noise(&self) -> Option<GaussianNoise> {
        None
    }

    /// Reward convention for reporting: rewards are negated costs.
    fn reward(&self, cost: f64) -> f64 {
        -cost
    }
}

/// Builds the discounted cost problem `(S, A, c, gamma)` of an environment.
pub fn problem_of(env: Arc<dyn Environment>) -> Result<DiscountedProblem> {
    let gamma = env.gamma();
    problem_with_gamma(env, gamma)
}

pub fn problem_with_gamma(env: Arc<dyn Environment>, gamma: f64) -> Result<DiscountedProblem> {
    let space = env.space().clone();
    let actions = env.actions().clone();
    DiscountedProblem::new(space, actions, Arc::new(move |s: &[f64], a| env.cost(s, a)), gamma)
}

/// Named constructor used by configuration layers.
pub fn by_name(name: &str, noise_std: Option<f64>) -> Result<Arc<dyn Environment>> {
    match name {
        "synthetic1d" => Ok(Arc::new(match noise_std {
            Some(sd) => Synthetic1d::with_noise_std(sd)?,
            None => Synthetic1d::default(),
        })),
        "cartpole" => {
            let mut params = CartPoleParams::default();
            if let Some(sd) = noise_std {
                params.noise_std = sd;
            }
            Ok(Arc::new(CartPole::new(params)?))
        }
        other => Err(Error::invalid(format!(
            "unknown environment {other:?} (expected synthetic1d or cartpole)"
        ))),
    }
}

/// True transition mean of an environment, as a regression-compatible predictor.
pub struct TrueDynamics(pub Arc<dyn Environment>);

impl crate::residual::TransitionMean for TrueDynamics {
    fn state_dim(&self) -> usize {
        self.0.space().dim()
    }

    fn predict(&self, s: &[f64], a: usize) -> StateVector {
        self.0
            .true_mean(s, a)
            .expect("TrueDynamics requires an environment with known f*")
    }
}
