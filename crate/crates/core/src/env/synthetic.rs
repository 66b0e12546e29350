use rand::Rng;
use rand_distr::StandardNormal;

use super::{Environment, GaussianNoise, Step};
use crate::error::{Error, Result};
use crate::mdp::{ActionSet, StateSpace, StateVector};
use crate::rng::SimRng;

pub const SYNTH_DRIFT: f64 = 0.8;
pub const SYNTH_CONTROLS: [f64; 3] = [-0.2, 0.0, 0.2];

/// One step of the linear-Gaussian test MDP on `[-1, 1]`:
/// `s' = clamp(0.8 s + u_a + noise, -1, 1)`, cost `s^2 + 0.01 u_a^2`.
pub fn synthetic1d_step(s: f64, a: usize, noise: f64) -> (f64, f64) {
    let u = SYNTH_CONTROLS[a];
    let next = (SYNTH_DRIFT * s + u + noise).clamp(-1.0, 1.0);
    (next, s * s + 0.01 * u * u)
}

/// Infinite-horizon 1-D MDP with known `f*`, used for oracle checks.
///
/// `f*` is 0.8-Lipschitz in `s` and the cost is 2-Lipschitz on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Synthetic1d {
    noise_std: f64,
    gamma: f64,
    space: StateSpace,
    actions: ActionSet,
}

impl Synthetic1d {
    pub fn with_noise_std(noise_std: f64) -> Result<Self> {
        Self::new(noise_std, 0.9)
    }

    pub fn new(noise_std: f64, gamma: f64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::invalid("synthetic1d noise_std must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid("synthetic1d gamma must lie in [0, 1)"));
        }
        Ok(Self {
            noise_std,
            gamma,
            space: StateSpace::new(vec![-1.0], vec![1.0])?,
            actions: ActionSet::from_scalars(&[
                ("left", SYNTH_CONTROLS[0]),
                ("stay", SYNTH_CONTROLS[1]),
                ("right", SYNTH_CONTROLS[2]),
            ])?,
        })
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn f_star(s: f64, a: usize) -> f64 {
        SYNTH_DRIFT * s + SYNTH_CONTROLS[a]
    }

    pub const LIPSCHITZ_F: f64 = SYNTH_DRIFT;
    pub const LIPSCHITZ_COST: f64 = 2.0;
}

impl Default for Synthetic1d {
    fn default() -> Self {
        Self::new(0.1, 0.9).expect("default synthetic1d is valid")
    }
}

impl Environment for Synthetic1d {
    fn name(&self) -> &str {
        "synthetic1d"
    }

    fn space(&self) -> &StateSpace {
        &self.space
    }

    fn actions(&self) -> &ActionSet {
        &self.actions
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn cost(&self, s: &[f64], a: usize) -> f64 {
        let u = SYNTH_CONTROLS[a];
        s[0] * s[0] + 0.01 * u * u
    }

    fn is_terminal(&self, _s: &[f64]) -> bool {
        false
    }

    fn max_steps(&self) -> Option<usize> {
        None
    }

    fn initial_state(&self, rng: &mut SimRng) -> StateVector {
        vec![rng.random_range(-1.0..=1.0)]
    }

    fn sample_noise(&self, rng: &mut SimRng) -> Vec<f64> {
        let z: f64 = rng.sample(StandardNormal);
        vec![self.noise_std * z]
    }

    fn step(&self, s: &[f64], a: usize, noise: &[f64]) -> Result<Step> {
        if s.len() != 1 {
            return Err(Error::DimensionMismatch {
                context: "synthetic1d state",
                expected: 1,
                got: s.len(),
            });
        }
        if a >= SYNTH_CONTROLS.len() {
            return Err(Error::invalid(format!("synthetic1d action must be < 3, got {a}")));
        }
        let (next, cost) = synthetic1d_step(s[0], a, noise.first().copied().unwrap_or(0.0));
        Ok(Step {
            next: vec![next],
            cost,
            done: false,
        })
    }

    fn true_mean(&self, s: &[f64], a: usize) -> Option<StateVector> {
        Some(vec![Self::f_star(s[0], a)])
    }

    fn gaussian_noise(&self) -> Option<GaussianNoise> {
        Some(GaussianNoise {
            std: vec![self.noise_std],
        })
    }
}
