use rand::Rng;
use rand_distr::StandardNormal;

use super::{Environment, GaussianNoise, Step};
use crate::error::{Error, Result};
use crate::mdp::{ActionSet, StateSpace, StateVector};
use crate::rng::SimRng;

/// Classic cart-pole constants plus the position-noise scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub masscart: f64,
    pub masspole: f64,
    /// Half the pole length.
    pub length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
    pub max_steps: usize,
    /// Standard deviation of the Gaussian perturbation of the cart position.
    pub noise_std: f64,
    pub gamma: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            masscart: 1.0,
            masspole: 0.1,
            length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * std::f64::consts::PI / 180.0,
            max_steps: 500,
            // N(0, 0.25) read as a variance.
            noise_std: 0.5,
            gamma: 0.99,
        }
    }
}

/// Explicit-Euler cart-pole step followed by additive noise on `x`.
///
/// State is `(x, x_dot, theta, theta_dot)`; action 0 pushes left, 1 pushes right.
/// Returns the raw successor (not projected) and whether it is terminal.
pub fn cartpole_step(p: &CartPoleParams, s: &[f64], a: usize, noise: f64) -> Result<(StateVector, bool)> {
    if s.len() != 4 {
        return Err(Error::DimensionMismatch {
            context: "cartpole state",
            expected: 4,
            got: s.len(),
        });
    }
    if a > 1 {
        return Err(Error::invalid(format!("cartpole action must be 0 or 1, got {a}")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericBlowup(s.to_vec()));
    }
    let (x, x_dot, theta, theta_dot) = (s[0], s[1], s[2], s[3]);
    let force = if a == 1 { p.force_mag } else { -p.force_mag };
    let total_mass = p.masscart + p.masspole;
    let polemass_length = p.masspole * p.length;
    let (sin_t, cos_t) = theta.sin_cos();

    let temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
    let theta_acc =
        (p.gravity * sin_t - cos_t * temp) / (p.length * (4.0 / 3.0 - p.masspole * cos_t * cos_t / total_mass));
    let x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

    let next = vec![
        x + p.tau * x_dot + noise,
        x_dot + p.tau * x_acc,
        theta + p.tau * theta_dot,
        theta_dot + p.tau * theta_acc,
    ];
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericBlowup(next));
    }
    let done = next[0].abs() > p.x_threshold || next[2].abs() > p.theta_threshold;
    Ok((next, done))
}

/// Stochastic cart-pole with reward 1 per step, expressed as cost -1.
#[derive(Debug, Clone)]
pub struct CartPole {
    params: CartPoleParams,
    space: StateSpace,
    actions: ActionSet,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Result<Self> {
        if !(params.noise_std >= 0.0 && params.noise_std.is_finite()) {
            return Err(Error::invalid("cartpole noise_std must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&params.gamma) {
            return Err(Error::invalid("cartpole gamma must lie in [0, 1)"));
        }
        let space = StateSpace::new(vec![-4.8, -10.0, -0.418, -10.0], vec![4.8, 10.0, 0.418, 10.0])?;
        let actions = ActionSet::from_scalars(&[("push_left", -params.force_mag), ("push_right", params.force_mag)])?;
        Ok(Self { params, space, actions })
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new(CartPoleParams::default()).expect("default cartpole params are valid")
    }
}

impl Environment for CartPole {
    fn name(&self) -> &str {
        "cartpole"
    }

    fn space(&self) -> &StateSpace {
        &self.space
    }

    fn actions(&self) -> &ActionSet {
        &self.actions
    }

    fn gamma(&self) -> f64 {
        self.params.gamma
    }

    fn cost(&self, _s: &[f64], _a: usize) -> f64 {
        -1.0
    }

    fn is_terminal(&self, s: &[f64]) -> bool {
        s[0].abs() > self.params.x_threshold || s[2].abs() > self.params.theta_threshold
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.params.max_steps)
    }

    fn initial_state(&self, rng: &mut SimRng) -> StateVector {
        (0..4).map(|_| rng.random_range(-0.05..0.05)).collect()
    }

    fn sample_noise(&self, rng: &mut SimRng) -> Vec<f64> {
        let z: f64 = rng.sample(StandardNormal);
        vec![self.params.noise_std * z]
    }

    fn step(&self, s: &[f64], a: usize, noise: &[f64]) -> Result<Step> {
        let (next, done) = cartpole_step(&self.params, s, a, noise.first().copied().unwrap_or(0.0))?;
        Ok(Step {
            next,
            cost: self.cost(s, a),
            done,
        })
    }

    fn gaussian_noise(&self) -> Option<GaussianNoise> {
        Some(GaussianNoise {
            std: vec![self.params.noise_std, 0.0, 0.0, 0.0],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent transcription of the textbook cart-pole equations
    /// (Barto, Sutton & Anderson form) for a single step.
    fn reference_step(s: [f64; 4], force: f64) -> [f64; 4] {
        let (g, mc, mp, l, dt) = (9.8, 1.0, 0.1, 0.5, 0.02);
        let [x, v, th, w] = s;
        let m = mc + mp;
        let num = g * th.sin() + th.cos() * ((-force - mp * l * w * w * th.sin()) / m);
        let den = l * (4.0 / 3.0 - mp * th.cos().powi(2) / m);
        let th_acc = num / den;
        let x_acc = (force + mp * l * (w * w * th.sin() - th_acc * th.cos())) / m;
        [x + dt * v, v + dt * x_acc, th + dt * w, w + dt * th_acc]
    }

    #[test]
    fn push_right_from_rest() {
        let p = CartPoleParams::default();
        let (next, done) = cartpole_step(&p, &[0.0; 4], 1, 0.0).unwrap();
        assert!(!done);
        let expect = reference_step([0.0; 4], 10.0);
        for (a, b) in next.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{next:?} vs {expect:?}");
        }
        // From rest: x_acc = 10 / (1.1 - 0.1 * 0.75 * ...) > 0 and theta_acc < 0.
        assert!(next[1] > 0.0);
        assert!(next[3] < 0.0);
        assert_eq!(next[0], 0.0);
        assert_eq!(next[2], 0.0);
        // Hand value: theta_acc = -(10/1.1) / (0.5 * (4/3 - 0.1/1.1)) = -14.634...
        let theta_acc = -(10.0 / 1.1) / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        assert!((next[3] - 0.02 * theta_acc).abs() < 1e-14);
    }

    #[test]
    fn matches_reference_on_random_states() {
        use rand::Rng;
        let p = CartPoleParams::default();
        let mut rng = crate::rng::rng_from_seed(3);
        for _ in 0..200 {
            let s = [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-0.2..0.2),
                rng.random_range(-2.0..2.0),
            ];
            let a = rng.random_range(0..2usize);
            let (next, _) = cartpole_step(&p, &s, a, 0.0).unwrap();
            let r = reference_step(s, if a == 1 { 10.0 } else { -10.0 });
            for (x, y) in next.iter().zip(r) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tilted_pole_terminates_for_any_action() {
        let p = CartPoleParams::default();
        let th = 13.0 * std::f64::consts::PI / 180.0;
        for a in 0..2 {
            let (_, done) = cartpole_step(&p, &[0.0, 0.0, th, 0.0], a, 0.0).unwrap();
            assert!(done);
        }
    }

    #[test]
    fn noise_shifts_only_position_and_is_deterministic() {
        let p = CartPoleParams::default();
        let s = [0.1, -0.2, 0.03, 0.1];
        let (a, _) = cartpole_step(&p, &s, 0, 0.0).unwrap();
        let (b, _) = cartpole_step(&p, &s, 0, 0.37).unwrap();
        let (c, _) = cartpole_step(&p, &s, 0, 0.37).unwrap();
        assert_eq!(b, c);
        assert!((b[0] - a[0] - 0.37).abs() < 1e-15);
        assert_eq!(&a[1..], &b[1..]);
    }

    #[test]
    fn errors() {
        let p = CartPoleParams::default();
        assert!(matches!(
            cartpole_step(&p, &[f64::NAN, 0.0, 0.0, 0.0], 0, 0.0),
            Err(Error::NumericBlowup(_))
        ));
        assert!(cartpole_step(&p, &[0.0; 3], 0, 0.0).is_err());
        assert!(cartpole_step(&p, &[0.0; 4], 2, 0.0).is_err());
    }
}
