use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mdp::QFunction;
use crate::rng::{self, SimRng};

/// Mean and sample standard deviation of undiscounted episode returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
}

impl EvalSummary {
    pub fn from_returns(returns: &[f64]) -> Self {
        let n = returns.len();
        let mean = returns.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { episodes: n, mean, std }
    }
}

/// Rolls `policy` out in the true environment. Episode `k` draws its initial
/// state and noise from stream `[k]` of `seed`; `policy` receives the same rng.
pub fn evaluate_policy<P>(
    mut policy: P,
    env: &dyn Environment,
    episodes: usize,
    horizon_cap: usize,
    seed: u64,
) -> Result<EvalSummary>
where
    P: FnMut(&[f64], &mut SimRng) -> usize,
{
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let cap = env.max_steps().map_or(horizon_cap, |m| m.min(horizon_cap));
    let mut returns = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut rng = rng::stream(seed, &[k as u64]);
        let mut s = env.initial_state(&mut rng);
        let mut total = 0.0;
        for _ in 0..cap {
            let a = policy(&s, &mut rng);
            let noise = env.sample_noise(&mut rng);
            let step = env.step(&s, a, &noise)?;
            total += env.reward(step.cost);
            s = step.next;
            if step.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(EvalSummary::from_returns(&returns))
}

/// Greedy (`epsilon = 0`) evaluation of a Q-function.
pub fn evaluate<Q: QFunction>(
    q: &Q,
    env: &dyn Environment,
    episodes: usize,
    horizon_cap: usize,
    seed: u64,
) -> Result<EvalSummary> {
    evaluate_policy(|s, _| q.min_action(s).0, env, episodes, horizon_cap, seed)
}

/// Uniform random actions, for sanity baselines.
pub fn evaluate_random(env: &dyn Environment, episodes: usize, horizon_cap: usize, seed: u64) -> Result<EvalSummary> {
    let n = env.actions().len();
    evaluate_policy(|_, rng| rng.random_range(0..n), env, episodes, horizon_cap, seed)
}
