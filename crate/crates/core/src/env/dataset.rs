use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{Error, Result};
use crate::io;
use crate::mdp::StateVector;
use crate::rng::{self, SimRng};

/// One logged transition `(s, a, c, s', done)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSample {
    pub s: StateVector,
    pub a: usize,
    pub c: f64,
    pub s_next: StateVector,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorPolicy {
    UniformRandom,
}

impl BehaviorPolicy {
    pub fn act(&self, num_actions: usize, rng: &mut SimRng) -> usize {
        match self {
            BehaviorPolicy::UniformRandom => rng.random_range(0..num_actions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub env: String,
    pub behavior: BehaviorPolicy,
    pub seed: u64,
    pub n_trajectories: usize,
    pub horizon_cap: usize,
    pub num_samples: usize,
    pub state_dim: usize,
    pub num_actions: usize,
    pub episode_lengths: Vec<usize>,
    /// Largest per-coordinate noise std of the generating environment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// The fixed batch `D_N` plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub samples: Vec<TransitionSample>,
    pub meta: DatasetMeta,
}

/// Rolls out `n_trajectories` episodes of at most `horizon_cap` steps under
/// `behavior`. Trajectory `i` uses its own stream derived from `seed`.
///
/// Successors are projected onto the state space before recording, and an
/// episode stops early on a terminal successor or the environment's own cap.
pub fn generate_dataset(
    env: &dyn Environment,
    behavior: BehaviorPolicy,
    n_trajectories: usize,
    horizon_cap: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_trajectories == 0 {
        return Err(Error::invalid("n_trajectories must be >= 1"));
    }
    if horizon_cap == 0 {
        return Err(Error::invalid("horizon_cap must be >= 1"));
    }
    let cap = env.max_steps().map_or(horizon_cap, |m| m.min(horizon_cap));
    let num_actions = env.actions().len();
    let mut samples = Vec::new();
    let mut episode_lengths = Vec::with_capacity(n_trajectories);
    for traj in 0..n_trajectories {
        let mut rng = rng::stream(seed, &[rng::tags::DATASET, traj as u64]);
        let mut s = env.initial_state(&mut rng);
        let mut len = 0;
        for _ in 0..cap {
            let a = behavior.act(num_actions, &mut rng);
            let noise = env.sample_noise(&mut rng);
            let step = env.step(&s, a, &noise)?;
            let next = env.space().project(&step.next);
            samples.push(TransitionSample {
                s: s.clone(),
                a,
                c: step.cost,
                s_next: next.clone(),
                done: step.done,
            });
            len += 1;
            if step.done {
                break;
            }
            s = next;
        }
        episode_lengths.push(len);
    }
    Ok(OfflineDataset {
        meta: DatasetMeta {
            env: env.name().to_string(),
            behavior,
            seed,
            n_trajectories,
            horizon_cap,
            num_samples: samples.len(),
            state_dim: env.space().dim(),
            num_actions,
            episode_lengths,
            noise_std: env.gaussian_noise().map(|g| g.std.iter().copied().fold(0.0, f64::max)),
            config_hash: None,
        },
        samples,
    })
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.meta.state_dim
    }

    /// Keeps the first `n` samples (used to hit an exact sample count).
    pub fn truncated(mut self, n: usize) -> Self {
        self.samples.truncate(n);
        self.meta.num_samples = self.samples.len();
        self
    }

    /// JSON Lines body, one transition per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 96);
        for s in &self.samples {
            let line = serde_json::to_string(s).expect("serializable sample");
            writeln!(out, "{line}").expect("write to string");
        }
        out
    }

    /// Writes `path` (JSONL) and `path.meta.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::atomic_write(path, self.to_jsonl().as_bytes())?;
        io::write_json(&io::sidecar_path(path), &self.meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = io::sidecar_path(path);
        let meta: DatasetMeta = serde_json::from_str(&io::read_to_string(&meta_path)?).map_err(|e| Error::Format {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let body = io::read_to_string(path)?;
        let mut samples = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let sample: TransitionSample = serde_json::from_str(line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            samples.push(sample);
        }
        let ds = Self { samples, meta };
        ds.validate().map_err(|msg| Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message: msg,
        })?;
        Ok(ds)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.samples.is_empty() {
            return Err("dataset is empty".into());
        }
        if self.samples.len() != self.meta.num_samples {
            return Err(format!(
                "meta says {} samples, file has {}",
                self.meta.num_samples,
                self.samples.len()
            ));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.s.len() != self.meta.state_dim || s.s_next.len() != self.meta.state_dim {
                return Err(format!(
                    "sample {i}: state dimension differs from {}",
                    self.meta.state_dim
                ));
            }
            if s.a >= self.meta.num_actions {
                return Err(format!("sample {i}: action {} out of range", s.a));
            }
            if !s.c.is_finite() {
                return Err(format!("sample {i}: non-finite cost"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CartPole, Synthetic1d};

    #[test]
    fn single_step_dataset() {
        let env = Synthetic1d::default();
        let ds = generate_dataset(&env, BehaviorPolicy::UniformRandom, 1, 1, 0).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.meta.episode_lengths, vec![1]);
    }

    #[test]
    fn rejects_zero_sizes() {
        let env = Synthetic1d::default();
        assert!(generate_dataset(&env, BehaviorPolicy::UniformRandom, 0, 1, 0).is_err());
        assert!(generate_dataset(&env, BehaviorPolicy::UniformRandom, 1, 0, 0).is_err());
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let env = CartPole::default();
        let a = generate_dataset(&env, BehaviorPolicy::UniformRandom, 20, 500, 9).unwrap();
        let b = generate_dataset(&env, BehaviorPolicy::UniformRandom, 20, 500, 9).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = generate_dataset(&env, BehaviorPolicy::UniformRandom, 20, 500, 10).unwrap();
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn synthetic_uniform_behavior_frequencies() {
        let env = Synthetic1d::default();
        let ds = generate_dataset(&env, BehaviorPolicy::UniformRandom, 100, 50, 1).unwrap();
        assert_eq!(ds.len(), 5000);
        let mut counts = [0usize; 3];
        for s in &ds.samples {
            counts[s.a] += 1;
            assert!(env.space().contains(&s.s_next));
        }
        // Binomial(5000, 1/3): sd ~ 33, so +-5% of 1/3 (~83 samples) is ~2.5 sd.
        for c in counts {
            let freq = c as f64 / 5000.0;
            assert!((freq - 1.0 / 3.0).abs() <= 0.05 / 3.0, "{counts:?}");
        }
    }

    #[test]
    fn cartpole_counts_match_episode_lengths() {
        let env = CartPole::default();
        let ds = generate_dataset(&env, BehaviorPolicy::UniformRandom, 50, 500, 4).unwrap();
        assert_eq!(ds.len(), ds.meta.episode_lengths.iter().sum::<usize>());
        let dones = ds.samples.iter().filter(|s| s.done).count();
        assert!(dones <= 50);
        for s in &ds.samples {
            assert!(env.space().contains(&s.s_next));
            assert_eq!(s.c, -1.0);
        }
    }

    #[test]
    fn jsonl_round_trip_is_lossless() {
        let env = CartPole::default();
        let ds = generate_dataset(&env, BehaviorPolicy::UniformRandom, 5, 500, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        ds.save(&p).unwrap();
        let back = OfflineDataset::load(&p).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            for (x, y) in a.s_next.iter().zip(&b.s_next) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn load_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let env = Synthetic1d::default();
        let ds = generate_dataset(&env, BehaviorPolicy::UniformRandom, 1, 3, 2).unwrap();
        let p = dir.path().join("d.jsonl");
        ds.save(&p).unwrap();
        std::fs::write(&p, "{\"s\":[0.0],\"a\":0}\n").unwrap();
        assert!(matches!(OfflineDataset::load(&p), Err(Error::Format { line: 1, .. })));
    }
}
