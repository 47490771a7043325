use crate::error::{MarlError, MarlResult};
use altruist_nn::OptimizerConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Transitions per update segment.
    pub n_steps: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub episodes: usize,
    /// Episodes between copies of the learner's weights to the frozen peers.
    pub dissemination_period: usize,
    /// Episodes a given AV stays the learner before the role moves on.
    pub learner_rotation: usize,
    pub seed: u64,
    /// Environments stepped in lockstep; one update per synchronized segment.
    pub workers: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            n_steps: 16,
            value_coef: 0.5,
            entropy_coef: 0.01,
            episodes: 2000,
            dissemination_period: 50,
            learner_rotation: 10,
            seed: 0,
            workers: 1,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> MarlResult<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(MarlError::config("training.gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        for (name, v) in [("training.value_coef", self.value_coef), ("training.entropy_coef", self.entropy_coef)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MarlError::config(name, "must be a finite value >= 0"));
            }
        }
        for (name, v) in [
            ("training.n_steps", self.n_steps),
            ("training.episodes", self.episodes),
            ("training.dissemination_period", self.dissemination_period),
            ("training.learner_rotation", self.learner_rotation),
            ("training.workers", self.workers),
        ] {
            if v < 1 {
                return Err(MarlError::config(name, "must be >= 1"));
            }
        }
        self.optimizer.validate().map_err(|e| match e {
            altruist_nn::NnError::Config { field, reason } => MarlError::config(format!("training.{field}"), reason),
            other => other.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Base of the evaluation seed stream; never overlaps training seeds.
    pub seed: u64,
    pub histogram_bin_m: f64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            seed: 0,
            histogram_bin_m: 25.0,
            workers: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> MarlResult<()> {
        if self.episodes < 1 {
            return Err(MarlError::config("evaluation.episodes", "must be >= 1"));
        }
        if !(self.histogram_bin_m > 0.0 && self.histogram_bin_m.is_finite()) {
            return Err(MarlError::config("evaluation.histogram_bin_m", "must be positive"));
        }
        if self.workers < 1 {
            return Err(MarlError::config("evaluation.workers", "must be >= 1"));
        }
        Ok(())
    }
}

const TRAIN_TAG: u64 = 0x7452_4149_4e00_0000;
const EVAL_TAG: u64 = 0x4556_414c_0000_0000;
const EVAL_BIT: u64 = 1 << 63;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ tag).wrapping_add(index))
}

/// Environment seed of training episode `episode`; the top bit is always clear.
pub fn train_episode_seed(base: u64, episode: usize) -> u64 {
    mix(base, TRAIN_TAG, episode as u64) & !EVAL_BIT
}

/// Environment seed of evaluation episode `i`; the top bit is always set.
pub fn eval_episode_seed(base: u64, i: usize) -> u64 {
    mix(base, EVAL_TAG, i as u64) | EVAL_BIT
}

/// Seed of the action-sampling stream paired with an environment seed.
pub(crate) fn action_seed(env_seed: u64) -> u64 {
    splitmix64(env_seed ^ 0x4143_5449_4f4e_5321)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        EvalConfig::default().validate().unwrap();
    }

    #[test]
    fn gamma_bounds() {
        for g in [0.0, 1.0, -0.5] {
            let cfg = TrainConfig { gamma: g, ..TrainConfig::default() };
            let err = cfg.validate().unwrap_err();
            assert!(err.to_string().contains("training.gamma"));
        }
    }

    #[test]
    fn seed_streams_are_disjoint() {
        for base in [0u64, 1, 99] {
            for i in 0..1000 {
                assert_eq!(train_episode_seed(base, i) >> 63, 0);
                assert_eq!(eval_episode_seed(base, i) >> 63, 1);
            }
        }
        assert_ne!(train_episode_seed(0, 0), train_episode_seed(0, 1));
    }
}
