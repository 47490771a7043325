use crate::error::{MarlError, MarlResult};
use altruist_core::dynamics::MetaAction;
use altruist_core::{Observation, VehicleId};
use altruist_nn::{Network, NetworkParams, Scalar};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::str::FromStr;

/// Scripted controllers that need no parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinPolicy {
    /// Always keep lane and target speed.
    Idle,
    /// Uniformly random meta-actions.
    Random,
}

impl FromStr for BuiltinPolicy {
    type Err = MarlError;

    fn from_str(s: &str) -> MarlResult<Self> {
        match s {
            "idle" => Ok(Self::Idle),
            "random" => Ok(Self::Random),
            other => Err(MarlError::config("policy", format!("unknown builtin policy '{other}' (expected idle or random)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSelection {
    Sample,
    Greedy,
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax<S: Scalar>(probs: &[S]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector.
pub fn sample<S: Scalar>(probs: &[S], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative sum: take the last non-zero entry.
    probs.iter().rposition(|p| p.as_f64() > 0.0).unwrap_or(0)
}

pub fn select<S: Scalar>(probs: &[S], mode: ActionSelection, rng: &mut impl Rng) -> usize {
    match mode {
        ActionSelection::Sample => sample(probs, rng),
        ActionSelection::Greedy => argmax(probs),
    }
}

fn meta(i: usize) -> MetaAction {
    MetaAction::from_index(i).expect("network emits exactly five actions")
}

/// Picks actions for every AV that has an observation.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Builtin(BuiltinPolicy),
    Network {
        net: &'a Network,
        params: &'a NetworkParams<f32>,
        mode: ActionSelection,
    },
}

impl Controller<'_> {
    pub fn act(&self, observations: &BTreeMap<VehicleId, Observation>, rng: &mut impl Rng) -> MarlResult<Vec<(VehicleId, MetaAction)>> {
        observations
            .iter()
            .map(|(&id, obs)| {
                let a = match *self {
                    Controller::Builtin(BuiltinPolicy::Idle) => MetaAction::Idle,
                    Controller::Builtin(BuiltinPolicy::Random) => meta(rng.random_range(0..MetaAction::COUNT)),
                    Controller::Network { net, params, mode } => {
                        let c = net.forward(params, &obs.data)?;
                        meta(select(&c.probs, mode, rng))
                    }
                };
                Ok((id, a))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2f32, 0.3, 0.3, 0.1, 0.1]), 1);
        assert_eq!(argmax(&[0.2f64; 5]), 0);
    }

    #[test]
    fn sampling_frequencies() {
        let p = [0.1f64, 0.0, 0.6, 0.3, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 5];
        let n = 20_000;
        for _ in 0..n {
            counts[sample(&p, &mut rng)] += 1;
        }
        assert_eq!(counts[1] + counts[4], 0);
        for i in [0, 2, 3] {
            assert!((counts[i] as f64 / n as f64 - p[i]).abs() < 0.02, "{counts:?}");
        }
    }
}
