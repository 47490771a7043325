//! One-step advantage actor-critic losses.

use crate::error::{MarlError, MarlResult};
use altruist_nn::{Network, NetworkParams, NnError, Scalar};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// `r + gamma * v_next * (1 - terminal) - v_now`.
pub fn advantage(r_next: f64, v_next: f64, v_now: f64, gamma: f64, terminal: bool) -> f64 {
    let bootstrap = if terminal { 0.0 } else { gamma * v_next };
    r_next + bootstrap - v_now
}

/// One transition of the learning agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub action: usize,
    pub reward: f64,
    /// Critic estimate of the state the action was taken in.
    pub value: f64,
    /// Critic estimate of the following state (ignored when terminal).
    pub next_value: f64,
    pub terminal: bool,
}

impl Transition {
    pub fn advantage(&self, gamma: f64) -> f64 {
        advantage(self.reward, self.next_value, self.value, gamma, self.terminal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Policy-gradient term minus the entropy bonus.
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Summed policy entropy over the batch.
    pub entropy: f64,
    pub advantages: Vec<f64>,
    /// Upstream gradient of the total loss with respect to each step's logits.
    pub dlogits: Vec<Vec<f64>>,
    /// Upstream gradient of the total loss with respect to each step's value.
    pub dvalues: Vec<f64>,
}

impl LossOutput {
    pub fn total(&self) -> f64 {
        self.actor_loss + self.critic_loss
    }
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.max(PROB_FLOOR).ln()).sum::<f64>()
}

/// Actor and critic losses for a segment, with advantages held constant in the actor term.
///
/// `probs[t]` is the policy at step `t`; `batch[t].value` must be the critic output
/// for the same forward pass.
pub fn a2c_losses(probs: &[Vec<f64>], batch: &[Transition], coef: LossCoefficients) -> MarlResult<LossOutput> {
    if batch.is_empty() {
        return Err(MarlError::config("batch", "empty rollout batch"));
    }
    if probs.len() != batch.len() {
        return Err(MarlError::config("batch", format!("{} policies for {} transitions", probs.len(), batch.len())));
    }
    let mut out = LossOutput {
        actor_loss: 0.0,
        critic_loss: 0.0,
        entropy: 0.0,
        advantages: Vec::with_capacity(batch.len()),
        dlogits: Vec::with_capacity(batch.len()),
        dvalues: Vec::with_capacity(batch.len()),
    };
    for (p, tr) in probs.iter().zip(batch) {
        let pa = *p.get(tr.action).ok_or_else(|| MarlError::config("batch.action", format!("action {} out of range", tr.action)))?;
        if !(pa > 0.0) {
            return Err(MarlError::Nn(NnError::NonFinite {
                layer: format!("log-probability of chosen action {}", tr.action),
            }));
        }
        let a = tr.advantage(coef.gamma);
        let h = entropy(p);
        out.actor_loss += -pa.max(PROB_FLOOR).ln() * a - coef.entropy_coef * h;
        out.critic_loss += coef.value_coef * a * a;
        out.entropy += h;
        let dl = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| {
                let onehot = if j == tr.action { 1.0 } else { 0.0 };
                let pg = a * (pj - onehot);
                let ent = if pj > 0.0 { coef.entropy_coef * pj * (pj.max(PROB_FLOOR).ln() + h) } else { 0.0 };
                pg + ent
            })
            .collect();
        out.dlogits.push(dl);
        out.dvalues.push(-2.0 * coef.value_coef * a);
        out.advantages.push(a);
    }
    if !(out.actor_loss.is_finite() && out.critic_loss.is_finite()) {
        return Err(MarlError::Nn(NnError::NonFinite { layer: "loss".into() }));
    }
    Ok(out)
}

/// Total loss of a segment as a function of the parameters, with the bootstrap
/// targets `reward + gamma * next_value` and the actor advantages frozen.
///
/// Its gradient is what [`a2c_losses`] feeds into the network's backward pass.
pub fn frozen_target_loss<S: Scalar>(
    net: &Network,
    params: &NetworkParams<S>,
    observations: &[Vec<S>],
    batch: &[Transition],
    frozen_advantages: &[f64],
    coef: LossCoefficients,
) -> MarlResult<f64> {
    let mut total = 0.0;
    for ((obs, tr), &a_fixed) in observations.iter().zip(batch).zip(frozen_advantages) {
        let c = net.forward(params, obs)?;
        let p: Vec<f64> = c.probs.iter().map(|v| v.as_f64()).collect();
        let target = advantage(tr.reward, tr.next_value, 0.0, coef.gamma, tr.terminal);
        let a = target - c.value.as_f64();
        total += -p[tr.action].max(PROB_FLOOR).ln() * a_fixed - coef.entropy_coef * entropy(&p) + coef.value_coef * a * a;
    }
    Ok(total)
}
