//! Semi-sequential multi-agent training.
//!
//! One AV at a time is the learner. It acts with the live parameters and its
//! transitions drive updates; every other AV samples from the frozen snapshot.
//! The learner role rotates every `learner_rotation` episodes and the live
//! weights are copied to the snapshot every `dissemination_period` episodes.

use crate::a2c::{a2c_losses, LossCoefficients, Transition};
use crate::config::{action_seed, train_episode_seed, TrainConfig};
use crate::env::EnvFactory;
use crate::error::{MarlError, MarlResult};
use crate::policy::sample;
use crate::pool::AgentPool;
use altruist_core::dynamics::MetaAction;
use altruist_core::error::SimError;
use altruist_core::{Observation, Observer, Outcome, VehicleId, World};
use altruist_nn::{apply_update, ForwardCache, Network, NetworkParams, NnError, OptimizerState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One row of the training curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub learner: u32,
    pub steps: usize,
    pub outcome: Outcome,
    /// Episode return summed over steps, averaged over AVs.
    pub reward: f64,
    pub learner_return: f64,
    pub crash: bool,
    pub merged: bool,
    pub mean_distance: f64,
    pub merger_distance: f64,
    pub updates: usize,
    /// Per-transition means over this episode's updates.
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub disseminations: u64,
}

/// A learner transition as it entered an update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionLog {
    pub episode: usize,
    pub step: usize,
    pub learner: VehicleId,
    pub transition: Transition,
    pub gamma: f64,
    pub advantage: f64,
}

/// Callbacks for streaming output; every method defaults to a no-op.
pub trait TrainHooks {
    fn on_update(&mut self, _transitions: &[TransitionLog]) -> MarlResult<()> {
        Ok(())
    }

    /// Called once per finished episode, after any dissemination it triggered.
    fn on_episode(&mut self, _record: &EpisodeRecord, _pool: &AgentPool) -> MarlResult<()> {
        Ok(())
    }
}

impl TrainHooks for () {}

struct Pending {
    cache: ForwardCache<f32>,
    step: usize,
    action: usize,
    reward: f64,
    next_value: Option<f64>,
    terminal: bool,
}

#[derive(Default)]
struct LossTotals {
    updates: usize,
    transitions: usize,
    actor: f64,
    critic: f64,
    entropy: f64,
    grad_norm: f64,
}

struct Slot {
    episode: usize,
    seed: u64,
    world: World,
    observer: Observer,
    rng: ChaCha8Rng,
    learner: VehicleId,
    learner_done: bool,
    observations: BTreeMap<VehicleId, Observation>,
    pending: Vec<Pending>,
    reward: f64,
    learner_return: f64,
    losses: LossTotals,
}

impl Slot {
    fn new(factory: &EnvFactory, episode: usize, cfg: &TrainConfig) -> MarlResult<Self> {
        let seed = train_episode_seed(cfg.seed, episode);
        let env_err = |source| MarlError::Env { episode, step: 0, source };
        let (world, mut observer) = factory.reset(seed).map_err(|e| match e {
            MarlError::Sim(s) => env_err(s),
            other => other,
        })?;
        let avs = world.av_ids();
        let learner = avs[(episode / cfg.learner_rotation) % avs.len()];
        let observations = observer.observe(&world).map_err(env_err)?;
        Ok(Self {
            episode,
            seed,
            world,
            observer,
            rng: ChaCha8Rng::seed_from_u64(action_seed(seed)),
            learner,
            learner_done: false,
            observations,
            pending: Vec::new(),
            reward: 0.0,
            learner_return: 0.0,
            losses: LossTotals::default(),
        })
    }

    fn finished(&self) -> bool {
        self.world.is_done() && self.pending.is_empty()
    }

    fn segment_ready(&self, n_steps: usize) -> bool {
        self.learner_done || self.pending.len() >= n_steps
    }

    fn numeric(&self, source: NnError) -> MarlError {
        MarlError::Numeric {
            episode: self.episode,
            step: self.world.step_index(),
            source,
        }
    }

    fn env(&self, source: SimError) -> MarlError {
        MarlError::Env {
            episode: self.episode,
            step: self.world.step_index(),
            source,
        }
    }

    fn act(&mut self, net: &Network, live: &NetworkParams<f32>, frozen: &NetworkParams<f32>) -> MarlResult<()> {
        if self.world.is_done() {
            return Ok(());
        }
        let step = self.world.step_index();
        let mut actions = Vec::with_capacity(self.observations.len());
        let mut learner_cache = None;
        for (&id, obs) in &self.observations {
            let is_learner = id == self.learner && !self.learner_done;
            let params = if is_learner { live } else { frozen };
            let cache = net.forward(params, &obs.data).map_err(|e| self.numeric(e))?;
            let a = sample(&cache.probs, &mut self.rng);
            actions.push((id, MetaAction::from_index(a).expect("five actions")));
            if is_learner {
                learner_cache = Some((cache, a));
            }
        }
        if let Some((cache, _)) = &learner_cache {
            if let Some(prev) = self.pending.last_mut() {
                if !prev.terminal && prev.next_value.is_none() {
                    prev.next_value = Some(cache.value as f64);
                }
            }
        }
        let result = self.world.step(&actions).map_err(|e| self.env(e))?;
        self.reward += result.rewards.iter().map(|(_, r)| r.total).sum::<f64>();
        self.observations = self.observer.observe(&self.world).map_err(|e| self.env(e))?;
        if let Some((cache, action)) = learner_cache {
            let reward = result.reward_of(self.learner).map(|r| r.total).unwrap_or(0.0);
            self.learner_return += reward;
            let active = self.world.vehicle(self.learner).is_some_and(|v| v.is_active());
            let terminal = self.world.outcome() == Outcome::Crash || !active;
            self.pending.push(Pending {
                cache,
                step,
                action,
                reward,
                next_value: None,
                terminal,
            });
            if terminal || self.world.is_done() {
                self.learner_done = true;
            }
        }
        Ok(())
    }

    /// Fills in the bootstrap value of the last pending transition.
    fn close_segment(&mut self, net: &Network, live: &NetworkParams<f32>) -> MarlResult<()> {
        let Some(last) = self.pending.last() else {
            return Ok(());
        };
        if last.terminal || last.next_value.is_some() {
            return Ok(());
        }
        let obs = self
            .observations
            .get(&self.learner)
            .ok_or_else(|| MarlError::Hook(format!("episode {}: no observation to bootstrap from", self.episode)))?;
        let v = net.forward(live, &obs.data).map_err(|e| self.numeric(e))?.value as f64;
        self.pending.last_mut().expect("non-empty").next_value = Some(v);
        Ok(())
    }
}

struct SegmentGrad {
    grads: NetworkParams<f32>,
    logs: Vec<TransitionLog>,
    actor: f64,
    critic: f64,
    entropy: f64,
}

fn segment_gradient(slot: &Slot, net: &Network, live: &NetworkParams<f32>, coef: LossCoefficients) -> MarlResult<SegmentGrad> {
    let probs: Vec<Vec<f64>> = slot.pending.iter().map(|p| p.cache.probs.iter().map(|&v| v as f64).collect()).collect();
    let batch: Vec<Transition> = slot
        .pending
        .iter()
        .map(|p| Transition {
            action: p.action,
            reward: p.reward,
            value: p.cache.value as f64,
            next_value: p.next_value.unwrap_or(0.0),
            terminal: p.terminal,
        })
        .collect();
    let out = a2c_losses(&probs, &batch, coef).map_err(|e| match e {
        MarlError::Nn(source) => slot.numeric(source),
        other => other,
    })?;
    let mut grads = live.zeros_like();
    for ((p, dl), &dv) in slot.pending.iter().zip(&out.dlogits).zip(&out.dvalues) {
        let dl: Vec<f32> = dl.iter().map(|&v| v as f32).collect();
        net.backward(live, &p.cache, &dl, dv as f32, &mut grads).map_err(|e| slot.numeric(e))?;
    }
    let logs = slot
        .pending
        .iter()
        .zip(&batch)
        .zip(&out.advantages)
        .map(|((p, tr), &a)| TransitionLog {
            episode: slot.episode,
            step: p.step,
            learner: slot.learner,
            transition: *tr,
            gamma: coef.gamma,
            advantage: a,
        })
        .collect();
    Ok(SegmentGrad {
        grads,
        logs,
        actor: out.actor_loss,
        critic: out.critic_loss,
        entropy: out.entropy,
    })
}

fn for_each_slot(threads: Option<&ThreadPool>, slots: &mut [Slot], f: impl Fn(&mut Slot) -> MarlResult<()> + Sync + Send) -> MarlResult<()> {
    match threads {
        Some(tp) => tp.install(|| slots.par_iter_mut().try_for_each(f)),
        None => slots.iter_mut().try_for_each(f),
    }
}

fn add_into(acc: &mut NetworkParams<f32>, g: &NetworkParams<f32>) {
    for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += *y;
        }
    }
}

fn update(
    slots: &mut [Slot],
    net: &Network,
    pool: &mut AgentPool,
    opt: &mut OptimizerState<f32>,
    cfg: &TrainConfig,
    threads: Option<&ThreadPool>,
    hooks: &mut dyn TrainHooks,
) -> MarlResult<()> {
    let coef = LossCoefficients {
        gamma: cfg.gamma,
        value_coef: cfg.value_coef,
        entropy_coef: cfg.entropy_coef,
    };
    {
        let live = pool.live();
        for_each_slot(threads, slots, |s| s.close_segment(net, live))?;
    }
    let ready: Vec<usize> = (0..slots.len()).filter(|&i| !slots[i].pending.is_empty()).collect();
    let live = pool.live();
    let slots_ro: &[Slot] = slots;
    let segs: Vec<MarlResult<SegmentGrad>> = match threads {
        Some(tp) => tp.install(|| ready.par_iter().map(|&i| segment_gradient(&slots_ro[i], net, live, coef)).collect()),
        None => ready.iter().map(|&i| segment_gradient(&slots_ro[i], net, live, coef)).collect(),
    };
    let segs = segs.into_iter().collect::<MarlResult<Vec<_>>>()?;
    let mut total = live.zeros_like();
    for s in &segs {
        add_into(&mut total, &s.grads);
    }
    let (episode, step) = {
        let s = &slots[ready[0]];
        (s.episode, s.world.step_index())
    };
    let backup = pool.live().clone();
    let stats = apply_update(pool.live_mut(), &total, opt, &cfg.optimizer).map_err(|source| MarlError::Numeric { episode, step, source })?;
    if !pool.live().is_finite() {
        *pool.live_mut() = backup;
        return Err(MarlError::Numeric {
            episode,
            step,
            source: NnError::NonFinite { layer: "parameters after update".into() },
        });
    }
    for (&i, s) in ready.iter().zip(&segs) {
        hooks.on_update(&s.logs)?;
        let slot = &mut slots[i];
        let l = &mut slot.losses;
        l.updates += 1;
        l.transitions += slot.pending.len();
        l.actor += s.actor;
        l.critic += s.critic;
        l.entropy += s.entropy;
        l.grad_norm += stats.grad_norm;
        slot.pending.clear();
    }
    Ok(())
}

fn record(slot: &Slot, disseminations: u64) -> EpisodeRecord {
    let l = &slot.losses;
    let per_t = |v: f64| if l.transitions == 0 { 0.0 } else { v / l.transitions as f64 };
    let n_av = slot.world.av_ids().len().max(1) as f64;
    EpisodeRecord {
        episode: slot.episode,
        seed: slot.seed,
        learner: slot.learner.0,
        steps: slot.world.step_index(),
        outcome: slot.world.outcome(),
        reward: slot.reward / n_av,
        learner_return: slot.learner_return,
        crash: slot.world.outcome() == Outcome::Crash || !slot.world.crashed_ids().is_empty(),
        merged: slot.world.merged(),
        mean_distance: slot.world.mean_distance(),
        merger_distance: slot.world.merger().map_or(0.0, |m| m.distance),
        updates: l.updates,
        actor_loss: per_t(l.actor),
        critic_loss: per_t(l.critic),
        entropy: per_t(l.entropy),
        grad_norm: if l.updates == 0 { 0.0 } else { l.grad_norm / l.updates as f64 },
        disseminations,
    }
}

/// Trains `pool` in place and returns the per-episode curves.
///
/// On a numeric failure the pool keeps the last parameters that passed the
/// finiteness checks.
pub fn train(factory: &EnvFactory, net: &Network, pool: &mut AgentPool, cfg: &TrainConfig, hooks: &mut dyn TrainHooks) -> MarlResult<Vec<EpisodeRecord>> {
    cfg.validate()?;
    factory.check_input(net.spec().input)?;
    if net.spec().n_actions != MetaAction::COUNT {
        return Err(MarlError::config("network.n_actions", format!("must equal {}", MetaAction::COUNT)));
    }
    let threads = if cfg.workers > 1 {
        Some(
            ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| MarlError::config("training.workers", e.to_string()))?,
        )
    } else {
        None
    };
    let threads = threads.as_ref();
    let mut opt = OptimizerState::<f32>::default();
    let mut curves = Vec::with_capacity(cfg.episodes);
    let mut episode = 0;
    while episode < cfg.episodes {
        let w = cfg.workers.min(cfg.episodes - episode);
        let mut slots = (episode..episode + w).map(|e| Slot::new(factory, e, cfg)).collect::<MarlResult<Vec<_>>>()?;
        loop {
            let frozen = pool.frozen();
            let live = pool.live();
            for_each_slot(threads, &mut slots, |s| s.act(net, live, &frozen))?;
            let any_pending = slots.iter().any(|s| !s.pending.is_empty());
            if any_pending && slots.iter().all(|s| s.segment_ready(cfg.n_steps)) {
                update(&mut slots, net, pool, &mut opt, cfg, threads, hooks)?;
            }
            if slots.iter().all(Slot::finished) {
                break;
            }
        }
        if (episode..episode + w).any(|e| (e + 1) % cfg.dissemination_period == 0) {
            pool.disseminate();
        }
        for slot in &slots {
            let rec = record(slot, pool.disseminations());
            hooks.on_episode(&rec, pool)?;
            curves.push(rec);
        }
        episode += w;
    }
    Ok(curves)
}
