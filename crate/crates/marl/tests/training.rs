use altruist_core::road::RoadConfig;
use altruist_core::{EnvConfig, ObservationConfig, Outcome};
use altruist_marl::*;
use altruist_nn::{Network, NetworkParams, NetworkSpec};

fn factory(n_av: usize, n_hv: usize, max_steps: usize) -> EnvFactory {
    let mut env = EnvConfig::default();
    env.scenario.n_av = n_av;
    env.scenario.n_hv = n_hv;
    env.scenario.max_steps = max_steps;
    EnvFactory::new(RoadConfig::default(), env, ObservationConfig::desk()).unwrap()
}

fn network(f: &EnvFactory) -> (Network, NetworkSpec) {
    let spec = NetworkSpec::desk().with_input(f.input_shape());
    (Network::new(spec.clone()).unwrap(), spec)
}

fn small_cfg(episodes: usize) -> TrainConfig {
    TrainConfig {
        episodes,
        n_steps: 5,
        dissemination_period: 3,
        learner_rotation: 2,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[derive(Default)]
struct Log {
    transitions: Vec<TransitionLog>,
}

impl TrainHooks for Log {
    fn on_update(&mut self, t: &[TransitionLog]) -> MarlResult<()> {
        self.transitions.extend_from_slice(t);
        Ok(())
    }
}

#[test]
fn advantage_identity_holds_on_every_logged_transition() {
    let f = factory(2, 3, 25);
    let (net, spec) = network(&f);
    let mut pool = AgentPool::new(NetworkParams::init(&spec, 4).unwrap());
    let mut log = Log::default();
    let cfg = small_cfg(12);
    let curves = train(&f, &net, &mut pool, &cfg, &mut log).unwrap();
    assert_eq!(curves.len(), 12);
    assert!(!log.transitions.is_empty());
    for l in &log.transitions {
        let t = l.transition;
        let target = if t.terminal { t.reward } else { t.reward + l.gamma * t.next_value };
        assert_eq!(l.advantage, target - t.value, "episode {} step {}", l.episode, l.step);
        // a terminal transition ignores whatever sits in next_value
        if t.terminal {
            assert_eq!(advantage(t.reward, 1e6, t.value, l.gamma, true), l.advantage);
        }
    }
    // a learner's terminal transition is its last one in the episode
    for e in 0..12 {
        let ep: Vec<_> = log.transitions.iter().filter(|l| l.episode == e).collect();
        if let Some(i) = ep.iter().position(|l| l.transition.terminal) {
            assert_eq!(i, ep.len() - 1, "episode {e}");
        }
        for w in ep.windows(2) {
            assert_eq!(w[1].step, w[0].step + 1);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let f = factory(2, 3, 20);
    let (net, spec) = network(&f);
    let run = || {
        let mut pool = AgentPool::new(NetworkParams::init(&spec, 9).unwrap());
        let c = train(&f, &net, &mut pool, &small_cfg(6), &mut ()).unwrap();
        (c, pool.into_live())
    };
    let (c1, p1) = run();
    let (c2, p2) = run();
    assert_eq!(c1, c2);
    assert_eq!(p1, p2);
}

#[test]
fn lockstep_workers_are_deterministic() {
    let f = factory(2, 3, 20);
    let (net, spec) = network(&f);
    let run = || {
        let mut pool = AgentPool::new(NetworkParams::init(&spec, 9).unwrap());
        let cfg = TrainConfig { workers: 3, ..small_cfg(6) };
        let c = train(&f, &net, &mut pool, &cfg, &mut ()).unwrap();
        (c, pool.into_live())
    };
    let (c1, p1) = run();
    let (c2, p2) = run();
    assert_eq!(c1, c2);
    assert_eq!(p1, p2);
}

/// Records the peer and learner action distributions on a fixed observation after every episode.
struct Probe<'a> {
    net: &'a Network,
    obs: Vec<f32>,
    rows: Vec<(u64, usize, Vec<f32>, Vec<f32>)>,
}

impl TrainHooks for Probe<'_> {
    fn on_episode(&mut self, r: &EpisodeRecord, pool: &AgentPool) -> MarlResult<()> {
        let frozen = self.net.forward(&pool.frozen(), &self.obs)?.probs;
        let live = self.net.forward(pool.live(), &self.obs)?.probs;
        self.rows.push((r.disseminations, r.updates, frozen, live));
        Ok(())
    }
}

#[test]
fn peers_change_only_at_dissemination() {
    let f = factory(3, 3, 20);
    let (net, spec) = network(&f);
    let init = NetworkParams::init(&spec, 2).unwrap();
    let (world, mut observer) = f.reset(123).unwrap();
    let obs = observer.observe(&world).unwrap().into_values().next().unwrap().data;
    let initial = net.forward(&init, &obs).unwrap().probs;
    let mut pool = AgentPool::new(init);
    let mut probe = Probe { net: &net, obs, rows: vec![] };
    let cfg = TrainConfig { dissemination_period: 4, ..small_cfg(12) };
    train(&f, &net, &mut pool, &cfg, &mut probe).unwrap();

    let mut prev_frozen = initial;
    let mut prev_count = 0;
    for (i, (count, updates, frozen, live)) in probe.rows.iter().enumerate() {
        if *count == prev_count {
            assert_eq!(frozen, &prev_frozen, "episode {i}: peers moved without a dissemination");
        } else {
            assert_eq!(*count, prev_count + 1);
            assert_eq!((i + 1) % 4, 0, "dissemination after episode {i}");
            // the snapshot is the learner's weights at broadcast time
            assert_eq!(frozen, live);
        }
        assert!(*updates > 0);
        prev_frozen = frozen.clone();
        prev_count = *count;
    }
    assert_eq!(prev_count, 3);
    // the learner itself did move
    assert_ne!(probe.rows[0].3, probe.rows[2].2);
}

#[test]
fn single_agent_ignores_dissemination_schedule() {
    let f = factory(1, 3, 20);
    let (net, spec) = network(&f);
    let run = |period: usize, rotation: usize| {
        let mut pool = AgentPool::new(NetworkParams::init(&spec, 5).unwrap());
        let cfg = TrainConfig {
            dissemination_period: period,
            learner_rotation: rotation,
            ..small_cfg(6)
        };
        let c = train(&f, &net, &mut pool, &cfg, &mut ()).unwrap();
        (c, pool.into_live())
    };
    let (mut a, pa) = run(1, 1);
    let (mut b, pb) = run(50, 10);
    assert_eq!(a.last().unwrap().disseminations, 6);
    assert_eq!(b.last().unwrap().disseminations, 0);
    for r in a.iter_mut().chain(b.iter_mut()) {
        r.disseminations = 0;
    }
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn curves_are_consistent_with_outcomes() {
    let f = factory(2, 4, 30);
    let (net, spec) = network(&f);
    let mut pool = AgentPool::new(NetworkParams::init(&spec, 8).unwrap());
    let curves = train(&f, &net, &mut pool, &small_cfg(8), &mut ()).unwrap();
    for (i, r) in curves.iter().enumerate() {
        assert_eq!(r.episode, i);
        assert_eq!(r.seed, train_episode_seed(11, i));
        assert!(r.steps >= 1 && r.steps <= 30);
        if r.outcome == Outcome::Crash {
            assert!(r.crash);
        }
        assert!(r.entropy >= 0.0 && r.entropy <= 5f64.ln() + 1e-9);
        assert!(r.actor_loss.is_finite() && r.critic_loss.is_finite());
    }
}

#[test]
fn invalid_training_config_is_rejected() {
    let f = factory(1, 0, 5);
    let (net, spec) = network(&f);
    let mut pool = AgentPool::new(NetworkParams::init(&spec, 1).unwrap());
    let cfg = TrainConfig { gamma: 1.5, ..small_cfg(1) };
    let err = train(&f, &net, &mut pool, &cfg, &mut ()).unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("gamma"), "{err}");

    let other = Network::new(NetworkSpec::desk().with_input([4, 4, 16, 96])).unwrap();
    assert!(train(&f, &other, &mut pool, &small_cfg(1), &mut ()).unwrap_err().is_config());
}
