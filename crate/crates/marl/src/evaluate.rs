use crate::config::{action_seed, eval_episode_seed, EvalConfig};
use crate::env::EnvFactory;
use crate::error::{MarlError, MarlResult};
use crate::policy::{ActionSelection, Controller};
use altruist_core::env::StepResult;
use altruist_core::{Observer, Outcome, World};
use altruist_nn::{Network, NetworkParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub steps: usize,
    pub outcome: Outcome,
    pub crashed: bool,
    /// Merged without any collision during the episode.
    pub merge_success: bool,
    pub merger_distance: Option<f64>,
    /// Distance travelled, averaged over every vehicle.
    pub mean_distance: f64,
    /// Speed averaged over active vehicles and steps.
    pub mean_speed: f64,
    /// Episode return summed over steps, averaged over AVs.
    pub av_return: f64,
}

/// Runs one episode to completion; `on_step` sees the world after reset and after every step.
pub fn run_episode(
    factory: &EnvFactory,
    controller: &Controller<'_>,
    episode: usize,
    seed: u64,
    mut on_step: impl FnMut(&World, &Observer, Option<&StepResult>) -> MarlResult<()>,
) -> MarlResult<EpisodeSummary> {
    let env_err = |step: usize| move |source| MarlError::Env { episode, step, source };
    let (mut world, mut observer) = factory.reset(seed).map_err(|e| match e {
        MarlError::Sim(s) => env_err(0)(s),
        other => other,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(action_seed(seed));
    let n_av = world.av_ids().len().max(1);
    let mut av_return = 0.0;
    let mut speed_sum = 0.0;
    let mut speed_n = 0usize;
    let mut observations = observer.observe(&world).map_err(env_err(0))?;
    on_step(&world, &observer, None)?;
    while !world.is_done() {
        let step = world.step_index();
        let actions = controller.act(&observations, &mut rng).map_err(|e| match e {
            MarlError::Nn(source) => MarlError::Numeric { episode, step, source },
            other => other,
        })?;
        let result = world.step(&actions).map_err(env_err(step))?;
        av_return += result.rewards.iter().map(|(_, r)| r.total).sum::<f64>();
        for v in world.vehicles().iter().filter(|v| v.is_active()) {
            speed_sum += v.state.speed;
            speed_n += 1;
        }
        observations = observer.observe(&world).map_err(env_err(step + 1))?;
        on_step(&world, &observer, Some(&result))?;
    }
    let crashed = world.outcome() == Outcome::Crash || !world.crashed_ids().is_empty();
    Ok(EpisodeSummary {
        seed,
        steps: world.step_index(),
        outcome: world.outcome(),
        crashed,
        merge_success: world.merged() && !crashed,
        merger_distance: world.merger().map(|m| m.distance),
        mean_distance: world.mean_distance(),
        mean_speed: if speed_n == 0 { 0.0 } else { speed_sum / speed_n as f64 },
        av_return: av_return / n_av as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_m: f64,
    /// `counts[i]` covers `[i * bin_width_m, (i + 1) * bin_width_m)`.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_values(values: &[f64], bin_width_m: f64) -> Self {
        let mut counts = Vec::new();
        for &v in values {
            let i = (v.max(0.0) / bin_width_m).floor() as usize;
            if counts.len() <= i {
                counts.resize(i + 1, 0);
            }
            counts[i] += 1;
        }
        Self { bin_width_m, counts }
    }

    pub fn padded(&self, bins: usize) -> Self {
        let mut counts = self.counts.clone();
        if counts.len() < bins {
            counts.resize(bins, 0);
        }
        Self {
            bin_width_m: self.bin_width_m,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub crash_pct: f64,
    pub merge_success_pct: f64,
    pub stuck_pct: f64,
    pub mean_distance_m: f64,
    pub mean_speed_mps: f64,
    pub merging_distance_median_m: f64,
    pub merging_distance_histogram: Histogram,
    pub mean_av_return: f64,
}

impl MetricsReport {
    pub fn from_summaries(episodes: &[EpisodeSummary], bin_width_m: f64) -> Self {
        let n = episodes.len().max(1) as f64;
        let pct = |f: &dyn Fn(&EpisodeSummary) -> bool| 100.0 * episodes.iter().filter(|e| f(e)).count() as f64 / n;
        let mean = |f: &dyn Fn(&EpisodeSummary) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        let merger: Vec<f64> = episodes.iter().filter_map(|e| e.merger_distance).collect();
        Self {
            episodes: episodes.len(),
            crash_pct: pct(&|e| e.crashed),
            merge_success_pct: pct(&|e| e.merge_success),
            stuck_pct: pct(&|e| e.outcome == Outcome::Stuck),
            mean_distance_m: mean(&|e| e.mean_distance),
            mean_speed_mps: mean(&|e| e.mean_speed),
            merging_distance_median_m: median(&merger).unwrap_or(0.0),
            merging_distance_histogram: Histogram::from_values(&merger, bin_width_m),
            mean_av_return: mean(&|e| e.av_return),
        }
    }

    /// Plain-text table; numbers use the same shortest round-trip form as the JSON output.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 8] = [
            ("episodes", self.episodes.to_string()),
            ("crash_pct", self.crash_pct.to_string()),
            ("merge_success_pct", self.merge_success_pct.to_string()),
            ("stuck_pct", self.stuck_pct.to_string()),
            ("mean_distance_m", self.mean_distance_m.to_string()),
            ("mean_speed_mps", self.mean_speed_mps.to_string()),
            ("merging_distance_median_m", self.merging_distance_median_m.to_string()),
            ("mean_av_return", self.mean_av_return.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<28}{v}");
        }
        let h = &self.merging_distance_histogram;
        let _ = writeln!(s, "merging_distance_histogram  bin_width_m={}", h.bin_width_m);
        for (i, c) in h.counts.iter().enumerate() {
            let lo = i as f64 * h.bin_width_m;
            let _ = writeln!(s, "  [{lo}, {})  {c}", lo + h.bin_width_m);
        }
        s
    }
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> MarlResult<T> {
    if workers <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| MarlError::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs `cfg.episodes` evaluation episodes on the evaluation seed stream.
pub fn evaluate_controller(factory: &EnvFactory, controller: &Controller<'_>, cfg: &EvalConfig) -> MarlResult<(MetricsReport, Vec<EpisodeSummary>)> {
    cfg.validate()?;
    let run = |i: usize| run_episode(factory, controller, i, eval_episode_seed(cfg.seed, i), |_, _, _| Ok(()));
    let episodes = if cfg.workers <= 1 {
        (0..cfg.episodes).map(run).collect::<MarlResult<Vec<_>>>()?
    } else {
        with_workers(cfg.workers, || (0..cfg.episodes).into_par_iter().map(run).collect::<MarlResult<Vec<_>>>())??
    };
    Ok((MetricsReport::from_summaries(&episodes, cfg.histogram_bin_m), episodes))
}

/// Greedy evaluation of a shared parameter set.
pub fn evaluate(net: &Network, params: &NetworkParams<f32>, factory: &EnvFactory, cfg: &EvalConfig) -> MarlResult<MetricsReport> {
    factory.check_input(net.spec().input)?;
    let controller = Controller::Network {
        net,
        params,
        mode: ActionSelection::Greedy,
    };
    Ok(evaluate_controller(factory, &controller, cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins() {
        let h = Histogram::from_values(&[0.0, 24.9, 25.0, 80.0], 25.0);
        assert_eq!(h.counts, vec![2, 1, 0, 1]);
        assert_eq!(h.padded(6).counts.len(), 6);
        assert_eq!(h.total(), 4);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
