use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{self, CsvOut, MetricsFile};
use crate::{Command, Common};
use altruist_core::observation::{write_pgm, CHANNELS};
use altruist_core::VehicleKind;
use altruist_marl::{
    evaluate_controller, run_episode, train, ActionSelection, AgentPool, BuiltinPolicy, Controller, EpisodeRecord, MarlError, MarlResult,
    MetricsReport, TrainHooks,
};
use altruist_nn::{load_checkpoint, save_checkpoint, Network, NetworkParams, NetworkSpec};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(common) => cmd_train(&common),
        Command::Evaluate {
            common,
            checkpoint,
            policy,
            episodes,
        } => cmd_evaluate(&common, source(checkpoint, policy), episodes),
        Command::Rollout {
            common,
            checkpoint,
            policy,
            frames,
        } => cmd_rollout(&common, source(checkpoint, policy), frames),
        Command::Compare {
            common,
            egoistic,
            altruistic,
            episodes,
            egoistic_seed,
            altruistic_seed,
        } => cmd_compare(&common, &egoistic, &altruistic, episodes, egoistic_seed, altruistic_seed),
    }
}

/// Where AV actions come from.
enum PolicySource {
    Checkpoint(PathBuf),
    Builtin(BuiltinPolicy),
}

fn source(checkpoint: Option<PathBuf>, policy: Option<BuiltinPolicy>) -> PolicySource {
    match (checkpoint, policy) {
        (Some(p), _) => PolicySource::Checkpoint(p),
        (None, Some(b)) => PolicySource::Builtin(b),
        // clap requires one of the two
        (None, None) => PolicySource::Builtin(BuiltinPolicy::Idle),
    }
}

impl PolicySource {
    fn label(&self) -> String {
        match self {
            PolicySource::Checkpoint(p) => p.display().to_string(),
            PolicySource::Builtin(BuiltinPolicy::Idle) => "idle".into(),
            PolicySource::Builtin(BuiltinPolicy::Random) => "random".into(),
        }
    }
}

fn resolve(common: &Common, flag_overrides: Vec<String>) -> CliResult<RunConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend(flag_overrides);
    RunConfig::resolve(common.preset, common.config.as_deref(), &overrides)
}

fn load(path: &Path, spec: &NetworkSpec) -> CliResult<NetworkParams<f32>> {
    if !path.is_file() {
        return Err(CliError::Artifact(format!("checkpoint {} not found", path.display())));
    }
    let (_, params) = load_checkpoint::<f32>(path, spec).map_err(|e| CliError::artifact(path.display(), e))?;
    Ok(params)
}

fn hook_err(e: CliError) -> MarlError {
    MarlError::Hook(e.to_string())
}

struct TrainOutput<'a> {
    out: &'a Path,
    curves: CsvOut,
    spec: &'a NetworkSpec,
    label: String,
    checkpoint_every: usize,
    log_every: usize,
    total: usize,
    window: Vec<(f64, bool, bool)>,
}

impl TrainHooks for TrainOutput<'_> {
    fn on_episode(&mut self, rec: &EpisodeRecord, pool: &AgentPool) -> MarlResult<()> {
        self.curves.row(rec).map_err(hook_err)?;
        let done = rec.episode + 1;
        if self.checkpoint_every > 0 && done % self.checkpoint_every == 0 && done < self.total {
            let path = self.out.join("checkpoints").join(format!("episode_{done}.ckpt"));
            output::ensure_dir(path.parent().unwrap()).map_err(hook_err)?;
            save_checkpoint(&path, &self.label, self.spec, pool.live()).map_err(|e| MarlError::Hook(format!("{}: {e}", path.display())))?;
        }
        if self.log_every > 0 {
            self.window.push((rec.reward, rec.merged, rec.crash));
            if done % self.log_every == 0 || done == self.total {
                let n = self.window.len() as f64;
                let reward = self.window.iter().map(|w| w.0).sum::<f64>() / n;
                let merged = 100.0 * self.window.iter().filter(|w| w.1).count() as f64 / n;
                let crash = 100.0 * self.window.iter().filter(|w| w.2).count() as f64 / n;
                eprintln!(
                    "episode {done}/{}  reward {reward:.3}  merged {merged:.1}%  crash {crash:.1}%  entropy {:.3}",
                    self.total, rec.entropy
                );
                self.window.clear();
                self.curves.flush().map_err(hook_err)?;
            }
        }
        Ok(())
    }
}

fn cmd_train(common: &Common) -> CliResult<()> {
    let mut flags = Vec::new();
    if let Some(s) = common.seed {
        flags.push(format!("training.seed={s}"));
    }
    if let Some(w) = common.workers {
        flags.push(format!("training.workers={w}"));
        flags.push(format!("evaluation.workers={w}"));
    }
    let cfg = resolve(common, flags)?;
    let digest = cfg.digest();
    let out = common.out.as_path();
    output::ensure_dir(out)?;
    output::write_text(&out.join("config.toml"), &cfg.snapshot())?;

    let factory = cfg.factory()?;
    let net = cfg.network()?;
    let mut pool = AgentPool::new(NetworkParams::init(&cfg.network, cfg.training.seed)?);
    let label = format!("{}; config_sha256={digest}", cfg.preset.name());
    let mut hooks = TrainOutput {
        out,
        curves: CsvOut::create(&out.join("curves.csv"), &digest)?,
        spec: &cfg.network,
        label: label.clone(),
        checkpoint_every: cfg.output.checkpoint_every,
        log_every: cfg.output.log_every,
        total: cfg.training.episodes,
        window: Vec::new(),
    };
    let result = train(&factory, &net, &mut pool, &cfg.training, &mut hooks);
    hooks.curves.flush()?;
    match result {
        Ok(_) => {
            let path = out.join("final.ckpt");
            save_checkpoint(&path, &label, &cfg.network, pool.live()).map_err(|e| CliError::artifact(path.display(), e))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Err(e) if e.is_numeric() => {
            let path = out.join("last_stable.ckpt");
            save_checkpoint(&path, &label, &cfg.network, pool.live()).map_err(|e| CliError::artifact(path.display(), e))?;
            eprintln!("last finite parameters saved to {}", path.display());
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn eval_flags(common: &Common, episodes: Option<usize>, seed: Option<u64>) -> Vec<String> {
    let mut flags = Vec::new();
    if let Some(s) = seed.or(common.seed) {
        flags.push(format!("evaluation.seed={s}"));
    }
    if let Some(w) = common.workers {
        flags.push(format!("evaluation.workers={w}"));
    }
    if let Some(n) = episodes {
        flags.push(format!("evaluation.episodes={n}"));
    }
    flags
}

fn run_eval(cfg: &RunConfig, net: &Network, src: &PolicySource) -> CliResult<MetricsReport> {
    let factory = cfg.factory()?;
    let params;
    let controller = match src {
        PolicySource::Checkpoint(path) => {
            params = load(path, &cfg.network)?;
            Controller::Network {
                net,
                params: &params,
                mode: ActionSelection::Greedy,
            }
        }
        PolicySource::Builtin(b) => Controller::Builtin(*b),
    };
    Ok(evaluate_controller(&factory, &controller, &cfg.evaluation)?.0)
}

fn cmd_evaluate(common: &Common, src: PolicySource, episodes: Option<usize>) -> CliResult<()> {
    let cfg = resolve(common, eval_flags(common, episodes, None))?;
    let net = cfg.network()?;
    let report = run_eval(&cfg, &net, &src)?;
    let digest = cfg.digest();
    output::ensure_dir(&common.out)?;
    output::write_metrics(
        &common.out,
        "metrics",
        &MetricsFile {
            config_sha256: &digest,
            policy: &src.label(),
            seed: cfg.evaluation.seed,
            metrics: &report,
        },
    )?;
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Serialize)]
struct SpeedRow {
    step: usize,
    id: u32,
    kind: VehicleKind,
    lane: i64,
    x: f64,
    speed: f64,
    active: bool,
}

#[derive(Serialize)]
struct TraceHeader<'a> {
    config_sha256: &'a str,
    seed: u64,
    policy: &'a str,
}

fn cmd_rollout(common: &Common, src: PolicySource, frames: bool) -> CliResult<()> {
    let flags = common.seed.map(|s| vec![format!("scenario.seed={s}")]).unwrap_or_default();
    let cfg = resolve(common, flags)?;
    let digest = cfg.digest();
    let factory = cfg.factory()?;
    let net = cfg.network()?;
    let out = common.out.as_path();
    output::ensure_dir(out)?;
    let params;
    let controller = match &src {
        PolicySource::Checkpoint(path) => {
            params = load(path, &cfg.network)?;
            Controller::Network {
                net: &net,
                params: &params,
                mode: ActionSelection::Greedy,
            }
        }
        PolicySource::Builtin(b) => Controller::Builtin(*b),
    };
    let policy = src.label();
    let seed = cfg.scenario.seed;
    let trace_path = out.join("trace.jsonl");
    let mut trace = output::create(&trace_path)?;
    let header = serde_json::to_string(&TraceHeader {
        config_sha256: &digest,
        seed,
        policy: &policy,
    })
    .map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(trace, "{header}").map_err(|e| CliError::artifact(trace_path.display(), e))?;
    let mut speeds = CsvOut::create(&out.join("speeds.csv"), &digest)?;
    let frame_dir = out.join("frames");
    if frames {
        output::ensure_dir(&frame_dir)?;
    }
    let frame_every = cfg.output.frame_every.max(1);

    let summary = run_episode(&factory, &controller, 0, seed, |world, observer, result| {
        let rec = world.trace_record(result);
        writeln!(trace, "{}", rec.to_json_line()).map_err(|e| MarlError::Hook(format!("{}: {e}", trace_path.display())))?;
        for v in world.vehicles() {
            speeds
                .row(&SpeedRow {
                    step: rec.step,
                    id: v.state.id.0,
                    kind: v.state.kind,
                    lane: v.state.current_lane.as_index(),
                    x: v.state.position.x,
                    speed: v.state.speed,
                    active: v.is_active(),
                })
                .map_err(hook_err)?;
        }
        if frames && rec.step % frame_every == 0 {
            for id in world.active_av_ids() {
                let Some(frame) = observer.latest_frame(id) else { continue };
                for c in 0..CHANNELS {
                    let path = frame_dir.join(format!("step{:04}_av{}_ch{c}.pgm", rec.step, id.0));
                    let f = output::create(&path).map_err(hook_err)?;
                    let comment = format!("config_sha256={digest} seed={seed} step={} av={} channel={c}", rec.step, id.0);
                    write_pgm(frame, c, &comment, f).map_err(|e| MarlError::Hook(format!("{}: {e}", path.display())))?;
                }
            }
        }
        Ok(())
    })?;
    trace.flush().map_err(|e| CliError::artifact(trace_path.display(), e))?;
    speeds.flush()?;
    println!(
        "seed {seed}  steps {}  outcome {:?}  merger_distance {}",
        summary.steps,
        summary.outcome,
        summary.merger_distance.map_or("-".to_string(), |d| format!("{d:.1}"))
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deltas {
    pub crash_pct: f64,
    pub merge_success_pct: f64,
    pub stuck_pct: f64,
    pub mean_distance_m: f64,
    pub mean_speed_mps: f64,
    pub merging_distance_median_m: f64,
    pub mean_av_return: f64,
}

impl Deltas {
    /// Altruistic minus egoistic.
    pub fn between(ego: &MetricsReport, alt: &MetricsReport) -> Self {
        Self {
            crash_pct: alt.crash_pct - ego.crash_pct,
            merge_success_pct: alt.merge_success_pct - ego.merge_success_pct,
            stuck_pct: alt.stuck_pct - ego.stuck_pct,
            mean_distance_m: alt.mean_distance_m - ego.mean_distance_m,
            mean_speed_mps: alt.mean_speed_mps - ego.mean_speed_mps,
            merging_distance_median_m: alt.merging_distance_median_m - ego.merging_distance_median_m,
            mean_av_return: alt.mean_av_return - ego.mean_av_return,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub fewer_crashes: bool,
    pub more_merges: bool,
    pub longer_distance: bool,
}

#[derive(Serialize)]
struct CompareFile<'a> {
    config_sha256: &'a str,
    seed: u64,
    episodes: usize,
    egoistic_checkpoint: String,
    altruistic_checkpoint: String,
    egoistic: &'a MetricsReport,
    altruistic: &'a MetricsReport,
    deltas: &'a Deltas,
    verdicts: &'a Verdicts,
}

fn cmd_compare(
    common: &Common,
    egoistic: &Path,
    altruistic: &Path,
    episodes: Option<usize>,
    egoistic_seed: Option<u64>,
    altruistic_seed: Option<u64>,
) -> CliResult<()> {
    let seed = match (egoistic_seed, altruistic_seed) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::config(
                "--egoistic-seed/--altruistic-seed",
                format!("both sides must run on the same evaluation seeds, got {a} and {b}"),
            ))
        }
        (a, b) => a.or(b),
    };
    let cfg = resolve(common, eval_flags(common, episodes, seed))?;
    let net = cfg.network()?;
    let ego = run_eval(&cfg, &net, &PolicySource::Checkpoint(egoistic.to_path_buf()))?;
    let alt = run_eval(&cfg, &net, &PolicySource::Checkpoint(altruistic.to_path_buf()))?;
    let deltas = Deltas::between(&ego, &alt);
    let verdicts = Verdicts {
        fewer_crashes: deltas.crash_pct < 0.0,
        more_merges: deltas.merge_success_pct > 0.0,
        longer_distance: deltas.mean_distance_m > 0.0,
    };
    let digest = cfg.digest();
    let file = CompareFile {
        config_sha256: &digest,
        seed: cfg.evaluation.seed,
        episodes: cfg.evaluation.episodes,
        egoistic_checkpoint: egoistic.display().to_string(),
        altruistic_checkpoint: altruistic.display().to_string(),
        egoistic: &ego,
        altruistic: &alt,
        deltas: &deltas,
        verdicts: &verdicts,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| CliError::Internal(e.to_string()))?;
    output::ensure_dir(&common.out)?;
    output::write_text(&common.out.join("compare.json"), &(json + "\n"))?;

    let rows: [(&str, f64, f64, f64); 7] = [
        ("crash_pct", ego.crash_pct, alt.crash_pct, deltas.crash_pct),
        ("merge_success_pct", ego.merge_success_pct, alt.merge_success_pct, deltas.merge_success_pct),
        ("stuck_pct", ego.stuck_pct, alt.stuck_pct, deltas.stuck_pct),
        ("mean_distance_m", ego.mean_distance_m, alt.mean_distance_m, deltas.mean_distance_m),
        ("mean_speed_mps", ego.mean_speed_mps, alt.mean_speed_mps, deltas.mean_speed_mps),
        (
            "merging_distance_median_m",
            ego.merging_distance_median_m,
            alt.merging_distance_median_m,
            deltas.merging_distance_median_m,
        ),
        ("mean_av_return", ego.mean_av_return, alt.mean_av_return, deltas.mean_av_return),
    ];
    let mut text = format!(
        "# config_sha256={digest}\n# seed={} episodes={}\n{:<28}{:>14}{:>14}{:>14}\n",
        cfg.evaluation.seed, cfg.evaluation.episodes, "metric", "egoistic", "altruistic", "delta"
    );
    for (k, e, a, d) in rows {
        text += &format!("{k:<28}{e:>14.3}{a:>14.3}{d:>+14.3}\n");
    }
    text += &format!(
        "fewer_crashes {}  more_merges {}  longer_distance {}\n",
        verdicts.fewer_crashes, verdicts.more_merges, verdicts.longer_distance
    );
    output::write_text(&common.out.join("compare.txt"), &text)?;
    print!("{text}");
    Ok(())
}
