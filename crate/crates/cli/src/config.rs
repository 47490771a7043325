//! Run configuration: presets, TOML files, dotted-path overrides and the config digest.

use crate::error::{CliError, CliResult};
use altruist_core::env::{DriverConfig, DynamicsConfig, SpawnRange};
use altruist_core::road::{RoadConfig, RoadNetwork};
use altruist_core::{EnvConfig, ObservationConfig, ScenarioConfig, SvoConfig};
use altruist_marl::{EnvFactory, EvalConfig, TrainConfig};
use altruist_nn::{Network, NetworkSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size observation grid and network.
    Paper,
    /// Reduced grid, 3 AVs and 4 HVs; trains on a CPU in minutes.
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

/// Episode-level settings of the simulator that live outside the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub perception_radius: f64,
    pub terminate_on_crash: bool,
    pub stuck_distance: f64,
    pub stuck_speed: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            perception_radius: env.perception_radius,
            terminate_on_crash: env.terminate_on_crash,
            stuck_distance: env.stuck_distance,
            stuck_speed: env.stuck_speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Episodes between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Training episodes between progress lines on stderr; 0 silences them.
    pub log_every: usize,
    /// Policy steps between exported observation images in `rollout --frames`.
    pub frame_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            checkpoint_every: 500,
            log_every: 100,
            frame_every: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub road: RoadConfig,
    pub scenario: ScenarioConfig,
    pub dynamics: DynamicsConfig,
    pub drivers: DriverConfig,
    pub reward: SvoConfig,
    pub world: WorldConfig,
    pub observation: ObservationConfig,
    pub network: NetworkSpec,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => {
                let observation = ObservationConfig::paper();
                Self {
                    preset,
                    road: RoadConfig::default(),
                    scenario: ScenarioConfig::default(),
                    dynamics: DynamicsConfig::default(),
                    drivers: DriverConfig::default(),
                    reward: SvoConfig::default(),
                    world: WorldConfig::default(),
                    network: NetworkSpec::paper().with_input(observation.shape()),
                    observation,
                    training: TrainConfig {
                        episodes: 30_000,
                        ..TrainConfig::default()
                    },
                    evaluation: EvalConfig {
                        episodes: 3000,
                        ..EvalConfig::default()
                    },
                    output: OutputConfig::default(),
                }
            }
            Preset::Desk => {
                let observation = ObservationConfig::desk();
                let mut dynamics = DynamicsConfig::default();
                dynamics.v_max = 25.0;
                let mut drivers = DriverConfig::default();
                drivers.desired_speed_range = [25.0, 27.0];
                // highway vehicles hold their lane; lane 0 stays a closed stream the merger must be let into
                drivers.mobil.a_threshold = 3.0;
                let scenario = ScenarioConfig {
                    n_av: 3,
                    n_hv: 4,
                    av_spawn: SpawnRange {
                        x: [230.0, 338.0],
                        lanes: vec![0],
                        speed: [25.0, 25.0],
                    },
                    hv_spawn: SpawnRange {
                        x: [18.0, 182.0],
                        lanes: vec![0],
                        speed: [25.0, 25.0],
                    },
                    min_gap: 48.0,
                    max_steps: 60,
                    ..ScenarioConfig::default()
                };
                let mut network = NetworkSpec::desk().with_input(observation.shape());
                network.shared_extractor = false;
                let mut training = TrainConfig {
                    episodes: 2000,
                    ..TrainConfig::default()
                };
                training.optimizer.learning_rate = 1e-4;
                Self {
                    preset,
                    road: RoadConfig {
                        ramp_merge_end: 520.0,
                        ..RoadConfig::default()
                    },
                    scenario,
                    dynamics,
                    drivers,
                    reward: SvoConfig::default(),
                    world: WorldConfig::default(),
                    observation,
                    network,
                    training,
                    evaluation: EvalConfig {
                        episodes: 300,
                        ..EvalConfig::default()
                    },
                    output: OutputConfig::default(),
                }
            }
        }
    }

    /// Layers `file` and then `overrides` (`a.b.c=value`) on top of a preset.
    ///
    /// The preset comes from `preset`, else the file's top-level `preset` key, else desk.
    pub fn resolve(preset: Option<Preset>, file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let user = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
                text.parse::<Table>().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        let preset = match (preset, user.get("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => Preset::deserialize(v.clone()).map_err(|e| CliError::config("preset", e))?,
            (None, None) => Preset::Desk,
        };
        let mut tree = Value::try_from(Self::preset(preset)).map_err(|e| CliError::Config(format!("preset {}: {e}", preset.name())))?;
        merge(&mut tree, Value::Table(user));
        let mut input_given = lookup(&tree, &["network", "input"]).is_some_and(|v| Some(v) != preset_input(preset).as_ref());
        for o in overrides {
            let (path, value) = parse_override(o)?;
            input_given |= path == ["network", "input"];
            set_path(&mut tree, &path, value)?;
        }
        tree.as_table_mut().unwrap().insert("preset".into(), Value::String(preset.name().into()));
        let mut cfg = Self::deserialize(tree).map_err(|e| CliError::Config(e.to_string().trim().to_string()))?;
        if !input_given {
            cfg.network.input = cfg.observation.shape();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            scenario: self.scenario.clone(),
            dynamics: self.dynamics.clone(),
            drivers: self.drivers.clone(),
            reward: self.reward.clone(),
            perception_radius: self.world.perception_radius,
            terminate_on_crash: self.world.terminate_on_crash,
            stuck_distance: self.world.stuck_distance,
            stuck_speed: self.world.stuck_speed,
        }
    }

    pub fn factory(&self) -> CliResult<EnvFactory> {
        Ok(EnvFactory::new(self.road.clone(), self.env_config(), self.observation.clone())?)
    }

    pub fn network(&self) -> CliResult<Network> {
        Network::new(self.network.clone()).map_err(|e| CliError::config("network", e))
    }

    pub fn validate(&self) -> CliResult<()> {
        let road = RoadNetwork::new(self.road.clone())?;
        self.env_config().validate(&road)?;
        self.observation.validate()?;
        let net = self.network()?;
        if self.network.input != self.observation.shape() {
            return Err(CliError::config(
                "network.input",
                format!("{:?} does not match the observation shape {:?}", self.network.input, self.observation.shape()),
            ));
        }
        if net.spec().n_actions != altruist_core::MetaAction::COUNT {
            return Err(CliError::config("network.n_actions", format!("must be {}", altruist_core::MetaAction::COUNT)));
        }
        self.training.validate()?;
        self.evaluation.validate()?;
        Ok(())
    }

    /// Canonical TOML text of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved configs always serialise")
    }

    /// Hex SHA-256 of [`RunConfig::to_toml`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Resolved-config snapshot with its digest in a leading comment.
    pub fn snapshot(&self) -> String {
        format!("# config_sha256 = \"{}\"\n{}", self.digest(), self.to_toml())
    }
}

fn preset_input(preset: Preset) -> Option<Value> {
    Value::try_from(RunConfig::preset(preset).network.input).ok()
}

fn lookup<'a>(v: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(v, |v, k| v.get(k))
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Splits `a.b.c=value`; the value is read as a TOML literal, falling back to a bare string.
pub fn parse_override(s: &str) -> CliResult<(Vec<String>, Value)> {
    let (path, raw) = s.split_once('=').ok_or_else(|| CliError::Config(format!("override '{s}' is not of the form key=value")))?;
    let path: Vec<String> = path.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override '{s}' has an empty key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn set_path(tree: &mut Value, path: &[String], value: Value) -> CliResult<()> {
    let dotted = path.join(".");
    let mut cur = tree;
    for (i, k) in path.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CliError::config(&dotted, format!("'{}' is not a section", path[..i].join("."))))?;
        if i + 1 == path.len() {
            // unknown leaf keys are caught when the tree is deserialised
            table.insert(k.clone(), value);
            return Ok(());
        }
        cur = table.entry(k.clone()).or_insert_with(|| Value::Table(Table::new()));
    }
    Ok(())
}
