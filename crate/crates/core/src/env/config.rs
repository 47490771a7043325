use crate::drivers::{IdmParams, MobilParams};
use crate::dynamics::{BicycleParams, TrackingGains};
use crate::error::{SimError, SimResult};
use crate::reward::SvoConfig;
use crate::road::RoadNetwork;
use serde::{Deserialize, Serialize};

/// Where one class of highway vehicles may be placed at reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnRange {
    /// Longitudinal interval for vehicle centres (m).
    pub x: [f64; 2],
    pub lanes: Vec<usize>,
    /// Initial speed interval (m/s).
    pub speed: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergerSpawn {
    /// Distance before `ramp_merge_start`, measured along the ramp.
    pub ramp_offset: f64,
    /// Uniform jitter added to `ramp_offset` (m).
    pub offset_jitter: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_av: usize,
    pub n_hv: usize,
    pub av_spawn: SpawnRange,
    pub hv_spawn: SpawnRange,
    /// Minimum centre-to-centre distance between vehicles sharing a lane at reset.
    pub min_gap: f64,
    pub merger: MergerSpawn,
    /// Episode horizon in policy steps.
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_av: 4,
            n_hv: 6,
            av_spawn: SpawnRange {
                x: [200.0, 330.0],
                lanes: vec![0, 1],
                speed: [23.0, 25.0],
            },
            hv_spawn: SpawnRange {
                x: [150.0, 350.0],
                lanes: vec![0, 1, 2],
                speed: [23.0, 25.0],
            },
            min_gap: 16.0,
            merger: MergerSpawn {
                ramp_offset: 120.0,
                offset_jitter: 20.0,
                speed: 20.0,
            },
            max_steps: 120,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, road: &RoadNetwork, vehicle_length: f64) -> SimResult<()> {
        if self.n_av < 1 {
            return Err(SimError::config("scenario.n_av", "at least one autonomous vehicle is required"));
        }
        if self.max_steps == 0 {
            return Err(SimError::config("scenario.max_steps", "must be > 0"));
        }
        if !(self.min_gap > vehicle_length) {
            return Err(SimError::config(
                "scenario.min_gap",
                format!("must exceed the vehicle length ({vehicle_length} m), got {}", self.min_gap),
            ));
        }
        for (name, range) in [("scenario.av_spawn", &self.av_spawn), ("scenario.hv_spawn", &self.hv_spawn)] {
            if !(range.x[0] <= range.x[1] && range.x[0] >= 0.0 && range.x[1] <= road.config().highway_length) {
                return Err(SimError::config(format!("{name}.x"), "need 0 <= x[0] <= x[1] <= highway_length"));
            }
            if !(range.speed[0] >= 0.0 && range.speed[0] <= range.speed[1]) {
                return Err(SimError::config(format!("{name}.speed"), "need 0 <= speed[0] <= speed[1]"));
            }
            if range.lanes.is_empty() || range.lanes.iter().any(|&l| l >= road.lane_count()) {
                return Err(SimError::config(format!("{name}.lanes"), "lanes must be non-empty and exist on the road"));
            }
        }
        let la = road.config().ramp_approach_length;
        let m = &self.merger;
        if !(m.ramp_offset >= 0.0 && m.offset_jitter >= 0.0 && m.ramp_offset + m.offset_jitter <= la) {
            return Err(SimError::config(
                "scenario.merger.ramp_offset",
                format!("ramp_offset + offset_jitter must lie within the {la} m ramp approach"),
            ));
        }
        if !(m.speed >= 0.0) {
            return Err(SimError::config("scenario.merger.speed", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    /// Simulation step (s).
    pub dt: f64,
    /// Simulation steps per policy decision.
    pub substeps: usize,
    pub bicycle: BicycleParams,
    pub tracking: TrackingGains,
    /// Target-speed change of one Accelerate/Decelerate action (m/s).
    pub speed_step: f64,
    pub v_max: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 15.0,
            substeps: 5,
            bicycle: BicycleParams::default(),
            tracking: TrackingGains::default(),
            speed_step: 2.0,
            v_max: 30.0,
            vehicle_length: 5.0,
            vehicle_width: 2.0,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> SimResult<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::config("dynamics.dt", "must be positive"));
        }
        if self.substeps == 0 {
            return Err(SimError::config("dynamics.substeps", "must be >= 1"));
        }
        self.bicycle.validate()?;
        self.tracking.validate()?;
        for (name, v) in [
            ("dynamics.speed_step", self.speed_step),
            ("dynamics.v_max", self.v_max),
            ("dynamics.vehicle_length", self.vehicle_length),
            ("dynamics.vehicle_width", self.vehicle_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::config(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// Duration of one policy step (s).
    pub fn policy_period(&self) -> f64 {
        self.dt * self.substeps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverConfig {
    /// Base IDM parameters; `desired_speed` is redrawn per vehicle.
    pub idm: IdmParams,
    /// Interval the per-vehicle desired speed is drawn from (m/s).
    pub desired_speed_range: [f64; 2],
    pub mobil: MobilParams,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            idm: IdmParams::default(),
            desired_speed_range: [22.0, 28.0],
            mobil: MobilParams::default(),
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> SimResult<()> {
        self.idm.validate("drivers.idm")?;
        self.mobil.validate()?;
        let [lo, hi] = self.desired_speed_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(SimError::config("drivers.desired_speed_range", "need 0 < lo <= hi"));
        }
        Ok(())
    }
}

/// Everything an environment instance needs besides the road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub scenario: ScenarioConfig,
    pub dynamics: DynamicsConfig,
    pub drivers: DriverConfig,
    pub reward: SvoConfig,
    /// Radius of each AV's perception disk; AVs pool what they see.
    pub perception_radius: f64,
    /// End the episode on the first collision; otherwise wrecks stay frozen on the road.
    pub terminate_on_crash: bool,
    /// The merging vehicle counts as stuck once it is this close to the end of the
    /// acceleration lane while slower than `stuck_speed`.
    pub stuck_distance: f64,
    pub stuck_speed: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            dynamics: DynamicsConfig::default(),
            drivers: DriverConfig::default(),
            reward: SvoConfig::default(),
            perception_radius: 100.0,
            terminate_on_crash: true,
            stuck_distance: 6.0,
            stuck_speed: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, road: &RoadNetwork) -> SimResult<()> {
        self.dynamics.validate()?;
        self.scenario.validate(road, self.dynamics.vehicle_length)?;
        self.drivers.validate()?;
        self.reward.validate(self.scenario.n_av)?;
        if !(self.perception_radius > 0.0) {
            return Err(SimError::config("perception_radius", "must be positive"));
        }
        if !(self.stuck_distance > 0.0 && self.stuck_speed >= 0.0) {
            return Err(SimError::config("stuck_distance", "stuck thresholds must be positive"));
        }
        Ok(())
    }
}
