//! Multi-agent highway merge environment.
//!
//! AVs are driven by external meta-actions, human drivers by IDM/MOBIL and the
//! merging vehicle by its gap-acceptance policy. Each policy step runs
//! `substeps` simulation steps; all decisions inside a step are taken from the
//! same frozen snapshot.

mod collision;
mod config;
mod trace;

pub use collision::detect_collisions;
pub use config::{DriverConfig, DynamicsConfig, EnvConfig, MergerSpawn, ScenarioConfig, SpawnRange};
pub use trace::{TraceAction, TraceRecord, TraceVehicle};

use crate::drivers::{idm_accel, merging_hv_policy, mobil_decide, ramp_following_accel, IdmParams, LaneDecision, LaneNeighbors, MergerView, MobilSituation};
use crate::dynamics::{meta_action_to_targets, step_bicycle, ControlInput, MetaAction, Targets, Tracker, VehicleKind, VehicleState};
use crate::error::{SimError, SimResult};
use crate::reward::{individual_utility, svo_reward, RewardBreakdown, UtilityScale, VehicleStepInfo};
use crate::road::{LaneRef, RoadNetwork};
use crate::VehicleId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Running,
    Crash,
    MergedAndHorizon,
    Stuck,
    Horizon,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }
}

/// Outcome rules: a collision dominates everything, then a stuck merger, then the horizon.
pub fn episode_outcome(crash_occurred: bool, terminate_on_crash: bool, stuck: bool, merged: bool, step: usize, max_steps: usize) -> Outcome {
    let horizon = step >= max_steps;
    if crash_occurred && (terminate_on_crash || stuck || horizon) {
        Outcome::Crash
    } else if stuck {
        Outcome::Stuck
    } else if horizon && merged {
        Outcome::MergedAndHorizon
    } else if horizon {
        Outcome::Horizon
    } else {
        Outcome::Running
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub state: VehicleState,
    pub tracker: Tracker,
    /// Car-following parameters (unused for AVs).
    pub idm: IdmParams,
    /// Path length covered since reset (m).
    pub distance: f64,
    pub crashed: bool,
    /// Left the modelled highway section; frozen and ignored from then on.
    pub exited: bool,
}

impl Vehicle {
    pub fn is_active(&self) -> bool {
        !self.crashed && !self.exited
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Policy-step index after this step.
    pub step: usize,
    pub actions: Vec<(VehicleId, MetaAction)>,
    /// One entry per AV in id order; inactive AVs receive zeros.
    pub rewards: Vec<(VehicleId, RewardBreakdown)>,
    pub infos: BTreeMap<VehicleId, VehicleStepInfo>,
    pub distance_increments: Vec<(VehicleId, f64)>,
    pub new_crashes: Vec<VehicleId>,
    pub merged_this_step: bool,
    pub outcome: Outcome,
    pub done: bool,
}

impl StepResult {
    pub fn reward_of(&self, id: VehicleId) -> Option<RewardBreakdown> {
        self.rewards.iter().find(|(v, _)| *v == id).map(|(_, r)| *r)
    }
}

#[derive(Debug, Clone, Copy)]
struct Occupant {
    idx: usize,
    s: f64,
    half_len: f64,
    speed: f64,
}

/// Per-lane longitudinal ordering of a snapshot.
struct LaneIndex {
    lanes: BTreeMap<LaneRef, Vec<Occupant>>,
}

fn lane_s(road: &RoadNetwork, lane: LaneRef, p: crate::geometry::Vec2) -> f64 {
    match lane {
        LaneRef::Highway(_) => p.x,
        LaneRef::Ramp => road.project_onto(LaneRef::Ramp, p).1.s,
    }
}

impl LaneIndex {
    fn build(vehicles: &[Vehicle], road: &RoadNetwork) -> Self {
        let mut lanes: BTreeMap<LaneRef, Vec<Occupant>> = BTreeMap::new();
        for (idx, v) in vehicles.iter().enumerate() {
            if v.exited {
                continue;
            }
            let st = &v.state;
            let mut occupied = vec![st.current_lane];
            if st.target_lane != st.current_lane {
                occupied.push(st.target_lane);
            }
            for lane in occupied {
                lanes.entry(lane).or_default().push(Occupant {
                    idx,
                    s: lane_s(road, lane, st.position),
                    half_len: 0.5 * st.length,
                    speed: st.speed,
                });
            }
        }
        for occ in lanes.values_mut() {
            occ.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.idx.cmp(&b.idx)));
        }
        Self { lanes }
    }

    fn neighbors(&self, lane: LaneRef, s: f64, half_len: f64, me: usize) -> LaneNeighbors {
        let mut out = LaneNeighbors::default();
        let Some(occ) = self.lanes.get(&lane) else {
            return out;
        };
        let ahead = |o: &Occupant| o.s > s || (o.s == s && o.idx > me);
        let mut leader: Option<&Occupant> = None;
        let mut follower: Option<&Occupant> = None;
        for o in occ.iter().filter(|o| o.idx != me) {
            if ahead(o) {
                if leader.is_none() {
                    leader = Some(o);
                }
            } else {
                follower = Some(o);
            }
        }
        out.leader = leader.map(|o| crate::drivers::Neighbor::new(o.s - o.half_len - (s + half_len), o.speed));
        out.follower = follower.map(|o| crate::drivers::Neighbor::new(s - half_len - (o.s + o.half_len), o.speed));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    road: Arc<RoadNetwork>,
    config: Arc<EnvConfig>,
    vehicles: Vec<Vehicle>,
    step_index: usize,
    crashed_ids: BTreeSet<VehicleId>,
    crash_occurred: bool,
    merger: Option<usize>,
    merged: bool,
    merge_step: Option<usize>,
    stuck: bool,
    outcome: Outcome,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl World {
    /// Resets using the seed stored in the scenario.
    pub fn reset(config: Arc<EnvConfig>, road: Arc<RoadNetwork>) -> SimResult<World> {
        let seed = config.scenario.seed;
        Self::reset_seeded(config, road, seed)
    }

    /// Spawns AVs, then highway HVs, then the merging vehicle, all from a generator seeded with `seed`.
    pub fn reset_seeded(config: Arc<EnvConfig>, road: Arc<RoadNetwork>, seed: u64) -> SimResult<World> {
        config.validate(&road)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sc = &config.scenario;
        let dy = &config.dynamics;
        let mut placed: Vec<(usize, f64)> = Vec::new();
        let mut vehicles = Vec::with_capacity(sc.n_av + sc.n_hv + 1);
        for (kind, count, range, field) in [
            (VehicleKind::Av, sc.n_av, &sc.av_spawn, "scenario.av_spawn"),
            (VehicleKind::Hv, sc.n_hv, &sc.hv_spawn, "scenario.hv_spawn"),
        ] {
            let per_lane = ((range.x[1] - range.x[0]) / sc.min_gap).floor() as usize + 1;
            if count > per_lane * range.lanes.len() {
                return Err(SimError::config(
                    field,
                    format!("{count} vehicles cannot fit in {} lanes x [{}, {}] m with min_gap {} m", range.lanes.len(), range.x[0], range.x[1], sc.min_gap),
                ));
            }
            let spots = place_class(&mut rng, range, count, sc.min_gap, &placed).ok_or_else(|| {
                SimError::config(
                    "scenario.min_gap",
                    format!("could not place {count} vehicles with min_gap {} m inside {field}", sc.min_gap),
                )
            })?;
            placed.extend_from_slice(&spots);
            for (lane, x) in spots {
                let speed = uniform(&mut rng, range.speed).min(dy.v_max);
                let idm = IdmParams {
                    desired_speed: uniform(&mut rng, config.drivers.desired_speed_range),
                    ..config.drivers.idm
                };
                let target_speed = match kind {
                    VehicleKind::Av => speed,
                    _ => idm.desired_speed.min(dy.v_max),
                };
                let id = VehicleId(vehicles.len() as u32);
                let lane_ref = LaneRef::Highway(lane);
                vehicles.push(Vehicle {
                    state: VehicleState {
                        id,
                        kind,
                        position: road.sample(lane_ref, x)?,
                        heading: 0.0,
                        speed,
                        length: dy.vehicle_length,
                        width: dy.vehicle_width,
                        current_lane: lane_ref,
                        target_lane: lane_ref,
                        target_speed,
                    },
                    tracker: Tracker::default(),
                    idm,
                    distance: 0.0,
                    crashed: false,
                    exited: false,
                });
            }
        }
        let m = &sc.merger;
        let offset = m.ramp_offset + uniform(&mut rng, [0.0, m.offset_jitter]);
        let s = road.config().ramp_merge_start - offset;
        let idm = IdmParams {
            desired_speed: uniform(&mut rng, config.drivers.desired_speed_range),
            ..config.drivers.idm
        };
        let id = VehicleId(vehicles.len() as u32);
        vehicles.push(Vehicle {
            state: VehicleState {
                id,
                kind: VehicleKind::MergingHv,
                position: road.sample(LaneRef::Ramp, s)?,
                heading: road.lane_heading(LaneRef::Ramp, s),
                speed: m.speed.min(dy.v_max),
                length: dy.vehicle_length,
                width: dy.vehicle_width,
                current_lane: LaneRef::Ramp,
                target_lane: LaneRef::Ramp,
                target_speed: idm.desired_speed.min(dy.v_max),
            },
            tracker: Tracker::default(),
            idm,
            distance: 0.0,
            crashed: false,
            exited: false,
        });
        let merger = Some(vehicles.len() - 1);
        Ok(Self::assemble(config, road, vehicles, merger))
    }

    /// Builds a world from explicit vehicle states (scripted scenarios, tests).
    ///
    /// HVs use the base IDM parameters with their `target_speed` as desired speed.
    /// At most one vehicle may be a merging vehicle.
    pub fn from_vehicles(config: Arc<EnvConfig>, road: Arc<RoadNetwork>, states: Vec<VehicleState>) -> SimResult<World> {
        config.dynamics.validate()?;
        config.drivers.validate()?;
        let n_av = states.iter().filter(|s| s.kind == VehicleKind::Av).count();
        config.reward.validate(n_av.max(1))?;
        let mergers: Vec<usize> = states.iter().enumerate().filter(|(_, s)| s.kind == VehicleKind::MergingHv).map(|(i, _)| i).collect();
        if mergers.len() > 1 {
            return Err(SimError::config("vehicles", "at most one merging vehicle is allowed"));
        }
        let ids: BTreeSet<_> = states.iter().map(|s| s.id).collect();
        if ids.len() != states.len() {
            return Err(SimError::config("vehicles", "vehicle ids must be unique"));
        }
        let vehicles = states
            .into_iter()
            .map(|state| {
                let idm = IdmParams {
                    desired_speed: if state.target_speed > 0.0 { state.target_speed } else { config.drivers.idm.desired_speed },
                    ..config.drivers.idm
                };
                Vehicle {
                    state,
                    tracker: Tracker::default(),
                    idm,
                    distance: 0.0,
                    crashed: false,
                    exited: false,
                }
            })
            .collect();
        Ok(Self::assemble(config, road, vehicles, mergers.first().copied()))
    }

    fn assemble(config: Arc<EnvConfig>, road: Arc<RoadNetwork>, vehicles: Vec<Vehicle>, merger: Option<usize>) -> World {
        World {
            road,
            config,
            vehicles,
            step_index: 0,
            crashed_ids: BTreeSet::new(),
            crash_occurred: false,
            merger,
            merged: false,
            merge_step: None,
            stuck: false,
            outcome: Outcome::Running,
        }
    }

    pub fn road(&self) -> &RoadNetwork {
        &self.road
    }

    pub fn road_arc(&self) -> &Arc<RoadNetwork> {
        &self.road
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.state.id == id)
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_terminal()
    }

    pub fn merged(&self) -> bool {
        self.merged
    }

    pub fn merge_step(&self) -> Option<usize> {
        self.merge_step
    }

    pub fn stuck(&self) -> bool {
        self.stuck
    }

    pub fn crashed_ids(&self) -> &BTreeSet<VehicleId> {
        &self.crashed_ids
    }

    pub fn merger_id(&self) -> Option<VehicleId> {
        self.merger.map(|i| self.vehicles[i].state.id)
    }

    pub fn merger(&self) -> Option<&Vehicle> {
        self.merger.map(|i| &self.vehicles[i])
    }

    /// AV ids in id order, whatever their status.
    pub fn av_ids(&self) -> Vec<VehicleId> {
        self.vehicles.iter().filter(|v| v.state.is_av()).map(|v| v.state.id).collect()
    }

    /// AVs that must receive an action on the next step.
    pub fn active_av_ids(&self) -> Vec<VehicleId> {
        self.vehicles.iter().filter(|v| v.state.is_av() && v.is_active()).map(|v| v.state.id).collect()
    }

    pub fn mean_distance(&self) -> f64 {
        if self.vehicles.is_empty() {
            return 0.0;
        }
        self.vehicles.iter().map(|v| v.distance).sum::<f64>() / self.vehicles.len() as f64
    }

    pub fn utility_scale(&self) -> UtilityScale {
        let d = &self.config.dynamics;
        UtilityScale {
            v_max: d.v_max,
            distance_max: d.v_max * d.policy_period(),
        }
    }

    /// Non-exited vehicles inside the union of the perception disks of all observing AVs.
    pub fn visible_ids(&self) -> BTreeSet<VehicleId> {
        self.visible_from(|v| v.state.is_av() && v.is_active())
    }

    fn visible_from(&self, observer: impl Fn(&Vehicle) -> bool) -> BTreeSet<VehicleId> {
        let r2 = self.config.perception_radius * self.config.perception_radius;
        let eyes: Vec<_> = self.vehicles.iter().filter(|v| observer(v)).map(|v| v.state.position).collect();
        self.vehicles
            .iter()
            .filter(|v| !v.exited)
            .filter(|v| {
                eyes.iter().any(|e| {
                    let d = v.state.position - *e;
                    d.dot(d) <= r2
                })
            })
            .map(|v| v.state.id)
            .collect()
    }

    fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.vehicles.iter().position(|v| v.state.id == id)
    }

    fn merger_view(&self, i: usize, index: &LaneIndex) -> MergerView {
        let st = &self.vehicles[i].state;
        let half = 0.5 * st.length;
        let s = lane_s(&self.road, st.current_lane, st.position);
        MergerView {
            s,
            current: index.neighbors(st.current_lane, s, half, i),
            lane0: index.neighbors(LaneRef::Highway(0), st.position.x, half, i),
        }
    }

    fn mobil_situation(&self, i: usize, index: &LaneIndex) -> Option<MobilSituation> {
        let st = &self.vehicles[i].state;
        let LaneRef::Highway(k) = st.current_lane else {
            return None;
        };
        let half = 0.5 * st.length;
        let x = st.position.x;
        let n = self.road.lane_count();
        Some(MobilSituation {
            speed: st.speed,
            length: st.length,
            current: index.neighbors(st.current_lane, x, half, i),
            left: (k + 1 < n).then(|| index.neighbors(LaneRef::Highway(k + 1), x, half, i)),
            right: (k >= 1).then(|| index.neighbors(LaneRef::Highway(k - 1), x, half, i)),
        })
    }

    fn human_accel(&self, i: usize, index: &LaneIndex) -> f64 {
        let v = &self.vehicles[i];
        let st = &v.state;
        if st.kind == VehicleKind::MergingHv && st.target_lane.is_ramp() {
            let view = self.merger_view(i, index);
            return ramp_following_accel(st, &view, &self.road, &v.idm);
        }
        let half = 0.5 * st.length;
        let mut lanes = vec![st.current_lane];
        if st.target_lane != st.current_lane {
            lanes.push(st.target_lane);
        }
        lanes
            .into_iter()
            .map(|lane| {
                let s = lane_s(&self.road, lane, st.position);
                idm_accel(st.speed, index.neighbors(lane, s, half, i).leader, &v.idm)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Advances one policy step. `actions` must hold exactly one action per active AV.
    pub fn step(&mut self, actions: &[(VehicleId, MetaAction)]) -> SimResult<StepResult> {
        if self.is_done() {
            return Err(SimError::Protocol(format!("episode already finished with {:?}", self.outcome)));
        }
        let mut by_index: BTreeMap<usize, MetaAction> = BTreeMap::new();
        for &(id, action) in actions {
            let idx = self.index_of(id).ok_or_else(|| SimError::Protocol(format!("unknown vehicle {id}")))?;
            let v = &self.vehicles[idx];
            if !v.state.is_av() {
                return Err(SimError::Protocol(format!("vehicle {id} is not autonomous")));
            }
            if !v.is_active() {
                return Err(SimError::Protocol(format!("vehicle {id} is crashed or has left the road")));
            }
            if by_index.insert(idx, action).is_some() {
                return Err(SimError::Protocol(format!("duplicate action for vehicle {id}")));
            }
        }
        for v in self.vehicles.iter().filter(|v| v.state.is_av() && v.is_active()) {
            if !by_index.contains_key(&self.index_of(v.state.id).unwrap()) {
                return Err(SimError::Protocol(format!("missing action for vehicle {}", v.state.id)));
            }
        }

        let cfg = Arc::clone(&self.config);
        let dy = &cfg.dynamics;
        let n = self.vehicles.len();
        let mut infos: Vec<VehicleStepInfo> = self
            .vehicles
            .iter()
            .map(|v| VehicleStepInfo {
                crashed_before: v.crashed,
                ..Default::default()
            })
            .collect();
        let starting_distance: Vec<f64> = self.vehicles.iter().map(|v| v.distance).collect();

        // (1) AV targets
        for (&idx, &action) in &by_index {
            let st = &self.vehicles[idx].state;
            let t = meta_action_to_targets(action, st, &self.road, dy.speed_step, dy.v_max);
            infos[idx].lane_change = t.lane != st.target_lane;
            infos[idx].speed_change = t.speed != st.target_speed;
            let st = &mut self.vehicles[idx].state;
            st.target_lane = t.lane;
            st.target_speed = t.speed;
        }

        // (2) human lane decisions from the pre-step snapshot
        let index = LaneIndex::build(&self.vehicles, &self.road);
        let mut new_targets: Vec<(usize, LaneRef)> = Vec::new();
        for i in 0..n {
            let v = &self.vehicles[i];
            if !v.is_active() {
                continue;
            }
            match v.state.kind {
                VehicleKind::Av => {}
                VehicleKind::Hv => {
                    if v.state.current_lane != v.state.target_lane {
                        continue;
                    }
                    let (_, proj) = self.road.project_onto(v.state.current_lane, v.state.position);
                    if proj.offset.abs() > 0.5 {
                        continue;
                    }
                    let Some(sit) = self.mobil_situation(i, &index) else { continue };
                    let LaneRef::Highway(k) = v.state.current_lane else { continue };
                    match mobil_decide(&sit, &v.idm, &cfg.drivers.mobil) {
                        LaneDecision::Keep => {}
                        LaneDecision::Left => new_targets.push((i, LaneRef::Highway(k + 1))),
                        LaneDecision::Right => new_targets.push((i, LaneRef::Highway(k - 1))),
                    }
                }
                VehicleKind::MergingHv => {
                    if v.state.target_lane.is_ramp() {
                        let view = self.merger_view(i, &index);
                        let cmd = merging_hv_policy(&v.state, &view, &self.road, &v.idm, &cfg.drivers.mobil);
                        if cmd.target_lane != v.state.target_lane {
                            new_targets.push((i, cmd.target_lane));
                        }
                    }
                }
            }
        }
        for (i, lane) in new_targets {
            self.vehicles[i].state.target_lane = lane;
            infos[i].lane_change = true;
        }

        // (3)-(4) dynamics sub-steps with collision checks
        let mut new_crashes: BTreeSet<VehicleId> = BTreeSet::new();
        let mut merged_this_step = false;
        for _ in 0..dy.substeps {
            let index = LaneIndex::build(&self.vehicles, &self.road);
            let mut controls: Vec<Option<ControlInput>> = vec![None; n];
            for i in 0..n {
                if !self.vehicles[i].is_active() {
                    continue;
                }
                let control = if self.vehicles[i].state.is_av() {
                    let v = &mut self.vehicles[i];
                    let targets = Targets {
                        lane: v.state.target_lane,
                        speed: v.state.target_speed,
                    };
                    v.tracker.track(&v.state, targets, &self.road, &dy.tracking, &dy.bicycle, dy.dt)?
                } else {
                    let accel = self.human_accel(i, &index);
                    let v = &mut self.vehicles[i];
                    let steer = v.tracker.steer_command(&dy.tracking, &v.state, v.state.target_lane, &self.road, &dy.bicycle, dy.dt);
                    ControlInput::new(accel, steer, &dy.bicycle)
                };
                controls[i] = Some(control);
            }
            let length = self.road.config().highway_length;
            for (v, control) in self.vehicles.iter_mut().zip(&controls) {
                let Some(control) = control else { continue };
                let before = v.state.speed;
                let mut next = step_bicycle(&v.state, &dy.bicycle, *control, dy.dt)?;
                v.distance += before * dy.dt;
                if next.position.x > length {
                    v.exited = true;
                } else if let Ok(proj) = self.road.project_to_lane(next.position, next.heading) {
                    next.current_lane = proj.lane;
                }
                v.state = next;
            }
            let live: Vec<&VehicleState> = self
                .vehicles
                .iter()
                .filter(|v| !v.exited)
                .map(|v| &v.state)
                .collect();
            for (a, b) in detect_collisions(live, &self.road) {
                let ia = self.index_of(a).unwrap();
                let ib = self.index_of(b).unwrap();
                if self.vehicles[ia].crashed && self.vehicles[ib].crashed {
                    continue;
                }
                for idx in [ia, ib] {
                    let v = &mut self.vehicles[idx];
                    if !v.crashed {
                        v.crashed = true;
                        v.state.speed = 0.0;
                        new_crashes.insert(v.state.id);
                        infos[idx].crashed_this_step = true;
                    }
                }
            }
            if let Some(m) = self.merger {
                if !self.merged && matches!(self.vehicles[m].state.current_lane, LaneRef::Highway(_)) {
                    self.merged = true;
                    self.merge_step = Some(self.step_index + 1);
                    merged_this_step = true;
                    infos[m].merged_this_step = !self.vehicles[m].crashed;
                }
            }
            if !new_crashes.is_empty() && cfg.terminate_on_crash {
                break;
            }
        }
        self.step_index += 1;
        self.crash_occurred |= !new_crashes.is_empty();
        self.crashed_ids.extend(new_crashes.iter().copied());

        if let Some(m) = self.merger {
            let v = &self.vehicles[m];
            if !self.merged && v.state.current_lane.is_ramp() && !v.crashed {
                let s = lane_s(&self.road, LaneRef::Ramp, v.state.position);
                let end = self.road.merge_zone().1;
                let front = s + 0.5 * v.state.length;
                if front >= end - cfg.stuck_distance && v.state.speed <= cfg.stuck_speed {
                    self.stuck = true;
                }
            }
        }

        // (5) rewards
        for (i, v) in self.vehicles.iter().enumerate() {
            infos[i].speed = v.state.speed;
            infos[i].distance_increment = v.distance - starting_distance[i];
        }
        let scale = self.utility_scale();
        let utilities: BTreeMap<VehicleId, f64> = self
            .vehicles
            .iter()
            .zip(&infos)
            .map(|(v, info)| (v.state.id, individual_utility(info, &cfg.reward, scale)))
            .collect();
        let acted: BTreeSet<usize> = by_index.keys().copied().collect();
        let visible = self.visible_from(|v| v.state.is_av() && !v.exited && (!v.crashed || new_crashes.contains(&v.state.id)));
        let merger_id = self.merger_id();
        let mut rewards = Vec::new();
        let mut av_rank = 0usize;
        for (i, v) in self.vehicles.iter().enumerate() {
            if !v.state.is_av() {
                continue;
            }
            let breakdown = if acted.contains(&i) {
                let me = v.state.id;
                let allies: Vec<VehicleId> = visible
                    .iter()
                    .copied()
                    .filter(|id| *id != me && self.vehicle(*id).is_some_and(|o| o.state.is_av()))
                    .collect();
                let humans: Vec<VehicleId> = visible
                    .iter()
                    .copied()
                    .filter(|id| self.vehicle(*id).is_some_and(|o| o.state.kind == VehicleKind::Hv))
                    .collect();
                svo_reward(me, &utilities, &allies, &humans, merger_id, cfg.reward.phi.for_agent(av_rank), &cfg.reward)?
            } else {
                RewardBreakdown::default()
            };
            rewards.push((v.state.id, breakdown));
            av_rank += 1;
        }

        // (6) termination
        if !self.outcome.is_terminal() {
            self.outcome = episode_outcome(
                self.crash_occurred,
                cfg.terminate_on_crash,
                self.stuck,
                self.merged,
                self.step_index,
                cfg.scenario.max_steps,
            );
        }

        let actions = by_index.iter().map(|(&i, &a)| (self.vehicles[i].state.id, a)).collect();
        let distance_increments = self.vehicles.iter().zip(&infos).map(|(v, info)| (v.state.id, info.distance_increment)).collect();
        let info_map = self.vehicles.iter().zip(infos).map(|(v, info)| (v.state.id, info)).collect();
        Ok(StepResult {
            step: self.step_index,
            actions,
            rewards,
            infos: info_map,
            distance_increments,
            new_crashes: new_crashes.into_iter().collect(),
            merged_this_step,
            outcome: self.outcome,
            done: self.outcome.is_terminal(),
        })
    }
}

/// Places a whole class with the given minimum centre spacing.
///
/// Lanes are drawn per vehicle among those with room left; inside a lane the
/// positions are uniform over all configurations that respect the spacing
/// (sorted uniforms on the shortened interval, then shifted by `i * min_gap`).
/// Draws that come too close to earlier classes are rejected and redrawn.
fn place_class(rng: &mut ChaCha8Rng, range: &SpawnRange, count: usize, min_gap: f64, placed: &[(usize, f64)]) -> Option<Vec<(usize, f64)>> {
    let [a, b] = range.x;
    let capacity = ((b - a) / min_gap).floor() as usize + 1;
    for _ in 0..200 {
        let mut per_lane = vec![0usize; range.lanes.len()];
        for _ in 0..count {
            let open: Vec<usize> = (0..range.lanes.len()).filter(|&i| per_lane[i] < capacity).collect();
            per_lane[open[rng.random_range(0..open.len())]] += 1;
        }
        let mut spots = Vec::with_capacity(count);
        for (li, &k) in per_lane.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let slack = (b - a) - (k - 1) as f64 * min_gap;
            let mut u: Vec<f64> = (0..k).map(|_| uniform(rng, [0.0, slack])).collect();
            u.sort_by(f64::total_cmp);
            spots.extend(u.into_iter().enumerate().map(|(i, u)| (range.lanes[li], a + u + i as f64 * min_gap)));
        }
        if spots.iter().all(|&(lane, x)| placed.iter().all(|&(l, px)| l != lane || (px - x).abs() >= min_gap)) {
            return Some(spots);
        }
    }
    None
}
