//! Human driver behaviour: IDM car following, MOBIL lane changes and the
//! gap-acceptance policy of the merging vehicle.

use crate::dynamics::VehicleState;
use crate::error::{SimError, SimResult};
use crate::road::{LaneRef, RoadNetwork};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    /// Desired free-road speed v0 (m/s).
    pub desired_speed: f64,
    /// Desired time headway T (s).
    pub time_headway: f64,
    /// Jam distance s0 (m).
    pub min_gap: f64,
    /// Maximum acceleration a (m/s^2).
    pub max_accel: f64,
    /// Comfortable deceleration b (m/s^2).
    pub comfort_decel: f64,
    pub exponent: f64,
    /// Output floor; also the emergency braking used when the gap closes.
    pub max_brake: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 25.0,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 3.0,
            comfort_decel: 5.0,
            exponent: 4.0,
            max_brake: 8.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self, field: &str) -> SimResult<()> {
        for (name, v) in [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("min_gap", self.min_gap),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("exponent", self.exponent),
            ("max_brake", self.max_brake),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::config(format!("{field}.{name}"), "must be strictly positive"));
            }
        }
        Ok(())
    }

    /// Desired dynamic gap s* for ego speed `v` closing at `dv` on its leader.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        let dyn_term = v * self.time_headway + v * dv / (2.0 * (self.max_accel * self.comfort_decel).sqrt());
        self.min_gap + dyn_term.max(0.0)
    }
}

/// Bumper-to-bumper gap and speed of a neighbouring vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub gap: f64,
    pub speed: f64,
}

impl Neighbor {
    pub fn new(gap: f64, speed: f64) -> Self {
        Self { gap, speed }
    }
}

/// IDM acceleration, clamped to `[-max_brake, max_accel]`.
///
/// A leader at a non-positive gap yields full emergency braking.
pub fn idm_accel(speed: f64, leader: Option<Neighbor>, p: &IdmParams) -> f64 {
    let free = 1.0 - (speed / p.desired_speed).powf(p.exponent);
    let interaction = match leader {
        None => 0.0,
        Some(l) if l.gap <= 0.0 => return -p.max_brake,
        Some(l) => {
            let s_star = p.desired_gap(speed, speed - l.speed);
            (s_star / l.gap).powi(2)
        }
    };
    (p.max_accel * (free - interaction)).clamp(-p.max_brake, p.max_accel)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilParams {
    pub politeness: f64,
    /// Minimum advantage (m/s^2) required to switch lanes.
    pub a_threshold: f64,
    /// Maximum braking (positive magnitude) a lane change may impose on the new follower.
    pub b_safe: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        Self {
            politeness: 0.3,
            a_threshold: 0.1,
            b_safe: 4.0,
        }
    }
}

impl MobilParams {
    pub fn validate(&self) -> SimResult<()> {
        if !(0.0..=1.0).contains(&self.politeness) {
            return Err(SimError::config("drivers.mobil.politeness", "must lie in [0, 1]"));
        }
        if !(self.a_threshold >= 0.0) {
            return Err(SimError::config("drivers.mobil.a_threshold", "must be >= 0"));
        }
        if !(self.b_safe > 0.0) {
            return Err(SimError::config("drivers.mobil.b_safe", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneNeighbors {
    pub leader: Option<Neighbor>,
    pub follower: Option<Neighbor>,
}

/// Everything MOBIL needs about the ego vehicle's surroundings.
///
/// `left`/`right` are `None` when that lane does not exist or is not a legal target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilSituation {
    pub speed: f64,
    pub length: f64,
    pub current: LaneNeighbors,
    pub left: Option<LaneNeighbors>,
    pub right: Option<LaneNeighbors>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDecision {
    Keep,
    Left,
    Right,
}

/// Gap between a follower and a leader that sandwich the ego vehicle.
fn through_gap(follower: Neighbor, ego_length: f64, leader: Option<Neighbor>) -> Option<Neighbor> {
    leader.map(|l| Neighbor::new(follower.gap + ego_length + l.gap, l.speed))
}

/// Incentive of moving into `target`, or `None` when the move is unsafe.
fn lane_change_incentive(sit: &MobilSituation, target: &LaneNeighbors, idm: &IdmParams, mobil: &MobilParams) -> Option<f64> {
    let v = sit.speed;
    if target.leader.is_some_and(|l| l.gap <= 0.0) || target.follower.is_some_and(|f| f.gap <= 0.0) {
        return None;
    }
    let mut new_follower_gain = 0.0;
    if let Some(nf) = target.follower {
        let after = idm_accel(nf.speed, Some(Neighbor::new(nf.gap, v)), idm);
        if after < -mobil.b_safe {
            return None;
        }
        let before = idm_accel(nf.speed, through_gap(nf, sit.length, target.leader), idm);
        new_follower_gain = after - before;
    }
    let mut old_follower_gain = 0.0;
    if let Some(of) = sit.current.follower {
        let before = idm_accel(of.speed, Some(Neighbor::new(of.gap, v)), idm);
        let after = idm_accel(of.speed, through_gap(of, sit.length, sit.current.leader), idm);
        old_follower_gain = after - before;
    }
    let ego_gain = idm_accel(v, target.leader, idm) - idm_accel(v, sit.current.leader, idm);
    Some(ego_gain + mobil.politeness * (new_follower_gain + old_follower_gain))
}

/// MOBIL lane choice. Ties prefer the right lane, then the left, then keeping.
pub fn mobil_decide(sit: &MobilSituation, idm: &IdmParams, mobil: &MobilParams) -> LaneDecision {
    if !sit.speed.is_finite() {
        return LaneDecision::Keep;
    }
    let score = |lane: &Option<LaneNeighbors>| {
        lane.as_ref()
            .and_then(|t| lane_change_incentive(sit, t, idm, mobil))
            .filter(|g| g.is_finite() && *g > mobil.a_threshold)
    };
    match (score(&sit.right), score(&sit.left)) {
        (Some(r), Some(l)) if r >= l => LaneDecision::Right,
        (_, Some(_)) => LaneDecision::Left,
        (Some(_), None) => LaneDecision::Right,
        (None, None) => LaneDecision::Keep,
    }
}

/// Local view the merging vehicle decides on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergerView {
    /// Arc length of the vehicle centre along its current lane.
    pub s: f64,
    /// Neighbours in the lane the vehicle is currently in.
    pub current: LaneNeighbors,
    /// Leader/follower in highway lane 0 at the vehicle's longitudinal position.
    pub lane0: LaneNeighbors,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeCommand {
    pub target_lane: LaneRef,
    pub accel: f64,
}

/// Whether lane 0 can be entered without forcing anyone to brake harder than `b_safe`.
pub fn merge_gap_acceptable(speed: f64, lane0: &LaneNeighbors, idm: &IdmParams, mobil: &MobilParams) -> bool {
    if let Some(f) = lane0.follower {
        if f.gap <= 0.0 || idm_accel(f.speed, Some(Neighbor::new(f.gap, speed)), idm) < -mobil.b_safe {
            return false;
        }
    }
    if let Some(l) = lane0.leader {
        if l.gap <= 0.0 || idm_accel(speed, Some(l), idm) < -mobil.b_safe {
            return false;
        }
    }
    true
}

/// Gap-acceptance policy of the merging vehicle.
///
/// On the ramp it follows IDM behind the nearer of its ramp leader and a
/// stopped virtual vehicle at the end of the acceleration lane. Inside the
/// merge zone it commits to lane 0 as soon as the gap there passes the MOBIL
/// safety test. Past the end of the acceleration lane it brakes fully.
pub fn merging_hv_policy(state: &VehicleState, view: &MergerView, road: &RoadNetwork, idm: &IdmParams, mobil: &MobilParams) -> MergeCommand {
    let v = state.speed;
    if let LaneRef::Highway(_) = state.target_lane {
        let leader = if state.current_lane.is_ramp() { view.lane0.leader } else { view.current.leader };
        return MergeCommand {
            target_lane: state.target_lane,
            accel: idm_accel(v, leader, idm),
        };
    }
    let (_, merge_end) = road.merge_zone();
    let end_gap = merge_end - (view.s + 0.5 * state.length);
    if end_gap <= 0.0 {
        return MergeCommand {
            target_lane: LaneRef::Ramp,
            accel: -idm.max_brake,
        };
    }
    if road.in_merge_zone(view.s) && merge_gap_acceptable(v, &view.lane0, idm, mobil) {
        return MergeCommand {
            target_lane: LaneRef::Highway(0),
            accel: idm_accel(v, view.lane0.leader, idm),
        };
    }
    MergeCommand {
        target_lane: LaneRef::Ramp,
        accel: ramp_following_accel(state, view, road, idm),
    }
}

/// Car following on the ramp: IDM behind the nearer of the ramp leader and a
/// stopped virtual vehicle at the end of the acceleration lane.
pub fn ramp_following_accel(state: &VehicleState, view: &MergerView, road: &RoadNetwork, idm: &IdmParams) -> f64 {
    let end_gap = road.merge_zone().1 - (view.s + 0.5 * state.length);
    if end_gap <= 0.0 {
        return -idm.max_brake;
    }
    let wall = Neighbor::new(end_gap, 0.0);
    let leader = match view.current.leader {
        Some(l) if l.gap < wall.gap => l,
        _ => wall,
    };
    idm_accel(state.speed, Some(leader), idm)
}
