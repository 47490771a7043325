//! Kinematic bicycle integration and the PID tracking that turns meta-actions
//! into steering and acceleration commands.

use crate::error::{ensure_finite, SimError, SimResult};
use crate::geometry::{wrap_angle, OrientedRect, Vec2};
use crate::road::{LaneRef, RoadNetwork};
use crate::VehicleId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    Av,
    Hv,
    MergingHv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub current_lane: LaneRef,
    pub target_lane: LaneRef,
    pub target_speed: f64,
}

impl VehicleState {
    pub fn footprint(&self) -> OrientedRect {
        OrientedRect::new(self.position, self.heading, self.length, self.width)
    }

    pub fn is_av(&self) -> bool {
        self.kind == VehicleKind::Av
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BicycleParams {
    /// Distance from the centre of gravity to the front axle.
    pub l_f: f64,
    /// Distance from the centre of gravity to the rear axle.
    pub l_r: f64,
    pub max_steer: f64,
    pub max_accel: f64,
    /// Braking magnitude (positive).
    pub max_decel: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            l_f: 1.25,
            l_r: 1.25,
            max_steer: 0.5,
            max_accel: 3.0,
            max_decel: 8.0,
        }
    }
}

impl BicycleParams {
    pub fn validate(&self) -> SimResult<()> {
        for (name, v) in [
            ("dynamics.bicycle.l_f", self.l_f),
            ("dynamics.bicycle.l_r", self.l_r),
            ("dynamics.bicycle.max_steer", self.max_steer),
            ("dynamics.bicycle.max_accel", self.max_accel),
            ("dynamics.bicycle.max_decel", self.max_decel),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::config(name, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }
}

/// Low-level command, clamped to the vehicle's actuation limits on construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub accel: f64,
    pub steer: f64,
}

impl ControlInput {
    pub fn new(accel: f64, steer: f64, params: &BicycleParams) -> Self {
        Self {
            accel: accel.clamp(-params.max_decel, params.max_accel),
            steer: steer.clamp(-params.max_steer, params.max_steer),
        }
    }
}

/// One explicit-Euler step of the kinematic bicycle model.
pub fn step_bicycle(state: &VehicleState, params: &BicycleParams, control: ControlInput, dt: f64) -> SimResult<VehicleState> {
    ensure_finite(
        &[state.position.x, state.position.y, state.heading, state.speed, control.accel, control.steer, dt],
        "bicycle step input",
    )?;
    if dt <= 0.0 {
        return Err(SimError::Domain(format!("dt must be positive, got {dt}")));
    }
    let beta = (params.l_r * control.steer.tan() / params.wheelbase()).atan();
    let v = state.speed;
    let (sin_hb, cos_hb) = (state.heading + beta).sin_cos();
    let mut next = state.clone();
    next.position = Vec2::new(state.position.x + v * cos_hb * dt, state.position.y + v * sin_hb * dt);
    next.heading = state.heading + v / params.l_r * beta.sin() * dt;
    next.speed = (v + control.accel * dt).max(0.0);
    Ok(next)
}

/// Discrete maneuvers in their canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaAction {
    LaneLeft = 0,
    Idle = 1,
    LaneRight = 2,
    Accelerate = 3,
    Decelerate = 4,
}

impl MetaAction {
    pub const COUNT: usize = 5;
    pub const ALL: [MetaAction; 5] = [
        MetaAction::LaneLeft,
        MetaAction::Idle,
        MetaAction::LaneRight,
        MetaAction::Accelerate,
        MetaAction::Decelerate,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub lane: LaneRef,
    pub speed: f64,
}

/// Applies a meta-action to the vehicle's current targets.
///
/// Lane shifts are relative to the current target lane. Moves that would leave
/// the road, enter the ramp, or leave the ramp outside the merge zone keep the
/// target lane unchanged.
pub fn meta_action_to_targets(action: MetaAction, state: &VehicleState, road: &RoadNetwork, speed_step: f64, v_max: f64) -> Targets {
    let lane = state.target_lane;
    let speed = state.target_speed;
    match action {
        MetaAction::Idle => Targets { lane, speed },
        MetaAction::LaneLeft => {
            let lane = match lane {
                LaneRef::Highway(k) if k + 1 < road.lane_count() => LaneRef::Highway(k + 1),
                LaneRef::Ramp => {
                    let (_, proj) = road.project_onto(LaneRef::Ramp, state.position);
                    if road.in_merge_zone(proj.s) {
                        LaneRef::Highway(0)
                    } else {
                        LaneRef::Ramp
                    }
                }
                other => other,
            };
            Targets { lane, speed }
        }
        MetaAction::LaneRight => {
            let lane = match lane {
                LaneRef::Highway(k) if k >= 1 => LaneRef::Highway(k - 1),
                other => other,
            };
            Targets { lane, speed }
        }
        MetaAction::Accelerate => Targets {
            lane,
            speed: (speed + speed_step).clamp(0.0, v_max),
        },
        MetaAction::Decelerate => Targets {
            lane,
            speed: (speed - speed_step).clamp(0.0, v_max),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Anti-windup bound on the integral state.
    pub integrator_limit: f64,
}

impl PidGains {
    pub const fn p(kp: f64) -> Self {
        Self {
            kp,
            ki: 0.0,
            kd: 0.0,
            integrator_limit: 1.0,
        }
    }

    pub fn validate(&self, field: &str) -> SimResult<()> {
        if !(self.kp >= 0.0 && self.kp.is_finite()) {
            return Err(SimError::config(format!("{field}.kp"), "must be >= 0"));
        }
        if !(self.integrator_limit > 0.0) {
            return Err(SimError::config(format!("{field}.integrator_limit"), "must be > 0"));
        }
        if !self.ki.is_finite() || !self.kd.is_finite() {
            return Err(SimError::config(field.to_string(), "gains must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pid {
    integral: f64,
    prev_error: Option<f64>,
}

impl Pid {
    pub fn update(&mut self, gains: &PidGains, error: f64, dt: f64) -> f64 {
        self.integral = (self.integral + error * dt).clamp(-gains.integrator_limit, gains.integrator_limit);
        let derivative = match self.prev_error {
            Some(prev) => (error - prev) / dt,
            None => 0.0,
        };
        self.prev_error = Some(error);
        gains.kp * error + gains.ki * self.integral + gains.kd * derivative
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Gains of the cascaded lateral loop (offset -> heading reference -> yaw rate)
/// and the longitudinal speed loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingGains {
    /// Lateral offset error (m) to lateral velocity command (m/s).
    pub lateral: PidGains,
    /// Heading error (rad) to yaw-rate command (rad/s).
    pub heading: PidGains,
    /// Speed error (m/s) to acceleration (m/s^2).
    pub longitudinal: PidGains,
    /// Bound on the heading deviation requested by the lateral loop.
    pub max_heading_offset: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        Self {
            lateral: PidGains::p(1.7),
            heading: PidGains::p(5.0),
            longitudinal: PidGains::p(1.0),
            max_heading_offset: std::f64::consts::FRAC_PI_4,
        }
    }
}

impl TrackingGains {
    pub fn validate(&self) -> SimResult<()> {
        self.lateral.validate("dynamics.tracking.lateral")?;
        self.heading.validate("dynamics.tracking.heading")?;
        self.longitudinal.validate("dynamics.tracking.longitudinal")?;
        if !(self.max_heading_offset > 0.0 && self.max_heading_offset < std::f64::consts::FRAC_PI_2) {
            return Err(SimError::config("dynamics.tracking.max_heading_offset", "must lie in (0, pi/2)"));
        }
        Ok(())
    }
}

/// Per-vehicle controller internals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tracker {
    lateral: Pid,
    heading: Pid,
    longitudinal: Pid,
}

impl Tracker {
    /// Longitudinal PID on speed error. Raw output, not clamped.
    pub fn speed_command(&mut self, gains: &TrackingGains, speed: f64, target_speed: f64, dt: f64) -> f64 {
        self.longitudinal.update(&gains.longitudinal, target_speed - speed, dt)
    }

    /// Cascaded lateral PID toward the centerline of `target_lane`. Raw steering angle, not clamped.
    pub fn steer_command(&mut self, gains: &TrackingGains, state: &VehicleState, target_lane: LaneRef, road: &RoadNetwork, params: &BicycleParams, dt: f64) -> f64 {
        let (_, proj) = road.project_onto(target_lane, state.position);
        let lane_heading = road.lane_heading(target_lane, proj.s);
        let lateral_speed = self.lateral.update(&gains.lateral, -proj.offset, dt);
        let v = state.speed;
        let offset_angle = if v > 1e-6 {
            (lateral_speed / v).clamp(-1.0, 1.0).asin()
        } else {
            0.0
        };
        let heading_ref = lane_heading + offset_angle.clamp(-gains.max_heading_offset, gains.max_heading_offset);
        let heading_error = wrap_angle(heading_ref - state.heading);
        let yaw_rate = self.heading.update(&gains.heading, heading_error, dt);
        if v <= 1e-6 {
            return 0.0;
        }
        let sin_beta = (yaw_rate * params.l_r / v).clamp(-1.0, 1.0);
        let beta = sin_beta.asin();
        (beta.tan() * params.wheelbase() / params.l_r).atan()
    }

    /// Full tracking command toward `targets`, clamped to the actuation limits.
    pub fn track(&mut self, state: &VehicleState, targets: Targets, road: &RoadNetwork, gains: &TrackingGains, params: &BicycleParams, dt: f64) -> SimResult<ControlInput> {
        ensure_finite(&[state.position.x, state.position.y, state.heading, state.speed, targets.speed], "tracking state")?;
        if dt <= 0.0 {
            return Err(SimError::Domain(format!("dt must be positive, got {dt}")));
        }
        let accel = self.speed_command(gains, state.speed, targets.speed, dt);
        let steer = self.steer_command(gains, state, targets.lane, road, params, dt);
        Ok(ControlInput::new(accel, steer, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::RoadConfig;

    fn road() -> RoadNetwork {
        RoadNetwork::new(RoadConfig::default()).unwrap()
    }

    fn car(lane: usize, x: f64, v: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(0),
            kind: VehicleKind::Av,
            position: Vec2::new(x, lane as f64 * 4.0),
            heading: 0.0,
            speed: v,
            length: 5.0,
            width: 2.0,
            current_lane: LaneRef::Highway(lane),
            target_lane: LaneRef::Highway(lane),
            target_speed: v,
        }
    }

    #[test]
    fn straight_line_step() {
        let s = car(0, 0.0, 20.0);
        let n = step_bicycle(&s, &BicycleParams::default(), ControlInput::default(), 0.1).unwrap();
        assert!((n.position.x - 2.0).abs() < 1e-12);
        assert_eq!(n.position.y, 0.0);
        assert_eq!(n.heading, 0.0);
    }

    #[test]
    fn rest_is_fixed_point() {
        let s = car(1, 50.0, 0.0);
        let p = BicycleParams::default();
        let n = step_bicycle(&s, &p, ControlInput::new(0.0, 0.3, &p), 0.1).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn speed_floored_at_zero() {
        let s = car(0, 0.0, 0.5);
        let p = BicycleParams::default();
        let n = step_bicycle(&s, &p, ControlInput::new(-8.0, 0.0, &p), 0.1).unwrap();
        assert_eq!(n.speed, 0.0);
    }

    #[test]
    fn non_finite_control_rejected() {
        let s = car(0, 0.0, 10.0);
        let c = ControlInput { accel: f64::NAN, steer: 0.0 };
        assert!(matches!(step_bicycle(&s, &BicycleParams::default(), c, 0.1), Err(SimError::NonFinite(_))));
    }

    #[test]
    fn control_input_clamps() {
        let p = BicycleParams::default();
        let c = ControlInput::new(100.0, -3.0, &p);
        assert_eq!(c.accel, p.max_accel);
        assert_eq!(c.steer, -p.max_steer);
    }

    #[test]
    fn idle_keeps_targets() {
        let mut s = car(1, 100.0, 25.0);
        s.target_speed = 25.0;
        let t = meta_action_to_targets(MetaAction::Idle, &s, &road(), 2.0, 30.0);
        assert_eq!(t, Targets { lane: LaneRef::Highway(1), speed: 25.0 });
    }

    #[test]
    fn lane_left_clamped_at_leftmost() {
        let s = car(2, 100.0, 25.0);
        let t = meta_action_to_targets(MetaAction::LaneLeft, &s, &road(), 2.0, 30.0);
        assert_eq!(t.lane, LaneRef::Highway(2));
    }

    #[test]
    fn lane_right_never_enters_ramp() {
        let s = car(0, 500.0, 25.0);
        let t = meta_action_to_targets(MetaAction::LaneRight, &s, &road(), 2.0, 30.0);
        assert_eq!(t.lane, LaneRef::Highway(0));
    }

    #[test]
    fn accelerate_is_fourth_action() {
        let mut s = car(0, 100.0, 25.0);
        s.target_speed = 25.0;
        let a = MetaAction::from_index(3).unwrap();
        assert_eq!(a, MetaAction::Accelerate);
        assert_eq!(meta_action_to_targets(a, &s, &road(), 2.0, 30.0).speed, 27.0);
        s.target_speed = 29.0;
        assert_eq!(meta_action_to_targets(a, &s, &road(), 2.0, 30.0).speed, 30.0);
        s.target_speed = 1.0;
        assert_eq!(meta_action_to_targets(MetaAction::Decelerate, &s, &road(), 2.0, 30.0).speed, 0.0);
    }

    #[test]
    fn ramp_exit_only_in_merge_zone() {
        let r = road();
        let mut s = car(0, 0.0, 20.0);
        s.current_lane = LaneRef::Ramp;
        s.target_lane = LaneRef::Ramp;
        s.position = r.sample(LaneRef::Ramp, 300.0).unwrap();
        assert_eq!(meta_action_to_targets(MetaAction::LaneLeft, &s, &r, 2.0, 30.0).lane, LaneRef::Ramp);
        s.position = r.sample(LaneRef::Ramp, 450.0).unwrap();
        assert_eq!(meta_action_to_targets(MetaAction::LaneLeft, &s, &r, 2.0, 30.0).lane, LaneRef::Highway(0));
    }

    #[test]
    fn zero_error_fixed_point() {
        let s = car(1, 100.0, 25.0);
        let mut tr = Tracker::default();
        let targets = Targets { lane: LaneRef::Highway(1), speed: 25.0 };
        let c = tr.track(&s, targets, &road(), &TrackingGains::default(), &BicycleParams::default(), 1.0 / 15.0).unwrap();
        assert_eq!(c, ControlInput { accel: 0.0, steer: 0.0 });
        assert_eq!(tr.longitudinal.integral(), 0.0);
        assert_eq!(tr.lateral.integral(), 0.0);
    }

    #[test]
    fn proportional_speed_term() {
        let gains = TrackingGains {
            longitudinal: PidGains::p(1.0),
            ..TrackingGains::default()
        };
        let mut tr = Tracker::default();
        assert_eq!(tr.speed_command(&gains, 20.0, 25.0, 0.1), 5.0);
    }

    #[test]
    fn pid_integrator_is_bounded() {
        let g = PidGains { kp: 0.0, ki: 1.0, kd: 0.0, integrator_limit: 0.5 };
        let mut pid = Pid::default();
        for _ in 0..100 {
            pid.update(&g, 10.0, 0.1);
        }
        assert_eq!(pid.integral(), 0.5);
    }

    #[test]
    fn pid_derivative_uses_previous_error() {
        let g = PidGains { kp: 0.0, ki: 0.0, kd: 1.0, integrator_limit: 1.0 };
        let mut pid = Pid::default();
        assert_eq!(pid.update(&g, 1.0, 0.5), 0.0);
        assert_eq!(pid.update(&g, 2.0, 0.5), 2.0);
    }
}
