//! Straight multi-lane highway with a single on-ramp.
//!
//! Frame: `x` is longitudinal, `y` is lateral (positive to the left), headings
//! are measured from `+x`. Highway lane `k` has its centerline at `y = k * lane_width`,
//! so lane 0 is the rightmost lane. The ramp is a straight approach segment at
//! `ramp_angle` that joins a parallel acceleration lane at `y = -lane_width`
//! running from `ramp_merge_start` to `ramp_merge_end`.
//!
//! Arc length `s` on a highway lane equals `x`. On the ramp it is chosen so that
//! it also equals `x` along the acceleration lane; on the approach it decreases
//! from `ramp_merge_start` by the distance travelled back along the approach.

use crate::error::{SimError, SimResult};
use crate::geometry::{wrap_angle, Vec2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LaneRef {
    Ramp,
    Highway(usize),
}

impl LaneRef {
    /// Integer encoding used in trace files: ramp is `-1`.
    pub fn as_index(self) -> i64 {
        match self {
            LaneRef::Ramp => -1,
            LaneRef::Highway(k) => k as i64,
        }
    }

    pub fn is_ramp(self) -> bool {
        matches!(self, LaneRef::Ramp)
    }
}

impl Serialize for LaneRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.as_index())
    }
}

impl<'de> Deserialize<'de> for LaneRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        match v {
            -1 => Ok(LaneRef::Ramp),
            k if k >= 0 => Ok(LaneRef::Highway(k as usize)),
            k => Err(serde::de::Error::custom(format!("invalid lane index {k}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadConfig {
    pub lane_count: usize,
    pub lane_width: f64,
    pub highway_length: f64,
    pub ramp_merge_start: f64,
    pub ramp_merge_end: f64,
    pub ramp_approach_length: f64,
    pub ramp_angle: f64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            lane_count: 3,
            lane_width: 4.0,
            highway_length: 1000.0,
            ramp_merge_start: 400.0,
            ramp_merge_end: 600.0,
            ramp_approach_length: 200.0,
            ramp_angle: 10f64.to_radians(),
        }
    }
}

impl RoadConfig {
    pub fn validate(&self) -> SimResult<()> {
        if self.lane_count < 2 {
            return Err(SimError::config("road.lane_count", format!("must be >= 2, got {}", self.lane_count)));
        }
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return Err(SimError::config("road.lane_width", "must be a positive finite length"));
        }
        if !(self.highway_length.is_finite()
            && 0.0 < self.ramp_merge_start
            && self.ramp_merge_start < self.ramp_merge_end
            && self.ramp_merge_end < self.highway_length)
        {
            return Err(SimError::config(
                "road.ramp_merge_start",
                "require 0 < ramp_merge_start < ramp_merge_end < highway_length",
            ));
        }
        if !(self.ramp_approach_length > 0.0 && self.ramp_approach_length.is_finite()) {
            return Err(SimError::config("road.ramp_approach_length", "must be positive"));
        }
        if !(self.ramp_angle > 0.0 && self.ramp_angle < std::f64::consts::FRAC_PI_2) {
            return Err(SimError::config("road.ramp_angle", "must lie in (0, pi/2)"));
        }
        if self.ramp_merge_start - self.ramp_approach_length * self.ramp_angle.cos() < 0.0 {
            return Err(SimError::config(
                "road.ramp_approach_length",
                "ramp approach would start before x = 0",
            ));
        }
        Ok(())
    }
}

/// Result of projecting a point onto the nearest lane centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneProjection {
    pub lane: LaneRef,
    pub s: f64,
    /// Signed distance from the centerline, positive to the left.
    pub offset: f64,
}

/// Immutable road layout; share it behind an `Arc` between environments.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    config: RoadConfig,
    ramp_start: Vec2,
    ramp_join: Vec2,
    ramp_dir: Vec2,
}

/// Builds the road after validating the configuration.
pub fn build_road(config: RoadConfig) -> SimResult<RoadNetwork> {
    RoadNetwork::new(config)
}

impl RoadNetwork {
    pub fn new(config: RoadConfig) -> SimResult<Self> {
        config.validate()?;
        let ramp_dir = Vec2::from_angle(config.ramp_angle);
        let ramp_join = Vec2::new(config.ramp_merge_start, -config.lane_width);
        let ramp_start = ramp_join - ramp_dir * config.ramp_approach_length;
        Ok(Self {
            config,
            ramp_start,
            ramp_join,
            ramp_dir,
        })
    }

    pub fn config(&self) -> &RoadConfig {
        &self.config
    }

    pub fn lane_count(&self) -> usize {
        self.config.lane_count
    }

    pub fn lane_width(&self) -> f64 {
        self.config.lane_width
    }

    pub fn merge_zone(&self) -> (f64, f64) {
        (self.config.ramp_merge_start, self.config.ramp_merge_end)
    }

    pub fn in_merge_zone(&self, s: f64) -> bool {
        s >= self.config.ramp_merge_start && s <= self.config.ramp_merge_end
    }

    /// Lanes in projection order: highway 0..n, then the ramp.
    pub fn lanes(&self) -> impl Iterator<Item = LaneRef> + '_ {
        (0..self.config.lane_count).map(LaneRef::Highway).chain(std::iter::once(LaneRef::Ramp))
    }

    pub fn is_valid_lane(&self, lane: LaneRef) -> bool {
        match lane {
            LaneRef::Ramp => true,
            LaneRef::Highway(k) => k < self.config.lane_count,
        }
    }

    /// Valid arc-length interval of a lane.
    pub fn lane_range(&self, lane: LaneRef) -> (f64, f64) {
        match lane {
            LaneRef::Highway(_) => (0.0, self.config.highway_length),
            LaneRef::Ramp => (
                self.config.ramp_merge_start - self.config.ramp_approach_length,
                self.config.ramp_merge_end,
            ),
        }
    }

    pub fn ramp_start(&self) -> Vec2 {
        self.ramp_start
    }

    /// Centerline point of `lane` at arc length `s`.
    pub fn sample(&self, lane: LaneRef, s: f64) -> SimResult<Vec2> {
        self.check_lane_s(lane, s)?;
        Ok(self.centerline_unchecked(lane, s))
    }

    /// Centerline heading of `lane` at arc length `s`.
    pub fn lane_heading(&self, lane: LaneRef, s: f64) -> f64 {
        match lane {
            LaneRef::Ramp if s < self.config.ramp_merge_start => self.config.ramp_angle,
            _ => 0.0,
        }
    }

    fn check_lane_s(&self, lane: LaneRef, s: f64) -> SimResult<()> {
        if !self.is_valid_lane(lane) {
            return Err(SimError::Domain(format!("lane {lane:?} does not exist")));
        }
        let (lo, hi) = self.lane_range(lane);
        if !(s >= lo && s <= hi) {
            return Err(SimError::Domain(format!("s = {s} outside lane {lane:?} range [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn centerline_unchecked(&self, lane: LaneRef, s: f64) -> Vec2 {
        match lane {
            LaneRef::Highway(k) => Vec2::new(s, k as f64 * self.config.lane_width),
            LaneRef::Ramp if s >= self.config.ramp_merge_start => Vec2::new(s, -self.config.lane_width),
            LaneRef::Ramp => self.ramp_start + self.ramp_dir * (s - (self.config.ramp_merge_start - self.config.ramp_approach_length)),
        }
    }

    /// Lateral y of a highway lane centerline (the acceleration lane for `Ramp`).
    pub fn lane_y(&self, lane: LaneRef) -> f64 {
        match lane {
            LaneRef::Highway(k) => k as f64 * self.config.lane_width,
            LaneRef::Ramp => -self.config.lane_width,
        }
    }

    /// Axis-aligned bounds accepted by [`RoadNetwork::project_to_lane`].
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let w = self.config.lane_width;
        let lo = Vec2::new(self.ramp_start.x.min(0.0) - w, self.ramp_start.y - w);
        let hi = Vec2::new(self.config.highway_length + w, (self.config.lane_count as f64 - 0.5) * w + w);
        (lo, hi)
    }

    /// Nearest lane, arc length along it and signed lateral offset.
    ///
    /// Equidistant candidates are resolved by heading alignment, then by lane
    /// order (highway lanes before the ramp).
    pub fn project_to_lane(&self, position: Vec2, heading: f64) -> SimResult<LaneProjection> {
        if !position.is_finite() || !heading.is_finite() {
            return Err(SimError::NonFinite("project_to_lane input"));
        }
        let (lo, hi) = self.bounds();
        if position.x < lo.x || position.x > hi.x || position.y < lo.y || position.y > hi.y {
            return Err(SimError::OutOfBounds {
                x: position.x,
                y: position.y,
            });
        }
        let mut best: Option<(f64, f64, LaneProjection)> = None;
        for lane in self.lanes() {
            let (dist, proj) = self.project_onto(lane, position);
            let align = wrap_angle(heading - self.lane_heading(lane, proj.s)).abs();
            let better = match &best {
                None => true,
                Some((bd, ba, _)) => dist < *bd || (dist == *bd && align < *ba),
            };
            if better {
                best = Some((dist, align, proj));
            }
        }
        Ok(best.expect("road has lanes").2)
    }

    /// Distance to and projection onto a single lane centerline.
    pub fn project_onto(&self, lane: LaneRef, p: Vec2) -> (f64, LaneProjection) {
        match lane {
            LaneRef::Highway(k) => {
                let y0 = k as f64 * self.config.lane_width;
                let s = p.x.clamp(0.0, self.config.highway_length);
                let foot = Vec2::new(s, y0);
                let dist = (p - foot).norm();
                (dist, LaneProjection { lane, s, offset: p.y - y0 })
            }
            LaneRef::Ramp => {
                let w = self.config.lane_width;
                let ms = self.config.ramp_merge_start;
                // acceleration-lane part
                let s_acc = p.x.clamp(ms, self.config.ramp_merge_end);
                let foot_acc = Vec2::new(s_acc, -w);
                let d_acc = (p - foot_acc).norm();
                // approach part
                let la = self.config.ramp_approach_length;
                let t = (p - self.ramp_start).dot(self.ramp_dir).clamp(0.0, la);
                let foot_app = self.ramp_start + self.ramp_dir * t;
                let d_app = (p - foot_app).norm();
                if d_app < d_acc {
                    let offset = self.ramp_dir.cross(p - foot_app);
                    (d_app, LaneProjection { lane, s: ms - la + t, offset })
                } else {
                    (d_acc, LaneProjection { lane, s: s_acc, offset: p.y + w })
                }
            }
        }
    }

    /// Whether a point lies on drivable surface (highway, acceleration lane, or ramp approach).
    ///
    /// The highway is treated as open-ended past `highway_length`.
    pub fn contains(&self, p: Vec2) -> bool {
        let w = self.config.lane_width;
        let top = (self.config.lane_count as f64 - 0.5) * w;
        if p.x >= 0.0 && p.y >= -0.5 * w && p.y <= top {
            return true;
        }
        let (ms, me) = self.merge_zone();
        if p.x >= ms && p.x <= me && p.y >= -1.5 * w && p.y <= -0.5 * w {
            return true;
        }
        let d = p - self.ramp_start;
        let along = d.dot(self.ramp_dir);
        let across = self.ramp_dir.cross(d);
        along >= 0.0 && along <= self.config.ramp_approach_length && across.abs() <= 0.5 * w
    }

    /// Highway edges `(right, left)` in y.
    pub fn highway_edges(&self) -> (f64, f64) {
        let w = self.config.lane_width;
        (-0.5 * w, (self.config.lane_count as f64 - 0.5) * w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn road() -> RoadNetwork {
        RoadNetwork::new(RoadConfig::default()).unwrap()
    }

    #[test]
    fn default_road_has_three_lanes_and_merge_zone() {
        let cfg = RoadConfig {
            lane_count: 3,
            lane_width: 4.0,
            highway_length: 1000.0,
            ramp_merge_start: 400.0,
            ramp_merge_end: 600.0,
            ..RoadConfig::default()
        };
        let r = RoadNetwork::new(cfg).unwrap();
        assert_eq!(r.lanes().filter(|l| !l.is_ramp()).count(), 3);
        assert_eq!(r.lanes().filter(|l| l.is_ramp()).count(), 1);
        assert_eq!(r.merge_zone(), (400.0, 600.0));
    }

    #[test]
    fn single_lane_is_rejected() {
        let cfg = RoadConfig {
            lane_count: 1,
            ..RoadConfig::default()
        };
        match RoadNetwork::new(cfg) {
            Err(SimError::Config { field, .. }) => assert_eq!(field, "road.lane_count"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn inverted_merge_zone_is_rejected() {
        let cfg = RoadConfig {
            ramp_merge_start: 600.0,
            ramp_merge_end: 400.0,
            ..RoadConfig::default()
        };
        assert!(RoadNetwork::new(cfg).is_err());
    }

    #[test]
    fn lane_zero_sample() {
        let p = road().sample(LaneRef::Highway(0), 100.0).unwrap();
        assert_eq!(p, Vec2::new(100.0, 0.0));
    }

    #[test]
    fn projection_on_lane_one() {
        let r = road();
        let p = r.sample(LaneRef::Highway(1), 250.0).unwrap();
        let proj = r.project_to_lane(p, 0.0).unwrap();
        assert_eq!(proj.lane, LaneRef::Highway(1));
        assert!((proj.s - 250.0).abs() < 1e-9);
        assert!(proj.offset.abs() < 1e-9);
    }

    #[test]
    fn left_offset_is_positive() {
        let r = road();
        let proj = r.project_to_lane(Vec2::new(300.0, 1.0), 0.0).unwrap();
        assert_eq!(proj.lane, LaneRef::Highway(0));
        assert!((proj.offset - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ramp_is_continuous_at_join() {
        let r = road();
        let ms = r.merge_zone().0;
        let before = r.sample(LaneRef::Ramp, ms - 1e-9).unwrap();
        let at = r.sample(LaneRef::Ramp, ms).unwrap();
        assert!((before - at).norm() < 1e-8);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let r = road();
        assert!(matches!(r.project_to_lane(Vec2::new(500.0, 80.0), 0.0), Err(SimError::OutOfBounds { .. })));
        assert!(matches!(r.project_to_lane(Vec2::new(-500.0, 0.0), 0.0), Err(SimError::OutOfBounds { .. })));
    }

    #[test]
    fn drivable_area() {
        let r = road();
        assert!(r.contains(Vec2::new(100.0, 0.0)));
        assert!(r.contains(Vec2::new(500.0, -4.0)));
        assert!(!r.contains(Vec2::new(100.0, -4.0)));
        assert!(!r.contains(Vec2::new(100.0, 20.0)));
        let on_approach = r.sample(LaneRef::Ramp, 300.0).unwrap();
        assert!(r.contains(on_approach));
    }
}
