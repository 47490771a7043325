//! VelocityMap observations.
//!
//! Each AV sees a world-axis-aligned grid centred on itself. Channel 0 holds
//! human drivers, channel 1 the other AVs, channel 2 the drivable road plus the
//! ego footprint and channel 3 the merging vehicle. Occupied pixels carry the
//! encoded speed of the vehicle covering them; the last `history` frames are
//! stacked into a `(C, D, H, W)` tensor.

use crate::dynamics::VehicleKind;
use crate::env::World;
use crate::error::{SimError, SimResult};
use crate::geometry::{OrientedRect, Vec2};
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

pub const CHANNELS: usize = 4;
pub const CH_HUMANS: usize = 0;
pub const CH_ALLIES: usize = 1;
pub const CH_ROAD: usize = 2;
pub const CH_MERGER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedEncoding {
    /// `clamp(v / v_max, min_value, 1)`.
    Absolute,
    /// `clamp(0.5 + (v - v_ego) / (2 v_max), min_value, 1)`.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    /// Number of stacked frames D.
    pub history: usize,
    pub height: usize,
    pub width: usize,
    pub meters_per_pixel_x: f64,
    pub meters_per_pixel_y: f64,
    /// Column of the ego centre as a fraction of the width; most of the view looks ahead.
    pub ego_column_fraction: f64,
    pub speed_encoding: SpeedEncoding,
    /// Floor of the speed encoding, so a stopped vehicle is still distinguishable from empty road.
    pub min_value: f64,
    pub road_value: f64,
    pub ego_value: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ObservationConfig {
    /// 10 x 64 x 512 grid at 0.375 m per pixel.
    pub fn paper() -> Self {
        Self {
            history: 10,
            height: 64,
            width: 512,
            meters_per_pixel_x: 0.375,
            meters_per_pixel_y: 0.375,
            ego_column_fraction: 0.25,
            speed_encoding: SpeedEncoding::Absolute,
            min_value: 0.1,
            road_value: 0.5,
            ego_value: 1.0,
        }
    }

    /// Same field of view as [`ObservationConfig::paper`] at a quarter of the resolution.
    pub fn desk() -> Self {
        Self {
            history: 4,
            height: 16,
            width: 128,
            meters_per_pixel_x: 1.5,
            meters_per_pixel_y: 1.5,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> SimResult<()> {
        if self.history == 0 || self.height == 0 || self.width == 0 {
            return Err(SimError::config("observation", "history, height and width must be >= 1"));
        }
        if !(self.meters_per_pixel_x > 0.0 && self.meters_per_pixel_y > 0.0) {
            return Err(SimError::config("observation.meters_per_pixel_x", "resolutions must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ego_column_fraction) {
            return Err(SimError::config("observation.ego_column_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.min_value) {
            return Err(SimError::config("observation.min_value", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn anchor_col(&self) -> f64 {
        self.width as f64 * self.ego_column_fraction
    }

    pub fn anchor_row(&self) -> f64 {
        self.height as f64 / 2.0
    }

    /// World position of the centre of pixel `(row, col)` for an ego at `origin`. Row 0 is the highest y.
    pub fn pixel_center(&self, origin: Vec2, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            origin.x + (col as f64 + 0.5 - self.anchor_col()) * self.meters_per_pixel_x,
            origin.y + (self.anchor_row() - (row as f64 + 0.5)) * self.meters_per_pixel_y,
        )
    }

    pub fn encode_speed(&self, speed: f64, ego_speed: f64, v_max: f64) -> f32 {
        let raw = match self.speed_encoding {
            SpeedEncoding::Absolute => speed / v_max,
            SpeedEncoding::Relative => 0.5 + (speed - ego_speed) / (2.0 * v_max),
        };
        raw.clamp(self.min_value, 1.0) as f32
    }

    /// Shape `[C, D, H, W]` of a stacked observation.
    pub fn shape(&self) -> [usize; 4] {
        [CHANNELS, self.history, self.height, self.width]
    }
}

/// One `(C, H, W)` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityMapFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl VelocityMapFrame {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; CHANNELS * height * width],
        }
    }

    fn offset(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.height + r) * self.width + col
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[self.offset(c, r, col)]
    }

    fn raise(&mut self, c: usize, r: usize, col: usize, value: f32) {
        let i = self.offset(c, r, col);
        self.data[i] = self.data[i].max(value);
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Stacked history in `(C, D, H, W)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

fn channel_of(kind: VehicleKind) -> usize {
    match kind {
        VehicleKind::Hv => CH_HUMANS,
        VehicleKind::Av => CH_ALLIES,
        VehicleKind::MergingHv => CH_MERGER,
    }
}

/// Inclusive pixel window that can contain centres inside `rect`, padded by one pixel.
fn pixel_window(cfg: &ObservationConfig, origin: Vec2, rect: &OrientedRect) -> Option<(usize, usize, usize, usize)> {
    let (lo, hi) = rect.aabb();
    let col = |x: f64| (x - origin.x) / cfg.meters_per_pixel_x + cfg.anchor_col() - 0.5;
    let row = |y: f64| cfg.anchor_row() - (y - origin.y) / cfg.meters_per_pixel_y - 0.5;
    let c0 = col(lo.x).floor() - 1.0;
    let c1 = col(hi.x).ceil() + 1.0;
    let r0 = row(hi.y).floor() - 1.0;
    let r1 = row(lo.y).ceil() + 1.0;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    if c1 < 0.0 || r1 < 0.0 || c0 >= w || r0 >= h {
        return None;
    }
    Some((
        r0.max(0.0) as usize,
        r1.min(h - 1.0) as usize,
        c0.max(0.0) as usize,
        c1.min(w - 1.0) as usize,
    ))
}

fn paint(frame: &mut VelocityMapFrame, cfg: &ObservationConfig, origin: Vec2, rect: &OrientedRect, channel: usize, value: f32) {
    let Some((r0, r1, c0, c1)) = pixel_window(cfg, origin, rect) else {
        return;
    };
    for r in r0..=r1 {
        for c in c0..=c1 {
            if rect.contains(cfg.pixel_center(origin, r, c)) {
                frame.raise(channel, r, c, value);
            }
        }
    }
}

/// Renders the frame seen by `ego`, drawing only the vehicles in `visible`.
pub fn rasterize(world: &World, ego: VehicleId, visible: &BTreeSet<VehicleId>, cfg: &ObservationConfig) -> SimResult<VelocityMapFrame> {
    let me = world.vehicle(ego).ok_or_else(|| SimError::Protocol(format!("no vehicle {ego} to observe from")))?;
    if me.crashed {
        return Err(SimError::Domain(format!("vehicle {ego} has crashed and observes nothing")));
    }
    let origin = me.state.position;
    let v_max = world.config().dynamics.v_max;
    let road = world.road();
    let mut frame = VelocityMapFrame::zeros(cfg.height, cfg.width);
    let road_value = cfg.road_value as f32;
    for r in 0..cfg.height {
        for c in 0..cfg.width {
            if road.contains(cfg.pixel_center(origin, r, c)) {
                frame.raise(CH_ROAD, r, c, road_value);
            }
        }
    }
    paint(&mut frame, cfg, origin, &me.state.footprint(), CH_ROAD, cfg.ego_value as f32);
    for v in world.vehicles() {
        if v.state.id == ego || v.exited || !visible.contains(&v.state.id) {
            continue;
        }
        let value = cfg.encode_speed(v.state.speed, me.state.speed, v_max);
        paint(&mut frame, cfg, origin, &v.state.footprint(), channel_of(v.state.kind), value);
    }
    Ok(frame)
}

/// Stacks frames oldest first into `(C, D, H, W)`, repeating the oldest frame when fewer than `depth` exist.
pub fn stack_history(frames: &VecDeque<VelocityMapFrame>, depth: usize) -> SimResult<Observation> {
    let first = frames.front().ok_or_else(|| SimError::Domain("cannot stack an empty history".into()))?;
    let (h, w) = (first.height, first.width);
    let pad = depth.saturating_sub(frames.len());
    let skip = frames.len().saturating_sub(depth);
    let ordered: Vec<&VelocityMapFrame> = std::iter::repeat_n(first, pad).chain(frames.iter().skip(skip)).collect();
    let plane = h * w;
    let mut data = vec![0.0f32; CHANNELS * depth * plane];
    for (d, f) in ordered.iter().enumerate() {
        for c in 0..CHANNELS {
            let dst = (c * depth + d) * plane;
            data[dst..dst + plane].copy_from_slice(f.channel(c));
        }
    }
    Ok(Observation {
        shape: [CHANNELS, depth, h, w],
        data,
    })
}

/// Keeps one frame history per AV.
#[derive(Debug, Clone)]
pub struct Observer {
    config: ObservationConfig,
    histories: BTreeMap<VehicleId, VecDeque<VelocityMapFrame>>,
}

impl Observer {
    pub fn new(config: ObservationConfig) -> SimResult<Self> {
        config.validate()?;
        Ok(Self {
            config,
            histories: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ObservationConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.histories.clear();
    }

    /// Renders a new frame for every active AV and returns their stacked observations.
    pub fn observe(&mut self, world: &World) -> SimResult<BTreeMap<VehicleId, Observation>> {
        let visible = world.visible_ids();
        let mut out = BTreeMap::new();
        for id in world.active_av_ids() {
            let frame = rasterize(world, id, &visible, &self.config)?;
            let history = self.histories.entry(id).or_default();
            history.push_back(frame);
            while history.len() > self.config.history {
                history.pop_front();
            }
            out.insert(id, stack_history(history, self.config.history)?);
        }
        Ok(out)
    }

    /// Most recent frame of `id`, if any.
    pub fn latest_frame(&self, id: VehicleId) -> Option<&VelocityMapFrame> {
        self.histories.get(&id).and_then(|h| h.back())
    }
}

/// Writes one channel as a binary 8-bit PGM with a comment line.
pub fn write_pgm(frame: &VelocityMapFrame, channel: usize, comment: &str, mut out: impl Write) -> std::io::Result<()> {
    write!(out, "P5\n# {}\n{} {}\n255\n", comment.replace('\n', " "), frame.width, frame.height)?;
    let bytes: Vec<u8> = frame.channel(channel).iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    out.write_all(&bytes)
}
