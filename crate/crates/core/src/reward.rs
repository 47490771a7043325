//! Social value orientation reward.
//!
//! Each autonomous agent mixes its own utility with the utility of the vehicles
//! it can observe: `cos(phi) * r_ego + sin(phi) * (r_allies + r_humans)`. The
//! merging vehicle always belongs to the human group.

use crate::error::{SimError, SimResult};
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;

/// How the utilities inside each social group are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocialAggregation {
    /// Average over the observed vehicles; keeps the reward scale independent of traffic density.
    Mean,
    /// Plain sum over the observed vehicles.
    Sum,
}

/// A single angle for every agent, or one angle per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiSetting {
    Shared(f64),
    PerAgent(Vec<f64>),
}

impl PhiSetting {
    pub fn for_agent(&self, agent: usize) -> f64 {
        match self {
            PhiSetting::Shared(p) => *p,
            PhiSetting::PerAgent(v) => v[agent.min(v.len() - 1)],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            PhiSetting::Shared(p) => vec![*p],
            PhiSetting::PerAgent(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvoConfig {
    /// SVO angle in radians, in [0, pi/2].
    pub phi: PhiSetting,
    pub w_speed: f64,
    pub w_distance: f64,
    pub w_lane_change_cost: f64,
    pub w_accel_cost: f64,
    pub crash_penalty: f64,
    /// Added to the merging vehicle's utility on the step it enters the highway.
    pub merge_bonus: f64,
    pub ally_weight: f64,
    pub human_weight: f64,
    pub aggregation: SocialAggregation,
}

impl Default for SvoConfig {
    fn default() -> Self {
        Self {
            phi: PhiSetting::Shared(0.0),
            w_speed: 0.4,
            w_distance: 0.4,
            w_lane_change_cost: 0.05,
            w_accel_cost: 0.02,
            crash_penalty: 5.0,
            merge_bonus: 1.0,
            ally_weight: 1.0,
            human_weight: 1.0,
            aggregation: SocialAggregation::Mean,
        }
    }
}

impl SvoConfig {
    pub fn validate(&self, n_av: usize) -> SimResult<()> {
        let phis = self.phi.values();
        if phis.is_empty() {
            return Err(SimError::config("reward.phi", "at least one angle is required"));
        }
        if let PhiSetting::PerAgent(v) = &self.phi {
            if v.len() != n_av {
                return Err(SimError::config("reward.phi", format!("expected {n_av} per-agent angles, got {}", v.len())));
            }
        }
        for p in phis {
            if !(0.0..=FRAC_PI_2).contains(&p) {
                return Err(SimError::config("reward.phi", format!("phi = {p} outside [0, pi/2]")));
            }
        }
        for (name, v) in [
            ("reward.w_speed", self.w_speed),
            ("reward.w_distance", self.w_distance),
            ("reward.w_lane_change_cost", self.w_lane_change_cost),
            ("reward.w_accel_cost", self.w_accel_cost),
            ("reward.crash_penalty", self.crash_penalty),
            ("reward.merge_bonus", self.merge_bonus),
            ("reward.ally_weight", self.ally_weight),
            ("reward.human_weight", self.human_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::config(name, "must be a finite value >= 0"));
            }
        }
        Ok(())
    }
}

/// What happened to one vehicle during a policy step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleStepInfo {
    pub speed: f64,
    pub distance_increment: f64,
    pub lane_change: bool,
    pub speed_change: bool,
    pub crashed_this_step: bool,
    /// Wrecked on an earlier step; such vehicles earn nothing.
    pub crashed_before: bool,
    pub merged_this_step: bool,
}

/// Scales of the normalised utility terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityScale {
    pub v_max: f64,
    /// Distance covered in one policy step at `v_max`.
    pub distance_max: f64,
}

/// Per-step performance of a single vehicle.
pub fn individual_utility(info: &VehicleStepInfo, cfg: &SvoConfig, scale: UtilityScale) -> f64 {
    if info.crashed_before {
        return 0.0;
    }
    let speed_term = (info.speed / scale.v_max).clamp(0.0, 1.0);
    let distance_term = (info.distance_increment / scale.distance_max).clamp(0.0, 1.0);
    let mut r = cfg.w_speed * speed_term + cfg.w_distance * distance_term;
    if info.lane_change {
        r -= cfg.w_lane_change_cost;
    }
    if info.speed_change {
        r -= cfg.w_accel_cost;
    }
    if info.crashed_this_step {
        r -= cfg.crash_penalty;
    }
    if info.merged_this_step {
        r += cfg.merge_bonus;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ego: f64,
    pub r_allies: f64,
    pub r_humans: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn social(&self) -> f64 {
        self.r_allies + self.r_humans
    }
}

fn aggregate(values: impl Iterator<Item = f64>, how: SocialAggregation) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    match how {
        SocialAggregation::Sum => sum,
        SocialAggregation::Mean if n == 0 => 0.0,
        SocialAggregation::Mean => sum / n as f64,
    }
}

/// Mixes already-computed group terms with the SVO angle.
pub fn combine(r_ego: f64, r_allies: f64, r_humans: f64, phi: f64) -> RewardBreakdown {
    let (s, c) = phi.sin_cos();
    RewardBreakdown {
        r_ego,
        r_allies,
        r_humans,
        total: c * r_ego + s * (r_allies + r_humans),
    }
}

/// SVO reward of `ego` given per-vehicle utilities.
///
/// `allies` are the other observed AVs, `humans` the observed human drivers;
/// `merger` is added to the human group exactly once.
pub fn svo_reward(
    ego: VehicleId,
    utilities: &BTreeMap<VehicleId, f64>,
    allies: &[VehicleId],
    humans: &[VehicleId],
    merger: Option<VehicleId>,
    phi: f64,
    cfg: &SvoConfig,
) -> SimResult<RewardBreakdown> {
    if allies.contains(&ego) {
        return Err(SimError::Domain(format!("ego {ego} listed among its own allies")));
    }
    let lookup = |id: &VehicleId| {
        utilities
            .get(id)
            .copied()
            .ok_or_else(|| SimError::Domain(format!("no utility recorded for vehicle {id}")))
    };
    let r_ego = lookup(&ego)?;
    let ally_set: BTreeSet<VehicleId> = allies.iter().copied().collect();
    let mut human_set: BTreeSet<VehicleId> = humans.iter().copied().collect();
    human_set.extend(merger);
    let ally_values = ally_set.iter().map(lookup).collect::<SimResult<Vec<_>>>()?;
    let human_values = human_set.iter().map(lookup).collect::<SimResult<Vec<_>>>()?;
    let r_allies = cfg.ally_weight * aggregate(ally_values.into_iter(), cfg.aggregation);
    let r_humans = cfg.human_weight * aggregate(human_values.into_iter(), cfg.aggregation);
    Ok(combine(r_ego, r_allies, r_humans, phi))
}
