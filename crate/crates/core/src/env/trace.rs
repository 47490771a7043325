use super::{Outcome, StepResult, World};
use crate::dynamics::{MetaAction, VehicleKind};
use crate::reward::RewardBreakdown;
use crate::road::LaneRef;
use crate::VehicleId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceVehicle {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub lane: LaneRef,
    pub target_lane: LaneRef,
    pub crashed: bool,
    pub exited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAction {
    pub id: VehicleId,
    pub action: MetaAction,
    pub reward: RewardBreakdown,
}

/// One line of a JSONL episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub outcome: Outcome,
    pub merged: bool,
    pub vehicles: Vec<TraceVehicle>,
    pub actions: Vec<TraceAction>,
    pub new_crashes: Vec<VehicleId>,
}

impl TraceRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialise")
    }
}

impl World {
    /// Snapshot of the current state, annotated with the step that produced it (if any).
    pub fn trace_record(&self, result: Option<&StepResult>) -> TraceRecord {
        let vehicles = self
            .vehicles
            .iter()
            .map(|v| TraceVehicle {
                id: v.state.id,
                kind: v.state.kind,
                x: v.state.position.x,
                y: v.state.position.y,
                heading: v.state.heading,
                speed: v.state.speed,
                lane: v.state.current_lane,
                target_lane: v.state.target_lane,
                crashed: v.crashed,
                exited: v.exited,
            })
            .collect();
        let (actions, new_crashes) = match result {
            Some(r) => (
                r.actions
                    .iter()
                    .map(|&(id, action)| TraceAction {
                        id,
                        action,
                        reward: r.reward_of(id).unwrap_or_default(),
                    })
                    .collect(),
                r.new_crashes.clone(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        TraceRecord {
            step: self.step_index,
            outcome: self.outcome,
            merged: self.merged,
            vehicles,
            actions,
            new_crashes,
        }
    }
}
