//! Mixed-autonomy highway merge simulator.
//!
//! The crate covers everything that happens inside one episode: the road
//! layout, kinematic vehicles tracked by PID controllers, IDM/MOBIL human
//! drivers, the multi-agent environment, VelocityMap observations and the
//! social-value-orientation reward.

pub mod drivers;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod geometry;
pub mod observation;
pub mod reward;
pub mod road;

pub use drivers::{IdmParams, LaneDecision, MobilParams};
pub use dynamics::{BicycleParams, ControlInput, MetaAction, PidGains, TrackingGains, VehicleKind, VehicleState};
pub use env::{EnvConfig, Outcome, ScenarioConfig, StepResult, World};
pub use error::{SimError, SimResult};
pub use geometry::Vec2;
pub use observation::{Observation, ObservationConfig, Observer, VelocityMapFrame};
pub use reward::{RewardBreakdown, SvoConfig};
pub use road::{LaneRef, RoadConfig, RoadNetwork};

/// Stable identifier of a vehicle within one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}
