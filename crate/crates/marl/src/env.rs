use crate::error::{MarlError, MarlResult};
use altruist_core::reward::PhiSetting;
use altruist_core::road::{RoadConfig, RoadNetwork};
use altruist_core::{EnvConfig, ObservationConfig, Observer, World};
use std::sync::Arc;

/// Everything needed to start fresh episodes.
#[derive(Debug, Clone)]
pub struct EnvFactory {
    env: Arc<EnvConfig>,
    road: Arc<RoadNetwork>,
    observation: ObservationConfig,
}

impl EnvFactory {
    pub fn new(road: RoadConfig, env: EnvConfig, observation: ObservationConfig) -> MarlResult<Self> {
        let road = RoadNetwork::new(road)?;
        env.validate(&road)?;
        observation.validate()?;
        Ok(Self {
            env: Arc::new(env),
            road: Arc::new(road),
            observation,
        })
    }

    pub fn env(&self) -> &EnvConfig {
        &self.env
    }

    pub fn road(&self) -> &Arc<RoadNetwork> {
        &self.road
    }

    pub fn observation(&self) -> &ObservationConfig {
        &self.observation
    }

    /// Same world with every AV using angle `phi`.
    pub fn with_phi(&self, phi: f64) -> MarlResult<Self> {
        let mut env = (*self.env).clone();
        env.reward.phi = PhiSetting::Shared(phi);
        env.validate(&self.road)?;
        Ok(Self {
            env: Arc::new(env),
            road: Arc::clone(&self.road),
            observation: self.observation.clone(),
        })
    }

    pub fn reset(&self, seed: u64) -> MarlResult<(World, Observer)> {
        let world = World::reset_seeded(Arc::clone(&self.env), Arc::clone(&self.road), seed)?;
        let observer = Observer::new(self.observation.clone())?;
        Ok((world, observer))
    }

    /// Network input shape `[C, D, H, W]`.
    pub fn input_shape(&self) -> [usize; 4] {
        self.observation.shape()
    }

    pub fn check_input(&self, input: [usize; 4]) -> MarlResult<()> {
        if input != self.input_shape() {
            return Err(MarlError::config(
                "network.input",
                format!("network expects {:?} but observations are {:?}", input, self.input_shape()),
            ));
        }
        Ok(())
    }
}
