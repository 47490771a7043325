use altruist_nn::NetworkParams;
use std::sync::Arc;

/// Live parameters of the learning agent and the frozen copy every peer acts with.
///
/// Peers hold an `Arc` to the snapshot, so a dissemination swaps the whole
/// parameter set at once and never mutates a snapshot someone is reading.
#[derive(Debug, Clone)]
pub struct AgentPool {
    live: NetworkParams<f32>,
    frozen: Arc<NetworkParams<f32>>,
    disseminations: u64,
}

impl AgentPool {
    pub fn new(params: NetworkParams<f32>) -> Self {
        Self {
            frozen: Arc::new(params.clone()),
            live: params,
            disseminations: 0,
        }
    }

    pub fn live(&self) -> &NetworkParams<f32> {
        &self.live
    }

    pub fn live_mut(&mut self) -> &mut NetworkParams<f32> {
        &mut self.live
    }

    /// The snapshot peers currently act with.
    pub fn frozen(&self) -> Arc<NetworkParams<f32>> {
        Arc::clone(&self.frozen)
    }

    /// Broadcasts the learner's weights to every peer.
    pub fn disseminate(&mut self) {
        self.frozen = Arc::new(self.live.clone());
        self.disseminations += 1;
    }

    pub fn disseminations(&self) -> u64 {
        self.disseminations
    }

    pub fn into_live(self) -> NetworkParams<f32> {
        self.live
    }
}
