//! Minimal dense-tensor network engine for the actor-critic agents: 3D
//! convolutions, dense layers, ReLU and softmax with analytic gradients,
//! first-order optimizers and a versioned checkpoint format.

pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use conv::{conv3d_backward, conv3d_forward, ConvGeometry};
pub use error::{NnError, NnResult};
pub use network::{softmax, ConvLayerSpec, ForwardCache, Network, NetworkParams, NetworkSpec};
pub use optim::{apply_update, OptimizerConfig, OptimizerKind, OptimizerState, UpdateStats};
pub use scalar::Scalar;
pub use tensor::Tensor;
