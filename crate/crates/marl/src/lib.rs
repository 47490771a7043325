//! Decentralized advantage actor-critic training for the merge scenario.
//!
//! Every AV runs the same policy network on its own observation. Training is
//! semi-sequential: one learner updates while its peers act with a frozen
//! snapshot that is refreshed periodically.

pub mod a2c;
pub mod config;
pub mod env;
pub mod error;
pub mod evaluate;
pub mod policy;
pub mod pool;
pub mod train;

pub use a2c::{a2c_losses, advantage, LossCoefficients, LossOutput, Transition};
pub use config::{eval_episode_seed, train_episode_seed, EvalConfig, TrainConfig};
pub use env::EnvFactory;
pub use error::{MarlError, MarlResult};
pub use evaluate::{evaluate, evaluate_controller, run_episode, EpisodeSummary, Histogram, MetricsReport};
pub use policy::{ActionSelection, BuiltinPolicy, Controller};
pub use pool::AgentPool;
pub use train::{train, EpisodeRecord, TrainHooks, TransitionLog};
