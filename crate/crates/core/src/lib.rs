//! Behavior-performance maps at desk scale: many diverse control policies are
//! trained by off-policy actor-critic learners and stored in a discrete
//! multi-dimensional archive; after a body or environment change, a working
//! policy is recovered in few trials by Gaussian-process search over the map.

pub mod archive;
pub mod config;
pub mod ddpg;
pub mod env;
pub mod error;
pub mod mapgen;
pub mod mboa;
pub mod nnet;
pub(crate) mod wire;

pub use archive::{Archive, ArchiveCell, ArchiveStats, BehaviorDescriptor, InsertOutcome};
pub use ddpg::{DdpgAgent, DdpgConfig, ReplayBuffer, Transition};
pub use env::{CrawlerEnv, DamageConfig, EnvSpec};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use mapgen::{MapCreationContext, MapElitesConfig, MapRunResult, MmprlConfig};
pub use mboa::{AdaptOutcome, GpConfig, GpPosterior};
pub use nnet::{AdamState, NetSpec, OutputActivation, ParamNet, Topology};
