//! Experiment configuration: one static file with a section per subsystem.
//! Every load-bearing key is required so a run is fully described by its
//! config file plus the command-line seed.

use crate::ddpg::DdpgConfig;
use crate::env::{DamageConfig, EnvSpec};
use crate::error::Result;
use crate::mapgen::{MapElitesConfig, MmprlConfig};
use crate::mboa::GpConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub ddpg: DdpgConfig,
    pub mapgen: MmprlConfig,
    pub mapelites: MapElitesConfig,
    pub mboa: GpConfig,
    #[serde(default)]
    pub damage: DamageConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults: paper-style learner settings on the toy crawler
    /// with a small map budget.
    pub fn desk() -> Self {
        Self {
            env: EnvSpec::default(),
            ddpg: DdpgConfig {
                buffer_capacity: 200_000,
                ..Default::default()
            },
            mapgen: MmprlConfig {
                n_agents: 2,
                i_init: vec![500, 500],
                freq: 10,
                budget: 5_000,
                snapshot_every: 250,
                descriptor_bins: 5,
                agent_seeds: None,
            },
            mapelites: MapElitesConfig::default(),
            mboa: GpConfig::default(),
            damage: DamageConfig::default(),
        }
    }

    /// Full-scale defaults mirroring the published training setup: eight
    /// agents with split warm-ups, a two-million-transition buffer.
    pub fn full_scale() -> Self {
        Self {
            env: EnvSpec::default(),
            ddpg: DdpgConfig::default(),
            mapgen: MmprlConfig {
                budget: 61_000,
                ..Default::default()
            },
            mapelites: MapElitesConfig::default(),
            mboa: GpConfig::default(),
            damage: DamageConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ddpg.validate()?;
        self.mapgen.validate()?;
        self.mapelites.validate()?;
        self.mboa.validate()?;
        self.damage.validate(&self.env)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_full_scale_configs_validate() {
        ExperimentConfig::desk().validate().unwrap();
        ExperimentConfig::full_scale().validate().unwrap();
    }
}
