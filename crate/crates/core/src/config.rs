//! One configuration value gathering the defaults of every stage.

use serde::{Deserialize, Serialize};

use crate::circlemap::FitConfig;
use crate::families::TongueConfig;
use crate::probes::{ConvergenceConfig, KamConfig, ProbeConfig};
use crate::renorm::RenormConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Default continued-fraction depth for Brjuno sums.
    pub depth: Depth,
    pub fit: FitConfig,
    pub renorm: RenormConfig,
    pub kam: KamConfig,
    pub convergence: ConvergenceConfig,
    pub tongue: TongueConfig,
    pub probe: ProbeConfig,
    pub rotation: RotationConfig,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(transparent)]
pub struct Depth(pub usize);

impl Default for Depth {
    fn default() -> Self {
        Depth(40)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RotationConfig {
    pub iterations: u64,
}

impl Default for RotationConfig {
    fn default() -> Self {
        Self { iterations: 100_000 }
    }
}
