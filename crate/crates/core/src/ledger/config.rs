use serde::{Deserialize, Serialize};

use super::GasSchedule;
use crate::domain::LogicalTime;

/// Wall-clock block intervals are divided by this for desk-scale runs:
/// 12 s becomes 100 ms.
pub const DEFAULT_TIME_SCALE: u64 = 120;

/// A named network profile. Profiles differ only in block interval and the
/// multiplier applied to gas when fees are reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainProfile {
    pub name: &'static str,
    pub block_interval_ms: u64,
    pub gas_price_multiplier: f64,
}

pub const PROFILES: [ChainProfile; 4] = [
    ChainProfile {
        name: "ethereum-like",
        block_interval_ms: 12_000,
        gas_price_multiplier: 1.0,
    },
    ChainProfile {
        name: "polygon-like",
        block_interval_ms: 6_000,
        gas_price_multiplier: 0.5,
    },
    ChainProfile {
        name: "optimism-like",
        block_interval_ms: 7_200,
        gas_price_multiplier: 1.0,
    },
    ChainProfile {
        name: "arbitrum-like",
        block_interval_ms: 2_400,
        gas_price_multiplier: 1.5,
    },
];

pub fn profile(name: &str) -> Option<ChainProfile> {
    PROFILES.iter().copied().find(|p| p.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub chain_name: String,
    pub block_interval_ms: u64,
    pub gas_schedule: GasSchedule,
    pub gas_price_multiplier: f64,
    /// Allows `force_seal` before the interval has elapsed.
    pub test_mode: bool,
    pub genesis_time: LogicalTime,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self::for_profile(PROFILES[0], DEFAULT_TIME_SCALE)
    }
}

impl ChainConfig {
    pub fn for_profile(p: ChainProfile, time_scale: u64) -> Self {
        Self {
            chain_name: p.name.to_owned(),
            block_interval_ms: (p.block_interval_ms / time_scale.max(1)).max(1),
            gas_schedule: GasSchedule::default(),
            gas_price_multiplier: p.gas_price_multiplier,
            test_mode: true,
            genesis_time: LogicalTime::default(),
        }
    }

    pub fn from_profile_name(name: &str, time_scale: u64) -> Option<Self> {
        profile(name).map(|p| Self::for_profile(p, time_scale))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.block_interval_ms == 0 {
            return Err("block_interval_ms must be positive".into());
        }
        if !(self.gas_price_multiplier.is_finite() && self.gas_price_multiplier > 0.0) {
            return Err("gas_price_multiplier must be positive".into());
        }
        self.gas_schedule.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ChainConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_interval_is_scaled_twelve_seconds() {
        let c = ChainConfig::default();
        assert_eq!(c.block_interval_ms, 100);
        assert_eq!(c.chain_name, "ethereum-like");
        assert!(c.validate().is_ok());
    }

    #[test]
    fn profiles_scale() {
        let c = ChainConfig::from_profile_name("arbitrum-like", DEFAULT_TIME_SCALE).unwrap();
        assert_eq!(c.block_interval_ms, 20);
        assert!(ChainConfig::from_profile_name("nope", 1).is_none());
    }

    #[test]
    fn toml_overrides() {
        let c = ChainConfig::from_toml("block_interval_ms = 250\n[gas_schedule]\ntx_base = 1\n").unwrap();
        assert_eq!(c.block_interval_ms, 250);
        assert_eq!(c.gas_schedule.tx_base, 1);
        assert_eq!(c.gas_schedule.storage_slot_new, 20_000);
        assert!(ChainConfig::from_toml("block_interval_ms = 0\n").is_err());
    }
}
