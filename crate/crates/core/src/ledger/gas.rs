use serde::{Deserialize, Serialize};

/// Storage slots touched by one call, in 32-byte units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotWrites {
    pub new: u64,
    pub updated: u64,
}

impl SlotWrites {
    pub fn new_slots(n: u64) -> Self {
        Self { new: n, updated: 0 }
    }

    pub fn add(self, other: SlotWrites) -> Self {
        Self {
            new: self.new + other.new,
            updated: self.updated + other.updated,
        }
    }
}

/// Number of 32-byte slots needed to hold `len` bytes.
pub fn slots_for(len: usize) -> u64 {
    len.div_ceil(32) as u64
}

/// Per-item gas prices. Magnitudes follow the familiar EVM schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasSchedule {
    pub tx_base: u64,
    pub calldata_nonzero_byte: u64,
    pub calldata_zero_byte: u64,
    pub storage_slot_new: u64,
    pub storage_slot_update: u64,
    pub contract_deploy_base: u64,
    pub contract_code_byte: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        Self {
            tx_base: 21_000,
            calldata_nonzero_byte: 16,
            calldata_zero_byte: 4,
            storage_slot_new: 20_000,
            storage_slot_update: 5_000,
            contract_deploy_base: 32_000,
            contract_code_byte: 200,
        }
    }
}

impl GasSchedule {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("tx_base", self.tx_base),
            ("calldata_nonzero_byte", self.calldata_nonzero_byte),
            ("calldata_zero_byte", self.calldata_zero_byte),
            ("storage_slot_new", self.storage_slot_new),
            ("storage_slot_update", self.storage_slot_update),
            ("contract_deploy_base", self.contract_deploy_base),
            ("contract_code_byte", self.contract_code_byte),
        ];
        match all.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(format!("gas schedule entry `{name}` must be positive")),
            None => Ok(()),
        }
    }

    /// Gas for one transaction: base + calldata + storage (+ deployment).
    pub fn estimate(&self, payload: &[u8], writes: SlotWrites, deploy_code_size: Option<u64>) -> u64 {
        let zeros = payload.iter().filter(|b| **b == 0).count() as u64;
        let nonzeros = payload.len() as u64 - zeros;
        let mut gas = self.tx_base
            + nonzeros * self.calldata_nonzero_byte
            + zeros * self.calldata_zero_byte
            + writes.new * self.storage_slot_new
            + writes.updated * self.storage_slot_update;
        if let Some(code) = deploy_code_size {
            gas += self.contract_deploy_base + code * self.contract_code_byte;
        }
        gas
    }
}
