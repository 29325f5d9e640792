//! Analytical hardware descriptor.
//!
//! A descriptor is a flat JSON object. All rates are integers in base units
//! (bytes/s, FLOP/s) so every derived time is an exact ratio.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareDescriptor {
    pub name: String,
    /// Parallel compute units (SMs).
    pub num_cores: u64,
    pub regs_per_core: u64,
    pub smem_per_core_bytes: u64,
    pub global_bw_bytes_per_s: u64,
    pub shared_bw_bytes_per_s: u64,
    pub peak_flops: u64,
    /// Default active thread blocks per core used as the register bound (ζ).
    pub default_active_blocks: u64,
    /// Blocks per core considered simultaneously resident for saturation.
    pub active_blocks_per_core: u64,
    /// Alignment of the major-axis and reduce-axis tiles, in elements.
    pub align_elems: u64,
}

impl HardwareDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::validation("name", "must be a non-empty identifier"));
        }
        let positive = [
            ("num_cores", self.num_cores),
            ("regs_per_core", self.regs_per_core),
            ("smem_per_core_bytes", self.smem_per_core_bytes),
            ("global_bw_bytes_per_s", self.global_bw_bytes_per_s),
            ("shared_bw_bytes_per_s", self.shared_bw_bytes_per_s),
            ("peak_flops", self.peak_flops),
            ("default_active_blocks", self.default_active_blocks),
            ("active_blocks_per_core", self.active_blocks_per_core),
            ("align_elems", self.align_elems),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::validation(field, "must be strictly positive"));
            }
        }
        if !self.align_elems.is_power_of_two() {
            return Err(Error::validation(
                "align_elems",
                format!("{} is not a power of two", self.align_elems),
            ));
        }
        Ok(())
    }

    /// Blocks resident across the whole device in one wave.
    pub fn active_blocks(&self) -> u64 {
        self.num_cores * self.active_blocks_per_core
    }

    /// Parses and validates a descriptor document.
    pub fn from_json(document: &str) -> Result<Self> {
        let hw: HardwareDescriptor = serde_json::from_str(document)?;
        hw.validate()?;
        Ok(hw)
    }

    /// Canonical serialization: pretty JSON, fields in declaration order,
    /// trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("descriptor serializes");
        s.push('\n');
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical document.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// A V100-like configuration. The core count and ζ follow the published
    /// device; the remaining numbers are ordinary datasheet values and should
    /// be treated as user configuration.
    pub fn v100_like() -> Self {
        HardwareDescriptor {
            name: "v100-like".into(),
            num_cores: 80,
            regs_per_core: 65536,
            smem_per_core_bytes: 98304,
            global_bw_bytes_per_s: 900_000_000_000,
            shared_bw_bytes_per_s: 13_800_000_000_000,
            peak_flops: 15_700_000_000_000,
            default_active_blocks: 2,
            active_blocks_per_core: 2,
            align_elems: 8,
        }
    }
}
