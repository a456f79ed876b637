//! Scenario configuration: every tunable of a run, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cn::CnConfig;
use crate::congctl::CcParams;
use crate::endpoint::ArqMode;
use crate::fabric::{FaultConfig, LinkConfig};
use crate::mn::node::MnConfig;
use crate::wire::Command;
use crate::workload::WorkloadConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArqConfig {
    pub mode: ArqMode,
    pub rto_ns: u64,
}

impl Default for ArqConfig {
    fn default() -> Self {
        Self {
            mode: ArqMode::Selective,
            rto_ns: crate::arq::DEFAULT_RTO_NS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Simulated time limit; 0 runs until the workload drains.
    pub duration_ns: u64,
    /// Rate and FIFO sampling period; 0 disables sampling.
    pub sample_interval_ns: u64,
    pub loss_trace_file: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            duration_ns: 0,
            sample_interval_ns: 1_000,
            loss_trace_file: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub workload: WorkloadConfig,
    pub cn: CnConfig,
    pub mn: MnConfig,
    /// `cc.line_rate_kbps` is replaced by `link.rate_kbps` at build time.
    pub cc: CcParams,
    pub link: LinkConfig,
    pub faults: FaultConfig,
    pub arq: ArqConfig,
    pub run: RunConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
}

fn bad(key: &str, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        msg: msg.to_string(),
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sender parameters with the line rate taken from the link.
    pub fn effective_cc(&self) -> CcParams {
        CcParams {
            line_rate_kbps: self.link.rate_kbps,
            ..self.cc.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.workload.validate().map_err(|e| bad("workload", e))?;
        self.link.validate().map_err(|e| bad("link.rate_kbps", e))?;
        self.faults.validate().map_err(|e| bad("faults", e))?;
        self.effective_cc().validate().map_err(|e| bad("cc", e))?;
        if self.cn.cache_enabled {
            self.cn.cache.validate().map_err(|e| bad("cn.cache", e))?;
        }
        let wr = Command::WriteReq.wire_len();
        if self.cn.bucket_bytes < wr {
            return Err(bad(
                "cn.bucket_bytes",
                format!("{} is below one WriteReq frame ({wr} bytes)", self.cn.bucket_bytes),
            ));
        }
        if self.cn.max_reads == 0 || self.cn.max_writes == 0 {
            return Err(bad("cn.max_reads", "inflight caps must be positive"));
        }
        if let Some(g) = self.cn.initial_rate_gbps {
            if !(g > 0.0) {
                return Err(bad("cn.initial_rate_gbps", "must be positive"));
            }
        }
        let mn = &self.mn;
        if mn.page_bytes == 0 || !mn.page_bytes.is_power_of_two() {
            return Err(bad("mn.page_bytes", "must be a power of two"));
        }
        if mn.pool_bytes < mn.page_bytes || !mn.pool_bytes.is_multiple_of(mn.page_bytes) {
            return Err(bad("mn.pool_bytes", "must be a whole number of pages"));
        }
        let fp_pages = self.workload.footprint_bytes.div_ceil(mn.page_bytes);
        if fp_pages * mn.page_bytes > mn.pool_bytes {
            return Err(bad(
                "workload.footprint_bytes",
                "does not fit in the memory pool",
            ));
        }
        if mn.tlb_entries == 0 {
            return Err(bad("mn.tlb_entries", "must be positive"));
        }
        let f = &mn.fifo;
        if f.depth == 0 {
            return Err(bad("mn.fifo.depth", "must be positive"));
        }
        if f.pfc_threshold == 0 || f.pfc_threshold > f.depth {
            return Err(bad("mn.fifo.pfc_threshold", "must be in 1..=depth"));
        }
        if f.hysteresis >= f.pfc_threshold {
            return Err(bad("mn.fifo.hysteresis", "must be below the threshold"));
        }
        if mn.dram.banks == 0 || !mn.dram.banks.is_power_of_two() {
            return Err(bad("mn.dram.banks", "must be a power of two"));
        }
        if mn.dram.columns == 0 {
            return Err(bad("mn.dram.columns", "must be positive"));
        }
        if let Some(s) = mn.dram.stall {
            if s.period_ns == 0 || s.duration_ns >= s.period_ns {
                return Err(bad("mn.dram.stall", "duration must be below a nonzero period"));
            }
        }
        if self.arq.rto_ns == 0 {
            return Err(bad("arq.rto_ns", "must be positive"));
        }
        if self.run.duration_ns == 0 && self.workload.total().is_none() {
            return Err(bad(
                "run.duration_ns",
                "an unbounded workload needs a duration",
            ));
        }
        Ok(())
    }
}
