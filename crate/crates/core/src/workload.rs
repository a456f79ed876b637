//! Host request generator standing in for the CXL agent.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{Op, TraceOp};
use crate::sim::RngStream;
use crate::wire::{LineData, LINE_BYTES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    #[default]
    Uniform,
    Sequential,
    /// `hotspot_fraction` of accesses fall in the first `hotspot_bytes`.
    Hotspot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub pattern: Pattern,
    pub read_ratio: f64,
    pub footprint_bytes: u64,
    /// Total host requests; 0 means unbounded (duration-limited runs).
    pub request_count: u64,
    /// Closed loop: keep this many requests outstanding. 0 selects open loop.
    pub outstanding: usize,
    /// Open loop issue spacing.
    pub issue_interval_ns: u64,
    pub hotspot_fraction: f64,
    pub hotspot_bytes: u64,
    /// Explicit op list replacing the generator. Not read from config files.
    #[serde(skip)]
    pub script: Option<Vec<TraceOp>>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            pattern: Pattern::Uniform,
            read_ratio: 0.5,
            footprint_bytes: 4 << 20,
            request_count: 10_000,
            outstanding: 1,
            issue_interval_ns: 100,
            hotspot_fraction: 0.9,
            hotspot_bytes: 16 << 10,
            script: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("read_ratio {0} outside [0, 1]")]
    ReadRatio(f64),
    #[error("footprint {0} must be a nonzero multiple of 64")]
    Footprint(u64),
    #[error("hotspot must fit in the footprint")]
    Hotspot,
    #[error("open loop needs a nonzero issue interval")]
    Interval,
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(0.0..=1.0).contains(&self.read_ratio) {
            return Err(WorkloadError::ReadRatio(self.read_ratio));
        }
        if self.footprint_bytes == 0 || !self.footprint_bytes.is_multiple_of(LINE_BYTES as u64) {
            return Err(WorkloadError::Footprint(self.footprint_bytes));
        }
        if self.pattern == Pattern::Hotspot
            && (self.hotspot_bytes < LINE_BYTES as u64
                || self.hotspot_bytes > self.footprint_bytes
                || !(0.0..=1.0).contains(&self.hotspot_fraction))
        {
            return Err(WorkloadError::Hotspot);
        }
        if self.outstanding == 0 && self.issue_interval_ns == 0 {
            return Err(WorkloadError::Interval);
        }
        Ok(())
    }

    /// Number of requests the run must complete, if bounded.
    pub fn total(&self) -> Option<u64> {
        match &self.script {
            Some(s) => Some(s.len() as u64),
            None => (self.request_count > 0).then_some(self.request_count),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HostOp {
    pub op: Op,
    pub addr: u64,
    pub data: Option<LineData>,
}

pub struct Workload {
    cfg: WorkloadConfig,
    rng: RngStream,
    issued: u64,
}

impl Workload {
    pub fn new(cfg: WorkloadConfig, seed: u64) -> Self {
        Self {
            cfg,
            rng: RngStream::new(seed, "workload"),
            issued: 0,
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    fn line(&mut self, span: u64) -> u64 {
        self.rng.below(span / LINE_BYTES as u64) * LINE_BYTES as u64
    }

    pub fn next_op(&mut self) -> Option<HostOp> {
        if let Some(script) = &self.cfg.script {
            let op = script.get(self.issued as usize)?.clone();
            self.issued += 1;
            return Some(match op {
                TraceOp::Read(addr) => HostOp {
                    op: Op::Read,
                    addr,
                    data: None,
                },
                TraceOp::Write(addr, d) => HostOp {
                    op: Op::Write,
                    addr,
                    data: Some(d),
                },
            });
        }
        if self.cfg.request_count > 0 && self.issued >= self.cfg.request_count {
            return None;
        }
        let fp = self.cfg.footprint_bytes;
        let addr = match self.cfg.pattern {
            Pattern::Uniform => self.line(fp),
            Pattern::Sequential => (self.issued * LINE_BYTES as u64) % fp,
            Pattern::Hotspot => {
                if self.rng.unit() < self.cfg.hotspot_fraction {
                    self.line(self.cfg.hotspot_bytes)
                } else {
                    self.line(fp)
                }
            }
        };
        let read = self.rng.unit() < self.cfg.read_ratio;
        self.issued += 1;
        Some(if read {
            HostOp {
                op: Op::Read,
                addr,
                data: None,
            }
        } else {
            let mut d = [0u8; LINE_BYTES];
            self.rng.fill_bytes(&mut d);
            HostOp {
                op: Op::Write,
                addr,
                data: Some(d),
            }
        })
    }
}
