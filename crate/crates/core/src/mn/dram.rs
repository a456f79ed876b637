//! Banked DRAM timing with row-column-bank address mapping and an optional
//! periodic stall model.

use serde::{Deserialize, Serialize};

use crate::sim::SimTime;
use crate::wire::LINE_BYTES;

/// Periodic service outage: the last `duration_ns` of every `period_ns`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StallModel {
    pub period_ns: u64,
    pub duration_ns: u64,
}

impl StallModel {
    pub fn in_stall(&self, t: SimTime) -> bool {
        self.duration_ns > 0 && t.ns() % self.period_ns >= self.period_ns - self.duration_ns
    }

    /// `t` itself, or the end of the stall window containing it.
    pub fn defer(&self, t: SimTime) -> SimTime {
        if self.in_stall(t) {
            t + (self.period_ns - t.ns() % self.period_ns)
        } else {
            t
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DramConfig {
    pub banks: usize,
    pub t_access_ns: u64,
    /// Lines per row; sets the width of the column field.
    pub columns: u64,
    pub stall: Option<StallModel>,
}

impl Default for DramConfig {
    fn default() -> Self {
        Self {
            banks: 16,
            t_access_ns: 48,
            columns: 128,
            stall: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RcbAddr {
    pub row: u64,
    pub column: u64,
    pub bank: usize,
}

#[derive(Clone, Debug)]
pub struct Dram {
    cfg: DramConfig,
    bank_free: Vec<SimTime>,
    accesses: u64,
}

impl Dram {
    pub fn new(cfg: DramConfig) -> Self {
        assert!(cfg.banks.is_power_of_two(), "bank count must be a power of two");
        Self {
            bank_free: vec![SimTime::ZERO; cfg.banks],
            cfg,
            accesses: 0,
        }
    }

    pub fn config(&self) -> &DramConfig {
        &self.cfg
    }

    pub fn accesses(&self) -> u64 {
        self.accesses
    }

    /// Splits a pool address into row | column | bank, most significant first.
    pub fn map(&self, addr: u64) -> RcbAddr {
        let line = addr / LINE_BYTES as u64;
        let bank = (line as usize) & (self.cfg.banks - 1);
        let rest = line / self.cfg.banks as u64;
        RcbAddr {
            row: rest / self.cfg.columns,
            column: rest % self.cfg.columns,
            bank,
        }
    }

    pub fn stalled(&self, t: SimTime) -> bool {
        self.cfg.stall.is_some_and(|s| s.in_stall(t))
    }

    pub fn defer(&self, t: SimTime) -> SimTime {
        self.cfg.stall.map_or(t, |s| s.defer(t))
    }

    /// Queues one access and returns its completion time.
    pub fn schedule(&mut self, now: SimTime, addr: u64) -> SimTime {
        let bank = self.map(addr).bank;
        let start = self.defer(now.max(self.bank_free[bank]));
        let done = start + self.cfg.t_access_ns;
        self.bank_free[bank] = done;
        self.accesses += 1;
        done
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(ns: u64) -> SimTime {
        SimTime::from_ns(ns)
    }

    #[test]
    fn idle_bank_takes_one_access() {
        let mut d = Dram::new(DramConfig::default());
        assert_eq!(d.schedule(t(100), 0), t(148));
    }

    #[test]
    fn consecutive_lines_interleave() {
        let mut d = Dram::new(DramConfig::default());
        assert_ne!(d.map(0).bank, d.map(64).bank);
        assert_eq!(d.schedule(t(0), 0), t(48));
        assert_eq!(d.schedule(t(0), 64), t(48));
    }

    #[test]
    fn same_bank_queues() {
        let mut d = Dram::new(DramConfig::default());
        let stride = 16 * 64;
        assert_eq!(d.map(0).bank, d.map(stride).bank);
        assert_eq!(d.schedule(t(0), 0), t(48));
        assert_eq!(d.schedule(t(0), stride), t(96));
    }

    #[test]
    fn rcb_fields() {
        let d = Dram::new(DramConfig::default());
        let a = d.map((16 * 128 + 16 * 3 + 5) * 64);
        assert_eq!(a, RcbAddr { row: 1, column: 3, bank: 5 });
    }

    #[test]
    fn stall_defers_service() {
        let cfg = DramConfig {
            stall: Some(StallModel {
                period_ns: 1000,
                duration_ns: 200,
            }),
            ..Default::default()
        };
        let mut d = Dram::new(cfg);
        assert!(!d.stalled(t(799)));
        assert!(d.stalled(t(800)));
        assert_eq!(d.schedule(t(850), 0), t(1048));
        assert_eq!(d.schedule(t(100), 64), t(148));
    }
}
