//! Receive FIFO with threshold-triggered PFC generation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FifoConfig {
    pub depth: usize,
    pub pfc_threshold: usize,
    pub hysteresis: usize,
    pub pfc_min_gap_ns: u64,
    pub pause_quanta: u16,
}

impl Default for FifoConfig {
    fn default() -> Self {
        Self {
            depth: 512,
            pfc_threshold: 105,
            hysteresis: 4,
            pfc_min_gap_ns: 5_000,
            pause_quanta: 1024,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("rx fifo overrun at depth {0}")]
pub struct FifoOverrun(pub usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FifoStats {
    pub enqueued: u64,
    pub overruns: u64,
    pub pfc_sent: u64,
    pub peak: usize,
}

#[derive(Clone, Debug)]
pub struct RxFifo<T> {
    cfg: FifoConfig,
    q: VecDeque<T>,
    above: bool,
    last_pfc: Option<SimTime>,
    stats: FifoStats,
}

impl<T> RxFifo<T> {
    pub fn new(cfg: FifoConfig) -> Self {
        Self {
            q: VecDeque::with_capacity(cfg.depth),
            cfg,
            above: false,
            last_pfc: None,
            stats: FifoStats::default(),
        }
    }

    pub fn config(&self) -> &FifoConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn stats(&self) -> FifoStats {
        self.stats
    }

    fn emit(&mut self, now: SimTime) -> bool {
        self.last_pfc = Some(now);
        self.stats.pfc_sent += 1;
        true
    }

    /// Appends a frame. Returns whether a PFC must be sent now.
    pub fn enqueue(&mut self, item: T, now: SimTime) -> Result<bool, FifoOverrun> {
        if self.q.len() >= self.cfg.depth {
            self.stats.overruns += 1;
            return Err(FifoOverrun(self.cfg.depth));
        }
        self.q.push_back(item);
        self.stats.enqueued += 1;
        self.stats.peak = self.stats.peak.max(self.q.len());
        if !self.above && self.q.len() >= self.cfg.pfc_threshold {
            self.above = true;
            return Ok(self.emit(now));
        }
        Ok(false)
    }

    pub fn front(&self) -> Option<&T> {
        self.q.front()
    }

    pub fn dequeue(&mut self) -> Option<T> {
        let item = self.q.pop_front()?;
        if self.above && self.q.len() + self.cfg.hysteresis <= self.cfg.pfc_threshold {
            self.above = false;
        }
        Some(item)
    }

    /// When the next repeat PFC may be due, if the FIFO is still above threshold.
    pub fn next_recheck(&self) -> Option<SimTime> {
        if self.above && self.q.len() >= self.cfg.pfc_threshold {
            self.last_pfc.map(|t| t + self.cfg.pfc_min_gap_ns)
        } else {
            None
        }
    }

    /// Repeat PFC while occupancy stays at or above threshold.
    pub fn recheck(&mut self, now: SimTime) -> bool {
        match self.next_recheck() {
            Some(due) if due <= now => self.emit(now),
            _ => false,
        }
    }
}
