//! Compute-node line cache: 4-way set associative, M/E/I states, LRU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{LineData, LINE_BYTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    pub capacity_bytes: usize,
    pub ways: usize,
    pub line_bytes: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            capacity_bytes: 32 * 1024,
            ways: 4,
            line_bytes: LINE_BYTES,
        }
    }
}

impl CacheConfig {
    pub fn sets(&self) -> usize {
        self.capacity_bytes / (self.ways * self.line_bytes)
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        let ok = self.ways > 0
            && self.line_bytes == LINE_BYTES
            && self.capacity_bytes.is_multiple_of(self.ways * self.line_bytes)
            && self.sets().is_power_of_two()
            && self.ways.is_power_of_two();
        if ok {
            Ok(())
        } else {
            Err(CacheError::BadGeometry(*self))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineState {
    M,
    E,
    I,
}

#[derive(Clone, Debug)]
pub struct CacheLine {
    pub tag: u64,
    pub state: LineState,
    pub data: LineData,
    /// 0 is most recently used.
    pub lru_rank: u8,
}

impl CacheLine {
    fn invalid(rank: u8) -> Self {
        Self {
            tag: 0,
            state: LineState::I,
            data: [0; LINE_BYTES],
            lru_rank: rank,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CacheOutcome {
    ReadHit(LineData),
    WriteHit,
    WriteAllocNoRemote,
    NeedFetch,
    NeedWritebackThenFetch {
        evicted_addr: u64,
        evicted_data: LineData,
    },
    /// Write miss into a full set. `evicted_data` is present only for an M victim.
    WriteReplace {
        evicted_addr: u64,
        evicted_data: Option<LineData>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub writebacks: u64,
    pub alloc_no_remote: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("address {0:#x} is not line aligned")]
    MisalignedAddress(u64),
    #[error("line {0:#x} is already present")]
    AlreadyPresent(u64),
    #[error("write access without data")]
    MissingData,
    #[error("invalid cache geometry {0:?}")]
    BadGeometry(CacheConfig),
}

/// Eviction produced by a fill: the victim address and its data if it was dirty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Eviction {
    pub addr: u64,
    pub data: Option<LineData>,
}

#[derive(Clone, Debug)]
pub struct Cache {
    cfg: CacheConfig,
    sets: Vec<Vec<CacheLine>>,
    stats: CacheStats,
}

impl Cache {
    pub fn new(cfg: CacheConfig) -> Result<Self, CacheError> {
        cfg.validate()?;
        let sets = (0..cfg.sets())
            .map(|_| (0..cfg.ways).map(|w| CacheLine::invalid(w as u8)).collect())
            .collect();
        Ok(Self {
            cfg,
            sets,
            stats: CacheStats::default(),
        })
    }

    pub fn config(&self) -> CacheConfig {
        self.cfg
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn set_index(&self, addr: u64) -> usize {
        ((addr / LINE_BYTES as u64) as usize) & (self.cfg.sets() - 1)
    }

    fn tag(&self, addr: u64) -> u64 {
        addr / LINE_BYTES as u64 / self.cfg.sets() as u64
    }

    fn addr_of(&self, set: usize, tag: u64) -> u64 {
        (tag * self.cfg.sets() as u64 + set as u64) * LINE_BYTES as u64
    }

    fn check_aligned(addr: u64) -> Result<(), CacheError> {
        if !addr.is_multiple_of(LINE_BYTES as u64) {
            Err(CacheError::MisalignedAddress(addr))
        } else {
            Ok(())
        }
    }

    fn find(&self, set: usize, tag: u64) -> Option<usize> {
        self.sets[set]
            .iter()
            .position(|l| l.state != LineState::I && l.tag == tag)
    }

    fn touch(&mut self, set: usize, way: usize) {
        let old = self.sets[set][way].lru_rank;
        for l in self.sets[set].iter_mut() {
            if l.lru_rank < old {
                l.lru_rank += 1;
            }
        }
        self.sets[set][way].lru_rank = 0;
    }

    /// Free way if any, else the least recently used one.
    fn victim_way(&self, set: usize) -> usize {
        let lines = &self.sets[set];
        if let Some(w) = lines.iter().position(|l| l.state == LineState::I) {
            return w;
        }
        lines
            .iter()
            .enumerate()
            .max_by_key(|(_, l)| l.lru_rank)
            .map(|(w, _)| w)
            .unwrap_or(0)
    }

    pub fn state_of(&self, addr: u64) -> LineState {
        let set = self.set_index(addr);
        match self.find(set, self.tag(addr)) {
            Some(w) => self.sets[set][w].state,
            None => LineState::I,
        }
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.state_of(addr) != LineState::I
    }

    /// The line that an install at `addr` would displace, if the set is full.
    pub fn peek_victim(&self, addr: u64) -> Option<(u64, LineState)> {
        let set = self.set_index(addr);
        let w = self.victim_way(set);
        let l = &self.sets[set][w];
        (l.state != LineState::I).then(|| (self.addr_of(set, l.tag), l.state))
    }

    pub fn access(
        &mut self,
        op: Op,
        addr: u64,
        data: Option<&LineData>,
    ) -> Result<CacheOutcome, CacheError> {
        Self::check_aligned(addr)?;
        if op == Op::Write && data.is_none() {
            return Err(CacheError::MissingData);
        }
        let set = self.set_index(addr);
        let tag = self.tag(addr);
        if let Some(w) = self.find(set, tag) {
            self.stats.hits += 1;
            self.touch(set, w);
            let line = &mut self.sets[set][w];
            return Ok(match op {
                Op::Read => CacheOutcome::ReadHit(line.data),
                Op::Write => {
                    line.data = *data.unwrap();
                    line.state = LineState::M;
                    CacheOutcome::WriteHit
                }
            });
        }
        self.stats.misses += 1;
        let w = self.victim_way(set);
        let victim = self.sets[set][w].clone();
        let victim_addr = self.addr_of(set, victim.tag);
        match op {
            Op::Read => Ok(if victim.state == LineState::M {
                CacheOutcome::NeedWritebackThenFetch {
                    evicted_addr: victim_addr,
                    evicted_data: victim.data,
                }
            } else {
                CacheOutcome::NeedFetch
            }),
            Op::Write => {
                let line = &mut self.sets[set][w];
                line.tag = tag;
                line.state = LineState::M;
                line.data = *data.unwrap();
                self.touch(set, w);
                Ok(match victim.state {
                    LineState::I => {
                        self.stats.alloc_no_remote += 1;
                        CacheOutcome::WriteAllocNoRemote
                    }
                    LineState::E => CacheOutcome::WriteReplace {
                        evicted_addr: victim_addr,
                        evicted_data: None,
                    },
                    LineState::M => {
                        self.stats.writebacks += 1;
                        CacheOutcome::WriteReplace {
                            evicted_addr: victim_addr,
                            evicted_data: Some(victim.data),
                        }
                    }
                })
            }
        }
    }

    /// Installs a fetched line in E. A dirty victim is returned for writeback.
    pub fn fill(&mut self, addr: u64, data: &LineData) -> Result<Option<Eviction>, CacheError> {
        Self::check_aligned(addr)?;
        let set = self.set_index(addr);
        let tag = self.tag(addr);
        if self.find(set, tag).is_some() {
            return Err(CacheError::AlreadyPresent(addr));
        }
        let w = self.victim_way(set);
        let victim = self.sets[set][w].clone();
        let ev = match victim.state {
            LineState::I => None,
            LineState::E => Some(Eviction {
                addr: self.addr_of(set, victim.tag),
                data: None,
            }),
            LineState::M => {
                self.stats.writebacks += 1;
                Some(Eviction {
                    addr: self.addr_of(set, victim.tag),
                    data: Some(victim.data),
                })
            }
        };
        let line = &mut self.sets[set][w];
        line.tag = tag;
        line.state = LineState::E;
        line.data = *data;
        self.touch(set, w);
        Ok(ev)
    }

    /// Drops a line without writeback. Used when a read-miss writeback has
    /// already been issued for the victim before the fill arrives.
    pub fn invalidate(&mut self, addr: u64) -> Option<CacheLine> {
        let set = self.set_index(addr);
        let w = self.find(set, self.tag(addr))?;
        let old = self.sets[set][w].clone();
        self.sets[set][w].state = LineState::I;
        Some(old)
    }

    /// Cleans every M line and returns (addr, data) pairs in address order.
    pub fn flush(&mut self) -> Vec<(u64, LineData)> {
        let mut out = Vec::new();
        for s in 0..self.sets.len() {
            for w in 0..self.cfg.ways {
                let l = &self.sets[s][w];
                if l.state == LineState::M {
                    out.push((self.addr_of(s, l.tag), l.data));
                    self.sets[s][w].state = LineState::E;
                }
            }
        }
        out.sort_by_key(|(a, _)| *a);
        out
    }

    pub fn lines_in_set(&self, set: usize) -> &[CacheLine] {
        &self.sets[set]
    }
}

/// One step of a replay trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceOp {
    Read(u64),
    Write(u64, LineData),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trace line {line}: {msg}")]
pub struct TraceError {
    pub line: usize,
    pub msg: String,
}

/// Parses `R <hex-addr>` / `W <hex-addr> <hex-64B>` lines. Blank lines and `#` comments are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceOp>, TraceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let err = |msg: &str| TraceError {
            line: i + 1,
            msg: msg.to_string(),
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let addr = |t: &str| {
            u64::from_str_radix(t.trim_start_matches("0x"), 16).map_err(|_| err("bad address"))
        };
        match toks.as_slice() {
            ["R", a] => out.push(TraceOp::Read(addr(a)?)),
            ["W", a, d] => {
                let d = d.trim_start_matches("0x");
                if d.len() != LINE_BYTES * 2 {
                    return Err(err("data must be 64 bytes"));
                }
                let mut data = [0u8; LINE_BYTES];
                for (k, b) in data.iter_mut().enumerate() {
                    *b = u8::from_str_radix(&d[2 * k..2 * k + 2], 16)
                        .map_err(|_| err("bad data"))?;
                }
                out.push(TraceOp::Write(addr(a)?, data));
            }
            _ => return Err(err("expected `R <addr>` or `W <addr> <data>`")),
        }
    }
    Ok(out)
}

pub fn format_trace(ops: &[TraceOp]) -> String {
    let mut s = String::new();
    for op in ops {
        match op {
            TraceOp::Read(a) => s.push_str(&format!("R {a:x}\n")),
            TraceOp::Write(a, d) => {
                let hex: String = d.iter().map(|b| format!("{b:02x}")).collect();
                s.push_str(&format!("W {a:x} {hex}\n"));
            }
        }
    }
    s
}
