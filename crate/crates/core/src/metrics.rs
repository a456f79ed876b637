//! Per-request path timestamps and latency aggregates.

use std::fmt;

use crate::cache::Op;
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServedBy {
    CacheHit,
    Remote,
    LocalDram,
}

impl ServedBy {
    pub fn name(self) -> &'static str {
        match self {
            ServedBy::CacheHit => "cache_hit",
            ServedBy::Remote => "remote",
            ServedBy::LocalDram => "local_dram",
        }
    }
}

pub const PART_NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// One host request with its six path boundaries. Requests that never
/// leave the compute node carry their whole latency in part a.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestRecord {
    pub req_id: u64,
    pub op: Op,
    pub addr: u64,
    pub served_by: ServedBy,
    pub t_issue: SimTime,
    pub t_cn_mac_tx: SimTime,
    pub t_mn_mac_rx: SimTime,
    pub t_dram_done: SimTime,
    pub t_mn_mac_tx: SimTime,
    pub t_cn_mac_rx: SimTime,
    pub t_complete: SimTime,
}

impl RequestRecord {
    pub fn local(req_id: u64, op: Op, addr: u64, by: ServedBy, issue: SimTime, done: SimTime) -> Self {
        Self {
            req_id,
            op,
            addr,
            served_by: by,
            t_issue: issue,
            t_cn_mac_tx: done,
            t_mn_mac_rx: done,
            t_dram_done: done,
            t_mn_mac_tx: done,
            t_cn_mac_rx: done,
            t_complete: done,
        }
    }

    fn stamps(&self) -> [SimTime; 7] {
        [
            self.t_issue,
            self.t_cn_mac_tx,
            self.t_mn_mac_rx,
            self.t_dram_done,
            self.t_mn_mac_tx,
            self.t_cn_mac_rx,
            self.t_complete,
        ]
    }

    pub fn is_ordered(&self) -> bool {
        self.stamps().windows(2).all(|w| w[0] <= w[1])
    }

    pub fn parts(&self) -> [u64; 6] {
        let s = self.stamps();
        std::array::from_fn(|i| s[i + 1].since(s[i]))
    }

    pub fn total(&self) -> u64 {
        self.t_complete.since(self.t_issue)
    }

    pub fn csv_row(&self, host_path_ns: u64) -> String {
        let p = self.parts();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.req_id,
            match self.op {
                Op::Read => "R",
                Op::Write => "W",
            },
            self.served_by.name(),
            p[0],
            p[1],
            p[2],
            p[3],
            p[4],
            p[5],
            self.total(),
            self.total() + host_path_ns
        )
    }
}

pub const LATENCY_CSV_HEADER: &str =
    "req_id,op,served_by,a_ns,b_ns,c_ns,d_ns,e_ns,f_ns,total_ns,host_total_ns";

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub min: u64,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

impl Summary {
    pub fn of(values: &[u64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_unstable();
        let pct = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        Self {
            count: v.len(),
            min: v[0],
            mean: v.iter().map(|x| *x as f64).sum::<f64>() / v.len() as f64,
            p50: pct(0.5),
            p90: pct(0.9),
            p99: pct(0.99),
            max: v[v.len() - 1],
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} min={} mean={:.1} p50={} p90={} p99={} max={}",
            self.count, self.min, self.mean, self.p50, self.p90, self.p99, self.max
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyReport {
    pub parts: [Summary; 6],
    pub total: Summary,
    /// Sum of parts b and e over the sum of totals.
    pub network_fraction: f64,
}

impl LatencyReport {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a RequestRecord>) -> Self {
        let mut parts: [Vec<u64>; 6] = Default::default();
        let mut totals = Vec::new();
        for r in records {
            for (i, p) in r.parts().iter().enumerate() {
                parts[i].push(*p);
            }
            totals.push(r.total());
        }
        let sum = |v: &Vec<u64>| v.iter().sum::<u64>() as f64;
        let all = sum(&totals);
        Self {
            parts: std::array::from_fn(|i| Summary::of(&parts[i])),
            total: Summary::of(&totals),
            network_fraction: if all > 0.0 {
                (sum(&parts[1]) + sum(&parts[4])) / all
            } else {
                0.0
            },
        }
    }
}
