//! Experiment drivers. Each takes a base scenario (normally the default
//! calibration), derives the runs it needs, and returns rows that render to
//! CSV. Independent runs execute in parallel.

use rayon::prelude::*;

use crate::cache::{Op, TraceOp};
use crate::cn::Backend;
use crate::config::ScenarioConfig;
use crate::endpoint::ArqMode;
use crate::harness::{report::RunReport, run_scenario};
use crate::metrics::{ServedBy, PART_NAMES};
use crate::mn::dram::StallModel;
use crate::wire::LINE_BYTES;

/// Closed-loop depth that loads the write path to its calibrated average.
pub const WRITE_OUTSTANDING: usize = 206;
/// Same for the read path.
pub const READ_OUTSTANDING: usize = 127;
pub const LATENCY_REQUESTS: u64 = 10_000;

pub const SWEEP_THRESHOLDS: [usize; 5] = [30, 50, 70, 90, 105];
pub const INITIAL_RATES_GBPS: [f64; 4] = [40.0, 60.0, 80.0, 100.0];
pub const RATE_SWEEP_THRESHOLD: usize = 50;

fn run(cfg: &ScenarioConfig) -> RunReport {
    run_scenario(cfg).expect("experiment configs are valid")
}

// ---------------------------------------------------------------- latency

pub fn latency_config(base: &ScenarioConfig, op: Op) -> ScenarioConfig {
    let mut c = base.clone();
    c.cn.cache_enabled = false;
    c.cn.backend = Backend::Remote;
    c.workload.script = None;
    c.workload.request_count = LATENCY_REQUESTS;
    c.run.duration_ns = 0;
    match op {
        Op::Write => {
            c.workload.read_ratio = 0.0;
            c.workload.outstanding = WRITE_OUTSTANDING;
        }
        Op::Read => {
            c.workload.read_ratio = 1.0;
            c.workload.outstanding = READ_OUTSTANDING;
        }
    }
    c
}

/// Every access hits a warm 16 KiB working set.
pub fn all_hit_config(base: &ScenarioConfig) -> ScenarioConfig {
    let mut c = base.clone();
    c.cn.cache_enabled = true;
    c.workload.script = None;
    c.workload.footprint_bytes = 16 << 10;
    c.workload.read_ratio = 0.5;
    c.workload.outstanding = 1;
    c.workload.request_count = LATENCY_REQUESTS;
    c.run.duration_ns = 0;
    c
}

pub struct LatencyStudy {
    pub write: RunReport,
    pub read: RunReport,
    pub all_hit: RunReport,
    /// (b + e) over total across both uncached runs.
    pub network_fraction: f64,
    /// Host-level average of a 50/50 mix: mean of the two path averages
    /// plus the host path.
    pub mixed_host_ns: f64,
    /// Host-level average over the cache hits of the all-hit run.
    pub all_hit_host_ns: f64,
}

pub fn exp_latency_breakdown(base: &ScenarioConfig) -> LatencyStudy {
    let cfgs = [
        latency_config(base, Op::Write),
        latency_config(base, Op::Read),
        all_hit_config(base),
    ];
    let mut reps: Vec<RunReport> = cfgs.par_iter().map(run).collect();
    let all_hit = reps.pop().unwrap();
    let read = reps.pop().unwrap();
    let write = reps.pop().unwrap();
    let mut net = 0u64;
    let mut tot = 0u64;
    for r in write.out.remote_records(None).chain(read.out.remote_records(None)) {
        let p = r.parts();
        net += p[1] + p[4];
        tot += r.total();
    }
    let hits: Vec<u64> = all_hit
        .out
        .records
        .iter()
        .filter(|r| r.served_by == ServedBy::CacheHit)
        .map(|r| r.total())
        .collect();
    let hp = base.cn.host_path_ns as f64;
    LatencyStudy {
        network_fraction: net as f64 / tot.max(1) as f64,
        mixed_host_ns: 0.5 * (write.write.mean + read.read.mean) + hp,
        all_hit_host_ns: hits.iter().sum::<u64>() as f64 / hits.len().max(1) as f64 + hp,
        write,
        read,
        all_hit,
    }
}

impl LatencyStudy {
    /// Eleven evenly spaced requests from each uncached run, then the
    /// per-run means.
    pub fn csv(&self) -> String {
        let mut s = format!("run,req_id,{},total_ns\n", PART_NAMES.map(|p| format!("{p}_ns")).join(","));
        for (name, rep) in [("write", &self.write), ("read", &self.read)] {
            let recs: Vec<_> = rep.out.remote_records(None).collect();
            if recs.is_empty() {
                continue;
            }
            for i in 0..=10 {
                let r = recs[i * (recs.len() - 1) / 10];
                let p = r.parts();
                s.push_str(&format!(
                    "{name},{},{},{},{},{},{},{},{}\n",
                    r.req_id, p[0], p[1], p[2], p[3], p[4], p[5], r.total()
                ));
            }
            let m = &rep.latency.parts;
            s.push_str(&format!(
                "{name},mean,{:.1},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}\n",
                m[0].mean, m[1].mean, m[2].mean, m[3].mean, m[4].mean, m[5].mean, rep.latency.total.mean
            ));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "metric,value\nwrite_mean_ns,{:.1}\nread_mean_ns,{:.1}\nnetwork_fraction,{:.4}\nmixed_host_ns,{:.1}\nall_hit_host_ns,{:.1}\n",
            self.write.write.mean,
            self.read.read.mean,
            self.network_fraction,
            self.mixed_host_ns,
            self.all_hit_host_ns
        )
    }
}

// ------------------------------------------------------------- congestion

/// Saturating write stream against a memory node whose service pauses for
/// the last 760 ns of every 10 us.
pub fn congestion_config(base: &ScenarioConfig) -> ScenarioConfig {
    let mut c = base.clone();
    c.cn.cache_enabled = false;
    c.workload.script = None;
    c.workload.read_ratio = 0.0;
    c.workload.outstanding = c.cn.max_writes + c.cn.max_reads;
    c.workload.request_count = 0;
    c.run.duration_ns = 3_000_000;
    c.run.sample_interval_ns = 1_000;
    c.mn.dram.stall = Some(StallModel {
        period_ns: 10_000,
        duration_ns: 760,
    });
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct CongestionRow {
    pub threshold: usize,
    pub initial_gbps: f64,
    pub cc_enabled: bool,
    pub first_stable_gbps: Option<f64>,
    pub final_stable_gbps: Option<f64>,
    pub pfc: u64,
    pub mean_up_gbps: f64,
    pub fifo_peak: usize,
}

impl CongestionRow {
    pub const CSV_HEADER: &'static str =
        "threshold,initial_gbps,cc,first_stable_gbps,final_stable_gbps,pfc,mean_up_gbps,fifo_peak";

    fn of(r: &RunReport) -> Self {
        let c = &r.config;
        Self {
            threshold: c.mn.fifo.pfc_threshold,
            initial_gbps: c
                .cn
                .initial_rate_gbps
                .unwrap_or(crate::congctl::kbps_to_gbps(c.link.rate_kbps)),
            cc_enabled: c.cn.cc_enabled,
            first_stable_gbps: r.first_stable_gbps,
            final_stable_gbps: r.final_stable_gbps,
            pfc: r.pfc_count,
            mean_up_gbps: r.mean_up_gbps,
            fifo_peak: r.out.fifo.peak,
        }
    }

    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map_or_else(|| "none".into(), |x| format!("{x:.3}"));
        format!(
            "{},{:.1},{},{},{},{},{:.3},{}",
            self.threshold,
            self.initial_gbps,
            self.cc_enabled,
            o(self.first_stable_gbps),
            o(self.final_stable_gbps),
            self.pfc,
            self.mean_up_gbps,
            self.fifo_peak
        )
    }

    /// |first - final| / final, when both exist.
    pub fn gap(&self) -> Option<f64> {
        Some((self.first_stable_gbps? - self.final_stable_gbps?).abs() / self.final_stable_gbps?)
    }
}

pub fn rows_csv(rows: &[CongestionRow]) -> String {
    let mut s = format!("{}\n", CongestionRow::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn exp_congestion_sweep(base: &ScenarioConfig, thresholds: &[usize]) -> Vec<CongestionRow> {
    thresholds
        .par_iter()
        .map(|&t| {
            let mut c = congestion_config(base);
            c.mn.fifo.pfc_threshold = t;
            c.cn.initial_rate_gbps = None;
            CongestionRow::of(&run(&c))
        })
        .collect()
}

pub fn exp_initial_rate_sweep(base: &ScenarioConfig, rates: &[f64]) -> Vec<CongestionRow> {
    rates
        .par_iter()
        .map(|&g| {
            let mut c = congestion_config(base);
            c.mn.fifo.pfc_threshold = RATE_SWEEP_THRESHOLD;
            c.cn.initial_rate_gbps = Some(g);
            CongestionRow::of(&run(&c))
        })
        .collect()
}

/// Same congestion with the rate controller off: PFC simply pauses the
/// sender for the advertised quanta.
pub fn exp_naive_baseline(base: &ScenarioConfig) -> RunReport {
    let mut c = congestion_config(base);
    c.mn.fifo.pfc_threshold = RATE_SWEEP_THRESHOLD;
    c.cn.cc_enabled = false;
    c.cn.initial_rate_gbps = None;
    run(&c)
}

/// Fraction of samples in which the link carried under a tenth of line rate.
pub fn idle_fraction(r: &RunReport) -> f64 {
    let line = crate::congctl::kbps_to_gbps(r.config.link.rate_kbps);
    let s = &r.out.samples;
    s.iter().filter(|x| x.up_gbps < 0.1 * line).count() as f64 / s.len().max(1) as f64
}

// ------------------------------------------------------------------ cache

const NS_PER_CYCLE: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CacheCase {
    pub case: &'static str,
    pub backend: Backend,
    pub latency_ns: u64,
}

impl CacheCase {
    pub fn cycles(&self) -> f64 {
        self.latency_ns as f64 / NS_PER_CYCLE
    }
}

pub struct CacheStudy {
    pub cases: Vec<CacheCase>,
}

impl CacheStudy {
    pub fn get(&self, case: &str, backend: Backend) -> u64 {
        self.cases
            .iter()
            .find(|c| c.case == case && c.backend == backend)
            .map(|c| c.latency_ns)
            .unwrap_or_else(|| panic!("no case {case}"))
    }

    pub fn remote_ratio(&self) -> f64 {
        self.get("read_miss", Backend::Remote) as f64 / self.get("read_hit", Backend::Remote) as f64
    }

    pub fn local_ratio(&self) -> f64 {
        self.get("read_miss", Backend::Local) as f64 / self.get("read_hit", Backend::Remote) as f64
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("case,backend,latency_ns,cycles\n");
        for c in &self.cases {
            let b = match c.backend {
                Backend::Remote => "remote",
                Backend::Local => "local",
            };
            s.push_str(&format!("{},{b},{},{:.1}\n", c.case, c.latency_ns, c.cycles()));
        }
        s
    }
}

fn line(b: u8) -> [u8; LINE_BYTES] {
    [b; LINE_BYTES]
}

/// Access scripts whose last op lands in the named case.
fn cache_script(case: &str, set_stride: u64, ways: usize) -> Vec<TraceOp> {
    match case {
        "write_hit" => vec![TraceOp::Write(0, line(1)), TraceOp::Write(0, line(2))],
        "read_hit" => vec![TraceOp::Write(0, line(1)), TraceOp::Read(0)],
        "write_miss_no_replace" => vec![TraceOp::Write(0, line(1))],
        "write_miss_replace" => (0..=ways as u64)
            .map(|i| TraceOp::Write(i * set_stride, line(i as u8 + 1)))
            .collect(),
        "read_miss" => vec![TraceOp::Read(0)],
        _ => unreachable!(),
    }
}

pub const CACHE_CASES: [(&str, Backend); 7] = [
    ("write_hit", Backend::Remote),
    ("read_hit", Backend::Remote),
    ("write_miss_no_replace", Backend::Remote),
    ("write_miss_replace", Backend::Remote),
    ("read_miss", Backend::Remote),
    ("write_miss_replace", Backend::Local),
    ("read_miss", Backend::Local),
];

pub fn exp_cache_study(base: &ScenarioConfig) -> CacheStudy {
    let cc = base.cn.cache;
    let stride = (cc.sets() * cc.line_bytes) as u64;
    let cases = CACHE_CASES
        .par_iter()
        .map(|&(case, backend)| {
            let mut c = base.clone();
            c.cn.cache_enabled = true;
            c.cn.backend = backend;
            c.workload.outstanding = 1;
            c.workload.script = Some(cache_script(case, stride, cc.ways));
            c.workload.footprint_bytes = c.workload.footprint_bytes.max(stride * (cc.ways as u64 + 1));
            c.run.duration_ns = 0;
            let r = run(&c);
            let last = r.out.records.iter().max_by_key(|r| r.req_id).expect("script ran");
            CacheCase {
                case,
                backend,
                latency_ns: last.total(),
            }
        })
        .collect();
    CacheStudy { cases }
}

// ------------------------------------------------------------ reliability

#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityRow {
    pub seed: u64,
    pub drop: f64,
    pub corrupt: f64,
    /// Frames lost or corrupted in the selective run.
    pub losses: u64,
    pub selective_retx: u64,
    pub gbn_retx: u64,
    pub drained: bool,
    pub oracle_pass: bool,
    pub double_completions: u64,
}

impl ReliabilityRow {
    pub const CSV_HEADER: &'static str =
        "seed,drop,corrupt,losses,selective_retx,gbn_retx,drained,oracle,double_completions";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.drop,
            self.corrupt,
            self.losses,
            self.selective_retx,
            self.gbn_retx,
            self.drained,
            if self.oracle_pass { "pass" } else { "fail" },
            self.double_completions
        )
    }
}

pub fn reliability_config(base: &ScenarioConfig, seed: u64, drop: f64, corrupt: f64, requests: u64) -> ScenarioConfig {
    let mut c = base.clone();
    c.seed = seed;
    c.faults.drop_probability = drop;
    c.faults.corrupt_probability = corrupt;
    c.workload.script = None;
    c.workload.request_count = requests;
    c.workload.outstanding = 32;
    c.run.duration_ns = 0;
    c.run.sample_interval_ns = 0;
    c
}

/// Runs the same faulty scenario under both retransmission policies. Fault
/// fates are keyed by frame identity, so both runs see the same losses on
/// every frame they have in common.
pub fn reliability_pair(base: &ScenarioConfig, seed: u64, drop: f64, corrupt: f64, requests: u64) -> ReliabilityRow {
    let mut sel = reliability_config(base, seed, drop, corrupt, requests);
    sel.arq.mode = ArqMode::Selective;
    let mut gbn = sel.clone();
    gbn.arq.mode = ArqMode::GoBackN;
    let (a, b) = rayon::join(|| run(&sel), || run(&gbn));
    ReliabilityRow {
        seed,
        drop,
        corrupt,
        losses: a.out.up.dropped + a.out.up.corrupted + a.out.down.dropped + a.out.down.corrupted,
        selective_retx: a.retx,
        gbn_retx: b.retx,
        drained: a.out.drained && b.out.drained,
        oracle_pass: a.verdict.passed() && b.verdict.passed(),
        double_completions: a.out.cn.double_completions + b.out.cn.double_completions,
    }
}

pub fn exp_reliability(
    base: &ScenarioConfig,
    levels: &[(f64, f64)],
    seeds: &[u64],
    requests: u64,
) -> Vec<ReliabilityRow> {
    let jobs: Vec<(f64, f64, u64)> = levels
        .iter()
        .flat_map(|&(d, c)| seeds.iter().map(move |&s| (d, c, s)))
        .collect();
    jobs.par_iter()
        .map(|&(d, c, s)| reliability_pair(base, s, d, c, requests))
        .collect()
}

pub fn reliability_csv(rows: &[ReliabilityRow]) -> String {
    let mut s = format!("{}\n", ReliabilityRow::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}
