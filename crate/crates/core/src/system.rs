//! One compute node, one memory node and the two link directions between
//! them, driven by a single event queue.

use std::collections::BTreeMap;

use crate::cache::Op;
use crate::cn::{CnNode, CnStats, OpRecord};
use crate::config::ScenarioConfig;
use crate::congctl::{kbps_to_gbps, RateSample};
use crate::endpoint::ArqCounters;
use crate::fabric::{Dir, Fate, FrameTag, Link, LinkStats, LossTrace, Transmission};
use crate::metrics::RequestRecord;
use crate::mn::fifo::FifoStats;
use crate::mn::node::{MnNode, MnStats};
use crate::mn::translate::TranslateStats;
use crate::sim::{PayloadKind, Scheduler, SimTime, Target};
use crate::wire::{LineData, MacAddr, LINE_BYTES};

pub const CN_MAC: MacAddr = MacAddr([0x02, 0, 0, 0, 0, 0x01]);
pub const MN_MAC: MacAddr = MacAddr([0x02, 0, 0, 0, 0, 0x10]);

/// Path timestamps carried alongside a response frame. They are simulator
/// bookkeeping, not wire content.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stamps {
    pub mn_rx: SimTime,
    pub dram_done: SimTime,
    pub mn_tx: SimTime,
}

#[derive(Clone, Debug)]
pub struct Packet {
    pub bytes: Vec<u8>,
    pub stamps: Stamps,
}

#[derive(Debug)]
pub enum Ev {
    CnIssue,
    CnDone(u64),
    CnPortKick,
    CnTimer,
    CcDeadline,
    PfcArrive { quanta: u16 },
    ToMn(Packet),
    ToCn(Packet),
    MnServe,
    MnPortKick,
    MnTimer,
    MnPfcRecheck,
    Sample,
}

impl Ev {
    fn target(&self) -> Target {
        match self {
            Ev::CnIssue
            | Ev::CnDone(_)
            | Ev::CnPortKick
            | Ev::CnTimer
            | Ev::CcDeadline
            | Ev::PfcArrive { .. }
            | Ev::ToCn(_) => Target("cn"),
            Ev::ToMn(_) | Ev::MnServe | Ev::MnPortKick | Ev::MnTimer | Ev::MnPfcRecheck => {
                Target("mn")
            }
            Ev::Sample => Target("world"),
        }
    }
}

impl PayloadKind for Ev {
    fn kind(&self) -> &'static str {
        match self {
            Ev::CnIssue => "cn_issue",
            Ev::CnDone(_) => "cn_done",
            Ev::CnPortKick => "cn_port",
            Ev::CnTimer => "cn_timer",
            Ev::CcDeadline => "cc_deadline",
            Ev::PfcArrive { .. } => "pfc_arrive",
            Ev::ToMn(_) => "to_mn",
            Ev::ToCn(_) => "to_cn",
            Ev::MnServe => "mn_serve",
            Ev::MnPortKick => "mn_port",
            Ev::MnTimer => "mn_timer",
            Ev::MnPfcRecheck => "mn_pfc_recheck",
            Ev::Sample => "sample",
        }
    }
}

/// Earliest pending wake-up for one self-scheduled event kind, so a node
/// does not flood the queue with duplicates.
#[derive(Default, Debug)]
pub(crate) struct Alarm(Option<SimTime>);

impl Alarm {
    /// Returns true if an event at `t` must be scheduled.
    pub(crate) fn want(&mut self, t: SimTime) -> bool {
        match self.0 {
            Some(armed) if armed <= t => false,
            _ => {
                self.0 = Some(t);
                true
            }
        }
    }

    pub(crate) fn fired(&mut self, now: SimTime) {
        if self.0 == Some(now) {
            self.0 = None;
        }
    }
}

/// What a node handler may touch besides itself: the queue and its own
/// egress link.
pub struct Ctx<'a> {
    pub sched: &'a mut Scheduler<Ev>,
    pub link: &'a mut Link,
}

impl Ctx<'_> {
    pub fn schedule(&mut self, t: SimTime, ev: Ev) {
        let target = ev.target();
        self.sched
            .schedule(t, target, ev)
            .expect("nodes never schedule in the past");
    }

    pub fn send(
        &mut self,
        mut bytes: Vec<u8>,
        tag: Option<FrameTag>,
        stamps: Stamps,
        mk: fn(Packet) -> Ev,
    ) -> Transmission {
        let now = self.sched.now();
        let t = self.link.transmit(now, &mut bytes, tag);
        if t.fate != Fate::Dropped {
            self.schedule(t.arrival, mk(Packet { bytes, stamps }));
        }
        t
    }
}

/// One periodic observation of the compute node's sender and the memory
/// node's FIFO.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub time: SimTime,
    pub cr_kbps: u64,
    pub phase: &'static str,
    pub fifo_len: usize,
    /// Request-direction goodput over the last interval, wire bytes.
    pub up_gbps: f64,
    pub completed: u64,
}

impl Sample {
    pub const CSV_HEADER: &'static str = "time_ns,cr_gbps,phase,fifo_len,up_gbps,completed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{},{},{:.3},{}",
            self.time.ns(),
            kbps_to_gbps(self.cr_kbps),
            self.phase,
            self.fifo_len,
            self.up_gbps,
            self.completed
        )
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub end_time: SimTime,
    /// Every bounded request completed and both channels went quiet.
    pub drained: bool,
    pub events: u64,
    pub records: Vec<RequestRecord>,
    pub ops: Vec<OpRecord>,
    pub samples: Vec<Sample>,
    pub rate_log: Vec<RateSample>,
    /// Memory image as seen by the host: pool contents translated back to
    /// CMem addresses, overlaid with flushed dirty cache lines.
    pub image: BTreeMap<u64, LineData>,
    pub cn: CnStats,
    pub mn: MnStats,
    pub cn_arq: ArqCounters,
    pub mn_arq: ArqCounters,
    pub up: LinkStats,
    pub down: LinkStats,
    pub fifo: FifoStats,
    pub translate: TranslateStats,
    pub cache: Option<crate::cache::CacheStats>,
    pub dram_accesses: u64,
    pub translation_csv: String,
}

impl RunOutput {
    pub fn arq_total(&self) -> ArqCounters {
        let mut a = self.cn_arq;
        a.merge(&self.mn_arq);
        a
    }

    pub fn remote_records(&self, op: Option<Op>) -> impl Iterator<Item = &RequestRecord> {
        self.records.iter().filter(move |r| {
            r.served_by == crate::metrics::ServedBy::Remote && op.is_none_or(|o| r.op == o)
        })
    }
}

pub struct World {
    cfg: ScenarioConfig,
    sched: Scheduler<Ev>,
    cn: CnNode,
    mn: MnNode,
    up: Link,
    down: Link,
    samples: Vec<Sample>,
    last_up_bytes: u64,
}

impl World {
    pub fn new(cfg: &ScenarioConfig, trace: LossTrace) -> Self {
        let cfg = cfg.clone();
        let mut mn = MnNode::new(cfg.mn.clone(), MN_MAC, CN_MAC, cfg.arq.mode, cfg.arq.rto_ns);
        mn.translator_mut()
            .alloc(CN_MAC, cfg.workload.footprint_bytes)
            .expect("footprint validated against the pool");
        let cc = cfg.effective_cc();
        let cn = CnNode::new(
            cfg.cn.clone(),
            cfg.workload.clone(),
            cc,
            cfg.arq.mode,
            cfg.arq.rto_ns,
            CN_MAC,
            MN_MAC,
            cfg.seed,
        );
        let lc = cfg.link.clone();
        let up = Link::new(Dir::Up, lc.clone(), cfg.faults.clone(), trace.clone(), cfg.seed);
        let down = Link::new(Dir::Down, lc, cfg.faults.clone(), trace, cfg.seed);
        Self {
            cfg,
            sched: Scheduler::new(),
            cn,
            mn,
            up,
            down,
            samples: Vec::new(),
            last_up_bytes: 0,
        }
    }

    pub fn enable_trace(&mut self) {
        self.sched.enable_trace();
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.sched.take_trace()
    }

    pub fn cn(&self) -> &CnNode {
        &self.cn
    }

    pub fn mn(&self) -> &MnNode {
        &self.mn
    }

    fn settled(&self) -> bool {
        self.cn.done() && self.cn.ep.quiescent() && self.mn.ep.quiescent()
    }

    pub fn run(self) -> RunOutput {
        self.run_traced().0
    }

    /// Runs to completion; the event log is returned if tracing was enabled.
    pub fn run_traced(mut self) -> (RunOutput, Option<String>) {
        let horizon = match self.cfg.run.duration_ns {
            0 => SimTime::MAX,
            d => SimTime::from_ns(d),
        };
        self.cn.start(&mut Ctx {
            sched: &mut self.sched,
            link: &mut self.up,
        });
        let interval = self.cfg.run.sample_interval_ns;
        if interval > 0 {
            self.sched
                .schedule(SimTime::from_ns(interval), Target("world"), Ev::Sample)
                .expect("future");
        }
        // Past the horizon no new requests are issued; what is in flight
        // drains so the final image matches the op log.
        let drain_limit = if horizon == SimTime::MAX {
            horizon
        } else {
            horizon + DRAIN_LIMIT_NS
        };
        let mut stopped = false;
        loop {
            let ev = match self.sched.pop_due(if stopped { drain_limit } else { horizon }) {
                Some(ev) => ev,
                None if !stopped && horizon != SimTime::MAX => {
                    self.cn.stop_issuing();
                    stopped = true;
                    if self.settled() {
                        break;
                    }
                    continue;
                }
                None => break,
            };
            match ev.payload {
                Ev::Sample => {
                    if !stopped {
                        self.sample();
                        if !self.cn.done() {
                            self.sched.schedule_in(interval, Target("world"), Ev::Sample);
                        }
                    }
                }
                p if ev.target == Target("mn") => self.mn.handle(
                    p,
                    &mut Ctx {
                        sched: &mut self.sched,
                        link: &mut self.down,
                    },
                ),
                p => self.cn.handle(
                    p,
                    &mut Ctx {
                        sched: &mut self.sched,
                        link: &mut self.up,
                    },
                ),
            }
            if self.settled() {
                break;
            }
        }
        let trace = self.sched.take_trace();
        (self.finish(), trace)
    }

    fn sample(&mut self) {
        let now = self.sched.now();
        let bytes = self.up.stats().bytes;
        let interval = self.cfg.run.sample_interval_ns.max(1);
        let up_gbps = (bytes - self.last_up_bytes) as f64 * 8.0 / interval as f64;
        self.last_up_bytes = bytes;
        self.samples.push(Sample {
            time: now,
            cr_kbps: self.cn.current_rate(),
            phase: self.cn.phase_name(),
            fifo_len: self.mn.fifo_len(),
            up_gbps,
            completed: self.cn.stats().completed,
        });
    }

    fn image(&mut self) -> BTreeMap<u64, LineData> {
        let mut img = BTreeMap::new();
        if self.cfg.cn.backend == crate::cn::Backend::Local {
            img.extend(self.cn.local_mem().iter().map(|(a, d)| (*a, *d)));
        } else {
            let tr = self.mn.translator();
            let pool = self.mn.pool();
            let fp = self.cfg.workload.footprint_bytes;
            let mut addr = 0;
            while addr < fp {
                if let Some(m) = tr.walk(CN_MAC, addr) {
                    if let Some(d) = pool.get(&m) {
                        img.insert(addr, *d);
                    }
                }
                addr += LINE_BYTES as u64;
            }
        }
        if let Some(c) = self.cn.cache_mut() {
            img.extend(c.flush());
        }
        img
    }

    fn translation_csv(&self) -> String {
        let mut s = String::from("cn,cmem_page,mpmem_page\n");
        for (cn, cmem, mp) in self.mn.translator().gmm().mappings() {
            s.push_str(&format!("{cn},{cmem:#x},{mp:#x}\n"));
        }
        s
    }

    fn finish(mut self) -> RunOutput {
        let drained = self.settled();
        let image = self.image();
        RunOutput {
            end_time: self.sched.now(),
            drained,
            events: self.sched.processed(),
            records: self.cn.records().to_vec(),
            ops: self.cn.ops().to_vec(),
            samples: std::mem::take(&mut self.samples),
            rate_log: self.cn.rate_log().to_vec(),
            image,
            cn: self.cn.stats(),
            mn: self.mn.stats(),
            cn_arq: self.cn.arq(),
            mn_arq: self.mn.arq(),
            up: self.up.stats(),
            down: self.down.stats(),
            fifo: self.mn.fifo_stats(),
            translate: self.mn.translate_stats(),
            cache: self.cn.cache_stats(),
            dram_accesses: self.mn.dram_accesses(),
            translation_csv: self.translation_csv(),
        }
    }
}

/// Simulated time allowed for in-flight requests to finish after a timed run.
pub const DRAIN_LIMIT_NS: u64 = 10_000_000;

/// Builds and runs one scenario.
pub fn run(cfg: &ScenarioConfig, trace: LossTrace) -> RunOutput {
    World::new(cfg, trace).run()
}
