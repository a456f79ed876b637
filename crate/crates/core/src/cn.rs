//! Compute node: host request issue, the line cache, the request side of the
//! reliable channel, rate shaping under congestion control, and per-request
//! path timestamps.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::arq::RxOutcome;
use crate::cache::{Cache, CacheConfig, CacheOutcome, CacheStats, Op};
use crate::congctl::{Acquire, CcParams, CongestionControl, Kbps, PfcEffect, RateSample, TokenBucket};
use crate::endpoint::{ArqCounters, ArqMode, Endpoint, Next};
use crate::fabric::FrameTag;
use crate::metrics::{RequestRecord, ServedBy};
use crate::sim::SimTime;
use crate::system::{Alarm, Ctx, Ev, Packet, Stamps};
use crate::wire::{
    decode, encode, peek_command, Body, Command, DecodeError, Frame, LineData, MacAddr, SeqNum,
    LINE_BYTES,
};
use crate::workload::{HostOp, Workload, WorkloadConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Misses travel over the link to the memory node.
    #[default]
    Remote,
    /// Misses are served by DRAM attached to the compute node itself.
    Local,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnTiming {
    /// Agent to MAC, once a frame is ready.
    pub egress_ns: u64,
    /// MAC to agent completion.
    pub ingress_ns: u64,
    pub hit_read_ns: u64,
    pub hit_write_ns: u64,
    pub local_read_extra_ns: u64,
    pub local_write_extra_ns: u64,
}

impl Default for CnTiming {
    fn default() -> Self {
        Self {
            egress_ns: 16,
            ingress_ns: 12,
            hit_read_ns: 64,
            hit_write_ns: 56,
            local_read_extra_ns: 136,
            local_write_extra_ns: 88,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnConfig {
    pub cache_enabled: bool,
    pub backend: Backend,
    pub cache: CacheConfig,
    pub max_reads: usize,
    pub max_writes: usize,
    pub timing: CnTiming,
    /// Hold a read miss until the dirty victim's writeback is acknowledged.
    pub serialize_writeback: bool,
    /// Congestion control on; off means plain PFC pause.
    pub cc_enabled: bool,
    /// Starting rate in Gbps; line rate when absent.
    pub initial_rate_gbps: Option<f64>,
    pub bucket_bytes: usize,
    /// Fixed host to agent round trip added to host-level latency.
    pub host_path_ns: u64,
}

impl Default for CnConfig {
    fn default() -> Self {
        Self {
            cache_enabled: false,
            backend: Backend::Remote,
            cache: CacheConfig::default(),
            max_reads: 256,
            max_writes: 256,
            timing: CnTiming::default(),
            serialize_writeback: false,
            cc_enabled: true,
            initial_rate_gbps: None,
            bucket_bytes: 2 * Command::WriteReq.wire_len(),
            host_path_ns: 380,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CnStats {
    pub issued: u64,
    pub completed: u64,
    pub reads_issued: u64,
    pub writes_issued: u64,
    pub writebacks: u64,
    pub mshr_waits: u64,
    pub peak_reads: usize,
    pub peak_writes: usize,
    pub cap_violations: u64,
    pub unknown_responses: u64,
    pub double_completions: u64,
    pub pfc_received: u64,
    pub first_pfc_at: Option<SimTime>,
    pub pfc_applied: u64,
    pub pfc_duplicates: u64,
    pub data_frames: u64,
    pub data_bytes: u64,
}

/// Who is waiting on a request frame's response.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Owner {
    Host(u64),
    Writeback {
        completes: Option<u64>,
        then_fetch: Option<u64>,
    },
}

#[derive(Clone, Debug)]
pub struct ReqItem {
    body: Body,
    owner: Owner,
}

#[derive(Clone, Debug)]
pub struct RespIn {
    body: Body,
    stamps: Stamps,
    cn_rx: SimTime,
}

#[derive(Clone, Copy, Debug)]
struct FrameInfo {
    owner: Owner,
    first_tx: SimTime,
}

#[derive(Clone, Copy, Debug)]
struct RemoteStamps {
    cn_tx: SimTime,
    stamps: Stamps,
    cn_rx: SimTime,
}

#[derive(Clone, Debug)]
struct Slot {
    op: Op,
    addr: u64,
    data: Option<LineData>,
    issue: SimTime,
    served_by: ServedBy,
    /// Install the result in the cache on completion.
    fill: bool,
    result: Option<LineData>,
    remote: Option<RemoteStamps>,
}

/// One host operation in issue order, for oracle replay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub req_id: u64,
    pub op: Op,
    pub addr: u64,
    /// Data written, or data returned once the read completes.
    pub data: Option<LineData>,
}

fn with_seq(b: &Body, s: SeqNum) -> Body {
    let mut b = b.clone();
    match &mut b {
        Body::ReadReq { seq, .. } | Body::WriteReq { seq, .. } => *seq = s,
        _ => unreachable!("not a request"),
    }
    b
}

fn line_of(addr: u64) -> u64 {
    addr - addr % LINE_BYTES as u64
}

pub struct CnNode {
    mac: MacAddr,
    mn: MacAddr,
    cfg: CnConfig,
    wl_cfg: WorkloadConfig,
    workload: Workload,
    cache: Option<Cache>,
    pub ep: Endpoint<ReqItem, RespIn>,
    cc: Option<CongestionControl>,
    line_rate: Kbps,
    bucket: TokenBucket,
    paused_until: SimTime,
    slots: HashMap<u64, Slot>,
    by_seq: HashMap<u16, FrameInfo>,
    mshr: HashMap<u64, VecDeque<u64>>,
    local_mem: HashMap<u64, LineData>,
    pending_op: Option<HostOp>,
    exhausted: bool,
    stopped: bool,
    next_id: u64,
    reads_out: usize,
    writes_out: usize,
    last_ready: SimTime,
    records: Vec<RequestRecord>,
    ops: Vec<OpRecord>,
    rate_log: Vec<RateSample>,
    kick_alarm: Alarm,
    timer_alarm: Alarm,
    cc_alarm: Alarm,
    ctrl_serial: u64,
    stats: CnStats,
}

impl CnNode {
    pub fn new(
        cfg: CnConfig,
        workload: WorkloadConfig,
        cc_params: CcParams,
        mode: ArqMode,
        rto_ns: u64,
        mac: MacAddr,
        mn: MacAddr,
        seed: u64,
    ) -> Self {
        let line_rate = cc_params.line_rate_kbps;
        let start = cfg
            .initial_rate_gbps
            .map_or(line_rate, |g| (g * 1e6).round() as Kbps);
        let cc = cfg
            .cc_enabled
            .then(|| CongestionControl::with_rate(cc_params, start, SimTime::ZERO));
        let rate = cc.as_ref().map_or(start, |c| c.current_rate());
        let cache = cfg
            .cache_enabled
            .then(|| Cache::new(cfg.cache).expect("cache geometry validated"));
        let mut rate_log = Vec::new();
        if let Some(c) = &cc {
            rate_log.push(RateSample::of(c, SimTime::ZERO));
        }
        Self {
            mac,
            mn,
            wl_cfg: workload.clone(),
            workload: Workload::new(workload, seed),
            cache,
            ep: Endpoint::new(mode, rto_ns),
            cc,
            line_rate,
            bucket: TokenBucket::new(cfg.bucket_bytes, rate, SimTime::ZERO),
            paused_until: SimTime::ZERO,
            slots: HashMap::new(),
            by_seq: HashMap::new(),
            mshr: HashMap::new(),
            local_mem: HashMap::new(),
            stopped: false,
            pending_op: None,
            exhausted: false,
            next_id: 0,
            reads_out: 0,
            writes_out: 0,
            last_ready: SimTime::ZERO,
            records: Vec::new(),
            ops: Vec::new(),
            rate_log,
            kick_alarm: Alarm::default(),
            timer_alarm: Alarm::default(),
            cc_alarm: Alarm::default(),
            ctrl_serial: 0,
            stats: CnStats::default(),
            cfg,
        }
    }

    pub fn config(&self) -> &CnConfig {
        &self.cfg
    }

    pub fn stats(&self) -> CnStats {
        self.stats
    }

    pub fn arq(&self) -> ArqCounters {
        self.ep.counters
    }

    pub fn cache_stats(&self) -> Option<CacheStats> {
        self.cache.as_ref().map(Cache::stats)
    }

    pub fn cache_mut(&mut self) -> Option<&mut Cache> {
        self.cache.as_mut()
    }

    pub fn records(&self) -> &[RequestRecord] {
        &self.records
    }

    pub fn ops(&self) -> &[OpRecord] {
        &self.ops
    }

    pub fn rate_log(&self) -> &[RateSample] {
        &self.rate_log
    }

    /// Memory contents of the local backend.
    pub fn local_mem(&self) -> &HashMap<u64, LineData> {
        &self.local_mem
    }

    pub fn current_rate(&self) -> Kbps {
        self.cc.as_ref().map_or(self.bucket.rate(), |c| c.current_rate())
    }

    pub fn phase_name(&self) -> &'static str {
        self.cc.as_ref().map_or("none", |c| c.phase().name())
    }

    pub fn outstanding(&self) -> (usize, usize) {
        (self.reads_out, self.writes_out)
    }

    /// True once every issued request, writebacks included, has finished
    /// and either the workload is exhausted or issuing was stopped.
    pub fn done(&self) -> bool {
        let idle = self.slots.is_empty() && self.by_seq.is_empty();
        let finished = match self.wl_cfg.total() {
            Some(n) => self.stats.completed >= n,
            None => false,
        };
        idle && (finished || self.stopped)
    }

    /// No new host requests after this; outstanding ones still complete.
    pub fn stop_issuing(&mut self) {
        self.stopped = true;
        self.pending_op = None;
    }

    pub fn start(&mut self, ctx: &mut Ctx) {
        if let Some(d) = self.cc.as_ref().and_then(|c| c.deadline()) {
            self.arm_cc(ctx, d);
        }
        if self.wl_cfg.outstanding == 0 {
            ctx.schedule(SimTime::ZERO, Ev::CnIssue);
        } else {
            self.try_issue(ctx);
        }
    }

    pub fn handle(&mut self, ev: Ev, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        match ev {
            Ev::CnIssue => {
                self.issue_one(ctx);
                if !self.exhausted {
                    ctx.schedule(now + self.wl_cfg.issue_interval_ns, Ev::CnIssue);
                }
            }
            Ev::CnDone(id) => self.complete(id, ctx),
            Ev::CnPortKick => {
                self.kick_alarm.fired(now);
                self.port(ctx);
            }
            Ev::CnTimer => {
                self.timer_alarm.fired(now);
                self.ep.on_timer(now);
                self.arm_timer(ctx);
                self.port(ctx);
            }
            Ev::CcDeadline => {
                self.cc_alarm.fired(now);
                self.on_cc_deadline(ctx);
            }
            Ev::PfcArrive { quanta } => self.on_pfc(quanta, ctx),
            Ev::ToCn(p) => self.on_arrival(p, ctx),
            other => unreachable!("cn got {other:?}"),
        }
    }

    fn arm_kick(&mut self, ctx: &mut Ctx, t: SimTime) {
        if self.kick_alarm.want(t) {
            ctx.schedule(t, Ev::CnPortKick);
        }
    }

    fn arm_timer(&mut self, ctx: &mut Ctx) {
        if let Some(t) = self.ep.next_timeout() {
            if self.timer_alarm.want(t) {
                ctx.schedule(t, Ev::CnTimer);
            }
        }
    }

    fn arm_cc(&mut self, ctx: &mut Ctx, t: SimTime) {
        if self.cc_alarm.want(t) {
            ctx.schedule(t, Ev::CcDeadline);
        }
    }

    fn log_rate(&mut self, now: SimTime) {
        if let Some(c) = &self.cc {
            self.rate_log.push(RateSample::of(c, now));
        }
    }

    fn on_cc_deadline(&mut self, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        let Some(cc) = self.cc.as_mut() else { return };
        if cc.deadline() == Some(now) && cc.on_deadline(now) {
            let r = cc.current_rate();
            self.bucket.set_rate(r, now);
            self.log_rate(now);
        }
        if let Some(d) = self.cc.as_ref().and_then(|c| c.deadline()) {
            if d > now {
                self.arm_cc(ctx, d);
            }
        }
    }

    fn on_pfc(&mut self, quanta: u16, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        self.stats.pfc_received += 1;
        self.stats.first_pfc_at.get_or_insert(now);
        match self.cc.as_mut() {
            Some(cc) => match cc.on_pfc(now) {
                PfcEffect::Applied => {
                    self.stats.pfc_applied += 1;
                    let r = cc.current_rate();
                    let d = cc.deadline();
                    self.bucket.set_rate(r, now);
                    self.log_rate(now);
                    if let Some(d) = d {
                        self.arm_cc(ctx, d);
                    }
                }
                PfcEffect::Duplicate => self.stats.pfc_duplicates += 1,
            },
            None => {
                // One quantum is 512 bit times at line rate.
                let ns = (quanta as u64 * 512 * 1_000_000).div_ceil(self.line_rate);
                self.paused_until = self.paused_until.max(now + ns);
                self.stats.pfc_applied += 1;
                let t = self.paused_until;
                self.arm_kick(ctx, t);
            }
        }
    }

    fn try_issue(&mut self, ctx: &mut Ctx) {
        let target = self.wl_cfg.outstanding;
        if target == 0 {
            if self.pending_op.is_some() {
                self.issue_one(ctx);
            }
            return;
        }
        while self.reads_out + self.writes_out < target && self.issue_one(ctx) {}
    }

    /// Issues the next host op if its inflight cap allows. Returns false when
    /// blocked or exhausted.
    fn issue_one(&mut self, ctx: &mut Ctx) -> bool {
        if self.stopped {
            return false;
        }
        let now = ctx.sched.now();
        let op = match self.pending_op.take() {
            Some(op) => op,
            None => match self.workload.next_op() {
                Some(op) => op,
                None => {
                    self.exhausted = true;
                    return false;
                }
            },
        };
        let blocked = match op.op {
            Op::Read => self.reads_out >= self.cfg.max_reads,
            Op::Write => self.writes_out >= self.cfg.max_writes,
        };
        if blocked {
            self.pending_op = Some(op);
            return false;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.stats.issued += 1;
        match op.op {
            Op::Read => {
                self.reads_out += 1;
                self.stats.reads_issued += 1;
                self.stats.peak_reads = self.stats.peak_reads.max(self.reads_out);
            }
            Op::Write => {
                self.writes_out += 1;
                self.stats.writes_issued += 1;
                self.stats.peak_writes = self.stats.peak_writes.max(self.writes_out);
            }
        }
        if self.reads_out > self.cfg.max_reads || self.writes_out > self.cfg.max_writes {
            self.stats.cap_violations += 1;
        }
        self.ops.push(OpRecord {
            req_id: id,
            op: op.op,
            addr: op.addr,
            data: op.data,
        });
        self.slots.insert(
            id,
            Slot {
                op: op.op,
                addr: op.addr,
                data: op.data,
                issue: now,
                served_by: ServedBy::Remote,
                fill: false,
                result: None,
                remote: None,
            },
        );
        let line = line_of(op.addr);
        if let Some(waiters) = self.mshr.get_mut(&line) {
            waiters.push_back(id);
            self.stats.mshr_waits += 1;
        } else {
            self.dispatch(id, ctx);
        }
        true
    }

    fn finish_at(&mut self, id: u64, by: ServedBy, at: SimTime, ctx: &mut Ctx) {
        self.slots.get_mut(&id).expect("live slot").served_by = by;
        ctx.schedule(at, Ev::CnDone(id));
    }

    fn push_req(&mut self, owner: Owner, body: Body, lookup_ns: u64, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        let ready = (now + lookup_ns + self.cfg.timing.egress_ns).max(self.last_ready);
        self.last_ready = ready;
        self.ep.push_fresh(ready, ReqItem { body, owner });
        self.arm_kick(ctx, ready);
    }

    fn read_req(addr: u64, id: u64) -> Body {
        Body::ReadReq {
            seq: SeqNum(0),
            arid: id as u16,
            address: addr,
        }
    }

    fn write_req(addr: u64, data: LineData, id: u64) -> Body {
        Body::WriteReq {
            seq: SeqNum(0),
            awid: id as u16,
            address: addr,
            data,
        }
    }

    fn writeback(&mut self, addr: u64, data: LineData, owner: Owner, lookup: u64, ctx: &mut Ctx) {
        self.stats.writebacks += 1;
        match self.cfg.backend {
            Backend::Remote => {
                let body = Self::write_req(addr, data, self.stats.writebacks);
                self.push_req(owner, body, lookup, ctx);
            }
            Backend::Local => {
                self.local_mem.insert(addr, data);
            }
        }
    }

    fn dispatch(&mut self, id: u64, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        let t = self.cfg.timing.clone();
        let (op, addr, data) = {
            let s = &self.slots[&id];
            (s.op, s.addr, s.data)
        };
        let local = self.cfg.backend == Backend::Local;
        let Some(cache) = self.cache.as_mut() else {
            match (local, op) {
                (false, Op::Read) => self.push_req(Owner::Host(id), Self::read_req(addr, id), 0, ctx),
                (false, Op::Write) => {
                    self.push_req(Owner::Host(id), Self::write_req(addr, data.unwrap(), id), 0, ctx)
                }
                (true, Op::Read) => {
                    let d = self.local_mem.get(&addr).copied().unwrap_or([0; LINE_BYTES]);
                    self.slots.get_mut(&id).unwrap().result = Some(d);
                    let at = now + t.hit_read_ns + t.local_read_extra_ns;
                    self.finish_at(id, ServedBy::LocalDram, at, ctx);
                }
                (true, Op::Write) => {
                    self.local_mem.insert(addr, data.unwrap());
                    let at = now + t.hit_write_ns + t.local_write_extra_ns;
                    self.finish_at(id, ServedBy::LocalDram, at, ctx);
                }
            }
            return;
        };
        let outcome = cache
            .access(op, addr, data.as_ref())
            .expect("workload addresses are aligned");
        match outcome {
            CacheOutcome::ReadHit(d) => {
                self.slots.get_mut(&id).unwrap().result = Some(d);
                self.finish_at(id, ServedBy::CacheHit, now + t.hit_read_ns, ctx);
            }
            CacheOutcome::WriteHit
            | CacheOutcome::WriteAllocNoRemote
            | CacheOutcome::WriteReplace {
                evicted_data: None, ..
            } => self.finish_at(id, ServedBy::CacheHit, now + t.hit_write_ns, ctx),
            CacheOutcome::WriteReplace {
                evicted_addr,
                evicted_data: Some(d),
            } => {
                if local {
                    self.writeback(evicted_addr, d, Owner::Host(id), 0, ctx);
                    let at = now + t.hit_write_ns + t.local_write_extra_ns;
                    self.finish_at(id, ServedBy::LocalDram, at, ctx);
                } else {
                    let owner = Owner::Writeback {
                        completes: Some(id),
                        then_fetch: None,
                    };
                    self.writeback(evicted_addr, d, owner, t.hit_write_ns, ctx);
                }
            }
            CacheOutcome::NeedFetch => self.fetch(id, addr, ctx),
            CacheOutcome::NeedWritebackThenFetch {
                evicted_addr,
                evicted_data,
            } => {
                self.cache.as_mut().unwrap().invalidate(evicted_addr);
                let serialize = self.cfg.serialize_writeback && !local;
                let owner = Owner::Writeback {
                    completes: None,
                    then_fetch: serialize.then_some(id),
                };
                self.writeback(evicted_addr, evicted_data, owner, t.hit_read_ns, ctx);
                if serialize {
                    self.mshr.insert(line_of(addr), VecDeque::new());
                    self.slots.get_mut(&id).unwrap().fill = true;
                } else {
                    self.fetch(id, addr, ctx);
                }
            }
        }
    }

    fn fetch(&mut self, id: u64, addr: u64, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        let t = &self.cfg.timing;
        self.mshr.insert(line_of(addr), VecDeque::new());
        let slot = self.slots.get_mut(&id).unwrap();
        slot.fill = true;
        match self.cfg.backend {
            Backend::Local => {
                let d = self.local_mem.get(&addr).copied().unwrap_or([0; LINE_BYTES]);
                slot.result = Some(d);
                let at = now + t.hit_read_ns + t.local_read_extra_ns;
                self.finish_at(id, ServedBy::LocalDram, at, ctx);
            }
            Backend::Remote => {
                let lookup = t.hit_read_ns;
                self.push_req(Owner::Host(id), Self::read_req(addr, id), lookup, ctx);
            }
        }
    }

    fn complete(&mut self, id: u64, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        let Some(slot) = self.slots.remove(&id) else {
            self.stats.double_completions += 1;
            return;
        };
        if slot.fill {
            let data = slot.result.expect("fetched data");
            let ev = self
                .cache
                .as_mut()
                .expect("fills need a cache")
                .fill(slot.addr, &data)
                .expect("pending lines are absent");
            if let Some(crate::cache::Eviction {
                addr,
                data: Some(d),
            }) = ev
            {
                let owner = Owner::Writeback {
                    completes: None,
                    then_fetch: None,
                };
                self.writeback(addr, d, owner, 0, ctx);
            }
            if let Some(waiters) = self.mshr.remove(&line_of(slot.addr)) {
                for w in waiters {
                    self.dispatch(w, ctx);
                }
            }
        }
        let rec = match slot.remote {
            Some(r) => RequestRecord {
                req_id: id,
                op: slot.op,
                addr: slot.addr,
                served_by: ServedBy::Remote,
                t_issue: slot.issue,
                t_cn_mac_tx: r.cn_tx,
                t_mn_mac_rx: r.stamps.mn_rx,
                t_dram_done: r.stamps.dram_done,
                t_mn_mac_tx: r.stamps.mn_tx,
                t_cn_mac_rx: r.cn_rx,
                t_complete: now,
            },
            None => RequestRecord::local(id, slot.op, slot.addr, slot.served_by, slot.issue, now),
        };
        self.records.push(rec);
        if slot.op == Op::Read {
            self.ops[id as usize].data = slot.result;
            self.reads_out -= 1;
        } else {
            self.writes_out -= 1;
        }
        self.stats.completed += 1;
        self.try_issue(ctx);
    }

    fn on_arrival(&mut self, p: Packet, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        let cmd = peek_command(&p.bytes);
        let is_resp = matches!(cmd, Some(Command::ReadResp | Command::WriteResp));
        match decode(&p.bytes) {
            Ok(f) if is_resp => {
                let (seq, ack) = match f.body {
                    Body::ReadResp {
                        resp_seq, cum_ack, ..
                    }
                    | Body::WriteResp {
                        resp_seq, cum_ack, ..
                    } => (resp_seq, cum_ack),
                    _ => unreachable!(),
                };
                self.ep.on_cum_ack(ack);
                let r = RespIn {
                    body: f.body,
                    stamps: p.stamps,
                    cn_rx: now,
                };
                if let RxOutcome::Deliver(v) = self.ep.on_data(seq, r) {
                    for (_, r) in v {
                        self.on_response(r, ctx);
                    }
                }
            }
            Ok(f) => {
                self.ep.on_control(&f.body, now);
            }
            Err(DecodeError::CrcError { .. }) if is_resp => self.ep.on_corrupt(),
            Err(_) => {}
        }
        self.port(ctx);
    }

    fn on_response(&mut self, r: RespIn, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        let req_seq = match r.body {
            Body::ReadResp { req_seq, .. } | Body::WriteResp { req_seq, .. } => req_seq,
            _ => unreachable!(),
        };
        let Some(info) = self.by_seq.remove(&req_seq.0) else {
            self.stats.unknown_responses += 1;
            return;
        };
        let done_for = match info.owner {
            Owner::Host(id) => Some(id),
            Owner::Writeback {
                completes,
                then_fetch,
            } => {
                if let Some(id) = then_fetch {
                    let addr = self.slots[&id].addr;
                    self.push_req(Owner::Host(id), Self::read_req(addr, id), 0, ctx);
                }
                completes
            }
        };
        let Some(id) = done_for else { return };
        let Some(slot) = self.slots.get_mut(&id) else {
            self.stats.double_completions += 1;
            return;
        };
        slot.remote = Some(RemoteStamps {
            cn_tx: info.first_tx,
            stamps: r.stamps,
            cn_rx: r.cn_rx,
        });
        if let Body::ReadResp { data, .. } = r.body {
            slot.result = Some(data);
        }
        ctx.schedule(now + self.cfg.timing.ingress_ns, Ev::CnDone(id));
    }

    fn port(&mut self, ctx: &mut Ctx) {
        loop {
            let now = ctx.sched.now();
            let free = ctx.link.free_at();
            if free > now {
                self.arm_kick(ctx, free);
                return;
            }
            let data_ok = now >= self.paused_until;
            match self.ep.next(now, data_ok) {
                Next::Control(body) => {
                    self.ctrl_serial += 1;
                    let bytes = encode(&Frame::new(self.mac, self.mn, body)).expect("control encodes");
                    ctx.send(bytes, Some(FrameTag::control(self.ctrl_serial)), Stamps::default(), Ev::ToMn);
                }
                Next::Data(p) => {
                    let len = p.payload.body.command().wire_len();
                    match self.bucket.acquire(len, now).expect("bucket holds a full frame") {
                        Acquire::Granted => {}
                        Acquire::RetryAt(t) => {
                            self.ep.unpop(p);
                            self.arm_kick(ctx, t);
                            return;
                        }
                    }
                    let sent = self.ep.commit(&p, now);
                    if sent.first() {
                        self.by_seq.insert(
                            sent.seq.0,
                            FrameInfo {
                                owner: p.payload.owner,
                                first_tx: now,
                            },
                        );
                    }
                    let body = with_seq(&p.payload.body, sent.seq);
                    let bytes = encode(&Frame::new(self.mac, self.mn, body)).expect("request encodes");
                    self.stats.data_frames += 1;
                    self.stats.data_bytes += bytes.len() as u64;
                    ctx.send(
                        bytes,
                        Some(FrameTag::data(sent.seq, sent.serial, sent.attempt)),
                        Stamps::default(),
                        Ev::ToMn,
                    );
                    self.arm_timer(ctx);
                }
                Next::Wait(t) => {
                    self.arm_kick(ctx, t);
                    return;
                }
                Next::Idle => {
                    if !data_ok && self.ep.has_pending_output() {
                        let t = self.paused_until;
                        self.arm_kick(ctx, t);
                    }
                    return;
                }
            }
        }
    }
}
