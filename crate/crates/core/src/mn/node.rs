//! Memory node: receive FIFO, in-order request service through translation
//! and DRAM, and the response side of the reliable channel.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::arq::{RxOutcome, WINDOW};
use crate::endpoint::{ArqCounters, ArqMode, Endpoint, Next};
use crate::fabric::FrameTag;
use crate::mn::dram::{Dram, DramConfig};
use crate::mn::fifo::{FifoConfig, FifoStats, RxFifo};
use crate::mn::gmm::{Gmm, DEFAULT_PAGE_BYTES};
use crate::mn::translate::{TranslateError, TranslateStats, Translator, DEFAULT_TLB_ENTRIES};
use crate::sim::SimTime;
use crate::system::{Alarm, Ctx, Ev, Packet, Stamps};
use crate::wire::{
    decode, encode, peek_command, Body, Command, DecodeError, Frame, LineData, MacAddr, SeqNum,
    LINE_BYTES,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnConfig {
    pub pool_bytes: u64,
    pub page_bytes: u64,
    pub tlb_entries: usize,
    /// MAC to FIFO: header parse.
    pub parse_ns: u64,
    /// One FIFO entry is taken per interval.
    pub serve_interval_ns: u64,
    pub build_read_ns: u64,
    pub build_write_ns: u64,
    /// Check every TLB hit against a page-table walk.
    pub dual_path: bool,
    pub fifo: FifoConfig,
    pub dram: DramConfig,
}

impl Default for MnConfig {
    fn default() -> Self {
        Self {
            pool_bytes: 1 << 30,
            page_bytes: DEFAULT_PAGE_BYTES,
            tlb_entries: DEFAULT_TLB_ENTRIES,
            parse_ns: 8,
            serve_interval_ns: 4,
            build_read_ns: 24,
            build_write_ns: 4,
            dual_path: false,
            fifo: FifoConfig::default(),
            dram: DramConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MnStats {
    pub reads: u64,
    pub writes: u64,
    pub translation_faults: u64,
    pub dropped_control: u64,
    pub stale_requests: u64,
    pub stall_deferrals: u64,
}

/// A response held for (re)transmission.
#[derive(Clone, Debug)]
pub struct RespItem {
    pub body: Body,
    pub stamps: Stamps,
}

/// A request as held by the reorder buffer.
#[derive(Clone, Debug)]
pub struct ReqIn {
    pub body: Body,
    pub mn_rx: SimTime,
}

#[derive(Debug)]
struct FifoEntry {
    ready_at: SimTime,
    mn_rx: SimTime,
    frame: Option<Frame>,
}

fn req_seq(b: &Body) -> SeqNum {
    match *b {
        Body::ReadReq { seq, .. } | Body::WriteReq { seq, .. } => seq,
        _ => unreachable!("not a request"),
    }
}

fn resp_req_seq(b: &Body) -> SeqNum {
    match *b {
        Body::ReadResp { req_seq, .. } | Body::WriteResp { req_seq, .. } => req_seq,
        _ => unreachable!("not a response"),
    }
}

/// Fills in the per-transmission sequence fields of a response.
fn stamp_resp(b: &Body, seq: SeqNum, ack: SeqNum) -> Body {
    let mut b = b.clone();
    match &mut b {
        Body::ReadResp {
            resp_seq, cum_ack, ..
        }
        | Body::WriteResp {
            resp_seq, cum_ack, ..
        } => {
            *resp_seq = seq;
            *cum_ack = ack;
        }
        _ => unreachable!("not a response"),
    }
    b
}

pub struct MnNode {
    mac: MacAddr,
    cn: MacAddr,
    cfg: MnConfig,
    translator: Translator,
    dram: Dram,
    fifo: RxFifo<FifoEntry>,
    pub ep: Endpoint<RespItem, ReqIn>,
    pool: BTreeMap<u64, LineData>,
    resp_of_req: HashMap<u16, SeqNum>,
    last_emit: SimTime,
    next_serve_at: SimTime,
    serve_alarm: Alarm,
    kick_alarm: Alarm,
    timer_alarm: Alarm,
    recheck_alarm: Alarm,
    ctrl_serial: u64,
    stats: MnStats,
}

impl MnNode {
    pub fn new(cfg: MnConfig, mac: MacAddr, cn: MacAddr, mode: ArqMode, rto_ns: u64) -> Self {
        let mut translator = Translator::new(Gmm::new(cfg.pool_bytes, cfg.page_bytes), cfg.tlb_entries);
        translator.dual_path = cfg.dual_path;
        Self {
            mac,
            cn,
            translator,
            dram: Dram::new(cfg.dram.clone()),
            fifo: RxFifo::new(cfg.fifo.clone()),
            ep: Endpoint::new(mode, rto_ns),
            pool: BTreeMap::new(),
            resp_of_req: HashMap::new(),
            last_emit: SimTime::ZERO,
            next_serve_at: SimTime::ZERO,
            serve_alarm: Alarm::default(),
            kick_alarm: Alarm::default(),
            timer_alarm: Alarm::default(),
            recheck_alarm: Alarm::default(),
            ctrl_serial: 0,
            stats: MnStats::default(),
            cfg,
        }
    }

    pub fn translator(&self) -> &Translator {
        &self.translator
    }

    pub fn translator_mut(&mut self) -> &mut Translator {
        &mut self.translator
    }

    pub fn pool(&self) -> &BTreeMap<u64, LineData> {
        &self.pool
    }

    pub fn stats(&self) -> MnStats {
        self.stats
    }

    pub fn fifo_stats(&self) -> FifoStats {
        self.fifo.stats()
    }

    pub fn fifo_len(&self) -> usize {
        self.fifo.len()
    }

    pub fn translate_stats(&self) -> TranslateStats {
        self.translator.stats()
    }

    pub fn arq(&self) -> ArqCounters {
        self.ep.counters
    }

    pub fn dram_accesses(&self) -> u64 {
        self.dram.accesses()
    }

    pub fn handle(&mut self, ev: Ev, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        match ev {
            Ev::ToMn(p) => self.on_arrival(p, ctx),
            Ev::MnServe => {
                self.serve_alarm.fired(now);
                self.serve(ctx);
            }
            Ev::MnPortKick => {
                self.kick_alarm.fired(now);
                self.port(ctx);
            }
            Ev::MnTimer => {
                self.timer_alarm.fired(now);
                self.ep.on_timer(now);
                self.arm_timer(ctx);
                self.port(ctx);
            }
            Ev::MnPfcRecheck => {
                self.recheck_alarm.fired(now);
                if self.fifo.recheck(now) {
                    self.send_pfc(ctx);
                }
                self.arm_recheck(ctx);
            }
            other => unreachable!("mn got {other:?}"),
        }
    }

    fn arm_serve(&mut self, ctx: &mut Ctx, t: SimTime) {
        if self.serve_alarm.want(t) {
            ctx.schedule(t, Ev::MnServe);
        }
    }

    fn arm_kick(&mut self, ctx: &mut Ctx, t: SimTime) {
        if self.kick_alarm.want(t) {
            ctx.schedule(t, Ev::MnPortKick);
        }
    }

    fn arm_timer(&mut self, ctx: &mut Ctx) {
        if let Some(t) = self.ep.next_timeout() {
            if self.timer_alarm.want(t) {
                ctx.schedule(t, Ev::MnTimer);
            }
        }
    }

    fn arm_recheck(&mut self, ctx: &mut Ctx) {
        if let Some(t) = self.fifo.next_recheck() {
            if self.recheck_alarm.want(t) {
                ctx.schedule(t, Ev::MnPfcRecheck);
            }
        }
    }

    fn send_pfc(&mut self, ctx: &mut Ctx) {
        let f = Frame::new(
            self.mac,
            self.cn,
            Body::Pfc {
                class: 0,
                pause_quanta: self.cfg.fifo.pause_quanta,
            },
        );
        let len = encode(&f).expect("pfc encodes").len();
        let (delay, fate) = ctx.link.pfc_delay(len);
        if fate == crate::fabric::Fate::Delivered {
            let now = ctx.sched.now();
            ctx.schedule(
                now + delay,
                Ev::PfcArrive {
                    quanta: self.cfg.fifo.pause_quanta,
                },
            );
        }
    }

    fn on_arrival(&mut self, p: Packet, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        let cmd = peek_command(&p.bytes);
        let decoded = decode(&p.bytes);
        let is_req = matches!(cmd, Some(Command::ReadReq | Command::WriteReq));
        match decoded {
            Ok(f) if !is_req => {
                if self.ep.on_control(&f.body, now) > 0 {
                    self.arm_serve(ctx, now);
                }
                self.port(ctx);
            }
            Ok(_) | Err(DecodeError::CrcError { .. }) if is_req => {
                let entry = FifoEntry {
                    ready_at: now + self.cfg.parse_ns,
                    mn_rx: now,
                    frame: decoded.ok(),
                };
                // Overruns drop the frame; the sender recovers it.
                if let Ok(true) = self.fifo.enqueue(entry, now) {
                    self.send_pfc(ctx);
                }
                self.arm_recheck(ctx);
                self.arm_serve(ctx, now + self.cfg.parse_ns);
            }
            _ => self.stats.dropped_control += 1,
        }
    }

    fn serve(&mut self, ctx: &mut Ctx) {
        let now = ctx.sched.now();
        let Some(front) = self.fifo_front_ready() else {
            return;
        };
        if front > now {
            self.arm_serve(ctx, front);
            return;
        }
        if now < self.next_serve_at {
            self.arm_serve(ctx, self.next_serve_at);
            return;
        }
        if self.dram.stalled(now) {
            self.stats.stall_deferrals += 1;
            self.arm_serve(ctx, self.dram.defer(now));
            return;
        }
        if self.ep.backlog() >= WINDOW {
            // Resumed when the peer acknowledges responses.
            return;
        }
        let entry = self.fifo.dequeue().expect("front checked");
        self.next_serve_at = now + self.cfg.serve_interval_ns;
        match entry.frame {
            None => self.ep.on_corrupt(),
            Some(f) => {
                let seq = req_seq(&f.body);
                let req = ReqIn {
                    body: f.body,
                    mn_rx: entry.mn_rx,
                };
                match self.ep.on_data(seq, req) {
                    RxOutcome::Deliver(v) => {
                        for (_, r) in v {
                            self.execute(r, now, ctx);
                        }
                    }
                    RxOutcome::Stale => {
                        self.stats.stale_requests += 1;
                        if let Some(rs) = self.resp_of_req.get(&seq.0).copied() {
                            let held = self.ep.tx.get(rs).map(|h| resp_req_seq(&h.body));
                            if held == Some(seq) {
                                self.ep.fast_retransmit(rs);
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        self.port(ctx);
        if !self.fifo.is_empty() {
            self.arm_serve(ctx, self.next_serve_at);
        }
    }

    fn fifo_front_ready(&self) -> Option<SimTime> {
        self.fifo.front().map(|e| e.ready_at)
    }

    fn execute(&mut self, r: ReqIn, now: SimTime, ctx: &mut Ctx) {
        let addr = match r.body {
            Body::ReadReq { address, .. } | Body::WriteReq { address, .. } => address,
            _ => unreachable!(),
        };
        let tr = match self.translator.translate(self.cn, addr) {
            Ok(t) => t,
            Err(TranslateError::TranslationFault { .. }) | Err(TranslateError::Gmm(_)) => {
                self.stats.translation_faults += 1;
                return;
            }
        };
        // A TLB miss walks the in-pool page table: one extra DRAM access.
        let start = if tr.tlb_hit {
            now
        } else {
            now + self.cfg.dram.t_access_ns
        };
        let done = self.dram.schedule(start, tr.mpmem_addr);
        let line = tr.mpmem_addr - tr.mpmem_addr % LINE_BYTES as u64;
        let seq = req_seq(&r.body);
        let (body, build) = match r.body {
            Body::ReadReq { .. } => {
                self.stats.reads += 1;
                let data = self.pool.get(&line).copied().unwrap_or([0; LINE_BYTES]);
                (
                    Body::ReadResp {
                        resp_seq: SeqNum(0),
                        req_seq: seq,
                        cum_ack: SeqNum(0),
                        address: addr,
                        data,
                    },
                    self.cfg.build_read_ns,
                )
            }
            Body::WriteReq { awid, data, .. } => {
                self.stats.writes += 1;
                self.pool.insert(line, data);
                (
                    Body::WriteResp {
                        resp_seq: SeqNum(0),
                        req_seq: seq,
                        cum_ack: SeqNum(0),
                        awid,
                    },
                    self.cfg.build_write_ns,
                )
            }
            _ => unreachable!(),
        };
        let emit = (done + build).max(self.last_emit);
        self.last_emit = emit;
        self.ep.push_fresh(
            emit,
            RespItem {
                body,
                stamps: Stamps {
                    mn_rx: r.mn_rx,
                    dram_done: done,
                    mn_tx: SimTime::ZERO,
                },
            },
        );
        self.arm_kick(ctx, emit);
    }

    fn port(&mut self, ctx: &mut Ctx) {
        loop {
            let now = ctx.sched.now();
            let free = ctx.link.free_at();
            if free > now {
                self.arm_kick(ctx, free);
                return;
            }
            match self.ep.next(now, true) {
                Next::Control(body) => {
                    self.ctrl_serial += 1;
                    let f = Frame::new(self.mac, self.cn, body);
                    let bytes = encode(&f).expect("control encodes");
                    ctx.send(bytes, Some(FrameTag::control(self.ctrl_serial)), Stamps::default(), Ev::ToCn);
                }
                Next::Data(p) => {
                    let sent = self.ep.commit(&p, now);
                    let ack = self.ep.rx.expected().prev();
                    let body = stamp_resp(&p.payload.body, sent.seq, ack);
                    if sent.first() {
                        self.resp_of_req.insert(resp_req_seq(&body).0, sent.seq);
                    }
                    let f = Frame::new(self.mac, self.cn, body);
                    let bytes = encode(&f).expect("response encodes");
                    let stamps = Stamps {
                        mn_tx: now,
                        ..p.payload.stamps
                    };
                    ctx.send(
                        bytes,
                        Some(FrameTag::data(sent.seq, sent.serial, sent.attempt)),
                        stamps,
                        Ev::ToCn,
                    );
                    self.arm_timer(ctx);
                }
                Next::Wait(t) => {
                    self.arm_kick(ctx, t);
                    return;
                }
                Next::Idle => return,
            }
        }
    }
}
