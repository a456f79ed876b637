//! One side of a reliable channel: a sequenced sender with its retry buffer,
//! a receiver with its reorder buffer, and the control frames passed
//! between them. Both nodes own one.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::arq::{
    sack_nak_fields, PendingControl, ReorderBuffer, RetryBuffer, RxOutcome, WINDOW,
};
use crate::sim::SimTime;
use crate::wire::{seq_cmp, Body, SeqNum, ACK_PRESENT, NAK_PRESENT};

/// Retransmission policy of both halves of an endpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArqMode {
    #[default]
    Selective,
    /// Baseline: out-of-order frames are discarded and a NAK resends
    /// everything from the missing seq onward.
    GoBackN,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ArqCounters {
    /// Frames resent in response to SACK/NAK.
    pub signal_retx: u64,
    /// Frames a Go-Back-N sender would have resent for the same signals.
    pub gbn_equivalent: u64,
    pub rto_retx: u64,
    pub fast_retx: u64,
    pub acks_sent: u64,
    pub sack_naks_sent: u64,
    pub crc_errors: u64,
    pub stale: u64,
    pub duplicates: u64,
    pub gaps: u64,
    pub discarded: u64,
}

impl ArqCounters {
    pub fn merge(&mut self, o: &ArqCounters) {
        self.signal_retx += o.signal_retx;
        self.gbn_equivalent += o.gbn_equivalent;
        self.rto_retx += o.rto_retx;
        self.fast_retx += o.fast_retx;
        self.acks_sent += o.acks_sent;
        self.sack_naks_sent += o.sack_naks_sent;
        self.crc_errors += o.crc_errors;
        self.stale += o.stale;
        self.duplicates += o.duplicates;
        self.gaps += o.gaps;
        self.discarded += o.discarded;
    }

    /// Every retransmitted frame, whatever triggered it.
    pub fn total_retx(&self) -> u64 {
        self.signal_retx + self.rto_retx + self.fast_retx
    }
}

/// Data taken from the send queues, not yet committed to the wire.
#[derive(Clone, Debug)]
pub struct Pending<P> {
    /// None for a frame that has never been sent.
    pub seq: Option<SeqNum>,
    pub payload: P,
}

pub enum Next<P> {
    Control(Body),
    Data(Pending<P>),
    /// Nothing sendable until the given time.
    Wait(SimTime),
    Idle,
}

/// Identity of one transmission of a data frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sent {
    pub seq: SeqNum,
    pub serial: u64,
    pub attempt: u32,
}

impl Sent {
    pub fn first(&self) -> bool {
        self.attempt == 0
    }
}

#[derive(Debug)]
pub struct Endpoint<P, R> {
    mode: ArqMode,
    pub tx: RetryBuffer<P>,
    pub rx: ReorderBuffer<R>,
    pub pend: PendingControl,
    fresh: VecDeque<(SimTime, P)>,
    retx: VecDeque<SeqNum>,
    retx_set: HashSet<u16>,
    ctrl: VecDeque<Body>,
    rto_ns: u64,
    recorded: u64,
    attempts: BTreeMap<u64, u32>,
    gbn_nak_for: Option<SeqNum>,
    pub counters: ArqCounters,
}

impl<P: Clone, R> Endpoint<P, R> {
    pub fn new(mode: ArqMode, rto_ns: u64) -> Self {
        Self {
            mode,
            tx: RetryBuffer::new(WINDOW),
            rx: ReorderBuffer::new(WINDOW),
            pend: PendingControl::default(),
            fresh: VecDeque::new(),
            retx: VecDeque::new(),
            retx_set: HashSet::new(),
            ctrl: VecDeque::new(),
            rto_ns,
            recorded: 0,
            attempts: BTreeMap::new(),
            gbn_nak_for: None,
            counters: ArqCounters::default(),
        }
    }

    pub fn mode(&self) -> ArqMode {
        self.mode
    }

    pub fn rto_ns(&self) -> u64 {
        self.rto_ns
    }

    /// Queues a new frame that may leave no earlier than `ready_at`.
    /// Ready times must be nondecreasing.
    pub fn push_fresh(&mut self, ready_at: SimTime, payload: P) {
        debug_assert!(self.fresh.back().is_none_or(|(t, _)| *t <= ready_at));
        self.fresh.push_back((ready_at, payload));
    }

    pub fn fresh_len(&self) -> usize {
        self.fresh.len()
    }

    /// Frames held or queued for first transmission.
    pub fn backlog(&self) -> usize {
        self.tx.len() + self.fresh.len()
    }

    pub fn has_pending_output(&self) -> bool {
        !self.fresh.is_empty() || !self.retx.is_empty() || !self.ctrl.is_empty()
    }

    /// True when nothing is queued, held, or awaiting acknowledgement.
    pub fn quiescent(&self) -> bool {
        self.tx.is_empty() && !self.has_pending_output()
    }

    fn serial_of(&self, seq: SeqNum) -> u64 {
        self.recorded - seq.distance_to(self.tx.next_seq()) as u64
    }

    fn queue_retx(&mut self, seqs: impl IntoIterator<Item = SeqNum>) -> u64 {
        let mut n = 0;
        for s in seqs {
            if self.retx_set.insert(s.0) {
                self.retx.push_back(s);
                n += 1;
            }
        }
        n
    }

    /// Re-sends one held frame ahead of new data. Used when the peer shows
    /// it is still waiting for a frame it was already sent.
    pub fn fast_retransmit(&mut self, seq: SeqNum) -> bool {
        if self.tx.contains(seq) && self.queue_retx([seq]) == 1 {
            self.counters.fast_retx += 1;
            true
        } else {
            false
        }
    }

    /// Next thing to put on the wire. Control frames always go first; data
    /// only when `data_allowed`.
    pub fn next(&mut self, now: SimTime, data_allowed: bool) -> Next<P> {
        if let Some(c) = self.ctrl.pop_front() {
            return Next::Control(c);
        }
        if !data_allowed {
            return Next::Idle;
        }
        while let Some(seq) = self.retx.pop_front() {
            self.retx_set.remove(&seq.0);
            if let Some(p) = self.tx.get(seq) {
                return Next::Data(Pending {
                    seq: Some(seq),
                    payload: p.clone(),
                });
            }
        }
        match self.fresh.front() {
            Some((t, _)) if *t > now => Next::Wait(*t),
            Some(_) if self.tx.is_full() => Next::Idle,
            Some(_) => {
                let (_, payload) = self.fresh.pop_front().unwrap();
                Next::Data(Pending { seq: None, payload })
            }
            None => Next::Idle,
        }
    }

    /// Returns an uncommitted item to the head of its queue.
    pub fn unpop(&mut self, item: Pending<P>) {
        match item.seq {
            Some(s) => {
                self.retx_set.insert(s.0);
                self.retx.push_front(s);
            }
            None => self.fresh.push_front((SimTime::ZERO, item.payload)),
        }
    }

    /// Seq the next new frame will receive.
    pub fn next_seq(&self) -> SeqNum {
        self.tx.next_seq()
    }

    /// Commits an item to the wire, assigning a seq to new frames.
    pub fn commit(&mut self, item: &Pending<P>, now: SimTime) -> Sent {
        match item.seq {
            Some(seq) => {
                self.tx.mark_resent(seq, now);
                let serial = self.serial_of(seq);
                let a = self.attempts.entry(serial).or_insert(0);
                *a += 1;
                Sent {
                    seq,
                    serial,
                    attempt: *a,
                }
            }
            None => {
                let seq = self.tx.next_seq();
                self.tx
                    .record(seq, item.payload.clone(), now)
                    .expect("window checked in next()");
                let serial = self.recorded;
                self.recorded += 1;
                self.attempts.insert(serial, 0);
                Sent {
                    seq,
                    serial,
                    attempt: 0,
                }
            }
        }
    }

    fn released(&mut self, n: usize) -> usize {
        if n > 0 {
            let base_serial = self.recorded - self.tx.len() as u64;
            self.attempts = self.attempts.split_off(&base_serial);
        }
        n
    }

    /// Applies a cumulative acknowledgement; returns frames released.
    pub fn on_cum_ack(&mut self, cum_ack: SeqNum) -> usize {
        let n = self.tx.on_ack(cum_ack);
        self.released(n)
    }

    /// Applies an incoming Ack or SackNak; returns frames released.
    pub fn on_control(&mut self, body: &Body, now: SimTime) -> usize {
        match *body {
            Body::Ack { cum_ack } => self.on_cum_ack(cum_ack),
            Body::SackNak {
                flags,
                sack_seq,
                nak_seq,
                cum_ack,
            } => {
                let (sack, nak, ack) = sack_nak_fields(flags, sack_seq, nak_seq, cum_ack);
                let released = ack.map_or(0, |a| self.on_cum_ack(a));
                // References to frames already released are old news.
                let sack = sack.filter(|s| self.tx.contains(*s));
                let nak = nak.filter(|s| self.tx.contains(*s));
                match self.mode {
                    ArqMode::Selective => {
                        if sack.is_none() && nak.is_none() {
                            return released;
                        }
                        let out = self
                            .tx
                            .on_sack_nak(sack, nak, None, now)
                            .expect("references filtered above");
                        self.counters.gbn_equivalent += out.gbn_equivalent as u64;
                        self.counters.signal_retx += self.queue_retx(out.retransmit);
                    }
                    ArqMode::GoBackN => {
                        if let Some(n) = nak {
                            let k = n.distance_to(self.tx.next_seq());
                            let all: Vec<_> = (0..k).map(|i| n.add(i)).collect();
                            self.counters.gbn_equivalent += all.len() as u64;
                            self.counters.signal_retx += self.queue_retx(all);
                        }
                    }
                }
                released
            }
            _ => 0,
        }
    }

    fn push_ctrl(&mut self, b: Body) {
        match b {
            Body::Ack { .. } => self.counters.acks_sent += 1,
            _ => self.counters.sack_naks_sent += 1,
        }
        self.ctrl.push_back(b);
    }

    fn flush_control(&mut self) {
        while let Some(b) = self.pend.compose() {
            self.push_ctrl(b);
        }
    }

    fn gbn_gap(&mut self) {
        let exp = self.rx.expected();
        if self.gbn_nak_for != Some(exp) {
            self.gbn_nak_for = Some(exp);
            self.counters.gaps += 1;
            self.push_ctrl(Body::SackNak {
                flags: NAK_PRESENT | ACK_PRESENT,
                sack_seq: SeqNum(0),
                nak_seq: exp,
                cum_ack: exp.prev(),
            });
        }
    }

    /// A data frame failed its CRC; its seq cannot be trusted.
    pub fn on_corrupt(&mut self) {
        self.counters.crc_errors += 1;
        if self.mode == ArqMode::GoBackN {
            self.gbn_gap();
            return;
        }
        let expected = self.rx.expected();
        let out = self
            .rx
            .on_frame(expected, false, None)
            .expect("corrupt frames never overflow");
        if matches!(out, RxOutcome::GapDetected { .. }) {
            self.counters.gaps += 1;
        }
        self.pend.note(expected, &out);
        self.flush_control();
    }

    /// Offers a good data frame to the receiver and queues the resulting
    /// control frames. Frames beyond the reorder window are dropped as if
    /// lost.
    pub fn on_data(&mut self, seq: SeqNum, payload: R) -> RxOutcome<R> {
        let exp = self.rx.expected();
        if self.mode == ArqMode::GoBackN && seq_cmp(seq, exp) == Ordering::Greater {
            self.counters.discarded += 1;
            self.gbn_gap();
            return RxOutcome::Buffered;
        }
        let out = match self.rx.on_frame(seq, true, Some(payload)) {
            Ok(o) => o,
            Err(_) => {
                self.counters.discarded += 1;
                return RxOutcome::Duplicate;
            }
        };
        match &out {
            RxOutcome::Deliver(v) => {
                let last = v.last().expect("nonempty delivery").0;
                self.pend.ack = Some(last);
                let exp = self.rx.expected();
                if self
                    .pend
                    .nak
                    .is_some_and(|n| seq_cmp(n, exp) == Ordering::Less)
                {
                    self.pend.nak = None;
                }
            }
            RxOutcome::Stale => {
                self.counters.stale += 1;
                self.pend.ack = Some(self.rx.expected().prev());
            }
            RxOutcome::GapDetected { .. } => {
                self.counters.gaps += 1;
                self.pend.note(seq, &out);
            }
            RxOutcome::Buffered => self.pend.note(seq, &out),
            RxOutcome::Duplicate => self.counters.duplicates += 1,
        }
        self.flush_control();
        out
    }

    /// Queues retransmission of every frame whose last send is at least one
    /// RTO old. Returns when the next timeout could fire.
    pub fn on_timer(&mut self, now: SimTime) -> Option<SimTime> {
        let due = self.tx.on_timeout(now, self.rto_ns);
        self.counters.rto_retx += self.queue_retx(due);
        self.next_timeout()
    }

    pub fn next_timeout(&self) -> Option<SimTime> {
        self.tx.next_timeout(self.rto_ns)
    }
}
