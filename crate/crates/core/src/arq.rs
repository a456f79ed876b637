//! Sliding-window reliability: retry buffer, reorder buffer, control-frame
//! composition, and a Go-Back-N sender used as a comparison baseline.

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::sim::SimTime;
use crate::wire::{seq_cmp, Body, SeqNum, ACK_PRESENT, NAK_PRESENT, SACK_PRESENT};

pub const WINDOW: usize = 512;
pub const DEFAULT_RTO_NS: u64 = 20_000;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ArqError {
    #[error("retry buffer full")]
    WindowFull,
    #[error("recorded seq {got} but next is {expected}")]
    OutOfOrder { expected: SeqNum, got: SeqNum },
    #[error("seq {0} is not held")]
    UnknownSeq(SeqNum),
    #[error("seq {0} lies beyond the reorder window")]
    ReorderOverflow(SeqNum),
}

#[derive(Clone, Debug)]
struct Held<T> {
    payload: T,
    first_sent_at: SimTime,
    last_sent_at: SimTime,
    sack_marked: bool,
}

/// Retransmit decision for one SACK/NAK control frame.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SackOutcome {
    pub released: usize,
    pub retransmit: Vec<SeqNum>,
    /// Frames a Go-Back-N sender would resend for the same signal.
    pub gbn_equivalent: usize,
}

/// Transmit history keyed by a contiguous seq range `[base, next)`.
#[derive(Clone, Debug)]
pub struct RetryBuffer<T> {
    entries: VecDeque<Held<T>>,
    base: SeqNum,
    capacity: usize,
    last_sack: Option<SeqNum>,
}

impl<T: Clone> RetryBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self::starting_at(SeqNum(0), capacity)
    }

    pub fn starting_at(base: SeqNum, capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity),
            base,
            capacity,
            last_sack: None,
        }
    }

    pub fn base(&self) -> SeqNum {
        self.base
    }

    pub fn next_seq(&self) -> SeqNum {
        self.base.add(self.entries.len() as u16)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    fn index(&self, seq: SeqNum) -> Option<usize> {
        let d = self.base.distance_to(seq) as usize;
        (d < self.entries.len()).then_some(d)
    }

    pub fn contains(&self, seq: SeqNum) -> bool {
        self.index(seq).is_some()
    }

    pub fn get(&self, seq: SeqNum) -> Option<&T> {
        self.index(seq).map(|i| &self.entries[i].payload)
    }

    pub fn first_sent_at(&self, seq: SeqNum) -> Option<SimTime> {
        self.index(seq).map(|i| self.entries[i].first_sent_at)
    }

    pub fn record(&mut self, seq: SeqNum, payload: T, now: SimTime) -> Result<(), ArqError> {
        if self.is_full() {
            return Err(ArqError::WindowFull);
        }
        let expected = self.next_seq();
        if seq != expected {
            return Err(ArqError::OutOfOrder { expected, got: seq });
        }
        self.entries.push_back(Held {
            payload,
            first_sent_at: now,
            last_sent_at: now,
            sack_marked: false,
        });
        Ok(())
    }

    /// Releases everything up to and including `cum_ack`. Stale or
    /// out-of-window acks release nothing.
    pub fn on_ack(&mut self, cum_ack: SeqNum) -> usize {
        if seq_cmp(cum_ack, self.base) == Ordering::Less {
            return 0;
        }
        let n = self.base.distance_to(cum_ack) as usize + 1;
        if n > self.entries.len() {
            return 0;
        }
        self.entries.drain(..n);
        self.base = cum_ack.next();
        if let Some(s) = self.last_sack {
            if seq_cmp(s, self.base) == Ordering::Less {
                self.last_sack = None;
            }
        }
        n
    }

    /// Drops the oldest entry regardless of acknowledgement.
    pub fn evict_oldest(&mut self) -> Option<(SeqNum, T)> {
        let h = self.entries.pop_front()?;
        let seq = self.base;
        self.base = self.base.next();
        if self.last_sack == Some(seq) {
            self.last_sack = None;
        }
        Some((seq, h.payload))
    }

    pub fn on_sack_nak(
        &mut self,
        sack: Option<SeqNum>,
        nak: Option<SeqNum>,
        cum_ack: Option<SeqNum>,
        now: SimTime,
    ) -> Result<SackOutcome, ArqError> {
        let mut out = SackOutcome {
            released: cum_ack.map_or(0, |c| self.on_ack(c)),
            ..Default::default()
        };
        for s in [sack, nak].into_iter().flatten() {
            if !self.contains(s) {
                return Err(ArqError::UnknownSeq(s));
            }
        }
        let mut list: Vec<usize> = Vec::new();
        if let Some(s) = sack {
            let hi = self.index(s).unwrap();
            let lo = match self.last_sack.and_then(|p| self.index(p)) {
                Some(p) if p < hi => p + 1,
                Some(_) => hi,
                None => 0,
            };
            list.extend((lo..hi).filter(|i| !self.entries[*i].sack_marked));
            self.entries[hi].sack_marked = true;
            if self.last_sack.is_none_or(|p| seq_cmp(s, p) == Ordering::Greater) {
                self.last_sack = Some(s);
            }
        }
        if let Some(n) = nak {
            let i = self.index(n).unwrap();
            if !list.contains(&i) {
                list.push(i);
                list.sort_unstable();
            }
        }
        if let Some(first) = list.first() {
            out.gbn_equivalent = self.entries.len() - first;
        }
        for i in &list {
            self.entries[*i].last_sent_at = now;
        }
        out.retransmit = list
            .into_iter()
            .map(|i| self.base.add(i as u16))
            .collect();
        Ok(out)
    }

    /// Seqs whose last transmission is at least `rto` old, in seq order.
    pub fn on_timeout(&mut self, now: SimTime, rto_ns: u64) -> Vec<SeqNum> {
        let mut out = Vec::new();
        for (i, h) in self.entries.iter_mut().enumerate() {
            if h.last_sent_at + rto_ns <= now {
                h.last_sent_at = now;
                out.push(self.base.add(i as u16));
            }
        }
        out
    }

    /// Earliest time at which some entry becomes overdue.
    pub fn next_timeout(&self, rto_ns: u64) -> Option<SimTime> {
        self.entries.iter().map(|h| h.last_sent_at + rto_ns).min()
    }

    pub fn mark_resent(&mut self, seq: SeqNum, now: SimTime) {
        if let Some(i) = self.index(seq) {
            self.entries[i].last_sent_at = now;
        }
    }
}

/// Outcome of offering one received frame to a [`ReorderBuffer`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RxOutcome<T> {
    /// In-order frames ready for the consumer, oldest first.
    Deliver(Vec<(SeqNum, T)>),
    Stale,
    /// A missing seq was noticed. `buffered` is true when the triggering
    /// frame was held rather than discarded.
    GapDetected { nak: SeqNum, buffered: bool },
    /// Held behind an already reported gap.
    Buffered,
    Duplicate,
}

#[derive(Clone, Debug)]
pub struct ReorderBuffer<T> {
    expected: SeqNum,
    held: HashMap<u16, T>,
    capacity: usize,
    gap_reported_at: Option<SeqNum>,
}

impl<T> ReorderBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            expected: SeqNum(0),
            held: HashMap::new(),
            capacity,
            gap_reported_at: None,
        }
    }

    pub fn expected(&self) -> SeqNum {
        self.expected
    }

    pub fn held(&self) -> usize {
        self.held.len()
    }

    /// Offers a frame. A frame that failed its CRC is passed with `crc_ok`
    /// false and `frame` None; its seq is unreadable, so callers pass the
    /// expected seq.
    pub fn on_frame(
        &mut self,
        seq: SeqNum,
        crc_ok: bool,
        frame: Option<T>,
    ) -> Result<RxOutcome<T>, ArqError> {
        if !crc_ok {
            self.gap_reported_at = Some(self.expected);
            return Ok(RxOutcome::GapDetected {
                nak: seq,
                buffered: false,
            });
        }
        let Some(frame) = frame else {
            return Ok(RxOutcome::Duplicate);
        };
        match seq_cmp(seq, self.expected) {
            Ordering::Less => Ok(RxOutcome::Stale),
            Ordering::Equal => {
                let mut out = vec![(seq, frame)];
                self.expected = seq.next();
                while let Some(f) = self.held.remove(&self.expected.0) {
                    out.push((self.expected, f));
                    self.expected = self.expected.next();
                }
                if self
                    .gap_reported_at
                    .is_some_and(|g| seq_cmp(g, self.expected) == Ordering::Less)
                {
                    self.gap_reported_at = None;
                }
                Ok(RxOutcome::Deliver(out))
            }
            Ordering::Greater => {
                if self.expected.distance_to(seq) as usize >= self.capacity {
                    return Err(ArqError::ReorderOverflow(seq));
                }
                if self.held.contains_key(&seq.0) {
                    return Ok(RxOutcome::Duplicate);
                }
                self.held.insert(seq.0, frame);
                if self.gap_reported_at != Some(self.expected) {
                    self.gap_reported_at = Some(self.expected);
                    Ok(RxOutcome::GapDetected {
                        nak: self.expected,
                        buffered: true,
                    })
                } else {
                    Ok(RxOutcome::Buffered)
                }
            }
        }
    }
}

/// Control information waiting to be sent back to the peer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PendingControl {
    pub nak: Option<SeqNum>,
    pub sack: Option<SeqNum>,
    pub ack: Option<SeqNum>,
}

impl PendingControl {
    /// Records the receiver-side signal carried by an rx outcome. Every held
    /// frame becomes a SACK mark so the sender resends only the holes.
    pub fn note<T>(&mut self, seq: SeqNum, outcome: &RxOutcome<T>) {
        match outcome {
            RxOutcome::GapDetected { nak, buffered } => {
                self.nak = Some(*nak);
                if *buffered {
                    self.sack = Some(seq);
                }
            }
            RxOutcome::Buffered => self.sack = Some(seq),
            _ => {}
        }
    }

    /// Builds the next control frame body, if one is due, and clears what it
    /// carries. A NAK waits until a later frame supplies a SACK mark.
    pub fn compose(&mut self) -> Option<Body> {
        if let Some(sack) = self.sack.take() {
            let mut flags = SACK_PRESENT;
            let nak = self.nak.take();
            if nak.is_some() {
                flags |= NAK_PRESENT;
            }
            let ack = self.ack.take();
            if ack.is_some() {
                flags |= ACK_PRESENT;
            }
            return Some(Body::SackNak {
                flags,
                sack_seq: sack,
                nak_seq: nak.unwrap_or_default(),
                cum_ack: ack.unwrap_or_default(),
            });
        }
        self.ack.take().map(|cum_ack| Body::Ack { cum_ack })
    }
}

/// Splits a SackNak flags byte into its optional fields.
pub fn sack_nak_fields(
    flags: u8,
    sack: SeqNum,
    nak: SeqNum,
    cum_ack: SeqNum,
) -> (Option<SeqNum>, Option<SeqNum>, Option<SeqNum>) {
    (
        (flags & SACK_PRESENT != 0).then_some(sack),
        (flags & NAK_PRESENT != 0).then_some(nak),
        (flags & ACK_PRESENT != 0).then_some(cum_ack),
    )
}

/// Go-Back-N sender: a NAK resends everything from the lost seq onward.
#[derive(Clone, Debug)]
pub struct GoBackN {
    base: SeqNum,
    next: SeqNum,
}

impl Default for GoBackN {
    fn default() -> Self {
        Self::new()
    }
}

impl GoBackN {
    pub fn new() -> Self {
        Self {
            base: SeqNum(0),
            next: SeqNum(0),
        }
    }

    pub fn send(&mut self) -> SeqNum {
        let s = self.next;
        self.next = s.next();
        s
    }

    pub fn outstanding(&self) -> u16 {
        self.base.distance_to(self.next)
    }

    pub fn on_ack(&mut self, cum_ack: SeqNum) {
        if seq_cmp(cum_ack, self.base) != Ordering::Less
            && seq_cmp(cum_ack, self.next) == Ordering::Less
        {
            self.base = cum_ack.next();
        }
    }

    pub fn on_nak(&mut self, nak: SeqNum) -> Vec<SeqNum> {
        if seq_cmp(nak, self.base) == Ordering::Less || seq_cmp(nak, self.next) != Ordering::Less {
            return Vec::new();
        }
        let n = nak.distance_to(self.next);
        (0..n).map(|i| nak.add(i)).collect()
    }

    pub fn on_timeout(&self) -> Vec<SeqNum> {
        (0..self.outstanding()).map(|i| self.base.add(i)).collect()
    }
}
