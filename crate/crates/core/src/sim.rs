//! Deterministic discrete-event engine.
//!
//! Virtual time is an integer nanosecond count. Events with equal fire times
//! dispatch in insertion order, so a run is a pure function of its inputs and
//! seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::fmt::Write as _;
use std::ops::{Add, Sub};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Nanoseconds per clock cycle of the 250 MHz FPGA fabric.
pub const NS_PER_CYCLE: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us.saturating_mul(1_000))
    }

    pub const fn from_cycles(cycles: u64) -> Self {
        SimTime(cycles.saturating_mul(NS_PER_CYCLE))
    }

    pub const fn ns(self) -> u64 {
        self.0
    }

    pub fn us_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    /// Nanoseconds elapsed since `earlier`, or zero if `earlier` is later.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, ns: u64) -> SimTime {
        SimTime(self.0.saturating_add(ns))
    }
}

impl Sub<u64> for SimTime {
    type Output = SimTime;

    fn sub(self, ns: u64) -> SimTime {
        SimTime(self.0.saturating_sub(ns))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Identifies the component an event is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Target(pub &'static str);

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

/// Payloads name themselves for the event trace.
pub trait PayloadKind {
    fn kind(&self) -> &'static str;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

#[derive(Debug)]
pub struct Event<E> {
    pub fire_at: SimTime,
    pub seq_no: u64,
    pub target: Target,
    pub payload: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq_no == other.seq_no
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // Reversed so the max-heap pops the earliest (fire_at, seq_no).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq_no.cmp(&self.seq_no))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule at {fire_at} which is before now ({now})")]
    SchedulingInPast { fire_at: SimTime, now: SimTime },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub processed: u64,
    pub final_time: SimTime,
}

pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<E>>,
    processed: u64,
    trace: Option<String>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            processed: 0,
            trace: None,
        }
    }

    /// Records `time_ns\ttarget\tpayload_kind` for every dispatched event.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(String::new);
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.trace.as_mut().map(std::mem::take)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: Target,
        payload: E,
    ) -> Result<EventId, SimError> {
        if fire_at < self.now {
            return Err(SimError::SchedulingInPast {
                fire_at,
                now: self.now,
            });
        }
        let seq_no = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_at,
            seq_no,
            target,
            payload,
        });
        Ok(EventId(seq_no))
    }

    /// Schedules `delay_ns` after the current time; never fails.
    pub fn schedule_in(&mut self, delay_ns: u64, target: Target, payload: E) -> EventId {
        let at = self.now + delay_ns;
        self.schedule(at, target, payload)
            .expect("relative schedule is never in the past")
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.fire_at)
    }

    /// Pops the next event due at or before `t_end`, advancing `now` to it.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<Event<E>>
    where
        E: PayloadKind,
    {
        if self.queue.peek()?.fire_at > t_end {
            return None;
        }
        let ev = self.queue.pop()?;
        debug_assert!(ev.fire_at >= self.now);
        self.now = ev.fire_at;
        self.processed += 1;
        if let Some(trace) = self.trace.as_mut() {
            let _ = writeln!(
                trace,
                "{}\t{}\t{}",
                ev.fire_at.ns(),
                ev.target,
                ev.payload.kind()
            );
        }
        Some(ev)
    }

    /// Moves the clock forward without dispatching; used when a run ends
    /// before its horizon.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Dispatches every event with `fire_at <= t_end`, then sets `now` to
    /// `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> RunStats
    where
        E: PayloadKind,
        F: FnMut(&mut Self, Event<E>),
    {
        let mut processed = 0;
        while let Some(ev) = self.pop_due(t_end) {
            processed += 1;
            handler(self, ev);
        }
        self.advance_to(t_end);
        RunStats {
            processed,
            final_time: self.now,
        }
    }
}

/// Seeded random stream owned by a single consumer.
///
/// Streams are derived from `(master_seed, label)` so adding a new consumer
/// never perturbs the draws of existing ones.
#[derive(Clone, Debug)]
pub struct RngStream {
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, label: &str) -> Self {
        let mut seed = [0u8; 32];
        let mut state = splitmix64(master_seed ^ fnv1a(label.as_bytes()));
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self {
            label: label.to_owned(),
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform draw in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && (p >= 1.0 || self.unit() < p)
    }

    /// Uniform draw in [0, n); `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        // Rejection sampling keeps the draw unbiased and platform independent.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
