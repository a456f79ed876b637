//! Six-phase PFC-driven rate control and the token-bucket shaper.
//!
//! Rates are integer kbps so the halving, 3/4, 7/8 and midpoint rules stay
//! exact for every rate reachable from 100 Gbps in practice; division
//! rounds toward zero.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

pub type Kbps = u64;

pub const KBPS_PER_GBPS: Kbps = 1_000_000;

pub const fn gbps(g: u64) -> Kbps {
    g * KBPS_PER_GBPS
}

pub fn kbps_to_gbps(r: Kbps) -> f64 {
    r as f64 / KBPS_PER_GBPS as f64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcParams {
    pub t1_ns: u64,
    pub t2_ns: u64,
    pub t3_ns: u64,
    pub t4_ns: u64,
    pub t5_ns: u64,
    pub t6_ns: u64,
    pub increment_kbps: Kbps,
    pub speedup_count_max: u8,
    pub line_rate_kbps: Kbps,
    pub min_rate_kbps: Kbps,
}

impl Default for CcParams {
    fn default() -> Self {
        Self {
            t1_ns: 50_000,
            t2_ns: 10_000,
            t3_ns: 11_000,
            t4_ns: 200_000,
            t5_ns: 40_000,
            t6_ns: 20_000,
            increment_kbps: gbps(1),
            speedup_count_max: 5,
            line_rate_kbps: gbps(100),
            min_rate_kbps: gbps(1),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CcParamError {
    #[error("timer {0} must be positive")]
    ZeroTimer(&'static str),
    #[error("min_rate must be positive and not exceed line_rate")]
    BadRates,
    #[error("t2 must be shorter than t1")]
    DuplicateWindowTooLong,
    #[error("speedup_count_max must be positive")]
    ZeroSpeedups,
}

impl CcParams {
    pub fn validate(&self) -> Result<(), CcParamError> {
        for (name, v) in [
            ("t1", self.t1_ns),
            ("t2", self.t2_ns),
            ("t3", self.t3_ns),
            ("t4", self.t4_ns),
            ("t5", self.t5_ns),
            ("t6", self.t6_ns),
        ] {
            if v == 0 {
                return Err(CcParamError::ZeroTimer(name));
            }
        }
        if self.min_rate_kbps == 0 || self.min_rate_kbps > self.line_rate_kbps {
            return Err(CcParamError::BadRates);
        }
        if self.t2_ns >= self.t1_ns {
            return Err(CcParamError::DuplicateWindowTooLong);
        }
        if self.speedup_count_max == 0 {
            return Err(CcParamError::ZeroSpeedups);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    StableRunning,
    PfcResponse,
    FastRecovery,
    FastRecoveryPfcResponse,
    IncrementExploration,
    IncrementGuessing,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::StableRunning => "stable_running",
            Phase::PfcResponse => "pfc_response",
            Phase::FastRecovery => "fast_recovery",
            Phase::FastRecoveryPfcResponse => "fast_recovery_pfc_response",
            Phase::IncrementExploration => "increment_exploration",
            Phase::IncrementGuessing => "increment_guessing",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CcState {
    pub phase: Phase,
    pub cr: Kbps,
    pub tr: Kbps,
    pub deadline: Option<SimTime>,
    pub last_pfc_at: Option<SimTime>,
    pub speedups_done: u8,
    pub rate_before_increment: Kbps,
}

/// What a PFC did to the controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PfcEffect {
    Applied,
    Duplicate,
}

#[derive(Clone, Debug)]
pub struct CongestionControl {
    params: CcParams,
    state: CcState,
}

impl CongestionControl {
    /// Starts in StableRunning at line rate with the exploration timer armed.
    pub fn new(params: CcParams, now: SimTime) -> Self {
        let state = CcState {
            phase: Phase::StableRunning,
            cr: params.line_rate_kbps,
            tr: params.line_rate_kbps,
            deadline: Some(now + params.t4_ns),
            last_pfc_at: None,
            speedups_done: 0,
            rate_before_increment: params.line_rate_kbps,
        };
        Self { params, state }
    }

    /// Same, but starting from `rate` instead of line rate.
    pub fn with_rate(params: CcParams, rate: Kbps, now: SimTime) -> Self {
        let mut cc = Self::new(params, now);
        let r = rate.clamp(cc.params.min_rate_kbps, cc.params.line_rate_kbps);
        cc.state.cr = r;
        cc.state.tr = r;
        cc.state.rate_before_increment = r;
        cc
    }

    pub fn params(&self) -> &CcParams {
        &self.params
    }

    pub fn state(&self) -> &CcState {
        &self.state
    }

    pub fn current_rate(&self) -> Kbps {
        self.state.cr
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn deadline(&self) -> Option<SimTime> {
        self.state.deadline
    }

    fn floor(&self, r: Kbps) -> Kbps {
        r.max(self.params.min_rate_kbps)
    }

    pub fn on_pfc(&mut self, now: SimTime) -> PfcEffect {
        let p = &self.params;
        if let Some(last) = self.state.last_pfc_at {
            if now.since(last) < p.t2_ns {
                return PfcEffect::Duplicate;
            }
        }
        let (t1, t6) = (p.t1_ns, p.t6_ns);
        let s = self.state.clone();
        let mut n = s.clone();
        match s.phase {
            Phase::StableRunning | Phase::IncrementGuessing => {
                n.tr = s.cr;
                n.cr = self.floor(s.cr / 2);
                n.phase = Phase::PfcResponse;
                n.deadline = Some(now + t1);
            }
            Phase::PfcResponse => {
                n.cr = self.floor(s.cr / 2);
                n.deadline = Some(now + t1);
            }
            Phase::FastRecovery => {
                n.tr = s.cr / 8 * 7 + (s.cr % 8) * 7 / 8;
                n.cr = self.floor(s.cr / 4 * 3 + (s.cr % 4) * 3 / 4);
                n.phase = Phase::FastRecoveryPfcResponse;
                n.deadline = Some(now + t1);
            }
            Phase::FastRecoveryPfcResponse => {
                n.cr = self.floor(s.cr / 4 * 3 + (s.cr % 4) * 3 / 4);
                n.deadline = Some(now + t1);
            }
            Phase::IncrementExploration => {
                n.cr = self.floor(s.cr.saturating_sub(self.params.increment_kbps));
                n.phase = Phase::IncrementGuessing;
                n.deadline = Some(now + t6);
            }
        }
        n.last_pfc_at = Some(now);
        self.state = n;
        PfcEffect::Applied
    }

    /// Applies a timer expiry. Returns false when `now` is not the armed deadline.
    pub fn on_deadline(&mut self, now: SimTime) -> bool {
        if self.state.deadline != Some(now) {
            return false;
        }
        let p = self.params.clone();
        let st = &mut self.state;
        match st.phase {
            Phase::PfcResponse | Phase::FastRecoveryPfcResponse => {
                st.phase = Phase::FastRecovery;
                st.speedups_done = 0;
                st.deadline = Some(now + p.t3_ns);
            }
            Phase::FastRecovery => {
                st.cr = ((st.cr + st.tr) / 2).min(p.line_rate_kbps);
                st.speedups_done += 1;
                if st.speedups_done >= p.speedup_count_max {
                    st.phase = Phase::StableRunning;
                    st.deadline = Some(now + p.t4_ns);
                } else {
                    st.deadline = Some(now + p.t3_ns);
                }
            }
            Phase::StableRunning => {
                st.phase = Phase::IncrementExploration;
                st.rate_before_increment = st.cr;
                st.deadline = Some(now + p.t5_ns);
            }
            Phase::IncrementExploration => {
                st.cr = (st.cr + p.increment_kbps).min(p.line_rate_kbps);
                if st.cr >= p.line_rate_kbps {
                    st.phase = Phase::StableRunning;
                    st.deadline = Some(now + p.t4_ns);
                } else {
                    st.deadline = Some(now + p.t5_ns);
                }
            }
            Phase::IncrementGuessing => {
                st.phase = Phase::StableRunning;
                st.deadline = Some(now + p.t4_ns);
            }
        }
        true
    }
}

/// One row of the rate trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RateSample {
    pub time: SimTime,
    pub phase: Phase,
    pub cr: Kbps,
    pub tr: Kbps,
}

impl RateSample {
    pub fn of(cc: &CongestionControl, time: SimTime) -> Self {
        Self {
            time,
            phase: cc.phase(),
            cr: cc.state.cr,
            tr: cc.state.tr,
        }
    }

    pub const CSV_HEADER: &'static str = "time_ns,phase,cr_mbps,tr_mbps";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.time.ns(),
            self.phase,
            fmt_mbps(self.cr),
            fmt_mbps(self.tr)
        )
    }
}

fn fmt_mbps(k: Kbps) -> String {
    if k.is_multiple_of(1000) {
        format!("{}", k / 1000)
    } else {
        format!("{}.{:03}", k / 1000, k % 1000)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("frame of {bytes} bytes exceeds bucket capacity of {capacity_bytes} bytes")]
    FrameLargerThanBucket { bytes: usize, capacity_bytes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Acquire {
    Granted,
    RetryAt(SimTime),
}

/// Token bucket; one token unit is a microbit (kbps × ns).
#[derive(Clone, Debug)]
pub struct TokenBucket {
    capacity: u128,
    tokens: u128,
    rate: Kbps,
    last_refill: SimTime,
}

const UBITS_PER_BYTE: u128 = 8 * 1_000_000;

impl TokenBucket {
    pub fn new(capacity_bytes: usize, rate: Kbps, now: SimTime) -> Self {
        let capacity = capacity_bytes as u128 * UBITS_PER_BYTE;
        Self {
            capacity,
            tokens: capacity,
            rate,
            last_refill: now,
        }
    }

    pub fn capacity_bytes(&self) -> usize {
        (self.capacity / UBITS_PER_BYTE) as usize
    }

    pub fn rate(&self) -> Kbps {
        self.rate
    }

    pub fn tokens_bits(&self) -> f64 {
        self.tokens as f64 / 1e6
    }

    fn refill(&mut self, now: SimTime) {
        if now > self.last_refill {
            let dt = now.since(self.last_refill) as u128;
            self.tokens = (self.tokens + dt * self.rate as u128).min(self.capacity);
            self.last_refill = now;
        }
    }

    /// Changes the fill rate; tokens up to `now` accrue at the old rate.
    pub fn set_rate(&mut self, rate: Kbps, now: SimTime) {
        self.refill(now);
        self.rate = rate;
    }

    pub fn empty(&mut self, now: SimTime) {
        self.refill(now);
        self.tokens = 0;
    }

    pub fn acquire(&mut self, bytes: usize, now: SimTime) -> Result<Acquire, TokenError> {
        let need = bytes as u128 * UBITS_PER_BYTE;
        if need > self.capacity {
            return Err(TokenError::FrameLargerThanBucket {
                bytes,
                capacity_bytes: self.capacity_bytes(),
            });
        }
        self.refill(now);
        if self.tokens >= need {
            self.tokens -= need;
            return Ok(Acquire::Granted);
        }
        let short = need - self.tokens;
        let rate = self.rate.max(1) as u128;
        let wait = short.div_ceil(rate) as u64;
        Ok(Acquire::RetryAt(now + wait.max(1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn us(u: u64) -> SimTime {
        SimTime::from_us(u)
    }

    fn cc() -> CongestionControl {
        CongestionControl::new(CcParams::default(), SimTime::ZERO)
    }

    #[test]
    fn first_pfc_halves_and_records_target() {
        let mut c = cc();
        assert_eq!(c.on_pfc(us(0)), PfcEffect::Applied);
        let s = c.state();
        assert_eq!(s.phase, Phase::PfcResponse);
        assert_eq!(s.tr, gbps(100));
        assert_eq!(s.cr, gbps(50));
        assert_eq!(s.deadline, Some(us(50)));
    }

    #[test]
    fn duplicate_within_t2_is_ignored_then_next_halves() {
        let mut c = cc();
        c.on_pfc(us(0));
        assert_eq!(c.on_pfc(us(5)), PfcEffect::Duplicate);
        assert_eq!(c.current_rate(), gbps(50));
        assert_eq!(c.on_pfc(us(20)), PfcEffect::Applied);
        assert_eq!(c.current_rate(), gbps(25));
        assert_eq!(c.deadline(), Some(us(70)));
    }

    #[test]
    fn fast_recovery_pfc_uses_seven_eighths_and_three_quarters() {
        let mut c = cc();
        c.state.phase = Phase::FastRecovery;
        c.state.cr = gbps(75);
        c.on_pfc(us(0));
        assert_eq!(c.state().tr, 65_625_000);
        assert_eq!(c.state().cr, 56_250_000);
        assert_eq!(c.phase(), Phase::FastRecoveryPfcResponse);
    }

    #[test]
    fn five_speedups_converge_below_target() {
        let mut c = cc();
        c.on_pfc(us(0));
        assert!(c.on_deadline(us(50)));
        assert_eq!(c.phase(), Phase::FastRecovery);
        let mut seen = vec![];
        let mut t = us(61);
        for _ in 0..5 {
            assert!(c.on_deadline(t));
            seen.push(c.current_rate());
            t = t + 11_000;
        }
        assert_eq!(
            seen,
            vec![75_000_000, 87_500_000, 93_750_000, 96_875_000, 98_437_500]
        );
        assert_eq!(c.phase(), Phase::StableRunning);
        assert_eq!(c.deadline(), Some(us(61 + 44 + 200)));
    }

    #[test]
    fn stable_dwell_enters_exploration_and_climbs() {
        let mut c = cc();
        c.state.cr = gbps(41);
        assert!(c.on_deadline(us(200)));
        assert_eq!(c.phase(), Phase::IncrementExploration);
        for k in 1..=3 {
            assert!(c.on_deadline(us(200 + 40 * k)));
        }
        assert_eq!(c.current_rate(), gbps(44));
    }

    #[test]
    fn exploration_stops_at_line_rate() {
        let mut c = cc();
        c.state.cr = gbps(99);
        c.on_deadline(us(200));
        c.on_deadline(us(240));
        assert_eq!(c.current_rate(), gbps(100));
        assert_eq!(c.phase(), Phase::StableRunning);
        assert_eq!(c.deadline(), Some(us(440)));
    }

    #[test]
    fn exploration_pfc_rolls_back_then_guessing_settles() {
        let mut c = cc();
        c.state.cr = gbps(41);
        c.on_deadline(us(200));
        c.on_deadline(us(240));
        assert_eq!(c.current_rate(), gbps(42));
        c.on_pfc(us(250));
        assert_eq!(c.current_rate(), gbps(41));
        assert_eq!(c.phase(), Phase::IncrementGuessing);
        assert_eq!(c.deadline(), Some(us(270)));
        assert!(c.on_deadline(us(270)));
        assert_eq!(c.phase(), Phase::StableRunning);
    }

    #[test]
    fn guessing_pfc_records_rate_and_halves() {
        let mut c = cc();
        c.state.phase = Phase::IncrementGuessing;
        c.state.cr = gbps(40);
        c.on_pfc(us(0));
        assert_eq!(c.state().tr, gbps(40));
        assert_eq!(c.current_rate(), gbps(20));
        assert_eq!(c.phase(), Phase::PfcResponse);
    }

    #[test]
    fn rate_never_drops_below_floor() {
        let mut c = cc();
        for k in 0..20 {
            c.on_pfc(us(20 * k));
        }
        assert_eq!(c.current_rate(), gbps(1));
    }

    #[test]
    fn stale_deadline_is_ignored() {
        let mut c = cc();
        assert!(!c.on_deadline(us(199)));
        assert_eq!(c.phase(), Phase::StableRunning);
    }

    #[test]
    fn bucket_grant_and_retry() {
        let t0 = SimTime::ZERO;
        let mut b = TokenBucket::new(186, gbps(100), t0);
        assert_eq!(b.acquire(93, t0).unwrap(), Acquire::Granted);
        b.empty(t0);
        // 744 bits at 100 Gbps is 7.44 ns, rounded up to whole ns
        assert_eq!(b.acquire(93, t0).unwrap(), Acquire::RetryAt(SimTime::from_ns(8)));
        assert_eq!(b.acquire(93, SimTime::from_ns(8)).unwrap(), Acquire::Granted);
        assert!(b.acquire(500, t0).is_err());
    }

    #[test]
    fn bucket_refill_is_piecewise() {
        let mut b = TokenBucket::new(10_000, gbps(10), SimTime::ZERO);
        b.empty(SimTime::ZERO);
        b.set_rate(gbps(20), SimTime::from_ns(100));
        // 100 ns at 10 Gbps = 1000 bits, 100 ns at 20 Gbps = 2000 bits
        let _ = b.acquire(1, SimTime::from_ns(200));
        assert!((b.tokens_bits() - (3000.0 - 8.0)).abs() < 1e-9);
    }

    #[test]
    fn rate_csv_row() {
        let c = cc();
        assert_eq!(
            RateSample::of(&c, SimTime::from_ns(5)).csv_row(),
            "5,stable_running,100000,100000"
        );
    }
}
