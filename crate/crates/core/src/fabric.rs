//! Point-to-point link with serialization, fixed processing and propagation
//! delay, and seeded fault injection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::congctl::{gbps, Kbps};
use rand::RngCore;

use crate::sim::{splitmix64, RngStream, SimTime};
use crate::wire::{SeqNum, ETH_HEADER_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dir {
    /// Compute node to memory node.
    Up,
    /// Memory node to compute node.
    Down,
}

impl Dir {
    pub fn name(self) -> &'static str {
        match self {
            Dir::Up => "up",
            Dir::Down => "down",
        }
    }
}

impl fmt::Display for Dir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub rate_kbps: Kbps,
    pub propagation_ns: u64,
    /// Ethernet IP processing, request direction.
    pub processing_up_ns: u64,
    /// Ethernet IP processing, response direction.
    pub processing_down_ns: u64,
    /// Subject PFC frames to the fault injector as well.
    pub pfc_faults: bool,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            rate_kbps: gbps(100),
            propagation_ns: 20,
            processing_up_ns: 460,
            processing_down_ns: 460,
            pfc_faults: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultConfig {
    pub drop_probability: f64,
    pub corrupt_probability: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FabricError {
    #[error("link rate must be positive")]
    ZeroRate,
    #[error("fault probability {0} outside [0, 1]")]
    BadProbability(String),
    #[error("loss trace line {line}: {msg}")]
    Trace { line: usize, msg: String },
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), FabricError> {
        if self.rate_kbps == 0 {
            return Err(FabricError::ZeroRate);
        }
        Ok(())
    }

    pub fn processing_ns(&self, dir: Dir) -> u64 {
        match dir {
            Dir::Up => self.processing_up_ns,
            Dir::Down => self.processing_down_ns,
        }
    }

    /// Serialization time in picoseconds, rounded up.
    pub fn serialization_ps(&self, bytes: usize) -> u64 {
        let bits = bytes as u128 * 8;
        (bits * 1_000_000_000).div_ceil(self.rate_kbps as u128) as u64
    }
}

impl FaultConfig {
    pub fn validate(&self) -> Result<(), FabricError> {
        for p in [self.drop_probability, self.corrupt_probability] {
            if !(0.0..=1.0).contains(&p) {
                return Err(FabricError::BadProbability(p.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    Drop,
    Corrupt,
}

/// Deterministic faults keyed by direction and seq, applied to the first
/// transmission of the first frame carrying that seq.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LossTrace {
    entries: BTreeMap<(Dir, u16), Fault>,
}

impl LossTrace {
    /// Parses `DROP <seq> [up|down]` / `CORRUPT <seq> [up|down]` lines.
    pub fn parse(text: &str) -> Result<Self, FabricError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: &str| FabricError::Trace {
                line: i + 1,
                msg: msg.into(),
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let fault = match toks[0].to_ascii_uppercase().as_str() {
                "DROP" => Fault::Drop,
                "CORRUPT" => Fault::Corrupt,
                _ => return Err(err("expected DROP or CORRUPT")),
            };
            let seq: u16 = toks
                .get(1)
                .ok_or_else(|| err("missing seq"))?
                .parse()
                .map_err(|_| err("bad seq"))?;
            let dir = match toks.get(2).map(|s| s.to_ascii_lowercase()) {
                None => Dir::Up,
                Some(d) if d == "up" => Dir::Up,
                Some(d) if d == "down" => Dir::Down,
                Some(_) => return Err(err("direction must be up or down")),
            };
            if toks.len() > 3 {
                return Err(err("trailing tokens"));
            }
            entries.insert((dir, seq), fault);
        }
        Ok(Self { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn take(&mut self, dir: Dir, seq: SeqNum) -> Option<Fault> {
        self.entries.remove(&(dir, seq.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fate {
    Delivered,
    Corrupted,
    Dropped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transmission {
    /// When the first bit left the sender.
    pub start: SimTime,
    pub arrival: SimTime,
    pub fate: Fate,
}

/// Identifies a frame to the fault injector. Fates are a pure function of
/// (seed, direction, serial, attempt), so two runs that send the same logical
/// frames see the same losses even if their retransmissions differ.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameTag {
    pub seq: SeqNum,
    /// Unwrapped position of the frame in its sequence space.
    pub serial: u64,
    pub attempt: u32,
    /// Control frames draw from their own key space and ignore the trace.
    pub control: bool,
}

impl FrameTag {
    pub fn data(seq: SeqNum, serial: u64, attempt: u32) -> Self {
        Self {
            seq,
            serial,
            attempt,
            control: false,
        }
    }

    pub fn control(serial: u64) -> Self {
        Self {
            seq: SeqNum(0),
            serial,
            attempt: 0,
            control: true,
        }
    }

    pub fn first_attempt(&self) -> bool {
        self.attempt == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub frames: u64,
    pub bytes: u64,
    pub dropped: u64,
    pub corrupted: u64,
    pub pfc_frames: u64,
}

/// One direction of the link.
#[derive(Debug)]
pub struct Link {
    dir: Dir,
    cfg: LinkConfig,
    faults: FaultConfig,
    trace: LossTrace,
    busy_until_ps: u64,
    key: u64,
    pfc_serial: u64,
    stats: LinkStats,
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl Link {
    pub fn new(dir: Dir, cfg: LinkConfig, faults: FaultConfig, trace: LossTrace, seed: u64) -> Self {
        let label = match dir {
            Dir::Up => "fabric.up",
            Dir::Down => "fabric.down",
        };
        Self {
            dir,
            cfg,
            faults,
            trace,
            busy_until_ps: 0,
            key: RngStream::new(seed, label).next_u64(),
            pfc_serial: 0,
            stats: LinkStats::default(),
        }
    }

    pub fn dir(&self) -> Dir {
        self.dir
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    /// Earliest whole nanosecond at which a new frame may start.
    pub fn free_at(&self) -> SimTime {
        SimTime::from_ns(self.busy_until_ps / 1000)
    }

    fn hash(&self, tag: &FrameTag) -> u64 {
        let space = if tag.control { 0xC0 } else { 0xDA };
        splitmix64(self.key ^ splitmix64(tag.serial ^ (space << 56)) ^ splitmix64(tag.attempt as u64).rotate_left(17))
    }

    fn decide(&mut self, tag: Option<FrameTag>) -> (Fate, u64) {
        let Some(tag) = tag else {
            return (Fate::Delivered, 0);
        };
        let h = self.hash(&tag);
        let h2 = splitmix64(h);
        let drop = self.faults.drop_probability > 0.0 && unit(h) < self.faults.drop_probability;
        let corrupt =
            self.faults.corrupt_probability > 0.0 && unit(h2) < self.faults.corrupt_probability;
        let bit = splitmix64(h2);
        if tag.first_attempt() && !tag.control {
            match self.trace.take(self.dir, tag.seq) {
                Some(Fault::Drop) => return (Fate::Dropped, bit),
                Some(Fault::Corrupt) => return (Fate::Corrupted, bit),
                None => {}
            }
        }
        let fate = if drop {
            Fate::Dropped
        } else if corrupt {
            Fate::Corrupted
        } else {
            Fate::Delivered
        };
        (fate, bit)
    }

    /// Starts a frame no earlier than `now` and no earlier than the end of
    /// the previous frame. Corruption flips one bit past the command byte.
    /// `tag` is None for frames exempt from fault injection.
    pub fn transmit(&mut self, now: SimTime, bytes: &mut [u8], tag: Option<FrameTag>) -> Transmission {
        let start_ps = (now.ns() * 1000).max(self.busy_until_ps);
        let end_ps = start_ps + self.cfg.serialization_ps(bytes.len());
        self.busy_until_ps = end_ps;
        let arrival = SimTime::from_ns(end_ps.div_ceil(1000))
            + self.cfg.processing_ns(self.dir)
            + self.cfg.propagation_ns;
        let (fate, h) = self.decide(tag);
        match fate {
            Fate::Dropped => self.stats.dropped += 1,
            Fate::Corrupted => {
                self.stats.corrupted += 1;
                let lo = ETH_HEADER_LEN + 1;
                if bytes.len() > lo {
                    let bit = (h % ((bytes.len() - lo) * 8) as u64) as usize;
                    bytes[lo + bit / 8] ^= 1 << (bit % 8);
                }
            }
            Fate::Delivered => {}
        }
        self.stats.frames += 1;
        self.stats.bytes += bytes.len() as u64;
        Transmission {
            start: SimTime::from_ns(start_ps / 1000),
            arrival,
            fate,
        }
    }

    /// PFC path: serialization plus propagation, no contention, no faults
    /// unless configured.
    pub fn pfc_delay(&mut self, bytes: usize) -> (u64, Fate) {
        self.stats.pfc_frames += 1;
        let fate = if self.cfg.pfc_faults {
            self.pfc_serial += 1;
            let (f, _) = self.decide(Some(FrameTag::control(self.pfc_serial | 1 << 62)));
            if f == Fate::Corrupted {
                Fate::Dropped
            } else {
                f
            }
        } else {
            Fate::Delivered
        };
        (
            self.cfg.serialization_ps(bytes).div_ceil(1000) + self.cfg.propagation_ns,
            fate,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::decode;

    fn link(lc: LinkConfig, fc: FaultConfig, trace: &str) -> Link {
        Link::new(Dir::Up, lc, fc, LossTrace::parse(trace).unwrap(), 7)
    }

    fn tag(seq: u16) -> Option<FrameTag> {
        Some(FrameTag::data(SeqNum(seq), seq as u64, 0))
    }

    #[test]
    fn delay_arithmetic() {
        let lc = LinkConfig {
            propagation_ns: 500,
            processing_up_ns: 350,
            ..Default::default()
        };
        let mut l = link(lc, FaultConfig::default(), "");
        let mut b = vec![0u8; 93];
        let t = l.transmit(SimTime::ZERO, &mut b, tag(0));
        // 857.44 ns, rounded up to whole ns
        assert_eq!(t.arrival, SimTime::from_ns(858));
        assert_eq!(t.fate, Fate::Delivered);
    }

    #[test]
    fn back_to_back_frames_queue_on_the_wire() {
        let mut l = link(LinkConfig::default(), FaultConfig::default(), "");
        let mut b = vec![0u8; 93];
        let t0 = l.transmit(SimTime::ZERO, &mut b, tag(0));
        let t1 = l.transmit(SimTime::ZERO, &mut b, tag(1));
        assert_eq!(t1.start, SimTime::from_ns(7));
        assert!(t1.arrival > t0.arrival);
        // 100 frames take exactly 744 ns of wire time
        for i in 2..100 {
            l.transmit(SimTime::ZERO, &mut b, tag(i));
        }
        assert_eq!(l.busy_until_ps, 744_000);
    }

    #[test]
    fn drop_everything() {
        let fc = FaultConfig {
            drop_probability: 1.0,
            ..Default::default()
        };
        let mut l = link(LinkConfig::default(), fc, "");
        let mut b = vec![0u8; 30];
        for i in 0..50 {
            assert_eq!(l.transmit(SimTime::ZERO, &mut b, tag(i)).fate, Fate::Dropped);
        }
        let (d, fate) = l.pfc_delay(22);
        assert_eq!(fate, Fate::Delivered);
        assert_eq!(d, 2 + 20);
    }

    #[test]
    fn trace_corrupts_one_seq() {
        use crate::wire::{encode, Body, Frame, MacAddr};
        let mut l = link(LinkConfig::default(), FaultConfig::default(), "CORRUPT 5\n");
        for i in 0..10u16 {
            let f = Frame::new(
                MacAddr::default(),
                MacAddr::default(),
                Body::ReadReq {
                    seq: SeqNum(i),
                    arid: 0,
                    address: 64,
                },
            );
            let mut b = encode(&f).unwrap();
            let t = l.transmit(SimTime::ZERO, &mut b, tag(i));
            assert_eq!(t.fate == Fate::Corrupted, i == 5);
            assert_eq!(decode(&b).is_err(), i == 5);
        }
        // Retransmission of seq 5 is clean.
        let mut b = vec![0u8; 30];
        let t = l.transmit(
            SimTime::ZERO,
            &mut b,
            Some(FrameTag::data(SeqNum(5), 5, 1)),
        );
        assert_eq!(t.fate, Fate::Delivered);
    }

    #[test]
    fn trace_parsing() {
        let t = LossTrace::parse("DROP 3\nCORRUPT 4 down # note\n\n").unwrap();
        assert_eq!(t.entries.len(), 2);
        assert!(LossTrace::parse("LOSE 3").is_err());
        assert!(LossTrace::parse("DROP x").is_err());
        assert!(LossTrace::parse("DROP 3 sideways").is_err());
    }

    #[test]
    fn fault_streams_are_reproducible() {
        let fc = FaultConfig {
            drop_probability: 0.3,
            corrupt_probability: 0.1,
        };
        let run = || {
            let mut l = link(LinkConfig::default(), fc.clone(), "");
            let mut b = vec![0u8; 40];
            (0..1000)
                .map(|i| l.transmit(SimTime::ZERO, &mut b, tag(i)).fate)
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let drops = a.iter().filter(|f| **f == Fate::Dropped).count();
        assert!((240..360).contains(&drops), "{drops}");
    }

    #[test]
    fn fate_depends_on_identity_not_order() {
        let fc = FaultConfig {
            drop_probability: 0.5,
            corrupt_probability: 0.0,
        };
        let mut a = link(LinkConfig::default(), fc.clone(), "");
        let mut b = link(LinkConfig::default(), fc, "");
        let mut buf = vec![0u8; 40];
        let fwd: Vec<_> = (0..200u16)
            .map(|i| a.transmit(SimTime::ZERO, &mut buf, tag(i)).fate)
            .collect();
        let mut rev: Vec<_> = (0..200u16)
            .rev()
            .map(|i| b.transmit(SimTime::ZERO, &mut buf, tag(i)).fate)
            .collect();
        rev.reverse();
        assert_eq!(fwd, rev);
        let retry = a.transmit(SimTime::ZERO, &mut buf, Some(FrameTag::data(SeqNum(3), 3, 1)));
        let again = b.transmit(SimTime::ZERO, &mut buf, Some(FrameTag::data(SeqNum(3), 3, 1)));
        assert_eq!(retry.fate, again.fate);
    }
}
