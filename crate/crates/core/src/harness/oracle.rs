//! Flat-map replay oracle. Host ops are replayed in issue order against a
//! plain address map; every read result and the final memory image must
//! match.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::cache::Op;
use crate::cn::OpRecord;
use crate::wire::{LineData, LINE_BYTES};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail(Divergence),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("pass"),
            Verdict::Fail(d) => write!(f, "fail: {d}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Divergence {
    /// A read returned something other than the latest write.
    Read { req_id: u64, addr: u64 },
    /// A read never completed.
    Missing { req_id: u64, addr: u64 },
    /// The final image disagrees at this line.
    Image { addr: u64 },
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Read { req_id, addr } => write!(f, "read req {req_id} at {addr:#x}"),
            Divergence::Missing { req_id, addr } => {
                write!(f, "read req {req_id} at {addr:#x} has no result")
            }
            Divergence::Image { addr } => write!(f, "final image at {addr:#x}"),
        }
    }
}

const ZERO: LineData = [0; LINE_BYTES];

/// Replays `ops`, optionally leaving out the write with id `skip` (used as a
/// negative control).
pub fn verify_with(ops: &[OpRecord], image: &BTreeMap<u64, LineData>, skip: Option<u64>) -> Verdict {
    let mut mem: BTreeMap<u64, LineData> = BTreeMap::new();
    let mut first_bad_read = None;
    for o in ops {
        match o.op {
            Op::Write => {
                if Some(o.req_id) != skip {
                    mem.insert(o.addr, o.data.expect("writes carry data"));
                }
            }
            Op::Read => {
                let want = mem.get(&o.addr).unwrap_or(&ZERO);
                let d = match o.data {
                    None => Some(Divergence::Missing {
                        req_id: o.req_id,
                        addr: o.addr,
                    }),
                    Some(got) if &got != want => Some(Divergence::Read {
                        req_id: o.req_id,
                        addr: o.addr,
                    }),
                    Some(_) => None,
                };
                if let (None, Some(d)) = (&first_bad_read, d) {
                    first_bad_read = Some(d);
                }
            }
        }
    }
    if let Some(d) = first_bad_read {
        return Verdict::Fail(d);
    }
    // Absent lines read as zero on both sides.
    let keys: std::collections::BTreeSet<u64> = mem.keys().chain(image.keys()).copied().collect();
    for addr in keys {
        if mem.get(&addr).unwrap_or(&ZERO) != image.get(&addr).unwrap_or(&ZERO) {
            return Verdict::Fail(Divergence::Image { addr });
        }
    }
    Verdict::Pass
}

pub fn verify(ops: &[OpRecord], image: &BTreeMap<u64, LineData>) -> Verdict {
    verify_with(ops, image, None)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct ArtifactError {
    pub line: usize,
    pub msg: String,
}

fn data_hex(d: &Option<LineData>) -> String {
    d.map_or_else(|| "-".into(), hex::encode)
}

fn parse_data(s: &str, line: usize) -> Result<Option<LineData>, ArtifactError> {
    if s == "-" {
        return Ok(None);
    }
    let mut d = ZERO;
    hex::decode_to_slice(s, &mut d).map_err(|e| ArtifactError {
        line,
        msg: e.to_string(),
    })?;
    Ok(Some(d))
}

fn parse_addr(s: &str, line: usize) -> Result<u64, ArtifactError> {
    u64::from_str_radix(s.trim_start_matches("0x"), 16).map_err(|_| ArtifactError {
        line,
        msg: format!("bad address {s}"),
    })
}

/// One op per line: `req_id R|W 0xaddr hexdata`, `-` for a missing read.
pub fn format_ops(ops: &[OpRecord]) -> String {
    let mut s = String::new();
    for o in ops {
        let op = match o.op {
            Op::Read => 'R',
            Op::Write => 'W',
        };
        s.push_str(&format!("{} {op} {:#x} {}\n", o.req_id, o.addr, data_hex(&o.data)));
    }
    s
}

pub fn parse_ops(text: &str) -> Result<Vec<OpRecord>, ArtifactError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let n = i + 1;
        let err = |m: &str| ArtifactError {
            line: n,
            msg: m.into(),
        };
        if l.trim().is_empty() {
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 4 {
            return Err(err("expected 4 fields"));
        }
        let op = match t[1] {
            "R" => Op::Read,
            "W" => Op::Write,
            _ => return Err(err("op must be R or W")),
        };
        let data = parse_data(t[3], n)?;
        if op == Op::Write && data.is_none() {
            return Err(err("write without data"));
        }
        out.push(OpRecord {
            req_id: t[0].parse().map_err(|_| err("bad req_id"))?,
            op,
            addr: parse_addr(t[2], n)?,
            data,
        });
    }
    Ok(out)
}

/// One line per nonzero memory line: `0xaddr hexdata`.
pub fn format_image(img: &BTreeMap<u64, LineData>) -> String {
    let mut s = String::new();
    for (a, d) in img {
        if d != &ZERO {
            s.push_str(&format!("{a:#x} {}\n", hex::encode(d)));
        }
    }
    s
}

pub fn parse_image(text: &str) -> Result<BTreeMap<u64, LineData>, ArtifactError> {
    let mut out = BTreeMap::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let mut t = l.split_whitespace();
        let (Some(a), Some(d), None) = (t.next(), t.next(), t.next()) else {
            return Err(ArtifactError {
                line: i + 1,
                msg: "expected address and data".into(),
            });
        };
        let data = parse_data(d, i + 1)?.expect("image lines carry data");
        out.insert(parse_addr(a, i + 1)?, data);
    }
    Ok(out)
}
