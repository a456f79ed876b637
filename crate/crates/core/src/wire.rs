//! Custom Ethernet frame formats exchanged between compute and memory nodes.
//!
//! Every frame starts with a 14-byte Ethernet header (destination MAC, source
//! MAC, ethertype) followed by a one-byte command and the variant body. All
//! multi-byte fields are big-endian. A CRC-32 (IEEE 802.3) over header and
//! body is appended, also big-endian. Stated frame lengths exclude the CRC.
//!
//! | command | variant   | body after command                                  | length |
//! |---------|-----------|-----------------------------------------------------|--------|
//! | 0x01    | ReadReq   | seq(2) arid(2) address(6)                           | 25     |
//! | 0x02    | WriteReq  | seq(2) awid(2) address(6) data(64)                  | 89     |
//! | 0x03    | ReadResp  | resp_seq(2) req_seq(2) cum_ack(2) address(6) data(64)| 91    |
//! | 0x04    | WriteResp | resp_seq(2) req_seq(2) cum_ack(2) awid(2)           | 23     |
//! | 0x05    | Ack       | cum_ack(2)                                          | 17     |
//! | 0x06    | SackNak   | flags(1) sack(2) nak(2) cum_ack(2)                  | 22     |
//! | 0x07    | Pfc       | class(1) pause_quanta(2)                            | 18     |

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

pub const ETHERTYPE: u16 = 0x88B5;
pub const ETH_HEADER_LEN: usize = 14;
pub const CRC_LEN: usize = 4;
pub const LINE_BYTES: usize = 64;
pub const MAX_ADDRESS: u64 = (1 << 48) - 1;

pub type LineData = [u8; LINE_BYTES];

pub const SACK_PRESENT: u8 = 0b001;
pub const NAK_PRESENT: u8 = 0b010;
pub const ACK_PRESENT: u8 = 0b100;

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub fn to_u64(self) -> u64 {
        self.0.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b))
    }

    pub fn from_u64(v: u64) -> Self {
        let b = v.to_be_bytes();
        MacAddr([b[2], b[3], b[4], b[5], b[6], b[7]])
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

/// 16-bit sequence number with serial-number comparison.
///
/// Comparisons are meaningful only while the two values are less than 2^15
/// apart; windows in this crate never exceed 512.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct SeqNum(pub u16);

impl SeqNum {
    pub fn next(self) -> SeqNum {
        SeqNum(self.0.wrapping_add(1))
    }

    pub fn prev(self) -> SeqNum {
        SeqNum(self.0.wrapping_sub(1))
    }

    pub fn add(self, n: u16) -> SeqNum {
        SeqNum(self.0.wrapping_add(n))
    }

    /// Forward distance from `self` to `later`, modulo 2^16.
    pub fn distance_to(self, later: SeqNum) -> u16 {
        later.0.wrapping_sub(self.0)
    }

    pub fn serial_cmp(self, other: SeqNum) -> Ordering {
        seq_cmp(self, other)
    }

    pub fn precedes(self, other: SeqNum) -> bool {
        seq_cmp(self, other) == Ordering::Less
    }
}

impl fmt::Display for SeqNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// RFC 1982-style comparison of two sequence numbers.
pub fn seq_cmp(a: SeqNum, b: SeqNum) -> Ordering {
    let d = a.0.wrapping_sub(b.0) as i16;
    d.cmp(&0)
}

#[derive(Clone, PartialEq, Eq)]
pub enum Body {
    ReadReq {
        seq: SeqNum,
        arid: u16,
        address: u64,
    },
    WriteReq {
        seq: SeqNum,
        awid: u16,
        address: u64,
        data: LineData,
    },
    ReadResp {
        resp_seq: SeqNum,
        req_seq: SeqNum,
        cum_ack: SeqNum,
        address: u64,
        data: LineData,
    },
    WriteResp {
        resp_seq: SeqNum,
        req_seq: SeqNum,
        cum_ack: SeqNum,
        awid: u16,
    },
    Ack {
        cum_ack: SeqNum,
    },
    SackNak {
        flags: u8,
        sack_seq: SeqNum,
        nak_seq: SeqNum,
        cum_ack: SeqNum,
    },
    Pfc {
        class: u8,
        pause_quanta: u16,
    },
}

impl fmt::Debug for Body {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe().replace('\n', " "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    ReadReq = 0x01,
    WriteReq = 0x02,
    ReadResp = 0x03,
    WriteResp = 0x04,
    Ack = 0x05,
    SackNak = 0x06,
    Pfc = 0x07,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::ReadReq,
        Command::WriteReq,
        Command::ReadResp,
        Command::WriteResp,
        Command::Ack,
        Command::SackNak,
        Command::Pfc,
    ];

    pub fn from_byte(b: u8) -> Option<Command> {
        Command::ALL.into_iter().find(|c| *c as u8 == b)
    }

    /// Encoded length excluding CRC.
    pub const fn frame_len(self) -> usize {
        match self {
            Command::ReadReq => 25,
            Command::WriteReq => 89,
            Command::ReadResp => 91,
            Command::WriteResp => 23,
            Command::Ack => 17,
            Command::SackNak => 22,
            Command::Pfc => 18,
        }
    }

    pub const fn wire_len(self) -> usize {
        self.frame_len() + CRC_LEN
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::ReadReq => "read_req",
            Command::WriteReq => "write_req",
            Command::ReadResp => "read_resp",
            Command::WriteResp => "write_resp",
            Command::Ack => "ack",
            Command::SackNak => "sack_nak",
            Command::Pfc => "pfc",
        }
    }
}

impl Body {
    pub fn command(&self) -> Command {
        match self {
            Body::ReadReq { .. } => Command::ReadReq,
            Body::WriteReq { .. } => Command::WriteReq,
            Body::ReadResp { .. } => Command::ReadResp,
            Body::WriteResp { .. } => Command::WriteResp,
            Body::Ack { .. } => Command::Ack,
            Body::SackNak { .. } => Command::SackNak,
            Body::Pfc { .. } => Command::Pfc,
        }
    }

    /// Field listing, one `name=value` per line, used by the golden corpus.
    pub fn describe(&self) -> String {
        fn hex(d: &LineData) -> String {
            d.iter().map(|b| format!("{b:02x}")).collect()
        }
        match self {
            Body::ReadReq { seq, arid, address } => {
                format!("command=read_req\nseq={seq}\narid={arid}\naddress={address:#x}")
            }
            Body::WriteReq {
                seq,
                awid,
                address,
                data,
            } => format!(
                "command=write_req\nseq={seq}\nawid={awid}\naddress={address:#x}\ndata={}",
                hex(data)
            ),
            Body::ReadResp {
                resp_seq,
                req_seq,
                cum_ack,
                address,
                data,
            } => format!(
                "command=read_resp\nresp_seq={resp_seq}\nreq_seq={req_seq}\ncum_ack={cum_ack}\naddress={address:#x}\ndata={}",
                hex(data)
            ),
            Body::WriteResp {
                resp_seq,
                req_seq,
                cum_ack,
                awid,
            } => format!(
                "command=write_resp\nresp_seq={resp_seq}\nreq_seq={req_seq}\ncum_ack={cum_ack}\nawid={awid}"
            ),
            Body::Ack { cum_ack } => format!("command=ack\ncum_ack={cum_ack}"),
            Body::SackNak {
                flags,
                sack_seq,
                nak_seq,
                cum_ack,
            } => format!(
                "command=sack_nak\nflags={flags:#05b}\nsack_seq={sack_seq}\nnak_seq={nak_seq}\ncum_ack={cum_ack}"
            ),
            Body::Pfc {
                class,
                pause_quanta,
            } => format!("command=pfc\nclass={class}\npause_quanta={pause_quanta}"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Frame {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub body: Body,
}

impl Frame {
    pub fn new(src: MacAddr, dst: MacAddr, body: Body) -> Self {
        Self { dst, src, body }
    }

    pub fn command(&self) -> Command {
        self.body.command()
    }

    pub fn describe(&self) -> String {
        format!("dst={}\nsrc={}\n{}", self.dst, self.src, self.body.describe())
    }
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum EncodeError {
    #[error("field {field} value {value:#x} exceeds its wire width")]
    FieldOverflow { field: &'static str, value: u64 },
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum DecodeError {
    #[error("frame truncated: {len} bytes")]
    Truncated { len: usize },
    #[error("crc mismatch: computed {computed:#010x}, carried {carried:#010x}")]
    CrcError { computed: u32, carried: u32 },
    #[error("unknown command byte {0:#04x}")]
    UnknownCommand(u8),
    #[error("unexpected ethertype {0:#06x}")]
    BadEthertype(u16),
    #[error("frame length {len} does not match command {command:?}")]
    LengthMismatch { command: Command, len: usize },
}

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u48(out: &mut Vec<u8>, field: &'static str, v: u64) -> Result<(), EncodeError> {
    if v > MAX_ADDRESS {
        return Err(EncodeError::FieldOverflow { field, value: v });
    }
    out.extend_from_slice(&v.to_be_bytes()[2..]);
    Ok(())
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, EncodeError> {
    let cmd = frame.command();
    let mut out = Vec::with_capacity(cmd.wire_len());
    out.extend_from_slice(&frame.dst.0);
    out.extend_from_slice(&frame.src.0);
    put_u16(&mut out, ETHERTYPE);
    out.push(cmd as u8);
    match &frame.body {
        Body::ReadReq { seq, arid, address } => {
            put_u16(&mut out, seq.0);
            put_u16(&mut out, *arid);
            put_u48(&mut out, "address", *address)?;
        }
        Body::WriteReq {
            seq,
            awid,
            address,
            data,
        } => {
            put_u16(&mut out, seq.0);
            put_u16(&mut out, *awid);
            put_u48(&mut out, "address", *address)?;
            out.extend_from_slice(data);
        }
        Body::ReadResp {
            resp_seq,
            req_seq,
            cum_ack,
            address,
            data,
        } => {
            put_u16(&mut out, resp_seq.0);
            put_u16(&mut out, req_seq.0);
            put_u16(&mut out, cum_ack.0);
            put_u48(&mut out, "address", *address)?;
            out.extend_from_slice(data);
        }
        Body::WriteResp {
            resp_seq,
            req_seq,
            cum_ack,
            awid,
        } => {
            put_u16(&mut out, resp_seq.0);
            put_u16(&mut out, req_seq.0);
            put_u16(&mut out, cum_ack.0);
            put_u16(&mut out, *awid);
        }
        Body::Ack { cum_ack } => put_u16(&mut out, cum_ack.0),
        Body::SackNak {
            flags,
            sack_seq,
            nak_seq,
            cum_ack,
        } => {
            out.push(*flags);
            put_u16(&mut out, sack_seq.0);
            put_u16(&mut out, nak_seq.0);
            put_u16(&mut out, cum_ack.0);
        }
        Body::Pfc {
            class,
            pause_quanta,
        } => {
            out.push(*class);
            put_u16(&mut out, *pause_quanta);
        }
    }
    debug_assert_eq!(out.len(), cmd.frame_len());
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u8(&mut self) -> u8 {
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    fn u16(&mut self) -> u16 {
        let v = u16::from_be_bytes([self.buf[self.pos], self.buf[self.pos + 1]]);
        self.pos += 2;
        v
    }

    fn seq(&mut self) -> SeqNum {
        SeqNum(self.u16())
    }

    fn u48(&mut self) -> u64 {
        let mut b = [0u8; 8];
        b[2..].copy_from_slice(&self.buf[self.pos..self.pos + 6]);
        self.pos += 6;
        u64::from_be_bytes(b)
    }

    fn mac(&mut self) -> MacAddr {
        let mut m = [0u8; 6];
        m.copy_from_slice(&self.buf[self.pos..self.pos + 6]);
        self.pos += 6;
        MacAddr(m)
    }

    fn line(&mut self) -> LineData {
        let mut d = [0u8; LINE_BYTES];
        d.copy_from_slice(&self.buf[self.pos..self.pos + LINE_BYTES]);
        self.pos += LINE_BYTES;
        d
    }
}

/// Decodes a frame including its trailing CRC.
pub fn decode(bytes: &[u8]) -> Result<Frame, DecodeError> {
    let min = ETH_HEADER_LEN + 1 + CRC_LEN;
    if bytes.len() < min {
        return Err(DecodeError::Truncated { len: bytes.len() });
    }
    let (content, crc_bytes) = bytes.split_at(bytes.len() - CRC_LEN);
    let carried = u32::from_be_bytes([crc_bytes[0], crc_bytes[1], crc_bytes[2], crc_bytes[3]]);
    let computed = crc32(content);
    if computed != carried {
        return Err(DecodeError::CrcError { computed, carried });
    }
    let ethertype = u16::from_be_bytes([content[12], content[13]]);
    let cmd_byte = content[ETH_HEADER_LEN];
    let cmd = Command::from_byte(cmd_byte).ok_or(DecodeError::UnknownCommand(cmd_byte))?;
    if ethertype != ETHERTYPE {
        return Err(DecodeError::BadEthertype(ethertype));
    }
    if content.len() < cmd.frame_len() {
        return Err(DecodeError::Truncated { len: bytes.len() });
    }
    if content.len() > cmd.frame_len() {
        return Err(DecodeError::LengthMismatch {
            command: cmd,
            len: content.len(),
        });
    }
    let mut r = Reader {
        buf: content,
        pos: 0,
    };
    let dst = r.mac();
    let src = r.mac();
    r.pos = ETH_HEADER_LEN + 1;
    let body = match cmd {
        Command::ReadReq => Body::ReadReq {
            seq: r.seq(),
            arid: r.u16(),
            address: r.u48(),
        },
        Command::WriteReq => Body::WriteReq {
            seq: r.seq(),
            awid: r.u16(),
            address: r.u48(),
            data: r.line(),
        },
        Command::ReadResp => Body::ReadResp {
            resp_seq: r.seq(),
            req_seq: r.seq(),
            cum_ack: r.seq(),
            address: r.u48(),
            data: r.line(),
        },
        Command::WriteResp => Body::WriteResp {
            resp_seq: r.seq(),
            req_seq: r.seq(),
            cum_ack: r.seq(),
            awid: r.u16(),
        },
        Command::Ack => Body::Ack { cum_ack: r.seq() },
        Command::SackNak => Body::SackNak {
            flags: r.u8(),
            sack_seq: r.seq(),
            nak_seq: r.seq(),
            cum_ack: r.seq(),
        },
        Command::Pfc => Body::Pfc {
            class: r.u8(),
            pause_quanta: r.u16(),
        },
    };
    Ok(Frame { dst, src, body })
}

/// Reads the command byte without validating the frame.
pub fn peek_command(bytes: &[u8]) -> Option<Command> {
    bytes.get(ETH_HEADER_LEN).and_then(|b| Command::from_byte(*b))
}

/// Formats bytes as a hex dump with 16 bytes per line.
pub fn hex_dump(bytes: &[u8]) -> String {
    bytes
        .chunks(16)
        .map(|c| {
            c.iter()
                .map(|b| format!("{b:02x}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a whitespace-separated hex dump; `#` starts a comment.
pub fn parse_hex(text: &str) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            if tok.len() % 2 != 0 {
                return None;
            }
            for i in (0..tok.len()).step_by(2) {
                out.push(u8::from_str_radix(&tok[i..i + 2], 16).ok()?);
            }
        }
    }
    Some(out)
}
