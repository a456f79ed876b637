#![allow(dead_code)]

pub mod cache_model;

use cxlnet::wire::{Body, Frame, LineData, MacAddr, SeqNum, LINE_BYTES, MAX_ADDRESS};
use proptest::prelude::*;

pub fn seq() -> impl Strategy<Value = SeqNum> {
    any::<u16>().prop_map(SeqNum)
}

pub fn data() -> impl Strategy<Value = LineData> {
    prop::collection::vec(any::<u8>(), LINE_BYTES).prop_map(|v| v.try_into().unwrap())
}

pub fn addr() -> impl Strategy<Value = u64> {
    0..=MAX_ADDRESS
}

pub fn body() -> impl Strategy<Value = Body> {
    prop_oneof![
        (seq(), any::<u16>(), addr()).prop_map(|(seq, arid, address)| Body::ReadReq { seq, arid, address }),
        (seq(), any::<u16>(), addr(), data())
            .prop_map(|(seq, awid, address, data)| Body::WriteReq { seq, awid, address, data }),
        (seq(), seq(), seq(), addr(), data()).prop_map(|(resp_seq, req_seq, cum_ack, address, data)| {
            Body::ReadResp { resp_seq, req_seq, cum_ack, address, data }
        }),
        (seq(), seq(), seq(), any::<u16>())
            .prop_map(|(resp_seq, req_seq, cum_ack, awid)| Body::WriteResp { resp_seq, req_seq, cum_ack, awid }),
        seq().prop_map(|cum_ack| Body::Ack { cum_ack }),
        (0u8..8, seq(), seq(), seq()).prop_map(|(flags, sack_seq, nak_seq, cum_ack)| Body::SackNak {
            flags,
            sack_seq,
            nak_seq,
            cum_ack
        }),
        (any::<u8>(), any::<u16>()).prop_map(|(class, pause_quanta)| Body::Pfc { class, pause_quanta }),
    ]
}

pub fn frame() -> impl Strategy<Value = Frame> {
    (any::<[u8; 6]>(), any::<[u8; 6]>(), body())
        .prop_map(|(s, d, b)| Frame::new(MacAddr(s), MacAddr(d), b))
}
