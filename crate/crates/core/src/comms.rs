//! Framed telemetry link between the UAV and the hexapod.
//!
//! Frame layout (all multi-byte fields little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 1    | magic `0xFD`                            |
//! | 1      | 1    | payload length `n`                      |
//! | 2      | 1    | sequence number (wrapping)              |
//! | 3      | 1    | system id (1 = UAV, 2 = hexapod)        |
//! | 4      | 1    | message id                              |
//! | 5      | n    | payload                                 |
//! | 5 + n  | 2    | CRC-16/X25 over bytes `1 .. 5 + n`      |

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::NoiseStream;

pub const MAGIC: u8 = 0xFD;
pub const HEADER_LEN: usize = 5;
pub const OVERHEAD: usize = HEADER_LEN + 2;
pub const SYS_UAV: u8 = 1;
pub const SYS_HEXAPOD: u8 = 2;

/// CRC-16/X25: reflected polynomial 0x1021, init 0xFFFF, final XOR 0xFFFF.
#[derive(Debug, Clone, Copy)]
pub struct Crc16X25(u16);

impl Default for Crc16X25 {
    fn default() -> Self {
        Self::new()
    }
}

impl Crc16X25 {
    pub fn new() -> Self {
        Self(0xFFFF)
    }

    pub fn accumulate(&mut self, byte: u8) {
        let mut tmp = byte ^ (self.0 & 0xFF) as u8;
        tmp ^= tmp << 4;
        let tmp = u16::from(tmp);
        self.0 = (self.0 >> 8) ^ (tmp << 8) ^ (tmp << 3) ^ (tmp >> 4);
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.accumulate(b);
        }
    }

    pub fn finish(self) -> u16 {
        self.0 ^ 0xFFFF
    }
}

pub fn crc16_x25(bytes: &[u8]) -> u16 {
    let mut c = Crc16X25::new();
    c.update(bytes);
    c.finish()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("BadMagic")]
    BadMagic,
    #[error("BadCrc")]
    BadCrc,
    #[error("UnknownMsgId({0})")]
    UnknownMsgId(u8),
    #[error("TruncatedFrame")]
    TruncatedFrame,
    #[error("BadPayloadLength(msg {msg_id}: {len} bytes)")]
    BadPayloadLength { msg_id: u8, len: u8 },
    #[error("InvalidField({0})")]
    InvalidField(&'static str),
    #[error("PayloadTooLarge({0})")]
    PayloadTooLarge(usize),
}

impl CodecError {
    pub fn kind(&self) -> &'static str {
        match self {
            CodecError::BadMagic => "BadMagic",
            CodecError::BadCrc => "BadCrc",
            CodecError::UnknownMsgId(_) => "UnknownMsgId",
            CodecError::TruncatedFrame => "TruncatedFrame",
            CodecError::BadPayloadLength { .. } => "BadPayloadLength",
            CodecError::InvalidField(_) => "InvalidField",
            CodecError::PayloadTooLarge(_) => "PayloadTooLarge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    Heartbeat { stage: u8 },
    StateReport { pose: [f32; 6], grasp_state: u8, load: f32, tilt: f32 },
    TargetLocation { p_rel: [f32; 3], track_id: u32 },
    Command { opcode: u8 },
    Ack { seq_acked: u8, ok: u8 },
}

pub mod msg_id {
    pub const HEARTBEAT: u8 = 0;
    pub const STATE_REPORT: u8 = 1;
    pub const TARGET_LOCATION: u8 = 2;
    pub const COMMAND: u8 = 3;
    pub const ACK: u8 = 4;
}

fn payload_len_for(id: u8) -> Option<usize> {
    match id {
        msg_id::HEARTBEAT => Some(1),
        msg_id::STATE_REPORT => Some(33),
        msg_id::TARGET_LOCATION => Some(16),
        msg_id::COMMAND => Some(1),
        msg_id::ACK => Some(2),
        _ => None,
    }
}

fn valid_opcode(op: u8) -> bool {
    (1..=5).contains(&op)
}

impl Message {
    pub fn msg_id(&self) -> u8 {
        match self {
            Message::Heartbeat { .. } => msg_id::HEARTBEAT,
            Message::StateReport { .. } => msg_id::STATE_REPORT,
            Message::TargetLocation { .. } => msg_id::TARGET_LOCATION,
            Message::Command { .. } => msg_id::COMMAND,
            Message::Ack { .. } => msg_id::ACK,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Heartbeat { .. } => "Heartbeat",
            Message::StateReport { .. } => "StateReport",
            Message::TargetLocation { .. } => "TargetLocation",
            Message::Command { .. } => "Command",
            Message::Ack { .. } => "Ack",
        }
    }

    fn validate(&self) -> Result<(), CodecError> {
        match self {
            Message::StateReport { pose, load, tilt, .. } => {
                if !pose.iter().chain([load, tilt]).all(|v| v.is_finite()) {
                    return Err(CodecError::InvalidField("non-finite float"));
                }
            }
            Message::TargetLocation { p_rel, .. } => {
                if !p_rel.iter().all(|v| v.is_finite()) {
                    return Err(CodecError::InvalidField("non-finite float"));
                }
            }
            Message::Command { opcode } if !valid_opcode(*opcode) => {
                return Err(CodecError::InvalidField("opcode"));
            }
            _ => {}
        }
        Ok(())
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match *self {
            Message::Heartbeat { stage } => out.push(stage),
            Message::StateReport { pose, grasp_state, load, tilt } => {
                for v in pose {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.push(grasp_state);
                out.extend_from_slice(&load.to_le_bytes());
                out.extend_from_slice(&tilt.to_le_bytes());
            }
            Message::TargetLocation { p_rel, track_id } => {
                for v in p_rel {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&track_id.to_le_bytes());
            }
            Message::Command { opcode } => out.push(opcode),
            Message::Ack { seq_acked, ok } => {
                out.push(seq_acked);
                out.push(ok);
            }
        }
    }

    fn parse_payload(id: u8, p: &[u8]) -> Result<Message, CodecError> {
        let f32_at = |i: usize| f32::from_le_bytes([p[i], p[i + 1], p[i + 2], p[i + 3]]);
        let msg = match id {
            msg_id::HEARTBEAT => Message::Heartbeat { stage: p[0] },
            msg_id::STATE_REPORT => {
                let mut pose = [0f32; 6];
                for (k, v) in pose.iter_mut().enumerate() {
                    *v = f32_at(4 * k);
                }
                Message::StateReport { pose, grasp_state: p[24], load: f32_at(25), tilt: f32_at(29) }
            }
            msg_id::TARGET_LOCATION => Message::TargetLocation {
                p_rel: [f32_at(0), f32_at(4), f32_at(8)],
                track_id: u32::from_le_bytes([p[12], p[13], p[14], p[15]]),
            },
            msg_id::COMMAND => Message::Command { opcode: p[0] },
            msg_id::ACK => Message::Ack { seq_acked: p[0], ok: p[1] },
            other => return Err(CodecError::UnknownMsgId(other)),
        };
        msg.validate()?;
        Ok(msg)
    }
}

/// Frames an arbitrary payload. Used by [`encode`]; exposed for tooling.
pub fn encode_raw(msg_id: u8, payload: &[u8], seq: u8, sys_id: u8) -> Result<Vec<u8>, CodecError> {
    if payload.len() > 255 {
        return Err(CodecError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(OVERHEAD + payload.len());
    out.extend_from_slice(&[MAGIC, payload.len() as u8, seq, sys_id, msg_id]);
    out.extend_from_slice(payload);
    let crc = crc16_x25(&out[1..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn encode(msg: &Message, seq: u8, sys_id: u8) -> Result<Vec<u8>, CodecError> {
    msg.validate()?;
    let mut payload = Vec::with_capacity(33);
    msg.write_payload(&mut payload);
    encode_raw(msg.msg_id(), &payload, seq, sys_id)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub message: Message,
    pub seq: u8,
    pub sys_id: u8,
    /// Bytes taken from the input, including header and CRC.
    pub consumed: usize,
}

/// Decodes the single frame at the start of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Decoded, CodecError> {
    match bytes.first() {
        None => return Err(CodecError::TruncatedFrame),
        Some(&b) if b != MAGIC => return Err(CodecError::BadMagic),
        _ => {}
    }
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::TruncatedFrame);
    }
    let n = usize::from(bytes[1]);
    let total = OVERHEAD + n;
    if bytes.len() < total {
        return Err(CodecError::TruncatedFrame);
    }
    let crc = u16::from_le_bytes([bytes[HEADER_LEN + n], bytes[HEADER_LEN + n + 1]]);
    if crc16_x25(&bytes[1..HEADER_LEN + n]) != crc {
        return Err(CodecError::BadCrc);
    }
    let (seq, sys_id, id) = (bytes[2], bytes[3], bytes[4]);
    let expected = payload_len_for(id).ok_or(CodecError::UnknownMsgId(id))?;
    if expected != n {
        return Err(CodecError::BadPayloadLength { msg_id: id, len: bytes[1] });
    }
    let message = Message::parse_payload(id, &bytes[HEADER_LEN..HEADER_LEN + n])?;
    Ok(Decoded { message, seq, sys_id, consumed: total })
}

/// Decodes every frame in a byte stream. After an error the scan resumes at
/// the next `0xFD` past the failed start byte; a trailing partial frame is
/// reported as `TruncatedFrame`.
pub fn decode_stream(bytes: &[u8]) -> Vec<Result<Decoded, CodecError>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != MAGIC {
            out.push(Err(CodecError::BadMagic));
            i = match bytes[i..].iter().position(|&b| b == MAGIC) {
                Some(off) => i + off,
                None => bytes.len(),
            };
            continue;
        }
        match decode(&bytes[i..]) {
            Ok(d) => {
                i += d.consumed;
                out.push(Ok(d));
            }
            Err(e) => {
                out.push(Err(e));
                i = match bytes[i + 1..].iter().position(|&b| b == MAGIC) {
                    Some(off) => i + 1 + off,
                    None => bytes.len(),
                };
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub drop_prob: f64,
    /// Whole planner ticks.
    pub latency: u32,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self { drop_prob: 0.0, latency: 0, seed: 0 }
    }
}

/// One direction of the lossy link. Frames are dropped independently and the
/// survivors arrive exactly `latency` ticks later. Order is preserved.
#[derive(Debug, Clone)]
pub struct Channel {
    model: ChannelModel,
    rng: NoiseStream,
    in_flight: VecDeque<(u64, Vec<u8>)>,
    sent: u64,
    dropped: u64,
}

impl Channel {
    pub fn new(model: ChannelModel, stream_name: &str) -> Self {
        Self { model, rng: NoiseStream::new(model.seed, stream_name), in_flight: VecDeque::new(), sent: 0, dropped: 0 }
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn step(&mut self, new_frames: Vec<Vec<u8>>, tick: u64) -> Vec<Vec<u8>> {
        for f in new_frames {
            self.sent += 1;
            // one draw per frame, whatever drop_prob is
            if self.rng.bernoulli(self.model.drop_prob) {
                self.dropped += 1;
            } else {
                self.in_flight.push_back((tick + u64::from(self.model.latency), f));
            }
        }
        let mut delivered = Vec::new();
        while self.in_flight.front().is_some_and(|(due, _)| *due <= tick) {
            delivered.push(self.in_flight.pop_front().unwrap().1);
        }
        delivered
    }
}

pub fn channel_step(ch: &mut Channel, new_frames: Vec<Vec<u8>>, tick: u64) -> Vec<Vec<u8>> {
    ch.step(new_frames, tick)
}

pub use crate::planning::LinkStatus;

pub fn link_supervisor(last_heartbeat_age: u64, timeout: u64) -> LinkStatus {
    if last_heartbeat_age > timeout {
        LinkStatus::Lost
    } else {
        LinkStatus::Healthy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bit-at-a-time reflected CRC, independent of the table-free byte form above.
    fn crc_bitwise(data: &[u8]) -> u16 {
        let mut crc: u16 = 0xFFFF;
        for &b in data {
            crc ^= u16::from(b);
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ 0x8408 } else { crc >> 1 };
            }
        }
        !crc
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc_bitwise(b"123456789"), 0x906E);
        assert_eq!(crc16_x25(b"123456789"), 0x906E);
    }

    #[test]
    fn crc_matches_oracle_on_random_data() {
        let mut rng = NoiseStream::new(5, "crc");
        for len in 0..300 {
            let data: Vec<u8> = (0..len).map(|_| rng.below(256) as u8).collect();
            assert_eq!(crc16_x25(&data), crc_bitwise(&data));
        }
    }

    #[test]
    fn heartbeat_layout() {
        let f = encode(&Message::Heartbeat { stage: 0 }, 0, SYS_UAV).unwrap();
        assert_eq!(f.len(), 8);
        assert_eq!(&f[..5], &[0xFD, 0x01, 0x00, 0x01, 0x00]);
        let crc = crc_bitwise(&f[1..6]);
        assert_eq!(&f[6..], &crc.to_le_bytes());
    }

    #[test]
    fn frame_length_is_overhead_plus_payload() {
        let msgs = [
            Message::Heartbeat { stage: 3 },
            Message::StateReport { pose: [1.0, 2.0, 3.0, 0.1, 0.2, 0.3], grasp_state: 2, load: 7.5, tilt: 0.01 },
            Message::TargetLocation { p_rel: [0.5, -0.25, 0.0], track_id: 17 },
            Message::Command { opcode: 3 },
            Message::Ack { seq_acked: 200, ok: 1 },
        ];
        for m in msgs {
            let f = encode(&m, 9, SYS_HEXAPOD).unwrap();
            assert_eq!(f.len(), OVERHEAD + usize::from(f[1]));
            let d = decode(&f).unwrap();
            assert_eq!((d.message, d.seq, d.sys_id, d.consumed), (m, 9, SYS_HEXAPOD, f.len()));
        }
    }

    #[test]
    fn decode_error_kinds() {
        let f = encode(&Message::Command { opcode: 2 }, 1, SYS_UAV).unwrap();

        let mut flipped = f.clone();
        flipped[5] ^= 0x01;
        assert_eq!(decode(&flipped), Err(CodecError::BadCrc));

        assert_eq!(decode(&f[..f.len() - 1]), Err(CodecError::TruncatedFrame));
        assert_eq!(decode(&[]), Err(CodecError::TruncatedFrame));

        let mut bad = f.clone();
        bad[0] = 0xFE;
        assert_eq!(decode(&bad), Err(CodecError::BadMagic));

        let unk = encode_raw(0x42, &[1, 2], 0, SYS_UAV).unwrap();
        assert_eq!(decode(&unk), Err(CodecError::UnknownMsgId(0x42)));

        let short = encode_raw(msg_id::STATE_REPORT, &[0; 3], 0, SYS_UAV).unwrap();
        assert!(matches!(decode(&short), Err(CodecError::BadPayloadLength { .. })));

        let bad_op = encode_raw(msg_id::COMMAND, &[9], 0, SYS_UAV).unwrap();
        assert_eq!(decode(&bad_op), Err(CodecError::InvalidField("opcode")));
    }

    #[test]
    fn encode_rejects_invalid() {
        assert!(encode(&Message::Command { opcode: 0 }, 0, 1).is_err());
        let m = Message::TargetLocation { p_rel: [f32::NAN, 0.0, 0.0], track_id: 0 };
        assert!(encode(&m, 0, 1).is_err());
        assert_eq!(encode_raw(0, &[0; 256], 0, 1), Err(CodecError::PayloadTooLarge(256)));
    }

    #[test]
    fn stream_resynchronises() {
        let a = encode(&Message::Heartbeat { stage: 1 }, 1, SYS_UAV).unwrap();
        let b = encode(&Message::Ack { seq_acked: 1, ok: 1 }, 2, SYS_HEXAPOD).unwrap();
        let mut corrupt = a.clone();
        corrupt[5] ^= 0xFF;
        let mut stream = vec![0x00, 0x11];
        stream.extend_from_slice(&corrupt);
        stream.extend_from_slice(&b);
        stream.extend_from_slice(&a[..4]);
        let out = decode_stream(&stream);
        let kinds: Vec<_> = out.iter().map(|r| r.as_ref().map(|d| d.message.name()).map_err(|e| e.kind())).collect();
        assert_eq!(kinds, vec![Err("BadMagic"), Err("BadCrc"), Ok("Ack"), Err("TruncatedFrame")]);
    }

    #[test]
    fn channel_lossless_same_tick() {
        let mut ch = Channel::new(ChannelModel::default(), "t");
        let out = ch.step(vec![vec![1], vec![2], vec![3]], 0);
        assert_eq!(out, vec![vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn channel_latency_and_order() {
        let mut ch = Channel::new(ChannelModel { latency: 3, ..Default::default() }, "t");
        assert!(ch.step(vec![vec![1]], 0).is_empty());
        assert!(ch.step(vec![vec![2]], 1).is_empty());
        assert!(ch.step(vec![], 2).is_empty());
        assert_eq!(ch.step(vec![], 3), vec![vec![1]]);
        assert_eq!(ch.step(vec![], 4), vec![vec![2]]);
    }

    #[test]
    fn channel_drop_all() {
        let mut ch = Channel::new(ChannelModel { drop_prob: 1.0, ..Default::default() }, "t");
        for t in 0..100 {
            assert!(ch.step(vec![vec![t as u8]], t).is_empty());
        }
        assert_eq!(ch.dropped(), 100);
    }

    #[test]
    fn supervisor_threshold() {
        assert_eq!(link_supervisor(0, 10), LinkStatus::Healthy);
        assert_eq!(link_supervisor(10, 10), LinkStatus::Healthy);
        assert_eq!(link_supervisor(11, 10), LinkStatus::Lost);
    }
}
