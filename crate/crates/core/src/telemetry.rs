//! Framed binary telemetry between vehicle and ground control.
//!
//! ```text
//! +------+-----+--------+---------+-----------------+---------+
//! | 0xFD | len | msg_id | seq u32 | payload (len B) | crc u16 |
//! +------+-----+--------+---------+-----------------+---------+
//! ```
//!
//! Multi-byte fields are little-endian. The CRC is CRC-16/CCITT-FALSE over
//! `len`, `msg_id`, `seq` and the payload. The same frames, each prefixed by a
//! u64 receive timestamp, form the persisted mission log.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tag_model::Epc;

pub const SYNC: u8 = 0xFD;
/// sync + len + msg_id + seq
pub const HEADER_LEN: usize = 7;
pub const CRC_LEN: usize = 2;
pub const MAX_PAYLOAD: usize = 255;

pub const MSG_HEARTBEAT: u8 = 0x00;
pub const MSG_GPS_POSITION: u8 = 0x01;
pub const MSG_TAG_READ: u8 = 0x02;
pub const MSG_COMMAND: u8 = 0x03;
pub const MSG_ACK: u8 = 0x04;

const CRC_TABLE: [u16; 256] = {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
};

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    data.iter().fold(0xFFFF, |crc, &b| (crc << 8) ^ CRC_TABLE[((crc >> 8) as u8 ^ b) as usize])
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds 255")]
    Oversize(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("expected sync byte 0xFD, skipped {skipped} byte(s)")]
    BadSync { skipped: usize },
    #[error("CRC mismatch: frame says {expected:#06x}, computed {computed:#06x}")]
    BadCrc { expected: u16, computed: u16 },
    #[error("unknown message id {0:#04x}")]
    UnknownMsgId(u8),
    #[error("message {msg_id:#04x} must carry {expected} payload bytes, frame has {actual}")]
    BadLength { msg_id: u8, expected: usize, actual: usize },
    #[error("invalid command code {0}")]
    InvalidCommand(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
}

/// High-level vehicle commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum CommandKind {
    NavTo = 0,
    Circle = 1,
    ChangeAlt = 2,
    Takeoff = 3,
    Land = 4,
    PlaceTag = 5,
    HoverAt = 6,
}

impl CommandKind {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::NavTo,
            1 => Self::Circle,
            2 => Self::ChangeAlt,
            3 => Self::Takeoff,
            4 => Self::Land,
            5 => Self::PlaceTag,
            6 => Self::HoverAt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Heartbeat {
        vehicle_type: u8,
        fsm_state: u8,
    },
    GpsPosition {
        lat_e7: i32,
        lon_e7: i32,
        alt_mm: i32,
        time_ms: u32,
    },
    TagRead {
        epc: Epc,
        rssi_dbm_x10: i16,
        sensor_kind: u8,
        sensor_value_milli: i32,
        time_ms: u32,
    },
    Command {
        cmd: CommandKind,
        lat_e7: i32,
        lon_e7: i32,
        alt_mm: i32,
        param_cm: u16,
    },
    Ack {
        seq_acked: u32,
        result: u8,
    },
}

impl Message {
    pub fn msg_id(&self) -> u8 {
        match self {
            Message::Heartbeat { .. } => MSG_HEARTBEAT,
            Message::GpsPosition { .. } => MSG_GPS_POSITION,
            Message::TagRead { .. } => MSG_TAG_READ,
            Message::Command { .. } => MSG_COMMAND,
            Message::Ack { .. } => MSG_ACK,
        }
    }

    /// Fixed payload size for a known message id.
    pub fn payload_len_for(msg_id: u8) -> Option<usize> {
        Some(match msg_id {
            MSG_HEARTBEAT => 2,
            MSG_GPS_POSITION => 16,
            MSG_TAG_READ => 23,
            MSG_COMMAND => 15,
            MSG_ACK => 5,
            _ => return None,
        })
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match *self {
            Message::Heartbeat { vehicle_type, fsm_state } => {
                out.push(vehicle_type);
                out.push(fsm_state);
            }
            Message::GpsPosition { lat_e7, lon_e7, alt_mm, time_ms } => {
                out.extend_from_slice(&lat_e7.to_le_bytes());
                out.extend_from_slice(&lon_e7.to_le_bytes());
                out.extend_from_slice(&alt_mm.to_le_bytes());
                out.extend_from_slice(&time_ms.to_le_bytes());
            }
            Message::TagRead { epc, rssi_dbm_x10, sensor_kind, sensor_value_milli, time_ms } => {
                out.extend_from_slice(epc.as_bytes());
                out.extend_from_slice(&rssi_dbm_x10.to_le_bytes());
                out.push(sensor_kind);
                out.extend_from_slice(&sensor_value_milli.to_le_bytes());
                out.extend_from_slice(&time_ms.to_le_bytes());
            }
            Message::Command { cmd, lat_e7, lon_e7, alt_mm, param_cm } => {
                out.push(cmd as u8);
                out.extend_from_slice(&lat_e7.to_le_bytes());
                out.extend_from_slice(&lon_e7.to_le_bytes());
                out.extend_from_slice(&alt_mm.to_le_bytes());
                out.extend_from_slice(&param_cm.to_le_bytes());
            }
            Message::Ack { seq_acked, result } => {
                out.extend_from_slice(&seq_acked.to_le_bytes());
                out.push(result);
            }
        }
    }

    fn parse_payload(msg_id: u8, p: &[u8]) -> Result<Message, DecodeError> {
        let expected = Self::payload_len_for(msg_id).ok_or(DecodeError::UnknownMsgId(msg_id))?;
        if p.len() != expected {
            return Err(DecodeError::BadLength { msg_id, expected, actual: p.len() });
        }
        let i32_at = |o: usize| i32::from_le_bytes(p[o..o + 4].try_into().expect("4 bytes"));
        let u32_at = |o: usize| u32::from_le_bytes(p[o..o + 4].try_into().expect("4 bytes"));
        Ok(match msg_id {
            MSG_HEARTBEAT => Message::Heartbeat { vehicle_type: p[0], fsm_state: p[1] },
            MSG_GPS_POSITION => Message::GpsPosition {
                lat_e7: i32_at(0),
                lon_e7: i32_at(4),
                alt_mm: i32_at(8),
                time_ms: u32_at(12),
            },
            MSG_TAG_READ => Message::TagRead {
                epc: Epc(p[..12].try_into().expect("12 bytes")),
                rssi_dbm_x10: i16::from_le_bytes([p[12], p[13]]),
                sensor_kind: p[14],
                sensor_value_milli: i32_at(15),
                time_ms: u32_at(19),
            },
            MSG_COMMAND => Message::Command {
                cmd: CommandKind::from_code(p[0]).ok_or(DecodeError::InvalidCommand(p[0]))?,
                lat_e7: i32_at(1),
                lon_e7: i32_at(5),
                alt_mm: i32_at(9),
                param_cm: u16::from_le_bytes([p[13], p[14]]),
            },
            MSG_ACK => Message::Ack { seq_acked: u32_at(0), result: p[4] },
            _ => unreachable!("length table covers every known id"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub seq: u32,
    pub msg: Message,
}

fn encode_raw(msg_id: u8, seq: u32, payload: &[u8]) -> Result<Vec<u8>, EncodeError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(EncodeError::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.push(SYNC);
    out.push(payload.len() as u8);
    out.push(msg_id);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc16_ccitt_false(&out[1..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Frame an arbitrary id/payload pair. Used by tests and tools that need
/// frames this codec would never produce on its own.
pub fn encode_raw_frame(msg_id: u8, seq: u32, payload: &[u8]) -> Result<Vec<u8>, EncodeError> {
    encode_raw(msg_id, seq, payload)
}

pub fn encode_frame(msg: &Message, seq: u32) -> Result<Vec<u8>, EncodeError> {
    let mut payload = Vec::with_capacity(23);
    msg.write_payload(&mut payload);
    encode_raw(msg.msg_id(), seq, &payload)
}

/// Decode one frame that starts at `bytes[0]`.
///
/// On success returns the frame and the number of bytes it occupied. On a
/// CRC-valid frame with an unknown id the error still lets the caller skip
/// it: its length is `HEADER_LEN + bytes[1] + CRC_LEN`.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), DecodeError> {
    match bytes.first() {
        None => return Err(DecodeError::Truncated { needed: HEADER_LEN + CRC_LEN, available: 0 }),
        Some(&SYNC) => {}
        Some(_) => {
            let skipped = bytes.iter().position(|&b| b == SYNC).unwrap_or(bytes.len());
            return Err(DecodeError::BadSync { skipped });
        }
    }
    if bytes.len() < 2 {
        return Err(DecodeError::Truncated { needed: HEADER_LEN + CRC_LEN, available: bytes.len() });
    }
    let len = bytes[1] as usize;
    let total = HEADER_LEN + len + CRC_LEN;
    if bytes.len() < total {
        return Err(DecodeError::Truncated { needed: total, available: bytes.len() });
    }
    let body_end = HEADER_LEN + len;
    let computed = crc16_ccitt_false(&bytes[1..body_end]);
    let expected = u16::from_le_bytes([bytes[body_end], bytes[body_end + 1]]);
    if computed != expected {
        return Err(DecodeError::BadCrc { expected, computed });
    }
    let msg_id = bytes[2];
    let seq = u32::from_le_bytes(bytes[3..7].try_into().expect("4 bytes"));
    let msg = Message::parse_payload(msg_id, &bytes[HEADER_LEN..body_end])?;
    Ok((Frame { seq, msg }, total))
}

/// Streaming decoder: feed arbitrary chunks, pull frames and errors in order.
///
/// Garbage before a sync byte yields one `BadSync`; a CRC failure skips only
/// the sync byte so a real frame hiding inside the bad one is still found.
/// CRC-valid frames with unknown ids are skipped whole.
#[derive(Debug, Default, Clone)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn next_frame(&mut self) -> Option<Result<Frame, DecodeError>> {
        if self.buf.is_empty() {
            return None;
        }
        match decode_frame(&self.buf) {
            Ok((frame, used)) => {
                self.buf.drain(..used);
                Some(Ok(frame))
            }
            Err(DecodeError::Truncated { .. }) => None,
            Err(e @ DecodeError::BadSync { skipped }) => {
                self.buf.drain(..skipped);
                Some(Err(e))
            }
            Err(e @ DecodeError::BadCrc { .. }) => {
                self.buf.drain(..1);
                Some(Err(e))
            }
            Err(e) => {
                // CRC passed, so the length byte is trustworthy.
                let used = HEADER_LEN + self.buf[1] as usize + CRC_LEN;
                self.buf.drain(..used);
                Some(Err(e))
            }
        }
    }
}

impl Iterator for FrameDecoder {
    type Item = Result<Frame, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame()
    }
}

/// Decode a complete byte stream. A trailing partial frame is reported as `Truncated`.
pub fn decode_stream(bytes: &[u8]) -> Vec<Result<Frame, DecodeError>> {
    let mut dec = FrameDecoder::new();
    dec.push(bytes);
    let mut out: Vec<_> = dec.by_ref().collect();
    if dec.pending() > 0 {
        let available = dec.pending();
        let needed = if available >= 2 { HEADER_LEN + dec.buf[1] as usize + CRC_LEN } else { HEADER_LEN + CRC_LEN };
        out.push(Err(DecodeError::Truncated { needed, available }));
    }
    out
}

/// Independent Bernoulli drop of each frame; survivors keep their order.
pub fn lossy_channel<T, R: Rng + ?Sized>(frames: Vec<T>, drop_prob: f64, rng: &mut R) -> Vec<T> {
    let p = drop_prob.clamp(0.0, 1.0);
    if p == 0.0 {
        return frames;
    }
    frames.into_iter().filter(|_| !rng.random_bool(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tag_read() -> Message {
        Message::TagRead {
            epc: Epc::from_index(0xE200_0000, 7),
            rssi_dbm_x10: -83,
            sensor_kind: 1,
            sensor_value_milli: 5_000_000,
            time_ms: 123_456,
        }
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
        assert_eq!(crc16_ccitt_false(b""), 0xFFFF);
    }

    #[test]
    fn frame_sizes() {
        assert_eq!(encode_frame(&tag_read(), 0).unwrap().len(), 32);
        let gps = Message::GpsPosition { lat_e7: 1, lon_e7: 2, alt_mm: 3, time_ms: 4 };
        let f = encode_frame(&gps, 9).unwrap();
        assert_eq!(f[1], 16);
        assert_eq!(f.len(), 25);
    }

    #[test]
    fn exact_layout_of_heartbeat() {
        let f = encode_frame(&Message::Heartbeat { vehicle_type: 1, fsm_state: 5 }, 0x0403_0201).unwrap();
        assert_eq!(&f[..9], &[0xFD, 2, 0x00, 0x01, 0x02, 0x03, 0x04, 1, 5]);
        let crc = crc16_ccitt_false(&f[1..9]);
        assert_eq!(&f[9..], &crc.to_le_bytes());
    }

    #[test]
    fn oversize_payload_rejected() {
        assert_eq!(encode_raw_frame(0x10, 0, &[0; 256]), Err(EncodeError::Oversize(256)));
    }

    #[test]
    fn flipped_body_bits_fail_crc() {
        let f = encode_frame(&tag_read(), 77).unwrap();
        for byte in 2..f.len() {
            for bit in 0..8 {
                let mut g = f.clone();
                g[byte] ^= 1 << bit;
                assert!(matches!(decode_frame(&g), Err(DecodeError::BadCrc { .. })), "byte {byte} bit {bit}");
            }
        }
    }

    #[test]
    fn two_frames_in_a_row() {
        let mut s = encode_frame(&tag_read(), 1).unwrap();
        s.extend(encode_frame(&Message::Ack { seq_acked: 1, result: 0 }, 2).unwrap());
        let out: Vec<_> = decode_stream(&s).into_iter().map(Result::unwrap).collect();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].seq, 1);
        assert_eq!(out[1].msg, Message::Ack { seq_acked: 1, result: 0 });
    }

    #[test]
    fn unknown_id_is_skipped() {
        let mut s = encode_raw_frame(0x7F, 5, &[1, 2, 3]).unwrap();
        s.extend(encode_frame(&Message::Heartbeat { vehicle_type: 0, fsm_state: 2 }, 6).unwrap());
        let out = decode_stream(&s);
        assert_eq!(out[0], Err(DecodeError::UnknownMsgId(0x7F)));
        assert_eq!(out[1].as_ref().unwrap().seq, 6);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn wrong_length_for_known_id() {
        let f = encode_raw_frame(MSG_HEARTBEAT, 0, &[1, 2, 3]).unwrap();
        assert_eq!(decode_frame(&f), Err(DecodeError::BadLength { msg_id: 0, expected: 2, actual: 3 }));
    }

    #[test]
    fn invalid_command_code() {
        let mut payload = vec![9u8];
        payload.extend([0u8; 14]);
        let f = encode_raw_frame(MSG_COMMAND, 0, &payload).unwrap();
        assert_eq!(decode_frame(&f), Err(DecodeError::InvalidCommand(9)));
    }

    #[test]
    fn resync_after_garbage() {
        let mut s = vec![0x00, 0x13, 0x37];
        s.extend(encode_frame(&tag_read(), 3).unwrap());
        let out = decode_stream(&s);
        assert_eq!(out[0], Err(DecodeError::BadSync { skipped: 3 }));
        assert_eq!(out[1].as_ref().unwrap().msg, tag_read());
    }

    #[test]
    fn truncated_tail() {
        let f = encode_frame(&tag_read(), 3).unwrap();
        assert!(matches!(decode_frame(&f[..10]), Err(DecodeError::Truncated { needed: 32, available: 10 })));
        let out = decode_stream(&f[..31]);
        assert_eq!(out, vec![Err(DecodeError::Truncated { needed: 32, available: 31 })]);
    }

    #[test]
    fn streaming_in_chunks() {
        let frames: Vec<u8> = (0..5u32)
            .flat_map(|i| encode_frame(&Message::Ack { seq_acked: i, result: 0 }, i).unwrap())
            .collect();
        let mut dec = FrameDecoder::new();
        let mut got = vec![];
        for chunk in frames.chunks(3) {
            dec.push(chunk);
            got.extend(dec.by_ref().map(Result::unwrap));
        }
        assert_eq!(got.iter().map(|f| f.seq).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn lossy_channel_extremes_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<u32> = (0..10_000).collect();
        assert_eq!(lossy_channel(frames.clone(), 0.0, &mut rng), frames);
        assert!(lossy_channel(frames.clone(), 1.0, &mut rng).is_empty());
        let kept = lossy_channel(frames.clone(), 0.1, &mut rng);
        let frac = kept.len() as f64 / 1e4;
        assert!((frac - 0.9).abs() <= 0.01, "{frac}");
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }
}
