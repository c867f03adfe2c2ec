//! Minimal LoRaWAN-shaped frames carrying the synchronization protocol.
//!
//! Uplink:
//!
//! ```text
//! MHDR(0x40) | DevAddr(4, LE) | FCtrl(FOptsLen = 0) | FCnt(2, LE) | FPort | payload
//! ```
//!
//! Downlink acknowledgement:
//!
//! ```text
//! MHDR(0x60) | DevAddr(4, LE) | FCtrl(ACK | FOptsLen) | FCnt(2, LE) | FOpts(0 or 2)
//! ```
//!
//! The acknowledgement's FOpts hold the remaining time to the next slot as a
//! big-endian `u16` in milliseconds. An acknowledgement without FOpts tells
//! the device its last uplink was in-sync. MIC and encryption are not
//! modelled.

use thiserror::Error;

/// Frame port reserved for devices that run the synchronization protocol.
pub const SYNC_FPORT: u8 = 198;

pub const MHDR_UNCONFIRMED_UP: u8 = 0x40;
pub const MHDR_UNCONFIRMED_DOWN: u8 = 0x60;

const FCTRL_ACK: u8 = 0x20;
const FOPTS_LEN_MASK: u8 = 0x0f;

/// MHDR + DevAddr + FCtrl + FCnt.
pub const FHDR_LEN: usize = 8;
pub const MAX_FRAME_LEN: usize = 255;
pub const MAX_UPLINK_PAYLOAD: usize = MAX_FRAME_LEN - FHDR_LEN - 1;

/// Bytes of FOpts a resynchronizing acknowledgement adds.
pub const REMAINING_TIME_BYTES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds the {MAX_UPLINK_PAYLOAD} byte limit")]
    PayloadTooLong(usize),
    #[error("remaining time {0} ms does not fit in 16 bits")]
    RemainingOutOfRange(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeErrorKind {
    Truncated { needed: usize },
    BadMhdr(u8),
    MissingAckFlag,
    UnexpectedFOpts(u8),
    TrailingBytes,
    TooLong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("malformed frame at byte {offset}: {kind:?}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UplinkFrame {
    pub dev_addr: u32,
    pub fcnt: u16,
    pub fport: u8,
    pub payload: Vec<u8>,
}

impl UplinkFrame {
    pub fn is_sync_device(&self) -> bool {
        self.fport == SYNC_FPORT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncAck {
    pub dev_addr: u32,
    pub fcnt: u16,
    /// Present only when the acknowledged uplink was out-sync.
    pub remaining_ms: Option<u32>,
}

impl SyncAck {
    pub fn fopts_len(&self) -> usize {
        if self.remaining_ms.is_some() {
            REMAINING_TIME_BYTES
        } else {
            0
        }
    }

    pub fn encoded_len(&self) -> usize {
        FHDR_LEN + self.fopts_len()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        match self.buf.get(self.pos..self.pos + n) {
            Some(s) => {
                self.pos += n;
                Ok(s)
            }
            None => Err(self.error(DecodeErrorKind::Truncated { needed: n })),
        }
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn error(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError {
            offset: self.pos,
            kind,
        }
    }

    fn rest(&mut self) -> &'a [u8] {
        let r = &self.buf[self.pos..];
        self.pos = self.buf.len();
        r
    }
}

fn put_header(out: &mut Vec<u8>, mhdr: u8, dev_addr: u32, fctrl: u8, fcnt: u16) {
    out.push(mhdr);
    out.extend_from_slice(&dev_addr.to_le_bytes());
    out.push(fctrl);
    out.extend_from_slice(&fcnt.to_le_bytes());
}

/// Reads MHDR..FCnt, returning `(dev_addr, fctrl, fcnt)`.
fn get_header(r: &mut Reader<'_>, mhdr: u8) -> Result<(u32, u8, u16), DecodeError> {
    if r.buf.len() > MAX_FRAME_LEN {
        return Err(r.error(DecodeErrorKind::TooLong));
    }
    let got = r.u8()?;
    if got != mhdr {
        return Err(DecodeError {
            offset: 0,
            kind: DecodeErrorKind::BadMhdr(got),
        });
    }
    let addr = r.take(4)?;
    let dev_addr = u32::from_le_bytes([addr[0], addr[1], addr[2], addr[3]]);
    let fctrl = r.u8()?;
    let cnt = r.take(2)?;
    Ok((dev_addr, fctrl, u16::from_le_bytes([cnt[0], cnt[1]])))
}

pub fn encode_uplink(f: &UplinkFrame) -> Result<Vec<u8>, EncodeError> {
    if f.payload.len() > MAX_UPLINK_PAYLOAD {
        return Err(EncodeError::PayloadTooLong(f.payload.len()));
    }
    let mut out = Vec::with_capacity(FHDR_LEN + 1 + f.payload.len());
    put_header(&mut out, MHDR_UNCONFIRMED_UP, f.dev_addr, 0, f.fcnt);
    out.push(f.fport);
    out.extend_from_slice(&f.payload);
    Ok(out)
}

pub fn decode_uplink(bytes: &[u8]) -> Result<UplinkFrame, DecodeError> {
    let mut r = Reader::new(bytes);
    let (dev_addr, fctrl, fcnt) = get_header(&mut r, MHDR_UNCONFIRMED_UP)?;
    if fctrl & FOPTS_LEN_MASK != 0 {
        return Err(DecodeError {
            offset: 5,
            kind: DecodeErrorKind::UnexpectedFOpts(fctrl & FOPTS_LEN_MASK),
        });
    }
    let fport = r.u8()?;
    Ok(UplinkFrame {
        dev_addr,
        fcnt,
        fport,
        payload: r.rest().to_vec(),
    })
}

pub fn encode_ack(a: &SyncAck) -> Result<Vec<u8>, EncodeError> {
    let remaining = a
        .remaining_ms
        .map(|ms| u16::try_from(ms).map_err(|_| EncodeError::RemainingOutOfRange(ms)))
        .transpose()?;
    let fctrl = FCTRL_ACK | a.fopts_len() as u8;
    let mut out = Vec::with_capacity(a.encoded_len());
    put_header(&mut out, MHDR_UNCONFIRMED_DOWN, a.dev_addr, fctrl, a.fcnt);
    if let Some(ms) = remaining {
        out.extend_from_slice(&ms.to_be_bytes());
    }
    Ok(out)
}

pub fn decode_ack(bytes: &[u8]) -> Result<SyncAck, DecodeError> {
    let mut r = Reader::new(bytes);
    let (dev_addr, fctrl, fcnt) = get_header(&mut r, MHDR_UNCONFIRMED_DOWN)?;
    if fctrl & FCTRL_ACK == 0 {
        return Err(DecodeError {
            offset: 5,
            kind: DecodeErrorKind::MissingAckFlag,
        });
    }
    let remaining_ms = match fctrl & FOPTS_LEN_MASK {
        0 => None,
        2 => {
            let b = r.take(2)?;
            Some(u16::from_be_bytes([b[0], b[1]]) as u32)
        }
        n => {
            return Err(DecodeError {
                offset: 5,
                kind: DecodeErrorKind::UnexpectedFOpts(n),
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(r.error(DecodeErrorKind::TrailingBytes));
    }
    Ok(SyncAck {
        dev_addr,
        fcnt,
        remaining_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uplink_golden() {
        let f = UplinkFrame {
            dev_addr: 0x0102_0304,
            fcnt: 0,
            fport: SYNC_FPORT,
            payload: vec![],
        };
        let bytes = encode_uplink(&f).unwrap();
        assert_eq!(
            bytes,
            [0x40, 0x04, 0x03, 0x02, 0x01, 0x00, 0x00, 0x00, 0xC6]
        );
        assert_eq!(decode_uplink(&bytes).unwrap(), f);
        assert!(f.is_sync_device());
    }

    #[test]
    fn uplink_payload_limit() {
        let mut f = UplinkFrame {
            dev_addr: 1,
            fcnt: 1,
            fport: SYNC_FPORT,
            payload: vec![0; 256],
        };
        assert_eq!(encode_uplink(&f), Err(EncodeError::PayloadTooLong(256)));
        f.payload.truncate(MAX_UPLINK_PAYLOAD);
        assert_eq!(encode_uplink(&f).unwrap().len(), MAX_FRAME_LEN);
    }

    #[test]
    fn ack_with_remaining() {
        let a = SyncAck {
            dev_addr: 0x0102_0304,
            fcnt: 0x0a0b,
            remaining_ms: Some(1757),
        };
        let bytes = encode_ack(&a).unwrap();
        assert_eq!(
            bytes,
            [0x60, 0x04, 0x03, 0x02, 0x01, 0x22, 0x0b, 0x0a, 0x06, 0xDD]
        );
        assert_eq!(decode_ack(&bytes).unwrap(), a);
    }

    #[test]
    fn ack_without_remaining() {
        let a = SyncAck {
            dev_addr: 7,
            fcnt: 3,
            remaining_ms: None,
        };
        let bytes = encode_ack(&a).unwrap();
        assert_eq!(bytes.len(), 8);
        assert_eq!(bytes[5] & FOPTS_LEN_MASK, 0);
        assert_eq!(decode_ack(&bytes).unwrap().remaining_ms, None);
    }

    #[test]
    fn ack_zero_remaining_is_present() {
        let a = SyncAck {
            dev_addr: 7,
            fcnt: 3,
            remaining_ms: Some(0),
        };
        let bytes = encode_ack(&a).unwrap();
        assert_eq!(&bytes[8..], [0x00, 0x00]);
        assert_eq!(decode_ack(&bytes).unwrap().remaining_ms, Some(0));
    }

    #[test]
    fn ack_remaining_out_of_range() {
        let a = SyncAck {
            dev_addr: 7,
            fcnt: 3,
            remaining_ms: Some(65_536),
        };
        assert_eq!(
            encode_ack(&a),
            Err(EncodeError::RemainingOutOfRange(65_536))
        );
    }

    #[test]
    fn decode_errors() {
        assert_eq!(
            decode_ack(&[0x60, 0x01, 0x02]),
            Err(DecodeError {
                offset: 1,
                kind: DecodeErrorKind::Truncated { needed: 4 }
            })
        );
        assert_eq!(decode_ack(&[]).unwrap_err().offset, 0);
        assert_eq!(
            decode_ack(&[0x40, 0, 0, 0, 0, 0x20, 0, 0])
                .unwrap_err()
                .kind,
            DecodeErrorKind::BadMhdr(0x40)
        );
        assert_eq!(
            decode_ack(&[0x60, 0, 0, 0, 0, 0x00, 0, 0])
                .unwrap_err()
                .kind,
            DecodeErrorKind::MissingAckFlag
        );
        // declares 2 FOpts bytes but carries one
        assert_eq!(
            decode_ack(&[0x60, 0, 0, 0, 0, 0x22, 0, 0, 0x06]),
            Err(DecodeError {
                offset: 8,
                kind: DecodeErrorKind::Truncated { needed: 2 }
            })
        );
        assert_eq!(
            decode_ack(&[0x60, 0, 0, 0, 0, 0x23, 0, 0, 1, 2, 3])
                .unwrap_err()
                .kind,
            DecodeErrorKind::UnexpectedFOpts(3)
        );
        assert_eq!(
            decode_ack(&[0x60, 0, 0, 0, 0, 0x20, 0, 0, 9]).unwrap_err(),
            DecodeError {
                offset: 8,
                kind: DecodeErrorKind::TrailingBytes
            }
        );
        assert_eq!(
            decode_uplink(&[0x40, 0, 0, 0, 0, 0x01, 0, 0, 0xC6, 0])
                .unwrap_err()
                .kind,
            DecodeErrorKind::UnexpectedFOpts(1)
        );
        assert_eq!(
            decode_uplink(&[0x40, 0, 0, 0, 0, 0, 0, 0])
                .unwrap_err()
                .kind,
            DecodeErrorKind::Truncated { needed: 1 }
        );
        assert_eq!(
            decode_uplink(&vec![0x40; 256]).unwrap_err().kind,
            DecodeErrorKind::TooLong
        );
    }
}
