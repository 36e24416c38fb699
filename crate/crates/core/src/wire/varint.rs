//! Bitcoin CompactSize integers.
//!
//! Writes are always minimal. Reads accept non-minimal encodings and report
//! them through [`VarInt::canonical`] so callers can log the oddity.

use bytes::BufMut;

use super::WireError;

/// A decoded CompactSize value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarInt {
    pub value: u64,
    /// Bytes taken from the input, prefix included.
    pub consumed: usize,
    /// False when a shorter encoding of `value` exists.
    pub canonical: bool,
}

/// Number of bytes [`encode_varint`] emits for `n`.
pub fn varint_len(n: u64) -> usize {
    match n {
        0..=0xfc => 1,
        0xfd..=0xffff => 3,
        0x1_0000..=0xffff_ffff => 5,
        _ => 9,
    }
}

pub fn encode_varint(n: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(varint_len(n));
    put_varint(&mut out, n);
    out
}

pub(crate) fn put_varint(out: &mut impl BufMut, n: u64) {
    match n {
        0..=0xfc => out.put_u8(n as u8),
        0xfd..=0xffff => {
            out.put_u8(0xfd);
            out.put_u16_le(n as u16);
        }
        0x1_0000..=0xffff_ffff => {
            out.put_u8(0xfe);
            out.put_u32_le(n as u32);
        }
        _ => {
            out.put_u8(0xff);
            out.put_u64_le(n);
        }
    }
}

pub fn decode_varint(bytes: &[u8]) -> Result<VarInt, WireError> {
    let Some(&prefix) = bytes.first() else {
        return Err(WireError::Incomplete { needed: 1 });
    };
    let width = match prefix {
        0xfd => 2,
        0xfe => 4,
        0xff => 8,
        small => {
            return Ok(VarInt {
                value: u64::from(small),
                consumed: 1,
                canonical: true,
            })
        }
    };
    let body = bytes
        .get(1..1 + width)
        .ok_or(WireError::Incomplete { needed: 1 + width })?;
    let mut le = [0u8; 8];
    le[..width].copy_from_slice(body);
    let value = u64::from_le_bytes(le);
    Ok(VarInt {
        value,
        consumed: 1 + width,
        canonical: varint_len(value) == 1 + width,
    })
}
