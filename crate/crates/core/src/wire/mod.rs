//! Encoder and decoder for the slice of the Bitcoin P2P protocol used for
//! handshakes, address gossip and transaction relay.
//!
//! Everything here is a pure function over byte slices. Integers are little
//! endian on the wire, hashes are stored in wire order and rendered reversed.

mod error;
mod hash;
mod message;
mod varint;

pub use error::WireError;
pub use hash::{checksum, double_sha256, Hash256, ParseHashError, TxId};
pub use message::{
    decode_message, decode_message_with_limit, encode_message, encode_message_with_limit,
    encode_payload, AddrEntry, InvType, InvVector, NetAddr, Network, Payload, RejectPayload,
    VersionPayload, WireMessage, COMMAND_LEN, DEFAULT_MAX_PAYLOAD, DEFAULT_PROTOCOL_VERSION,
    HEADER_LEN, MAX_ADDR_ENTRIES, MAX_INV_ENTRIES,
};
pub use varint::{decode_varint, encode_varint, varint_len, VarInt};

#[cfg(test)]
mod proptests;
