//! Message framing and the typed payloads the measurement tools exchange.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr, SocketAddrV4};
use std::str::FromStr;

use bytes::BufMut;
use serde::{Deserialize, Serialize};

use super::hash::{checksum, Hash256};
use super::varint::{decode_varint, put_varint};
use super::WireError;

pub const HEADER_LEN: usize = 24;
pub const COMMAND_LEN: usize = 12;
/// Default cap on a single payload, matching the reference client's 4 MB limit.
pub const DEFAULT_MAX_PAYLOAD: usize = 4 * 1000 * 1000;
pub const DEFAULT_PROTOCOL_VERSION: i32 = 70015;
/// Upper bound on inventory entries per inv/getdata message.
pub const MAX_INV_ENTRIES: usize = 50_000;
pub const MAX_ADDR_ENTRIES: usize = 1_000;

/// Which network a frame belongs to, identified by its 4-byte magic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Network {
    Mainnet,
    Testnet,
    /// Private test networks with their own magic (wire byte order).
    Custom([u8; 4]),
}

impl Network {
    pub fn magic(self) -> [u8; 4] {
        match self {
            Network::Mainnet => [0xf9, 0xbe, 0xb4, 0xd9],
            Network::Testnet => [0x0b, 0x11, 0x09, 0x07],
            Network::Custom(m) => m,
        }
    }

    pub fn default_port(self) -> u16 {
        match self {
            Network::Testnet => 18333,
            _ => 8333,
        }
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Network::Mainnet => f.write_str("mainnet"),
            Network::Testnet => f.write_str("testnet"),
            Network::Custom(m) => write!(f, "{}", hex::encode(m)),
        }
    }
}

impl FromStr for Network {
    type Err = String;

    /// Accepts `mainnet`, `testnet`, or eight hex digits of magic in wire order.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mainnet" | "main" => Ok(Network::Mainnet),
            "testnet" | "test" | "testnet3" => Ok(Network::Testnet),
            other => {
                let mut magic = [0u8; 4];
                hex::decode_to_slice(other.trim_start_matches("0x"), &mut magic)
                    .map_err(|_| format!("unknown network '{s}'"))?;
                Ok(Network::Custom(magic))
            }
        }
    }
}

/// Inventory object kinds. Only transactions matter to us; anything else is
/// carried through untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvType {
    Tx,
    Block,
    Other(u32),
}

impl InvType {
    fn code(self) -> u32 {
        match self {
            InvType::Tx => 1,
            InvType::Block => 2,
            InvType::Other(c) => c,
        }
    }

    fn from_code(c: u32) -> Self {
        match c {
            1 => InvType::Tx,
            2 => InvType::Block,
            c => InvType::Other(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InvVector {
    pub object_type: InvType,
    pub hash: Hash256,
}

impl InvVector {
    pub fn tx(id: Hash256) -> Self {
        InvVector {
            object_type: InvType::Tx,
            hash: id,
        }
    }
}

/// Network address as it appears in version and addr messages (no timestamp).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetAddr {
    pub services: u64,
    /// IPv6 or IPv4-mapped IPv6 address, network byte order.
    pub ip: [u8; 16],
    pub port: u16,
}

impl NetAddr {
    pub fn from_v4(services: u64, addr: SocketAddrV4) -> Self {
        NetAddr {
            services,
            ip: addr.ip().to_ipv6_mapped().octets(),
            port: addr.port(),
        }
    }

    pub fn unspecified() -> Self {
        NetAddr {
            services: 0,
            ip: Ipv4Addr::UNSPECIFIED.to_ipv6_mapped().octets(),
            port: 0,
        }
    }

    pub fn ipv4(&self) -> Option<Ipv4Addr> {
        Ipv6Addr::from(self.ip).to_ipv4_mapped()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AddrEntry {
    pub time: u32,
    pub addr: NetAddr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionPayload {
    pub protocol_version: i32,
    pub services: u64,
    pub timestamp: i64,
    pub receiver: NetAddr,
    pub sender: NetAddr,
    pub nonce: u64,
    /// Self-reported software name, e.g. `/Satoshi:0.14.1/`. May be empty.
    pub user_agent: String,
    pub start_height: i32,
    /// False asks the remote not to announce loose transactions to us.
    pub relay: bool,
}

impl VersionPayload {
    pub fn new(user_agent: impl Into<String>, timestamp: i64, nonce: u64) -> Self {
        VersionPayload {
            protocol_version: DEFAULT_PROTOCOL_VERSION,
            services: 0,
            timestamp,
            receiver: NetAddr::unspecified(),
            sender: NetAddr::unspecified(),
            nonce,
            user_agent: user_agent.into(),
            start_height: 0,
            relay: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectPayload {
    pub message: String,
    pub code: u8,
    pub reason: String,
    /// Optional trailing data, usually the hash of the rejected object.
    pub data: Vec<u8>,
}

/// Command-specific message body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Version(VersionPayload),
    Verack,
    Ping(u64),
    Pong(u64),
    Inv(Vec<InvVector>),
    GetData(Vec<InvVector>),
    /// Raw serialized transaction, treated as an opaque blob.
    Tx(Vec<u8>),
    Addr(Vec<AddrEntry>),
    GetAddr,
    Reject(RejectPayload),
    /// Any command we do not interpret. Surfaced so it can be logged.
    Unknown { command: String, payload: Vec<u8> },
}

impl Payload {
    pub fn command(&self) -> &str {
        match self {
            Payload::Version(_) => "version",
            Payload::Verack => "verack",
            Payload::Ping(_) => "ping",
            Payload::Pong(_) => "pong",
            Payload::Inv(_) => "inv",
            Payload::GetData(_) => "getdata",
            Payload::Tx(_) => "tx",
            Payload::Addr(_) => "addr",
            Payload::GetAddr => "getaddr",
            Payload::Reject(_) => "reject",
            Payload::Unknown { command, .. } => command,
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Payload::Version(v) => {
                out.put_i32_le(v.protocol_version);
                out.put_u64_le(v.services);
                out.put_i64_le(v.timestamp);
                put_netaddr(out, &v.receiver);
                put_netaddr(out, &v.sender);
                out.put_u64_le(v.nonce);
                put_bytes(out, v.user_agent.as_bytes());
                out.put_i32_le(v.start_height);
                out.put_u8(u8::from(v.relay));
            }
            Payload::Verack | Payload::GetAddr => {}
            Payload::Ping(n) | Payload::Pong(n) => out.put_u64_le(*n),
            Payload::Inv(items) | Payload::GetData(items) => {
                put_varint(out, items.len() as u64);
                for item in items {
                    out.put_u32_le(item.object_type.code());
                    out.put_slice(&item.hash.0);
                }
            }
            Payload::Tx(raw) => out.put_slice(raw),
            Payload::Addr(entries) => {
                put_varint(out, entries.len() as u64);
                for e in entries {
                    out.put_u32_le(e.time);
                    put_netaddr(out, &e.addr);
                }
            }
            Payload::Reject(r) => {
                put_bytes(out, r.message.as_bytes());
                out.put_u8(r.code);
                put_bytes(out, r.reason.as_bytes());
                out.put_slice(&r.data);
            }
            Payload::Unknown { payload, .. } => out.put_slice(payload),
        }
    }

    fn parse(command: &str, body: &[u8]) -> Result<Payload, WireError> {
        let mut r = Reader::new(command, body);
        let payload = match command {
            "version" => {
                let protocol_version = r.i32()?;
                let services = r.u64()?;
                let timestamp = r.i64()?;
                let receiver = r.netaddr()?;
                let sender = r.netaddr()?;
                let nonce = r.u64()?;
                let user_agent = r.string()?;
                let start_height = r.i32()?;
                // Peers older than BIP37 omit the relay flag; it then defaults to true.
                let relay = if r.is_empty() { true } else { r.u8()? != 0 };
                Payload::Version(VersionPayload {
                    protocol_version,
                    services,
                    timestamp,
                    receiver,
                    sender,
                    nonce,
                    user_agent,
                    start_height,
                    relay,
                })
            }
            "verack" => Payload::Verack,
            "getaddr" => Payload::GetAddr,
            "ping" => Payload::Ping(r.u64()?),
            "pong" => Payload::Pong(r.u64()?),
            "inv" => Payload::Inv(r.inv_list()?),
            "getdata" => Payload::GetData(r.inv_list()?),
            "tx" => Payload::Tx(body.to_vec()),
            "addr" => {
                let n = r.count(MAX_ADDR_ENTRIES)?;
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    let time = r.u32()?;
                    let addr = r.netaddr()?;
                    entries.push(AddrEntry { time, addr });
                }
                Payload::Addr(entries)
            }
            "reject" => {
                let message = r.string()?;
                let code = r.u8()?;
                let reason = r.string()?;
                let data = r.rest().to_vec();
                Payload::Reject(RejectPayload {
                    message,
                    code,
                    reason,
                    data,
                })
            }
            other => {
                return Ok(Payload::Unknown {
                    command: other.to_string(),
                    payload: body.to_vec(),
                })
            }
        };
        Ok(payload)
    }
}

/// A decoded frame: which network it travelled on plus its typed body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub network: Network,
    pub payload: Payload,
}

impl WireMessage {
    pub fn new(network: Network, payload: Payload) -> Self {
        WireMessage { network, payload }
    }

    pub fn command(&self) -> &str {
        self.payload.command()
    }
}

fn put_netaddr(out: &mut Vec<u8>, a: &NetAddr) {
    out.put_u64_le(a.services);
    out.put_slice(&a.ip);
    out.put_u16(a.port);
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_varint(out, b.len() as u64);
    out.put_slice(b);
}

fn command_bytes(command: &str) -> Result<[u8; COMMAND_LEN], WireError> {
    let raw = command.as_bytes();
    if raw.is_empty()
        || raw.len() > COMMAND_LEN
        || !raw.iter().all(|b| b.is_ascii_graphic())
    {
        return Err(WireError::InvalidCommand(command.to_string()));
    }
    let mut out = [0u8; COMMAND_LEN];
    out[..raw.len()].copy_from_slice(raw);
    Ok(out)
}

fn parse_command(raw: &[u8]) -> Result<String, WireError> {
    let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
    let (name, pad) = raw.split_at(end);
    if name.is_empty()
        || !name.iter().all(|b| b.is_ascii_graphic())
        || pad.iter().any(|&b| b != 0)
    {
        return Err(WireError::InvalidCommand(
            String::from_utf8_lossy(raw).into_owned(),
        ));
    }
    // Checked ASCII above.
    Ok(String::from_utf8(name.to_vec()).unwrap_or_default())
}

/// Serialize just the payload of `payload`.
pub fn encode_payload(payload: &Payload) -> Vec<u8> {
    let mut out = Vec::new();
    payload.write(&mut out);
    out
}

/// Frame `msg` with the default payload limit.
pub fn encode_message(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    encode_message_with_limit(msg, DEFAULT_MAX_PAYLOAD)
}

/// Emit `magic ‖ command ‖ length ‖ checksum ‖ payload`.
pub fn encode_message_with_limit(
    msg: &WireMessage,
    max_payload: usize,
) -> Result<Vec<u8>, WireError> {
    let command = command_bytes(msg.command())?;
    let body = encode_payload(&msg.payload);
    if body.len() > max_payload {
        return Err(WireError::Oversize {
            len: body.len(),
            max: max_payload,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.put_slice(&msg.network.magic());
    out.put_slice(&command);
    out.put_u32_le(body.len() as u32);
    out.put_slice(&checksum(&body));
    out.put_slice(&body);
    Ok(out)
}

/// Parse one frame from the front of `buf` using the default payload limit.
///
/// Returns the message and the number of bytes it occupied. When the buffer
/// holds only part of a frame, [`WireError::Incomplete`] is returned and the
/// caller should read more.
pub fn decode_message(buf: &[u8], network: Network) -> Result<(WireMessage, usize), WireError> {
    decode_message_with_limit(buf, network, DEFAULT_MAX_PAYLOAD)
}

pub fn decode_message_with_limit(
    buf: &[u8],
    network: Network,
    max_payload: usize,
) -> Result<(WireMessage, usize), WireError> {
    let expected = network.magic();
    // Reject bad magic as early as possible, even on a partial header.
    let seen = buf.len().min(4);
    if buf[..seen] != expected[..seen] {
        let mut found = [0u8; 4];
        found[..seen].copy_from_slice(&buf[..seen]);
        return Err(WireError::BadMagic { expected, found });
    }
    if buf.len() < HEADER_LEN {
        return Err(WireError::Incomplete { needed: HEADER_LEN });
    }
    let command = parse_command(&buf[4..16])?;
    let len = u32::from_le_bytes(buf[16..20].try_into().expect("4 bytes")) as usize;
    if len > max_payload {
        return Err(WireError::Oversize {
            len,
            max: max_payload,
        });
    }
    let total = HEADER_LEN + len;
    if buf.len() < total {
        return Err(WireError::Incomplete { needed: total });
    }
    let header: [u8; 4] = buf[20..24].try_into().expect("4 bytes");
    let body = &buf[HEADER_LEN..total];
    let computed = checksum(body);
    if header != computed {
        return Err(WireError::Checksum {
            command,
            header,
            computed,
        });
    }
    let payload = Payload::parse(&command, body)?;
    Ok((WireMessage { network, payload }, total))
}

/// Bounds-checked little-endian reader over one payload.
struct Reader<'a> {
    command: &'a str,
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(command: &'a str, buf: &'a [u8]) -> Self {
        Reader { command, buf }
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::malformed(
                self.command,
                format!("truncated: wanted {n} bytes, {} left", self.buf.len()),
            ));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn i32(&mut self) -> Result<i32, WireError> {
        Ok(i32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn varint(&mut self) -> Result<u64, WireError> {
        let v = decode_varint(self.buf)
            .map_err(|_| WireError::malformed(self.command, "truncated varint"))?;
        self.buf = &self.buf[v.consumed..];
        Ok(v.value)
    }

    fn count(&mut self, max: usize) -> Result<usize, WireError> {
        let n = self.varint()?;
        if n > max as u64 {
            return Err(WireError::malformed(
                self.command,
                format!("{n} entries exceeds {max}"),
            ));
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String, WireError> {
        let n = self.varint()?;
        if n > self.buf.len() as u64 {
            return Err(WireError::malformed(self.command, "string overruns payload"));
        }
        let raw = self.take(n as usize)?;
        Ok(String::from_utf8_lossy(raw).into_owned())
    }

    fn netaddr(&mut self) -> Result<NetAddr, WireError> {
        let services = self.u64()?;
        let ip = self.array::<16>()?;
        let port = u16::from_be_bytes(self.array()?);
        Ok(NetAddr { services, ip, port })
    }

    fn inv_list(&mut self) -> Result<Vec<InvVector>, WireError> {
        let n = self.count(MAX_INV_ENTRIES)?;
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            let object_type = InvType::from_code(self.u32()?);
            let hash = Hash256(self.array()?);
            items.push(InvVector { object_type, hash });
        }
        Ok(items)
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }
}
