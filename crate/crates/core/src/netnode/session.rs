use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};
use std::sync::Arc;

use rand::Rng;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use super::{KnownInventory, NodeConfig, NodeContext, NodeError};
use crate::records::{
    now_ms, AnnounceKind, ConnectionRecord, Direction, Event, PropagationRecord,
};
use crate::wire::{
    decode_message_with_limit, encode_message_with_limit, AddrEntry, InvType, InvVector,
    NetAddr, Network, Payload, TxId, VersionPayload, WireError, WireMessage, MAX_ADDR_ENTRIES,
};

const READ_CHUNK: usize = 16 * 1024;

/// A framed P2P byte stream.
pub struct Session {
    stream: TcpStream,
    buf: Vec<u8>,
    network: Network,
    max_payload: usize,
    /// VERSION received from the remote, if any.
    pub remote_version: Option<VersionPayload>,
    pub got_verack: bool,
}

impl Session {
    pub fn new(stream: TcpStream, network: Network, max_payload: usize) -> Self {
        Session {
            stream,
            buf: Vec::with_capacity(READ_CHUNK),
            network,
            max_payload,
            remote_version: None,
            got_verack: false,
        }
    }

    pub fn peer_addr(&self) -> Option<SocketAddr> {
        self.stream.peer_addr().ok()
    }

    /// Writes one message; returns the wall-clock millisecond at which the
    /// first byte was handed to the socket.
    pub async fn send(&mut self, payload: Payload) -> Result<u64, NodeError> {
        let frame =
            encode_message_with_limit(&WireMessage::new(self.network, payload), self.max_payload)?;
        let at = now_ms();
        self.stream.write_all(&frame).await?;
        Ok(at)
    }

    /// Next complete message. [`NodeError::Closed`] on orderly EOF.
    pub async fn recv(&mut self) -> Result<WireMessage, NodeError> {
        loop {
            if !self.buf.is_empty() {
                match decode_message_with_limit(&self.buf, self.network, self.max_payload) {
                    Ok((msg, used)) => {
                        self.buf.drain(..used);
                        return Ok(msg);
                    }
                    Err(WireError::Incomplete { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            self.buf.reserve(READ_CHUNK);
            // read_buf is cancel safe, so recv can sit inside select!.
            match self.stream.read_buf(&mut self.buf).await {
                Ok(0) => return Err(NodeError::Closed),
                Ok(_) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub async fn shutdown(&mut self) {
        let _ = self.stream.shutdown().await;
    }
}

fn local_version(config: &NodeConfig, remote: Option<SocketAddr>) -> VersionPayload {
    let mut v = VersionPayload::new(
        config.user_agent.clone(),
        (now_ms() / 1000) as i64,
        rand::thread_rng().gen(),
    );
    v.protocol_version = config.protocol_version;
    v.relay = config.relay_transactions;
    if let Some(SocketAddr::V4(addr)) = remote {
        v.receiver = NetAddr::from_v4(0, addr);
    }
    v
}

/// Exchange VERSION and VERACK with the remote.
///
/// Our VERSION goes out first; the remote's VERSION and VERACK are accepted in
/// either order. Returns the remote user agent, which may be empty.
pub async fn handshake(session: &mut Session, config: &NodeConfig) -> Result<String, NodeError> {
    let fut = async {
        let ours = local_version(config, session.peer_addr());
        session.send(Payload::Version(ours)).await?;
        while session.remote_version.is_none() || !session.got_verack {
            match session.recv().await?.payload {
                Payload::Version(v) => {
                    if session.remote_version.is_none() {
                        session.remote_version = Some(v);
                        session.send(Payload::Verack).await?;
                    }
                }
                Payload::Verack => session.got_verack = true,
                Payload::Ping(n) => {
                    session.send(Payload::Pong(n)).await?;
                }
                other => log::debug!("ignoring '{}' before handshake", other.command()),
            }
        }
        Ok(session
            .remote_version
            .as_ref()
            .map(|v| v.user_agent.clone())
            .unwrap_or_default())
    };
    tokio::time::timeout(config.handshake_timeout, fut)
        .await
        .map_err(|_| NodeError::HandshakeTimeout(config.handshake_timeout))?
}

pub(crate) enum Dispatch {
    Handled,
    GetData(Vec<InvVector>),
}

/// One logged connection: the session plus its record and inventory state.
pub(crate) struct PeerLink {
    pub ctx: Arc<NodeContext>,
    pub session: Session,
    pub record: ConnectionRecord,
    pub known: KnownInventory,
    emitted: bool,
}

impl PeerLink {
    pub fn open(
        ctx: Arc<NodeContext>,
        stream: TcpStream,
        remote: SocketAddrV4,
        direction: Direction,
    ) -> Self {
        let (id, open) = ctx.ids.allocate();
        let session = Session::new(stream, ctx.config.network, ctx.config.max_payload);
        let known = KnownInventory::new(ctx.config.known_inventory_cap);
        PeerLink {
            record: ConnectionRecord {
                connection_id: id,
                remote_ip: *remote.ip(),
                remote_port: remote.port(),
                direction,
                open_time: open,
                close_time: None,
                version_string: None,
                handshake_completed: false,
            },
            ctx,
            session,
            known,
            emitted: false,
        }
    }

    pub async fn handshake(&mut self) -> Result<(), NodeError> {
        let result = handshake(&mut self.session, &self.ctx.config).await;
        self.record.version_string = self
            .session
            .remote_version
            .as_ref()
            .map(|v| v.user_agent.clone());
        result.map(|_| self.record.handshake_completed = true)
    }

    fn propagation(&self, tx_id: TxId, kind: AnnounceKind) {
        self.ctx.sink.record(Event::Propagation(PropagationRecord {
            tx_id,
            connection_id: self.record.connection_id,
            remote_ip: self.record.remote_ip,
            receive_time: now_ms(),
            announce_kind: kind,
        }));
    }

    /// Process one post-handshake message.
    pub async fn dispatch(&mut self, msg: WireMessage) -> Result<Dispatch, NodeError> {
        match msg.payload {
            Payload::Inv(items) => {
                let mut wanted = Vec::new();
                for item in items.iter().filter(|i| i.object_type == InvType::Tx) {
                    self.propagation(item.hash, AnnounceKind::Inv);
                    if self.known.insert(item.hash) {
                        wanted.push(*item);
                    }
                }
                if !wanted.is_empty() {
                    self.session.send(Payload::GetData(wanted)).await?;
                }
            }
            Payload::Tx(raw) => {
                let id = TxId::of_raw_tx(&raw);
                self.propagation(id, AnnounceKind::FullTx);
                self.known.insert(id);
            }
            Payload::GetData(items) => return Ok(Dispatch::GetData(items)),
            Payload::Ping(n) => {
                self.session.send(Payload::Pong(n)).await?;
            }
            Payload::GetAddr => {
                let entries: Vec<AddrEntry> = self
                    .ctx
                    .addrs
                    .lock()
                    .expect("addr book poisoned")
                    .sample(MAX_ADDR_ENTRIES)
                    .into_iter()
                    .map(|a| AddrEntry {
                        time: (now_ms() / 1000) as u32,
                        addr: NetAddr::from_v4(0, a),
                    })
                    .collect();
                self.session.send(Payload::Addr(entries)).await?;
            }
            Payload::Addr(entries) => {
                let mut book = self.ctx.addrs.lock().expect("addr book poisoned");
                for e in entries {
                    if let Some(ip) = e.addr.ipv4() {
                        book.learn(SocketAddrV4::new(ip, e.addr.port));
                    }
                }
            }
            Payload::Unknown { command, payload } => {
                log::debug!(
                    "conn {}: unhandled '{command}' ({} bytes)",
                    self.record.connection_id,
                    payload.len()
                );
            }
            Payload::Version(_) | Payload::Verack | Payload::Pong(_) | Payload::Reject(_) => {}
        }
        Ok(Dispatch::Handled)
    }

    /// Emit the connection record. `closed` false means the node is shutting
    /// down with this connection still open.
    pub fn finish(&mut self, closed: bool) {
        if self.emitted {
            return;
        }
        self.emitted = true;
        if closed {
            self.record.close_time = Some(now_ms().max(self.record.open_time));
        }
        self.ctx.sink.record(Event::Connection(self.record.clone()));
    }
}

impl Drop for PeerLink {
    fn drop(&mut self) {
        self.finish(true);
    }
}

pub(crate) fn v4(addr: SocketAddr) -> SocketAddrV4 {
    match addr {
        SocketAddr::V4(a) => a,
        SocketAddr::V6(a) => SocketAddrV4::new(
            a.ip().to_ipv4_mapped().unwrap_or(Ipv4Addr::UNSPECIFIED),
            a.port(),
        ),
    }
}
