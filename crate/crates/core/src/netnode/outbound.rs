use std::net::SocketAddrV4;
use std::sync::Arc;

use tokio::net::TcpStream;
use tokio::sync::watch;

use super::listener::wait_for_shutdown;
use super::session::{Dispatch, PeerLink};
use super::{NodeContext, NodeError};
use crate::records::{ConnectionRecord, Direction};
use crate::wire::{InvType, InvVector, Payload, TxId};

/// What `send_transaction` did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    /// The inv went out; the value is the millisecond its first byte was written.
    Sent { first_byte_ms: u64, tx_id: TxId },
    /// The peer already knows this transaction from us, so nothing was sent.
    Suppressed { tx_id: TxId },
}

/// An outbound session that completed the handshake. Its connection record
/// is emitted when it is closed or dropped.
pub struct PeerConnection {
    link: PeerLink,
}

impl PeerConnection {
    pub async fn connect(ctx: Arc<NodeContext>, target: SocketAddrV4) -> Result<Self, NodeError> {
        let stream = TcpStream::connect(target).await?;
        let _ = stream.set_nodelay(true);
        let mut link = PeerLink::open(ctx, stream, target, Direction::Outbound);
        link.handshake().await?;
        Ok(PeerConnection { link })
    }

    pub fn record(&self) -> &ConnectionRecord {
        &self.link.record
    }

    pub fn remote_user_agent(&self) -> &str {
        self.link.record.version_string.as_deref().unwrap_or("")
    }

    /// Announce `raw_tx` and deliver it.
    ///
    /// By default the raw bytes go out once the peer asks for them with
    /// getdata; with `push_tx_directly` they follow the inv immediately. A
    /// transaction this connection already exchanged is not announced again.
    pub async fn send_transaction(&mut self, raw_tx: &[u8]) -> Result<SendOutcome, NodeError> {
        let tx_id = TxId::of_raw_tx(raw_tx);
        if !self.link.known.insert(tx_id) {
            return Ok(SendOutcome::Suppressed { tx_id });
        }
        let first_byte_ms = self
            .link
            .session
            .send(Payload::Inv(vec![InvVector::tx(tx_id)]))
            .await?;
        if !self.link.ctx.config.push_tx_directly {
            let timeout = self.link.ctx.config.getdata_timeout;
            tokio::time::timeout(timeout, self.await_getdata(tx_id))
                .await
                .map_err(|_| NodeError::Timeout("getdata"))??;
        }
        self.link.session.send(Payload::Tx(raw_tx.to_vec())).await?;
        Ok(SendOutcome::Sent {
            first_byte_ms,
            tx_id,
        })
    }

    async fn await_getdata(&mut self, tx_id: TxId) -> Result<(), NodeError> {
        loop {
            let msg = self.link.session.recv().await?;
            if let Dispatch::GetData(items) = self.link.dispatch(msg).await? {
                if items
                    .iter()
                    .any(|i| i.object_type == InvType::Tx && i.hash == tx_id)
                {
                    return Ok(());
                }
            }
        }
    }

    /// Log everything the peer sends until it disconnects or `shutdown` fires.
    pub async fn run(mut self, mut shutdown: watch::Receiver<bool>) -> ConnectionRecord {
        let link = &mut self.link;
        let closed = tokio::select! {
            r = async {
                loop {
                    let msg = link.session.recv().await?;
                    link.dispatch(msg).await?;
                }
                #[allow(unreachable_code)]
                Ok::<(), NodeError>(())
            } => {
                if let Err(e) = r {
                    log::debug!("conn {}: {e}", link.record.connection_id);
                }
                true
            }
            _ = wait_for_shutdown(&mut shutdown) => false,
        };
        link.finish(closed);
        link.record.clone()
    }

    /// Close the socket and log the connection.
    pub async fn close(mut self) -> ConnectionRecord {
        self.link.session.shutdown().await;
        self.link.finish(true);
        self.link.record.clone()
    }
}

/// Dial `target` `n` times concurrently and handshake each session.
///
/// Failures are reported per connection; whatever succeeded is returned.
/// Sessions that reached TCP but failed later are still logged.
pub async fn open_parallel_connections(
    ctx: Arc<NodeContext>,
    target: SocketAddrV4,
    n: usize,
) -> Vec<Result<PeerConnection, NodeError>> {
    let attempts = (0..n).map(|_| {
        let ctx = Arc::clone(&ctx);
        tokio::spawn(PeerConnection::connect(ctx, target))
    });
    let handles: Vec<_> = attempts.collect();
    let mut out = Vec::with_capacity(n);
    for h in handles {
        out.push(match h.await {
            Ok(r) => r,
            Err(join) => Err(NodeError::Io(std::io::Error::other(join.to_string()))),
        });
    }
    out
}
