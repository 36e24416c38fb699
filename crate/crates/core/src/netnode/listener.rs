use std::net::{SocketAddr, SocketAddrV4};
use std::sync::Arc;

use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinSet;

use super::session::{v4, Dispatch, PeerLink};
use super::{NodeConfig, NodeContext, NodeError};
use crate::records::{Direction, EventSink};

/// A bound, not yet running, measurement node.
pub struct Listener {
    inner: TcpListener,
    ctx: Arc<NodeContext>,
}

impl Listener {
    pub async fn bind(config: NodeConfig, sink: Arc<dyn EventSink>) -> Result<Self, NodeError> {
        config.validate()?;
        let addr = SocketAddrV4::new(config.bind_ip, config.listen_port);
        let inner = TcpListener::bind(addr)
            .await
            .map_err(|source| NodeError::Bind {
                addr: addr.to_string(),
                source,
            })?;
        Ok(Listener {
            inner,
            ctx: NodeContext::new(config, sink),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.inner.local_addr().expect("bound socket has an address")
    }

    pub fn context(&self) -> Arc<NodeContext> {
        Arc::clone(&self.ctx)
    }

    /// Accept peers until `shutdown` flips to true, then flush every open
    /// connection (with no close time) and return.
    pub async fn run(self, mut shutdown: watch::Receiver<bool>) -> Result<(), NodeError> {
        let mut handlers = JoinSet::new();
        log::info!("listening on {}", self.local_addr());
        loop {
            tokio::select! {
                accepted = self.inner.accept() => {
                    let (stream, remote) = match accepted {
                        Ok(pair) => pair,
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    let Some(slot) = self.ctx.try_reserve_inbound() else {
                        log::debug!("inbound cap reached, dropping {remote}");
                        drop(stream);
                        continue;
                    };
                    let ctx = Arc::clone(&self.ctx);
                    let stop = shutdown.clone();
                    handlers.spawn(async move {
                        serve_inbound(ctx, stream, v4(remote), stop).await;
                        drop(slot);
                    });
                }
                // Reap finished handlers so the set does not grow without bound.
                Some(_) = handlers.join_next(), if !handlers.is_empty() => {}
                changed = shutdown.changed() => {
                    if changed.is_err() || *shutdown.borrow() {
                        break;
                    }
                }
            }
        }
        while handlers.join_next().await.is_some() {}
        self.ctx.sink.flush();
        Ok(())
    }
}

/// Bind and serve until shutdown.
pub async fn run_listener(
    config: NodeConfig,
    sink: Arc<dyn EventSink>,
    shutdown: watch::Receiver<bool>,
) -> Result<(), NodeError> {
    Listener::bind(config, sink).await?.run(shutdown).await
}

async fn serve_inbound(
    ctx: Arc<NodeContext>,
    stream: TcpStream,
    remote: SocketAddrV4,
    mut shutdown: watch::Receiver<bool>,
) {
    let _ = stream.set_nodelay(true);
    let mut link = PeerLink::open(ctx, stream, remote, Direction::Inbound);
    let id = link.record.connection_id;
    let closed = tokio::select! {
        r = drive(&mut link) => {
            if let Err(e) = r {
                log::debug!("conn {id} ({remote}): {e}");
            }
            true
        }
        _ = wait_for_shutdown(&mut shutdown) => false,
    };
    link.finish(closed);
}

async fn drive(link: &mut PeerLink) -> Result<(), NodeError> {
    link.handshake().await?;
    loop {
        let msg = link.session.recv().await?;
        match link.dispatch(msg).await? {
            Dispatch::Handled => {}
            // We announce nothing on inbound links, so there is nothing to serve.
            Dispatch::GetData(_) => {}
        }
    }
}

pub(crate) async fn wait_for_shutdown(rx: &mut watch::Receiver<bool>) {
    loop {
        if *rx.borrow() {
            return;
        }
        // A dropped sender counts as a shutdown request.
        if rx.changed().await.is_err() {
            return;
        }
    }
}
