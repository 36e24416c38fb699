#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use btcwatch_core::netnode::{Listener, NodeConfig, NodeContext, Session};
use btcwatch_core::records::MemorySink;
use btcwatch_core::wire::{Network, Payload, VersionPayload, DEFAULT_MAX_PAYLOAD};
use tokio::net::TcpStream;
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub struct RunningNode {
    pub addr: SocketAddr,
    pub sink: Arc<MemorySink>,
    pub ctx: Arc<NodeContext>,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl RunningNode {
    pub async fn start(mut config: NodeConfig) -> Self {
        config.bind_ip = std::net::Ipv4Addr::LOCALHOST;
        config.listen_port = 0;
        let sink = Arc::new(MemorySink::new());
        let listener = Listener::bind(config, sink.clone()).await.unwrap();
        let addr = listener.local_addr();
        let ctx = listener.context();
        let (stop, rx) = watch::channel(false);
        let task = tokio::spawn(async move {
            listener.run(rx).await.unwrap();
        });
        RunningNode { addr, sink, ctx, stop, task }
    }

    pub async fn stop(self) -> Arc<MemorySink> {
        self.stop.send(true).unwrap();
        self.task.await.unwrap();
        self.sink
    }
}

pub fn fast_config() -> NodeConfig {
    NodeConfig {
        network: Network::Testnet,
        handshake_timeout: Duration::from_millis(300),
        ..NodeConfig::default()
    }
}

/// A hand-driven remote peer.
pub async fn dial(addr: SocketAddr) -> Session {
    let stream = TcpStream::connect(addr).await.unwrap();
    stream.set_nodelay(true).unwrap();
    Session::new(stream, Network::Testnet, DEFAULT_MAX_PAYLOAD)
}

pub fn version(ua: &str) -> Payload {
    Payload::Version(VersionPayload::new(ua, 1_500_000_000, 7))
}

/// Wait until the remote's VERSION and VERACK both arrived.
pub async fn await_handshake(s: &mut Session) {
    let mut v = false;
    let mut a = false;
    while !(v && a) {
        match s.recv().await.unwrap().payload {
            Payload::Version(_) => v = true,
            Payload::Verack => a = true,
            _ => {}
        }
    }
}

/// Poll until `cond` holds or the deadline passes.
pub async fn eventually(mut cond: impl FnMut() -> bool) {
    for _ in 0..400 {
        if cond() {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("condition not reached");
}
