//! The measurement node.
//!
//! Accepts inbound peers, completes the version handshake, and logs one
//! [`ConnectionRecord`](crate::records::ConnectionRecord) per connection plus
//! one [`PropagationRecord`](crate::records::PropagationRecord) per
//! transaction announcement or delivery. It holds no chain state and never
//! asks for blocks or headers. It can also dial several parallel sessions to
//! one target, which is how a timing listener attaches to public servers.

mod addrbook;
mod inventory;
mod listener;
mod outbound;
mod session;

use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::records::{now_ms, EventSink};
use crate::wire::{Network, WireError, DEFAULT_MAX_PAYLOAD, DEFAULT_PROTOCOL_VERSION};

pub use addrbook::{is_public, AddrBook};
pub use inventory::{KnownInventory, DEFAULT_KNOWN_INVENTORY};
pub use listener::{run_listener, Listener};
pub use outbound::{open_parallel_connections, PeerConnection, SendOutcome};
pub use session::{handshake, Session};

pub const DEFAULT_USER_AGENT: &str = "/btcwatch-research:0.1.0/";
pub const DEFAULT_MAX_INBOUND: usize = 117;
pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

/// Substrings that would make our user agent look like a mainstream client.
const RESERVED_AGENT_NAMES: &[&str] = &["Satoshi", "breadwallet", "Bitcoin Wallet", "bitcoinj", "btcd"];

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub listen_port: u16,
    pub bind_ip: std::net::Ipv4Addr,
    pub max_inbound: usize,
    pub user_agent: String,
    pub network: Network,
    /// Sent as the version relay flag; false asks peers not to announce transactions.
    pub relay_transactions: bool,
    pub log_path: Option<PathBuf>,
    pub protocol_version: i32,
    pub handshake_timeout: Duration,
    /// How long `send_transaction` waits for the peer's getdata.
    pub getdata_timeout: Duration,
    /// Push the raw transaction right after the inv instead of waiting for getdata.
    pub push_tx_directly: bool,
    pub known_inventory_cap: usize,
    pub max_payload: usize,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            listen_port: 8333,
            bind_ip: std::net::Ipv4Addr::UNSPECIFIED,
            max_inbound: DEFAULT_MAX_INBOUND,
            user_agent: DEFAULT_USER_AGENT.to_string(),
            network: Network::Mainnet,
            relay_transactions: true,
            log_path: None,
            protocol_version: DEFAULT_PROTOCOL_VERSION,
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            getdata_timeout: Duration::from_secs(10),
            push_tx_directly: false,
            known_inventory_cap: DEFAULT_KNOWN_INVENTORY,
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), NodeError> {
        if self.max_inbound == 0 {
            return Err(NodeError::Config("max_inbound must be at least 1".into()));
        }
        if let Some(name) = RESERVED_AGENT_NAMES
            .iter()
            .find(|n| self.user_agent.contains(*n))
        {
            return Err(NodeError::Config(format!(
                "user agent '{}' imitates '{name}'; pick a distinguishable name",
                self.user_agent
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("invalid node config: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Wire(#[from] WireError),
    #[error("handshake timed out after {0:?}")]
    HandshakeTimeout(Duration),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("connection closed by peer")]
    Closed,
    #[error("shutdown requested")]
    Shutdown,
}

/// Allocates connection ids together with their open timestamps so that ids
/// increase in open-time order across all handlers.
#[derive(Debug, Default)]
pub struct ConnectionIds {
    next: Mutex<u64>,
}

impl ConnectionIds {
    pub fn allocate(&self) -> (u64, u64) {
        let mut next = self.next.lock().expect("id allocator poisoned");
        let id = *next;
        *next += 1;
        (id, now_ms())
    }
}

/// State shared by every connection handler of one node instance.
pub struct NodeContext {
    pub config: NodeConfig,
    pub sink: Arc<dyn EventSink>,
    pub ids: ConnectionIds,
    pub addrs: Mutex<AddrBook>,
    active_inbound: AtomicUsize,
}

impl NodeContext {
    pub fn new(config: NodeConfig, sink: Arc<dyn EventSink>) -> Arc<Self> {
        Arc::new(NodeContext {
            config,
            sink,
            ids: ConnectionIds::default(),
            addrs: Mutex::new(AddrBook::default()),
            active_inbound: AtomicUsize::new(0),
        })
    }

    fn try_reserve_inbound(self: &Arc<Self>) -> Option<InboundSlot> {
        let cap = self.config.max_inbound;
        self.active_inbound
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |n| {
                (n < cap).then_some(n + 1)
            })
            .ok()
            .map(|_| InboundSlot(Arc::clone(self)))
    }

    pub fn active_inbound(&self) -> usize {
        self.active_inbound.load(Ordering::Acquire)
    }
}

struct InboundSlot(Arc<NodeContext>);

impl Drop for InboundSlot {
    fn drop(&mut self) {
        self.0.active_inbound.fetch_sub(1, Ordering::AcqRel);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_confusable_agent() {
        let cfg = NodeConfig {
            user_agent: "/Satoshi:0.14.1/".into(),
            ..NodeConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(NodeError::Config(_))));
        assert!(NodeConfig::default().validate().is_ok());
    }

    #[test]
    fn config_rejects_zero_inbound() {
        let cfg = NodeConfig {
            max_inbound: 0,
            ..NodeConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ids_increase() {
        let ids = ConnectionIds::default();
        let (a, ta) = ids.allocate();
        let (b, tb) = ids.allocate();
        assert!(b > a && tb >= ta);
    }
}
