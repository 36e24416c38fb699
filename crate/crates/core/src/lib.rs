//! Bitcoin peer-to-peer measurement toolkit: a blockchain-free listening
//! node, reverse prober, offline log analytics, and a gossip simulator for
//! first-arrival origin triage.

pub mod analytics;
pub mod gossipsim;
pub mod netnode;
pub mod prober;
pub mod records;
pub mod report;
pub mod synth;
pub mod wire;

pub use prober::PeerClass;
pub use records::{ConnectionRecord, Direction, EventLog, ProbeResult, PropagationRecord};
pub use wire::TxId;
