use rand::seq::index;
use rand::Rng;

use super::config::{LatencyModel, MonitorLink, SimConfig};
use super::SimError;

pub type NodeId = u32;

/// How the neighbour at the other end of a link is seen by the sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkDirection {
    /// The neighbour dialled the sender.
    Inbound,
    /// The sender dialled the neighbour.
    Outbound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub to: NodeId,
    pub direction: LinkDirection,
    /// One-way delivery latency in seconds.
    pub latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Server,
    Client,
    Monitor,
    Listener,
}

/// The observed client C, its monitor A and the listener L.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observers {
    pub client: NodeId,
    pub monitor: NodeId,
    pub listener: NodeId,
}

/// Relay graph. Nodes `0..server_count` are servers, then clients, then the
/// monitor and the listener. The listener's connections are kept apart from
/// the adjacency lists: every server holds `listener_connections` links to it.
#[derive(Debug, Clone)]
pub struct Network {
    pub server_count: usize,
    pub client_count: usize,
    adjacency: Vec<Vec<Link>>,
    region: Vec<usize>,
    inbound: Vec<usize>,
    inbound_cap: usize,
    /// Latency in seconds between region pairs, including the hop factor.
    region_latency: Vec<Vec<f64>>,
    listener_connections: usize,
    pub observers: Option<Observers>,
}

impl Network {
    /// A network of `node_count` plain relays; each `(a, b, latency)` means
    /// `a` dialled `b`.
    pub fn from_dials(node_count: usize, dials: &[(NodeId, NodeId, f64)]) -> Self {
        let mut net = Network {
            server_count: node_count,
            client_count: 0,
            adjacency: vec![Vec::new(); node_count],
            region: vec![0; node_count],
            inbound: vec![0; node_count],
            inbound_cap: usize::MAX,
            region_latency: vec![vec![0.0]],
            listener_connections: 0,
            observers: None,
        };
        for &(a, b, latency) in dials {
            net.dial(a, b, latency);
        }
        net
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn role(&self, n: NodeId) -> Role {
        match self.observers {
            Some(o) if n == o.monitor => Role::Monitor,
            Some(o) if n == o.listener => Role::Listener,
            _ if (n as usize) < self.server_count => Role::Server,
            _ => Role::Client,
        }
    }

    pub fn links(&self, n: NodeId) -> &[Link] {
        &self.adjacency[n as usize]
    }

    /// Parallel connections the listener holds to `n`, and their latency.
    pub fn listener_links(&self, n: NodeId) -> (usize, f64) {
        match self.observers {
            Some(o) if (n as usize) < self.server_count => {
                (self.listener_connections, self.latency_between(n, o.listener))
            }
            _ => (0, 0.0),
        }
    }

    /// Distinct neighbours, counting the listener once.
    pub fn degree(&self, n: NodeId) -> usize {
        self.adjacency[n as usize].len() + usize::from(self.listener_links(n).0 > 0)
    }

    pub fn inbound_count(&self, n: NodeId) -> usize {
        self.inbound[n as usize]
    }

    pub fn region(&self, n: NodeId) -> usize {
        self.region[n as usize]
    }

    /// Every dial as `(from, to)`, sorted.
    pub fn dials(&self) -> Vec<(NodeId, NodeId)> {
        let mut out: Vec<_> = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, links)| {
                links
                    .iter()
                    .filter(|l| l.direction == LinkDirection::Outbound)
                    .map(move |l| (a as NodeId, l.to))
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Servers the observed client is connected to.
    pub fn entry_servers(&self) -> Vec<NodeId> {
        let Some(o) = self.observers else { return Vec::new() };
        self.links(o.client)
            .iter()
            .filter(|l| (l.to as usize) < self.server_count)
            .map(|l| l.to)
            .collect()
    }

    fn latency_between(&self, a: NodeId, b: NodeId) -> f64 {
        self.region_latency[self.region[a as usize]][self.region[b as usize]]
    }

    fn dial(&mut self, from: NodeId, to: NodeId, latency: f64) {
        self.adjacency[from as usize].push(Link {
            to,
            direction: LinkDirection::Outbound,
            latency,
        });
        self.adjacency[to as usize].push(Link {
            to: from,
            direction: LinkDirection::Inbound,
            latency,
        });
        self.inbound[to as usize] += 1;
    }

    fn has_dialled(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a as usize]
            .iter()
            .any(|l| l.to == b && l.direction == LinkDirection::Outbound)
    }

    /// Dial `count` distinct servers with free inbound slots, sampled uniformly.
    fn dial_servers(&mut self, from: NodeId, count: usize, rng: &mut impl Rng) -> Result<(), SimError> {
        let candidates: Vec<NodeId> = (0..self.server_count as NodeId)
            .filter(|&s| s != from && self.inbound[s as usize] < self.inbound_cap && !self.has_dialled(from, s))
            .collect();
        if candidates.len() < count {
            return Err(SimError::Topology(format!(
                "node {from} needs {count} servers with free slots, only {} left",
                candidates.len()
            )));
        }
        for i in index::sample(rng, candidates.len(), count).into_iter() {
            let to = candidates[i];
            let latency = self.latency_between(from, to);
            self.dial(from, to, latency);
        }
        Ok(())
    }

    /// Drop the observed client's server connections and dial fresh ones.
    pub fn resample_entry_servers(&mut self, config: &SimConfig, rng: &mut impl Rng) -> Result<(), SimError> {
        let Some(o) = self.observers else {
            return Err(SimError::Topology("network has no observed client".into()));
        };
        let c = o.client;
        for s in self.entry_servers() {
            self.adjacency[s as usize].retain(|l| l.to != c);
            self.inbound[s as usize] -= 1;
        }
        let servers = self.server_count;
        self.adjacency[c as usize].retain(|l| l.to as usize >= servers);
        self.dial_servers(c, config.outbound_per_client, rng)
    }
}

/// Build the relay graph for one experiment.
///
/// Servers dial `outbound_per_server` distinct other servers, clients dial
/// `outbound_per_client` distinct servers, the first client is the observed
/// client C and also dials its monitor A, and the listener L holds
/// `listener_parallel_connections` links to every server. Inbound capacity is
/// `max_inbound` minus the slots reserved for L.
pub fn build_topology(config: &SimConfig, rng: &mut impl Rng) -> Result<Network, SimError> {
    config.validate()?;
    let servers = config.server_count;
    let clients = config.client_count;
    let cap = config.max_inbound - config.listener_reserved_inbound;
    let demand = servers * config.outbound_per_server + clients * config.outbound_per_client;
    if demand > servers * cap {
        return Err(SimError::Topology(format!(
            "outbound demand {demand} exceeds inbound capacity {}",
            servers * cap
        )));
    }

    let regions = &config.regions;
    let r = regions.len();
    let hop = config.hop_factor();
    let mut region_latency = vec![vec![0.0; r]; r];
    #[allow(clippy::needless_range_loop)]
    for a in 0..r {
        for b in a..r {
            let base = if a == b {
                config.intra_region_latency_ms
            } else {
                regions.latency_ms(a, b)
            };
            let factor = match config.latency_model {
                LatencyModel::Zero => 0.0,
                LatencyModel::Constant => 1.0,
                LatencyModel::Uniform { lo, hi } if hi > lo => rng.gen_range(lo..hi),
                LatencyModel::Uniform { lo, .. } => lo,
            };
            let v = base * factor * hop / 1000.0;
            region_latency[a][b] = v;
            region_latency[b][a] = v;
        }
    }

    let n = servers + clients + 2;
    let mut region: Vec<usize> = (0..n).map(|_| rng.gen_range(0..r)).collect();
    let client = servers as NodeId;
    let monitor = (servers + clients) as NodeId;
    let listener = monitor + 1;
    let home = regions.index(&config.client_region).expect("validated region");
    region[client as usize] = home;
    region[monitor as usize] = home;
    region[listener as usize] = regions.index(&config.listener_region).expect("validated region");

    let mut net = Network {
        server_count: servers,
        client_count: clients,
        adjacency: vec![Vec::new(); n],
        region,
        inbound: vec![0; n],
        inbound_cap: cap,
        region_latency,
        listener_connections: config.listener_parallel_connections,
        observers: Some(Observers {
            client,
            monitor,
            listener,
        }),
    };

    for s in 0..servers as NodeId {
        net.dial_servers(s, config.outbound_per_server, rng)?;
    }
    for c in servers..servers + clients {
        net.dial_servers(c as NodeId, config.outbound_per_client, rng)?;
    }

    let monitor_latency = match config.latency_model {
        LatencyModel::Zero => 0.0,
        _ => config.monitor_latency_ms * hop / 1000.0,
    };
    net.dial(client, monitor, monitor_latency);
    if config.monitor_link == MonitorLink::Inbound {
        let link = net.adjacency[client as usize].last_mut().expect("just dialled");
        link.direction = LinkDirection::Inbound;
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn small(servers: usize, clients: usize) -> SimConfig {
        SimConfig {
            server_count: servers,
            client_count: clients,
            outbound_per_server: servers.saturating_sub(1).min(8),
            ..Default::default()
        }
    }

    #[test]
    fn client_degree_and_distinct_servers() {
        let cfg = small(10, 1);
        let net = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = net.observers.unwrap().client;
        let entries = net.entry_servers();
        assert_eq!(entries.len(), 8);
        assert_eq!(entries.iter().collect::<HashSet<_>>().len(), 8);
        assert_eq!(net.links(c).len(), 9, "eight servers plus the monitor");
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small(40, 300);
        let a = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a.dials(), b.dials());
        assert_ne!(a.dials(), c.dials());
    }

    #[test]
    fn inbound_cap_respected_with_listener() {
        let cfg = SimConfig {
            listener_parallel_connections: 20,
            ..Default::default()
        };
        let net = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for s in 0..cfg.server_count as NodeId {
            let total = net.inbound_count(s) + net.listener_links(s).0;
            assert!(total <= 117, "server {s} has {total} inbound");
        }
    }

    #[test]
    fn no_self_or_repeated_dials() {
        let net = build_topology(&SimConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dials = net.dials();
        assert_eq!(dials.iter().collect::<HashSet<_>>().len(), dials.len());
        assert!(dials.iter().all(|(a, b)| a != b));
    }

    #[test]
    fn unsatisfiable_capacity() {
        let cfg = SimConfig {
            server_count: 10,
            client_count: 1000,
            outbound_per_server: 8,
            ..Default::default()
        };
        assert!(matches!(
            build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(SimError::Topology(_))
        ));
    }

    #[test]
    fn entry_resampling_keeps_degree() {
        let cfg = SimConfig::default();
        let mut net = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let before = net.entry_servers();
        let inbound_total: usize = (0..200).map(|s| net.inbound_count(s)).sum();
        net.resample_entry_servers(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let after = net.entry_servers();
        assert_eq!(after.len(), 8);
        assert_ne!(before, after);
        assert_eq!(inbound_total, (0..200).map(|s| net.inbound_count(s)).sum::<usize>());
        let c = net.observers.unwrap().client;
        for s in after {
            assert!(net.links(s).iter().any(|l| l.to == c && l.direction == LinkDirection::Inbound));
        }
    }
}
