use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use super::config::SimConfig;
use super::topology::{LinkDirection, Network, NodeId, Role};

/// Timestamp resolution used to call a tie, in seconds.
pub const TIE_RESOLUTION: f64 = 0.001;

/// Trickle delay for one (message, neighbour) pair.
pub fn relay_delay(rng: &mut impl Rng, direction: LinkDirection, config: &SimConfig) -> f64 {
    let mean = match direction {
        LinkDirection::Inbound => config.inbound_delay_mean,
        LinkDirection::Outbound => config.outbound_delay_mean,
    };
    sample_exp(rng, mean)
}

fn sample_exp(rng: &mut impl Rng, mean: f64) -> f64 {
    if mean == 0.0 {
        0.0
    } else {
        Exp::new(1.0 / mean).expect("validated mean").sample(rng)
    }
}

/// Source of per-sender random streams for one transaction.
///
/// Each node that relays the transaction draws from its own stream keyed by
/// (seed, tx, node), so a node's delays do not depend on the order in which
/// other nodes were processed or on how many listener links exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxRng {
    pub seed: u64,
    pub tx: u64,
}

impl TxRng {
    pub fn stream(&self, node: u64) -> ChaCha8Rng {
        keyed_rng(self.seed, self.tx, node, 0)
    }
}

pub(crate) fn keyed_rng(a: u64, b: u64, c: u64, d: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [a, b, c, d].into_iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEventKind {
    TxCreated,
    TxScheduled,
    TxDelivered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: SimEventKind,
    pub tx_id: u64,
    pub from_node: NodeId,
    pub to_node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    time: f64,
    seq: u64,
    from: NodeId,
    to: NodeId,
}

impl Eq for Pending {}

impl Ord for Pending {
    // Reversed so BinaryHeap pops the earliest event, lowest sequence first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// First-delivery time of one transaction at every node it reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub tx_id: u64,
    pub origin: NodeId,
    arrival: Vec<f64>,
    parent: Vec<NodeId>,
    /// Deliveries each node scheduled.
    scheduled: Vec<u32>,
    /// Diffusion ran until no deliveries were pending.
    pub complete: bool,
}

impl Trace {
    pub fn arrival(&self, n: NodeId) -> Option<f64> {
        let t = self.arrival[n as usize];
        t.is_finite().then_some(t)
    }

    /// The node that delivered the first copy to `n`.
    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.arrival(n).map(|_| self.parent[n as usize])
    }

    pub fn scheduled_by(&self, n: NodeId) -> u32 {
        self.scheduled[n as usize]
    }

    /// Reached nodes and their arrival times, by node id.
    pub fn reached(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.arrival
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_finite())
            .map(|(n, t)| (n as NodeId, *t))
    }

    pub fn len(&self) -> usize {
        self.reached().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// When to stop diffusing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StopRule {
    Never,
    /// Once both nodes are reached.
    BothReached { a: NodeId, l: NodeId },
    /// Once the triage verdict between the two nodes cannot change.
    VerdictFixed { a: NodeId, l: NodeId },
}

/// Reusable buffers for repeated runs over one network.
pub(crate) struct Engine {
    best: Vec<f64>,
    heap: BinaryHeap<Pending>,
    inbound: Option<Exp<f64>>,
    outbound: Option<Exp<f64>>,
}

impl Engine {
    pub(crate) fn new(config: &SimConfig) -> Self {
        let exp = |m: f64| (m > 0.0).then(|| Exp::new(1.0 / m).expect("validated mean"));
        Engine {
            best: Vec::new(),
            heap: BinaryHeap::new(),
            inbound: exp(config.inbound_delay_mean),
            outbound: exp(config.outbound_delay_mean),
        }
    }

    fn delay(&self, rng: &mut ChaCha8Rng, d: LinkDirection) -> f64 {
        let dist = match d {
            LinkDirection::Inbound => &self.inbound,
            LinkDirection::Outbound => &self.outbound,
        };
        dist.as_ref().map_or(0.0, |e| e.sample(rng))
    }

    pub(crate) fn run(
        &mut self,
        net: &Network,
        origin: NodeId,
        rng: TxRng,
        stop: StopRule,
        mut events: Option<&mut Vec<SimEvent>>,
    ) -> Trace {
        let n = net.node_count();
        let mut trace = Trace {
            tx_id: rng.tx,
            origin,
            arrival: vec![f64::INFINITY; n],
            parent: vec![origin; n],
            scheduled: vec![0; n],
            complete: false,
        };
        self.best.clear();
        self.best.resize(n, f64::INFINITY);
        self.heap.clear();
        let mut seq = 0u64;
        let mut log = |e: SimEvent| {
            if let Some(ev) = events.as_deref_mut() {
                ev.push(e);
            }
        };
        log(SimEvent {
            time: 0.0,
            seq,
            kind: SimEventKind::TxCreated,
            tx_id: rng.tx,
            from_node: origin,
            to_node: origin,
        });
        self.best[origin as usize] = 0.0;
        self.heap.push(Pending {
            time: 0.0,
            seq,
            from: origin,
            to: origin,
        });
        seq += 1;

        let mut stopped = false;
        while let Some(ev) = self.heap.pop() {
            let to = ev.to as usize;
            if trace.arrival[to].is_finite() {
                continue;
            }
            if let StopRule::VerdictFixed { a, l } = stop {
                let (ta, tl) = (trace.arrival[a as usize], trace.arrival[l as usize]);
                if (ta.is_finite() && ev.time > ta + TIE_RESOLUTION)
                    || (tl.is_finite() && ev.time > tl + TIE_RESOLUTION)
                {
                    stopped = true;
                    break;
                }
            }
            trace.arrival[to] = ev.time;
            trace.parent[to] = ev.from;
            if ev.to != origin {
                log(SimEvent {
                    time: ev.time,
                    seq: ev.seq,
                    kind: SimEventKind::TxDelivered,
                    tx_id: rng.tx,
                    from_node: ev.from,
                    to_node: ev.to,
                });
            }
            match stop {
                StopRule::BothReached { a, l } | StopRule::VerdictFixed { a, l }
                    if trace.arrival[a as usize].is_finite() && trace.arrival[l as usize].is_finite() =>
                {
                    stopped = true;
                    break;
                }
                _ => {}
            }
            if matches!(net.role(ev.to), Role::Monitor | Role::Listener) {
                continue;
            }

            let mut stream = rng.stream(u64::from(ev.to));
            let mut offer = |engine: &mut Engine, peer: NodeId, at: f64, seq: &mut u64| {
                trace.scheduled[to] += 1;
                let p = peer as usize;
                if trace.arrival[p].is_finite() || at >= engine.best[p] {
                    return None;
                }
                engine.best[p] = at;
                let pending = Pending {
                    time: at,
                    seq: *seq,
                    from: ev.to,
                    to: peer,
                };
                *seq += 1;
                engine.heap.push(pending);
                Some(pending)
            };
            for link in net.links(ev.to) {
                let at = ev.time + self.delay(&mut stream, link.direction) + link.latency;
                if let Some(p) = offer(self, link.to, at, &mut seq) {
                    log(scheduled(rng.tx, p));
                }
            }
            // Listener links draw last so adding one never shifts other draws.
            let (k, latency) = net.listener_links(ev.to);
            if k > 0 {
                let l = net.observers.expect("listener links imply observers").listener;
                let d = (0..k)
                    .map(|_| self.delay(&mut stream, LinkDirection::Inbound))
                    .fold(f64::INFINITY, f64::min);
                if let Some(p) = offer(self, l, ev.time + d + latency, &mut seq) {
                    log(scheduled(rng.tx, p));
                }
            }
        }
        trace.complete = !stopped;
        trace
    }
}

fn scheduled(tx: u64, p: Pending) -> SimEvent {
    SimEvent {
        time: p.time,
        seq: p.seq,
        kind: SimEventKind::TxScheduled,
        tx_id: tx,
        from_node: p.from,
        to_node: p.to,
    }
}

/// Diffuse one transaction from `origin` through the whole network.
pub fn simulate_tx(net: &Network, origin: NodeId, config: &SimConfig, rng: TxRng) -> Trace {
    Engine::new(config).run(net, origin, rng, StopRule::Never, None)
}

/// Like [`simulate_tx`], also returning every created, scheduled and
/// delivered event in processing order.
pub fn simulate_tx_logged(
    net: &Network,
    origin: NodeId,
    config: &SimConfig,
    rng: TxRng,
) -> (Trace, Vec<SimEvent>) {
    let mut events = Vec::new();
    let trace = Engine::new(config).run(net, origin, rng, StopRule::Never, Some(&mut events));
    (trace, events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Originator,
    Relay,
    Tie,
    Undelivered,
}

impl Verdict {
    /// Whether the client is named as the originator. Ties are not.
    pub fn attributes(self) -> bool {
        self == Verdict::Originator
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Originator,
    Relay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriageOutcome {
    pub tx_id: u64,
    pub arrival_at_a: Option<f64>,
    pub arrival_at_l: Option<f64>,
    pub verdict: Verdict,
    pub ground_truth: GroundTruth,
}

fn to_ms(t: f64) -> i64 {
    (t / TIE_RESOLUTION).round() as i64
}

/// Compare first arrival at the monitor with first arrival at the listener
/// (already the minimum over its connections). Equal milliseconds are a tie.
pub fn triage(trace: &Trace, a: NodeId, l: NodeId, ground_truth: GroundTruth) -> TriageOutcome {
    let (ta, tl) = (trace.arrival(a), trace.arrival(l));
    let verdict = match (ta, tl) {
        (None, None) => Verdict::Undelivered,
        (Some(_), None) => Verdict::Originator,
        (None, Some(_)) => Verdict::Relay,
        (Some(x), Some(y)) => match to_ms(x).cmp(&to_ms(y)) {
            Ordering::Less => Verdict::Originator,
            Ordering::Equal => Verdict::Tie,
            Ordering::Greater => Verdict::Relay,
        },
    };
    TriageOutcome {
        tx_id: trace.tx_id,
        arrival_at_a: ta,
        arrival_at_l: tl,
        verdict,
        ground_truth,
    }
}
