//! Seeded synthetic measurement corpora for tests, benchmarks and demos.

use std::fs;
use std::io;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};

use crate::analytics::{AsnDatabase, TorList};
use crate::records::{
    AnnounceKind, ConnectionRecord, Direction, Event, EventLog, EventSink, JsonlSink, ProbeResult,
    PropagationRecord,
};
use crate::wire::TxId;

#[derive(Debug, Clone, Copy)]
pub struct CorpusSpec {
    pub seed: u64,
    pub connections: usize,
    pub ips: usize,
    pub txs: usize,
    /// Span of connection open times.
    pub span_ms: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 7,
            connections: 5_000,
            ips: 800,
            txs: 400,
            span_ms: 24 * 3600 * 1000,
        }
    }
}

pub struct Corpus {
    pub log: EventLog,
    pub probes: Vec<ProbeResult>,
    pub asn: AsnDatabase,
    pub asn_text: String,
    pub tor: Vec<Ipv4Addr>,
}

const COUNTRIES: [&str; 8] = ["US", "DE", "CN", "FR", "NL", "GB", "CA", "RU"];
const AGENTS: [&str; 7] = [
    "/Satoshi:0.14.1/",
    "/Satoshi:0.13.2/",
    "/breadwallet:0.6.2/",
    "/bitcoinj:0.14.3/Bitcoin Wallet:5.22/",
    "bitcoin-seeder:0.01",
    "/Snoopy:0.1/",
    "",
];

/// Source address `i`: spread over 64 /16 blocks, so ASN grouping is uneven.
fn ip_of(i: usize) -> Ipv4Addr {
    let block = (i * 7) % 64;
    Ipv4Addr::new(10 + (block / 16) as u8, (block % 16) as u8 * 16, (i / 256) as u8, (i % 256) as u8)
}

/// Generate a corpus with Zipf-distributed sources, a mix of ephemeral and
/// long-lived connections, and transactions relayed by random connections.
pub fn generate(spec: &CorpusSpec) -> Corpus {
    assert!(spec.ips > 0 && spec.connections > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zipf = Zipf::new(spec.ips as u64, 1.0).expect("valid zipf");
    let long = Exp::new(1.0 / 60_000.0).expect("valid rate");

    let mut asn_text = String::from("# snapshot: synthetic\n");
    for block in 0..64u8 {
        let net = Ipv4Addr::new(10 + block / 16, (block % 16) * 16, 0, 0);
        let asn = 64_500 + u32::from(block % 40);
        let cc = COUNTRIES[usize::from(block) % COUNTRIES.len()];
        asn_text.push_str(&format!("{net}/12\t{asn}\t{cc}\n"));
    }
    let asn = AsnDatabase::parse(asn_text.as_bytes(), "synthetic").expect("generated snapshot parses");

    let mut connections = Vec::with_capacity(spec.connections);
    for id in 0..spec.connections {
        let ip = ip_of(zipf.sample(&mut rng) as usize - 1);
        let open_time = 1_500_000_000_000 + rng.gen_range(0..spec.span_ms);
        let duration = match rng.gen_range(0..10) {
            0..=2 => rng.gen_range(0..1_000),
            3 => 500,
            4..=8 => long.sample(&mut rng) as u64,
            _ => u64::MAX,
        };
        let handshake = rng.gen_bool(0.8);
        connections.push(ConnectionRecord {
            connection_id: id as u64,
            remote_ip: ip,
            remote_port: rng.gen_range(1024..65535),
            direction: Direction::Inbound,
            open_time,
            close_time: (duration != u64::MAX).then(|| open_time + duration),
            version_string: handshake.then(|| AGENTS[rng.gen_range(0..AGENTS.len())].to_string()),
            handshake_completed: handshake,
        });
    }

    let mut propagations = Vec::new();
    for t in 0..spec.txs {
        let tx_id = TxId::of_raw_tx(&(t as u64).to_le_bytes());
        let relays = 1 + zipf.sample(&mut rng) as usize % 40;
        for _ in 0..relays {
            let c = &connections[rng.gen_range(0..connections.len())];
            propagations.push(PropagationRecord {
                tx_id,
                connection_id: c.connection_id,
                remote_ip: c.remote_ip,
                receive_time: c.open_time + rng.gen_range(0..1_000),
                announce_kind: if rng.gen_bool(0.9) {
                    AnnounceKind::Inv
                } else {
                    AnnounceKind::FullTx
                },
            });
        }
    }

    let mut probes = Vec::new();
    let mut tor = Vec::new();
    for i in 0..spec.ips {
        let ip = ip_of(i);
        // About a tenth of sources are never probed.
        if rng.gen_bool(0.1) {
            continue;
        }
        let class = rng.gen_range(0..10);
        for k in 0..rng.gen_range(1..4) {
            let tcp = class >= 7 && (k > 0 || rng.gen_bool(0.5));
            probes.push(ProbeResult {
                ip,
                probe_time: 1_500_000_000_000 + k * 6 * 3600 * 1000,
                tcp_connected: tcp,
                handshake_completed: tcp && class >= 9,
                version_string: None,
            });
        }
        if rng.gen_bool(0.02) {
            tor.push(ip);
        }
    }

    Corpus {
        log: EventLog {
            connections,
            propagations,
        },
        probes,
        asn,
        asn_text,
        tor,
    }
}

/// Paths written by [`Corpus::write_files`].
#[derive(Debug, Clone)]
pub struct CorpusFiles {
    pub log: PathBuf,
    pub probes: PathBuf,
    pub asn: PathBuf,
    pub tor: PathBuf,
}

impl Corpus {
    pub fn tor_list(&self) -> TorList {
        self.tor.iter().copied().collect()
    }

    /// Write the corpus in the on-disk formats the analyzer reads.
    pub fn write_files(&self, dir: &Path) -> io::Result<CorpusFiles> {
        fs::create_dir_all(dir)?;
        let files = CorpusFiles {
            log: dir.join("events.jsonl"),
            probes: dir.join("probes.jsonl"),
            asn: dir.join("asn.tsv"),
            tor: dir.join("tor.txt"),
        };
        let _ = fs::remove_file(&files.log);
        let sink = JsonlSink::open(&files.log)?;
        for c in &self.log.connections {
            sink.record(Event::Connection(c.clone()));
        }
        for p in &self.log.propagations {
            sink.record(Event::Propagation(p.clone()));
        }
        drop(sink);
        let mut probes = String::new();
        for p in &self.probes {
            probes.push_str(&serde_json::to_string(p).map_err(io::Error::other)?);
            probes.push('\n');
        }
        fs::write(&files.probes, probes)?;
        fs::write(&files.asn, &self.asn_text)?;
        let tor: String = self.tor.iter().map(|ip| format!("{ip}\n")).collect();
        fs::write(&files.tor, tor)?;
        Ok(files)
    }
}
