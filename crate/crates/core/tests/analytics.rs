use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::Ipv4Addr;

use btcwatch_core::analytics::*;
use btcwatch_core::prober::{classify_all, PeerClass};
use btcwatch_core::records::{ConnectionRecord, Direction, EventLog, ProbeResult};
use btcwatch_core::synth::{generate, CorpusSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Zipf};

fn conn(id: u64, ip: Ipv4Addr, open: u64, dur: Option<u64>) -> ConnectionRecord {
    ConnectionRecord {
        connection_id: id,
        remote_ip: ip,
        remote_port: 8333,
        direction: Direction::Inbound,
        open_time: open,
        close_time: dur.map(|d| open + d),
        version_string: None,
        handshake_completed: false,
    }
}

fn corpus() -> btcwatch_core::synth::Corpus {
    generate(&CorpusSpec {
        seed: 11,
        connections: 8_000,
        ips: 900,
        txs: 600,
        ..Default::default()
    })
}

#[test]
fn cdf_matches_brute_force() {
    let c = corpus();
    let classes = classify_all(&c.probes);
    for width in [100, 1000] {
        let table = duration_cdf(&c.log.connections, None, &classes, width).unwrap();
        let durations: Vec<u64> = c
            .log
            .connections
            .iter()
            .filter_map(|r| r.close_time.map(|e| e - r.open_time))
            .collect();
        for row in &table.rows {
            let upper = row.bin_start_ms + width;
            let below = durations.iter().filter(|d| **d < upper).count();
            assert_eq!(row.cdf, below as f64 / durations.len() as f64);
        }
        assert_eq!(table.rows.last().unwrap().cdf, 1.0);
    }
}

#[test]
fn median_bin_matches_sorted_median() {
    // Log-normal with median 1.3 s.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dist = LogNormal::new(1300f64.ln(), 0.6).unwrap();
    let recs: Vec<_> = (0..20_001)
        .map(|i| conn(i, Ipv4Addr::new(1, 1, 1, 1), 0, Some(dist.sample(&mut rng) as u64)))
        .collect();
    let table = duration_cdf(&recs, None, &ClassMap::new(), 100).unwrap();
    let mut sorted: Vec<u64> = recs.iter().filter_map(|r| r.duration_ms()).collect();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    assert_eq!(table.quantile_bin(0.5), median / 100 * 100);
    assert_eq!(table.quantile_bin(0.5), 1300);
}

#[test]
fn ephemeral_matches_brute_force() {
    let c = corpus();
    let classes = classify_all(&c.probes);
    let s = ephemeral_stats(&c.log.connections, &classes);
    let completed: Vec<_> = c.log.connections.iter().filter(|r| r.close_time.is_some()).collect();
    let eph = completed
        .iter()
        .filter(|r| r.close_time.unwrap() - r.open_time < 500)
        .count();
    assert_eq!(s.completed as usize, completed.len());
    assert_eq!(s.ephemeral as usize, eph);
    assert_eq!(s.fraction, eph as f64 / completed.len() as f64);
    let per_class: u64 = s.by_class.values().map(|v| v.1).sum();
    assert_eq!(per_class, s.ephemeral);
}

#[test]
fn zipf_concentration_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = Zipf::new(1000, 1.0).unwrap();
    let labels: Vec<String> = (0..30_000).map(|_| format!("g{:04}", z.sample(&mut rng) as u64)).collect();
    let c = Concentration::from_labels(labels.clone());

    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for l in &labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut v: Vec<u64> = counts.values().copied().collect();
    v.sort_unstable_by(|a, b| b.cmp(a));
    let top10: u64 = v.iter().take(10).sum();
    assert_eq!(c.top_k_share(10).unwrap(), top10 as f64 / labels.len() as f64);
    assert_eq!(c.top_k_share(counts.len()).unwrap(), 1.0);
}

#[test]
fn fanout_matches_group_by() {
    let c = corpus();
    let classes = classify_all(&c.probes);
    let f = propagation_fanout(&c.log.propagations, &classes, &c.asn);
    let mut oracle: HashMap<_, Vec<Ipv4Addr>> = HashMap::new();
    for p in &c.log.propagations {
        oracle.entry(p.tx_id).or_default().push(p.remote_ip);
    }
    assert_eq!(f.len(), oracle.len());
    for (tx, ips) in oracle {
        let distinct: HashSet<_> = ips.iter().collect();
        let countries: HashSet<_> = distinct
            .iter()
            .map(|ip| c.asn.lookup(**ip).map(|i| i.country.clone()).unwrap_or_else(|| "unknown".into()))
            .collect();
        let nonpublic = distinct
            .iter()
            .filter(|ip| classes.get(ip) != Some(&PeerClass::Type2Available))
            .count();
        let got = &f[&tx];
        assert_eq!(got.propagations as usize, ips.len());
        assert_eq!(got.ip_count as usize, distinct.len());
        assert_eq!(got.ip_count_nonpublic as usize, nonpublic);
        assert_eq!(got.country_count as usize, countries.len());
    }
}

#[test]
fn fanout_examples() {
    let db = AsnDatabase::parse("1.0.0.0/8\t1\tUS\n2.0.0.0/8\t2\tDE\n".as_bytes(), "t").unwrap();
    let tx = btcwatch_core::wire::TxId::of_raw_tx(b"x");
    let ips = [Ipv4Addr::new(1, 0, 0, 1), Ipv4Addr::new(1, 0, 0, 2), Ipv4Addr::new(2, 0, 0, 1)];
    let props: Vec<_> = ips
        .iter()
        .enumerate()
        .map(|(i, ip)| btcwatch_core::records::PropagationRecord {
            tx_id: tx,
            connection_id: i as u64,
            remote_ip: *ip,
            receive_time: 0,
            announce_kind: btcwatch_core::records::AnnounceKind::Inv,
        })
        .collect();
    let classes: ClassMap = [(ips[0], PeerClass::Type2Available)].into();
    let f = &propagation_fanout(&props, &classes, &db)[&tx];
    assert_eq!((f.ip_count, f.country_count, f.homogeneous), (3, 2, false));
    assert_eq!(f.ip_count_nonpublic, 2);
    let one = &propagation_fanout(&props[..1], &classes, &db)[&tx];
    assert_eq!((one.ip_count, one.country_count, one.homogeneous), (1, 1, true));
}

#[test]
fn windows_match_brute_force() {
    let c = corpus();
    let classes = classify_all(&c.probes);
    let w = 3 * 3600 * 1000;
    let got = windowed_unique_ips(&c.log.connections, &classes, w);
    let start = c.log.connections.iter().map(|r| r.open_time).min().unwrap();
    for (i, row) in got.iter().enumerate() {
        let lo = start + i as u64 * w;
        let set: HashSet<_> = c
            .log
            .connections
            .iter()
            .filter(|r| r.open_time >= lo && r.open_time < lo + w)
            .map(|r| r.remote_ip)
            .collect();
        assert_eq!(row.counts.values().sum::<u64>() as usize, set.len());
    }
}

#[test]
fn breakdown_reconciles_with_distinct_ips() {
    let c = corpus();
    let classes = classify_all(&c.probes);
    let rows = class_breakdown(&c.log, &classes);
    let ips = rows.iter().find(|r| r.stat == "ips").unwrap();
    assert_eq!(ips.counts.values().sum::<u64>(), ips.total);
    assert_eq!(ips.total as usize, dedupe_ips(&c.log.connections).len());
    let conns = rows.iter().find(|r| r.stat == "conns").unwrap();
    assert_eq!(conns.total as usize, c.log.connections.len());
}

#[test]
fn analysis_is_deterministic_and_writes_every_table() {
    let c = corpus();
    let tor = c.tor_list();
    let inputs = AnalysisInputs {
        log: c.log,
        probes: c.probes,
        asn: c.asn,
        tor,
        population: PopulationParams::default(),
        window_ms: DEFAULT_WINDOW_MS,
    };
    let a = analyze(&inputs).unwrap();
    let b = analyze(&inputs).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    for name in a.tables.keys() {
        assert!(dir.path().join(format!("{name}.csv")).exists(), "{name}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("Dataset overview"));
    assert!(summary.contains("Estimated unreachable clients"));
}

#[test]
fn empty_log_analyses() {
    let inputs = AnalysisInputs {
        log: EventLog::default(),
        probes: Vec::<ProbeResult>::new(),
        asn: AsnDatabase::new(),
        tor: TorList::default(),
        population: PopulationParams::default(),
        window_ms: DEFAULT_WINDOW_MS,
    };
    let r = analyze(&inputs).unwrap();
    assert!(r.tables["duration_cdf"].rows.is_empty());
}

fn arb_records() -> impl Strategy<Value = Vec<ConnectionRecord>> {
    prop::collection::vec((0u8..20, 0u64..100_000, prop::option::of(0u64..50_000)), 1..200).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (ip, open, dur))| conn(i as u64, Ipv4Addr::new(9, 0, 0, ip), open, dur))
            .collect()
    })
}

proptest! {
    #[test]
    fn cdf_is_monotone_and_ends_at_one(recs in arb_records(), width in 1u64..5_000) {
        if let Ok(t) = duration_cdf(&recs, None, &ClassMap::new(), width) {
            prop_assert!(t.rows.windows(2).all(|w| w[0].cdf <= w[1].cdf));
            prop_assert!(t.rows[0].cdf >= 0.0);
            prop_assert!((t.rows.last().unwrap().cdf - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn concentration_nondecreasing_in_k(labels in prop::collection::vec(0u8..30, 1..300)) {
        let c = Concentration::from_labels(labels.iter().map(|l| l.to_string()));
        let groups = c.ranking.len();
        let mut prev = 0.0;
        for k in 1..=groups + 2 {
            let s = c.top_k_share(k).unwrap();
            prop_assert!(s >= prev);
            prev = s;
        }
        prop_assert_eq!(c.top_k_share(groups).unwrap(), 1.0);
    }

    #[test]
    fn population_scales_linearly(obs in 1_000f64..1e6, conns in 1f64..10.0) {
        let base = (obs * 5540.0 / 102.0) / conns;
        let est = estimate_population(obs, 102.0, 5540.0, conns).unwrap() as f64;
        prop_assert!((est - base).abs() <= 500.0);
        let doubled = estimate_population(2.0 * obs, 102.0, 5540.0, conns).unwrap() as f64;
        prop_assert!((doubled - 2.0 * base).abs() <= 500.0);
        let halved = estimate_population(obs, 102.0, 5540.0, 2.0 * conns).unwrap() as f64;
        prop_assert!((halved - base / 2.0).abs() <= 500.0);
    }

    #[test]
    fn class_counts_sum_to_distinct_ips(recs in arb_records(), probed in prop::collection::vec((0u8..20, any::<bool>(), any::<bool>()), 0..30)) {
        let probes: Vec<ProbeResult> = probed.into_iter().map(|(ip, tcp, hs)| ProbeResult {
            ip: Ipv4Addr::new(9, 0, 0, ip),
            probe_time: 0,
            tcp_connected: tcp || hs,
            handshake_completed: hs,
            version_string: None,
        }).collect();
        let classes = classify_all(&probes);
        let log = EventLog { connections: recs, propagations: vec![] };
        let rows = class_breakdown(&log, &classes);
        let ips = &rows[0];
        prop_assert_eq!(ips.counts.values().sum::<u64>(), ips.total);
    }

    #[test]
    fn peer_type_ignores_order(mut uas in prop::collection::vec(prop::sample::select(vec!["/Satoshi:0.14/", "/breadwallet:1/", "/Snoopy:0.1/", "bitcoin-seeder:0.01", ""]), 0..5), seed in any::<u64>()) {
        let ip = Ipv4Addr::new(3, 3, 3, 3);
        let tor = TorList::default();
        let a = classify_peer_type(uas.iter().copied(), ip, &tor);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..uas.len()).rev() {
            uas.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(a, classify_peer_type(uas.iter().copied(), ip, &tor));
    }
}
