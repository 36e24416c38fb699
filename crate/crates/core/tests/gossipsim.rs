use std::collections::{HashMap, HashSet, VecDeque};

use btcwatch_core::gossipsim::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Exp as ExpDist};

fn small(seed: u64) -> SimConfig {
    SimConfig {
        server_count: 40,
        client_count: 300,
        rng_seed: seed,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_traces() {
    let cfg = small(3);
    let net = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let rng = TxRng { seed: 3, tx: 17 };
    let a = simulate_tx(&net, 45, &cfg, rng);
    let b = simulate_tx(&net, 45, &cfg, rng);
    assert_eq!(a, b);
    let other = simulate_tx(&net, 45, &cfg, TxRng { seed: 4, tx: 17 });
    assert_ne!(a, other);
}

#[test]
fn conservation() {
    let cfg = SimConfig {
        listener_parallel_connections: 5,
        ..small(8)
    };
    let net = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    for tx in 0..20 {
        let (trace, events) = simulate_tx_logged(&net, 50 + tx as u32, &cfg, TxRng { seed: 8, tx });
        let mut delivered = HashSet::new();
        let mut per_sender: HashMap<NodeId, usize> = HashMap::new();
        let mut last = (0.0, 0);
        for e in &events {
            match e.kind {
                SimEventKind::TxDelivered => {
                    assert!(delivered.insert(e.to_node), "node {} delivered twice", e.to_node);
                    assert!((e.time, e.seq) >= last, "events out of order");
                    last = (e.time, e.seq);
                }
                SimEventKind::TxScheduled => *per_sender.entry(e.from_node).or_default() += 1,
                SimEventKind::TxCreated => {}
            }
        }
        for (node, n) in per_sender {
            assert!(n <= net.degree(node));
            assert!(trace.scheduled_by(node) as usize <= net.degree(node));
        }
        assert_eq!(delivered.len() + 1, trace.len());
    }
}

#[test]
fn connected_network_is_fully_reached() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut dials = Vec::new();
    // A spanning path plus random chords.
    for i in 1..50u32 {
        dials.push((i, i - 1, 0.01));
    }
    for _ in 0..60 {
        let (a, b) = (rng.gen_range(0..50), rng.gen_range(0..50));
        if a != b {
            dials.push((a, b, 0.02));
        }
    }
    let net = Network::from_dials(50, &dials);
    let mut seen = HashSet::from([0u32]);
    let mut q = VecDeque::from([0u32]);
    while let Some(n) = q.pop_front() {
        for l in net.links(n) {
            if seen.insert(l.to) {
                q.push_back(l.to);
            }
        }
    }
    let trace = simulate_tx(&net, 0, &SimConfig::default(), TxRng { seed: 1, tx: 0 });
    assert_eq!(seen.len(), 50);
    assert_eq!(trace.len(), 50);
    assert!(trace.complete);
    // First arrivals obey the triangle inequality along every link used.
    for (n, t) in trace.reached() {
        if n != 0 {
            let p = trace.parent(n).unwrap();
            assert!(trace.arrival(p).unwrap() <= t);
        }
    }
}

#[test]
fn single_hop_matches_exponential() {
    // With no link latency and the monitor an inbound peer of the client,
    // own transactions reach it after exactly one inbound trickle delay.
    let cfg = SimConfig {
        latency_model: LatencyModel::Zero,
        monitor_link: MonitorLink::Inbound,
        ..small(2)
    };
    let r = run_experiment(&cfg, 10_000, 0).unwrap();
    let samples: Vec<f64> = r.outcomes.iter().map(|o| o.arrival_at_a.unwrap()).collect();
    let exp = ExpDist::new(1.0 / 5.0).unwrap();
    let d = ks_statistic(&samples, |x| exp.cdf(x));
    assert!(d < ks_critical_001(samples.len()), "D = {d}");
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    assert!((mean - 5.0).abs() < 0.15, "{mean}");
}

#[test]
fn outbound_monitor_link_uses_outbound_mean() {
    let cfg = SimConfig {
        latency_model: LatencyModel::Zero,
        ..small(2)
    };
    let r = run_experiment(&cfg, 10_000, 0).unwrap();
    let samples: Vec<f64> = r.outcomes.iter().map(|o| o.arrival_at_a.unwrap()).collect();
    let exp = ExpDist::new(1.0 / 2.5).unwrap();
    assert!(ks_statistic(&samples, |x| exp.cdf(x)) < ks_critical_001(samples.len()));
}

#[test]
fn attributions_shrink_with_listener_connections() {
    let mut prev: Option<Vec<bool>> = None;
    for k in [1, 2, 5, 10, 15, 20] {
        let cfg = SimConfig {
            listener_parallel_connections: k,
            ..small(6)
        };
        let r = run_experiment(&cfg, 200, 400).unwrap();
        let hits: Vec<bool> = r.outcomes.iter().map(|o| o.verdict == Verdict::Originator).collect();
        if let Some(p) = &prev {
            // An attribution at k implies one at every smaller k.
            assert!(hits.iter().zip(p).all(|(now, before)| !now || *before), "k = {k}");
        }
        prev = Some(hits);
    }
}

#[test]
fn topology_does_not_depend_on_listener_connections() {
    let a = build_topology(&small(5), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let cfg = SimConfig {
        listener_parallel_connections: 20,
        ..small(5)
    };
    let b = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a.dials(), b.dials());
}

#[test]
fn entry_resampling_is_deterministic() {
    let cfg = SimConfig {
        entry_resample_interval: 10,
        ..small(9)
    };
    let a = run_experiment(&cfg, 50, 50).unwrap();
    let b = run_experiment(&cfg, 50, 50).unwrap();
    assert_eq!(a, b);
    let fixed = run_experiment(&small(9), 50, 50).unwrap();
    assert_ne!(a.outcomes, fixed.outcomes);
}

#[test]
fn results_csv_shape() {
    let res = run_seeds(&small(1), &[1, 2, 3], 30, 30).unwrap();
    let mut out = Vec::new();
    write_results_csv(&res, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "seed,tp_rate,fp_rate,ties,mean_latency_s,p99_latency_s");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("2,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_node_at_most_once(seed in any::<u64>(), tx in 0u64..1000, origin in 0u32..340) {
        let cfg = small(seed % 7);
        let net = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(seed % 7)).unwrap();
        let (trace, events) = simulate_tx_logged(&net, origin, &cfg, TxRng { seed, tx });
        let delivered: Vec<_> = events.iter().filter(|e| e.kind == SimEventKind::TxDelivered).map(|e| e.to_node).collect();
        let distinct: HashSet<_> = delivered.iter().collect();
        prop_assert_eq!(distinct.len(), delivered.len());
        prop_assert_eq!(trace.arrival(origin), Some(0.0));
    }
}
