use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::SimConfig;
use super::engine::{keyed_rng, triage, Engine, GroundTruth, StopRule, TriageOutcome, TxRng, Verdict};
use super::topology::{build_topology, Network, NodeId};
use super::SimError;

/// Stream tags for keyed randomness outside the per-sender delay streams.
const TAG_ORIGIN: u64 = 1;
const TAG_ENTRY: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyHistogram {
    pub bin_width_s: f64,
    pub counts: Vec<u64>,
}

impl LatencyHistogram {
    pub fn new(bin_width_s: f64) -> Self {
        assert!(bin_width_s > 0.0);
        LatencyHistogram {
            bin_width_s,
            counts: Vec::new(),
        }
    }

    pub fn add(&mut self, seconds: f64) {
        let b = (seconds / self.bin_width_s).floor().max(0.0) as usize;
        if self.counts.len() <= b {
            self.counts.resize(b + 1, 0);
        }
        self.counts[b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub originator_txs: usize,
    pub relay_txs: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ties: usize,
    pub undelivered: usize,
    /// NaN when no client-originated transactions were run.
    pub tp_rate: f64,
    /// NaN when no relayed transactions were run.
    pub fp_rate: f64,
    /// Creation to monitor arrival for client-originated transactions.
    pub latency: LatencyHistogram,
    pub mean_latency_s: f64,
    pub p99_latency_s: f64,
    pub outcomes: Vec<TriageOutcome>,
}

fn rate(hits: usize, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        hits as f64 / n as f64
    }
}

/// Nearest-rank quantile of unsorted samples; NaN when empty.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Run `n_originator_txs` transactions created by the observed client and
/// `n_relay_txs` created by other clients, all on one topology built from
/// `config.rng_seed`, and triage each.
pub fn run_experiment(
    config: &SimConfig,
    n_originator_txs: usize,
    n_relay_txs: usize,
) -> Result<ExperimentResult, SimError> {
    if n_originator_txs + n_relay_txs == 0 {
        return Err(SimError::Invalid("at least one transaction is required".into()));
    }
    let seed = config.rng_seed;
    let mut net: Network = build_topology(config, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let obs = net.observers.expect("built topologies have observers");
    let mut engine = Engine::new(config);
    let total = n_originator_txs + n_relay_txs;
    let mut outcomes = Vec::with_capacity(total);
    let mut latencies = Vec::with_capacity(n_originator_txs);

    for tx in 0..total {
        let interval = config.entry_resample_interval;
        if interval > 0 && tx > 0 && tx % interval == 0 {
            let block = (tx / interval) as u64;
            net.resample_entry_servers(config, &mut keyed_rng(seed, block, 0, TAG_ENTRY))?;
        }
        let rng = TxRng { seed, tx: tx as u64 };
        let (origin, truth, stop) = if tx < n_originator_txs {
            // The monitor's only feed is the client, so this always ends.
            (obs.client, GroundTruth::Originator, StopRule::BothReached { a: obs.monitor, l: obs.listener })
        } else {
            let mut pick = keyed_rng(seed, tx as u64, 0, TAG_ORIGIN);
            let other = obs.client + 1 + pick.gen_range(0..(net.client_count - 1).max(1)) as NodeId;
            let origin = if net.client_count > 1 { other } else { 0 };
            (origin, GroundTruth::Relay, StopRule::VerdictFixed { a: obs.monitor, l: obs.listener })
        };
        let trace = engine.run(&net, origin, rng, stop, None);
        let outcome = triage(&trace, obs.monitor, obs.listener, truth);
        if truth == GroundTruth::Originator {
            if let Some(t) = outcome.arrival_at_a {
                latencies.push(t);
            }
        }
        outcomes.push(outcome);
    }

    let count = |truth: GroundTruth, f: &dyn Fn(Verdict) -> bool| {
        outcomes
            .iter()
            .filter(|o| o.ground_truth == truth && f(o.verdict))
            .count()
    };
    let tp = count(GroundTruth::Originator, &Verdict::attributes);
    let fp = count(GroundTruth::Relay, &Verdict::attributes);
    let mut latency = LatencyHistogram::new(0.5);
    for t in &latencies {
        latency.add(*t);
    }
    let mean = if latencies.is_empty() {
        f64::NAN
    } else {
        latencies.iter().sum::<f64>() / latencies.len() as f64
    };
    Ok(ExperimentResult {
        seed,
        originator_txs: n_originator_txs,
        relay_txs: n_relay_txs,
        true_positives: tp,
        false_positives: fp,
        ties: outcomes.iter().filter(|o| o.verdict == Verdict::Tie).count(),
        undelivered: outcomes.iter().filter(|o| o.verdict == Verdict::Undelivered).count(),
        tp_rate: rate(tp, n_originator_txs),
        fp_rate: rate(fp, n_relay_txs),
        latency,
        mean_latency_s: mean,
        p99_latency_s: quantile(&latencies, 0.99),
        outcomes,
    })
}

/// One experiment per seed, run in parallel. Results are in seed order.
pub fn run_seeds(
    config: &SimConfig,
    seeds: &[u64],
    n_originator_txs: usize,
    n_relay_txs: usize,
) -> Result<Vec<ExperimentResult>, SimError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = SimConfig {
                rng_seed: seed,
                ..config.clone()
            };
            run_experiment(&cfg, n_originator_txs, n_relay_txs)
        })
        .collect()
}

pub const RESULTS_HEADER: [&str; 6] = ["seed", "tp_rate", "fp_rate", "ties", "mean_latency_s", "p99_latency_s"];

fn fixed(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

/// Write one row per experiment. Undefined rates are left empty.
pub fn write_results_csv(results: &[ExperimentResult], out: impl Write) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in results {
        w.write_record([
            r.seed.to_string(),
            fixed(r.tp_rate),
            fixed(r.fp_rate),
            r.ties.to_string(),
            fixed(r.mean_latency_s),
            fixed(r.p99_latency_s),
        ])?;
    }
    w.flush().map_err(|source| SimError::Io {
        path: "results".into(),
        source,
    })
}

/// Pooled rate over several experiments, weighting each by its size.
pub fn pooled(results: &[ExperimentResult], truth: GroundTruth) -> f64 {
    let (hits, n) = results.iter().fold((0, 0), |(h, n), r| match truth {
        GroundTruth::Originator => (h + r.true_positives, n + r.originator_txs),
        GroundTruth::Relay => (h + r.false_positives, n + r.relay_txs),
    });
    rate(hits, n)
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value of the KS statistic at significance 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}
