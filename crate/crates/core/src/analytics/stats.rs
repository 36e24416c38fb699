use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::Ipv4Addr;

use serde::Serialize;

use super::{bucket_of, AnalyticsError, AsnDatabase, Bucket, ClassMap, BUCKETS};
use crate::records::{ConnectionRecord, EventLog};
use crate::wire::TxId;

/// Connections shorter than this are ephemeral. Strict inequality.
pub const EPHEMERAL_THRESHOLD_MS: u64 = 500;
pub const DEFAULT_WINDOW_MS: u64 = 6 * 3600 * 1000;
/// Average number of parallel connections an unreachable client keeps.
pub const DEFAULT_PARALLEL_CONNECTIONS: f64 = 3.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IpSummary {
    pub conn_count: u64,
    pub first_seen: u64,
    pub last_seen: u64,
    pub version_strings: BTreeSet<String>,
}

/// One entry per distinct source address.
pub fn dedupe_ips(records: &[ConnectionRecord]) -> BTreeMap<Ipv4Addr, IpSummary> {
    let mut out: BTreeMap<Ipv4Addr, IpSummary> = BTreeMap::new();
    for r in records {
        let last = r.close_time.unwrap_or(r.open_time);
        let e = out.entry(r.remote_ip).or_insert_with(|| IpSummary {
            conn_count: 0,
            first_seen: r.open_time,
            last_seen: last,
            version_strings: BTreeSet::new(),
        });
        e.conn_count += 1;
        e.first_seen = e.first_seen.min(r.open_time);
        e.last_seen = e.last_seen.max(last);
        if let Some(ua) = &r.version_string {
            e.version_strings.insert(ua.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfRow {
    pub bin_start_ms: u64,
    pub count: u64,
    /// Fraction of durations strictly below `bin_start_ms + bin_width_ms`.
    pub cdf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfTable {
    pub bin_width_ms: u64,
    pub total: u64,
    pub rows: Vec<CdfRow>,
}

impl CdfTable {
    /// Build from raw durations. Bin `b` holds durations in `[b·w, (b+1)·w)`.
    pub fn from_durations(durations: &[u64], bin_width_ms: u64) -> Result<Self, AnalyticsError> {
        assert!(bin_width_ms > 0, "bin width must be positive");
        if durations.is_empty() {
            return Err(AnalyticsError::Empty("completed connections"));
        }
        let max_bin = durations.iter().map(|d| d / bin_width_ms).max().unwrap_or(0) as usize;
        let mut counts = vec![0u64; max_bin + 1];
        for d in durations {
            counts[(d / bin_width_ms) as usize] += 1;
        }
        let total = durations.len() as u64;
        let mut cum = 0u64;
        let rows = counts
            .into_iter()
            .enumerate()
            .map(|(b, count)| {
                cum += count;
                CdfRow {
                    bin_start_ms: b as u64 * bin_width_ms,
                    count,
                    cdf: cum as f64 / total as f64,
                }
            })
            .collect();
        Ok(CdfTable {
            bin_width_ms,
            total,
            rows,
        })
    }

    /// Start of the first bin whose cumulative fraction reaches `q`.
    pub fn quantile_bin(&self, q: f64) -> u64 {
        let need = (q * self.total as f64).ceil().max(1.0) as u64;
        let mut cum = 0;
        for r in &self.rows {
            cum += r.count;
            if cum >= need {
                return r.bin_start_ms;
            }
        }
        self.rows.last().map(|r| r.bin_start_ms).unwrap_or(0)
    }

    pub fn at(&self, duration_ms: u64) -> f64 {
        let b = (duration_ms / self.bin_width_ms) as usize;
        self.rows.get(b).map(|r| r.cdf).unwrap_or(1.0)
    }
}

fn class_matches(r: &ConnectionRecord, filter: Option<Bucket>, classes: &ClassMap) -> bool {
    filter.is_none_or(|want| bucket_of(classes, r.remote_ip) == want)
}

/// CDF of completed connection durations. `class_filter` of `None` takes every
/// record; `Some(bucket)` keeps only addresses in that reachability bucket.
pub fn duration_cdf(
    records: &[ConnectionRecord],
    class_filter: Option<Bucket>,
    classes: &ClassMap,
    bin_width_ms: u64,
) -> Result<CdfTable, AnalyticsError> {
    let durations: Vec<u64> = records
        .iter()
        .filter(|r| class_matches(r, class_filter, classes))
        .filter_map(ConnectionRecord::duration_ms)
        .collect();
    CdfTable::from_durations(&durations, bin_width_ms)
}

pub fn is_ephemeral(r: &ConnectionRecord) -> bool {
    r.duration_ms().is_some_and(|d| d < EPHEMERAL_THRESHOLD_MS)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EphemeralStats {
    pub completed: u64,
    pub ephemeral: u64,
    pub fraction: f64,
    /// (completed, ephemeral) per reachability bucket.
    pub by_class: BTreeMap<Bucket, (u64, u64)>,
}

pub fn ephemeral_stats(records: &[ConnectionRecord], classes: &ClassMap) -> EphemeralStats {
    let mut by_class: BTreeMap<Bucket, (u64, u64)> = BUCKETS.iter().map(|b| (*b, (0, 0))).collect();
    let mut completed = 0;
    let mut ephemeral = 0;
    for r in records.iter().filter(|r| r.is_completed()) {
        let e = by_class.entry(bucket_of(classes, r.remote_ip)).or_default();
        completed += 1;
        e.0 += 1;
        if is_ephemeral(r) {
            ephemeral += 1;
            e.1 += 1;
        }
    }
    EphemeralStats {
        completed,
        ephemeral,
        fraction: if completed == 0 {
            0.0
        } else {
            ephemeral as f64 / completed as f64
        },
        by_class,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    Asn,
    Country,
    Ip,
}

impl GroupKey {
    pub fn label(self) -> &'static str {
        match self {
            GroupKey::Asn => "asn",
            GroupKey::Country => "country",
            GroupKey::Ip => "ip",
        }
    }

    /// Group label for `ip`. Addresses outside the snapshot share `unknown`.
    pub fn of(self, ip: Ipv4Addr, db: &AsnDatabase) -> String {
        match self {
            GroupKey::Ip => ip.to_string(),
            GroupKey::Asn => db
                .lookup(ip)
                .map(|i| format!("AS{}", i.asn))
                .unwrap_or_else(|| "unknown".into()),
            GroupKey::Country => db
                .lookup(ip)
                .map(|i| i.country.clone())
                .unwrap_or_else(|| "unknown".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Concentration {
    pub total: u64,
    /// Every group, by descending count then ascending label.
    pub ranking: Vec<(String, u64)>,
}

impl Concentration {
    pub fn from_labels(labels: impl IntoIterator<Item = String>) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total = 0;
        for l in labels {
            *counts.entry(l).or_default() += 1;
            total += 1;
        }
        let mut ranking: Vec<(String, u64)> = counts.into_iter().collect();
        ranking.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Concentration { total, ranking }
    }

    /// Share of all items held by the `k` largest groups.
    pub fn top_k_share(&self, k: usize) -> Result<f64, AnalyticsError> {
        if k == 0 {
            return Err(AnalyticsError::Domain("k must be at least 1".into()));
        }
        if self.total == 0 {
            return Ok(0.0);
        }
        let top: u64 = self.ranking.iter().take(k).map(|(_, c)| c).sum();
        Ok(top as f64 / self.total as f64)
    }
}

/// Fraction of `ips` (one per record) falling in the `k` largest groups.
pub fn concentration(
    ips: impl IntoIterator<Item = Ipv4Addr>,
    key: GroupKey,
    db: &AsnDatabase,
    k: usize,
) -> Result<f64, AnalyticsError> {
    Concentration::from_labels(ips.into_iter().map(|ip| key.of(ip, db))).top_k_share(k)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fanout {
    pub propagations: u64,
    /// Distinct relaying addresses.
    pub ip_count: u64,
    /// Distinct relaying addresses excluding available (public server) peers.
    pub ip_count_nonpublic: u64,
    pub country_count: u64,
    /// All relayers fall in the same reachability bucket.
    pub homogeneous: bool,
}

/// Per transaction: how many addresses and countries relayed it to us.
pub fn propagation_fanout(
    propagations: &[crate::records::PropagationRecord],
    classes: &ClassMap,
    db: &AsnDatabase,
) -> BTreeMap<TxId, Fanout> {
    let mut per_tx: HashMap<TxId, (u64, HashSet<Ipv4Addr>)> = HashMap::new();
    for p in propagations {
        let e = per_tx.entry(p.tx_id).or_default();
        e.0 += 1;
        e.1.insert(p.remote_ip);
    }
    per_tx
        .into_iter()
        .map(|(tx, (n, ips))| {
            let buckets: HashSet<Bucket> = ips.iter().map(|ip| bucket_of(classes, *ip)).collect();
            let countries: HashSet<String> =
                ips.iter().map(|ip| GroupKey::Country.of(*ip, db)).collect();
            let nonpublic = ips
                .iter()
                .filter(|ip| bucket_of(classes, **ip) != Some(crate::prober::PeerClass::Type2Available))
                .count();
            (
                tx,
                Fanout {
                    propagations: n,
                    ip_count: ips.len() as u64,
                    ip_count_nonpublic: nonpublic as u64,
                    country_count: countries.len() as u64,
                    homogeneous: buckets.len() == 1,
                },
            )
        })
        .collect()
}

/// Scale unreachable addresses seen by our monitors up to the whole server
/// population, then divide by the connections each client keeps open:
/// `observed × (servers / monitors) / parallel_connections`, rounded to the
/// nearest thousand.
pub fn estimate_population(
    observed_unreachable: f64,
    monitor_count: f64,
    total_public_servers: f64,
    avg_parallel_connections: f64,
) -> Result<u64, AnalyticsError> {
    let inputs = [
        ("observed", observed_unreachable),
        ("monitor_count", monitor_count),
        ("total_public_servers", total_public_servers),
        ("avg_parallel_connections", avg_parallel_connections),
    ];
    if let Some((name, v)) = inputs.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
        return Err(AnalyticsError::Domain(format!("{name} must be positive, got {v}")));
    }
    let raw = observed_unreachable * (total_public_servers / monitor_count) / avg_parallel_connections;
    Ok(((raw / 1000.0).round() * 1000.0) as u64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowCounts {
    pub start_ms: u64,
    pub counts: BTreeMap<Bucket, u64>,
}

/// Distinct addresses per bucket in consecutive windows aligned to the
/// earliest connection. A connection belongs to the window of its open time.
pub fn windowed_unique_ips(
    records: &[ConnectionRecord],
    classes: &ClassMap,
    window_ms: u64,
) -> Vec<WindowCounts> {
    assert!(window_ms > 0, "window must be positive");
    let Some(start) = records.iter().map(|r| r.open_time).min() else {
        return Vec::new();
    };
    let last = records.iter().map(|r| r.open_time).max().unwrap_or(start);
    let n = ((last - start) / window_ms + 1) as usize;
    let mut sets: Vec<HashSet<Ipv4Addr>> = vec![HashSet::new(); n];
    for r in records {
        sets[((r.open_time - start) / window_ms) as usize].insert(r.remote_ip);
    }
    sets.into_iter()
        .enumerate()
        .map(|(i, ips)| {
            let mut counts: BTreeMap<Bucket, u64> = BUCKETS.iter().map(|b| (*b, 0)).collect();
            for ip in ips {
                *counts.entry(bucket_of(classes, ip)).or_default() += 1;
            }
            WindowCounts {
                start_ms: start + i as u64 * window_ms,
                counts,
            }
        })
        .collect()
}

/// Row names of the dataset overview table.
pub const OVERVIEW_STATS: [&str; 5] = ["ips", "conns", "eph_conns", "props", "txs"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverviewRow {
    pub stat: &'static str,
    pub counts: BTreeMap<Bucket, u64>,
    /// Column total. For `txs` this counts distinct ids overall, so bucket
    /// counts may sum to more than it when a tx arrives from several buckets.
    pub total: u64,
}

fn overview_rows<F>(log: &EventLog, mut key_of: F) -> Vec<OverviewRow>
where
    F: FnMut(Ipv4Addr) -> Option<Bucket>,
{
    let mut ips: BTreeMap<Bucket, HashSet<Ipv4Addr>> = BTreeMap::new();
    let mut conns: BTreeMap<Bucket, u64> = BTreeMap::new();
    let mut eph: BTreeMap<Bucket, u64> = BTreeMap::new();
    let mut props: BTreeMap<Bucket, u64> = BTreeMap::new();
    let mut txs: BTreeMap<Bucket, HashSet<TxId>> = BTreeMap::new();
    let (mut n_conn, mut n_eph, mut n_prop) = (0, 0, 0);
    let mut all_ips = HashSet::new();
    let mut all_txs = HashSet::new();
    for r in &log.connections {
        all_ips.insert(r.remote_ip);
        n_conn += 1;
        if is_ephemeral(r) {
            n_eph += 1;
        }
        let Some(b) = key_of(r.remote_ip) else { continue };
        ips.entry(b).or_default().insert(r.remote_ip);
        *conns.entry(b).or_default() += 1;
        if is_ephemeral(r) {
            *eph.entry(b).or_default() += 1;
        }
    }
    for p in &log.propagations {
        all_txs.insert(p.tx_id);
        n_prop += 1;
        let Some(b) = key_of(p.remote_ip) else { continue };
        *props.entry(b).or_default() += 1;
        txs.entry(b).or_default().insert(p.tx_id);
    }
    let fill = |m: BTreeMap<Bucket, u64>| -> BTreeMap<Bucket, u64> {
        BUCKETS.iter().map(|b| (*b, m.get(b).copied().unwrap_or(0))).collect()
    };
    vec![
        OverviewRow { stat: "ips", counts: fill(sizes(ips)), total: all_ips.len() as u64 },
        OverviewRow { stat: "conns", counts: fill(conns), total: n_conn },
        OverviewRow { stat: "eph_conns", counts: fill(eph), total: n_eph },
        OverviewRow { stat: "props", counts: fill(props), total: n_prop },
        OverviewRow { stat: "txs", counts: fill(sizes(txs)), total: all_txs.len() as u64 },
    ]
}

fn sizes<T>(m: BTreeMap<Bucket, HashSet<T>>) -> BTreeMap<Bucket, u64> {
    m.into_iter().map(|(k, v)| (k, v.len() as u64)).collect()
}

/// Addresses, connections, ephemeral connections, propagations and distinct
/// transactions per reachability bucket.
pub fn class_breakdown(log: &EventLog, classes: &ClassMap) -> Vec<OverviewRow> {
    overview_rows(log, |ip| Some(bucket_of(classes, ip)))
}

/// The same overview restricted to one behavioural peer type.
pub fn peer_type_breakdown(
    log: &EventLog,
    classes: &ClassMap,
    types: &HashMap<Ipv4Addr, super::PeerType>,
    peer_type: super::PeerType,
) -> Vec<OverviewRow> {
    overview_rows(log, |ip| {
        (types.get(&ip).copied().unwrap_or(super::PeerType::Other) == peer_type)
            .then(|| bucket_of(classes, ip))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prober::PeerClass;
    use crate::records::Direction;

    pub(crate) fn conn(ip: [u8; 4], open: u64, dur: Option<u64>, ua: Option<&str>) -> ConnectionRecord {
        ConnectionRecord {
            connection_id: open,
            remote_ip: Ipv4Addr::from(ip),
            remote_port: 1,
            direction: Direction::Inbound,
            open_time: open,
            close_time: dur.map(|d| open + d),
            version_string: ua.map(str::to_string),
            handshake_completed: ua.is_some(),
        }
    }

    #[test]
    fn dedupe_examples() {
        assert!(dedupe_ips(&[]).is_empty());
        let recs = vec![
            conn([1, 1, 1, 1], 10, Some(5), Some("/a/")),
            conn([1, 1, 1, 1], 20, Some(5), Some("/b/")),
            conn([1, 1, 1, 1], 30, None, Some("/a/")),
            conn([2, 2, 2, 2], 40, Some(1), None),
        ];
        let d = dedupe_ips(&recs);
        assert_eq!(d.len(), 2);
        let a = &d[&Ipv4Addr::new(1, 1, 1, 1)];
        assert_eq!(a.conn_count, 3);
        assert_eq!(a.version_strings.len(), 2);
        assert_eq!((a.first_seen, a.last_seen), (10, 30));
        assert!(d[&Ipv4Addr::new(2, 2, 2, 2)].version_strings.is_empty());
    }

    #[test]
    fn cdf_examples() {
        let t = CdfTable::from_durations(&[300, 900, 5000], 1000).unwrap();
        assert!((t.rows[0].cdf - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(t.rows.len(), 6);
        assert_eq!(t.rows[4].cdf, t.rows[0].cdf);
        assert_eq!(t.rows[5].cdf, 1.0);

        let t = CdfTable::from_durations(&[2500; 4], 1000).unwrap();
        let cdfs: Vec<f64> = t.rows.iter().map(|r| r.cdf).collect();
        assert_eq!(cdfs, [0.0, 0.0, 1.0]);

        assert!(matches!(
            CdfTable::from_durations(&[], 1000),
            Err(AnalyticsError::Empty(_))
        ));
    }

    #[test]
    fn cdf_ignores_open_connections_and_filters_class() {
        let recs = vec![
            conn([1, 0, 0, 1], 0, Some(300), None),
            conn([1, 0, 0, 2], 0, None, None),
            conn([1, 0, 0, 3], 0, Some(1500), None),
        ];
        let classes: ClassMap = [(Ipv4Addr::new(1, 0, 0, 3), PeerClass::Type2Available)].into();
        let all = duration_cdf(&recs, None, &classes, 1000).unwrap();
        assert_eq!(all.total, 2);
        let t2 = duration_cdf(&recs, Some(Some(PeerClass::Type2Available)), &classes, 1000).unwrap();
        assert_eq!(t2.total, 1);
        assert_eq!(t2.rows[0].cdf, 0.0);
        assert!(duration_cdf(&recs, Some(Some(PeerClass::Type1Unavailable)), &classes, 1000).is_err());
    }

    #[test]
    fn ephemeral_examples() {
        let none = ClassMap::new();
        let s = ephemeral_stats(&[conn([1, 1, 1, 1], 0, Some(499), None)], &none);
        assert_eq!(s.ephemeral, 1);
        let s = ephemeral_stats(&[conn([1, 1, 1, 1], 0, Some(500), None)], &none);
        assert_eq!(s.ephemeral, 0);
        let recs = vec![
            conn([1, 1, 1, 1], 0, Some(100), None),
            conn([1, 1, 1, 1], 0, Some(600), None),
            conn([1, 1, 1, 1], 0, Some(400), None),
            conn([1, 1, 1, 1], 0, None, None),
        ];
        let s = ephemeral_stats(&recs, &none);
        assert_eq!((s.completed, s.ephemeral), (3, 2));
        assert!((s.fraction - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.by_class[&None], (3, 2));
    }

    #[test]
    fn concentration_examples() {
        let uniform = Concentration::from_labels((0..10).flat_map(|g| vec![format!("g{g}"); 7]));
        assert_eq!(uniform.top_k_share(5).unwrap(), 0.5);
        let single = Concentration::from_labels(vec!["only".to_string(); 9]);
        assert_eq!(single.top_k_share(1).unwrap(), 1.0);
        assert!(single.top_k_share(0).is_err());
        // Ties resolve by label.
        let tied = Concentration::from_labels(["b", "a", "c", "a", "b"].map(String::from));
        assert_eq!(tied.ranking, [("a".into(), 2), ("b".into(), 2), ("c".into(), 1)]);
    }

    #[test]
    fn concentration_by_asn() {
        let db = AsnDatabase::parse("10.0.0.0/8\t1\tUS\n20.0.0.0/8\t2\tDE\n".as_bytes(), "t").unwrap();
        let ips = ["10.0.0.1", "10.0.0.2", "10.0.0.3", "20.0.0.1", "30.0.0.1"]
            .map(|s| s.parse::<Ipv4Addr>().unwrap());
        assert_eq!(concentration(ips, GroupKey::Asn, &db, 1).unwrap(), 0.6);
        assert_eq!(concentration(ips, GroupKey::Country, &db, 2).unwrap(), 0.8);
        assert_eq!(concentration(ips, GroupKey::Ip, &db, 5).unwrap(), 1.0);
    }

    #[test]
    fn population_examples() {
        assert_eq!(estimate_population(10_000.0, 102.0, 5_540.0, 3.5).unwrap(), 155_000);
        assert_eq!(estimate_population(3_500.0, 1.0, 1.0, 3.5).unwrap(), 1_000);
        assert_eq!(estimate_population(20_000.0, 102.0, 5_540.0, 3.5).unwrap(), 310_000);
        assert!(estimate_population(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(estimate_population(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(estimate_population(1.0, 1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn windows() {
        let none = ClassMap::new();
        assert!(windowed_unique_ips(&[], &none, 10).is_empty());
        let recs = vec![
            conn([1, 1, 1, 1], 100, None, None),
            conn([1, 1, 1, 1], 105, None, None),
            conn([1, 1, 1, 1], 135, None, None),
            conn([2, 2, 2, 2], 136, None, None),
        ];
        let w = windowed_unique_ips(&recs, &none, 10);
        let totals: Vec<u64> = w.iter().map(|w| w.counts.values().sum()).collect();
        assert_eq!(totals, [1, 0, 0, 2]);
        assert_eq!(w[3].start_ms, 130);
    }
}
