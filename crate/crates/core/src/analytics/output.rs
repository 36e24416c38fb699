use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::net::Ipv4Addr;
use std::path::Path;

use super::stats::*;
use super::{bucket_label, bucket_of, classify_peer_type, AnalyticsError, AsnDatabase, ClassMap, PeerType, TorList, BUCKETS};
use crate::prober::{classify_all, PeerClass};
use crate::records::{EventLog, ProbeResult};

/// Inputs of the population estimate other than the observed count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationParams {
    pub monitor_count: f64,
    pub total_public_servers: f64,
    pub avg_parallel_connections: f64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        PopulationParams {
            monitor_count: 1.0,
            total_public_servers: 5540.0,
            avg_parallel_connections: DEFAULT_PARALLEL_CONNECTIONS,
        }
    }
}

pub struct AnalysisInputs {
    pub log: EventLog,
    pub probes: Vec<ProbeResult>,
    pub asn: AsnDatabase,
    pub tor: TorList,
    pub population: PopulationParams,
    pub window_ms: u64,
}

/// A CSV table held as already formatted cells.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Every statistic of one analysis run, keyed by table name, plus the
/// plain-text summary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatReport {
    pub tables: BTreeMap<String, Table>,
    pub summary: String,
}

impl StatReport {
    /// Write `<name>.csv` for each table and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), AnalyticsError> {
        let name = dir.display().to_string();
        fs::create_dir_all(dir).map_err(|e| AnalyticsError::io(&name, e))?;
        for (table_name, t) in &self.tables {
            let path = dir.join(format!("{table_name}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(&t.header)?;
            for r in &t.rows {
                w.write_record(r)?;
            }
            w.flush()
                .map_err(|e| AnalyticsError::io(&path.display().to_string(), e))?;
        }
        let path = dir.join("summary.txt");
        fs::write(&path, &self.summary).map_err(|e| AnalyticsError::io(&path.display().to_string(), e))
    }
}

fn frac(x: f64) -> String {
    format!("{x:.6}")
}

fn bucket_header() -> Vec<&'static str> {
    BUCKETS.iter().map(|b| bucket_label(*b)).collect()
}

fn overview_table(lead: &[&str], rows: &[(Vec<String>, &OverviewRow)]) -> Table {
    let mut header: Vec<&str> = lead.to_vec();
    header.push("stat");
    header.extend(bucket_header());
    header.push("total");
    let mut t = Table::new(&header);
    for (prefix, r) in rows {
        let mut row = prefix.clone();
        row.push(r.stat.to_string());
        row.extend(BUCKETS.iter().map(|b| r.counts[b].to_string()));
        row.push(r.total.to_string());
        t.push(row);
    }
    t
}

fn cdf_rows(t: &mut Table, class: &str, cdf: &CdfTable, scale: u64) {
    for r in cdf.rows.iter().filter(|r| r.count > 0) {
        let start = if scale == 1000 {
            (r.bin_start_ms / 1000).to_string()
        } else {
            r.bin_start_ms.to_string()
        };
        t.push(vec![class.to_string(), start, r.count.to_string(), frac(r.cdf)]);
    }
}

fn ranking_table(c: &Concentration) -> Table {
    let mut t = Table::new(&["rank", "group", "count", "share", "cum_share"]);
    let mut cum = 0;
    for (i, (label, n)) in c.ranking.iter().enumerate() {
        cum += n;
        t.push(vec![
            (i + 1).to_string(),
            label.clone(),
            n.to_string(),
            frac(*n as f64 / c.total as f64),
            frac(cum as f64 / c.total as f64),
        ]);
    }
    t
}

/// Run every statistic over the loaded inputs.
pub fn analyze(inputs: &AnalysisInputs) -> Result<StatReport, AnalyticsError> {
    let log = &inputs.log;
    let classes: ClassMap = classify_all(&inputs.probes);
    let conns = &log.connections;
    let mut report = StatReport::default();
    let mut tables = BTreeMap::new();

    let overview = class_breakdown(log, &classes);
    let rows: Vec<_> = overview.iter().map(|r| (Vec::new(), r)).collect();
    tables.insert("overview".to_string(), overview_table(&[], &rows));

    let eph = ephemeral_stats(conns, &classes);
    let mut t = Table::new(&["class", "completed", "ephemeral", "fraction"]);
    for b in BUCKETS {
        let (c, e) = eph.by_class[&b];
        let f = if c == 0 { 0.0 } else { e as f64 / c as f64 };
        t.push(vec![bucket_label(b).into(), c.to_string(), e.to_string(), frac(f)]);
    }
    t.push(vec!["all".into(), eph.completed.to_string(), eph.ephemeral.to_string(), frac(eph.fraction)]);
    tables.insert("ephemeral".to_string(), t);

    let mut sec = Table::new(&["class", "bin_start_s", "count", "cdf"]);
    let mut sub = Table::new(&["class", "bin_start_ms", "count", "cdf"]);
    let mut filters: Vec<(&str, Option<super::Bucket>)> = vec![("all", None)];
    filters.extend(BUCKETS.iter().map(|b| (bucket_label(*b), Some(*b))));
    let mut median_s = None;
    for (label, filter) in filters {
        if let Ok(cdf) = duration_cdf(conns, filter, &classes, 1000) {
            cdf_rows(&mut sec, label, &cdf, 1000);
        }
        if let Ok(cdf) = duration_cdf(conns, filter, &classes, 100) {
            if filter.is_none() {
                median_s = Some(cdf.quantile_bin(0.5) as f64 / 1000.0);
            }
            cdf_rows(&mut sub, label, &cdf, 100);
        }
    }
    tables.insert("duration_cdf".to_string(), sec);
    tables.insert("duration_cdf_100ms".to_string(), sub);

    let per_ip = dedupe_ips(conns);
    let peer_types: HashMap<Ipv4Addr, PeerType> = per_ip
        .iter()
        .map(|(ip, s)| {
            let ty = classify_peer_type(s.version_strings.iter().map(String::as_str), *ip, &inputs.tor);
            (*ip, ty)
        })
        .collect();
    let mut t = Table::new(&[
        "ip",
        "class",
        "peer_type",
        "conn_count",
        "first_seen_ms",
        "last_seen_ms",
        "version_strings",
    ]);
    for (ip, s) in &per_ip {
        t.push(vec![
            ip.to_string(),
            bucket_label(bucket_of(&classes, *ip)).into(),
            peer_types[ip].label().into(),
            s.conn_count.to_string(),
            s.first_seen.to_string(),
            s.last_seen.to_string(),
            s.version_strings.len().to_string(),
        ]);
    }
    tables.insert("per_ip".to_string(), t);
    let multi_version = per_ip.values().filter(|s| s.version_strings.len() > 1).count();

    let mut ua_ips: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for s in per_ip.values() {
        for ua in &s.version_strings {
            ua_ips.entry(ua.as_str()).or_default().0 += 1;
        }
    }
    for r in conns {
        if let Some(ua) = &r.version_string {
            if let Some(e) = ua_ips.get_mut(ua.as_str()) {
                e.1 += 1;
            }
        }
    }
    let mut uas: Vec<_> = ua_ips.into_iter().collect();
    uas.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then_with(|| a.0.cmp(b.0)));
    let mut t = Table::new(&["version_string", "ips", "conns"]);
    for (ua, (ips, n)) in uas {
        t.push(vec![ua.to_string(), ips.to_string(), n.to_string()]);
    }
    tables.insert("version_strings".to_string(), t);

    let unreachable: Vec<Ipv4Addr> = per_ip
        .keys()
        .copied()
        .filter(|ip| bucket_of(&classes, *ip) == Some(PeerClass::Type0Unreachable))
        .collect();
    let by_asn = Concentration::from_labels(unreachable.iter().map(|ip| GroupKey::Asn.of(*ip, &inputs.asn)));
    let by_country =
        Concentration::from_labels(unreachable.iter().map(|ip| GroupKey::Country.of(*ip, &inputs.asn)));
    let by_prop_ip = Concentration::from_labels(log.propagations.iter().map(|p| p.remote_ip.to_string()));
    tables.insert("concentration_asn".to_string(), ranking_table(&by_asn));
    tables.insert("concentration_country".to_string(), ranking_table(&by_country));
    tables.insert("concentration_propagation_ip".to_string(), ranking_table(&by_prop_ip));

    let fanout = propagation_fanout(&log.propagations, &classes, &inputs.asn);
    let mut t = Table::new(&[
        "txid",
        "propagations",
        "ip_count",
        "ip_count_nonpublic",
        "country_count",
        "homogeneous",
    ]);
    for (tx, f) in &fanout {
        t.push(vec![
            tx.to_string(),
            f.propagations.to_string(),
            f.ip_count.to_string(),
            f.ip_count_nonpublic.to_string(),
            f.country_count.to_string(),
            f.homogeneous.to_string(),
        ]);
    }
    tables.insert("fanout".to_string(), t);

    let windows = windowed_unique_ips(conns, &classes, inputs.window_ms);
    let mut header = vec!["window_start_ms"];
    header.extend(bucket_header());
    let mut t = Table::new(&header);
    for w in &windows {
        let mut row = vec![w.start_ms.to_string()];
        row.extend(BUCKETS.iter().map(|b| w.counts[b].to_string()));
        t.push(row);
    }
    tables.insert("windows".to_string(), t);

    let type_rows: Vec<(PeerType, Vec<OverviewRow>)> = PeerType::ALL
        .iter()
        .map(|ty| (*ty, peer_type_breakdown(log, &classes, &peer_types, *ty)))
        .collect();
    let flat: Vec<_> = type_rows
        .iter()
        .flat_map(|(ty, rows)| rows.iter().map(move |r| (vec![ty.label().to_string()], r)))
        .collect();
    tables.insert("peer_types".to_string(), overview_table(&["peer_type"], &flat));

    let observed = if windows.is_empty() {
        0.0
    } else {
        let k = Some(PeerClass::Type0Unreachable);
        windows.iter().map(|w| w.counts[&k]).sum::<u64>() as f64 / windows.len() as f64
    };
    let p = inputs.population;
    let estimate = estimate_population(
        observed,
        p.monitor_count,
        p.total_public_servers,
        p.avg_parallel_connections,
    )
    .ok();
    let mut t = Table::new(&[
        "observed_unreachable_per_window",
        "monitor_count",
        "total_public_servers",
        "avg_parallel_connections",
        "estimate",
    ]);
    t.push(vec![
        format!("{observed:.1}"),
        p.monitor_count.to_string(),
        p.total_public_servers.to_string(),
        p.avg_parallel_connections.to_string(),
        estimate.map(|e| e.to_string()).unwrap_or_default(),
    ]);
    tables.insert("population".to_string(), t);

    let mut s = String::new();
    let _ = writeln!(s, "Dataset overview");
    s.push_str(&render_overview(&overview));
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Ephemeral connections (< {EPHEMERAL_THRESHOLD_MS} ms): {} of {} completed ({:.2}%)",
        eph.ephemeral,
        eph.completed,
        eph.fraction * 100.0
    );
    if let Some(m) = median_s {
        let _ = writeln!(s, "Median connection duration: {m:.1} s");
    }
    if !per_ip.is_empty() {
        let _ = writeln!(
            s,
            "IPs with multiple version strings: {} of {} ({:.2}%)",
            multi_version,
            per_ip.len(),
            multi_version as f64 * 100.0 / per_ip.len() as f64
        );
    }
    if by_asn.total > 0 {
        let _ = writeln!(
            s,
            "Top 5 ASes host {:.2}% of unreachable IPs; top 5 countries {:.2}%",
            by_asn.top_k_share(5)? * 100.0,
            by_country.top_k_share(5)? * 100.0
        );
    }
    if by_prop_ip.total > 0 {
        let _ = writeln!(
            s,
            "Top 100 IPs account for {:.2}% of propagations",
            by_prop_ip.top_k_share(100)? * 100.0
        );
    }
    if !fanout.is_empty() {
        let max_all = fanout.values().map(|f| f.ip_count).max().unwrap_or(0);
        let max_np = fanout.values().map(|f| f.ip_count_nonpublic).max().unwrap_or(0);
        let homog = fanout.values().filter(|f| f.homogeneous).count();
        let _ = writeln!(
            s,
            "Max relaying IPs per tx: {max_all} (excluding available peers: {max_np}); homogeneous relayer class for {:.2}% of txs",
            homog as f64 * 100.0 / fanout.len() as f64
        );
    }
    for ty in PeerType::ALL {
        let n = peer_types.values().filter(|t| **t == ty).count();
        let _ = writeln!(s, "Peer type {}: {n} IPs", ty.label());
    }
    match estimate {
        Some(e) => {
            let _ = writeln!(
                s,
                "Estimated unreachable clients per window: {e} (mean observed {observed:.1}, {} monitors, {} servers, {} connections each)",
                p.monitor_count, p.total_public_servers, p.avg_parallel_connections
            );
        }
        None => {
            let _ = writeln!(s, "Estimated unreachable clients per window: n/a");
        }
    }
    report.summary = s;
    report.tables = tables;
    Ok(report)
}

/// Table with one row per class and one column per statistic. Each cell
/// shows the count and its share of the column.
pub fn render_overview(rows: &[OverviewRow]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<14}", "class");
    for r in rows {
        let _ = write!(s, "{:>22}", r.stat);
    }
    s.push('\n');
    let sums: Vec<u64> = rows.iter().map(|r| r.counts.values().sum()).collect();
    for b in BUCKETS {
        let _ = write!(s, "{:<14}", bucket_label(b));
        for (r, sum) in rows.iter().zip(&sums) {
            let n = r.counts.get(&b).copied().unwrap_or(0);
            let pct = if *sum == 0 { 0.0 } else { n as f64 * 100.0 / *sum as f64 };
            let _ = write!(s, "{:>22}", format!("{n} ({pct:.2}%)"));
        }
        s.push('\n');
    }
    let _ = write!(s, "{:<14}", "total");
    for r in rows {
        let _ = write!(s, "{:>22}", r.total);
    }
    s.push('\n');
    s
}
