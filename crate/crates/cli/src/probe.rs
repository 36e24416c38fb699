use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use btcwatch_core::prober::{
    run_probes, ProbeConfig, ProbeScheduler, DEFAULT_PROBE_CONCURRENCY, DEFAULT_PROBE_PORT,
};
use btcwatch_core::records::{now_ms, read_event_log, ProbeResult};
use btcwatch_core::report::RunManifest;
use btcwatch_core::wire::Network;
use clap::Args;

use crate::{interrupted, parent_dir, require_file, runtime, CliError};

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Plain list of IPv4 addresses (one per line) or a node event log.
    #[arg(long)]
    input: PathBuf,
    /// Minimum time between two probes of the same address.
    #[arg(long, default_value = "6h")]
    interval: humantime::Duration,
    /// Probe results (JSONL), appended to.
    #[arg(long)]
    out: PathBuf,
    /// Last-probe table; defaults to `<out>.state.json`.
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PROBE_PORT)]
    port: u16,
    #[arg(long, default_value = "mainnet")]
    network: Network,
    #[arg(long, default_value = "5s")]
    tcp_timeout: humantime::Duration,
    #[arg(long, default_value = "10s")]
    handshake_timeout: humantime::Duration,
    #[arg(long, default_value_t = DEFAULT_PROBE_CONCURRENCY)]
    concurrency: usize,
    /// Keep re-reading the input and probing newly seen addresses until interrupted.
    #[arg(long)]
    follow: bool,
    /// Re-read period in follow mode.
    #[arg(long, default_value = "10s")]
    poll: humantime::Duration,
}

/// Addresses in `path`, in first-seen order. Event logs are recognised by
/// their JSON lines; anything else is read as an address list with `#` comments.
fn read_addresses(path: &Path) -> Result<Vec<Ipv4Addr>, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut first = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(CliError::io(path))?;
        if !line.trim().is_empty() {
            first = line;
            break;
        }
    }
    let ips: Vec<Ipv4Addr> = if first.trim_start().starts_with('{') {
        let mut conns = read_event_log(path)?.connections;
        conns.sort_by_key(|c| (c.open_time, c.connection_id));
        conns.into_iter().map(|c| c.remote_ip).collect()
    } else {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let entry = line.split('#').next().unwrap_or("").trim();
            if entry.is_empty() {
                continue;
            }
            let ip = entry.parse().map_err(|_| {
                CliError::Invalid(format!("{}:{}: not an IPv4 address: {entry}", path.display(), i + 1))
            })?;
            out.push(ip);
        }
        out
    };
    let mut seen = HashSet::new();
    Ok(ips.into_iter().filter(|ip| seen.insert(*ip)).collect())
}

fn append_results(path: &Path, results: &[ProbeResult]) -> Result<(), CliError> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(CliError::io(path))?;
    let mut out = BufWriter::new(file);
    for r in results {
        let line = serde_json::to_string(r).expect("probe result serializes");
        writeln!(out, "{line}").map_err(CliError::io(path))?;
    }
    out.flush().map_err(CliError::io(path))
}

pub fn run(args: ProbeArgs) -> Result<(), CliError> {
    require_file(&args.input)?;
    let state_path = args
        .state
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.state.json", args.out.display())));
    let mut scheduler = ProbeScheduler::load(&state_path, *args.interval)?;
    let config = ProbeConfig {
        port: args.port,
        network: args.network,
        tcp_timeout: *args.tcp_timeout,
        handshake_timeout: *args.handshake_timeout,
        concurrency: args.concurrency,
        ..ProbeConfig::default()
    };
    let mut manifest = RunManifest::start("probe");
    manifest.set("interval", args.interval);
    manifest.set("port", args.port);
    manifest.set("network", args.network);
    manifest.set("concurrency", args.concurrency);
    manifest.set("state", state_path.display());
    manifest.set("follow", args.follow);

    let rt = runtime()?;
    let mut probed = 0usize;
    let mut stop = Box::pin(async {
        if args.follow {
            interrupted().await
        }
    });
    loop {
        let due: Vec<Ipv4Addr> = read_addresses(&args.input)?
            .into_iter()
            .filter_map(|ip| scheduler.offer(ip, now_ms()).map(|t| t.ip))
            .collect();
        if !due.is_empty() {
            log::info!("probing {} addresses", due.len());
            let results = rt.block_on(run_probes(due, &config));
            append_results(&args.out, &results)?;
            scheduler.save(&state_path)?;
            probed += results.len();
        }
        if !args.follow {
            break;
        }
        let interrupted = rt.block_on(async {
            tokio::select! {
                _ = &mut stop => true,
                _ = tokio::time::sleep(*args.poll) => false,
            }
        });
        if interrupted {
            break;
        }
    }
    scheduler.save(&state_path)?;
    manifest.add_input(&args.input)?;
    manifest.set("probed", probed);
    manifest.finish(&parent_dir(&args.out))?;
    eprintln!("{probed} probes appended to {}", args.out.display());
    Ok(())
}
