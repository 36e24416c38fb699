use std::path::PathBuf;

use btcwatch_core::analytics::{
    analyze, AnalysisInputs, AsnDatabase, PopulationParams, TorList, DEFAULT_PARALLEL_CONNECTIONS,
    DEFAULT_WINDOW_MS,
};
use btcwatch_core::records::{read_event_log, read_probe_log, EventLog};
use btcwatch_core::report::RunManifest;
use clap::Args;

use crate::{require_file, CliError};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// One or more node event logs.
    #[arg(long, num_args = 1.., required = true)]
    log: Vec<PathBuf>,
    /// Probe results; without them every address is left unclassified.
    #[arg(long)]
    probes: Option<PathBuf>,
    /// Prefix snapshot with `CIDR<TAB>ASN<TAB>CC` rows.
    #[arg(long)]
    asn: Option<PathBuf>,
    /// Known Tor exit addresses, one per line.
    #[arg(long)]
    tor: Option<PathBuf>,
    /// Output directory for the CSV tables and summary.
    #[arg(long)]
    out: PathBuf,
    /// Number of monitoring nodes the logs were collected from.
    #[arg(long, default_value_t = 1.0)]
    monitors: f64,
    /// Size of the public server population.
    #[arg(long, default_value_t = 5540.0)]
    servers: f64,
    /// Average parallel connections a wallet client keeps.
    #[arg(long, default_value_t = DEFAULT_PARALLEL_CONNECTIONS)]
    conns: f64,
    /// Counting window for per-window unique addresses.
    #[arg(long, default_value = "6h")]
    window: humantime::Duration,
}

pub fn run(args: AnalyzeArgs) -> Result<(), CliError> {
    let optional = [&args.probes, &args.asn, &args.tor];
    for path in args.log.iter().chain(optional.into_iter().flatten()) {
        require_file(path)?;
    }
    let window_ms = args.window.as_millis() as u64;
    if window_ms == 0 {
        return Err(CliError::Invalid("--window must be positive".into()));
    }
    let mut manifest = RunManifest::start("analyze");

    let mut log = EventLog::default();
    for path in &args.log {
        log.extend(read_event_log(path)?);
        manifest.add_input(path)?;
    }
    let probes = match &args.probes {
        Some(p) => {
            manifest.add_input(p)?;
            read_probe_log(p)?
        }
        None => Vec::new(),
    };
    let asn = match &args.asn {
        Some(p) => {
            manifest.add_input(p)?;
            AsnDatabase::load(p)?
        }
        None => AsnDatabase::new(),
    };
    let tor = match &args.tor {
        Some(p) => {
            manifest.add_input(p)?;
            TorList::load(p)?
        }
        None => TorList::default(),
    };

    let population = PopulationParams {
        monitor_count: args.monitors,
        total_public_servers: args.servers,
        avg_parallel_connections: args.conns,
    };
    manifest.set("monitors", args.monitors);
    manifest.set("servers", args.servers);
    manifest.set("conns", args.conns);
    manifest.set("window", args.window);
    if window_ms != DEFAULT_WINDOW_MS {
        log::info!("using a {} window", args.window);
    }

    let report = analyze(&AnalysisInputs {
        log,
        probes,
        asn,
        tor,
        population,
        window_ms,
    })?;
    report.write(&args.out)?;
    manifest.finish(&args.out)?;
    print!("{}", report.summary);
    Ok(())
}
