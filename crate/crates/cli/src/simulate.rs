use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use btcwatch_core::gossipsim::{pooled, run_seeds, write_results_csv, GroundTruth, SimConfig};
use btcwatch_core::report::RunManifest;
use clap::Args;

use crate::{parent_dir, require_file, CliError};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set listener_parallel_connections=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Transactions originated by the client, per seed.
    #[arg(long)]
    txs: usize,
    /// Transactions originated elsewhere and relayed by the client, per seed.
    /// Defaults to the value of --txs.
    #[arg(long)]
    relay_txs: Option<usize>,
    /// Number of seeds, counting up from the configured rng_seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Results CSV, one row per seed.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: SimulateArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("simulate");
    let mut config = match &args.config {
        Some(path) => {
            require_file(path)?;
            manifest.add_input(path)?;
            SimConfig::load(path)?
        }
        None => SimConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config
            .set(k.trim(), v.trim(), Path::new("."))
            .map_err(|e| CliError::Invalid(format!("--set {kv}: {e}")))?;
    }
    config.validate()?;
    if args.seeds == 0 {
        return Err(CliError::Invalid("--seeds must be at least 1".into()));
    }
    let relay_txs = args.relay_txs.unwrap_or(args.txs);
    let seeds: Vec<u64> = (0..args.seeds).map(|i| config.rng_seed.wrapping_add(i)).collect();

    for (k, v) in config.to_key_values() {
        manifest.set(k, v);
    }
    manifest.set("txs", args.txs);
    manifest.set("relay_txs", relay_txs);
    manifest.set("seeds", args.seeds);

    let results = run_seeds(&config, &seeds, args.txs, relay_txs)?;
    let file = File::create(&args.out).map_err(CliError::io(&args.out))?;
    write_results_csv(&results, BufWriter::new(file))?;
    manifest.finish(&parent_dir(&args.out))?;

    let tp = pooled(&results, GroundTruth::Originator);
    let fp = pooled(&results, GroundTruth::Relay);
    eprintln!(
        "{} seeds: pooled tp_rate {tp:.4}, fp_rate {fp:.4}; results in {}",
        seeds.len(),
        args.out.display()
    );
    Ok(())
}
