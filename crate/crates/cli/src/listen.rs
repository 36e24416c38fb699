use std::io::Write;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use btcwatch_core::netnode::{Listener, NodeConfig, DEFAULT_MAX_INBOUND, DEFAULT_USER_AGENT};
use btcwatch_core::records::{EventSink, JsonlSink};
use btcwatch_core::report::RunManifest;
use btcwatch_core::wire::Network;
use clap::Args;
use tokio::sync::watch;

use crate::{interrupted, parent_dir, runtime, CliError};

#[derive(Debug, Args)]
pub struct ListenArgs {
    /// TCP port; defaults to the network's standard port. 0 picks a free one.
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value_t = Ipv4Addr::UNSPECIFIED)]
    bind: Ipv4Addr,
    /// mainnet, testnet, or 8 hex digits of custom magic.
    #[arg(long, default_value = "mainnet")]
    network: Network,
    /// Event log (JSONL), appended to.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value = DEFAULT_USER_AGENT)]
    user_agent: String,
    #[arg(long, default_value_t = DEFAULT_MAX_INBOUND)]
    max_inbound: usize,
    #[arg(long, default_value = "10s")]
    handshake_timeout: humantime::Duration,
    /// Stop by itself after this long instead of waiting for an interrupt.
    #[arg(long)]
    run_for: Option<humantime::Duration>,
}

/// How often buffered events are pushed to disk so a follower sees them.
const FLUSH_EVERY: Duration = Duration::from_secs(1);

pub fn run(args: ListenArgs) -> Result<(), CliError> {
    let config = NodeConfig {
        listen_port: args.port.unwrap_or_else(|| args.network.default_port()),
        bind_ip: args.bind,
        max_inbound: args.max_inbound,
        user_agent: args.user_agent.clone(),
        network: args.network,
        log_path: Some(args.log.clone()),
        handshake_timeout: *args.handshake_timeout,
        ..NodeConfig::default()
    };
    config.validate()?;
    let mut manifest = RunManifest::start("listen");
    manifest.set("bind", config.bind_ip);
    manifest.set("network", config.network);
    manifest.set("max_inbound", config.max_inbound);
    manifest.set("user_agent", &config.user_agent);
    manifest.set("handshake_timeout", args.handshake_timeout);
    manifest.set("log", args.log.display());

    let sink = Arc::new(JsonlSink::open(&args.log).map_err(CliError::io(&args.log))?);
    runtime()?.block_on(async {
        let listener = Listener::bind(config, sink.clone()).await?;
        let addr = listener.local_addr();
        manifest.set("port", addr.port());
        // Scripts read the bound address from the first stdout line.
        println!("listening on {addr}");
        let _ = std::io::stdout().flush();

        let (stop, rx) = watch::channel(false);
        let mut node = tokio::spawn(listener.run(rx));
        let deadline = async {
            match args.run_for {
                Some(d) => tokio::time::sleep(*d).await,
                None => std::future::pending().await,
            }
        };
        let stop_signal = interrupted();
        tokio::pin!(deadline, stop_signal);
        let mut ticker = tokio::time::interval(FLUSH_EVERY);
        loop {
            tokio::select! {
                done = &mut node => {
                    return done.expect("listener task panicked").map_err(CliError::from);
                }
                _ = &mut stop_signal => {
                    log::info!("interrupted, closing open connections");
                    break;
                }
                _ = &mut deadline => break,
                _ = ticker.tick() => EventSink::flush(sink.as_ref()),
            }
        }
        let _ = stop.send(true);
        node.await.expect("listener task panicked")?;
        Ok::<(), CliError>(())
    })?;
    EventSink::flush(sink.as_ref());
    manifest.finish(&parent_dir(&args.log))?;
    Ok(())
}
