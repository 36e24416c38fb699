use std::path::PathBuf;

use btcwatch_core::report::{report, RunManifest};
use clap::Args;

use crate::{parent_dir, CliError};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `btcwatch analyze`.
    dir: PathBuf,
    /// Also save the report to this file (a manifest is written next to it).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: ReportArgs) -> Result<(), CliError> {
    let r = report(&args.dir)?;
    for w in &r.warnings {
        log::warn!("{w}");
    }
    print!("{}", r.text);
    if let Some(out) = &args.out {
        std::fs::write(out, &r.text).map_err(CliError::io(out))?;
        let mut manifest = RunManifest::start("report");
        manifest.set("dir", args.dir.display());
        manifest.finish(&parent_dir(out))?;
    }
    Ok(())
}
