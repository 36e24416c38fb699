//! Human-readable report over an analysis output directory, and the run
//! manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{bucket_label, render_overview, OverviewRow, BUCKETS, OVERVIEW_STATS};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("{0} is not a directory")]
    NotADirectory(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub text: String,
    /// Sections that could not be rendered, one message each.
    pub warnings: Vec<String>,
}

type Table = (Vec<String>, Vec<Vec<String>>);

fn read_csv(path: &Path) -> Result<Option<Table>, ReportError> {
    if !path.exists() {
        return Ok(None);
    }
    let name = path.display().to_string();
    let fmt = |e: csv::Error| ReportError::Format {
        path: name.clone(),
        reason: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(fmt)?;
    let header = r.headers().map_err(fmt)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(fmt)?;
    Ok(Some((header, rows)))
}

fn parse_overview(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<Vec<OverviewRow>, ReportError> {
    let bad = |reason: String| ReportError::Format {
        path: path.display().to_string(),
        reason,
    };
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let stat_col = col("stat")?;
    let total_col = col("total")?;
    let bucket_cols = BUCKETS
        .iter()
        .map(|b| col(bucket_label(*b)).map(|c| (*b, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let num = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("not a count: {v:?}")));
    rows.iter()
        .map(|row| {
            let stat = OVERVIEW_STATS
                .iter()
                .find(|s| **s == row[stat_col])
                .ok_or_else(|| bad(format!("unknown statistic {:?}", row[stat_col])))?;
            let mut counts = BTreeMap::new();
            for (b, c) in &bucket_cols {
                counts.insert(*b, num(&row[*c])?);
            }
            Ok(OverviewRow {
                stat,
                counts,
                total: num(&row[total_col])?,
            })
        })
        .collect()
}

/// Render the overview, ephemeral, concentration and population sections
/// found in `dir`. Missing tables are reported as warnings.
pub fn report(dir: &Path) -> Result<Report, ReportError> {
    if !dir.is_dir() {
        return Err(ReportError::NotADirectory(dir.display().to_string()));
    }
    let mut text = String::new();
    let mut warnings = Vec::new();
    let missing = |file: &str, warnings: &mut Vec<String>| {
        warnings.push(format!("{file} not found in {}, section skipped", dir.display()));
    };

    let _ = writeln!(text, "Dataset overview");
    let path = dir.join("overview.csv");
    match read_csv(&path)? {
        Some((h, rows)) => text.push_str(&render_overview(&parse_overview(&path, &h, &rows)?)),
        None => missing("overview.csv", &mut warnings),
    }

    match read_csv(&dir.join("ephemeral.csv"))? {
        Some((_, rows)) => {
            let _ = writeln!(text, "\nEphemeral connections (under 500 ms)");
            for r in rows.iter().filter(|r| r.len() == 4) {
                let pct = r[3].parse::<f64>().unwrap_or(0.0) * 100.0;
                let _ = writeln!(text, "{:<14}{:>10} of {:>10} ({pct:.2}%)", r[0], r[2], r[1]);
            }
        }
        None => missing("ephemeral.csv", &mut warnings),
    }

    for (file, title) in [
        ("concentration_asn.csv", "Top ASes by unreachable IPs"),
        ("concentration_country.csv", "Top countries by unreachable IPs"),
    ] {
        match read_csv(&dir.join(file))? {
            Some((_, rows)) => {
                let _ = writeln!(text, "\n{title}");
                for r in rows.iter().take(5).filter(|r| r.len() == 5) {
                    let share = r[4].parse::<f64>().unwrap_or(0.0) * 100.0;
                    let _ = writeln!(text, "{:>3}. {:<16}{:>10}  cumulative {share:.2}%", r[0], r[1], r[2]);
                }
            }
            None => missing(file, &mut warnings),
        }
    }

    match read_csv(&dir.join("population.csv"))? {
        Some((h, rows)) => {
            let _ = writeln!(text, "\nPopulation estimate");
            if let Some(r) = rows.first() {
                for (k, v) in h.iter().zip(r) {
                    let _ = writeln!(text, "{k:<34}{v}");
                }
            }
        }
        None => missing("population.csv", &mut warnings),
    }

    for w in &warnings {
        let _ = writeln!(text, "\nwarning: {w}");
    }
    Ok(Report { text, warnings })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command invocation, stored as `manifest.json` in its
/// output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub started: String,
    pub finished: Option<String>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
}

fn timestamp() -> String {
    humantime::format_rfc3339_millis(SystemTime::now()).to_string()
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: timestamp(),
            finished: None,
            config: BTreeMap::new(),
            inputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), ReportError> {
        let sha256 = sha256_file(path).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    /// Stamp the end time and write the manifest into `dir`, replacing any
    /// previous one.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf, ReportError> {
        self.finished = Some(timestamp());
        let path = dir.join(MANIFEST_FILE);
        let io_err = |source| ReportError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(io_err)?;
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(io_err)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, b"abc").unwrap();
        let mut m = RunManifest::start("simulate");
        m.set("seeds", 3);
        m.add_input(&input).unwrap();
        m.clone().finish(dir.path()).unwrap();
        m.finish(dir.path()).unwrap();
        let manifests: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name() == MANIFEST_FILE)
            .collect();
        assert_eq!(manifests.len(), 1);
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(v["config"]["seeds"], "3");
        assert!(v["finished"].is_string());
    }

    #[test]
    fn missing_sections_warn() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(dir.path()).unwrap();
        assert_eq!(r.warnings.len(), 5);
        assert!(r.text.contains("warning: overview.csv"));
    }

    #[test]
    fn percentages_sum_per_column() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("overview.csv"),
            "stat,type0,type1,type2,unclassified,total\nips,70,20,10,0,100\nconns,1,1,1,0,3\n",
        )
        .unwrap();
        let r = report(dir.path()).unwrap();
        for col in ["ips", "conns"] {
            let idx = ["ips", "conns"].iter().position(|c| *c == col).unwrap();
            let total: f64 = r
                .text
                .lines()
                .filter(|l| l.starts_with("type") || l.starts_with("unclassified"))
                .map(|l| {
                    let pcts: Vec<f64> = l
                        .split('(')
                        .skip(1)
                        .map(|p| p.split('%').next().unwrap().parse().unwrap())
                        .collect();
                    pcts[idx]
                })
                .sum();
            assert!((total - 100.0).abs() <= 0.1, "{col}: {total}");
        }
    }
}
