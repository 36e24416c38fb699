//! Measurement records shared by the node, the prober and the analytics
//! engine, plus their JSONL encodings.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::TxId;

/// Identifies the event log format in the first line of every log file.
pub const EVENT_LOG_SCHEMA: &str = "btcwatch-events";
pub const EVENT_LOG_VERSION: u32 = 1;

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[serde(rename = "in")]
    Inbound,
    #[serde(rename = "out")]
    Outbound,
}

/// One inbound or outbound connection as seen by the node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionRecord {
    #[serde(rename = "conn_id")]
    pub connection_id: u64,
    #[serde(rename = "ip")]
    pub remote_ip: Ipv4Addr,
    #[serde(rename = "port")]
    pub remote_port: u16,
    #[serde(rename = "dir")]
    pub direction: Direction,
    #[serde(rename = "open_ms")]
    pub open_time: u64,
    /// Absent when the node shut down with the connection still open.
    #[serde(rename = "close_ms")]
    pub close_time: Option<u64>,
    /// Only present if the remote sent a VERSION message.
    #[serde(rename = "ua")]
    pub version_string: Option<String>,
    #[serde(rename = "hs")]
    pub handshake_completed: bool,
}

impl ConnectionRecord {
    /// Both endpoints of the connection's lifetime were logged.
    pub fn is_completed(&self) -> bool {
        self.close_time.is_some()
    }

    pub fn duration_ms(&self) -> Option<u64> {
        self.close_time.map(|c| c.saturating_sub(self.open_time))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnounceKind {
    Inv,
    FullTx,
}

/// One transaction-receive event.
///
/// The log line carries only the connection id; the remote address is
/// recovered from the matching [`ConnectionRecord`] when the log is loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropagationRecord {
    pub tx_id: TxId,
    pub connection_id: u64,
    pub remote_ip: Ipv4Addr,
    pub receive_time: u64,
    pub announce_kind: AnnounceKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PropagationLine {
    txid: TxId,
    conn_id: u64,
    ms: u64,
    kind: AnnounceKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogHeader {
    schema: String,
    version: u32,
}

/// Anything the node can append to its event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Connection(ConnectionRecord),
    Propagation(PropagationRecord),
}

impl Event {
    pub fn to_json_line(&self) -> String {
        match self {
            Event::Connection(c) => serde_json::to_string(c),
            Event::Propagation(p) => serde_json::to_string(&PropagationLine {
                txid: p.tx_id,
                conn_id: p.connection_id,
                ms: p.receive_time,
                kind: p.announce_kind,
            }),
        }
        .expect("records always serialize")
    }
}

/// Receives events from concurrently running connection handlers.
pub trait EventSink: Send + Sync {
    fn record(&self, event: Event);

    fn flush(&self) {}
}

/// Collects events in memory. Used by tests and by embedding callers.
#[derive(Debug, Default)]
pub struct MemorySink {
    events: Mutex<Vec<Event>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.lock().expect("sink poisoned").clone()
    }

    pub fn connections(&self) -> Vec<ConnectionRecord> {
        self.events()
            .into_iter()
            .filter_map(|e| match e {
                Event::Connection(c) => Some(c),
                _ => None,
            })
            .collect()
    }

    pub fn propagations(&self) -> Vec<PropagationRecord> {
        self.events()
            .into_iter()
            .filter_map(|e| match e {
                Event::Propagation(p) => Some(p),
                _ => None,
            })
            .collect()
    }
}

impl EventSink for MemorySink {
    fn record(&self, event: Event) {
        self.events.lock().expect("sink poisoned").push(event);
    }
}

/// Append-only JSONL event log. The schema header is written when the file
/// is empty.
pub struct JsonlSink {
    out: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let mut out = BufWriter::new(file);
        if fresh {
            let header = LogHeader {
                schema: EVENT_LOG_SCHEMA.to_string(),
                version: EVENT_LOG_VERSION,
            };
            writeln!(out, "{}", serde_json::to_string(&header)?)?;
            out.flush()?;
        }
        Ok(JsonlSink {
            out: Mutex::new(out),
        })
    }
}

impl EventSink for JsonlSink {
    fn record(&self, event: Event) {
        let line = event.to_json_line();
        let mut out = self.out.lock().expect("sink poisoned");
        if let Err(e) = writeln!(out, "{line}") {
            log::error!("event log write failed: {e}");
        }
    }

    fn flush(&self) {
        if let Err(e) = self.out.lock().expect("sink poisoned").flush() {
            log::error!("event log flush failed: {e}");
        }
    }
}

impl Drop for JsonlSink {
    fn drop(&mut self) {
        EventSink::flush(self);
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Contents of one event log after joining propagations to their connections.
#[derive(Debug, Default, Clone)]
pub struct EventLog {
    pub connections: Vec<ConnectionRecord>,
    pub propagations: Vec<PropagationRecord>,
}

impl EventLog {
    pub fn extend(&mut self, other: EventLog) {
        self.connections.extend(other.connections);
        self.propagations.extend(other.propagations);
    }
}

/// Parse a JSONL event log. Connection ids are local to one file, so
/// propagations are resolved against connections of the same file.
pub fn read_event_log(path: &Path) -> Result<EventLog, LogError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| LogError::Io {
        path: name.clone(),
        source,
    })?;
    parse_event_log(BufReader::new(file), &name)
}

pub fn parse_event_log(reader: impl BufRead, name: &str) -> Result<EventLog, LogError> {
    let mut connections = Vec::new();
    let mut pending = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| LogError::Io {
            path: name.to_string(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| LogError::Parse {
            path: name.to_string(),
            line: lineno,
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if value.get("schema").is_some() {
            let header: LogHeader =
                serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            if header.schema != EVENT_LOG_SCHEMA || header.version > EVENT_LOG_VERSION {
                return Err(bad(format!(
                    "unsupported log schema {} v{}",
                    header.schema, header.version
                )));
            }
        } else if value.get("txid").is_some() {
            let p: PropagationLine =
                serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            pending.push((lineno, p));
        } else {
            let c: ConnectionRecord =
                serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            connections.push(c);
        }
    }
    let ips: std::collections::HashMap<u64, Ipv4Addr> = connections
        .iter()
        .map(|c| (c.connection_id, c.remote_ip))
        .collect();
    let propagations = pending
        .into_iter()
        .map(|(lineno, p)| {
            let remote_ip = *ips.get(&p.conn_id).ok_or_else(|| LogError::Parse {
                path: name.to_string(),
                line: lineno,
                reason: format!("propagation references unknown conn_id {}", p.conn_id),
            })?;
            Ok(PropagationRecord {
                tx_id: p.txid,
                connection_id: p.conn_id,
                remote_ip,
                receive_time: p.ms,
                announce_kind: p.kind,
            })
        })
        .collect::<Result<Vec<_>, LogError>>()?;
    Ok(EventLog {
        connections,
        propagations,
    })
}

/// Outcome of one reverse probe against a peer's default port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub ip: Ipv4Addr,
    #[serde(rename = "ms")]
    pub probe_time: u64,
    #[serde(rename = "tcp")]
    pub tcp_connected: bool,
    #[serde(rename = "hs")]
    pub handshake_completed: bool,
    #[serde(rename = "ua")]
    pub version_string: Option<String>,
}

pub fn read_probe_log(path: &Path) -> Result<Vec<ProbeResult>, LogError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| LogError::Io {
        path: name.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LogError::Io {
            path: name.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ProbeResult = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            path: name.clone(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conn(id: u64) -> ConnectionRecord {
        ConnectionRecord {
            connection_id: id,
            remote_ip: Ipv4Addr::new(10, 0, 0, 1),
            remote_port: 50123,
            direction: Direction::Inbound,
            open_time: 1_000,
            close_time: Some(1_300),
            version_string: Some("/breadwallet:0.6.2/".into()),
            handshake_completed: true,
        }
    }

    #[test]
    fn connection_line_uses_short_field_names() {
        let line = Event::Connection(conn(7)).to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["close_ms", "conn_id", "dir", "hs", "ip", "open_ms", "port", "ua"]
        );
        assert_eq!(v["dir"], "in");
        assert_eq!(v["ip"], "10.0.0.1");
    }

    #[test]
    fn propagation_line_fields() {
        let p = PropagationRecord {
            tx_id: TxId::of_raw_tx(b"x"),
            connection_id: 7,
            remote_ip: Ipv4Addr::new(10, 0, 0, 1),
            receive_time: 1_100,
            announce_kind: AnnounceKind::FullTx,
        };
        let v: serde_json::Value =
            serde_json::from_str(&Event::Propagation(p.clone()).to_json_line()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["conn_id", "kind", "ms", "txid"]);
        assert_eq!(v["txid"].as_str().unwrap().len(), 64);
        assert_eq!(v["kind"], "full_tx");
    }

    #[test]
    fn jsonl_sink_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let p = PropagationRecord {
            tx_id: TxId::of_raw_tx(b"y"),
            connection_id: 7,
            remote_ip: Ipv4Addr::new(10, 0, 0, 1),
            receive_time: 1_100,
            announce_kind: AnnounceKind::Inv,
        };
        {
            let sink = JsonlSink::open(&path).unwrap();
            sink.record(Event::Propagation(p.clone()));
            sink.record(Event::Connection(conn(7)));
        }
        {
            // Reopening appends without a second header.
            let sink = JsonlSink::open(&path).unwrap();
            let mut open = conn(8);
            open.close_time = None;
            sink.record(Event::Connection(open));
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("schema").count(), 1);
        let log = read_event_log(&path).unwrap();
        assert_eq!(log.connections.len(), 2);
        assert_eq!(log.propagations, vec![p]);
        assert!(!log.connections[1].is_completed());
    }

    #[test]
    fn dangling_propagation_is_an_error() {
        let text = format!(
            "{}\n",
            Event::Propagation(PropagationRecord {
                tx_id: TxId::default(),
                connection_id: 99,
                remote_ip: Ipv4Addr::LOCALHOST,
                receive_time: 0,
                announce_kind: AnnounceKind::Inv,
            })
            .to_json_line()
        );
        let err = parse_event_log(text.as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().contains("unknown conn_id 99"), "{err}");
    }

    #[test]
    fn bad_line_reports_line_number() {
        let text = "{\"schema\":\"btcwatch-events\",\"version\":1}\nnot json\n";
        let err = parse_event_log(text.as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().starts_with("mem:2:"), "{err}");
    }
}
