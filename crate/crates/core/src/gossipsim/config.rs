use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::regions::RegionMatrix;
use super::SimError;

/// How a region-pair latency is turned into a link latency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyModel {
    /// Every link has zero latency.
    Zero,
    /// The matrix value as is.
    Constant,
    /// The matrix value scaled by a factor drawn once per region pair.
    Uniform { lo: f64, hi: f64 },
}

impl fmt::Display for LatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyModel::Zero => f.write_str("zero"),
            LatencyModel::Constant => f.write_str("constant"),
            LatencyModel::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
        }
    }
}

impl FromStr for LatencyModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        match s {
            "zero" => return Ok(LatencyModel::Zero),
            "constant" => return Ok(LatencyModel::Constant),
            _ => {}
        }
        let inner = s
            .strip_prefix("uniform(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("unknown latency model {s:?}"))?;
        let (lo, hi) = inner
            .split_once(',')
            .ok_or_else(|| format!("expected uniform(lo,hi), got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(format!("uniform bounds must satisfy 0 <= lo <= hi, got ({lo},{hi})"));
        }
        Ok(LatencyModel::Uniform { lo, hi })
    }
}

/// Which trickle mean the client uses toward its monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorLink {
    /// The client dialled the monitor, so the monitor is one of its outbound peers.
    Outbound,
    /// The monitor is treated as one of the client's inbound peers.
    Inbound,
}

impl fmt::Display for MonitorLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MonitorLink::Outbound => "outbound",
            MonitorLink::Inbound => "inbound",
        })
    }
}

impl FromStr for MonitorLink {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "outbound" => Ok(MonitorLink::Outbound),
            "inbound" => Ok(MonitorLink::Inbound),
            other => Err(format!("expected inbound or outbound, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub server_count: usize,
    pub client_count: usize,
    pub outbound_per_client: usize,
    pub outbound_per_server: usize,
    pub max_inbound: usize,
    /// Inbound slots on every server kept free for the listener, so the rest
    /// of the topology does not depend on how many connections it opens.
    pub listener_reserved_inbound: usize,
    pub inbound_delay_mean: f64,
    pub outbound_delay_mean: f64,
    pub latency_model: LatencyModel,
    pub regions: RegionMatrix,
    /// Latency between two nodes in the same region, milliseconds.
    pub intra_region_latency_ms: f64,
    /// Latency between the client and its colocated monitor, milliseconds.
    pub monitor_latency_ms: f64,
    /// Charge each hop one extra round trip for the inv/getdata exchange.
    pub fold_inv_getdata: bool,
    pub client_region: String,
    pub listener_region: String,
    pub monitor_link: MonitorLink,
    pub listener_parallel_connections: usize,
    /// Resample the client's entry servers every this many transactions; 0 disables.
    pub entry_resample_interval: usize,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            server_count: 200,
            client_count: 2000,
            outbound_per_client: 8,
            outbound_per_server: 8,
            max_inbound: 117,
            listener_reserved_inbound: 20,
            inbound_delay_mean: 5.0,
            outbound_delay_mean: 2.5,
            latency_model: LatencyModel::Constant,
            regions: RegionMatrix::builtin(),
            intra_region_latency_ms: 0.5,
            monitor_latency_ms: 0.5,
            fold_inv_getdata: true,
            client_region: "us-east-1".into(),
            listener_region: "us-east-1".into(),
            monitor_link: MonitorLink::Outbound,
            listener_parallel_connections: 1,
            entry_resample_interval: 0,
            rng_seed: 1,
        }
    }
}

fn cfg_err(line: usize, reason: impl Into<String>) -> SimError {
    SimError::Config {
        line,
        reason: reason.into(),
    }
}

impl SimConfig {
    /// Check the parameter invariants. Means of zero are allowed and give
    /// instant relaying.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |r: String| Err(SimError::Invalid(r));
        for (name, v) in [
            ("inbound_delay_mean", self.inbound_delay_mean),
            ("outbound_delay_mean", self.outbound_delay_mean),
            ("intra_region_latency_ms", self.intra_region_latency_ms),
            ("monitor_latency_ms", self.monitor_latency_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.server_count == 0 {
            return bad("server_count must be at least 1".into());
        }
        if self.client_count == 0 {
            return bad("client_count must be at least 1 (the client under observation)".into());
        }
        if self.outbound_per_client == 0 || self.outbound_per_client > self.server_count {
            return bad(format!(
                "outbound_per_client must be in 1..={}, got {}",
                self.server_count, self.outbound_per_client
            ));
        }
        if self.outbound_per_server > self.server_count - 1 {
            return bad(format!(
                "outbound_per_server must be below server_count ({}), got {}",
                self.server_count, self.outbound_per_server
            ));
        }
        if self.listener_parallel_connections > self.listener_reserved_inbound {
            return bad(format!(
                "listener_parallel_connections ({}) exceeds listener_reserved_inbound ({})",
                self.listener_parallel_connections, self.listener_reserved_inbound
            ));
        }
        if self.listener_reserved_inbound > self.max_inbound {
            return bad("listener_reserved_inbound exceeds max_inbound".into());
        }
        for r in [&self.client_region, &self.listener_region] {
            if self.regions.index(r).is_none() {
                return bad(format!("unknown region {r:?}"));
            }
        }
        Ok(())
    }

    /// Parse a flat `key = value` file. Keys not present keep their defaults.
    /// `regions_file` is resolved relative to `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, SimError> {
        let mut cfg = SimConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| cfg_err(line, format!("expected key=value, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value, base_dir).map_err(|r| cfg_err(line, r))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| format!("{v:?}: {e}"))
        }
        match key {
            "server_count" => self.server_count = num(value)?,
            "client_count" => self.client_count = num(value)?,
            "outbound_per_client" => self.outbound_per_client = num(value)?,
            "outbound_per_server" => self.outbound_per_server = num(value)?,
            "max_inbound" => self.max_inbound = num(value)?,
            "listener_reserved_inbound" => self.listener_reserved_inbound = num(value)?,
            "inbound_delay_mean" => self.inbound_delay_mean = num(value)?,
            "outbound_delay_mean" => self.outbound_delay_mean = num(value)?,
            "latency_model" | "link_latency_model" => self.latency_model = value.parse()?,
            "regions_file" => {
                self.regions = RegionMatrix::load(&base_dir.join(value)).map_err(|e| e.to_string())?
            }
            "intra_region_latency_ms" => self.intra_region_latency_ms = num(value)?,
            "monitor_latency_ms" => self.monitor_latency_ms = num(value)?,
            "fold_inv_getdata" => self.fold_inv_getdata = num(value)?,
            "client_region" => self.client_region = value.to_string(),
            "listener_region" => self.listener_region = value.to_string(),
            "monitor_link" => self.monitor_link = value.parse()?,
            "listener_parallel_connections" => self.listener_parallel_connections = num(value)?,
            "entry_resample_interval" => self.entry_resample_interval = num(value)?,
            "rng_seed" => self.rng_seed = num(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Flat `key = value` rendering that [`SimConfig::parse`] reads back,
    /// except for the region matrix, which is summarised.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("server_count", self.server_count.to_string()),
            ("client_count", self.client_count.to_string()),
            ("outbound_per_client", self.outbound_per_client.to_string()),
            ("outbound_per_server", self.outbound_per_server.to_string()),
            ("max_inbound", self.max_inbound.to_string()),
            ("listener_reserved_inbound", self.listener_reserved_inbound.to_string()),
            ("inbound_delay_mean", self.inbound_delay_mean.to_string()),
            ("outbound_delay_mean", self.outbound_delay_mean.to_string()),
            ("latency_model", self.latency_model.to_string()),
            ("regions", self.regions.names().join(" ")),
            ("intra_region_latency_ms", self.intra_region_latency_ms.to_string()),
            ("monitor_latency_ms", self.monitor_latency_ms.to_string()),
            ("fold_inv_getdata", self.fold_inv_getdata.to_string()),
            ("client_region", self.client_region.clone()),
            ("listener_region", self.listener_region.clone()),
            ("monitor_link", self.monitor_link.to_string()),
            ("listener_parallel_connections", self.listener_parallel_connections.to_string()),
            ("entry_resample_interval", self.entry_resample_interval.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
        ]
    }

    /// Multiplier applied to every region latency.
    pub(crate) fn hop_factor(&self) -> f64 {
        if self.fold_inv_getdata {
            3.0
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_overrides_and_rejects_unknown_keys() {
        let cfg = SimConfig::parse(
            "# desk run\nserver_count = 50\nlatency_model=uniform(0.8, 1.2)\nmonitor_link = inbound\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.server_count, 50);
        assert_eq!(cfg.latency_model, LatencyModel::Uniform { lo: 0.8, hi: 1.2 });
        assert_eq!(cfg.monitor_link, MonitorLink::Inbound);

        let err = SimConfig::parse("a = 1\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = SimConfig::parse("\n\nserver_count = x\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = SimConfig {
            inbound_delay_mean: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.inbound_delay_mean = 5.0;
        c.listener_parallel_connections = 21;
        assert!(c.validate().is_err());
        c.listener_parallel_connections = 1;
        c.client_region = "mars-1".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn key_values_round_trip() {
        let cfg = SimConfig {
            server_count: 30,
            latency_model: LatencyModel::Uniform { lo: 0.5, hi: 2.0 },
            ..Default::default()
        };
        let text: String = cfg
            .to_key_values()
            .into_iter()
            .filter(|(k, _)| *k != "regions")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        assert_eq!(SimConfig::parse(&text, Path::new(".")).unwrap(), cfg);
    }
}
