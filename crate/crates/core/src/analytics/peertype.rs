use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::Serialize;

use super::AnalyticsError;

/// Behavioural peer category inferred from version strings and Tor membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerType {
    Mobile,
    Probe,
    Tor,
    Other,
}

impl PeerType {
    pub const ALL: [PeerType; 4] = [PeerType::Mobile, PeerType::Probe, PeerType::Tor, PeerType::Other];

    pub fn label(self) -> &'static str {
        match self {
            PeerType::Mobile => "mobile",
            PeerType::Probe => "probe",
            PeerType::Tor => "tor",
            PeerType::Other => "other",
        }
    }
}

impl fmt::Display for PeerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

const MOBILE_MARKERS: &[&str] = &["breadwallet", "Bitcoin Wallet"];
const PROBE_MARKERS: &[&str] = &["Snoopy", "bitcoin-seeder"];

/// Static list of Tor relay and exit addresses, one IPv4 per line.
#[derive(Debug, Clone, Default)]
pub struct TorList(HashSet<Ipv4Addr>);

impl TorList {
    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        self.0.contains(&ip)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parse(reader: impl BufRead, name: &str) -> Result<Self, AnalyticsError> {
        let mut set = HashSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| AnalyticsError::io(name, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ip = line.parse().map_err(|_| AnalyticsError::Format {
                path: name.to_string(),
                line: idx + 1,
                reason: format!("not an IPv4 address: {line}"),
            })?;
            set.insert(ip);
        }
        Ok(TorList(set))
    }

    pub fn load(path: &Path) -> Result<Self, AnalyticsError> {
        let name = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| AnalyticsError::io(&name, e))?;
        Self::parse(std::io::BufReader::new(file), &name)
    }
}

impl FromIterator<Ipv4Addr> for TorList {
    fn from_iter<I: IntoIterator<Item = Ipv4Addr>>(iter: I) -> Self {
        TorList(iter.into_iter().collect())
    }
}

/// Tor membership first; then mobile, then probe by case-sensitive substring
/// over any observed version string; otherwise `Other`.
pub fn classify_peer_type<'a>(
    version_strings: impl IntoIterator<Item = &'a str>,
    ip: Ipv4Addr,
    tor: &TorList,
) -> PeerType {
    if tor.contains(ip) {
        return PeerType::Tor;
    }
    let mut probe = false;
    for ua in version_strings {
        if MOBILE_MARKERS.iter().any(|m| ua.contains(m)) {
            return PeerType::Mobile;
        }
        probe |= PROBE_MARKERS.iter().any(|m| ua.contains(m));
    }
    if probe {
        PeerType::Probe
    } else {
        PeerType::Other
    }
}
