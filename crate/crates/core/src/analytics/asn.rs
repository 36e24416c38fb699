//! Longest-prefix IPv4 → (ASN, country) lookup over an offline snapshot.
//!
//! Snapshot rows are `CIDR<TAB>ASN<TAB>CC`. Blank lines and lines starting
//! with `#` are skipped; a `# snapshot: <date>` comment records the date.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::net::Ipv4Addr;
use std::path::Path;

use super::AnalyticsError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AsnInfo {
    pub asn: u32,
    pub country: String,
}

impl fmt::Display for AsnInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AS{} ({})", self.asn, self.country)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AsnDatabase {
    /// One table per prefix length, keyed by the masked network address.
    by_len: Vec<HashMap<u32, AsnInfo>>,
    lengths: Vec<u8>,
    pub snapshot_date: Option<String>,
    entries: usize,
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

impl AsnDatabase {
    pub fn new() -> Self {
        AsnDatabase {
            by_len: vec![HashMap::new(); 33],
            ..Default::default()
        }
    }

    pub fn insert(&mut self, network: Ipv4Addr, len: u8, info: AsnInfo) {
        assert!(len <= 32, "prefix length {len} out of range");
        if self.by_len.is_empty() {
            self.by_len = vec![HashMap::new(); 33];
        }
        let key = u32::from(network) & mask(len);
        if self.by_len[len as usize].insert(key, info).is_none() {
            self.entries += 1;
        }
        if !self.lengths.contains(&len) {
            self.lengths.push(len);
            self.lengths.sort_unstable_by(|a, b| b.cmp(a));
        }
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    /// Most specific prefix covering `ip`, or `None` when nothing covers it.
    pub fn lookup(&self, ip: Ipv4Addr) -> Option<&AsnInfo> {
        let addr = u32::from(ip);
        self.lengths
            .iter()
            .find_map(|&len| self.by_len[len as usize].get(&(addr & mask(len))))
    }

    pub fn parse(reader: impl BufRead, name: &str) -> Result<Self, AnalyticsError> {
        let mut db = AsnDatabase::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| AnalyticsError::io(name, e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(date) = comment.trim().strip_prefix("snapshot:") {
                    db.snapshot_date = Some(date.trim().to_string());
                }
                continue;
            }
            let bad = |reason: &str| AnalyticsError::Format {
                path: name.to_string(),
                line: lineno,
                reason: reason.to_string(),
            };
            let mut cols = line.split('\t');
            let (Some(cidr), Some(asn), Some(cc), None) =
                (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(bad("expected CIDR<TAB>ASN<TAB>CC"));
            };
            let (net, len) = cidr.split_once('/').ok_or_else(|| bad("missing prefix length"))?;
            let net: Ipv4Addr = net.parse().map_err(|_| bad("bad network address"))?;
            let len: u8 = len
                .parse()
                .ok()
                .filter(|l| *l <= 32)
                .ok_or_else(|| bad("bad prefix length"))?;
            let asn: u32 = asn
                .trim_start_matches("AS")
                .parse()
                .map_err(|_| bad("bad AS number"))?;
            let cc = cc.trim();
            if cc.is_empty() {
                return Err(bad("empty country code"));
            }
            db.insert(
                net,
                len,
                AsnInfo {
                    asn,
                    country: cc.to_string(),
                },
            );
        }
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self, AnalyticsError> {
        let name = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| AnalyticsError::io(&name, e))?;
        Self::parse(std::io::BufReader::new(file), &name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(text: &str) -> AsnDatabase {
        AsnDatabase::parse(text.as_bytes(), "test").unwrap()
    }

    #[test]
    fn longest_prefix_wins() {
        let d = db("# snapshot: 2017-06-01\n10.0.0.0/8\t100\tUS\n10.1.2.0/24\t200\tDE\n");
        assert_eq!(d.snapshot_date.as_deref(), Some("2017-06-01"));
        assert_eq!(d.lookup("10.9.9.9".parse().unwrap()).unwrap().asn, 100);
        let hit = d.lookup("10.1.2.77".parse().unwrap()).unwrap();
        assert_eq!((hit.asn, hit.country.as_str()), (200, "DE"));
        assert_eq!(d.lookup("11.0.0.1".parse().unwrap()), None);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn default_route_and_host_routes() {
        let d = db("0.0.0.0/0\t1\tZZ\n192.0.2.1/32\t64500\tUS\n");
        assert_eq!(d.lookup("8.8.8.8".parse().unwrap()).unwrap().asn, 1);
        assert_eq!(d.lookup("192.0.2.1".parse().unwrap()).unwrap().asn, 64500);
        assert_eq!(d.lookup("192.0.2.2".parse().unwrap()).unwrap().asn, 1);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        for bad in ["10.0.0.0\t1\tUS", "10.0.0.0/33\t1\tUS", "10.0.0.0/8\tx\tUS", "10.0.0.0/8 1 US"] {
            let text = format!("1.0.0.0/8\t5\tAU\n{bad}\n");
            let err = AsnDatabase::parse(text.as_bytes(), "snap.tsv").unwrap_err();
            assert!(err.to_string().starts_with("snap.tsv:2:"), "{err}");
        }
    }

    #[test]
    fn matches_linear_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut d = AsnDatabase::new();
        let mut rows = Vec::new();
        for i in 0..300u32 {
            let len: u8 = rng.gen_range(4..=28);
            let net = rng.gen::<u32>() & mask(len);
            d.insert(Ipv4Addr::from(net), len, AsnInfo { asn: i, country: "XX".into() });
            rows.retain(|(n, l, _)| !(*n == net && *l == len));
            rows.push((net, len, i));
        }
        for _ in 0..5_000 {
            // Bias queries toward covered space.
            let (net, len, _) = rows[rng.gen_range(0..rows.len())];
            let ip = net | (rng.gen::<u32>() & !mask(len));
            let expected = rows
                .iter()
                .filter(|(n, l, _)| ip & mask(*l) == *n)
                .max_by_key(|(_, l, _)| *l)
                .map(|(_, _, a)| *a);
            assert_eq!(d.lookup(Ipv4Addr::from(ip)).map(|i| i.asn), expected);
        }
    }
}
