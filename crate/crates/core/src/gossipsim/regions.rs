use std::collections::HashMap;
use std::path::Path;

use super::SimError;

const BUILTIN: &str = include_str!("../../data/regions.csv");

/// Symmetric one-way latency between named regions, in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMatrix {
    names: Vec<String>,
    latency_ms: Vec<Vec<f64>>,
}

impl RegionMatrix {
    /// The shipped 14-region matrix.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN, "builtin regions").expect("shipped region matrix is valid")
    }

    /// Rows are `region_a,region_b,latency_ms`. Every unordered pair of
    /// distinct regions must appear exactly once; `#` lines and an optional
    /// header row are skipped.
    pub fn parse(text: &str, name: &str) -> Result<Self, SimError> {
        let err = |line: usize, reason: String| SimError::Regions {
            path: name.to_string(),
            line,
            reason,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut names = Vec::new();
        let mut pairs = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| err(0, e.to_string()))?;
            let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
            if row.len() != 3 {
                return Err(err(line, format!("expected 3 fields, got {}", row.len())));
            }
            if &row[0] == "region_a" {
                continue;
            }
            let ms: f64 = row[2]
                .parse()
                .map_err(|_| err(line, format!("bad latency {:?}", &row[2])))?;
            if !(ms.is_finite() && ms >= 0.0) {
                return Err(err(line, format!("latency must be non-negative, got {ms}")));
            }
            if row[0] == row[1] {
                return Err(err(line, "a region paired with itself".into()));
            }
            let mut id = |n: &str| {
                *index.entry(n.to_string()).or_insert_with(|| {
                    names.push(n.to_string());
                    names.len() - 1
                })
            };
            let (a, b) = (id(&row[0]), id(&row[1]));
            pairs.push((line, a, b, ms));
        }
        let n = names.len();
        let mut latency_ms = vec![vec![f64::NAN; n]; n];
        for (line, a, b, ms) in pairs {
            if !latency_ms[a][b].is_nan() {
                return Err(err(line, format!("duplicate pair {} {}", names[a], names[b])));
            }
            latency_ms[a][b] = ms;
            latency_ms[b][a] = ms;
        }
        for (a, row) in latency_ms.iter_mut().enumerate() {
            row[a] = 0.0;
            if let Some(b) = row.iter().position(|v| v.is_nan()) {
                return Err(err(0, format!("missing pair {} {}", names[a], names[b])));
            }
        }
        if n == 0 {
            return Err(err(0, "no regions".into()));
        }
        Ok(RegionMatrix { names, latency_ms })
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: name.clone(),
            source,
        })?;
        Self::parse(&text, &name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Latency between two distinct regions; zero on the diagonal.
    pub fn latency_ms(&self, a: usize, b: usize) -> f64 {
        self.latency_ms[a][b]
    }
}
