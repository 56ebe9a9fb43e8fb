//! Plain-text `key = value` headers used by fit files, manifests and configs.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Result, SbrError};

pub const END_HEADER: &str = "end_header";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_f64_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

/// Ordered key-value block.
#[derive(Debug, Clone, Default)]
pub struct KvBlock {
    entries: Vec<(String, String)>,
}

impl KvBlock {
    pub fn new() -> Self {
        KvBlock::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.push(key, fmt_f64(value))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

/// Parsed key-value map.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    map: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(SbrError::Format(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvMap { map })
    }

    /// Reads lines up to (and consuming) the `end_header` marker.
    pub fn read_header<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut text = String::new();
        loop {
            let mut line = String::new();
            let read = r
                .read_line(&mut line)
                .map_err(|e| SbrError::Format(format!("reading header: {e}")))?;
            if read == 0 {
                return Err(SbrError::Format("missing end_header marker".into()));
            }
            if line.trim() == END_HEADER {
                break;
            }
            text.push_str(&line);
        }
        KvMap::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| SbrError::Format(format!("missing key '{key}'")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| SbrError::Format(format!("bad value for '{key}': '{raw}'")))
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| SbrError::Format(format!("bad list entry for '{key}': '{t}'")))
            })
            .collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e308, 123456.789] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn parses_comments_and_blank_lines() {
        let m = KvMap::parse("# top\nestimator = map  # trailing\n\nworkers=2\n").unwrap();
        assert_eq!(m.get("estimator"), Some("map"));
        assert_eq!(m.parse_value::<usize>("workers").unwrap(), 2);
        assert!(KvMap::parse("nonsense line").is_err());
    }

    #[test]
    fn header_stops_at_marker() {
        let text = b"a = 1\nend_header\nBINARY";
        let mut r = &text[..];
        let m = KvMap::read_header(&mut r).unwrap();
        assert_eq!(m.get("a"), Some("1"));
        assert_eq!(r, b"BINARY");
    }
}
