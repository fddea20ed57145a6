//! Flat `key=value` text used for config files, run logs and checkpoint
//! headers.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// surrounding whitespace is trimmed. Order is preserved.
pub fn parse(body: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in body.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_pair(item: &str) -> Result<(String, String)> {
    let (k, v) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got {item:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| Error::Config(format!("{key}={raw:?}: {e}")))
}

/// Parses `lo..hi` or `lo-hi` inclusive ranges.
pub fn range(key: &str, raw: &str) -> Result<(usize, usize)> {
    let (lo, hi) = raw
        .split_once("..")
        .or_else(|| raw.split_once('-'))
        .ok_or_else(|| Error::Config(format!("{key}={raw:?}: expected lo..hi")))?;
    Ok((value(key, lo.trim())?, value(key, hi.trim())?))
}

pub fn format_range((lo, hi): (usize, usize)) -> String {
    format!("{lo}..{hi}")
}

/// Accumulates lines in insertion order.
#[derive(Default)]
pub struct Writer {
    body: String,
}

impl Writer {
    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.body.push_str(key);
        self.body.push('=');
        self.body.push_str(&value.to_string());
        self.body.push('\n');
        self
    }

    pub fn finish(self) -> String {
        self.body
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_comments() {
        let kv = parse("# run\nd = 32\n\nmode=rnnt\n").unwrap();
        assert_eq!(kv, vec![("d".into(), "32".into()), ("mode".into(), "rnnt".into())]);
        assert!(parse("nonsense").is_err());
        assert_eq!(range("x", "2..10").unwrap(), (2, 10));
        assert_eq!(range("x", "3-5").unwrap(), (3, 5));
    }
}
