//! `key = value` text configuration.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered `(key, value)` pairs; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_kv(&text)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

/// `lo,hi` pair.
pub fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value.split_once(',').ok_or_else(|| Error::Config(format!("{key} expects lo,hi")))?;
    Ok((parse_value(key, a.trim())?, parse_value(key, b.trim())?))
}

pub fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown config key {key:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = parse_kv("# c\n a = 1 \n\nb=x # trailing\n").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert!(parse_kv("nonsense").is_err());
        assert_eq!(parse_range("r", "0.1, 0.2").unwrap(), (0.1, 0.2));
    }
}
