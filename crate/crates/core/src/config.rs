//! Line-oriented `key = value` files with `#` comments.

use crate::error::{Error, Result};

/// One `key = value` line; `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `text` into entries. Blank lines and everything after a `#` are
/// skipped. A key given twice is an error.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::parse(
                line,
                format!("expected `key = value`, got `{content}`"),
            ));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::parse(line, "empty key"));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::parse(
                line,
                format!("key `{key}` already set on line {}", prev.line),
            ));
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

/// Parses `value` as `V`, naming `key` in the error.
pub fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Validation(format!("{key}: cannot parse `{value}`: {e}")))
}

/// `true/false`, `yes/no`, `on/off`, `1/0`.
pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Validation(format!(
            "{key}: expected a boolean, got `{value}`"
        ))),
    }
}

/// Comma-separated list; empty items are dropped.
pub fn parse_list<V: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<V>>
where
    V::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}
