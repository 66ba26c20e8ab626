//! `key=value` text configuration helpers.

use std::str::FromStr;

use crate::error::{invalid, Result};

/// Parses `key=value` lines, skipping blanks and `#` comments. Later
/// duplicates follow earlier ones in the returned order.
pub fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect()
}

/// Strict variant of [`parse_kv`]: lines without `=` are errors.
pub fn parse_kv_strict(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| invalid(format!("bad value for {key}: `{value}`")))
}

/// Comma-separated list; an empty string is an empty list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|x| parse_value(key, x)).collect()
}

pub fn join_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blanks() {
        let kv = parse_kv("# head\n\na = 1 # trailing\nb=x,y\nnoeq\n");
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x,y".into())]);
        assert!(parse_kv_strict("noeq").is_err());
        assert_eq!(parse_list::<f64>("r", "1,4").unwrap(), vec![1.0, 4.0]);
        assert!(parse_value::<usize>("n", "-1").is_err());
    }
}
