//! Humane durations such as `0.25h`, `30m` or `7d`, held as whole seconds.

use serde::{Deserialize, Deserializer, Serializer};

use crate::{Error, Result};

/// Parse a duration with an optional `s`, `m`, `h` or `d` suffix; a bare
/// number is seconds. Fractions are rounded to the nearest second.
pub fn parse_duration(text: &str) -> Result<u64> {
    let t = text.trim();
    let (number, unit) = match t.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => (&t[..i], c.to_ascii_lowercase()),
        _ => (t, 's'),
    };
    let scale = match unit {
        's' => 1.0,
        'm' => 60.0,
        'h' => 3600.0,
        'd' => 86400.0,
        _ => return Err(Error::config(format!("unknown duration unit in '{text}'"))),
    };
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("malformed duration '{text}'")))?;
    if !value.is_finite() || value < 0.0 {
        return Err(Error::config(format!("duration '{text}' must be a non-negative number")));
    }
    Ok((value * scale).round() as u64)
}

/// Shortest exact rendering in the largest whole unit, else hours.
pub fn format_duration(seconds: u64) -> String {
    for (unit, size) in [("d", 86400), ("h", 3600), ("m", 60)] {
        if seconds >= size && seconds % size == 0 {
            return format!("{}{unit}", seconds / size);
        }
    }
    if seconds >= 60 {
        return format!("{}h", seconds as f64 / 3600.0);
    }
    format!("{seconds}s")
}

/// Comma-separated list of durations.
pub fn parse_duration_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_duration)
        .collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Raw {
    Seconds(u64),
    Text(String),
}

pub(crate) fn de_seconds<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    match Raw::deserialize(d)? {
        Raw::Seconds(s) => Ok(s),
        Raw::Text(t) => parse_duration(&t).map_err(serde::de::Error::custom),
    }
}

pub(crate) fn de_opt_seconds<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<u64>, D::Error> {
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Seconds(s)) => Ok(Some(s)),
        Some(Raw::Text(t)) => parse_duration(&t).map(Some).map_err(serde::de::Error::custom),
    }
}

pub(crate) fn ser_seconds<S: Serializer>(v: &u64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_duration(*v))
}

pub(crate) fn ser_opt_seconds<S: Serializer>(v: &Option<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_str(&format_duration(*v)),
        None => s.serialize_none(),
    }
}
