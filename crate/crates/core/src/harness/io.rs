//! Delimited click-log files.
//!
//! The native layout is one click per line:
//! `click_ts <TAB> conversion_ts <TAB> domain <TAB> feature ids...`, with an
//! empty conversion field for clicks that never convert.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stream::{ClickEvent, Delay, DomainId};
use crate::{Error, Result};

/// How feature columns are turned into ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureEncoding {
    /// Columns already hold non-negative integer ids.
    Integer,
    /// Arbitrary strings hashed into this many buckets per field.
    Hashed(u32),
}

/// Column mapping of a delimited click log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub delimiter: char,
    pub skip_header: bool,
    pub click_ts: usize,
    pub conversion_ts: usize,
    /// One-based domain column; every click is in domain 1 when absent.
    pub domain: Option<usize>,
    pub num_domains: usize,
    /// Feature columns start here and run to the end of the line.
    pub first_feature: usize,
    pub encoding: FeatureEncoding,
}

impl ColumnProfile {
    pub fn native(num_domains: usize) -> Self {
        ColumnProfile {
            delimiter: '\t',
            skip_header: false,
            click_ts: 0,
            conversion_ts: 1,
            domain: Some(2),
            num_domains,
            first_feature: 3,
            encoding: FeatureEncoding::Integer,
        }
    }

    /// Public conversion-log layout: two timestamps, then 8 integer and 9
    /// hashed categorical features, hashed into `buckets` ids per field.
    pub fn criteo(buckets: u32) -> Self {
        ColumnProfile {
            delimiter: '\t',
            skip_header: false,
            click_ts: 0,
            conversion_ts: 1,
            domain: None,
            num_domains: 1,
            first_feature: 2,
            encoding: FeatureEncoding::Hashed(buckets),
        }
    }

    pub fn by_name(name: &str, num_domains: usize) -> Result<Self> {
        match name {
            "native" => Ok(Self::native(num_domains)),
            "criteo" => Ok(Self::criteo(1 << 12)),
            _ => Err(Error::config(format!("unknown column profile '{name}'"))),
        }
    }
}

fn parse_line(line: &str, lineno: usize, id: u64, profile: &ColumnProfile) -> Result<ClickEvent> {
    let bad = |message: String| Error::Parse { line: lineno, message };
    let cols: Vec<&str> = line.split(profile.delimiter).collect();
    let col = |i: usize, name: &str| cols.get(i).copied().ok_or_else(|| bad(format!("missing {name} column")));
    let click = col(profile.click_ts, "click timestamp")?.trim();
    if click.is_empty() {
        return Err(bad("missing click timestamp".into()));
    }
    let click_ts: u64 = click.parse().map_err(|_| bad(format!("bad click timestamp '{click}'")))?;
    let conv = col(profile.conversion_ts, "conversion timestamp")?.trim();
    let delay = if conv.is_empty() {
        Delay::Never
    } else {
        let ts: u64 = conv.parse().map_err(|_| bad(format!("bad conversion timestamp '{conv}'")))?;
        if ts < click_ts {
            return Err(bad(format!("conversion at {ts} precedes click at {click_ts}")));
        }
        // same-second conversions are stored as a one-second delay
        Delay::After((ts - click_ts).max(1))
    };
    let domain = match profile.domain {
        Some(c) => {
            let raw = col(c, "domain")?.trim();
            let p: u16 = raw.parse().map_err(|_| bad(format!("bad domain '{raw}'")))?;
            DomainId::new(p, profile.num_domains).map_err(|e| bad(e.to_string()))?
        }
        None => DomainId::FIRST,
    };
    let features = cols
        .get(profile.first_feature..)
        .unwrap_or(&[])
        .iter()
        .map(|raw| match profile.encoding {
            FeatureEncoding::Integer => raw
                .trim()
                .parse::<u32>()
                .map_err(|_| bad(format!("bad feature id '{raw}'"))),
            FeatureEncoding::Hashed(buckets) => Ok((super::stable_hash(raw.trim().as_bytes()) % u64::from(buckets.max(1))) as u32),
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok(ClickEvent {
        id,
        features,
        domain,
        click_ts,
        delay,
        truth: None,
    })
}

/// Parse a click log. Event ids are assigned in line order; blank lines and
/// lines starting with `#` are skipped. All lines must carry the same number
/// of feature columns.
pub fn read_events<R: BufRead>(reader: R, profile: &ColumnProfile) -> Result<Vec<ClickEvent>> {
    let mut out: Vec<ClickEvent> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if (i == 0 && profile.skip_header) || line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let event = parse_line(line.trim_end_matches('\r'), lineno, out.len() as u64, profile)?;
        if let Some(first) = out.first() {
            if first.features.len() != event.features.len() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("{} feature columns, expected {}", event.features.len(), first.features.len()),
                });
            }
        }
        out.push(event);
    }
    Ok(out)
}

pub fn load_events(path: impl AsRef<Path>, profile: &ColumnProfile) -> Result<Vec<ClickEvent>> {
    read_events(BufReader::new(File::open(path)?), profile)
}

/// Write in the native layout.
pub fn write_events<W: Write>(mut writer: W, events: &[ClickEvent]) -> Result<()> {
    for e in events {
        write!(writer, "{}\t", e.click_ts)?;
        if let Some(ts) = e.conversion_ts() {
            write!(writer, "{ts}")?;
        }
        write!(writer, "\t{}", e.domain)?;
        for f in &e.features {
            write!(writer, "\t{f}")?;
        }
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_events(path: impl AsRef<Path>, events: &[ClickEvent]) -> Result<()> {
    write_events(BufWriter::new(File::create(path)?), events)
}

/// Per-field vocabulary sizes (largest id + 1).
pub fn infer_vocab_sizes(events: &[ClickEvent]) -> Vec<usize> {
    let fields = events.first().map_or(0, |e| e.features.len());
    let mut sizes = vec![1; fields];
    for e in events {
        for (s, &f) in sizes.iter_mut().zip(&e.features) {
            *s = (*s).max(f as usize + 1);
        }
    }
    sizes
}
