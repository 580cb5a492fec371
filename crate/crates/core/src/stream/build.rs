//! Training-stream construction.
//!
//! Every policy turns a click log into time-ordered ingestion records. A
//! click may be ingested twice: once when its provisional label is assigned
//! (`Occurrence::First`) and once more when a better label becomes known
//! (`Occurrence::Duplicate`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::window::classify_delay;
use super::{ClickEvent, Delay, DomainId, SampleKind, WindowConfig, HOUR};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamPolicy {
    /// Ingest once after the waiting window, never correct.
    NoDup,
    /// Ingest immediately as negative; duplicate as positive at conversion.
    NoWin,
    /// Ingest after the waiting window; duplicate fake negatives as positive.
    Win,
    /// Ingest after the waiting window; duplicate every click with its final
    /// label (positives at `w1`, fake negatives at conversion, real negatives
    /// at `w2`).
    RealNegDup,
    /// `RealNegDup` with real negatives confirmed early at `w3`.
    RealNegDupApprox,
    /// Ingest immediately as negative; duplicate every click with its final
    /// label (conversions when they happen, real negatives at `w3` if set,
    /// else `w2`).
    NoWinRealNeg,
    /// Ingest once after the waiting window with the eventual label.
    Oracle,
}

impl StreamPolicy {
    pub const ALL: [StreamPolicy; 7] = [
        StreamPolicy::NoDup,
        StreamPolicy::NoWin,
        StreamPolicy::Win,
        StreamPolicy::RealNegDup,
        StreamPolicy::RealNegDupApprox,
        StreamPolicy::NoWinRealNeg,
        StreamPolicy::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StreamPolicy::NoDup => "no-dup",
            StreamPolicy::NoWin => "no-win",
            StreamPolicy::Win => "win",
            StreamPolicy::RealNegDup => "real-neg-dup",
            StreamPolicy::RealNegDupApprox => "real-neg-dup-approx",
            StreamPolicy::NoWinRealNeg => "no-win-real-neg",
            StreamPolicy::Oracle => "oracle",
        }
    }

    /// Check the windows carry everything this policy reads.
    pub fn check_windows(self, windows: &WindowConfig) -> Result<()> {
        windows.validate()?;
        if self == StreamPolicy::RealNegDupApprox && windows.w3.is_none() {
            return Err(Error::contract(
                "real-neg-dup-approx needs an approximation window w3",
            ));
        }
        Ok(())
    }
}

impl fmt::Display for StreamPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreamPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StreamPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown stream policy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Occurrence {
    First,
    Duplicate,
}

/// One ingestion of a click into the training pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRecord {
    /// Position of the source click in the slice the stream was built from.
    pub event: usize,
    pub event_id: u64,
    pub domain: DomainId,
    pub label: u8,
    pub ingest_ts: u64,
    pub occurrence: Occurrence,
    /// The click's sample kind as the pipeline eventually learns it: the
    /// waiting window against the attribution window, or against `w3` for
    /// the approximating policies.
    pub kind: SampleKind,
}

impl StreamRecord {
    pub fn features<'a>(&self, events: &'a [ClickEvent]) -> &'a [u32] {
        &events[self.event].features
    }
}

/// Build the ingestion stream for `events` under `policy` with shared windows.
pub fn build_stream(
    events: &[ClickEvent],
    policy: StreamPolicy,
    windows: &WindowConfig,
) -> Result<Vec<StreamRecord>> {
    policy.check_windows(windows)?;
    build_stream_with(events, policy, |_| *windows)
}

/// Build a stream where each click may carry its own windows (for example a
/// waiting window predicted per sample).
pub fn build_stream_with<F>(
    events: &[ClickEvent],
    policy: StreamPolicy,
    windows_for: F,
) -> Result<Vec<StreamRecord>>
where
    F: Fn(&ClickEvent) -> WindowConfig,
{
    let mut out = Vec::with_capacity(events.len() * 2);
    for (index, event) in events.iter().enumerate() {
        let windows = windows_for(event);
        policy.check_windows(&windows)?;
        emit(index, event, policy, &windows, &mut out);
    }
    out.sort_by_key(|r| (r.ingest_ts, r.event_id, r.occurrence));
    Ok(out)
}

fn emit(
    index: usize,
    event: &ClickEvent,
    policy: StreamPolicy,
    windows: &WindowConfig,
    out: &mut Vec<StreamRecord>,
) {
    let WindowConfig { w1, w2, w3 } = *windows;
    let t0 = event.click_ts;
    let horizon = match policy {
        StreamPolicy::RealNegDupApprox => w3.expect("checked by check_windows"),
        StreamPolicy::NoWinRealNeg => w3.unwrap_or(w2),
        _ => w2,
    };
    let kind = classify_delay(event.delay, w1, horizon);
    let record = |label: u8, ingest_ts: u64, occurrence: Occurrence| StreamRecord {
        event: index,
        event_id: event.id,
        domain: event.domain,
        label,
        ingest_ts,
        occurrence,
        kind,
    };
    let window_label = u8::from(kind == SampleKind::Positive);
    let converts_by = |limit: u64| match event.delay {
        Delay::After(z) if z <= limit => Some(z),
        _ => None,
    };

    match policy {
        StreamPolicy::NoDup => out.push(record(window_label, t0 + w1, Occurrence::First)),
        StreamPolicy::Oracle => {
            out.push(record(kind.eventual_label(), t0 + w1, Occurrence::First))
        }
        StreamPolicy::NoWin => {
            out.push(record(0, t0, Occurrence::First));
            if let Some(z) = converts_by(w2) {
                out.push(record(1, t0 + z, Occurrence::Duplicate));
            }
        }
        StreamPolicy::Win => {
            out.push(record(window_label, t0 + w1, Occurrence::First));
            if kind == SampleKind::FakeNegative {
                let z = event.delay.seconds().expect("fake negatives convert");
                out.push(record(1, t0 + z, Occurrence::Duplicate));
            }
        }
        StreamPolicy::RealNegDup | StreamPolicy::RealNegDupApprox => {
            out.push(record(window_label, t0 + w1, Occurrence::First));
            let dup = match kind {
                SampleKind::Positive => record(1, t0 + w1, Occurrence::Duplicate),
                SampleKind::FakeNegative => {
                    let z = event.delay.seconds().expect("fake negatives convert");
                    record(1, t0 + z, Occurrence::Duplicate)
                }
                SampleKind::RealNegative => record(0, t0 + horizon, Occurrence::Duplicate),
            };
            out.push(dup);
        }
        StreamPolicy::NoWinRealNeg => {
            out.push(record(0, t0, Occurrence::First));
            let dup = match converts_by(horizon) {
                Some(z) => record(1, t0 + z, Occurrence::Duplicate),
                None => record(0, t0 + horizon, Occurrence::Duplicate),
            };
            out.push(dup);
        }
    }
}

/// Records whose ingestion time falls in one wall-clock hour.
#[derive(Debug, Clone, Copy)]
pub struct HourBatch<'a> {
    /// Hours since epoch.
    pub hour: u64,
    pub records: &'a [StreamRecord],
}

/// Split a time-sorted stream into consecutive hourly batches, from the hour
/// of the first record to the hour of the last, keeping empty hours.
pub fn chunk_by_hour(records: &[StreamRecord]) -> Result<Vec<HourBatch<'_>>> {
    if records.windows(2).any(|w| w[0].ingest_ts > w[1].ingest_ts) {
        return Err(Error::contract("records must be sorted by ingestion time"));
    }
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return Ok(Vec::new());
    };
    let (h0, h1) = (first.ingest_ts / HOUR, last.ingest_ts / HOUR);
    let mut out = Vec::with_capacity((h1 - h0 + 1) as usize);
    let mut start = 0;
    for hour in h0..=h1 {
        let end = start
            + records[start..]
                .iter()
                .take_while(|r| r.ingest_ts / HOUR == hour)
                .count();
        out.push(HourBatch {
            hour,
            records: &records[start..end],
        });
        start = end;
    }
    Ok(out)
}
