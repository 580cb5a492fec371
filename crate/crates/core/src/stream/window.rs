use serde::{Deserialize, Serialize};

use super::{ClickEvent, Delay};
use crate::{Error, Result};

pub const HOUR: u64 = 3600;
pub const DAY: u64 = 24 * HOUR;

/// Waiting, attribution and optional approximation windows, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub w1: u64,
    pub w2: u64,
    pub w3: Option<u64>,
}

impl WindowConfig {
    pub fn new(w1: u64, w2: u64) -> Result<Self> {
        let w = WindowConfig { w1, w2, w3: None };
        w.validate()?;
        Ok(w)
    }

    pub fn with_w3(mut self, w3: u64) -> Result<Self> {
        self.w3 = Some(w3);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.w1 && self.w1 < self.w2) {
            return Err(Error::config(format!(
                "windows must satisfy 0 < w1 < w2 (got w1={}, w2={})",
                self.w1, self.w2
            )));
        }
        if let Some(w3) = self.w3 {
            if !(self.w1 < w3 && w3 < self.w2) {
                return Err(Error::config(format!(
                    "approximation window must satisfy w1 < w3 < w2 (got w3={w3})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleKind {
    /// Converted inside the waiting window.
    Positive,
    /// Converted after the waiting window but inside the attribution window.
    FakeNegative,
    /// Never converted inside the attribution window.
    RealNegative,
}

impl SampleKind {
    pub fn eventual_label(self) -> u8 {
        match self {
            SampleKind::RealNegative => 0,
            _ => 1,
        }
    }
}

/// Classify a click by its delay; window boundaries count as inside.
pub fn classify_sample(event: &ClickEvent, windows: &WindowConfig) -> SampleKind {
    classify_delay(event.delay, windows.w1, windows.w2)
}

pub(crate) fn classify_delay(delay: Delay, w1: u64, w2: u64) -> SampleKind {
    match delay {
        Delay::After(z) if z <= w1 => SampleKind::Positive,
        Delay::After(z) if z <= w2 => SampleKind::FakeNegative,
        _ => SampleKind::RealNegative,
    }
}
