use std::fmt;
use std::num::NonZeroU16;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One-based business-domain indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainId(NonZeroU16);

impl DomainId {
    /// Domain `p` out of `num_domains`; requires `1 <= p <= num_domains`.
    pub fn new(p: u16, num_domains: usize) -> Result<Self> {
        match NonZeroU16::new(p) {
            Some(nz) if (p as usize) <= num_domains => Ok(DomainId(nz)),
            _ => Err(Error::contract(format!(
                "domain id {p} outside 1..={num_domains}"
            ))),
        }
    }

    pub const FIRST: DomainId = DomainId(NonZeroU16::MIN);

    pub fn get(self) -> u16 {
        self.0.get()
    }

    /// Zero-based index for per-domain arrays.
    pub fn index(self) -> usize {
        self.0.get() as usize - 1
    }

    pub fn from_index(index: usize) -> Self {
        DomainId(NonZeroU16::new(index as u16 + 1).expect("index + 1 > 0"))
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Click-to-conversion delay in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delay {
    After(u64),
    Never,
}

impl Delay {
    pub fn seconds(self) -> Option<u64> {
        match self {
            Delay::After(z) => Some(z),
            Delay::Never => None,
        }
    }

    /// `z <= window`, with `Never` outside every window.
    pub fn within(self, window: u64) -> bool {
        matches!(self, Delay::After(z) if z <= window)
    }
}

/// Simulation-only parameters an event was drawn from.
///
/// Never fed to a model; oracle tests use it to evaluate the exact
/// biased-stream probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Probability the click converts at all (before attribution cut-off).
    pub p_convert: f64,
    /// Exponential delay rate, per second.
    pub delay_rate: f64,
}

impl GroundTruth {
    /// `P(y = 1, z <= t | x)`. Delays are rounded up to whole seconds, which
    /// leaves this probability unchanged at integer `t`.
    pub fn p_within(&self, t: u64) -> f64 {
        self.p_convert * (1.0 - (-self.delay_rate * t as f64).exp())
    }

    /// Attributed conversion probability `p(y = 1 | x)` for window `w2`.
    pub fn p_positive(&self, w2: u64) -> f64 {
        self.p_within(w2)
    }

    /// Probability of being a fake negative, `P(w1 < z <= w2 | x)`.
    pub fn p_fake_negative(&self, w1: u64, w2: u64) -> f64 {
        self.p_within(w2) - self.p_within(w1)
    }
}

/// One click, with its eventual conversion delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub id: u64,
    /// One categorical id per feature field.
    pub features: Vec<u32>,
    pub domain: DomainId,
    /// Seconds since epoch.
    pub click_ts: u64,
    pub delay: Delay,
    #[serde(skip)]
    pub truth: Option<GroundTruth>,
}

impl ClickEvent {
    pub fn conversion_ts(&self) -> Option<u64> {
        self.delay.seconds().map(|z| self.click_ts + z)
    }

    /// Label once the attribution window `w2` has closed.
    pub fn eventual_label(&self, w2: u64) -> u8 {
        u8::from(self.delay.within(w2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay == Delay::After(0) {
            return Err(Error::contract(format!(
                "event {} has zero conversion delay",
                self.id
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_bounds() {
        assert!(DomainId::new(0, 3).is_err());
        assert!(DomainId::new(4, 3).is_err());
        let d = DomainId::new(3, 3).unwrap();
        assert_eq!(d.index(), 2);
        assert_eq!(DomainId::from_index(2), d);
    }

    #[test]
    fn delay_window_membership_is_closed() {
        assert!(Delay::After(900).within(900));
        assert!(!Delay::After(901).within(900));
        assert!(!Delay::Never.within(u64::MAX));
    }

    #[test]
    fn truth_probabilities_are_consistent() {
        let g = GroundTruth {
            p_convert: 0.4,
            delay_rate: 1.0 / 3600.0,
        };
        let (w1, w2) = (900, 86_400);
        let total = g.p_positive(w2);
        assert!((g.p_within(w1) + g.p_fake_negative(w1, w2) - total).abs() < 1e-15);
        assert!(total < 0.4 && total > 0.39);
    }
}
