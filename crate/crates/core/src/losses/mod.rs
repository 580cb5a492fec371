//! Training objectives for delayed-feedback streams.

mod dp;
mod multitask;
mod weighted;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dp::{train_dp_classifier, DpModel, DpTrainConfig};
pub use multitask::{
    head_probabilities, offline_multitask_loss, HeadProbabilities, MultiTaskLabels, MultiTaskModel,
};
pub use weighted::{
    defer_loss, defer_weights, fnc_calibrate, fnc_rn_calibrate, fnw_loss, fnw_rn_loss, fnw_rn_weights,
    fnw_weights, vanilla_logloss, weighted_logloss, weighted_logloss_grad, ClampStats,
    ImportanceWeights, DEFER_DENOMINATOR_FLOOR, DEFER_WEIGHT_CAP,
};

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Vanilla,
    Fnw,
    Fnc,
    FnwRn,
    FncRn,
    Defer,
    Oracle,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Vanilla,
        LossKind::Fnw,
        LossKind::Fnc,
        LossKind::FnwRn,
        LossKind::FncRn,
        LossKind::Defer,
        LossKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Vanilla => "vanilla",
            LossKind::Fnw => "fnw",
            LossKind::Fnc => "fnc",
            LossKind::FnwRn => "fnw-rn",
            LossKind::FncRn => "fnc-rn",
            LossKind::Defer => "defer",
            LossKind::Oracle => "oracle",
        }
    }

    pub fn needs_dp_model(self) -> bool {
        self == LossKind::Defer
    }

    /// Map a prediction of the training-stream label rate back to the
    /// conversion rate. Identity unless the kind calibrates.
    pub fn calibrate<T: Scalar>(self, q: T) -> Result<T> {
        match self {
            LossKind::Fnc => fnc_calibrate(q),
            LossKind::FncRn => Ok(fnc_rn_calibrate(q)),
            _ => Ok(q),
        }
    }

    /// Per-sample importance weights for estimate `f` (and fake-negative
    /// estimate `f_dp` for DEFER).
    pub fn weights<T: Scalar>(
        self,
        f: T,
        f_dp: Option<T>,
        pure_is_ratio: bool,
        stats: &mut ClampStats,
    ) -> Result<ImportanceWeights<T>> {
        Ok(match self {
            LossKind::Vanilla | LossKind::Fnc | LossKind::FncRn | LossKind::Oracle => {
                ImportanceWeights::unit()
            }
            LossKind::Fnw => fnw_weights(f),
            LossKind::FnwRn => fnw_rn_weights(f, pure_is_ratio),
            LossKind::Defer => {
                let f_dp = f_dp.ok_or_else(|| Error::contract("DEFER weights need a fake-negative estimate"))?;
                defer_weights(f, f_dp, stats)
            }
        })
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::config(format!("unknown loss kind '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert_eq!("FNW_RN".parse::<LossKind>().unwrap(), LossKind::FnwRn);
        assert!(matches!("x".parse::<LossKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn defer_requires_dp_estimate() {
        let mut s = ClampStats::default();
        assert!(LossKind::Defer.weights(0.5f64, None, false, &mut s).is_err());
        assert!(LossKind::Defer.weights(0.5f64, Some(0.1), false, &mut s).is_ok());
    }

    #[test]
    fn calibration_dispatch() {
        assert_eq!(LossKind::Vanilla.calibrate(0.3f64).unwrap(), 0.3);
        assert!((LossKind::Fnc.calibrate(0.2f64).unwrap() - 0.25).abs() < 1e-15);
        assert!((LossKind::FncRn.calibrate(0.2f64).unwrap() - 0.4).abs() < 1e-15);
    }
}
