//! Importance-weighted log losses and the calibration maps.
//!
//! Every objective here has the form
//! `-(y * w_pos * ln f + (1 - y) * w_neg * ln(1 - f))`, where the weights are
//! computed from stop-gradient copies of the model's own estimates.

use crate::nn::StopGrad;
use crate::{clamp_prob, Error, Result, Scalar};

/// DEFER positive-weight denominator floor.
pub const DEFER_DENOMINATOR_FLOOR: f64 = 1e-6;
/// DEFER positive-weight ceiling.
pub const DEFER_WEIGHT_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceWeights<T> {
    pub positive: StopGrad<T>,
    pub negative: StopGrad<T>,
}

impl<T: Scalar> ImportanceWeights<T> {
    pub fn new(positive: T, negative: T) -> Self {
        ImportanceWeights {
            positive: StopGrad::new(positive),
            negative: StopGrad::new(negative),
        }
    }

    pub fn unit() -> Self {
        Self::new(T::one(), T::one())
    }

    /// Weight applied to a sample with label `y`.
    pub fn for_label(&self, y: u8) -> T {
        if y == 1 {
            self.positive.get()
        } else {
            self.negative.get()
        }
    }
}

/// Counts of DEFER clamp activations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampStats {
    pub denominator: u64,
    pub weight: u64,
}

impl ClampStats {
    pub fn merge(&mut self, other: ClampStats) {
        self.denominator += other.denominator;
        self.weight += other.weight;
    }
}

/// FNW weights `(1 + [f], (1 - [f]) (1 + [f]))`.
pub fn fnw_weights<T: Scalar>(f: T) -> ImportanceWeights<T> {
    let f = clamp_prob(f);
    ImportanceWeights::new(T::one() + f, (T::one() - f) * (T::one() + f))
}

/// FNW-RN weights. The positive weight is the constant 2. The negative weight
/// is `[1-f] * 2[1-f] / (1 + [1-f])`, or without the leading `[1-f]` factor
/// when `pure_is_ratio` is set.
pub fn fnw_rn_weights<T: Scalar>(f: T, pure_is_ratio: bool) -> ImportanceWeights<T> {
    let two = T::lit(2.0);
    let g = T::one() - clamp_prob(f);
    let ratio = two * g / (T::one() + g);
    let negative = if pure_is_ratio { ratio } else { g * ratio };
    ImportanceWeights::new(two, negative)
}

/// DEFER weights `[f / (f - f_dp/2)]` and `[(1-f) / (1 - f + f_dp/2)]`.
///
/// The positive-weight denominator is floored at 1e-6 and the positive
/// weight capped at 100; each activation is counted in `stats`.
pub fn defer_weights<T: Scalar>(f: T, f_dp: T, stats: &mut ClampStats) -> ImportanceWeights<T> {
    let f = clamp_prob(f);
    let half_dp = f_dp.max(T::zero()).min(T::one()) * T::lit(0.5);
    let floor = T::lit(DEFER_DENOMINATOR_FLOOR);
    let mut denom = f - half_dp;
    if denom < floor {
        denom = floor;
        stats.denominator += 1;
    }
    let cap = T::lit(DEFER_WEIGHT_CAP);
    let mut positive = f / denom;
    if positive > cap {
        positive = cap;
        stats.weight += 1;
    }
    let negative = (T::one() - f) / (T::one() - f + half_dp);
    ImportanceWeights::new(positive, negative)
}

/// `-(y w_pos ln f + (1-y) w_neg ln(1-f))` on the clamped prediction.
pub fn weighted_logloss<T: Scalar>(f: T, y: u8, w: &ImportanceWeights<T>) -> T {
    let f = clamp_prob(f);
    if y == 1 {
        -w.positive.get() * f.ln()
    } else {
        -w.negative.get() * (T::one() - f).ln()
    }
}

/// Derivative of [`weighted_logloss`] with respect to the logit `s`, with
/// `f = sigmoid(s)` and the weights held constant.
pub fn weighted_logloss_grad<T: Scalar>(f: T, y: u8, w: &ImportanceWeights<T>) -> T {
    let f = clamp_prob(f);
    if y == 1 {
        -w.positive.get() * (T::one() - f)
    } else {
        w.negative.get() * f
    }
}

pub fn vanilla_logloss<T: Scalar>(f: T, y: u8) -> T {
    weighted_logloss(f, y, &ImportanceWeights::unit())
}

pub fn fnw_loss<T: Scalar>(f: T, y: u8) -> T {
    weighted_logloss(f, y, &fnw_weights(f))
}

pub fn fnw_rn_loss<T: Scalar>(f: T, y: u8, pure_is_ratio: bool) -> T {
    weighted_logloss(f, y, &fnw_rn_weights(f, pure_is_ratio))
}

pub fn defer_loss<T: Scalar>(f: T, f_dp: T, y: u8, stats: &mut ClampStats) -> T {
    weighted_logloss(f, y, &defer_weights(f, f_dp, stats))
}

/// FNC calibration `q / (1 - q)`, clipped to `[0, 1]`.
pub fn fnc_calibrate<T: Scalar>(q: T) -> Result<T> {
    if !(q < T::one()) {
        return Err(Error::contract(format!("FNC calibration needs q < 1, got {q}")));
    }
    let q = q.max(T::zero());
    Ok((q / (T::one() - q)).min(T::one()))
}

/// FNC-RN calibration `2q`, clipped to `[0, 1]`.
pub fn fnc_rn_calibrate<T: Scalar>(q: T) -> T {
    (q * T::lit(2.0)).max(T::zero()).min(T::one())
}
