//! Synthetic click logs drawn from a hidden logistic conversion model with
//! exponential conversion delays.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::duration::{de_seconds, ser_seconds};
use crate::stream::{ClickEvent, Delay, DomainId, GroundTruth, DAY, HOUR};
use crate::{sigmoid, Error, Result};

/// Events used to fit the calibration offsets; larger logs are subsampled
/// with an even stride over time.
const CALIBRATION_SAMPLE: usize = 20_000;
const CALIBRATION_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CriteoLike,
    TaobaoLike,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::CriteoLike => "criteo-like",
            Preset::TaobaoLike => "taobao-like",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "criteo-like" => Ok(Preset::CriteoLike),
            "taobao-like" => Ok(Preset::TaobaoLike),
            _ => Err(Error::config(format!("unknown preset '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_events: usize,
    pub vocab_sizes: Vec<usize>,
    pub num_domains: usize,
    /// Seed of the hidden conversion and delay model.
    pub weights_seed: u64,
    /// Seed of the sampled clicks.
    pub seed: u64,
    /// Mean attributed conversion rate, `P(z <= w2)`.
    pub target_cvr: f64,
    /// Share of attributed conversions with `z <= fast_window`.
    pub target_fast_fraction: f64,
    #[serde(deserialize_with = "de_seconds", serialize_with = "ser_seconds")]
    pub fast_window: u64,
    #[serde(deserialize_with = "de_seconds", serialize_with = "ser_seconds")]
    pub w2: u64,
    /// Click timestamps are uniform over `[start_ts, start_ts + horizon)`.
    #[serde(deserialize_with = "de_seconds", serialize_with = "ser_seconds")]
    pub horizon: u64,
    pub start_ts: u64,
    /// Exponent of the Zipf-like value frequencies within a field.
    pub zipf_exponent: f64,
    /// Standard deviation of the hidden logit across feature values.
    pub logit_scale: f64,
    /// Standard deviation of `ln λ(x)` across feature values.
    pub delay_spread: f64,
    /// Rotation of the hidden weights towards a second, independent weight
    /// set by the end of the horizon, as a fraction of a right angle.
    pub drift: f64,
    /// Per-domain rotation of the value frequencies, as a share of the vocab.
    pub domain_shift: f64,
    /// Standard deviation of the per-domain logit offset.
    pub domain_bias: f64,
}

impl GeneratorConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = GeneratorConfig {
            num_events: 100_000,
            vocab_sizes: Vec::new(),
            num_domains: 1,
            weights_seed: 0,
            seed: 0,
            target_cvr: 0.0,
            target_fast_fraction: 0.0,
            fast_window: HOUR / 4,
            w2: 7 * DAY,
            horizon: 30 * DAY,
            start_ts: 0,
            zipf_exponent: 1.1,
            logit_scale: 1.5,
            delay_spread: 1.5,
            drift: 0.6,
            domain_shift: 0.25,
            domain_bias: 0.5,
        };
        let cycle = [8, 12, 16, 24, 32, 48, 64];
        match preset {
            Preset::CriteoLike => GeneratorConfig {
                vocab_sizes: cycle.iter().cycle().take(17).copied().collect(),
                target_cvr: 0.2269,
                target_fast_fraction: 0.35,
                weights_seed: 0x5eed_c717,
                ..base
            },
            Preset::TaobaoLike => GeneratorConfig {
                vocab_sizes: cycle.iter().cycle().take(11).copied().collect(),
                target_cvr: 0.1034,
                target_fast_fraction: 0.55,
                delay_spread: 1.2,
                weights_seed: 0x5eed_7a0b,
                ..base
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_events(mut self, n: usize) -> Self {
        self.num_events = n;
        self
    }

    pub fn with_domains(mut self, m: usize) -> Self {
        self.num_domains = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        unit("target_cvr", self.target_cvr)?;
        unit("target_fast_fraction", self.target_fast_fraction)?;
        if self.num_events == 0 || self.vocab_sizes.is_empty() || self.vocab_sizes.contains(&0) {
            return Err(Error::config("event count, field count and vocab sizes must be >= 1"));
        }
        if !(1..=u16::MAX as usize).contains(&self.num_domains) {
            return Err(Error::config("number of domains must be in 1..=65535"));
        }
        if self.fast_window == 0 || self.fast_window >= self.w2 || self.horizon == 0 {
            return Err(Error::config("need 0 < fast_window < w2 and a non-empty horizon"));
        }
        let spreads = [self.zipf_exponent, self.logit_scale, self.delay_spread, self.drift, self.domain_shift, self.domain_bias];
        if spreads.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("shape parameters must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Hidden per-value parameters of the conversion and delay model.
struct HiddenModel {
    /// `[field][value]` logit contribution at the start of the horizon.
    start: Vec<Vec<f64>>,
    /// Independent second set that the logits rotate towards.
    end: Vec<Vec<f64>>,
    /// `[field][value]` contribution to `ln λ`, unit variance in total.
    delay: Vec<Vec<f64>>,
    domain_bias: Vec<f64>,
    /// Per-domain rotation of value ids, per field.
    domain_offset: Vec<Vec<usize>>,
}

impl HiddenModel {
    fn draw(cfg: &GeneratorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.weights_seed);
        let fields = cfg.vocab_sizes.len() as f64;
        // centred under the value frequencies so the mean logit is stable over time
        let table = |scale: f64, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            cfg.vocab_sizes
                .iter()
                .map(|&v| {
                    let freq: Vec<f64> = (0..v).map(|k| (k as f64 + 1.0).powf(-cfg.zipf_exponent)).collect();
                    let total: f64 = freq.iter().sum();
                    let raw: Vec<f64> = (0..v).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                    let mean = raw.iter().zip(&freq).map(|(r, q)| r * q).sum::<f64>() / total;
                    raw.into_iter().map(|r| r - mean).collect()
                })
                .collect()
        };
        let start = table(cfg.logit_scale / fields.sqrt(), &mut rng);
        let end = table(cfg.logit_scale / fields.sqrt(), &mut rng);
        let delay = table(1.0 / fields.sqrt(), &mut rng);
        let m = cfg.num_domains;
        let domain_bias = (0..m)
            .map(|d| if d == 0 || m == 1 { 0.0 } else { cfg.domain_bias * rng.sample::<f64, _>(StandardNormal) })
            .collect();
        let domain_offset = (0..m)
            .map(|d| {
                cfg.vocab_sizes
                    .iter()
                    .map(|&v| ((cfg.domain_shift * v as f64 * d as f64) / m as f64).round() as usize % v)
                    .collect()
            })
            .collect();
        HiddenModel { start, end, delay, domain_bias, domain_offset }
    }
}

/// Per-click draws that do not depend on the calibration offsets.
struct Draw {
    click_ts: u64,
    domain: usize,
    features: Vec<u32>,
    logit: f64,
    delay_score: f64,
    convert_u: f64,
    delay_e: f64,
}

/// Offsets that put the expected rates on target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub logit_offset: f64,
    /// `ln λ` offset, λ in conversions per hour.
    pub log_rate_offset: f64,
    pub expected_cvr: f64,
    pub expected_fast_fraction: f64,
}

fn delay_rate(cfg: &GeneratorConfig, log_rate_offset: f64, score: f64) -> f64 {
    (log_rate_offset + cfg.delay_spread * score).exp() / HOUR as f64
}

/// Expected attributed CVR and fast share over `draws`.
fn expected_rates(cfg: &GeneratorConfig, draws: &[&Draw], b: f64, c: f64) -> (f64, f64) {
    let (mut attributed, mut fast) = (0.0, 0.0);
    for d in draws {
        let p = sigmoid(d.logit + b);
        let rate = delay_rate(cfg, c, d.delay_score);
        attributed += p * -(-rate * cfg.w2 as f64).exp_m1();
        fast += p * -(-rate * cfg.fast_window as f64).exp_m1();
    }
    let n = draws.len() as f64;
    (attributed / n, if attributed > 0.0 { fast / attributed } else { 0.0 })
}

/// Bisection for an increasing function on `[lo, hi]`; `None` if the target
/// is not bracketed.
fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> Option<f64>) -> Option<f64> {
    let below = |x: f64| f(x).is_none_or(|v| v < target);
    if !below(lo) || below(hi) {
        return None;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn calibrate(cfg: &GeneratorConfig, draws: &[Draw]) -> Result<Calibration> {
    let stride = draws.len().div_ceil(CALIBRATION_SAMPLE);
    let sample: Vec<&Draw> = draws.iter().step_by(stride).collect();
    let sample = sample.as_slice();
    let solve_b = |c: f64| bisect(-40.0, 40.0, cfg.target_cvr, |b| Some(expected_rates(cfg, sample, b, c).0));
    let c = bisect(-30.0, 30.0, cfg.target_fast_fraction, |c| {
        solve_b(c).map(|b| expected_rates(cfg, sample, b, c).1)
    });
    let unreachable = || {
        Error::config(format!(
            "calibration targets unreachable: cvr {} with {} of conversions within {}s",
            cfg.target_cvr, cfg.target_fast_fraction, cfg.fast_window
        ))
    };
    let c = c.ok_or_else(unreachable)?;
    let b = solve_b(c).ok_or_else(unreachable)?;
    let (cvr, fast) = expected_rates(cfg, sample, b, c);
    if (cvr - cfg.target_cvr).abs() > CALIBRATION_TOLERANCE || (fast - cfg.target_fast_fraction).abs() > CALIBRATION_TOLERANCE {
        return Err(unreachable());
    }
    Ok(Calibration {
        logit_offset: b,
        log_rate_offset: c,
        expected_cvr: cvr,
        expected_fast_fraction: fast,
    })
}

fn draw_clicks(cfg: &GeneratorConfig, hidden: &HiddenModel) -> Result<Vec<Draw>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = |v: usize| WeightedIndex::new((0..v).map(|k| (k as f64 + 1.0).powf(-cfg.zipf_exponent)));
    let values = cfg
        .vocab_sizes
        .iter()
        .map(|&v| zipf(v))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::config(e.to_string()))?;
    let domains = zipf(cfg.num_domains).map_err(|e| Error::config(e.to_string()))?;
    let mut draws: Vec<Draw> = (0..cfg.num_events)
        .map(|_| {
            let click_ts = cfg.start_ts + rng.random_range(0..cfg.horizon);
            let domain = domains.sample(&mut rng);
            let angle = cfg.drift * std::f64::consts::FRAC_PI_2 * (click_ts - cfg.start_ts) as f64 / cfg.horizon as f64;
            let (sin, cos) = angle.sin_cos();
            let mut logit = hidden.domain_bias[domain];
            let mut delay_score = 0.0;
            let features = values
                .iter()
                .enumerate()
                .map(|(f, dist)| {
                    let v = cfg.vocab_sizes[f];
                    let id = (dist.sample(&mut rng) + hidden.domain_offset[domain][f]) % v;
                    logit += cos * hidden.start[f][id] + sin * hidden.end[f][id];
                    delay_score += hidden.delay[f][id];
                    id as u32
                })
                .collect();
            Draw {
                click_ts,
                domain,
                features,
                logit,
                delay_score,
                convert_u: rng.random(),
                delay_e: rng.sample(Exp1),
            }
        })
        .collect();
    draws.sort_by_key(|d| d.click_ts);
    Ok(draws)
}

/// Draw a click log together with the calibration offsets used.
pub fn generate_calibrated(cfg: &GeneratorConfig) -> Result<(Vec<ClickEvent>, Calibration)> {
    cfg.validate()?;
    let hidden = HiddenModel::draw(cfg);
    let draws = draw_clicks(cfg, &hidden)?;
    let cal = calibrate(cfg, &draws)?;
    log::debug!("generator calibration: {cal:?}");
    let events = draws
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let p_convert = sigmoid(d.logit + cal.logit_offset);
            let rate = delay_rate(cfg, cal.log_rate_offset, d.delay_score);
            let delay = if d.convert_u < p_convert {
                Delay::After(((d.delay_e / rate).ceil() as u64).max(1))
            } else {
                Delay::Never
            };
            ClickEvent {
                id: i as u64,
                features: d.features,
                domain: DomainId::from_index(d.domain),
                click_ts: d.click_ts,
                delay,
                truth: Some(GroundTruth { p_convert, delay_rate: rate }),
            }
        })
        .collect();
    Ok((events, cal))
}

/// Draw a time-sorted click log with hidden ground truth attached.
pub fn generate_events(cfg: &GeneratorConfig) -> Result<Vec<ClickEvent>> {
    Ok(generate_calibrated(cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sorted() {
        let cfg = GeneratorConfig::preset(Preset::TaobaoLike).with_events(2000).with_seed(3);
        let a = generate_events(&cfg).unwrap();
        let b = generate_events(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].click_ts <= w[1].click_ts));
        assert!(a.iter().all(|e| e.truth.is_some() && e.delay != Delay::After(0)));
        let c = generate_events(&cfg.clone().with_seed(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn expected_rates_hit_targets() {
        let cfg = GeneratorConfig::preset(Preset::CriteoLike).with_events(5000);
        let (_, cal) = generate_calibrated(&cfg).unwrap();
        assert!((cal.expected_cvr - 0.2269).abs() < 1e-4);
        assert!((cal.expected_fast_fraction - 0.35).abs() < 1e-4);
    }

    #[test]
    fn unreachable_targets_are_config_errors() {
        let mut cfg = GeneratorConfig::preset(Preset::CriteoLike).with_events(500);
        cfg.target_cvr = 0.999;
        cfg.logit_scale = 0.0;
        cfg.delay_spread = 6.0;
        assert!(matches!(generate_events(&cfg), Err(Error::Config(_))));
        cfg.target_cvr = 1.5;
        assert!(matches!(generate_events(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn domains_cover_range() {
        let cfg = GeneratorConfig::preset(Preset::CriteoLike).with_events(3000).with_domains(3);
        let ev = generate_events(&cfg).unwrap();
        for d in 0..3 {
            assert!(ev.iter().any(|e| e.domain.index() == d));
        }
    }
}
