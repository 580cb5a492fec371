//! Pretrain-then-stream experiment protocol.
//!
//! Clicks are split chronologically. A model is pretrained on the first
//! part with labels as they were known at the split, then every method
//! trains hour by hour on its own ingestion stream over the second part and
//! is tested on the following hour's clicks against their eventual labels.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, ModelKind};
use super::io::infer_vocab_sizes;
use super::stable_hash;
use crate::losses::{
    train_dp_classifier, weighted_logloss_grad, ClampStats, DpModel, LossKind,
};
use crate::metrics::{attach_relative_improvements, HourMetrics, HourWeighting, MetricReport};
use crate::model::{minibatches, CtrModel, DnnConfig, DnnModel, FeatureBatch};
use crate::snapshot::Snapshot;
use crate::star::{StarConfig, StarModel};
use crate::stream::{
    build_stream, chunk_by_hour, classify_sample, ClickEvent, SampleKind, StreamPolicy,
    StreamRecord, WindowConfig, HOUR,
};
use crate::{clamp_prob, sigmoid, Error, Result, Scalar};

pub const PRETRAINED: &str = "Pretrained";
pub const ORACLE: &str = "Oracle";

/// A compared method: how its stream is built and which loss it trains on.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    /// `None` keeps the pretrained model frozen.
    pub update: Option<(StreamPolicy, LossKind)>,
    /// Overrides the experiment windows.
    pub windows: Option<WindowConfig>,
}

impl MethodSpec {
    pub fn new(name: impl Into<String>, policy: StreamPolicy, loss: LossKind) -> Self {
        MethodSpec {
            name: name.into(),
            update: Some((policy, loss)),
            windows: None,
        }
    }

    pub fn pretrained() -> Self {
        MethodSpec {
            name: PRETRAINED.into(),
            update: None,
            windows: None,
        }
    }

    pub fn oracle() -> Self {
        MethodSpec::new(ORACLE, StreamPolicy::Oracle, LossKind::Oracle)
    }

    /// The full comparison roster, anchors included.
    pub fn roster() -> Vec<Self> {
        use LossKind as L;
        use StreamPolicy as P;
        vec![
            MethodSpec::pretrained(),
            MethodSpec::new("Vanilla-NoDup", P::NoDup, L::Vanilla),
            MethodSpec::new("Vanilla-NoWin", P::NoWin, L::Vanilla),
            MethodSpec::new("Vanilla-Win", P::Win, L::Vanilla),
            MethodSpec::new("Vanilla-RN", P::RealNegDup, L::Vanilla),
            MethodSpec::new("FNC", P::NoWin, L::Fnc),
            MethodSpec::new("FNC-RN", P::NoWinRealNeg, L::FncRn),
            MethodSpec::new("FNW", P::NoWin, L::Fnw),
            MethodSpec::new("FNW-RN", P::NoWinRealNeg, L::FnwRn),
            MethodSpec::new("DEFER", P::RealNegDup, L::Defer),
            MethodSpec::oracle(),
        ]
    }

    /// The method a config selects, named after its roster entry if any.
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let key = (cfg.stream_policy, cfg.loss_kind);
        MethodSpec::roster()
            .into_iter()
            .find(|m| m.update == Some(key))
            .unwrap_or_else(|| MethodSpec::new(format!("{}/{}", key.0, key.1), key.0, key.1))
    }
}

/// A trained click model of either architecture.
#[derive(Debug)]
pub enum AnyModel<T: Scalar> {
    Dnn(DnnModel<T>),
    Star(StarModel<T>),
}

impl<T: Scalar> Clone for AnyModel<T> {
    fn clone(&self) -> Self {
        match self {
            AnyModel::Dnn(m) => AnyModel::Dnn(m.clone()),
            AnyModel::Star(m) => AnyModel::Star(m.clone()),
        }
    }
}

impl<T: Scalar> AnyModel<T> {
    fn build(cfg: &ExperimentConfig, vocab: &[usize], num_domains: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let m = &cfg.model;
        Ok(match m.kind {
            ModelKind::Dnn => {
                let mut c = DnnConfig::new(vocab.to_vec(), m.embedding_dim, m.hidden.clone());
                c.use_batch_norm = m.use_batch_norm;
                c.adam = c.adam.with_lr(m.learning_rate);
                AnyModel::Dnn(DnnModel::new(c, rng)?)
            }
            ModelKind::Star => {
                let mut c = StarConfig::new(vocab.to_vec(), m.embedding_dim, m.hidden.clone(), num_domains);
                c.adam = c.adam.with_lr(m.learning_rate);
                AnyModel::Star(StarModel::new(c, rng)?)
            }
        })
    }

    pub fn predict(&self, batch: &FeatureBatch) -> Result<Vec<T>> {
        match self {
            AnyModel::Dnn(m) => m.predict(batch),
            AnyModel::Star(m) => m.predict(batch),
        }
    }

    fn step<F>(&mut self, batch: &FeatureBatch, grad: F) -> Result<()>
    where
        F: FnOnce(&[T]) -> Result<Vec<T>>,
    {
        fn run<T: Scalar, M: CtrModel<T>>(
            m: &mut M,
            batch: &FeatureBatch,
            grad: impl FnOnce(&[T]) -> Result<Vec<T>>,
        ) -> Result<()> {
            let (logits, cache) = m.train_forward(batch)?;
            let d = grad(&logits)?;
            m.train_backward(cache, &d)
        }
        match self {
            AnyModel::Dnn(m) => run(m, batch, grad),
            AnyModel::Star(m) => run(m, batch, grad),
        }
    }

    fn is_star(&self) -> bool {
        matches!(self, AnyModel::Star(_))
    }

    pub fn num_fields(&self) -> usize {
        match self {
            AnyModel::Dnn(m) => m.config().vocab_sizes.len(),
            AnyModel::Star(m) => m.config().vocab_sizes.len(),
        }
    }

    /// Domain count of the multi-domain model; the single-domain model
    /// accepts any domain id.
    pub fn num_domains(&self) -> Option<usize> {
        match self {
            AnyModel::Dnn(_) => None,
            AnyModel::Star(m) => Some(m.config().num_domains),
        }
    }

    pub fn to_snapshot(&self, extra: Value) -> Snapshot<T> {
        match self {
            AnyModel::Dnn(m) => m.to_snapshot(extra),
            AnyModel::Star(m) => m.to_snapshot(extra),
        }
    }

    pub fn from_snapshot(snap: &Snapshot<T>) -> Result<Self> {
        match snap.kind.as_str() {
            "dnn" => Ok(AnyModel::Dnn(DnnModel::from_snapshot(snap)?)),
            "star" => Ok(AnyModel::Star(StarModel::from_snapshot(snap)?)),
            other => Err(Error::Snapshot(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Outcome of one method: its report, final model and clamp counters.
#[derive(Debug, Clone)]
pub struct MethodRun<T: Scalar> {
    pub report: MetricReport,
    pub model: AnyModel<T>,
    pub clamps: ClampStats,
}

struct EvalHour {
    hour: u64,
    batch: FeatureBatch,
    labels: Vec<u8>,
}

/// Split, pretrained model and evaluation sets shared by every method.
pub struct Session<'c, T: Scalar> {
    cfg: &'c ExperimentConfig,
    events: Vec<ClickEvent>,
    /// Index of the first streaming-part click.
    split: usize,
    split_ts: u64,
    end_ts: u64,
    /// Absolute hour numbers of the streaming part.
    hours: Vec<u64>,
    eval: Vec<EvalHour>,
    vocab: Vec<usize>,
    pretrained: AnyModel<T>,
}

fn ceil_hour(ts: u64) -> u64 {
    ts.div_ceil(HOUR) * HOUR
}

fn method_seed(seed: u64, update: Option<(StreamPolicy, LossKind)>) -> u64 {
    let tag = match update {
        Some((p, l)) => format!("{p}/{l}"),
        None => "frozen".into(),
    };
    seed ^ stable_hash(tag.as_bytes())
}

impl<'c, T: Scalar> Session<'c, T> {
    pub fn prepare(cfg: &'c ExperimentConfig, events: &[ClickEvent]) -> Result<Self> {
        cfg.validate()?;
        let w2 = cfg.windows.w2;
        let mut events = events.to_vec();
        events.sort_by_key(|e| (e.click_ts, e.id));
        let (Some(first), Some(last)) = (events.first(), events.last()) else {
            return Err(Error::config("no click events"));
        };
        let (t0, t1) = (first.click_ts, last.click_ts + 1);
        let split_ts = ceil_hour(t0 + ((t1 - t0) as f64 * cfg.pretrain_fraction) as u64);
        let mut end_ts = ceil_hour(t1);
        if let Some(cap) = cfg.streaming_hours {
            end_ts = end_ts.min(split_ts + (cap as u64 + 1) * HOUR);
        }
        let hours: Vec<u64> = (split_ts / HOUR..end_ts / HOUR).collect();
        let split = events.partition_point(|e| e.click_ts < split_ts);
        if split == 0 || hours.len() < 2 {
            return Err(Error::config(format!(
                "events must cover a pretraining part and at least 2 streaming hours (got {} streaming hours)",
                hours.len()
            )));
        }
        let fields = events[0].features.len();
        let vocab = cfg.model.vocab_sizes.clone().unwrap_or_else(|| infer_vocab_sizes(&events));
        if vocab.len() != fields {
            return Err(Error::config(format!("{} vocab sizes for {fields} feature fields", vocab.len())));
        }
        let num_domains = cfg
            .model
            .num_domains
            .unwrap_or_else(|| events.iter().map(|e| e.domain.index() + 1).max().unwrap_or(1));

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = AnyModel::build(cfg, &vocab, num_domains, &mut rng)?;
        // leak guard: a conversion after the split is unknown at pretraining time
        let labels: Vec<u8> = events[..split]
            .iter()
            .map(|e| u8::from(e.delay.within(w2) && e.conversion_ts().is_some_and(|c| c < split_ts)))
            .collect();
        for _ in 0..cfg.model.pretrain_epochs {
            for idx in minibatches(split, cfg.model.batch_size, &mut rng) {
                let idx = trainable_rows(&events, idx.into_iter().map(|i| (i, labels[i])), model.is_star());
                train_batch(&mut model, &events, &idx, None, &mut ClampStats::default(), LossKind::Vanilla, false)?;
            }
        }

        let mut eval = Vec::with_capacity(hours.len() - 1);
        let mut start = split;
        for &hour in &hours[1..] {
            let lo = start + events[start..].partition_point(|e| e.click_ts < hour * HOUR);
            let hi = lo + events[lo..].partition_point(|e| e.click_ts < (hour + 1) * HOUR);
            eval.push(EvalHour {
                hour,
                batch: FeatureBatch::gather(&events, lo..hi, fields)?,
                labels: events[lo..hi].iter().map(|e| e.eventual_label(w2)).collect(),
            });
            start = hi;
        }
        Ok(Session {
            cfg,
            events,
            split,
            split_ts,
            end_ts,
            hours,
            eval,
            vocab,
            pretrained: model,
        })
    }

    pub fn pretrained(&self) -> &AnyModel<T> {
        &self.pretrained
    }

    pub fn streaming_hours(&self) -> usize {
        self.hours.len()
    }

    fn dp_model(&self, windows: &WindowConfig, seed: u64) -> Result<DpModel<T>> {
        let resolved = resolved_windows(windows);
        let samples: Vec<(usize, u8)> = self.events[..self.split]
            .iter()
            .enumerate()
            .filter(|(_, e)| e.click_ts + resolved.w2 <= self.split_ts)
            .map(|(i, e)| (i, u8::from(classify_sample(e, &resolved) == SampleKind::FakeNegative)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(b"fake-negative"));
        train_dp_classifier(&self.events, &samples, self.vocab.clone(), &self.cfg.dp, &mut rng)
    }

    fn evaluate(&self, model: &AnyModel<T>, loss: LossKind) -> Result<Vec<HourMetrics>> {
        self.eval
            .iter()
            .map(|h| {
                let preds = calibrated(model, &h.batch, loss)?;
                HourMetrics::evaluate(h.hour, &preds, &h.labels)
            })
            .collect()
    }

    /// Stream one method through every hour.
    pub fn run(&self, method: &MethodSpec) -> Result<MethodRun<T>> {
        let mut model = self.pretrained.clone();
        let mut clamps = ClampStats::default();
        let Some((policy, loss)) = method.update else {
            let hours = self.evaluate(&model, LossKind::Vanilla)?;
            return Ok(MethodRun {
                report: MetricReport::from_hours(&method.name, hours, self.cfg.hour_weighting)?,
                model,
                clamps,
            });
        };
        let windows = match method.windows {
            Some(w) => w,
            None => self.cfg.windows.to_windows()?,
        };
        let seed = method_seed(self.cfg.seed, method.update);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dp = if loss.needs_dp_model() { Some(self.dp_model(&windows, seed)?) } else { None };
        let dp_windows = resolved_windows(&windows);
        let horizon = dp_windows.w2;
        let mut resolved = self.events.partition_point(|e| e.click_ts + horizon <= self.split_ts);

        let part = &self.events[self.split..];
        let mut records = build_stream(part, policy, &windows)?;
        records.retain(|r| r.ingest_ts < self.end_ts);
        let by_hour: BTreeMap<u64, &[StreamRecord]> =
            chunk_by_hour(&records)?.into_iter().map(|b| (b.hour, b.records)).collect();

        let mut out = Vec::with_capacity(self.eval.len());
        for (i, eval) in self.eval.iter().enumerate() {
            let recs = by_hour.get(&self.hours[i]).copied().unwrap_or(&[]);
            for idx in minibatches(recs.len(), self.cfg.model.batch_size, &mut rng) {
                let rows = trainable_rows(
                    part,
                    idx.into_iter().map(|k| (recs[k].event, recs[k].label)),
                    model.is_star(),
                );
                train_batch(&mut model, part, &rows, dp.as_ref(), &mut clamps, loss, self.cfg.pure_is_ratio)?;
            }
            if let Some(dp) = dp.as_mut() {
                // clicks whose sample kind became known during this hour
                let hour_end = self.hours[i] + HOUR;
                let start = resolved;
                while resolved < self.events.len() && self.events[resolved].click_ts + horizon < hour_end {
                    resolved += 1;
                }
                if resolved - start >= 2 {
                    let fresh = &self.events[start..resolved];
                    let batch = FeatureBatch::gather(fresh, 0..fresh.len(), self.vocab.len())?;
                    let targets: Vec<u8> = fresh
                        .iter()
                        .map(|e| u8::from(classify_sample(e, &dp_windows) == SampleKind::FakeNegative))
                        .collect();
                    dp.update(&batch, &targets)?;
                }
            }
            let preds = calibrated(&model, &eval.batch, loss)?;
            out.push(HourMetrics::evaluate(eval.hour, &preds, &eval.labels)?);
        }
        if clamps.denominator + clamps.weight > 0 {
            log::info!("{}: importance-weight clamps {:?}", method.name, clamps);
        }
        Ok(MethodRun {
            report: MetricReport::from_hours(&method.name, out, self.cfg.hour_weighting)?,
            model,
            clamps,
        })
    }
}

/// Windows against which a click's sample kind is final: `w3` stands in
/// for `w2` when set.
fn resolved_windows(windows: &WindowConfig) -> WindowConfig {
    WindowConfig {
        w2: windows.w3.unwrap_or(windows.w2),
        ..*windows
    }
}

fn calibrated<T: Scalar>(model: &AnyModel<T>, batch: &FeatureBatch, loss: LossKind) -> Result<Vec<T>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    model.predict(batch)?.into_iter().map(|q| loss.calibrate(q)).collect()
}

/// Rows a training step can use: at least two, and for the multi-domain
/// model at least two per domain.
fn trainable_rows(
    events: &[ClickEvent],
    rows: impl Iterator<Item = (usize, u8)>,
    per_domain: bool,
) -> Vec<(usize, u8)> {
    let mut rows: Vec<(usize, u8)> = rows.collect();
    if per_domain {
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for &(i, _) in &rows {
            *counts.entry(events[i].domain.get()).or_default() += 1;
        }
        rows.retain(|&(i, _)| counts[&events[i].domain.get()] >= 2);
    }
    if rows.len() < 2 {
        rows.clear();
    }
    rows
}

fn train_batch<T: Scalar>(
    model: &mut AnyModel<T>,
    events: &[ClickEvent],
    rows: &[(usize, u8)],
    dp: Option<&DpModel<T>>,
    clamps: &mut ClampStats,
    loss: LossKind,
    pure_is_ratio: bool,
) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let batch = FeatureBatch::gather(events, rows.iter().map(|r| r.0), model.num_fields())?;
    let f_dp = match (loss.needs_dp_model(), dp) {
        (true, Some(dp)) => Some(dp.predict(&batch)?),
        (true, None) => return Err(Error::contract("loss needs a fake-negative model")),
        _ => None,
    };
    let n = T::lit(rows.len() as f64);
    model.step(&batch, |logits| {
        logits
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                let f = clamp_prob(sigmoid(s));
                let w = loss.weights(f, f_dp.as_ref().map(|v| v[k]), pure_is_ratio, clamps)?;
                Ok(weighted_logloss_grad(f, rows[k].1, &w) / n)
            })
            .collect()
    })
}

/// Run `methods` on one shared split and pretrained model. Relative
/// improvements are attached when both anchors are among them.
pub fn run_methods<T: Scalar>(
    cfg: &ExperimentConfig,
    events: &[ClickEvent],
    methods: &[MethodSpec],
) -> Result<Vec<MethodRun<T>>> {
    let session = Session::<T>::prepare(cfg, events)?;
    let mut runs = methods
        .par_iter()
        .map(|m| session.run(m))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<&str> = methods.iter().map(|m| m.name.as_str()).collect();
    if names.contains(&PRETRAINED) && names.contains(&ORACLE) {
        let mut reports: Vec<MetricReport> = runs.iter().map(|r| r.report.clone()).collect();
        attach_relative_improvements(&mut reports, PRETRAINED, ORACLE)?;
        for (run, rep) in runs.iter_mut().zip(reports) {
            run.report = rep;
        }
    }
    Ok(runs)
}

/// Reports for the whole comparison roster.
pub fn run_roster<T: Scalar>(cfg: &ExperimentConfig, events: &[ClickEvent]) -> Result<Vec<MetricReport>> {
    Ok(run_methods::<T>(cfg, events, &MethodSpec::roster())?
        .into_iter()
        .map(|r| r.report)
        .collect())
}

/// The configured method, plus its final model. Its report carries
/// relative improvements when both anchors are enabled.
pub fn train_configured<T: Scalar>(cfg: &ExperimentConfig, events: &[ClickEvent]) -> Result<MethodRun<T>> {
    let method = MethodSpec::from_config(cfg);
    let mut methods = vec![method.clone()];
    if cfg.anchors.pretrained && cfg.anchors.oracle {
        for anchor in [MethodSpec::pretrained(), MethodSpec::oracle()] {
            if anchor.name != method.name {
                methods.push(anchor);
            }
        }
    }
    let mut runs = run_methods::<T>(cfg, events, &methods)?;
    Ok(runs.swap_remove(0))
}

pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig, events: &[ClickEvent]) -> Result<MetricReport> {
    Ok(train_configured::<T>(cfg, events)?.report)
}

/// One report per approximation window `w3`, each trained on the
/// `RealNegDupApprox` stream with the configured loss.
pub fn sweep_window<T: Scalar>(
    cfg: &ExperimentConfig,
    events: &[ClickEvent],
    candidates: &[u64],
) -> Result<Vec<MetricReport>> {
    let base = cfg.windows.to_windows()?;
    if candidates.is_empty() {
        return Err(Error::config("no window candidates"));
    }
    let mut methods = Vec::with_capacity(candidates.len());
    for &w3 in candidates {
        if !(base.w1 < w3 && w3 < base.w2) {
            return Err(Error::config(format!(
                "window candidate {w3}s outside ({}s, {}s)",
                base.w1, base.w2
            )));
        }
        let mut m = MethodSpec::new(
            format!("{}@w3={}", cfg.loss_kind, super::format_duration(w3)),
            StreamPolicy::RealNegDupApprox,
            cfg.loss_kind,
        );
        m.windows = Some(base.with_w3(w3)?);
        methods.push(m);
    }
    Ok(run_methods::<T>(cfg, events, &methods)?
        .into_iter()
        .map(|r| r.report)
        .collect())
}

/// Hourly metrics of a trained model over every click in `events`, tested
/// against eventual labels under attribution window `w2`.
pub fn evaluate_model<T: Scalar>(
    model: &AnyModel<T>,
    events: &[ClickEvent],
    w2: u64,
    loss: LossKind,
    name: &str,
    weighting: HourWeighting,
) -> Result<MetricReport> {
    let mut sorted: Vec<&ClickEvent> = events.iter().collect();
    sorted.sort_by_key(|e| (e.click_ts, e.id));
    let mut hours = Vec::new();
    for group in sorted.chunk_by(|a, b| a.click_ts / HOUR == b.click_ts / HOUR) {
        let owned: Vec<ClickEvent> = group.iter().map(|e| (*e).clone()).collect();
        let batch = FeatureBatch::gather(&owned, 0..owned.len(), model.num_fields())?;
        let labels: Vec<u8> = owned.iter().map(|e| e.eventual_label(w2)).collect();
        let preds = calibrated(model, &batch, loss)?;
        hours.push(HourMetrics::evaluate(group[0].click_ts / HOUR, &preds, &labels)?);
    }
    MetricReport::from_hours(name, hours, weighting)
}

/// Metadata stored next to a trained model.
pub fn model_metadata(cfg: &ExperimentConfig, method: &MethodSpec) -> Value {
    json!({
        "method": method.name,
        "loss_kind": cfg.loss_kind.name(),
        "stream_policy": cfg.stream_policy.name(),
        "w2": cfg.windows.w2,
        "seed": cfg.seed,
        "profile": cfg.profile,
    })
}
