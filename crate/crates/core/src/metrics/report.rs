use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::rank::{auc, nll, pr_auc};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Auc,
    PrAuc,
    Nll,
}

/// Relative improvement in percent between a pretrained and an oracle
/// anchor. Higher is better for AUC and PR-AUC; NLL is sign-flipped.
pub fn relative_improvement(kind: MetricKind, method: f64, pretrained: f64, oracle: f64) -> Result<f64> {
    let (num, den) = match kind {
        MetricKind::Auc | MetricKind::PrAuc => (method - pretrained, oracle - pretrained),
        MetricKind::Nll => (pretrained - method, pretrained - oracle),
    };
    if den == 0.0 {
        return Err(Error::UndefinedMetric(
            "relative improvement with identical anchors".into(),
        ));
    }
    Ok(100.0 * (num / den))
}

/// Metrics of one evaluation hour; `None` where a metric is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourMetrics {
    pub hour: u64,
    pub count: usize,
    pub auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub nll: Option<f64>,
}

impl HourMetrics {
    pub fn evaluate<T: Scalar>(hour: u64, predictions: &[T], labels: &[u8]) -> Result<Self> {
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(HourMetrics {
            hour,
            count: predictions.len(),
            auc: defined(auc(predictions, labels))?,
            pr_auc: defined(pr_auc(predictions, labels))?,
            nll: defined(nll(predictions, labels))?,
        })
    }
}

/// How hours are weighted when aggregating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HourWeighting {
    #[default]
    Count,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: f64,
    pub pr_auc: f64,
    pub nll: f64,
}

impl MetricSummary {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Auc => self.auc,
            MetricKind::PrAuc => self.pr_auc,
            MetricKind::Nll => self.nll,
        }
    }
}

/// Weighted mean of each metric over the hours where it is defined.
pub fn streaming_aggregate(hours: &[HourMetrics], weighting: HourWeighting) -> Result<MetricSummary> {
    let mean = |name: &str, pick: fn(&HourMetrics) -> Option<f64>| -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for h in hours {
            if let Some(v) = pick(h) {
                let w = match weighting {
                    HourWeighting::Count => h.count as f64,
                    HourWeighting::Uniform => 1.0,
                };
                num += w * v;
                den += w;
            }
        }
        if den == 0.0 {
            return Err(Error::UndefinedMetric(format!("{name} undefined in every hour")));
        }
        Ok(num / den)
    };
    Ok(MetricSummary {
        auc: mean("AUC", |h| h.auc)?,
        pr_auc: mean("PR-AUC", |h| h.pr_auc)?,
        nll: mean("NLL", |h| h.nll)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeImprovement {
    pub auc: f64,
    pub pr_auc: f64,
    pub nll: f64,
}

impl RelativeImprovement {
    pub fn between(method: &MetricSummary, pretrained: &MetricSummary, oracle: &MetricSummary) -> Result<Self> {
        let ri = |k| relative_improvement(k, method.get(k), pretrained.get(k), oracle.get(k));
        Ok(RelativeImprovement {
            auc: ri(MetricKind::Auc)?,
            pr_auc: ri(MetricKind::PrAuc)?,
            nll: ri(MetricKind::Nll)?,
        })
    }
}

/// Evaluation result of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub hours: Vec<HourMetrics>,
    pub aggregate: MetricSummary,
    pub ri: Option<RelativeImprovement>,
}

impl MetricReport {
    pub fn from_hours(method: impl Into<String>, hours: Vec<HourMetrics>, weighting: HourWeighting) -> Result<Self> {
        let aggregate = streaming_aggregate(&hours, weighting)?;
        Ok(MetricReport {
            method: method.into(),
            hours,
            aggregate,
            ri: None,
        })
    }
}

/// Fill in relative improvements against the named anchor reports.
pub fn attach_relative_improvements(reports: &mut [MetricReport], pretrained: &str, oracle: &str) -> Result<()> {
    let find = |name: &str| {
        reports
            .iter()
            .find(|r| r.method == name)
            .map(|r| r.aggregate)
            .ok_or_else(|| Error::contract(format!("anchor report '{name}' missing")))
    };
    let (pre, ora) = (find(pretrained)?, find(oracle)?);
    for r in reports.iter_mut() {
        r.ri = Some(RelativeImprovement::between(&r.aggregate, &pre, &ora)?);
    }
    Ok(())
}

/// Fixed-width table, one row per method.
pub fn render_table(reports: &[MetricReport]) -> String {
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>9}  {:>9}  {:>9}",
        "method", "AUC", "PR-AUC", "NLL", "RI-AUC", "RI-PR-AUC", "RI-NLL"
    );
    for r in reports {
        let a = &r.aggregate;
        let _ = write!(out, "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}", r.method, a.auc, a.pr_auc, a.nll);
        match &r.ri {
            Some(ri) => {
                let pct = |v: f64| format!("{v:.2}%");
                let _ = writeln!(out, "  {:>9}  {:>9}  {:>9}", pct(ri.auc), pct(ri.pr_auc), pct(ri.nll));
            }
            None => {
                let _ = writeln!(out, "  {:>9}  {:>9}  {:>9}", "-", "-", "-");
            }
        }
    }
    out
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    method: &'a str,
    auc: f64,
    pr_auc: f64,
    nll: f64,
    ri_auc: Option<f64>,
    ri_pr_auc: Option<f64>,
    ri_nll: Option<f64>,
    hours: usize,
    samples: usize,
}

/// One JSON object per method, newline separated.
pub fn render_jsonl(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let rec = JsonRecord {
            method: &r.method,
            auc: r.aggregate.auc,
            pr_auc: r.aggregate.pr_auc,
            nll: r.aggregate.nll,
            ri_auc: r.ri.map(|x| x.auc),
            ri_pr_auc: r.ri.map(|x| x.pr_auc),
            ri_nll: r.ri.map(|x| x.nll),
            hours: r.hours.len(),
            samples: r.hours.iter().map(|h| h.count).sum(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hour(count: usize, auc: Option<f64>) -> HourMetrics {
        HourMetrics {
            hour: 0,
            count,
            auc,
            pr_auc: Some(0.5),
            nll: Some(0.3),
        }
    }

    #[test]
    fn ri_hand_values() {
        let ri = relative_improvement(MetricKind::Auc, 0.8394, 0.8075, 0.8429).unwrap();
        assert!((ri - 90.11).abs() < 0.005, "{ri}");
        let ri = relative_improvement(MetricKind::Nll, 0.6149, 0.5425, 0.3891).unwrap();
        assert!((ri + 47.20).abs() < 0.005, "{ri}");
        assert_eq!(relative_improvement(MetricKind::Auc, 0.7, 0.7, 0.8).unwrap(), 0.0);
        assert!(relative_improvement(MetricKind::Nll, 0.7, 0.5, 0.5).is_err());
    }

    #[test]
    fn aggregation() {
        let two = [hour(10, Some(0.6)), hour(10, Some(0.8))];
        let s = streaming_aggregate(&two, HourWeighting::Count).unwrap();
        assert!((s.auc - 0.7).abs() < 1e-15);
        let tripled = [hour(30, Some(0.6)), hour(30, Some(0.8))];
        assert_eq!(streaming_aggregate(&tripled, HourWeighting::Count).unwrap(), s);
        let skewed = [hour(30, Some(0.6)), hour(10, Some(0.8)), hour(50, None)];
        let s = streaming_aggregate(&skewed, HourWeighting::Count).unwrap();
        assert!((s.auc - 0.65).abs() < 1e-15);
        let u = streaming_aggregate(&skewed, HourWeighting::Uniform).unwrap();
        assert!((u.auc - 0.7).abs() < 1e-15);
        let none = [hour(3, None)];
        assert!(matches!(
            streaming_aggregate(&none, HourWeighting::Count),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn anchors_land_on_zero_and_hundred() {
        let mk = |name: &str, auc: f64, nll: f64| MetricReport {
            method: name.into(),
            hours: vec![],
            aggregate: MetricSummary { auc, pr_auc: auc - 0.2, nll },
            ri: None,
        };
        let mut reports = vec![mk("pre", 0.7, 0.5), mk("mid", 0.75, 0.45), mk("oracle", 0.8, 0.4)];
        attach_relative_improvements(&mut reports, "pre", "oracle").unwrap();
        let ri: Vec<_> = reports.iter().map(|r| r.ri.unwrap()).collect();
        assert_eq!((ri[0].auc, ri[0].nll), (0.0, 0.0));
        assert_eq!((ri[2].auc, ri[2].nll), (100.0, 100.0));
        assert!((ri[1].auc - 50.0).abs() < 1e-9);
        let table = render_table(&reports);
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("100.00%"));
        assert_eq!(render_jsonl(&reports).lines().count(), 3);
    }
}
