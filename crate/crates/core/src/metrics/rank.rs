//! Ranking and calibration metrics. Scores are compared in `f64`.

use crate::{clamp_prob, Error, Result, Scalar};

fn sorted_groups<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<Vec<(u64, u64)>> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut pairs = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let s = s.as_f64();
        if s.is_nan() {
            return Err(Error::Numeric("NaN score".into()));
        }
        pairs.push((s, y));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // (positives, negatives) per distinct score, ascending
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = None;
    for (s, y) in pairs {
        if last != Some(s) {
            groups.push((0, 0));
            last = Some(s);
        }
        let g = groups.last_mut().expect("pushed");
        if y == 1 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok(groups)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    let groups = sorted_groups(scores, labels)?;
    let (pos, neg) = groups.iter().fold((0, 0), |a, g| (a.0 + g.0, a.1 + g.1));
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    // counted in half-pairs so the sum stays an exact integer
    let mut half_pairs: u128 = 0;
    let mut neg_below: u64 = 0;
    for &(p, n) in &groups {
        half_pairs += p as u128 * (2 * neg_below as u128 + n as u128);
        neg_below += n;
    }
    Ok(half_pairs as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Average precision: precision at each distinct score threshold, weighted
/// by the recall gained there. Tied scores form one threshold.
pub fn pr_auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    let groups = sorted_groups(scores, labels)?;
    let pos: u64 = groups.iter().map(|g| g.0).sum();
    if pos == 0 {
        return Err(Error::UndefinedMetric("PR-AUC needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for &(p, n) in groups.iter().rev() {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Mean negative log likelihood of clamped predictions.
pub fn nll<T: Scalar>(predictions: &[T], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions and labels differ in length"));
    }
    if predictions.is_empty() {
        return Err(Error::UndefinedMetric("NLL of an empty set".into()));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p.as_f64());
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let auc4 = auc(&[0.1f64, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc4, 0.75);
        assert_eq!(auc(&[0.1f64, 0.9], &[0, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5f64, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(pr_auc(&[0.9f64, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        let n = 5;
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let mut labels = vec![0u8; n];
        labels[n - 1] = 1;
        assert!((pr_auc(&scores, &labels).unwrap() - 1.0 / n as f64).abs() < 1e-15);
        assert!((nll(&[0.5f64, 0.5], &[0, 1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(auc(&[0.1f64, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(pr_auc(&[0.1f64], &[0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(nll::<f64>(&[], &[]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc(&[f64::NAN, 0.2], &[1, 0]), Err(Error::Numeric(_))));
    }
}
