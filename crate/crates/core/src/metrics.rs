//! ROC curves, AUROC, confusion counts and balanced accuracy.
//!
//! Classification is strict everywhere: a sample is predicted positive iff
//! its score is `> tau`. Many toolkits use `>=`; the two only differ for
//! samples whose score equals the threshold.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Validation(format!("label {l} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    Ok((pos, labels.len() as u64 - pos))
}

fn require_both(pos: u64, neg: u64) -> Result<()> {
    match (pos, neg) {
        (0, 0) => Err(Error::EmptyDataset),
        (0, _) => Err(Error::SingleClass(0)),
        (_, 0) => Err(Error::SingleClass(1)),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples scoring strictly above this value are predicted positive.
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positives: u64,
    pub negatives: u64,
}

/// One vertex per distinct score, from `(0, 0)` to `(1, 1)`. Tied scores
/// form a single step.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (pos, neg) = check_inputs(scores, labels)?;
    require_both(pos, neg)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let point = |tp: u64, fp: u64, threshold: f64| RocPoint {
        fpr: fp as f64 / neg as f64,
        tpr: tp as f64 / pos as f64,
        threshold,
        tp,
        fp,
    };

    let mut points = vec![point(0, 0, scores[order[0]])];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let next = order.get(i).map_or(f64::NEG_INFINITY, |&j| scores[j]);
        points.push(point(tp, fp, next));
    }
    Ok(RocCurve {
        points,
        positives: pos,
        negatives: neg,
    })
}

/// Trapezoidal area under the curve, accumulated in integer counts so it
/// coincides with the Mann-Whitney statistic.
pub fn auroc(curve: &RocCurve) -> f64 {
    let twice_area: u128 = curve
        .points
        .windows(2)
        .map(|w| u128::from(w[1].fp - w[0].fp) * u128::from(w[1].tp + w[0].tp))
        .sum();
    twice_area as f64 / (2.0 * curve.positives as f64 * curve.negatives as f64)
}

pub fn auroc_of(scores: &[f64], labels: &[u8]) -> Result<f64> {
    roc_curve(scores, labels).map(|c| auroc(&c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn tpr(&self) -> f64 {
        self.tp as f64 / self.positives() as f64
    }

    pub fn tnr(&self) -> f64 {
        self.tn as f64 / self.negatives() as f64
    }
}

pub fn confusion_at(scores: &[f64], labels: &[u8], tau: f64) -> Result<ConfusionCounts> {
    check_inputs(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > tau, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(TPR + TNR) / 2`.
pub fn balanced_accuracy(c: &ConfusionCounts) -> Result<f64> {
    require_both(c.positives(), c.negatives())?;
    Ok((c.tpr() + c.tnr()) / 2.0)
}

/// `sqrt(TPR * TNR)`.
pub fn geometric_balanced_accuracy(c: &ConfusionCounts) -> Result<f64> {
    require_both(c.positives(), c.negatives())?;
    Ok((c.tpr() * c.tnr()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    #[default]
    BalancedArithmetic,
    BalancedGeometric,
}

impl ThresholdRule {
    pub fn evaluate(self, c: &ConfusionCounts) -> Result<f64> {
        match self {
            ThresholdRule::BalancedArithmetic => balanced_accuracy(c),
            ThresholdRule::BalancedGeometric => geometric_balanced_accuracy(c),
        }
    }

    /// Integer key that orders confusion matrices exactly like the rule.
    fn key(self, tp: u64, tn: u64, pos: u64, neg: u64) -> u128 {
        match self {
            // (tp/P + tn/N) / 2  ~  tp*N + tn*P
            ThresholdRule::BalancedArithmetic => {
                u128::from(tp) * u128::from(neg) + u128::from(tn) * u128::from(pos)
            }
            // sqrt(tp/P * tn/N)  ~  tp*tn
            ThresholdRule::BalancedGeometric => u128::from(tp) * u128::from(tn),
        }
    }
}

/// Midpoints between consecutive distinct scores plus one value below the
/// minimum and one above the maximum. Together they realize every distinct
/// confusion matrix under strict thresholding.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut uniq: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let Some((&lo, &hi)) = uniq.first().zip(uniq.last()) else {
        return Vec::new();
    };
    let below = if lo > 0.0 { lo / 2.0 } else { lo - 1.0 };
    let above = match if hi < 1.0 { (hi + 1.0) / 2.0 } else { hi + 1.0 } {
        a if a > hi => a,
        _ => hi,
    };

    let mut out = Vec::with_capacity(uniq.len() + 1);
    out.push(below);
    for w in uniq.windows(2) {
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        // Adjacent floats can round the midpoint onto the upper score.
        out.push(if mid < w[1] { mid } else { w[0] });
    }
    out.push(above);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub objective: f64,
    pub confusion: ConfusionCounts,
}

/// Threshold maximizing the rule over [`threshold_candidates`]; ties go to
/// the smallest threshold.
pub fn best_threshold(
    scores: &[f64],
    labels: &[u8],
    rule: ThresholdRule,
) -> Result<ThresholdChoice> {
    let (pos, neg) = check_inputs(scores, labels)?;
    require_both(pos, neg)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let candidates = threshold_candidates(scores);

    // Sweep candidates upward; `k` indexes the first sample still scoring
    // above the current candidate.
    let (mut tp, mut tn) = (pos, 0u64);
    let mut k = 0;
    let mut best: Option<(u128, f64, ConfusionCounts)> = None;
    for &tau in &candidates {
        while k < order.len() && scores[order[k]] <= tau {
            if labels[order[k]] == 1 {
                tp -= 1;
            } else {
                tn += 1;
            }
            k += 1;
        }
        let key = rule.key(tp, tn, pos, neg);
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| key.cmp(b) == Ordering::Greater)
        {
            let confusion = ConfusionCounts {
                tp,
                fp: neg - tn,
                tn,
                fn_: pos - tp,
            };
            best = Some((key, tau, confusion));
        }
    }
    let (_, threshold, confusion) = best.expect("at least two candidates");
    Ok(ThresholdChoice {
        threshold,
        objective: rule.evaluate(&confusion)?,
        confusion,
    })
}

/// Scores of a model at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auroc: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub balanced_accuracy: f64,
    pub threshold: f64,
}

pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Evaluation> {
    let auroc = auroc_of(scores, labels)?;
    let c = confusion_at(scores, labels, threshold)?;
    Ok(Evaluation {
        auroc,
        tpr: c.tpr(),
        tnr: c.tnr(),
        balanced_accuracy: balanced_accuracy(&c)?,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy(points: &RocCurve) -> Vec<(f64, f64)> {
        points.points.iter().map(|p| (p.fpr, p.tpr)).collect()
    }

    #[test]
    fn perfect_pair_curve() {
        let c = roc_curve(&[0.9, 0.1], &[1, 0]).unwrap();
        assert_eq!(xy(&c), vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(auroc(&c), 1.0);
    }

    #[test]
    fn all_ties_give_the_diagonal() {
        let c = roc_curve(&[0.3; 6], &[1, 0, 0, 1, 0, 0]).unwrap();
        assert_eq!(xy(&c), vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auroc(&c), 0.5);
    }

    #[test]
    fn four_sample_area() {
        let c = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auroc(&c), 0.75);
        let fpr: Vec<_> = c.points.iter().map(|p| p.fpr).collect();
        let tpr: Vec<_> = c.points.iter().map(|p| p.tpr).collect();
        assert!(fpr.windows(2).all(|w| w[0] <= w[1]));
        assert!(tpr.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn curve_thresholds_reproduce_points() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.2];
        let labels = [0, 0, 1, 1, 1, 0];
        let c = roc_curve(&scores, &labels).unwrap();
        for p in &c.points {
            let cc = confusion_at(&scores, &labels, p.threshold).unwrap();
            assert_eq!((cc.tp, cc.fp), (p.tp, p.fp));
        }
    }

    #[test]
    fn single_class_errors() {
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[1, 1]),
            Err(Error::SingleClass(1))
        ));
        assert!(matches!(
            best_threshold(&[0.1, 0.2], &[0, 0], ThresholdRule::default()),
            Err(Error::SingleClass(0))
        ));
        assert!(roc_curve(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn confusion_extremes() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        let all_pos = confusion_at(&scores, &labels, 0.05).unwrap();
        assert_eq!((all_pos.tp, all_pos.fp), (2, 2));
        let all_neg = confusion_at(&scores, &labels, 0.95).unwrap();
        assert_eq!((all_neg.tn, all_neg.fn_), (2, 2));
        let mid = confusion_at(&scores, &labels, 0.5).unwrap();
        assert_eq!(
            mid,
            ConfusionCounts {
                tp: 2,
                fp: 0,
                tn: 2,
                fn_: 0
            }
        );
        assert_eq!(balanced_accuracy(&mid).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&all_pos).unwrap(), 0.5);
    }

    #[test]
    fn strict_threshold_semantics() {
        let c = confusion_at(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(c.tp, 0);
        assert_eq!(c.fn_, 1);
    }

    #[test]
    fn reference_table_balanced_accuracy() {
        // (0.782051 + 0.770115) / 2
        let ba = (0.782051 + 0.770115) / 2.0;
        assert!((ba - 0.776083_f64).abs() < 1e-6);
        let c = ConfusionCounts {
            tp: 3,
            fn_: 1,
            tn: 1,
            fp: 1,
        };
        assert!((balanced_accuracy(&c).unwrap() - 0.625).abs() < 1e-15);
        assert!((geometric_balanced_accuracy(&c).unwrap() - (0.75f64 * 0.5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn separable_threshold_is_midpoint() {
        let choice = best_threshold(
            &[0.9, 0.8, 0.2, 0.1],
            &[1, 1, 0, 0],
            ThresholdRule::BalancedArithmetic,
        )
        .unwrap();
        assert_eq!(choice.threshold, 0.5);
        assert_eq!(choice.objective, 1.0);
    }

    #[test]
    fn ties_prefer_smallest_threshold() {
        // Every candidate gives balanced accuracy 0.5.
        let choice =
            best_threshold(&[0.4, 0.4], &[1, 0], ThresholdRule::BalancedArithmetic).unwrap();
        assert_eq!(choice.threshold, 0.2);
    }

    #[test]
    fn candidates_for_scores_in_unit_interval_stay_inside() {
        let c = threshold_candidates(&[0.3, 0.1, 0.3, 0.7]);
        assert_eq!(c, vec![0.05, 0.2, 0.5, 0.85]);
        assert!(threshold_candidates(&[]).is_empty());
    }
}
