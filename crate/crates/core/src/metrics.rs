//! Accuracy, cross-entropy, confusion matrix, per-class precision-recall curves
//! and sparsity counts for a (masked) model over a dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine;
use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::model::{Dataset, Model};

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// One-vs-rest precision-recall curve. `points[k]` belongs to `thresholds[k]`
/// (ascending); the final point is the `(recall 0, precision 1)` endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub class_index: usize,
    pub thresholds: Vec<f64>,
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer_index: usize,
    pub pruned: usize,
    pub total: usize,
}

impl LayerSparsity {
    pub fn remaining(&self) -> usize {
        self.total - self.pruned
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sparsity {
    pub layers: Vec<LayerSparsity>,
    pub pruned: usize,
    pub total: usize,
    pub global_ratio: f64,
}

impl Sparsity {
    pub fn of(masks: &MaskSet) -> Self {
        let layers: Vec<_> = masks
            .iter()
            .map(|m| LayerSparsity {
                layer_index: m.layer_index,
                pruned: m.pruned_count(),
                total: m.len(),
            })
            .collect();
        let pruned = layers.iter().map(|l| l.pruned).sum();
        let total = layers.iter().map(|l| l.total).sum::<usize>();
        Self {
            layers,
            pruned,
            total,
            global_ratio: if total == 0 { 0.0 } else { pruned as f64 / total as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub pr_curves: Vec<PrCurve>,
    pub sparsity: Sparsity,
}

impl EvalReport {
    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }
}

/// Classification part of a report, computed from raw scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub confusion: Vec<Vec<usize>>,
    pub pr_curves: Vec<PrCurve>,
}

/// Evaluates every sample (in parallel, reduced in index order).
pub fn evaluate(model: &Model, masks: &MaskSet, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset.check_compatible(model)?;
    let masked = engine::apply_masks(model, masks)?;
    let scores = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let x = dataset.sample(i)?;
            let acts = engine::run_layers(&masked, &x)?;
            let out = acts.into_iter().last().ok_or(Error::NoWeightedLayer)?;
            out.check_finite()?;
            Ok(out.into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    let c = classify(&scores, &dataset.labels, dataset.num_classes())?;
    Ok(EvalReport {
        num_samples: dataset.len(),
        accuracy: c.accuracy,
        mean_loss: c.mean_loss,
        confusion: c.confusion,
        pr_curves: c.pr_curves,
        sparsity: Sparsity::of(masks),
    })
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(scores: &[f32]) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(f64::from(s)));
    let exps: Vec<f64> = scores.iter().map(|&s| (f64::from(s) - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn classify(scores: &[Vec<f32>], labels: &[usize], num_classes: usize) -> Result<Classification> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if scores.len() != n {
        return Err(Error::InvalidDataset(format!("{} score rows for {n} labels", scores.len())));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut loss_sum = 0.0f64;
    let mut probs = Vec::with_capacity(n);
    for (row, &label) in scores.iter().zip(labels) {
        if row.len() != num_classes || label >= num_classes {
            return Err(Error::InvalidDataset(format!(
                "score row of length {} / label {label} for {num_classes} classes",
                row.len()
            )));
        }
        confusion[label][argmax(row)] += 1;
        let p = softmax(row);
        loss_sum -= p[label].max(PROB_FLOOR).ln();
        probs.push(p);
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let pr_curves = (0..num_classes)
        .map(|c| {
            let class_probs: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            pr_curve(c, &class_probs, &positive)
        })
        .collect();
    Ok(Classification {
        accuracy: correct as f64 / n as f64,
        mean_loss: loss_sum / n as f64,
        confusion,
        pr_curves,
    })
}

/// Sweeps the distinct probabilities that samples of this class received as
/// thresholds (`p >= t` predicts positive). Classes without samples get only the
/// endpoint.
pub fn pr_curve(class_index: usize, probs: &[f64], positive: &[bool]) -> PrCurve {
    let total_pos = positive.iter().filter(|&&p| p).count();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // descending probability; the sweep admits samples as the threshold falls
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut thresholds = Vec::new();
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = probs[order[k]];
        let mut is_threshold = false;
        while k < order.len() && probs[order[k]] == t {
            if positive[order[k]] {
                tp += 1;
                is_threshold = true;
            } else {
                fp += 1;
            }
            k += 1;
        }
        if is_threshold {
            thresholds.push(t);
            points.push(PrPoint {
                recall: tp as f64 / total_pos as f64,
                precision: tp as f64 / (tp + fp) as f64,
            });
        }
    }
    thresholds.reverse();
    points.reverse();
    points.push(PrPoint {
        recall: 0.0,
        precision: 1.0,
    });
    PrCurve {
        class_index,
        thresholds,
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsityDelta {
    pub layer_index: usize,
    pub pruned_delta: i64,
    pub ratio_delta: f64,
}

/// `b - a` for every compared quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub accuracy_delta: f64,
    pub loss_delta: f64,
    pub global_ratio_delta: f64,
    pub layers: Vec<LayerSparsityDelta>,
}

pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<ReportDelta> {
    if a.num_classes() != b.num_classes() {
        return Err(Error::ReportMismatch(format!(
            "{} vs {} classes",
            a.num_classes(),
            b.num_classes()
        )));
    }
    let same_layers = a.sparsity.layers.len() == b.sparsity.layers.len()
        && a.sparsity
            .layers
            .iter()
            .zip(&b.sparsity.layers)
            .all(|(x, y)| x.layer_index == y.layer_index && x.total == y.total);
    if !same_layers {
        return Err(Error::ReportMismatch("reports cover different weighted layers".into()));
    }
    let layers = a
        .sparsity
        .layers
        .iter()
        .zip(&b.sparsity.layers)
        .map(|(x, y)| LayerSparsityDelta {
            layer_index: x.layer_index,
            pruned_delta: y.pruned as i64 - x.pruned as i64,
            ratio_delta: (y.pruned as f64 - x.pruned as f64) / x.total.max(1) as f64,
        })
        .collect();
    Ok(ReportDelta {
        accuracy_delta: b.accuracy - a.accuracy,
        loss_delta: b.mean_loss - a.mean_loss,
        global_ratio_delta: b.sparsity.global_ratio - a.sparsity.global_ratio,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_scores() {
        let scores = vec![vec![5.0, 0.0], vec![0.0, 5.0], vec![3.0, 1.0]];
        let c = classify(&scores, &[0, 1, 0], 2).unwrap();
        assert_eq!(c.accuracy, 1.0);
        assert_eq!(c.confusion, vec![vec![2, 0], vec![0, 1]]);
        for curve in &c.pr_curves {
            assert!(curve.points.iter().all(|p| p.precision == 1.0));
        }
    }

    #[test]
    fn constant_scores_predict_class_zero() {
        let scores = vec![vec![1.0, 1.0, 1.0]; 4];
        let c = classify(&scores, &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(c.confusion, vec![vec![1, 0, 0], vec![2, 0, 0], vec![1, 0, 0]]);
        assert_eq!(c.accuracy, 0.25);
        assert!((c.mean_loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_uses_probability_floor() {
        let c = classify(&[vec![0.0, 1000.0]], &[0], 2).unwrap();
        assert!((c.mean_loss - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn pr_curve_hand_example() {
        // probs 0.9(+), 0.8(-), 0.3(+), 0.1(-)
        let curve = pr_curve(0, &[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]);
        assert_eq!(curve.thresholds, vec![0.3, 0.9]);
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(pts, vec![(1.0, 2.0 / 3.0), (0.5, 1.0), (0.0, 1.0)]);
        assert_eq!(pr_curve(1, &[0.2, 0.4], &[false, false]).points.len(), 1);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(classify(&[], &[], 2), Err(Error::EmptyDataset)));
    }

    fn report(acc: f64, pruned: usize) -> EvalReport {
        EvalReport {
            num_samples: 10,
            accuracy: acc,
            mean_loss: 0.5,
            confusion: vec![vec![0; 2]; 2],
            pr_curves: vec![],
            sparsity: Sparsity {
                layers: vec![
                    LayerSparsity {
                        layer_index: 0,
                        pruned,
                        total: 10,
                    },
                    LayerSparsity {
                        layer_index: 2,
                        pruned: 0,
                        total: 4,
                    },
                ],
                pruned,
                total: 14,
                global_ratio: pruned as f64 / 14.0,
            },
        }
    }

    #[test]
    fn compare_identical_is_zero() {
        let a = report(0.9, 3);
        let d = compare_reports(&a, &a).unwrap();
        assert_eq!(d.accuracy_delta, 0.0);
        assert_eq!(d.loss_delta, 0.0);
        assert!(d.layers.iter().all(|l| l.pruned_delta == 0 && l.ratio_delta == 0.0));
    }

    #[test]
    fn compare_untouched_layer_is_zero() {
        let d = compare_reports(&report(0.9, 0), &report(0.8, 5)).unwrap();
        assert!((d.accuracy_delta + 0.1).abs() < 1e-12);
        assert_eq!(d.layers[0].pruned_delta, 5);
        assert_eq!(d.layers[0].ratio_delta, 0.5);
        assert_eq!(d.layers[1].pruned_delta, 0);
        let mut other = report(0.9, 0);
        other.confusion = vec![vec![0; 3]; 3];
        assert!(compare_reports(&report(0.9, 0), &other).is_err());
    }

    fn scores_and_labels() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<usize>, usize)> {
        (2usize..6).prop_flat_map(|k| {
            proptest::collection::vec(
                (proptest::collection::vec(-5.0f32..5.0, k), 0..k),
                1..60,
            )
            .prop_map(move |rows| {
                let (s, l): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
                (s, l, k)
            })
        })
    }

    proptest! {
        #[test]
        fn confusion_and_pr_invariants((scores, labels, k) in scores_and_labels()) {
            let c = classify(&scores, &labels, k).unwrap();
            let n = labels.len();
            let total: usize = c.confusion.iter().flatten().sum();
            prop_assert_eq!(total, n);
            for class in 0..k {
                let count = labels.iter().filter(|&&l| l == class).count();
                prop_assert_eq!(c.confusion[class].iter().sum::<usize>(), count);
            }
            let direct = scores.iter().zip(&labels).filter(|(s, &l)| argmax(s) == l).count();
            prop_assert_eq!(c.accuracy, direct as f64 / n as f64);
            for curve in &c.pr_curves {
                for w in curve.points.windows(2) {
                    prop_assert!(w[1].recall <= w[0].recall);
                }
                for p in &curve.points {
                    prop_assert!((0.0..=1.0).contains(&p.recall));
                    prop_assert!((0.0..=1.0).contains(&p.precision));
                }
            }
        }

        #[test]
        fn one_hot_scores_lower_the_loss((scores, labels, k) in scores_and_labels()) {
            let before = classify(&scores, &labels, k).unwrap().mean_loss;
            let one_hot: Vec<Vec<f32>> = labels
                .iter()
                .map(|&l| (0..k).map(|c| if c == l { 20.0 } else { 0.0 }).collect())
                .collect();
            let after = classify(&one_hot, &labels, k).unwrap().mean_loss;
            prop_assert!(after < before);
        }
    }
}
