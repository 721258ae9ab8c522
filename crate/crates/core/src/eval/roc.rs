//! ROC curves over frame scores and per-bin recognition scores.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One operating point of a detector sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score threshold that produces this point (classify positive at
    /// score >= threshold).
    pub threshold: f64,
}

/// Sweeps a threshold over `scores` against boolean `labels` and returns the
/// ROC points plus the trapezoidal area under the curve.
///
/// Tied scores collapse into a single operating point, so the curve walks
/// diagonals through tie blocks instead of fabricating orderings.  Fails if
/// either class is absent or any score is non-finite.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(Vec<RocPoint>, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "roc needs matched lengths, got {} scores and {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("roc scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut auc = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        // Consume the whole tie group before emitting a point.
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let next = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: thr,
        };
        let last = *points.last().unwrap();
        auc += (next.fpr - last.fpr) * (next.tpr + last.tpr) * 0.5;
        points.push(next);
    }
    Ok((points, auc))
}

/// Sums a heatmap into left/middle/right thirds (the same column split the
/// recovery controller bins on).
pub fn bin_sums(heatmap: &Tensor) -> [f64; 3] {
    let shape = heatmap.shape();
    assert_eq!(shape.len(), 2, "bin sums expect a 2-D heatmap");
    let (h, w) = (shape[0], shape[1]);
    let data = heatmap.data();
    let mut sums = [0.0f64; 3];
    for r in 0..h {
        for c in 0..w {
            sums[(3 * c / w).min(2)] += data[r * w + c];
        }
    }
    sums
}

/// Recognition score for bin `k` in {0, 1, 2}: zero unless the detector
/// fired on the frame, else the heatmap mass inside that bin.
pub fn per_bin_score(b_t: bool, heatmap: &Tensor, k: usize) -> f64 {
    assert!(k < 3, "bin index out of range: {k}");
    if !b_t {
        return 0.0;
    }
    bin_sums(heatmap)[k]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_case_matches() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        let (points, auc) = roc_auc(&scores, &labels).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
        assert_eq!(points.first().unwrap().threshold, f64::INFINITY);
        let end = points.last().unwrap();
        assert_eq!((end.fpr, end.tpr), (1.0, 1.0));
    }

    #[test]
    fn perfect_and_indifferent_detectors() {
        let labels = [true, true, false, false];
        let (_, sep) = roc_auc(&[9.0, 8.0, 1.0, 2.0], &labels).unwrap();
        assert_eq!(sep, 1.0);
        // All-tied scores collapse to the chance diagonal.
        let (points, tied) = roc_auc(&[3.0; 4], &labels).unwrap();
        assert_eq!(points.len(), 2);
        assert!((tied - 0.5).abs() < 1e-12);
    }

    #[test]
    fn negated_scores_mirror_the_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_range(0..2) == 1).collect();
            if labels.iter().all(|&l| l) {
                labels[0] = false;
            }
            if labels.iter().all(|&l| !l) {
                labels[0] = true;
            }
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let (_, a) = roc_auc(&scores, &labels).unwrap();
            let (_, b) = roc_auc(&neg, &labels).unwrap();
            assert!((a + b - 1.0).abs() < 1e-9, "{a} + {b}");
        }
    }

    #[test]
    fn curve_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<bool> = (0..60).map(|i| i % 3 == 0).collect();
        let (points, _) = roc_auc(&scores, &labels).unwrap();
        for pair in points.windows(2) {
            assert!(pair[1].fpr >= pair[0].fpr);
            assert!(pair[1].tpr >= pair[0].tpr);
            assert!(pair[1].threshold <= pair[0].threshold);
        }
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &[true, true]),
            Err(Error::SingleClass)
        ));
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &[false, false]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn uniform_heatmap_splits_into_thirds() {
        let map = Tensor::new(vec![48, 64], vec![1.0; 48 * 64]).unwrap();
        assert_eq!(per_bin_score(true, &map, 0), 48.0 * 22.0);
        assert_eq!(per_bin_score(true, &map, 1), 48.0 * 21.0);
        assert_eq!(per_bin_score(true, &map, 2), 48.0 * 21.0);
        assert_eq!(per_bin_score(false, &map, 0), 0.0);
    }

    #[test]
    fn bin_scores_add_up_to_the_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..12 * 17).map(|_| rng.random_range(0.0..3.0)).collect();
        let total: f64 = data.iter().sum();
        let map = Tensor::new(vec![12, 17], data).unwrap();
        let sum: f64 = (0..3).map(|k| per_bin_score(true, &map, k)).sum();
        assert!((sum - total).abs() < 1e-9);
    }
}
