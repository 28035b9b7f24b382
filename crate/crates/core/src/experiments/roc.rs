//! ROC points over a threshold grid and area-under-curve estimates.

use serde::{Deserialize, Serialize};

/// One operating point: episodes score positive when `score >= h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub h: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Evaluates the detector at every threshold in `h_grid`. Sorted by h the
/// points form a monotone staircase in (FPR, TPR).
pub fn roc_points(nominal: &[f64], anomalous: &[f64], h_grid: &[f64]) -> Vec<RocPoint> {
    assert!(
        !nominal.is_empty() && !anomalous.is_empty(),
        "roc needs both classes"
    );
    h_grid
        .iter()
        .map(|&h| {
            let tp = anomalous.iter().filter(|&&s| s >= h).count();
            let fp = nominal.iter().filter(|&&s| s >= h).count();
            RocPoint {
                h,
                tpr: tp as f64 / anomalous.len() as f64,
                fpr: fp as f64 / nominal.len() as f64,
                tp,
                fp,
                pos: anomalous.len(),
                neg: nominal.len(),
            }
        })
        .collect()
}

/// Trapezoidal area under the staircase spanned by `points`, with the
/// (0,0) and (1,1) endpoints appended when absent.
pub fn auc_from_points(points: &[RocPoint]) -> f64 {
    let mut curve: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    curve.push((0.0, 0.0));
    curve.push((1.0, 1.0));
    curve.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    curve.dedup();
    let mut auc = 0.0;
    for w in curve.windows(2) {
        let (x1, y1) = w[0];
        let (x2, y2) = w[1];
        auc += (x2 - x1) * (y1 + y2) / 2.0;
    }
    auc
}

/// Exact threshold-free AUC (equivalent to the Mann-Whitney statistic with
/// ties counted half). Quadratic in the class sizes, which is fine at the
/// episode counts used here.
pub fn auc_from_scores(nominal: &[f64], anomalous: &[f64]) -> f64 {
    assert!(
        !nominal.is_empty() && !anomalous.is_empty(),
        "auc needs both classes"
    );
    let mut wins = 0.0;
    for &a in anomalous {
        for &n in nominal {
            if a > n {
                wins += 1.0;
            } else if a == n {
                wins += 0.5;
            }
        }
    }
    wins / (nominal.len() as f64 * anomalous.len() as f64)
}

/// An evenly spaced threshold grid covering both score ranges.
pub fn default_h_grid(nominal: &[f64], anomalous: &[f64], steps: usize) -> Vec<f64> {
    let all = nominal.iter().chain(anomalous);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in all {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if !lo.is_finite() || !hi.is_finite() || lo == hi {
        return vec![lo];
    }
    let steps = steps.max(2);
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}
