//! Offline calibration: leave-one-out kNN summary statistics over nominal
//! TD-errors and the smoothed empirical tail probability they induce.
//!
//! The statistic of a sample x is the distance to its k-th nearest neighbor
//! in the calibration set (absolute difference for scalars; Euclidean for
//! the optional window embedding). The tail probability of a fresh statistic
//! d is
//!
//! ```text
//! p(d) = (1 + #{calibration stats >= d}) / (M + 1)
//! ```
//!
//! The +1 smoothing keeps p strictly positive and conformal-style valid: for
//! exchangeable nominal data, P(p <= x) <~ x.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error("k = {k} needs at least k+1 calibration points, got {m}")]
    KTooLarge { k: usize, m: usize },
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed calibration file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("calibration file corrupt: {0}")]
    Corrupt(String),
    #[error("unsupported calibration version {found} (expected {CALIBRATION_VERSION})")]
    Version { found: u32 },
}

/// Immutable after build; shared read-only across per-node detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    k: usize,
    window: usize,
    /// Discount factor the TD-errors were computed with (metadata).
    pub gamma: f64,
    /// Raw nominal streams, one per (node, episode) source.
    streams: Vec<Vec<f64>>,
    /// Embedded points, row-major `[m x window]`.
    points: Vec<f64>,
    /// Sorted scalar view for the fast window = 1 path.
    sorted_points: Vec<f64>,
    /// Leave-one-out statistic per embedded point.
    knn_stats: Vec<f64>,
    /// Sorted copy of `knn_stats` for eCDF queries.
    sorted_stats: Vec<f64>,
}

impl CalibrationSet {
    /// Builds from nominal streams. `window = 1` monitors scalar TD-errors;
    /// larger windows embed the last `window` values per stream with
    /// Euclidean distance.
    pub fn build(
        streams: Vec<Vec<f64>>,
        k: usize,
        window: usize,
        gamma: f64,
    ) -> Result<Self, DetectorError> {
        if window == 0 {
            return Err(DetectorError::InvalidConfig("window must be >= 1".into()));
        }
        if k == 0 {
            return Err(DetectorError::InvalidConfig("k must be >= 1".into()));
        }
        let mut points = Vec::new();
        for s in &streams {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(DetectorError::InvalidConfig(
                    "calibration stream contains non-finite values".into(),
                ));
            }
            if s.len() >= window {
                for end in window..=s.len() {
                    points.extend_from_slice(&s[end - window..end]);
                }
            }
        }
        let m = points.len() / window;
        if m == 0 {
            return Err(DetectorError::EmptyCalibration);
        }
        if k + 1 > m {
            return Err(DetectorError::KTooLarge { k, m });
        }

        let mut calib = CalibrationSet {
            k,
            window,
            gamma,
            streams,
            points,
            sorted_points: Vec::new(),
            knn_stats: Vec::new(),
            sorted_stats: Vec::new(),
        };
        calib.derive();
        Ok(calib)
    }

    fn derive(&mut self) {
        let m = self.len();
        if self.window == 1 {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| self.points[a].total_cmp(&self.points[b]));
            self.sorted_points = order.iter().map(|&i| self.points[i]).collect();
            // Position of each original point inside the sorted array, so the
            // leave-one-out search can skip exactly its own occurrence.
            let mut pos_of = vec![0usize; m];
            for (sorted_pos, &orig) in order.iter().enumerate() {
                pos_of[orig] = sorted_pos;
            }
            self.knn_stats = (0..m)
                .map(|i| kth_nn_sorted(&self.sorted_points, self.points[i], self.k, Some(pos_of[i])))
                .collect();
        } else {
            self.knn_stats = (0..m)
                .map(|i| self.kth_nn_brute(self.point(i), Some(i)))
                .collect();
        }
        let mut sorted = self.knn_stats.clone();
        sorted.sort_by(f64::total_cmp);
        self.sorted_stats = sorted;
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of embedded calibration points M.
    pub fn len(&self) -> usize {
        self.points.len() / self.window
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn knn_stats(&self) -> &[f64] {
        &self.knn_stats
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.window..(i + 1) * self.window]
    }

    fn kth_nn_brute(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let mut dists: Vec<f64> = (0..self.len())
            .filter(|&j| Some(j) != skip)
            .map(|j| euclidean(x, self.point(j)))
            .collect();
        dists.sort_by(f64::total_cmp);
        dists[self.k - 1]
    }

    /// Online kNN summary statistic of a fresh embedded sample.
    pub fn knn_statistic(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.window, "sample arity must match the window");
        if self.window == 1 {
            kth_nn_sorted(&self.sorted_points, x[0], self.k, None)
        } else {
            self.kth_nn_brute(x, None)
        }
    }

    /// Smoothed tail probability of a statistic value.
    pub fn tail_probability(&self, d: f64) -> f64 {
        let m = self.sorted_stats.len();
        let below = self.sorted_stats.partition_point(|&s| s < d);
        (1 + (m - below)) as f64 / (m + 1) as f64
    }

    /// The smoothing floor 1/(M+1); also the default p-value clamp.
    pub fn smoothing_floor(&self) -> f64 {
        1.0 / (self.len() + 1) as f64
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance from `x` to its k-th nearest value in `sorted`, optionally
/// skipping one occurrence (leave-one-out). Two-pointer expansion from the
/// insertion point; O(log M + k).
fn kth_nn_sorted(sorted: &[f64], x: f64, k: usize, skip: Option<usize>) -> f64 {
    let m = sorted.len();
    debug_assert!(k >= 1 && k <= m - usize::from(skip.is_some()));
    let start = sorted.partition_point(|&v| v < x);
    // Candidates grow outward: left pointer descends, right ascends.
    let mut left: isize = start as isize - 1;
    let mut right: usize = start;
    let mut taken = 0;
    let mut dist;
    loop {
        // Skip the excluded occurrence wherever the pointers meet it.
        if let Some(s) = skip {
            if left == s as isize {
                left -= 1;
            }
            if right == s {
                right += 1;
            }
        }
        // abs() also normalizes the -0.0 that arises when x and a neighbor
        // are zeros of opposite sign.
        let dl = (left >= 0).then(|| (x - sorted[left as usize]).abs());
        let dr = (right < m).then(|| (sorted[right] - x).abs());
        match (dl, dr) {
            (None, None) => unreachable!("k bounded by available neighbors"),
            (Some(l), None) => {
                dist = l;
                left -= 1;
            }
            (None, Some(r)) => {
                dist = r;
                right += 1;
            }
            (Some(l), Some(r)) => {
                if l <= r {
                    dist = l;
                    left -= 1;
                } else {
                    dist = r;
                    right += 1;
                }
            }
        }
        taken += 1;
        if taken == k {
            return dist;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationFile {
    version: u32,
    k: usize,
    window: usize,
    gamma: f64,
    streams: Vec<Vec<f64>>,
    knn_stats: Vec<f64>,
}

/// Persists the calibration set: raw streams plus the derived statistics.
pub fn save_calibration(path: &Path, calib: &CalibrationSet) -> Result<(), DetectorError> {
    let file = CalibrationFile {
        version: CALIBRATION_VERSION,
        k: calib.k,
        window: calib.window,
        gamma: calib.gamma,
        streams: calib.streams.clone(),
        knn_stats: calib.knn_stats.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Loads and re-derives a calibration set, verifying the stored statistics
/// byte-for-byte against the recomputation.
pub fn load_calibration(path: &Path) -> Result<CalibrationSet, DetectorError> {
    let raw = std::fs::read_to_string(path)?;
    let file: CalibrationFile = serde_json::from_str(&raw)?;
    if file.version != CALIBRATION_VERSION {
        return Err(DetectorError::Version {
            found: file.version,
        });
    }
    let calib = CalibrationSet::build(file.streams, file.k, file.window, file.gamma)?;
    if calib.knn_stats != file.knn_stats {
        return Err(DetectorError::Corrupt(
            "stored kNN statistics do not match the raw deltas".into(),
        ));
    }
    Ok(calib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn scalar_calib(values: &[f64], k: usize) -> CalibrationSet {
        CalibrationSet::build(vec![values.to_vec()], k, 1, 0.99).unwrap()
    }

    /// Full-sort oracle for the online statistic.
    fn brute_knn(values: &[f64], x: f64, k: usize) -> f64 {
        let mut d: Vec<f64> = values.iter().map(|v| (v - x).abs()).collect();
        d.sort_by(f64::total_cmp);
        d[k - 1]
    }

    /// Full-scan oracle for the tail probability.
    fn brute_tail(stats: &[f64], d: f64) -> f64 {
        let count = stats.iter().filter(|&&s| s >= d).count();
        (1 + count) as f64 / (stats.len() + 1) as f64
    }

    #[test]
    fn known_point_with_k1_has_zero_statistic() {
        let calib = scalar_calib(&[0.0, 1.0, 2.0], 1);
        assert_eq!(calib.knn_statistic(&[1.0]), 0.0);
    }

    #[test]
    fn spec_example_k2_distance() {
        // calib {0,1,2}, x = 5, k = 2 -> |5-1| = 4
        let calib = scalar_calib(&[0.0, 1.0, 2.0], 2);
        assert_eq!(calib.knn_statistic(&[5.0]), 4.0);
    }

    #[test]
    fn leave_one_out_excludes_self() {
        // LOO stat of point 1 in {0,1,2} with k=1 is 1 (nearest other).
        let calib = scalar_calib(&[0.0, 1.0, 2.0], 1);
        assert_eq!(calib.knn_stats(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn ecdf_examples() {
        // Build with stats {1,2,3,4} by construction: use points whose LOO
        // k=1 distances are exactly those? Simpler: query tail_probability
        // through a hand-made set via the public build on controlled data.
        // Here we check the arithmetic directly against the brute oracle on
        // the derived stats.
        let calib = scalar_calib(&[0.0, 10.0, 30.0, 60.0, 100.0], 1);
        let stats = calib.knn_stats().to_vec();
        for d in [-1.0, 0.0, 5.0, 10.0, 25.0, 40.0, 1000.0] {
            assert_relative_eq!(calib.tail_probability(d), brute_tail(&stats, d));
        }
        // Degenerate checks on the formula itself: below-all gives 1, above-
        // all gives the smoothing floor.
        let min = stats.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = stats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(calib.tail_probability(min - 1.0), 1.0);
        assert_eq!(
            calib.tail_probability(max + 1.0),
            1.0 / (stats.len() + 1) as f64
        );
        assert_eq!(calib.smoothing_floor(), 1.0 / 6.0);
    }

    #[test]
    fn tail_probability_matches_spec_fraction() {
        // d_tilde = {1,2,3,4}, d = 2.5 -> (1 + 2) / 5 = 0.6 — checked on a
        // hand-rolled struct through the public query by picking points whose
        // LOO distances are {1,2,3,4}: points {0,1,3,6} with k=1 give
        // distances {1,1,2,3}; instead verify the counting rule directly.
        let stats = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(brute_tail(&stats, 2.5), 0.6);
        // and that the implementation agrees with the same counting rule on
        // its own derived stats (covered above for several d).
    }

    #[test]
    fn online_statistic_matches_brute_force() {
        let mut rng = crate::rng::stream_rng(21, crate::rng::Stream::Synthetic);
        for _ in 0..50 {
            let m = rng.gen_range(6..200);
            let values: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let k = rng.gen_range(1..m.min(9));
            let calib = scalar_calib(&values, k);
            for _ in 0..20 {
                let x = rng.gen_range(-8.0..8.0);
                assert_eq!(
                    calib.knn_statistic(&[x]),
                    brute_knn(&values, x, k),
                    "m={m} k={k} x={x}"
                );
            }
        }
    }

    #[test]
    fn loo_statistics_match_brute_force() {
        let mut rng = crate::rng::stream_rng(22, crate::rng::Stream::Synthetic);
        for _ in 0..30 {
            let m = rng.gen_range(5..120);
            let values: Vec<f64> = (0..m)
                .map(|_| (rng.gen_range(-3.0..3.0f64) * 4.0).round() / 4.0) // force ties
                .collect();
            let k = rng.gen_range(1..(m - 1).min(7).max(2));
            let calib = scalar_calib(&values, k);
            for i in 0..m {
                let rest: Vec<f64> = values
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &v)| v)
                    .collect();
                assert_eq!(
                    calib.knn_stats()[i],
                    brute_knn(&rest, values[i], k),
                    "i={i} m={m} k={k}"
                );
            }
        }
    }

    #[test]
    fn window_embedding_matches_brute_force() {
        let mut rng = crate::rng::stream_rng(23, crate::rng::Stream::Synthetic);
        let stream: Vec<f64> = (0..60).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let calib = CalibrationSet::build(vec![stream.clone()], 3, 4, 0.99).unwrap();
        assert_eq!(calib.len(), 57);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // brute oracle over embedded windows
        let mut dists: Vec<f64> = (0..57)
            .map(|i| euclidean(&stream[i..i + 4], &x))
            .collect();
        dists.sort_by(f64::total_cmp);
        assert_eq!(calib.knn_statistic(&x), dists[2]);
    }

    #[test]
    fn permuting_calibration_leaves_queries_bit_identical() {
        let mut rng = crate::rng::stream_rng(24, crate::rng::Stream::Synthetic);
        let values: Vec<f64> = (0..100).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mut shuffled = values.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        let a = scalar_calib(&values, 5);
        let b = scalar_calib(&shuffled, 5);
        for _ in 0..200 {
            let x = rng.gen_range(-6.0..6.0);
            let da = a.knn_statistic(&[x]);
            let db = b.knn_statistic(&[x]);
            assert_eq!(da.to_bits(), db.to_bits());
            assert_eq!(
                a.tail_probability(da).to_bits(),
                b.tail_probability(db).to_bits()
            );
        }
    }

    #[test]
    fn build_rejects_bad_inputs() {
        assert!(matches!(
            CalibrationSet::build(vec![], 1, 1, 0.99),
            Err(DetectorError::EmptyCalibration)
        ));
        assert!(matches!(
            CalibrationSet::build(vec![vec![1.0, 2.0]], 2, 1, 0.99),
            Err(DetectorError::KTooLarge { .. })
        ));
        assert!(CalibrationSet::build(vec![vec![1.0, f64::NAN]], 1, 1, 0.99).is_err());
    }

    #[test]
    fn persistence_roundtrip_and_corruption_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.json");
        let calib = scalar_calib(&[0.5, 1.5, -0.25, 3.0, 0.0, 2.25], 2);
        save_calibration(&path, &calib).unwrap();
        let loaded = load_calibration(&path).unwrap();
        assert_eq!(calib, loaded);

        // Tamper with a stored statistic: load must fail.
        let raw = std::fs::read_to_string(&path).unwrap();
        let tampered = raw.replacen("\"knn_stats\":[", "\"knn_stats\":[9999.0,", 1);
        let bad_path = dir.path().join("bad.json");
        std::fs::write(&bad_path, tampered).unwrap();
        assert!(load_calibration(&bad_path).is_err());
    }
}
