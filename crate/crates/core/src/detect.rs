//! Defender-side scan: a surgically projected last layer loses rank.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, SingularSpectrum};
use crate::model::WeightMatrix;

/// Singular values at or below `RANK_TOL_RATIO * sigma_1` count as zero.
pub const RANK_TOL_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Clean,
    SuspectedSurgery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub numeric_rank: usize,
    pub rank_deficient: bool,
    pub spectrum: SingularSpectrum,
    pub ks_distance: Option<f64>,
    pub verdict: Verdict,
}

pub fn rank_of_spectrum(spectrum: &SingularSpectrum, tol_ratio: f64) -> usize {
    if spectrum.largest() == 0.0 {
        return 0;
    }
    spectrum.nonzero(tol_ratio).len()
}

pub fn numeric_rank(w: &WeightMatrix, tol_ratio: f64) -> usize {
    rank_of_spectrum(&linalg::singular_values(w.matrix()), tol_ratio)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a(x) - F_b(x)|`.
/// Returns 0 when either sample is empty.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut stat = 0.0_f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        // step past every copy of x in both samples before comparing CDFs
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        stat = stat.max((i as f64 / na - j as f64 / nb).abs());
    }
    stat
}

pub fn scan(w: &WeightMatrix, reference: Option<&SingularSpectrum>) -> DetectionReport {
    let spectrum = linalg::singular_values(w.matrix());
    let numeric_rank = rank_of_spectrum(&spectrum, RANK_TOL_RATIO);
    let rank_deficient = numeric_rank < w.d();
    let ks_distance = reference
        .map(|r| ks_statistic(&spectrum.nonzero(RANK_TOL_RATIO), &r.nonzero(RANK_TOL_RATIO)));
    DetectionReport {
        numeric_rank,
        rank_deficient,
        spectrum,
        ks_distance,
        verdict: if rank_deficient { Verdict::SuspectedSurgery } else { Verdict::Clean },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix, Vector};
    use proptest::prelude::*;

    /// Evaluates both empirical CDFs at every sample point.
    fn ks_brute_force(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (cdf(a, x) - cdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rank_examples() {
        let w = WeightMatrix::new(Matrix::from_row_slice(
            3,
            4,
            &[3.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        ))
        .unwrap();
        assert_eq!(numeric_rank(&w, RANK_TOL_RATIO), 3);
        let zero = WeightMatrix::new(Matrix::zeros(2, 3)).unwrap();
        assert_eq!(numeric_rank(&zero, RANK_TOL_RATIO), 0);
        assert_eq!(scan(&zero, None).verdict, Verdict::SuspectedSurgery);
    }

    #[test]
    fn scan_flags_projected_matrix() {
        let w = WeightMatrix::new(Matrix::from_fn(3, 5, |i, j| (((i * 5 + j) * (i * 5 + j)) as f64).sin())).unwrap();
        let clean = scan(&w, None);
        assert_eq!(clean.verdict, Verdict::Clean);
        assert!(!clean.rank_deficient);
        let x = linalg::normalize(&Vector::from_column_slice(&[1.0, 2.0, -1.0])).unwrap();
        let w1 = w.compose(&linalg::projection_matrix(&x).unwrap()).unwrap();
        let report = scan(&w1, Some(&clean.spectrum));
        assert_eq!(report.numeric_rank, 2);
        assert_eq!(report.verdict, Verdict::SuspectedSurgery);
        assert!(report.ks_distance.is_some());
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_eq!(ks_statistic(&[1.0, 3.0], &[2.0, 4.0]), 0.5);
        assert_eq!(ks_statistic(&[], &[1.0]), 0.0);
    }

    proptest! {
        #[test]
        fn ks_matches_brute_force(
            a in prop::collection::vec(0u8..20, 1..30),
            b in prop::collection::vec(0u8..20, 1..30),
        ) {
            // small integer support forces plenty of ties
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            prop_assert!((ks_statistic(&a, &b) - ks_brute_force(&a, &b)).abs() < 1e-15);
        }
    }
}
