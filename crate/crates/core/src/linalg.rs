//! Dense linear-algebra kernel: normalization, orthonormal basis completion,
//! projection and stretch operators, SVD with a full right basis, and
//! Gaussian KDE sampling over scalar samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Norms at or below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;
/// Two unit vectors count as (anti)parallel when `|<a,b>| >= 1 - PARALLEL_EPS`.
pub const PARALLEL_EPS: f64 = 1e-9;
/// Maximum `|<kill, stretch>|` accepted by [`projection_with_stretch`].
pub const ORTHOGONAL_EPS: f64 = 1e-9;

pub fn normalize(v: &Vector) -> Result<Vector> {
    let norm = v.norm();
    if !(norm > NORM_EPS) {
        return Err(Error::ZeroVector { norm });
    }
    Ok(v / norm)
}

pub fn check_finite(m: &Matrix) -> Result<()> {
    for (col, column) in m.column_iter().enumerate() {
        if let Some(row) = column.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

pub fn cos_angle(a: &Vector, b: &Vector) -> Result<f64> {
    let na = a.norm();
    let nb = b.norm();
    if !(na > NORM_EPS) {
        return Err(Error::ZeroVector { norm: na });
    }
    if !(nb > NORM_EPS) {
        return Err(Error::ZeroVector { norm: nb });
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn angle_deg(a: &Vector, b: &Vector) -> Result<f64> {
    Ok(cos_angle(a, b)?.acos().to_degrees())
}

/// Removes the components of `v` along each (orthonormal) basis vector,
/// twice. The second pass restores orthogonality lost to cancellation.
fn orthogonalize_against(v: &mut Vector, basis: &[Vector]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(v);
            v.axpy(-c, q, 1.0);
        }
    }
}

/// Extends orthonormal `rows` to a full orthonormal basis of `R^dim`.
///
/// Candidates are standard basis vectors, picked greedily by the largest
/// residual norm against the current basis (ties go to the lowest index).
/// Returns a `dim x dim` matrix whose rows are the basis, the given rows first.
pub fn complete_basis(mut rows: Vec<Vector>, dim: usize) -> Matrix {
    debug_assert!(rows.len() <= dim);
    // squared residual of e_j against span(rows) is 1 - sum_i q_i[j]^2
    let mut residual = vec![1.0_f64; dim];
    for q in &rows {
        for (r, x) in residual.iter_mut().zip(q.iter()) {
            *r -= x * x;
        }
    }
    let mut used = vec![false; dim];
    while rows.len() < dim {
        let mut best = None;
        let mut best_res = f64::NEG_INFINITY;
        for j in 0..dim {
            if !used[j] && residual[j] > best_res {
                best_res = residual[j];
                best = Some(j);
            }
        }
        let j = best.expect("a standard basis vector must remain while rows < dim");
        used[j] = true;
        let mut e = Vector::zeros(dim);
        e[j] = 1.0;
        orthogonalize_against(&mut e, &rows);
        let n = e.norm();
        if n < 1e-8 {
            // numerically inside the span already
            continue;
        }
        e /= n;
        for (r, x) in residual.iter_mut().zip(e.iter()) {
            *r -= x * x;
        }
        rows.push(e);
    }
    let mut out = Matrix::zeros(dim, dim);
    for (i, q) in rows.iter().enumerate() {
        out.set_row(i, &q.transpose());
    }
    out
}

/// Unitary `U` whose first row is `first` and, when given, whose second row
/// is the part of `second` orthogonal to `first`, renormalized.
pub fn orthonormal_basis_from(first: &Vector, second: Option<&Vector>) -> Result<Matrix> {
    let dim = first.len();
    let q1 = normalize(first)?;
    let mut rows = vec![q1];
    if let Some(second) = second {
        if second.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: second.len() });
        }
        let s = normalize(second)?;
        let abs_cos = rows[0].dot(&s).abs();
        if abs_cos >= 1.0 - PARALLEL_EPS {
            return Err(Error::ParallelDirections { abs_cos });
        }
        let mut q2 = s;
        orthogonalize_against(&mut q2, &rows);
        rows.push(normalize(&q2)?);
    }
    Ok(complete_basis(rows, dim))
}

/// `P_x = I - x x^T`, the orthogonal projection killing direction `x`.
pub fn projection_matrix(x: &Vector) -> Result<Matrix> {
    let x = normalize(x)?;
    let n = x.len();
    let mut p = Matrix::identity(n, n);
    p.ger(-1.0, &x, &x, 1.0);
    Ok(p)
}

/// The same projection built as `U^T diag(0, 1, ..., 1) U`.
pub fn projection_matrix_via_basis(x: &Vector) -> Result<Matrix> {
    let u = orthonormal_basis_from(x, None)?;
    let mut diag = Vector::from_element(x.len(), 1.0);
    diag[0] = 0.0;
    Ok(u.transpose() * Matrix::from_diagonal(&diag) * u)
}

/// `U^T diag(0, factor, 1, ..., 1) U` with `U = orthonormal_basis_from(kill, stretch)`:
/// kills `kill`, scales `stretch` by `factor`, leaves their orthogonal complement alone.
pub fn projection_with_stretch(kill: &Vector, stretch: &Vector, factor: f64) -> Result<Matrix> {
    if !(1.0..=100.0).contains(&factor) {
        return Err(Error::InvalidStretchFactor(factor));
    }
    if kill.len() != stretch.len() {
        return Err(Error::DimensionMismatch { expected: kill.len(), got: stretch.len() });
    }
    let k = normalize(kill)?;
    let s = normalize(stretch)?;
    let abs_cos = k.dot(&s).abs();
    if abs_cos >= 1.0 - PARALLEL_EPS {
        return Err(Error::ParallelDirections { abs_cos });
    }
    if abs_cos >= ORTHOGONAL_EPS {
        return Err(Error::NotOrthogonal { dot: k.dot(&s) });
    }
    let u = orthonormal_basis_from(&k, Some(&s))?;
    let mut diag = Vector::from_element(k.len(), 1.0);
    diag[0] = 0.0;
    diag[1] = factor;
    Ok(u.transpose() * Matrix::from_diagonal(&diag) * u)
}

/// Singular values in non-increasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SingularSpectrum(Vec<f64>);

impl SingularSpectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidSpectrum(format!("value {bad} is negative or not finite")));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidSpectrum("values are not non-increasing".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }

    /// Values strictly above `tol_ratio * largest`.
    pub fn nonzero(&self, tol_ratio: f64) -> Vec<f64> {
        let cut = tol_ratio * self.largest();
        self.0.iter().copied().filter(|&s| s > cut).collect()
    }
}

impl TryFrom<Vec<f64>> for SingularSpectrum {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SingularSpectrum> for Vec<f64> {
    fn from(s: SingularSpectrum) -> Self {
        s.0
    }
}

#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows x k` left singular vectors as columns, `k = min(rows, cols)`.
    pub u: Matrix,
    pub spectrum: SingularSpectrum,
    /// `cols x cols`; the first `k` columns pair with `spectrum`, the rest
    /// complete an orthonormal basis of the domain (null-space directions).
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.spectrum.len();
        let sigma = Matrix::from_diagonal(&Vector::from_column_slice(self.spectrum.values()));
        &self.u * sigma * self.v.columns(0, k).transpose()
    }
}

pub fn svd(m: &Matrix) -> Svd {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let dec = m.clone().svd(true, true);
    let u_raw = dec.u.expect("u requested");
    let vt_raw = dec.v_t.expect("v_t requested");
    let sv = dec.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut u = Matrix::zeros(rows, k);
    let mut values = Vec::with_capacity(k);
    let mut right = Vec::with_capacity(cols);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_raw.column(src));
        values.push(sv[src].max(0.0));
        let mut r: Vector = vt_raw.row(src).transpose();
        orthogonalize_against(&mut r, &right);
        let n = r.norm();
        right.push(r / n);
    }
    let v = complete_basis(right, cols).transpose();
    Svd {
        u,
        spectrum: SingularSpectrum(values),
        v,
    }
}

/// Singular values only, non-increasing. Much cheaper than [`svd`] when the
/// singular vectors are not needed.
pub fn singular_values(m: &Matrix) -> SingularSpectrum {
    let mut values: Vec<f64> = m.clone().singular_values().iter().map(|s| s.max(0.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    SingularSpectrum(values)
}

/// Silverman's rule of thumb, `1.06 * sd * n^(-1/5)`, with a fallback of
/// `0.1 * |mean|` (or `0.1` at zero mean) when the samples have no spread.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = if samples.len() > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    if sd > 0.0 {
        Ok(1.06 * sd * n.powf(-0.2))
    } else if mean != 0.0 {
        Ok(0.1 * mean.abs())
    } else {
        Ok(0.1)
    }
}

/// Draws `count` values from a Gaussian KDE over `samples`, reflected at zero
/// so every draw is strictly positive.
pub fn kde_draw(samples: &[f64], count: usize, seed: u64) -> Result<Vec<f64>> {
    if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidSpectrum(format!("non-finite KDE sample {bad}")));
    }
    let h = silverman_bandwidth(samples)?;
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let center = samples[rng.random_range(0..samples.len())];
        let z: f64 = rng.sample(StandardNormal);
        let x = (center + h * z).abs();
        if x > 0.0 {
            out.push(x);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).abs().max()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&v(&[3.0, 4.0])).unwrap(), v(&[0.6, 0.8]));
        assert_eq!(normalize(&v(&[1.0, 0.0, 0.0])).unwrap(), v(&[1.0, 0.0, 0.0]));
        assert_eq!(normalize(&v(&[1.0; 4])).unwrap(), v(&[0.5; 4]));
        assert!(matches!(normalize(&v(&[0.0, 1e-13])), Err(Error::ZeroVector { .. })));
    }

    #[test]
    fn basis_from_e1_keeps_first_row_exact() {
        let u = orthonormal_basis_from(&v(&[1.0, 0.0, 0.0]), None).unwrap();
        assert_eq!(u.row(0).transpose(), v(&[1.0, 0.0, 0.0]));
        // rows are a signed permutation of the standard basis
        for i in 0..3 {
            let row = u.row(i);
            assert_eq!(row.iter().filter(|x| x.abs() == 1.0).count(), 1);
        }
        assert!(max_abs_diff(&(&u * u.transpose()), &Matrix::identity(3, 3)) <= 1e-10);
    }

    #[test]
    fn basis_in_plane_second_row_is_the_orthogonal_diagonal() {
        let s = 0.5f64.sqrt();
        let u = orthonormal_basis_from(&v(&[s, s]), None).unwrap();
        let r = u.row(1);
        assert!((r[0].abs() - s).abs() < 1e-12 && (r[1].abs() - s).abs() < 1e-12);
        assert!(r[0] * r[1] < 0.0);
    }

    #[test]
    fn basis_with_second_direction() {
        let u = orthonormal_basis_from(&v(&[1.0, 0.0, 0.0, 0.0]), Some(&v(&[0.0, 1.0, 0.0, 0.0])))
            .unwrap();
        assert_eq!(u.row(0).transpose(), v(&[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(u.row(1).transpose(), v(&[0.0, 1.0, 0.0, 0.0]));
        for i in 2..4 {
            assert!(u[(i, 0)].abs() < 1e-15 && u[(i, 1)].abs() < 1e-15);
        }
        assert!(max_abs_diff(&(&u * u.transpose()), &Matrix::identity(4, 4)) <= 1e-10);
    }

    #[test]
    fn basis_rejects_parallel_second() {
        let e = v(&[0.0, 1.0, 0.0]);
        let err = orthonormal_basis_from(&e, Some(&(-&e))).unwrap_err();
        assert!(matches!(err, Error::ParallelDirections { .. }));
    }

    #[test]
    fn projection_examples() {
        let p = projection_matrix(&v(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(p, Matrix::from_diagonal(&v(&[0.0, 1.0, 1.0])));

        // I - x x^T for x = (3/5, 4/5), by hand
        let expected = Matrix::from_row_slice(2, 2, &[16.0 / 25.0, -12.0 / 25.0, -12.0 / 25.0, 9.0 / 25.0]);
        let x = v(&[0.6, 0.8]);
        assert!(max_abs_diff(&projection_matrix(&x).unwrap(), &expected) <= 1e-15);
        assert!(max_abs_diff(&projection_matrix_via_basis(&x).unwrap(), &expected) <= 1e-12);
        assert!((projection_matrix(&x).unwrap() * &x).norm() <= 1e-15);
    }

    #[test]
    fn stretch_examples() {
        let e1 = v(&[1.0, 0.0, 0.0]);
        let e2 = v(&[0.0, 1.0, 0.0]);
        let e3 = v(&[0.0, 0.0, 1.0]);
        let r2 = 2f64.sqrt();
        let m = projection_with_stretch(&e1, &e2, r2).unwrap();
        assert!(max_abs_diff(&m, &Matrix::from_diagonal(&v(&[0.0, r2, 1.0]))) <= 1e-12);
        assert!((&m * &e3 - &e3).norm() <= 1e-12);

        let s = 0.5f64.sqrt();
        let m = projection_with_stretch(&v(&[s, -s]), &v(&[s, s]), 2.0).unwrap();
        assert!((m * v(&[1.0, 0.0]) - v(&[1.0, 1.0])).norm() <= 1e-12);
    }

    #[test]
    fn stretch_errors() {
        let e1 = v(&[1.0, 0.0, 0.0]);
        let tilted = v(&[1e-6, 1.0, 0.0]);
        assert!(matches!(projection_with_stretch(&e1, &tilted, 2.0), Err(Error::NotOrthogonal { .. })));
        assert!(matches!(projection_with_stretch(&e1, &e1, 2.0), Err(Error::ParallelDirections { .. })));
        let e2 = v(&[0.0, 1.0, 0.0]);
        assert!(matches!(projection_with_stretch(&e1, &e2, 0.5), Err(Error::InvalidStretchFactor(_))));
        assert!(matches!(projection_with_stretch(&e1, &e2, 101.0), Err(Error::InvalidStretchFactor(_))));
    }

    #[test]
    fn svd_examples() {
        let d = svd(&Matrix::from_diagonal(&v(&[2.0, 3.0])));
        assert!((d.spectrum.values()[0] - 3.0).abs() < 1e-14);
        assert!((d.spectrum.values()[1] - 2.0).abs() < 1e-14);

        let a = v(&[2.0, 0.0, 0.0]);
        let b = normalize(&v(&[1.0, 2.0, 2.0, 0.0, 1.0])).unwrap();
        let d = svd(&(&a * b.transpose()));
        let vals = d.spectrum.values();
        assert!((vals[0] - 2.0).abs() < 1e-13);
        assert!(vals[1..].iter().all(|s| s.abs() < 1e-13));
        assert_eq!(d.v.shape(), (5, 5));
    }

    #[test]
    fn svd_wide_random_reconstructs_with_full_right_basis() {
        let mut rng = seed::rng(11);
        let m = Matrix::from_fn(4, 7, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = svd(&m);
        let err = (d.reconstruct() - &m).norm() / m.norm();
        assert!(err <= 1e-9, "relative reconstruction error {err}");
        assert!(max_abs_diff(&(d.v.transpose() * &d.v), &Matrix::identity(7, 7)) <= 1e-12);
        assert!(max_abs_diff(&(d.u.transpose() * &d.u), &Matrix::identity(4, 4)) <= 1e-12);
        // trailing columns of v are null directions
        assert!((&m * d.v.columns(4, 3)).abs().max() <= 1e-12);
    }

    #[test]
    fn singular_values_agree_with_full_svd() {
        let mut rng = seed::rng(12);
        let m = Matrix::from_fn(6, 9, |_, _| rng.sample::<f64, _>(StandardNormal));
        let full = svd(&m).spectrum;
        let fast = singular_values(&m);
        assert_eq!(full.len(), fast.len());
        for (a, b) in full.values().iter().zip(fast.values()) {
            assert!((a - b).abs() <= 1e-12 * full.largest());
        }
    }

    #[test]
    fn kde_degenerate_single_sample_stays_near_it() {
        assert_eq!(silverman_bandwidth(&[5.0]).unwrap(), 0.5);
        let draws = kde_draw(&[5.0], 200, 3).unwrap();
        assert!(draws.iter().all(|&x| x > 0.0 && (x - 5.0).abs() < 5.0 * 0.5));
    }

    #[test]
    fn kde_is_positive_and_seeded() {
        let samples = [0.01, 0.02, 0.5, 1.0];
        for seed in 0..20 {
            assert!(kde_draw(&samples, 100, seed).unwrap().iter().all(|&x| x > 0.0));
        }
        assert_eq!(kde_draw(&samples, 50, 9).unwrap(), kde_draw(&samples, 50, 9).unwrap());
        assert_ne!(kde_draw(&samples, 50, 9).unwrap(), kde_draw(&samples, 50, 10).unwrap());
        assert_eq!(kde_draw(&[], 1, 0), Err(Error::EmptySamples));
    }

    #[test]
    fn silverman_bandwidth_matches_hand_value() {
        // samples 1,2,3,4: mean 2.5, sd = sqrt(5/3)
        let h = silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expected = 1.06 * (5.0f64 / 3.0).sqrt() * 4f64.powf(-0.2);
        assert!((h - expected).abs() < 1e-15);
        assert_eq!(silverman_bandwidth(&[0.0, 0.0]).unwrap(), 0.1);
    }

    #[test]
    fn spectrum_validation() {
        assert!(SingularSpectrum::new(vec![3.0, 2.0, 2.0, 0.0]).is_ok());
        assert!(SingularSpectrum::new(vec![1.0, 2.0]).is_err());
        assert!(SingularSpectrum::new(vec![1.0, -0.5]).is_err());
        let s = SingularSpectrum::new(vec![2.0, 1.0, 1e-12]).unwrap();
        assert_eq!(s.nonzero(1e-10), vec![2.0, 1.0]);
    }
}
