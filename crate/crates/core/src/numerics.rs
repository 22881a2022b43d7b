//! Small dense symmetric positive definite algebra.
//!
//! Orders here are `d = k + 1` with `k` the latent dimension, so everything is
//! plain `O(d^3)` Cholesky work on `nalgebra` matrices. The interesting part is
//! [`InverseState`], which keeps `M^{-1}` and `Trace(M^{-1})` current under
//! rank-one changes `M - w v v^T` in `O(d^2)` (Sherman–Morrison). The greedy
//! selectors lean on it to score every candidate removal or addition without
//! refactorizing.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Denominator `1 - w v^T M^{-1} v` below which a rank-one removal is refused.
pub const REMOVAL_TOLERANCE: f64 = 1e-10;

/// Number of incremental updates after which the greedy loops rebuild the
/// inverse from scratch.
pub const REFACTOR_INTERVAL: usize = 128;

const SYMMETRY_TOLERANCE: f64 = 1e-12;
const PIVOT_RELATIVE_FLOOR: f64 = 1e-13;

/// Ridge used by selection and the design diagnostics: `1e-6 * d`.
pub fn default_ridge(order: usize) -> f64 {
    1e-6 * order as f64
}

/// A symmetric matrix that is expected to be positive definite.
///
/// Symmetry is checked on construction; definiteness is only discovered by
/// [`cholesky`], which reports the failing pivot.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid(format!(
                "matrix is {}x{}, expected square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let n = matrix.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SpdMatrix(matrix))
    }

    pub fn identity(order: usize) -> Self {
        SpdMatrix(DMatrix::identity(order, order))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// `sum_v w_v P'_v P'_v^T + ridge * I` over the columns of `vectors`.
///
/// Unit weights when `weights` is `None`; the heteroscedastic path passes
/// `w_v = 1 / sigma_v^2`.
pub fn gram(vectors: &DMatrix<f64>, weights: Option<&[f64]>, ridge: f64) -> Result<SpdMatrix> {
    if !(ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge must be >= 0, got {ridge}")));
    }
    if let Some(w) = weights {
        if w.len() != vectors.ncols() {
            return Err(Error::invalid(format!(
                "{} weights for {} columns",
                w.len(),
                vectors.ncols()
            )));
        }
        if let Some(bad) = w.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::invalid(format!("negative weight {bad}")));
        }
    }
    let d = vectors.nrows();
    let mut m = DMatrix::<f64>::zeros(d, d);
    for (c, col) in vectors.column_iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[c]);
        if w == 0.0 {
            continue;
        }
        for j in 0..d {
            let wj = w * col[j];
            for i in j..d {
                m[(i, j)] += wj * col[i];
            }
        }
    }
    for j in 0..d {
        m[(j, j)] += ridge;
        for i in (j + 1)..d {
            m[(j, i)] = m[(i, j)];
        }
    }
    Ok(SpdMatrix(m))
}

/// Lower Cholesky factor `L` with `M = L L^T`.
///
/// A pivot that is non-positive, non-finite, or negligible relative to the
/// corresponding diagonal entry is reported as [`Error::NotPositiveDefinite`].
pub fn cholesky(m: &SpdMatrix) -> Result<DMatrix<f64>> {
    let a = m.as_matrix();
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for p in 0..j {
            diag -= l[(j, p)] * l[(j, p)];
        }
        let floor = PIVOT_RELATIVE_FLOOR * a[(j, j)].abs();
        if !diag.is_finite() || diag <= floor || diag <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with positive diagonal.
fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for p in j..i {
                s -= l[(i, p)] * inv[(p, j)];
            }
            inv[(i, j)] = s / l[(i, i)];
        }
    }
    inv
}

/// Solves `M x = b` given the Cholesky factor of `M`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for p in 0..i {
            s -= l[(i, p)] * y[p];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in (i + 1)..n {
            s -= l[(p, i)] * y[p];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// An SPD matrix together with its inverse and the trace of that inverse.
#[derive(Debug, Clone)]
pub struct InverseState {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    trace_inv: f64,
}

/// Inverts `m` through its Cholesky factor.
pub fn invert(m: &SpdMatrix) -> Result<InverseState> {
    let l = cholesky(m)?;
    let linv = lower_inverse(&l);
    let mut inverse = linv.transpose() * &linv;
    symmetrize(&mut inverse);
    let trace_inv = inverse.trace();
    Ok(InverseState {
        matrix: m.as_matrix().clone(),
        inverse,
        trace_inv,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// `(v^T M^{-1} v, ||M^{-1} v||^2)` for a candidate rank-one change.
#[derive(Debug, Clone, Copy)]
pub struct RankOneTerms {
    pub quadratic: f64,
    pub squared_norm: f64,
}

impl InverseState {
    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn trace_inv(&self) -> f64 {
        self.trace_inv
    }

    /// `Trace(S M^{-1})` for a symmetric `S`.
    pub fn weighted_trace(&self, s: &DMatrix<f64>) -> f64 {
        s.component_mul(&self.inverse).sum()
    }

    pub fn rank_one_terms(&self, v: &[f64]) -> RankOneTerms {
        let d = self.order();
        debug_assert_eq!(v.len(), d);
        let inv = self.inverse.as_slice();
        let mut quadratic = 0.0;
        let mut squared_norm = 0.0;
        // column-major, symmetric: column i of the inverse is row i
        for i in 0..d {
            let col = &inv[i * d..(i + 1) * d];
            let u: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
            quadratic += u * v[i];
            squared_norm += u * u;
        }
        RankOneTerms {
            quadratic,
            squared_norm,
        }
    }

    /// Change in `Trace(M^{-1})` caused by `M -> M - w v v^T`:
    /// `w ||M^{-1} v||^2 / (1 - w v^T M^{-1} v)`.
    ///
    /// Non-negative for `w >= 0`; negative weights model additions. Fails with
    /// [`Error::RemovalForbidden`] when the denominator drops below
    /// [`REMOVAL_TOLERANCE`].
    pub fn downdate_trace_delta(&self, v: &[f64], weight: f64) -> Result<f64> {
        if weight == 0.0 {
            return Ok(0.0);
        }
        let t = self.rank_one_terms(v);
        delta_from_terms(t, weight)
    }

    /// Sherman–Morrison update of the stored inverse for `M -> M - w v v^T`.
    pub fn apply_downdate(&mut self, v: &[f64], weight: f64) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let d = self.order();
        let vv = DVector::from_column_slice(v);
        let u = &self.inverse * &vv;
        let denom = 1.0 - weight * u.dot(&vv);
        if !(denom > REMOVAL_TOLERANCE) {
            return Err(Error::RemovalForbidden);
        }
        let scale = weight / denom;
        for j in 0..d {
            let uj = scale * u[j];
            for i in 0..d {
                self.inverse[(i, j)] += uj * u[i];
                self.matrix[(i, j)] -= weight * v[i] * v[j];
            }
        }
        self.trace_inv += scale * u.norm_squared();
        Ok(())
    }

    /// Returns the downdated state, leaving `self` untouched.
    pub fn downdated(&self, v: &[f64], weight: f64) -> Result<InverseState> {
        let mut next = self.clone();
        next.apply_downdate(v, weight)?;
        Ok(next)
    }

    /// Recomputes the inverse from the stored matrix.
    pub fn refactor(&mut self) -> Result<()> {
        let m = SpdMatrix(self.matrix.clone());
        *self = invert(&m)?;
        Ok(())
    }
}

pub(crate) fn delta_from_terms(t: RankOneTerms, weight: f64) -> Result<f64> {
    let denom = 1.0 - weight * t.quadratic;
    if !(denom > REMOVAL_TOLERANCE) {
        return Err(Error::RemovalForbidden);
    }
    Ok(weight * t.squared_norm / denom)
}

/// Linear map putting a population in isotropic position.
#[derive(Debug, Clone)]
pub struct Whitening {
    /// `F`, with `whitened = F^T * input` and `whitened whitened^T = n I`.
    pub transform: DMatrix<f64>,
    /// `F^{-1}`; apply it to item-side vectors so inner products are preserved.
    pub inverse_transform: DMatrix<f64>,
    pub whitened: DMatrix<f64>,
}

impl Whitening {
    /// Maps an item-side vector `y` to `F^{-1} y`, so that
    /// `(F^T x)^T (F^{-1} y) = x^T y`.
    pub fn transform_item(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.inverse_transform * y
    }
}

/// Whitens the columns of `vectors`.
///
/// With `P P^T = L L^T` the transform is `F = sqrt(n) L^{-T}`, giving
/// `F^T P P^T F = n I`.
pub fn whiten(vectors: &DMatrix<f64>) -> Result<Whitening> {
    let n = vectors.ncols();
    if n == 0 {
        return Err(Error::invalid("cannot whiten an empty population"));
    }
    let g = gram(vectors, None, 0.0)?;
    let l = cholesky(&g).map_err(|_| Error::DegeneratePool("P P^T is singular".into()))?;
    let root_n = (n as f64).sqrt();
    let linv = lower_inverse(&l);
    let transform = linv.transpose() * root_n;
    let inverse_transform = l.transpose() / root_n;
    let whitened = transform.transpose() * vectors;
    Ok(Whitening {
        transform,
        inverse_transform,
        whitened,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn gram_of_orthonormal_columns_is_identity() {
        let v = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let g = gram(&v, None, 0.0).unwrap();
        assert_eq!(g.as_matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn gram_of_empty_set_is_ridge() {
        let v = DMatrix::<f64>::zeros(3, 0);
        let g = gram(&v, None, 0.1).unwrap();
        assert!(max_abs_diff(g.as_matrix(), &(DMatrix::identity(3, 3) * 0.1)) < 1e-15);
    }

    #[test]
    fn gram_rejects_negative_inputs() {
        let v = DMatrix::from_element(2, 2, 1.0);
        assert!(gram(&v, Some(&[1.0, -1.0]), 0.0).is_err());
        assert!(gram(&v, None, -1e-3).is_err());
        assert!(gram(&v, Some(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn invert_identity_and_diagonal() {
        let s = invert(&SpdMatrix::identity(4)).unwrap();
        assert_eq!(s.inverse(), &DMatrix::identity(4, 4));
        assert_eq!(s.trace_inv(), 4.0);

        let d = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]))).unwrap();
        let s = invert(&d).unwrap();
        assert!((s.inverse()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s.inverse()[(1, 1)] - 0.25).abs() < 1e-15);
        assert!((s.trace_inv() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let m = SpdMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0],
        ))
        .unwrap();
        match invert(&m) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 2),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(SpdMatrix::new(m).is_err());
    }

    #[test]
    fn downdate_delta_diagonal_case() {
        let s = invert(&SpdMatrix::new(DMatrix::identity(2, 2) * 2.0).unwrap()).unwrap();
        let delta = s.downdate_trace_delta(&[1.0, 0.0], 1.0).unwrap();
        assert!((delta - 0.5).abs() < 1e-15);
        assert_eq!(s.downdate_trace_delta(&[1.0, 0.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn removing_the_only_direction_is_forbidden() {
        let v = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(invert(&gram(&v, None, 0.0).unwrap()).is_err());
        let g = gram(&DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), None, 0.0).unwrap();
        let s = invert(&g).unwrap();
        assert!(matches!(
            s.downdate_trace_delta(&[1.0, 0.0], 1.0),
            Err(Error::RemovalForbidden)
        ));
    }

    #[test]
    fn downdating_single_column_returns_ridge_state() {
        let lambda = 0.3;
        let v = [0.7, -1.2, 2.0];
        let cols = DMatrix::from_column_slice(3, 1, &v);
        let mut s = invert(&gram(&cols, None, lambda).unwrap()).unwrap();
        s.apply_downdate(&v, 1.0).unwrap();
        let expected = DMatrix::identity(3, 3) / lambda;
        assert!(max_abs_diff(s.inverse(), &expected) < 1e-10);
        assert!((s.trace_inv() - 3.0 / lambda).abs() < 1e-9);
    }

    #[test]
    fn whitening_two_axis_vectors() {
        let p = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let w = whiten(&p).unwrap();
        let g = &w.whitened * w.whitened.transpose();
        assert!(max_abs_diff(&g, &(DMatrix::identity(2, 2) * 2.0)) < 1e-12);
    }

    #[test]
    fn whitening_rejects_singular_population() {
        let p = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(whiten(&p).is_err());
    }
}
