//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Asymmetry tolerated before symmetrizing, relative to `1 + ‖M‖_F`.
pub const SYM_TOL: f64 = 1e-10;
/// Eigenvalues down to `-PSD_TOL * ‖M‖_F` are treated as rounding noise.
pub const PSD_TOL: f64 = 1e-10;
/// Reciprocal condition number below which a matrix is treated as singular.
pub const RCOND_MIN: f64 = 1e-13;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::SizeMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Symmetrizes `m` and verifies it is PSD up to tolerance, returning the
/// symmetrized copy with negative eigenvalues clipped to zero when needed.
pub fn psd_repair(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::DomainError("matrix has non-finite entries".into()));
    }
    let norm = m.norm();
    let asym = max_asymmetry(m);
    if asym > SYM_TOL * (1.0 + norm) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let s = symmetrize(m);
    if s.nrows() == 0 {
        return Ok(s);
    }
    let eig = s.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * norm {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            norm,
        });
    }
    if min >= 0.0 {
        return Ok(s);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&clipped) * q.transpose())))
}

/// Lower-triangular `L` with `L Lᵀ = M` for symmetric PSD `M`.
///
/// Definite inputs go through the ordinary factorization. Semi-definite
/// inputs are clipped and factored column by column, zeroing any column whose
/// pivot has collapsed to rounding level, which keeps `L` lower-triangular.
pub fn cholesky_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = psd_repair(m)?;
    if let Some(ch) = s.clone().cholesky() {
        let l = ch.l();
        if l.iter().all(|v| v.is_finite()) {
            return Ok(l);
        }
    }
    Ok(semidefinite_cholesky(&s))
}

fn semidefinite_cholesky(s: &DMatrix<f64>) -> DMatrix<f64> {
    let k = s.nrows();
    let scale = (0..k).map(|i| s[(i, i)].abs()).fold(0.0, f64::max);
    let tiny = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut d = s[(j, j)];
        for c in 0..j {
            d -= l[(j, c)] * l[(j, c)];
        }
        if d <= tiny {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..k {
            let mut v = s[(i, j)];
            for c in 0..j {
                v -= l[(i, c)] * l[(j, c)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    l
}

/// Reciprocal 2-norm condition number.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max == 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

/// Inverse of a square matrix, refusing singular or ill-conditioned input.
pub fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m)?;
    let rc = rcond(m);
    if !(rc >= RCOND_MIN) {
        return Err(Error::SingularHessian { rcond: rc });
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularHessian { rcond: rc })
}

/// `Zᵀ diag(w) Z` through a single matrix product.
pub fn weighted_gram(z: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut zw = z.clone();
    for (i, &wi) in w.iter().enumerate() {
        zw.row_mut(i).scale_mut(wi);
    }
    zw.transpose() * z
}

/// `Zᵀ diag(a) diag(b) Z`, the cross-moment used by stacked sandwiches.
pub fn cross_gram(z: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let w: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
    weighted_gram(z, &w)
}

/// Fixed-order mean of equally sized vectors.
pub fn mean_vector(xs: &[DVector<f64>]) -> DVector<f64> {
    let k = xs.first().map_or(0, |v| v.len());
    let mut acc = DVector::zeros(k);
    for x in xs {
        acc += x;
    }
    acc / xs.len() as f64
}

/// Sample covariance with the `1/(m-1)` divisor, accumulated in index order.
pub fn sample_covariance(xs: &[DVector<f64>], center: &DVector<f64>) -> DMatrix<f64> {
    let k = center.len();
    let mut acc = DMatrix::zeros(k, k);
    for x in xs {
        let d = x - center;
        acc.ger(1.0, &d, &d, 1.0);
    }
    acc / (xs.len() as f64 - 1.0)
}
