//! First-stage estimators that return a point estimate together with an
//! estimated normal sampling law that can be redrawn from.

mod garch;
mod hac;
mod spline;

pub use garch::{ar_garch_fit, standardized_t_cdf, GarchFit, GarchParams, GarchSeries};
pub use hac::{hac_covariance, hac_covariance_with_bandwidth, qs_kernel};
pub use spline::{spline_gam_fit, spline_gam_fit_with, SplineBasis, SplineCovariance};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::Stream;

/// How a data row maps to the regressors the coefficients multiply.
#[derive(Clone, Debug)]
pub enum FeatureMap {
    Linear,
    Spline(SplineBasis),
}

#[derive(Clone, Debug)]
pub struct FirstStageFit {
    pub gamma_hat: DVector<f64>,
    pub cov_gamma: DMatrix<f64>,
    /// Residuals of every equation, stacked equation by equation.
    pub residuals: DVector<f64>,
    features: FeatureMap,
    equations: usize,
    cov_sqrt: DMatrix<f64>,
}

impl FirstStageFit {
    pub fn new(
        gamma_hat: DVector<f64>,
        cov_gamma: DMatrix<f64>,
        residuals: DVector<f64>,
        features: FeatureMap,
        equations: usize,
    ) -> Result<Self> {
        if cov_gamma.shape() != (gamma_hat.len(), gamma_hat.len()) {
            return Err(Error::SizeMismatch(format!(
                "gamma has {} entries but covariance is {:?}",
                gamma_hat.len(),
                cov_gamma.shape()
            )));
        }
        if equations == 0 || gamma_hat.len() % equations != 0 {
            return Err(Error::SizeMismatch("coefficients do not split into equations".into()));
        }
        let cov_sqrt = linalg::cholesky_sqrt(&cov_gamma)?;
        Ok(FirstStageFit {
            gamma_hat,
            cov_gamma: linalg::symmetrize(&cov_gamma),
            residuals,
            features,
            equations,
            cov_sqrt,
        })
    }

    pub fn equations(&self) -> usize {
        self.equations
    }

    /// Coefficients per equation.
    pub fn width(&self) -> usize {
        self.gamma_hat.len() / self.equations
    }

    pub fn cov_sqrt(&self) -> &DMatrix<f64> {
        &self.cov_sqrt
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    /// Regressor row for raw data `z`.
    pub fn feature_row(&self, z: &[f64]) -> DVector<f64> {
        match &self.features {
            FeatureMap::Linear => DVector::from_column_slice(z),
            FeatureMap::Spline(b) => b.eval_clamped(z[0]),
        }
    }

    /// Fitted value of every equation at `z` under coefficients `gamma`.
    pub fn predict_with(&self, gamma: &DVector<f64>, z: &[f64]) -> DVector<f64> {
        let row = self.feature_row(z);
        let w = self.width();
        DVector::from_fn(self.equations, |e, _| gamma.rows(e * w, w).dot(&row))
    }

    pub fn predict(&self, z: &[f64]) -> DVector<f64> {
        self.predict_with(&self.gamma_hat, z)
    }

    /// The same point estimate with its sampling covariance set to zero.
    pub fn without_noise(&self) -> Self {
        let k = self.gamma_hat.len();
        FirstStageFit {
            cov_gamma: DMatrix::zeros(k, k),
            cov_sqrt: DMatrix::zeros(k, k),
            ..self.clone()
        }
    }
}

/// One draw from `N(gamma_hat, cov_gamma)` on sub-stream `(stream, s)`.
pub fn draw_fs(fit: &FirstStageFit, stream: Stream, s: usize) -> DVector<f64> {
    let zeta = standard_normals(stream.child(s as u64), fit.gamma_hat.len());
    &fit.gamma_hat + fit.cov_sqrt() * zeta
}

pub(crate) fn standard_normals(stream: Stream, k: usize) -> DVector<f64> {
    let mut rng = stream.rng();
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

/// Count of eigenvalues of a Gram matrix at rounding level.
fn null_dimension(gram: &DMatrix<f64>) -> usize {
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    eig.iter().filter(|&&v| v <= 1e-12 * max).count().max(1)
}

/// A regressor matrix with its Gram factorization, reusable across outcomes.
#[derive(Clone, Debug)]
pub struct OlsDesign {
    z: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
}

impl OlsDesign {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        let (n, p) = z.shape();
        if n <= p {
            return Err(Error::InvalidInput(format!("need more rows ({n}) than columns ({p})")));
        }
        let gram = z.tr_mul(&z);
        let chol: Option<Cholesky<f64, Dyn>> = gram.clone().cholesky();
        let Some(chol) = chol else {
            return Err(Error::RankDeficient {
                null_dim: null_dimension(&gram),
            });
        };
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..p {
            lo = lo.min(l[(i, i)].abs());
            hi = hi.max(l[(i, i)].abs());
        }
        if !(lo / hi).is_finite() || (lo / hi).powi(2) < 1e-13 {
            return Err(Error::RankDeficient {
                null_dim: null_dimension(&gram),
            });
        }
        let gram_inv = linalg::symmetrize(&chol.inverse());
        Ok(OlsDesign { z, gram_inv })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// Least-squares coefficients of every outcome with the stacked HC0
    /// sandwich `G^{-1} (sum_i nu_a nu_b z_i z_i') G^{-1}` per block pair.
    pub fn fit(&self, outcomes: &[&DVector<f64>]) -> Result<FirstStageFit> {
        let (n, p) = self.z.shape();
        let m = outcomes.len();
        let mut gammas = Vec::with_capacity(m);
        let mut resids = Vec::with_capacity(m);
        for y in outcomes {
            if y.len() != n {
                return Err(Error::SizeMismatch(format!("outcome has {} rows, design {n}", y.len())));
            }
            let g = &self.gram_inv * self.z.tr_mul(y);
            let r = *y - &self.z * &g;
            gammas.push(g);
            resids.push(r);
        }
        let mut cov = DMatrix::zeros(m * p, m * p);
        for a in 0..m {
            for b in a..m {
                let meat = linalg::cross_gram(&self.z, &resids[a], &resids[b]);
                let mut block = &self.gram_inv * meat * &self.gram_inv;
                if a == b {
                    // exact in theory; removes rounding from ill-conditioned designs
                    block = linalg::symmetrize(&block);
                }
                cov.view_mut((a * p, b * p), (p, p)).copy_from(&block);
                if a != b {
                    cov.view_mut((b * p, a * p), (p, p)).copy_from(&block.transpose());
                }
            }
        }
        let gamma = DVector::from_iterator(m * p, gammas.iter().flat_map(|g| g.iter().copied()));
        let residuals = DVector::from_iterator(m * n, resids.iter().flat_map(|r| r.iter().copied()));
        FirstStageFit::new(gamma, cov, residuals, FeatureMap::Linear, m)
    }
}

/// OLS of `y` on `Z` with the HC0 sandwich covariance.
pub fn ols_fit(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<FirstStageFit> {
    OlsDesign::new(z.clone())?.fit(&[y])
}

/// OLS of `y` and `d` on the same `Z`, with the stacked sandwich whose
/// off-diagonal blocks carry the residual correlation.
pub fn joint_ols_fit(z: &DMatrix<f64>, y: &DVector<f64>, d: &DVector<f64>) -> Result<FirstStageFit> {
    OlsDesign::new(z.clone())?.fit(&[y, d])
}
