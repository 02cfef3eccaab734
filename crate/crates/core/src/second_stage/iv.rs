use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::first_stage::{FirstStageFit, OlsDesign};
use crate::inference::{ConditionalMeanDraw, EDraw, InfluenceParts, TwoStageModel};
use crate::linalg;
use crate::rng::Stream;

/// Linear model `y = X theta + e` whose regressors are the instrumented
/// columns `endog` followed by columns of `Z` listed in `exog_cols`.
#[derive(Clone, Debug)]
pub struct LinearIvModel {
    design: Arc<OlsDesign>,
    y: DVector<f64>,
    endog: DMatrix<f64>,
    exog_cols: Vec<usize>,
}

impl LinearIvModel {
    pub fn new(z: DMatrix<f64>, y: DVector<f64>, endog: DMatrix<f64>, exog_cols: Vec<usize>) -> Result<Self> {
        Self::with_design(Arc::new(OlsDesign::new(z)?), y, endog, exog_cols)
    }

    /// Reuses an already factored instrument matrix.
    pub fn with_design(design: Arc<OlsDesign>, y: DVector<f64>, endog: DMatrix<f64>, exog_cols: Vec<usize>) -> Result<Self> {
        let (n, p) = design.z().shape();
        if y.len() != n || endog.nrows() != n {
            return Err(Error::SizeMismatch(format!(
                "instruments have {n} rows, outcome {}, regressors {}",
                y.len(),
                endog.nrows()
            )));
        }
        if let Some(&c) = exog_cols.iter().find(|&&c| c >= p) {
            return Err(Error::InvalidInput(format!("exogenous column {c} outside instrument matrix")));
        }
        if endog.ncols() + exog_cols.len() == 0 {
            return Err(Error::InvalidInput("model has no regressors".into()));
        }
        if p < endog.ncols() + exog_cols.len() {
            return Err(Error::InvalidInput(format!(
                "{p} instruments for {} regressors",
                endog.ncols() + exog_cols.len()
            )));
        }
        Ok(LinearIvModel {
            design,
            y,
            endog,
            exog_cols,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn z(&self) -> &DMatrix<f64> {
        self.design.z()
    }

    /// Projection of an arbitrary vector onto the instrument space.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let z = self.design.z();
        z * (self.design.gram_inv() * z.tr_mul(v))
    }
}

/// Estimated linear IV model: the regression of the projected outcome on
/// the projected regressors.
#[derive(Clone, Debug)]
pub struct IvFit {
    pub theta_hat: DVector<f64>,
    pub x_hat: DMatrix<f64>,
    pub y_hat: DVector<f64>,
    pub first_stage: Arc<FirstStageFit>,
    pub weak_instrument: bool,
    gram: Arc<DMatrix<f64>>,
    exog_cols: Vec<usize>,
    n_endog: usize,
    n: usize,
}

pub fn iv_estimate(model: &LinearIvModel) -> Result<(DVector<f64>, InfluenceParts, IvFit)> {
    let z = model.design.z();
    let (n, p) = z.shape();
    let ke = model.endog.ncols();
    let mut outcomes: Vec<DVector<f64>> = vec![model.y.clone()];
    outcomes.extend((0..ke).map(|k| model.endog.column(k).into_owned()));
    let refs: Vec<&DVector<f64>> = outcomes.iter().collect();
    let fs = model.design.fit(&refs)?;
    let k = ke + model.exog_cols.len();
    let mut x_hat = DMatrix::zeros(n, k);
    for e in 0..ke {
        let g = fs.gamma_hat.rows((e + 1) * p, p);
        x_hat.set_column(e, &(z * g));
    }
    for (j, &c) in model.exog_cols.iter().enumerate() {
        x_hat.set_column(ke + j, &z.column(c));
    }
    let y_hat = z * fs.gamma_hat.rows(0, p);
    let xtx = x_hat.tr_mul(&x_hat);
    if linalg::rcond(&xtx) < linalg::RCOND_MIN {
        let eig = xtx.clone().symmetric_eigen().eigenvalues;
        let max = eig.amax();
        return Err(Error::RankDeficient {
            null_dim: eig.iter().filter(|&&v| v <= 1e-12 * max).count().max(1),
        });
    }
    let min_sv = (&xtx / n as f64).singular_values().min();
    let weak_instrument = min_sv < 1e-8;
    if weak_instrument {
        log::warn!("weak instruments: smallest singular value of the projected design is {min_sv:e}");
    }
    let theta_hat = xtx
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient { null_dim: 1 })?
        .solve(&x_hat.tr_mul(&y_hat));
    let fit = IvFit {
        theta_hat: theta_hat.clone(),
        x_hat,
        y_hat,
        first_stage: Arc::new(fs),
        weak_instrument,
        gram: Arc::new(z.tr_mul(z)),
        exog_cols: model.exog_cols.clone(),
        n_endog: ke,
        n,
    };
    let parts = fit.parts_at(&theta_hat)?;
    Ok((theta_hat, parts, fit))
}

impl TwoStageModel for IvFit {
    fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    fn n(&self) -> usize {
        self.n
    }

    fn parts_at(&self, theta: &DVector<f64>) -> Result<InfluenceParts> {
        let a = self.x_hat.tr_mul(&self.x_hat) * (2.0 / self.n as f64);
        let k = theta.len();
        let draw = IvDraw {
            fs: Arc::clone(&self.first_stage),
            gram: Arc::clone(&self.gram),
            theta: theta.clone(),
            exog_cols: self.exog_cols.clone(),
            n_endog: self.n_endog,
            scale: 2.0 / (self.n as f64).sqrt(),
        };
        InfluenceParts::new(theta.clone(), a, Some(DMatrix::zeros(k, k)), Arc::new(draw))
    }
}

/// `E_s = (2/sqrt(n)) Xbar' (ybar - Xbar theta)` under redrawn first-stage
/// coefficients, computed in coefficient space through `M = Z'Z`.
struct IvDraw {
    fs: Arc<FirstStageFit>,
    gram: Arc<DMatrix<f64>>,
    theta: DVector<f64>,
    exog_cols: Vec<usize>,
    n_endog: usize,
    scale: f64,
}

impl IvDraw {
    fn evaluate(&self, gammas: &DMatrix<f64>) -> Vec<DVector<f64>> {
        let p = self.gram.nrows();
        let b = gammas.ncols();
        let mut w = gammas.rows(0, p).into_owned();
        for e in 0..self.n_endog {
            w -= gammas.rows((e + 1) * p, p) * self.theta[e];
        }
        for (j, &c) in self.exog_cols.iter().enumerate() {
            let t = self.theta[self.n_endog + j];
            for s in 0..b {
                w[(c, s)] -= t;
            }
        }
        let v = &*self.gram * w;
        (0..b)
            .map(|s| {
                let mut out = DVector::zeros(self.theta.len());
                for e in 0..self.n_endog {
                    out[e] = gammas.view(((e + 1) * p, s), (p, 1)).dot(&v.column(s)) * self.scale;
                }
                for (j, &c) in self.exog_cols.iter().enumerate() {
                    out[self.n_endog + j] = v[(c, s)] * self.scale;
                }
                out
            })
            .collect()
    }
}

impl ConditionalMeanDraw for IvDraw {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn draw(&self, stream: Stream, s: usize) -> Result<EDraw> {
        Ok(self.draw_batch(stream, s..s + 1)?.remove(0))
    }

    fn draw_batch(&self, stream: Stream, range: Range<usize>) -> Result<Vec<EDraw>> {
        let dim = self.fs.gamma_hat.len();
        let b = range.len();
        let mut zeta = DMatrix::zeros(dim, b);
        for (col, s) in range.enumerate() {
            zeta.set_column(col, &crate::first_stage::standard_normals(stream.child(s as u64), dim));
        }
        let mut gammas = self.fs.cov_sqrt() * zeta;
        for mut c in gammas.column_iter_mut() {
            c += &self.fs.gamma_hat;
        }
        Ok(self.evaluate(&gammas).into_iter().map(EDraw::plain).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{Simulation, DebiasMode};
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let mut rng = Stream::new(seed).rng();
        let mut z = DMatrix::zeros(n, 3);
        let mut y = DVector::zeros(n);
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let (z1, z2): (f64, f64) = (rng.random(), rng.random());
            let e: f64 = rng.random::<f64>() - 0.5;
            z[(i, 0)] = 1.0;
            z[(i, 1)] = z1;
            z[(i, 2)] = z2;
            d[i] = z1 + 0.5 * z2 + e + 0.3 * rng.random::<f64>();
            y[i] = 0.5 + 1.5 * d[i] + e;
        }
        (z, y, d)
    }

    #[test]
    fn exogenous_model_is_ols() {
        let (z, y, _) = toy(200, 1);
        let model = LinearIvModel::new(z.clone(), y.clone(), DMatrix::zeros(200, 0), vec![0, 1, 2]).unwrap();
        let (theta, _, _) = iv_estimate(&model).unwrap();
        let ols = (z.tr_mul(&z)).cholesky().unwrap().solve(&z.tr_mul(&y));
        assert!((theta - ols).amax() < 1e-10);
    }

    #[test]
    fn matches_two_stage_least_squares() {
        let (z, y, d) = toy(300, 2);
        let endog = DMatrix::from_column_slice(300, 1, d.as_slice());
        let model = LinearIvModel::new(z.clone(), y.clone(), endog, vec![0]).unwrap();
        let (theta, _, fit) = iv_estimate(&model).unwrap();
        // textbook 2SLS with X = [d, 1]
        let mut x = DMatrix::zeros(300, 2);
        x.set_column(0, &d);
        x.set_column(1, &DVector::from_element(300, 1.0));
        let pz = &z * (z.tr_mul(&z)).try_inverse().unwrap() * z.transpose();
        let tsls = (x.transpose() * &pz * &x).try_inverse().unwrap() * x.transpose() * &pz * &y;
        assert!((theta - tsls).amax() < 1e-9);
        let again = model.project(&fit.y_hat);
        assert!((again - &fit.y_hat).amax() < 1e-10);
    }

    #[test]
    fn draw_formula_matches_direct_sum() {
        let (z, y, d) = toy(120, 3);
        let endog = DMatrix::from_column_slice(120, 1, d.as_slice());
        let model = LinearIvModel::new(z.clone(), y, endog, vec![0]).unwrap();
        let (theta, parts, fit) = iv_estimate(&model).unwrap();
        let st = Stream::new(5);
        let got = parts.e_draw().draw(st, 4).unwrap().value;
        let g = crate::first_stage::draw_fs(&fit.first_stage, st, 4);
        let yb = &z * g.rows(0, 3);
        let db = &z * g.rows(3, 3);
        let mut e = DVector::zeros(2);
        for i in 0..120 {
            let r = yb[i] - theta[0] * db[i] - theta[1];
            e[0] += db[i] * r;
            e[1] += r;
        }
        e *= 2.0 / (120f64).sqrt();
        assert!((got - e).amax() < 1e-9);
    }

    #[test]
    fn batch_and_single_draws_agree() {
        let (z, y, d) = toy(150, 4);
        let endog = DMatrix::from_column_slice(150, 1, d.as_slice());
        let model = LinearIvModel::new(z, y, endog, vec![0]).unwrap();
        let (_, parts, _) = iv_estimate(&model).unwrap();
        let st = Stream::new(8);
        let batch = parts.e_draw().draw_batch(st, 10..20).unwrap();
        for (i, b) in batch.iter().enumerate() {
            let one = parts.e_draw().draw(st, 10 + i).unwrap();
            assert!((&one.value - &b.value).amax() < 1e-12);
        }
    }

    #[test]
    fn degenerate_first_stage_gives_constant_draws() {
        let (z, _, _) = toy(80, 6);
        // outcomes exactly in the instrument span have zero residuals
        let d = &z * DVector::from_vec(vec![0.1, 1.0, -0.5]);
        let y = &z * DVector::from_vec(vec![0.3, 2.0, 0.4]);
        let endog = DMatrix::from_column_slice(80, 1, d.as_slice());
        let model = LinearIvModel::new(z, y, endog, vec![0]).unwrap();
        let (theta, parts, fit) = iv_estimate(&model).unwrap();
        let sim = Simulation::run(&parts, 80, 20, 3).unwrap();
        let first = &sim.e_draws[0];
        assert!(sim.e_draws.iter().all(|e| (e - first).amax() < 1e-12));
        // and the constant equals the plug-in first-order condition, zero here
        let resid = &fit.y_hat - &fit.x_hat * &theta;
        let foc = fit.x_hat.tr_mul(&resid) * (2.0 / (80f64).sqrt());
        assert!((first - foc).amax() < 1e-9);
        let shift = parts.hessian_inv() * first / (80f64).sqrt();
        assert!((sim.debiased(&theta, &parts, DebiasMode::Mean) - (&theta - shift)).amax() < 1e-12);
    }
}
