use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::first_stage::{standard_normals, FirstStageFit};
use crate::inference::{ConditionalMeanDraw, EDraw, InfluenceParts, TwoStageModel};
use crate::linalg;
use crate::rng::Stream;

/// Largest linear index passed to `exp`.
const EXP_CAP: f64 = 50.0;

fn capped_exp(eta: f64) -> f64 {
    eta.min(EXP_CAP).exp()
}

/// Poisson regression of counts on `(1, p_hat)` with `p_hat` taken from a
/// first-stage fit evaluated at each observation's covariate. The fitted
/// probabilities enter linearly and are used unclamped, so a linear-probability
/// fit that strays outside [0, 1] is left as is.
#[derive(Clone, Debug)]
pub struct PoissonPluginModel {
    pub theta_hat: DVector<f64>,
    /// First-stage regressor rows, one per observation.
    features: Arc<DMatrix<f64>>,
    pub p_hat: Vec<f64>,
    y: Vec<f64>,
    fs: Arc<FirstStageFit>,
    pub iterations: usize,
}

fn mean_objective(y: &[f64], p: &[f64], theta: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    y.iter()
        .zip(p)
        .map(|(yi, pi)| {
            let eta = theta[0] + theta[1] * pi;
            yi * eta - capped_exp(eta)
        })
        .sum::<f64>()
        / n
}

fn gradient_and_information(y: &[f64], p: &[f64], theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = y.len() as f64;
    let mut g = DVector::zeros(2);
    let mut h = DMatrix::zeros(2, 2);
    for (yi, pi) in y.iter().zip(p) {
        let mu = capped_exp(theta[0] + theta[1] * pi);
        g[0] += yi - mu;
        g[1] += (yi - mu) * pi;
        h[(0, 0)] += mu;
        h[(0, 1)] += mu * pi;
        h[(1, 1)] += mu * pi * pi;
    }
    h[(1, 0)] = h[(0, 1)];
    (g / n, h / n)
}

/// Newton iterations with step halving from `(log ybar, 0)`.
pub fn poisson_estimate(y: &[u64], fs: &FirstStageFit, z: &[f64]) -> Result<PoissonPluginModel> {
    if y.len() != z.len() {
        return Err(Error::SizeMismatch(format!("{} counts but {} covariates", y.len(), z.len())));
    }
    if y.is_empty() {
        return Err(Error::EmptySample);
    }
    let width = fs.width();
    let mut features = DMatrix::zeros(z.len(), width);
    for (i, &zi) in z.iter().enumerate() {
        features.row_mut(i).copy_from(&fs.feature_row(&[zi]).transpose());
    }
    let p_hat: Vec<f64> = (&features * &fs.gamma_hat).iter().copied().collect();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();

    let mut design = DMatrix::zeros(2, 2);
    for &p in &p_hat {
        design[(0, 0)] += 1.0;
        design[(0, 1)] += p;
        design[(1, 1)] += p * p;
    }
    design[(1, 0)] = design[(0, 1)];
    if linalg::rcond(&design) < 1e-12 {
        return Err(Error::RankDeficient { null_dim: 1 });
    }
    let ybar = yf.iter().sum::<f64>() / yf.len() as f64;
    if ybar <= 0.0 {
        return Err(Error::NonConvergence { grad_norm: f64::INFINITY });
    }
    let mut theta = DVector::from_vec(vec![ybar.ln(), 0.0]);
    let mut value = mean_objective(&yf, &p_hat, &theta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < 200 {
        let (g, h) = gradient_and_information(&yf, &p_hat, &theta);
        grad_norm = g.norm();
        if grad_norm <= 1e-10 {
            break;
        }
        iterations += 1;
        let Some(step) = h.clone().cholesky().map(|c| c.solve(&g)) else {
            return Err(Error::RankDeficient { null_dim: 1 });
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = &theta + &step * t;
            let v = mean_objective(&yf, &p_hat, &trial);
            // ties at rounding level still count as progress
            if v >= value - 1e-15 * (1.0 + value.abs()) {
                theta = trial;
                value = v;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if grad_norm > 1e-8 {
        return Err(Error::NonConvergence { grad_norm });
    }
    if p_hat.iter().any(|p| theta[0] + theta[1] * p > EXP_CAP) {
        return Err(Error::Overflow);
    }
    Ok(PoissonPluginModel {
        theta_hat: theta,
        features: Arc::new(features),
        p_hat,
        y: yf,
        fs: Arc::new(fs.clone()),
        iterations,
    })
}

impl PoissonPluginModel {
    /// Mean score `(1/n) sum (y - exp(beta'theta)) beta` at `theta`.
    pub fn mean_score(&self, theta: &DVector<f64>) -> DVector<f64> {
        gradient_and_information(&self.y, &self.p_hat, theta).0
    }
}

impl TwoStageModel for PoissonPluginModel {
    fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn parts_at(&self, theta: &DVector<f64>) -> Result<InfluenceParts> {
        let (_, info) = gradient_and_information(&self.y, &self.p_hat, theta);
        let draw = PoissonDraw {
            fs: Arc::clone(&self.fs),
            features: Arc::clone(&self.features),
            base_mean: self.p_hat.iter().map(|p| capped_exp(theta[0] + theta[1] * p)).collect(),
            theta: theta.clone(),
        };
        InfluenceParts::new(theta.clone(), info.clone(), Some(info), Arc::new(draw))
    }
}

/// `E_s = (1/sqrt(n)) sum (exp(beta_hat'theta) - exp(beta_bar'theta)) beta_bar`
/// with `beta_bar` rebuilt from redrawn first-stage coefficients.
struct PoissonDraw {
    fs: Arc<FirstStageFit>,
    features: Arc<DMatrix<f64>>,
    base_mean: Vec<f64>,
    theta: DVector<f64>,
}

impl ConditionalMeanDraw for PoissonDraw {
    fn dim(&self) -> usize {
        2
    }

    fn draw(&self, stream: Stream, s: usize) -> Result<EDraw> {
        Ok(self.draw_batch(stream, s..s + 1)?.remove(0))
    }

    fn draw_batch(&self, stream: Stream, range: Range<usize>) -> Result<Vec<EDraw>> {
        let dim = self.fs.gamma_hat.len();
        let b = range.len();
        let mut zeta = DMatrix::zeros(dim, b);
        for (col, s) in range.enumerate() {
            zeta.set_column(col, &standard_normals(stream.child(s as u64), dim));
        }
        let mut gammas = self.fs.cov_sqrt() * zeta;
        for mut c in gammas.column_iter_mut() {
            c += &self.fs.gamma_hat;
        }
        let probs = &*self.features * gammas;
        let scale = 1.0 / (self.base_mean.len() as f64).sqrt();
        Ok((0..b)
            .map(|s| {
                let mut e = DVector::zeros(2);
                for (i, &m) in self.base_mean.iter().enumerate() {
                    let pb = probs[(i, s)];
                    let diff = m - capped_exp(self.theta[0] + self.theta[1] * pb);
                    e[0] += diff;
                    e[1] += diff * pb;
                }
                EDraw::plain(e * scale)
            })
            .collect())
    }
}
