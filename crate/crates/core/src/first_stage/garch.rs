//! AR(1)-GARCH(1,1) with standardized Student-t innovations, fitted by
//! conditional maximum likelihood given the first observation.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::optim::{bfgs, fd_step, BfgsOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GarchParams {
    pub phi0: f64,
    pub phi1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub nu: f64,
}

/// Margin kept from the stationarity boundaries when clamping.
const CLAMP_MARGIN: f64 = 1e-3;

impl GarchParams {
    pub const DIM: usize = 6;

    pub fn to_array(&self) -> [f64; 6] {
        [self.phi0, self.phi1, self.beta0, self.beta1, self.beta2, self.nu]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        GarchParams {
            phi0: v[0],
            phi1: v[1],
            beta0: v[2],
            beta1: v[3],
            beta2: v[4],
            nu: v[5],
        }
    }

    pub fn persistence(&self) -> f64 {
        self.beta1 + self.beta2
    }

    pub fn is_admissible(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.beta0 > 0.0
            && self.beta1 >= 0.0
            && self.beta2 >= 0.0
            && self.beta1 + self.beta2 < 1.0
            && self.phi1.abs() < 1.0
            && self.nu > 2.0
    }

    /// Nearest point (coordinate-wise, then rescaling the persistence)
    /// inside the admissible region, kept a small margin from its edges.
    pub fn clamped(&self) -> Self {
        let mut p = *self;
        p.phi1 = p.phi1.clamp(-1.0 + CLAMP_MARGIN, 1.0 - CLAMP_MARGIN);
        p.beta0 = p.beta0.max(1e-8);
        p.beta1 = p.beta1.max(0.0);
        p.beta2 = p.beta2.max(0.0);
        let s = p.beta1 + p.beta2;
        if s >= 1.0 - CLAMP_MARGIN {
            let scale = (1.0 - CLAMP_MARGIN) / s;
            p.beta1 *= scale;
            p.beta2 *= scale;
        }
        p.nu = p.nu.max(2.0 + CLAMP_MARGIN);
        p
    }

    fn to_free(self) -> [f64; 6] {
        let rest = 1.0 - self.beta1 - self.beta2;
        [
            self.phi0,
            self.phi1.atanh(),
            self.beta0.ln(),
            (self.beta1 / rest).ln(),
            (self.beta2 / rest).ln(),
            (self.nu - 2.0).ln(),
        ]
    }

    fn from_free(u: &[f64]) -> Self {
        // softmax against a fixed third component keeps both weights
        // positive with sum below one
        let m = u[3].max(u[4]).max(0.0);
        let (e1, e2, e0) = ((u[3] - m).exp(), (u[4] - m).exp(), (-m).exp());
        let total = e0 + e1 + e2;
        GarchParams {
            phi0: u[0],
            phi1: u[1].tanh(),
            beta0: u[2].exp(),
            beta1: e1 / total,
            beta2: e2 / total,
            nu: 2.0 + u[5].exp(),
        }
    }
}

/// CDF of the unit-variance Student-t distribution with `nu` degrees of freedom.
pub fn standardized_t_cdf(x: f64, nu: f64) -> f64 {
    let t = x * (nu / (nu - 2.0)).sqrt();
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// One return series together with its fixed variance initialization.
#[derive(Clone, Debug)]
pub struct GarchSeries {
    y: Vec<f64>,
    s2_init: f64,
}

impl GarchSeries {
    pub fn new(y: Vec<f64>) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let s2_init = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        GarchSeries { y, s2_init }
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Observations entering the conditional likelihood.
    pub fn effective_len(&self) -> usize {
        self.y.len() - 1
    }

    /// Residuals and conditional variances for observations `2..=n`, or
    /// `None` when a variance turns non-positive or non-finite.
    pub fn filter(&self, p: &GarchParams) -> Option<(Vec<f64>, Vec<f64>)> {
        let m = self.effective_len();
        let mut resid = Vec::with_capacity(m);
        let mut sigma2 = Vec::with_capacity(m);
        let mut s2 = self.s2_init;
        for i in 1..self.y.len() {
            if i > 1 {
                let u_prev = resid[i - 2];
                s2 = p.beta0 + p.beta1 * u_prev * u_prev + p.beta2 * s2;
            }
            if !(s2 > 0.0 && s2.is_finite()) {
                return None;
            }
            resid.push(self.y[i] - p.phi0 - p.phi1 * self.y[i - 1]);
            sigma2.push(s2);
        }
        Some((resid, sigma2))
    }

    /// Per-observation conditional log densities.
    pub fn loglik_terms(&self, p: &GarchParams) -> Option<Vec<f64>> {
        if !(p.nu > 2.0) {
            return None;
        }
        let (resid, sigma2) = self.filter(p)?;
        let nu = p.nu;
        let c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (std::f64::consts::PI * (nu - 2.0)).ln();
        let half = 0.5 * (nu + 1.0);
        Some(
            resid
                .iter()
                .zip(&sigma2)
                .map(|(u, s2)| c - 0.5 * s2.ln() - half * (u * u / ((nu - 2.0) * s2)).ln_1p())
                .collect(),
        )
    }

    pub fn mean_loglik(&self, p: &GarchParams) -> f64 {
        match self.loglik_terms(p) {
            Some(t) => t.iter().sum::<f64>() / t.len() as f64,
            None => f64::NEG_INFINITY,
        }
    }

    /// Probability integral transforms of observations `2..=n`.
    pub fn pit(&self, p: &GarchParams) -> Option<Vec<f64>> {
        let (resid, sigma2) = self.filter(p)?;
        Some(
            resid
                .iter()
                .zip(&sigma2)
                .map(|(u, s2)| standardized_t_cdf(u / s2.sqrt(), p.nu))
                .collect(),
        )
    }

    /// Numeric per-observation gradient of the log density in natural
    /// parameters, one row per observation.
    pub fn score_path(&self, p: &GarchParams) -> Option<DMatrix<f64>> {
        let base = p.to_array();
        let m = self.effective_len();
        let mut out = DMatrix::zeros(m, GarchParams::DIM);
        for j in 0..GarchParams::DIM {
            let h = fd_step(base[j]);
            let mut up = base;
            let mut dn = base;
            up[j] += h;
            dn[j] -= h;
            let lu = self.loglik_terms(&GarchParams::from_slice(&up));
            let ld = self.loglik_terms(&GarchParams::from_slice(&dn));
            let centre = self.loglik_terms(p)?;
            match (lu, ld) {
                (Some(a), Some(b)) => {
                    for i in 0..m {
                        out[(i, j)] = (a[i] - b[i]) / (2.0 * h);
                    }
                }
                (Some(a), None) => {
                    for i in 0..m {
                        out[(i, j)] = (a[i] - centre[i]) / h;
                    }
                }
                (None, Some(b)) => {
                    for i in 0..m {
                        out[(i, j)] = (centre[i] - b[i]) / h;
                    }
                }
                (None, None) => return None,
            }
        }
        Some(out)
    }

    fn mean_score(&self, p: &GarchParams) -> Option<Vec<f64>> {
        let s = self.score_path(p)?;
        let m = s.nrows() as f64;
        Some((0..GarchParams::DIM).map(|j| s.column(j).sum() / m).collect())
    }

    /// Numeric Hessian of the mean log likelihood in natural parameters.
    pub fn mean_hessian(&self, p: &GarchParams) -> Option<DMatrix<f64>> {
        let base = p.to_array();
        let mut hess = DMatrix::zeros(GarchParams::DIM, GarchParams::DIM);
        for j in 0..GarchParams::DIM {
            let h = fd_step(base[j]);
            let mut up = base;
            let mut dn = base;
            up[j] += h;
            dn[j] -= h;
            let gu = self.mean_score(&GarchParams::from_slice(&up))?;
            let gd = self.mean_score(&GarchParams::from_slice(&dn))?;
            for k in 0..GarchParams::DIM {
                hess[(k, j)] = (gu[k] - gd[k]) / (2.0 * h);
            }
        }
        Some(crate::linalg::symmetrize(&hess))
    }
}

#[derive(Clone, Debug)]
pub struct GarchFit {
    pub params: GarchParams,
    pub sigma2_path: Vec<f64>,
    /// Sum of conditional log densities.
    pub loglik: f64,
    pub score_path: DMatrix<f64>,
    /// Mean Hessian of the per-observation log density.
    pub hessian: DMatrix<f64>,
    pub series: GarchSeries,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn starting_points(series: &GarchSeries) -> Vec<GarchParams> {
    let y = series.y();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = series.s2_init.max(1e-12);
    let acf1 = y.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n * var);
    let phi1 = acf1.clamp(-0.9, 0.9);
    let phi0 = mean * (1.0 - phi1);
    let rvar = var * (1.0 - phi1 * phi1);
    vec![
        GarchParams { phi0, phi1, beta0: 0.07 * rvar, beta1: 0.08, beta2: 0.85, nu: 8.0 },
        GarchParams { phi0, phi1, beta0: 0.4 * rvar, beta1: 0.15, beta2: 0.45, nu: 5.0 },
    ]
}

/// Conditional maximum likelihood fit of one return series.
pub fn ar_garch_fit(y: &[f64]) -> Result<GarchFit> {
    if y.len() < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 observations, got {}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::DomainError("series has non-finite values".into()));
    }
    let series = GarchSeries::new(y.to_vec());
    if !(series.s2_init > 1e-12) {
        return Err(Error::NonConvergence { grad_norm: f64::NAN });
    }
    let objective = |u: &[f64]| -series.mean_loglik(&GarchParams::from_free(u));
    let mut best: Option<crate::optim::Minimum> = None;
    for start in starting_points(&series) {
        let m = bfgs(objective, &start.to_free(), BfgsOptions::default());
        let better = match &best {
            None => true,
            Some(b) => (m.converged && !b.converged) || (m.converged == b.converged && m.value < b.value),
        };
        if better {
            best = Some(m);
        }
        if best.as_ref().is_some_and(|b| b.converged) {
            break;
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        return Err(Error::NonConvergence { grad_norm: best.grad_norm });
    }
    let params = GarchParams::from_free(&best.x);
    if params.persistence() >= 1.0 - 1e-4 {
        return Err(Error::BoundaryOptimum { persistence: params.persistence() });
    }
    let terms = series.loglik_terms(&params).ok_or(Error::NonConvergence { grad_norm: best.grad_norm })?;
    let (_, sigma2_path) = series.filter(&params).expect("filter succeeded above");
    let score_path = series.score_path(&params).ok_or(Error::NonConvergence { grad_norm: best.grad_norm })?;
    let hessian = series.mean_hessian(&params).ok_or(Error::NonConvergence { grad_norm: best.grad_norm })?;
    Ok(GarchFit {
        params,
        sigma2_path,
        loglik: terms.iter().sum(),
        score_path,
        hessian,
        series,
        grad_norm: best.grad_norm,
        iterations: best.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use rand::Rng;
    use rand_distr::{ChiSquared, Distribution, StandardNormal};

    pub(crate) fn simulate(p: &GarchParams, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Stream::new(seed).rng();
        let chi = ChiSquared::new(p.nu).unwrap();
        let scale = ((p.nu - 2.0) / p.nu).sqrt();
        let burn = 500;
        let mut y = Vec::with_capacity(n);
        let mut prev_y = 0.0;
        let mut s2 = p.beta0 / (1.0 - p.beta1 - p.beta2);
        let mut prev_u: f64 = 0.0;
        for t in 0..(n + burn) {
            if t > 0 {
                s2 = p.beta0 + p.beta1 * prev_u * prev_u + p.beta2 * s2;
            }
            let z: f64 = rng.sample(StandardNormal);
            let eps = z / (chi.sample(&mut rng) / p.nu).sqrt() * scale;
            let u = s2.sqrt() * eps;
            let yt = p.phi0 + p.phi1 * prev_y + u;
            prev_u = u;
            prev_y = yt;
            if t >= burn {
                y.push(yt);
            }
        }
        y
    }

    fn truth() -> GarchParams {
        GarchParams { phi0: 0.0, phi1: 0.4, beta0: 0.05, beta1: 0.05, beta2: 0.9, nu: 6.0 }
    }

    #[test]
    fn free_parameterization_round_trips() {
        let p = truth();
        let q = GarchParams::from_free(&p.to_free());
        for (a, b) in p.to_array().iter().zip(q.to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn t_cdf_matches_statrs() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let nu = 6.0;
        let d = StudentsT::new(0.0, 1.0, nu).unwrap();
        for &x in &[-3.0, -0.5, 0.0, 0.2, 1.7] {
            let t = x * (nu / (nu - 2.0f64)).sqrt();
            assert!((standardized_t_cdf(x, nu) - d.cdf(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn clamping_lands_inside() {
        let bad = GarchParams { phi0: 0.0, phi1: 1.3, beta0: -0.1, beta1: 0.6, beta2: 0.7, nu: 1.5 };
        assert!(!bad.is_admissible());
        assert!(bad.clamped().is_admissible());
    }

    #[test]
    fn recovers_truth_on_long_series() {
        let y = simulate(&truth(), 20_000, 99);
        let fit = ar_garch_fit(&y).unwrap();
        let est = fit.params.to_array();
        for (e, t) in est.iter().zip(truth().to_array()) {
            let tol = if t == 6.0 { 0.05 * 6.0 } else { 0.05 };
            assert!((e - t).abs() < tol, "{:?}", fit.params);
        }
        // degrees of freedom is the one parameter on a non-unit scale; also
        // hold it to the absolute band
        assert!((fit.params.nu - 6.0).abs() < 1.0);
    }

    #[test]
    fn first_order_conditions_and_variance_moment() {
        let y = simulate(&truth(), 3000, 17);
        let fit = ar_garch_fit(&y).unwrap();
        let m = fit.score_path.nrows() as f64;
        for j in 0..6 {
            let g = fit.score_path.column(j).sum() / m;
            assert!(g.abs() < 1e-3, "score {j} = {g}");
        }
        let p = fit.params;
        let implied = p.beta0 / (1.0 - p.persistence());
        let (resid, _) = fit.series.filter(&p).unwrap();
        let rv = resid.iter().map(|u| u * u).sum::<f64>() / resid.len() as f64;
        assert!((implied / rv - 1.0).abs() < 0.15, "{implied} vs {rv}");
        assert!(fit.sigma2_path.iter().all(|&s| s > 0.0));
        assert!(p.is_admissible());
    }

    #[test]
    fn constant_series_is_rejected() {
        let y = vec![1.5; 300];
        assert!(matches!(
            ar_garch_fit(&y),
            Err(Error::NonConvergence { .. }) | Err(Error::BoundaryOptimum { .. })
        ));
    }
}
