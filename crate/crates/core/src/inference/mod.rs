//! Model-agnostic simulation engine.
//!
//! A model supplies the Hessian estimate, the conditional variance of its
//! influence function, and a sampler for the conditional mean under
//! first-stage redraws. From those this module builds the simulated law of
//! `sqrt(n) (theta_hat - theta_0)`, interval estimates, variance estimates,
//! and the debiased estimator.

mod ecdf;

pub use ecdf::{
    curve_distance, empirical_cdf, linear_grid, lower_median, normal_cdf, normal_quantile,
    quantile, quantile_sorted, wasserstein_l1, AsymptoticLaw, EmpiricalCdf,
};

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{tag, Stream};

/// One conditional-mean draw plus bookkeeping about first-stage bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct EDraw {
    pub value: DVector<f64>,
    /// Number of rejected first-stage proposals before this draw was accepted.
    pub bound_hits: u32,
    /// Whether the proposal budget ran out and the draw was clamped.
    pub clamped: bool,
}

impl EDraw {
    pub fn plain(value: DVector<f64>) -> Self {
        EDraw {
            value,
            bound_hits: 0,
            clamped: false,
        }
    }
}

/// Sampler for the conditional mean of the influence function.
///
/// Implementations must be pure in `(stream, s)`: draw `s` may only use
/// randomness derived from `stream.child(s)`.
pub trait ConditionalMeanDraw: Send + Sync {
    fn dim(&self) -> usize;

    fn draw(&self, stream: Stream, s: usize) -> Result<EDraw>;

    /// Several draws at once. Overrides may vectorize but must return exactly
    /// what repeated calls to `draw` would.
    fn draw_batch(&self, stream: Stream, range: Range<usize>) -> Result<Vec<EDraw>> {
        range.map(|s| self.draw(stream, s)).collect()
    }
}

/// Adapter turning a closure into a [`ConditionalMeanDraw`].
pub struct FnDraw<F> {
    dim: usize,
    f: F,
}

impl<F> FnDraw<F>
where
    F: Fn(Stream, usize) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnDraw { dim, f }
    }
}

impl<F> ConditionalMeanDraw for FnDraw<F>
where
    F: Fn(Stream, usize) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, stream: Stream, s: usize) -> Result<EDraw> {
        Ok(EDraw::plain((self.f)(stream, s)))
    }
}

/// Draw that always returns the same vector.
pub struct ConstantDraw(pub DVector<f64>);

impl ConditionalMeanDraw for ConstantDraw {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn draw(&self, _stream: Stream, _s: usize) -> Result<EDraw> {
        Ok(EDraw::plain(self.0.clone()))
    }
}

/// Hessian, conditional variance and conditional-mean sampler of a model,
/// all evaluated at the parameter `at`.
#[derive(Clone)]
pub struct InfluenceParts {
    at: DVector<f64>,
    hessian: DMatrix<f64>,
    hessian_inv: DMatrix<f64>,
    cond_variance: Option<DMatrix<f64>>,
    cond_sqrt: Option<DMatrix<f64>>,
    e_draw: Arc<dyn ConditionalMeanDraw>,
}

impl fmt::Debug for InfluenceParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InfluenceParts")
            .field("at", &self.at)
            .field("hessian", &self.hessian)
            .field("cond_variance", &self.cond_variance)
            .finish_non_exhaustive()
    }
}

impl InfluenceParts {
    /// `cond_variance = None` marks models whose conditional variance is not
    /// tractable; those support debiasing but not the simulated law.
    pub fn new(
        at: DVector<f64>,
        hessian: DMatrix<f64>,
        cond_variance: Option<DMatrix<f64>>,
        e_draw: Arc<dyn ConditionalMeanDraw>,
    ) -> Result<Self> {
        let k = at.len();
        if hessian.shape() != (k, k) || e_draw.dim() != k {
            return Err(Error::SizeMismatch(format!(
                "parameter dim {k}, hessian {:?}, draw dim {}",
                hessian.shape(),
                e_draw.dim()
            )));
        }
        let hessian_inv = linalg::checked_inverse(&hessian)?;
        let (cond_variance, cond_sqrt) = match cond_variance {
            Some(v) => {
                if v.shape() != (k, k) {
                    return Err(Error::SizeMismatch(format!(
                        "conditional variance {:?} for dim {k}",
                        v.shape()
                    )));
                }
                let l = linalg::cholesky_sqrt(&v)?;
                (Some(linalg::symmetrize(&v)), Some(l))
            }
            None => (None, None),
        };
        Ok(InfluenceParts {
            at,
            hessian,
            hessian_inv,
            cond_variance,
            cond_sqrt,
            e_draw,
        })
    }

    pub fn dim(&self) -> usize {
        self.at.len()
    }

    pub fn at(&self) -> &DVector<f64> {
        &self.at
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn hessian_inv(&self) -> &DMatrix<f64> {
        &self.hessian_inv
    }

    pub fn cond_variance(&self) -> Option<&DMatrix<f64>> {
        self.cond_variance.as_ref()
    }

    pub fn e_draw(&self) -> &Arc<dyn ConditionalMeanDraw> {
        &self.e_draw
    }

    fn cond_sqrt(&self) -> Result<&DMatrix<f64>> {
        self.cond_sqrt.as_ref().ok_or(Error::VarianceUnavailable)
    }
}

/// A model that can rebuild its influence parts at any parameter value.
pub trait TwoStageModel: Send + Sync {
    fn theta_hat(&self) -> &DVector<f64>;
    /// Effective sample size used for the `sqrt(n)` scaling.
    fn n(&self) -> usize;
    fn parts_at(&self, theta: &DVector<f64>) -> Result<InfluenceParts>;

    /// Variance of `theta_hat` for models whose conditional variance is not
    /// tractable and whose limit law is taken to be normal.
    fn normal_variance(&self) -> Result<DMatrix<f64>> {
        Err(Error::VarianceUnavailable)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DebiasMode {
    Mean,
    Median,
}

impl std::str::FromStr for DebiasMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(DebiasMode::Mean),
            "median" => Ok(DebiasMode::Median),
            other => Err(Error::InvalidInput(format!("unknown debias mode '{other}'"))),
        }
    }
}

/// The simulated sample of `psi` draws.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiSample {
    pub draws: Vec<DVector<f64>>,
    pub n: usize,
    pub kappa: usize,
    pub theta_hat: DVector<f64>,
    pub debiased: bool,
}

impl PsiSample {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }

    pub fn sorted_coordinate(&self, k: usize) -> Vec<f64> {
        let mut v = self.coordinate(k);
        v.sort_by(f64::total_cmp);
        v
    }
}

/// The conditional-mean draws of one simulation run, shared by every
/// quantity derived from them so each is computed from the same draws.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub n: usize,
    pub kappa: usize,
    pub e_draws: Vec<DVector<f64>>,
    /// Draws that needed at least one redraw or ended clamped.
    pub bound_hit_draws: usize,
    pub clamped_draws: usize,
    stream: Stream,
}

/// Batch width for vectorized conditional-mean draws.
const BATCH: usize = 250;

impl Simulation {
    pub fn run(parts: &InfluenceParts, n: usize, kappa: usize, seed: impl Into<Stream>) -> Result<Self> {
        if kappa < 2 {
            return Err(Error::InvalidInput(format!("kappa must be at least 2, got {kappa}")));
        }
        if n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        let stream: Stream = seed.into();
        let e_stream = stream.child(tag::EDRAW);
        let mut e_draws = Vec::with_capacity(kappa);
        let mut bound_hit_draws = 0;
        let mut clamped_draws = 0;
        let mut start = 0;
        while start < kappa {
            let end = (start + BATCH).min(kappa);
            for d in parts.e_draw.draw_batch(e_stream, start..end)? {
                if d.value.len() != parts.dim() || d.value.iter().any(|v| !v.is_finite()) {
                    return Err(Error::DomainError("conditional-mean draw is not finite".into()));
                }
                if d.bound_hits > 0 || d.clamped {
                    bound_hit_draws += 1;
                }
                if d.clamped {
                    clamped_draws += 1;
                }
                e_draws.push(d.value);
            }
            start = end;
        }
        Ok(Simulation {
            n,
            kappa,
            e_draws,
            bound_hit_draws,
            clamped_draws,
            stream,
        })
    }

    /// Mean or coordinate-wise lower median of the draws.
    pub fn omega(&self, mode: DebiasMode) -> DVector<f64> {
        match mode {
            DebiasMode::Mean => linalg::mean_vector(&self.e_draws),
            DebiasMode::Median => {
                let k = self.e_draws[0].len();
                DVector::from_fn(k, |j, _| {
                    let col: Vec<f64> = self.e_draws.iter().map(|d| d[j]).collect();
                    lower_median(&col).expect("draws are non-empty and finite")
                })
            }
        }
    }

    pub fn e_covariance(&self) -> DMatrix<f64> {
        let mean = linalg::mean_vector(&self.e_draws);
        linalg::sample_covariance(&self.e_draws, &mean)
    }

    fn zeta(&self, s: usize, k: usize) -> DVector<f64> {
        let mut rng = self.stream.child(tag::ZETA).child(s as u64).rng();
        DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
    }

    /// `A^{-1} (V^{1/2} zeta_s + E_s - shift)` for every draw.
    fn psi_draws(&self, parts: &InfluenceParts, shift: Option<&DVector<f64>>) -> Result<Vec<DVector<f64>>> {
        let l = parts.cond_sqrt()?;
        let k = parts.dim();
        let zero_v = l.iter().all(|&v| v == 0.0);
        let mut out = Vec::with_capacity(self.kappa);
        for (s, e) in self.e_draws.iter().enumerate() {
            let mut inner = match shift {
                Some(c) => e - c,
                None => e.clone(),
            };
            if !zero_v {
                inner += l * self.zeta(s, k);
            }
            out.push(parts.hessian_inv() * inner);
        }
        Ok(out)
    }

    pub fn psi(&self, parts: &InfluenceParts) -> Result<PsiSample> {
        Ok(PsiSample {
            draws: self.psi_draws(parts, None)?,
            n: self.n,
            kappa: self.kappa,
            theta_hat: parts.at().clone(),
            debiased: false,
        })
    }

    /// Centered sample built from parts evaluated at the debiased estimate.
    pub fn centered_psi(&self, parts_star: &InfluenceParts, mode: DebiasMode) -> Result<PsiSample> {
        let omega = self.omega(mode);
        Ok(PsiSample {
            draws: self.psi_draws(parts_star, Some(&omega))?,
            n: self.n,
            kappa: self.kappa,
            theta_hat: parts_star.at().clone(),
            debiased: true,
        })
    }

    /// `A^{-1} (V + SampleCov(E)) A^{-1} / n`.
    pub fn variance(&self, parts: &InfluenceParts) -> Result<DMatrix<f64>> {
        let v = parts.cond_variance().ok_or(Error::VarianceUnavailable)?;
        let sigma = v + self.e_covariance();
        let ai = parts.hessian_inv();
        let out = ai * sigma * ai.transpose() / self.n as f64;
        Ok(linalg::symmetrize(&out))
    }

    /// `theta_hat - A^{-1} Omega / sqrt(n)`.
    pub fn debiased(&self, theta_hat: &DVector<f64>, parts: &InfluenceParts, mode: DebiasMode) -> DVector<f64> {
        theta_hat - parts.hessian_inv() * self.omega(mode) / (self.n as f64).sqrt()
    }
}

pub fn simulate_psi(parts: &InfluenceParts, n: usize, kappa: usize, seed: impl Into<Stream>) -> Result<PsiSample> {
    Simulation::run(parts, n, kappa, seed)?.psi(parts)
}

pub fn asymptotic_variance(
    parts: &InfluenceParts,
    n: usize,
    kappa: usize,
    seed: impl Into<Stream>,
) -> Result<DMatrix<f64>> {
    Simulation::run(parts, n, kappa, seed)?.variance(parts)
}

pub fn debias(
    theta_hat: &DVector<f64>,
    parts: &InfluenceParts,
    n: usize,
    kappa: usize,
    seed: impl Into<Stream>,
    mode: DebiasMode,
) -> Result<DVector<f64>> {
    Ok(Simulation::run(parts, n, kappa, seed)?.debiased(theta_hat, parts, mode))
}

/// Centered sample `A*^{-1} V*^{1/2} zeta_s + A*^{-1} (E*_s - Omega*)` from
/// parts rebuilt at the debiased estimate.
pub fn debiased_psi(
    parts_star: &InfluenceParts,
    n: usize,
    kappa: usize,
    seed: impl Into<Stream>,
    mode: DebiasMode,
) -> Result<PsiSample> {
    Simulation::run(parts_star, n, kappa, seed)?.centered_psi(parts_star, mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::DomainError(format!("level {level} not in (0,1)")))
    }
}

/// Sorted values of `theta_hat_k - psi_{s,k} / sqrt(n)`.
pub fn implied_estimates(psi: &PsiSample, k: usize) -> Vec<f64> {
    let root_n = (psi.n as f64).sqrt();
    let mut v: Vec<f64> = psi.draws.iter().map(|d| psi.theta_hat[k] - d[k] / root_n).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Per-coordinate equal-tailed interval from the quantiles of
/// `theta_hat - psi / sqrt(n)`.
pub fn confidence_interval(theta_hat: &DVector<f64>, psi: &PsiSample, level: f64) -> Result<Vec<Interval>> {
    check_level(level)?;
    if theta_hat != &psi.theta_hat {
        return Err(Error::InvalidInput(
            "psi sample was built around a different estimate".into(),
        ));
    }
    if psi.draws.is_empty() {
        return Err(Error::EmptySample);
    }
    let tail = (1.0 - level) / 2.0;
    (0..theta_hat.len())
        .map(|k| {
            let t = implied_estimates(psi, k);
            Ok(Interval {
                lower: quantile_sorted(&t, tail)?,
                upper: quantile_sorted(&t, 1.0 - tail)?,
                level,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimationReport {
    pub theta_hat: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub variance: Vec<Vec<f64>>,
    pub intervals: Vec<Interval>,
    pub debiased_intervals: Vec<Interval>,
    /// Per coordinate, the simulated CDF of `sqrt(n)(theta_hat - theta_0)`
    /// at its jump points.
    pub cdf_grid: Vec<Vec<(f64, f64)>>,
    pub n: usize,
    pub kappa: usize,
    pub bound_hit_draws: usize,
}

/// Full pipeline on one sample. Models without a tractable conditional
/// variance get normal intervals from their sandwich variance, shifted by
/// the simulated bias for the plug-in estimate, and an empty CDF grid.
pub fn estimate_report(
    model: &dyn TwoStageModel,
    kappa: usize,
    seed: impl Into<Stream>,
    level: f64,
    mode: DebiasMode,
) -> Result<EstimationReport> {
    check_level(level)?;
    let stream: Stream = seed.into();
    let n = model.n();
    let root_n = (n as f64).sqrt();
    let theta_hat = model.theta_hat().clone();
    let parts = model.parts_at(&theta_hat)?;
    let sim = Simulation::run(&parts, n, kappa, stream)?;
    let theta_star = sim.debiased(&theta_hat, &parts, mode);
    let (variance, intervals, debiased_intervals, cdf_grid) = if parts.cond_variance().is_some() {
        let psi = sim.psi(&parts)?;
        let variance = sim.variance(&parts)?;
        let parts_star = model.parts_at(&theta_star)?;
        let sim_star = Simulation::run(&parts_star, n, kappa, stream.child(tag::STAR))?;
        let psi_star = sim_star.centered_psi(&parts_star, mode)?;
        let cdf_grid = (0..theta_hat.len())
            .map(|k| Ok(EmpiricalCdf::from_sorted(psi.sorted_coordinate(k))?.steps()))
            .collect::<Result<Vec<_>>>()?;
        (
            variance,
            confidence_interval(&theta_hat, &psi, level)?,
            confidence_interval(&theta_star, &psi_star, level)?,
            cdf_grid,
        )
    } else {
        let variance = model.normal_variance()?;
        let shift = parts.hessian_inv() * sim.omega(mode);
        let z = normal_quantile(0.5 + level / 2.0);
        let normal = |center: f64, mean: f64, k: usize| {
            let half = z * variance[(k, k)].max(0.0).sqrt();
            Interval { lower: center - mean / root_n - half, upper: center - mean / root_n + half, level }
        };
        let intervals = (0..theta_hat.len()).map(|k| normal(theta_hat[k], shift[k], k)).collect();
        let debiased_intervals = (0..theta_hat.len()).map(|k| normal(theta_star[k], 0.0, k)).collect();
        (variance, intervals, debiased_intervals, vec![])
    };
    Ok(EstimationReport {
        theta_hat: theta_hat.iter().copied().collect(),
        theta_star: theta_star.iter().copied().collect(),
        variance: variance.row_iter().map(|r| r.iter().copied().collect()).collect(),
        intervals,
        debiased_intervals,
        cdf_grid,
        n,
        kappa,
        bound_hit_draws: sim.bound_hit_draws,
    })
}

#[cfg(test)]
mod tests;
