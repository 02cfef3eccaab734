//! Simulation designs A to D and the Monte Carlo driver built on them.

mod harness;
mod report;

pub use harness::{
    coverage, run_mc, Bounds, Coverage, CurveSet, IntervalMethod, McConfig, McResult, ReplicationFailure, ReplicationRecord,
    Summary, CDF_GRID_POINTS,
};
pub use report::{write_cdf_csv, write_coverage_csv, write_replications_csv, write_summary_csv, write_summary_json};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::first_stage::{ar_garch_fit, spline_gam_fit_with, SplineBasis, SplineCovariance};
use crate::inference::TwoStageModel;
use crate::rng::Stream;
use crate::second_stage::{copula_estimate, iv_estimate, poisson_estimate, sample_clayton, LinearIvModel, PIT_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DgpId {
    A,
    B,
    C,
    D,
}

impl fmt::Display for DgpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DgpId::A => "A",
            DgpId::B => "B",
            DgpId::C => "C",
            DgpId::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for DgpId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(DgpId::A),
            "B" => Ok(DgpId::B),
            "C" => Ok(DgpId::C),
            "D" => Ok(DgpId::D),
            other => Err(Error::InvalidInput(format!("unknown design {other:?}, expected A, B, C or D"))),
        }
    }
}

/// Round half to even, the convention for `k_n` and `n*`.
pub fn round_half_even(x: f64) -> usize {
    x.round_ties_even().max(0.0) as usize
}

pub const IV_THETA: f64 = 1.0;
pub const POISSON_THETA: [f64; 2] = [-0.8, 2.0];
pub const CLAYTON_THETA: f64 = 4.0;
/// Margin parameters `(phi0, phi1, beta0, beta1, beta2, nu)` of design D.
pub const GARCH_TRUTH: [f64; 6] = [0.0, 0.4, 0.05, 0.05, 0.9, 6.0];
const GARCH_BURN_IN: usize = 500;

/// A simulation design and its size parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub id: DgpId,
    pub n: usize,
    /// Design B: instruments `k_n = round(m sqrt(n))`.
    pub multiplier: Option<f64>,
    /// Design C: labelled subsample of size `round(n^alpha)`.
    pub alpha: Option<f64>,
    /// Design D: number of return series.
    pub k: Option<usize>,
    /// Design C: smoothness of the first-stage piecewise cubic at its
    /// breakpoints, `C^2` unless set.
    #[serde(default)]
    pub spline_continuity: Option<usize>,
    /// Covariance of the design C spline coefficients.
    #[serde(default)]
    pub spline_covariance: SplineCovariance,
    /// Replace the first-stage sampling covariance by zero.
    #[serde(default)]
    pub zero_first_stage_noise: bool,
}

impl DgpSpec {
    pub fn a(n: usize) -> Self {
        DgpSpec {
            id: DgpId::A,
            n,
            multiplier: None,
            alpha: None,
            k: None,
            spline_continuity: None,
            spline_covariance: SplineCovariance::default(),
            zero_first_stage_noise: false,
        }
    }

    pub fn b(n: usize, multiplier: f64) -> Self {
        DgpSpec { multiplier: Some(multiplier), ..Self::a(n).with_id(DgpId::B) }
    }

    /// Design C with the exponent paired with `n` in the reference tables,
    /// or 1 for other sizes.
    pub fn c(n: usize) -> Self {
        let alpha = match n {
            500 => 0.985,
            1000 => 0.945,
            2000 => 0.91,
            _ => 1.0,
        };
        Self::c_with(n, alpha)
    }

    pub fn c_with(n: usize, alpha: f64) -> Self {
        DgpSpec { alpha: Some(alpha), ..Self::a(n).with_id(DgpId::C) }
    }

    /// Design D with the series count paired with `n`, or 2 for other sizes.
    pub fn d(n: usize) -> Self {
        let k = match n {
            500 => 3,
            1000 => 5,
            2000 => 8,
            _ => 2,
        };
        Self::d_with(n, k)
    }

    pub fn d_with(n: usize, k: usize) -> Self {
        DgpSpec { k: Some(k), ..Self::a(n).with_id(DgpId::D) }
    }

    fn with_id(mut self, id: DgpId) -> Self {
        self.id = id;
        self
    }

    pub fn without_first_stage_noise(mut self) -> Self {
        self.zero_first_stage_noise = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let min = if self.id == DgpId::D { 100 } else { 10 };
        if self.n < min {
            return Err(Error::InvalidInput(format!("design {} needs n >= {min}, got {}", self.id, self.n)));
        }
        match self.id {
            DgpId::B => {
                let m = self.multiplier.ok_or_else(|| Error::InvalidInput("design B needs a multiplier".into()))?;
                if !(m > 0.0) || self.instruments() + 1 >= self.n {
                    return Err(Error::InvalidInput(format!("multiplier {m} gives an unusable instrument count")));
                }
            }
            DgpId::C => {
                let a = self.alpha.ok_or_else(|| Error::InvalidInput("design C needs alpha".into()))?;
                if self.spline_continuity.is_some_and(|c| c > 2) {
                    return Err(Error::InvalidInput("spline continuity must be 0, 1 or 2".into()));
                }
                if !(a > 0.0 && a <= 1.0) || self.labelled() < 60 {
                    return Err(Error::InvalidInput(format!("alpha {a} gives too small a labelled subsample")));
                }
            }
            DgpId::D => {
                if self.k.is_none_or(|k| k < 2) {
                    return Err(Error::InvalidInput("design D needs at least two series".into()));
                }
            }
            DgpId::A => {}
        }
        Ok(())
    }

    /// Number of excluded instruments (1 for design A).
    pub fn instruments(&self) -> usize {
        match self.id {
            DgpId::B => round_half_even(self.multiplier.unwrap_or(2.0) * (self.n as f64).sqrt()),
            _ => 1,
        }
    }

    /// Size of the labelled subsample of design C.
    pub fn labelled(&self) -> usize {
        round_half_even((self.n as f64).powf(self.alpha.unwrap_or(1.0))).min(self.n)
    }

    pub fn series(&self) -> usize {
        self.k.unwrap_or(2)
    }

    pub fn theta0(&self) -> DVector<f64> {
        match self.id {
            DgpId::A | DgpId::B => DVector::from_element(1, IV_THETA),
            DgpId::C => DVector::from_column_slice(&POISSON_THETA),
            DgpId::D => DVector::from_element(1, CLAYTON_THETA),
        }
    }

    pub fn label(&self) -> String {
        match self.id {
            DgpId::A => format!("A n={}", self.n),
            DgpId::B => format!("B n={} k={}", self.n, self.instruments()),
            DgpId::C => format!("C n={} n*={}", self.n, self.labelled()),
            DgpId::D => format!("D n={} k={}", self.n, self.series()),
        }
    }
}

/// One simulated sample.
#[derive(Clone, Debug)]
pub enum Dataset {
    /// Instrument matrix with intercept, outcome and treatment.
    Iv { z: DMatrix<f64>, y: DVector<f64>, d: DVector<f64> },
    /// Counts and covariates for all units; treatment observed for the
    /// first `d.len()` units only.
    Poisson { y: Vec<u64>, z: Vec<f64>, d: Vec<f64> },
    /// One return series per margin.
    Returns(Vec<Vec<f64>>),
}

pub fn generate(spec: &DgpSpec, seed: impl Into<Stream>) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed.into().rng();
    let n = spec.n;
    Ok(match spec.id {
        DgpId::A | DgpId::B => {
            let k = spec.instruments();
            let mut z = DMatrix::zeros(n, k + 1);
            let mut y = DVector::zeros(n);
            let mut d = DVector::zeros(n);
            for i in 0..n {
                let eps = 2.0 * rng.random::<f64>() - 1.0;
                z[(i, 0)] = 1.0;
                let index = if spec.id == DgpId::A {
                    let zi = rng.random::<f64>();
                    z[(i, 1)] = zi;
                    zi
                } else {
                    for j in 1..=k {
                        z[(i, j)] = 0.2 * rng.random::<f64>();
                    }
                    0.2 + (1..=k.min(4)).map(|j| z[(i, j)]).sum::<f64>()
                };
                d[i] = f64::from(u8::from(index > 0.5 * (eps + 1.2)));
                y[i] = IV_THETA * d[i] + eps;
            }
            Dataset::Iv { z, y, d }
        }
        DgpId::C => {
            let mut y = Vec::with_capacity(n);
            let mut z = Vec::with_capacity(n);
            let mut d = Vec::with_capacity(n);
            for _ in 0..n {
                let zi = 10.0 * rng.random::<f64>();
                let p = (std::f64::consts::PI * zi).sin().powi(2);
                let lam = (POISSON_THETA[0] + POISSON_THETA[1] * p).exp();
                y.push(Poisson::new(lam).map_err(|e| Error::DomainError(e.to_string()))?.sample(&mut rng) as u64);
                d.push(f64::from(u8::from(Bernoulli::new(p.clamp(0.0, 1.0)).expect("p in [0,1]").sample(&mut rng))));
                z.push(zi);
            }
            d.truncate(spec.labelled());
            Dataset::Poisson { y, z, d }
        }
        DgpId::D => Dataset::Returns(copula_garch(&mut rng, n, spec.series())?),
    })
}

fn copula_garch<R: Rng>(rng: &mut R, n: usize, k: usize) -> Result<Vec<Vec<f64>>> {
    let [phi0, phi1, b0, b1, b2, nu] = GARCH_TRUTH;
    let total = n + GARCH_BURN_IN;
    let u = sample_clayton(rng, total, k, CLAYTON_THETA)?;
    let t = StudentsT::new(0.0, 1.0, nu).map_err(|e| Error::DomainError(e.to_string()))?;
    let scale = ((nu - 2.0) / nu).sqrt();
    Ok((0..k)
        .map(|p| {
            let mut y = Vec::with_capacity(total);
            let (mut y_prev, mut s2_prev, mut e_prev) = (0.0, b0 / (1.0 - b1 - b2), 0.0);
            for i in 0..total {
                let s2 = b0 + b1 * s2_prev * e_prev * e_prev + b2 * s2_prev;
                let e = scale * t.inverse_cdf(u[(i, p)].clamp(PIT_EPS, 1.0 - PIT_EPS));
                let v = phi0 + phi1 * y_prev + s2.sqrt() * e;
                y.push(v);
                (y_prev, s2_prev, e_prev) = (v, s2, e);
            }
            y.split_off(GARCH_BURN_IN)
        })
        .collect())
}

/// Runs both estimation stages on a sample.
pub fn fit_model(spec: &DgpSpec, data: &Dataset) -> Result<Box<dyn TwoStageModel>> {
    match data {
        Dataset::Iv { z, y, d } => {
            let model = LinearIvModel::new(z.clone(), y.clone(), DMatrix::from_column_slice(d.len(), 1, d.as_slice()), vec![])?;
            let (_, _, mut fit) = iv_estimate(&model)?;
            if spec.zero_first_stage_noise {
                fit.first_stage = Arc::new(fit.first_stage.without_noise());
            }
            Ok(Box::new(fit))
        }
        Dataset::Poisson { y, z, d } => {
            let basis = SplineBasis::uniform(0.0, 10.0, 0.5)?.with_continuity(spec.spline_continuity.unwrap_or(2))?;
            let mut fs = spline_gam_fit_with(&z[..d.len()], d, &basis, spec.spline_covariance)?;
            if spec.zero_first_stage_noise {
                fs = fs.without_noise();
            }
            Ok(Box::new(poisson_estimate(y, &fs, z)?))
        }
        Dataset::Returns(series) => {
            let fits = series.iter().map(|y| ar_garch_fit(y)).collect::<Result<Vec<_>>>()?;
            let mut model = copula_estimate(fits)?;
            if spec.zero_first_stage_noise {
                let dim = model.beta_cov.nrows();
                model = model.with_beta_cov(DMatrix::zeros(dim, dim))?;
            }
            Ok(Box::new(model))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(round_half_even(2.5), 2);
        assert_eq!(round_half_even(3.5), 4);
        assert_eq!(round_half_even(31.62), 32);
        assert_eq!(DgpSpec::b(250, 2.0).instruments(), 32);
        assert_eq!(DgpSpec::b(250, 4.0).instruments(), 63);
        assert_eq!(DgpSpec::c(500).labelled(), 455);
        assert_eq!(DgpSpec::c(250).labelled(), 250);
    }

    #[test]
    fn design_a_error_is_centred() {
        let spec = DgpSpec::a(1_000_000);
        let Dataset::Iv { y, d, .. } = generate(&spec, 1).unwrap() else { panic!() };
        let m = (y - d).mean();
        assert!(m.abs() < 0.003, "{m}");
    }

    #[test]
    fn design_b_extra_instruments_are_irrelevant() {
        let spec = DgpSpec::b(100_000, 2.0);
        let Dataset::Iv { z, d, .. } = generate(&spec, 2).unwrap() else { panic!() };
        let corr = |a: &DVector<f64>, b: &DVector<f64>| {
            let (ma, mb) = (a.mean(), b.mean());
            let cov = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
            cov / (a.map(|x| (x - ma).powi(2)).sum() * b.map(|x| (x - mb).powi(2)).sum()).sqrt()
        };
        let z5 = z.column(5).into_owned();
        assert!(corr(&z5, &d).abs() < 0.01);
        let z1 = z.column(1).into_owned();
        assert!(corr(&z1, &d) > 0.05);
    }

    #[test]
    fn design_d_innovations_have_unit_variance() {
        let spec = DgpSpec::d_with(100_000, 2);
        let Dataset::Returns(series) = generate(&spec, 3).unwrap() else { panic!() };
        for y in &series {
            let innov: Vec<f64> = y.windows(2).map(|w| w[1] - GARCH_TRUTH[1] * w[0]).collect();
            let m = innov.iter().sum::<f64>() / innov.len() as f64;
            let v = innov.iter().map(|e| (e - m).powi(2)).sum::<f64>() / innov.len() as f64;
            assert!((v - 1.0).abs() < 0.1, "{v}");
            // the AR(1) mean adds the factor 1/(1 - phi1^2)
            let ym = y.iter().sum::<f64>() / y.len() as f64;
            let yv = y.iter().map(|e| (e - ym).powi(2)).sum::<f64>() / y.len() as f64;
            assert!((yv * (1.0 - 0.16) - 1.0).abs() < 0.1, "{yv}");
        }
    }

    #[test]
    fn design_c_labels_a_subsample() {
        let spec = DgpSpec::c(1000);
        let Dataset::Poisson { y, z, d } = generate(&spec, 4).unwrap() else { panic!() };
        assert_eq!(y.len(), 1000);
        assert_eq!(z.len(), 1000);
        assert_eq!(d.len(), spec.labelled());
        assert!(z.iter().all(|v| (0.0..10.0).contains(v)));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate(&DgpSpec::d_with(500, 1), 0).is_err());
        assert!(generate(&DgpSpec::b(20, 8.0), 0).is_err());
        assert!(generate(&DgpSpec::c_with(100, 0.1), 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DgpSpec::c(250);
        let a = generate(&spec, 9).unwrap();
        let b = generate(&spec, 9).unwrap();
        let (Dataset::Poisson { y: y1, .. }, Dataset::Poisson { y: y2, .. }) = (a, b) else { panic!() };
        assert_eq!(y1, y2);
    }
}
