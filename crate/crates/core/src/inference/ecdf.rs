use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn sorted_copy(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::DomainError("sample has non-finite values".into()));
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Right-continuous step function `F(t) = #{x <= t} / m`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        Ok(EmpiricalCdf {
            sorted: sorted_copy(sample)?,
        })
    }

    pub fn from_sorted(sorted: Vec<f64>) -> Result<Self> {
        if sorted.is_empty() {
            return Err(Error::EmptySample);
        }
        debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        Ok(EmpiricalCdf { sorted })
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= t) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Jump locations with the value the function takes from each jump on.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let m = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.sorted.iter().enumerate() {
            let v = (i + 1) as f64 / m;
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 = v,
                _ => out.push((x, v)),
            }
        }
        out
    }

    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        quantile_sorted(&self.sorted, alpha)
    }
}

pub fn empirical_cdf(sample: &[f64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::new(sample)
}

/// Index (1-based) of the lower empirical quantile. The small offset keeps
/// products such as `0.975 * 1000` from rounding up past an integer.
fn order_index(alpha: f64, m: usize) -> usize {
    let raw = (alpha * m as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(m)
}

pub fn quantile_sorted(sorted: &[f64], alpha: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!("quantile level {alpha} not in (0,1)")));
    }
    Ok(sorted[order_index(alpha, sorted.len()) - 1])
}

/// Lower empirical quantile `x_(ceil(alpha * m))`.
pub fn quantile(sample: &[f64], alpha: f64) -> Result<f64> {
    quantile_sorted(&sorted_copy(sample)?, alpha)
}

/// Lower median of a sample, `x_(ceil(m/2))`.
pub fn lower_median(sample: &[f64]) -> Result<f64> {
    let s = sorted_copy(sample)?;
    Ok(s[(s.len() - 1) / 2])
}

/// L1-Wasserstein distance between two equal-size empirical samples.
pub fn wasserstein_l1(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::SizeMismatch(format!(
            "samples of size {} and {}",
            f.len(),
            g.len()
        )));
    }
    let a = sorted_copy(f)?;
    let b = sorted_copy(g)?;
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.len() as f64)
}

/// Trapezoid approximation of the integral of `|F - G|` over a grid.
pub fn curve_distance(grid: &[f64], f: &[f64], g: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..grid.len() {
        let a = (f[i - 1] - g[i - 1]).abs();
        let b = (f[i] - g[i]).abs();
        acc += 0.5 * (a + b) * (grid[i] - grid[i - 1]);
    }
    acc
}

/// Evenly spaced grid with `points` nodes over `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

/// Estimated law of a scalar statistic: either a simulated sample or a
/// normal with fitted moments.
#[derive(Clone, Debug, PartialEq)]
pub enum AsymptoticLaw {
    Simulated(EmpiricalCdf),
    Normal { mean: f64, sd: f64 },
}

impl AsymptoticLaw {
    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            AsymptoticLaw::Simulated(e) => e.eval(t),
            AsymptoticLaw::Normal { mean, sd } => normal_cdf(t, *mean, *sd),
        }
    }

    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        match self {
            AsymptoticLaw::Simulated(e) => e.quantile(alpha),
            AsymptoticLaw::Normal { mean, sd } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::DomainError(format!("quantile level {alpha} not in (0,1)")));
                }
                if *sd == 0.0 {
                    return Ok(*mean);
                }
                Ok(Normal::new(*mean, *sd)
                    .map_err(|e| Error::DomainError(e.to_string()))?
                    .inverse_cdf(alpha))
            }
        }
    }
}

pub fn normal_cdf(t: f64, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 || !sd.is_finite() {
        return if t >= mean { 1.0 } else { 0.0 };
    }
    0.5 * statrs::function::erf::erfc(-(t - mean) / (sd * std::f64::consts::SQRT_2))
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
