//! Cubic regression splines in the B-spline basis.
//!
//! With simple interior knots the span of the basis is exactly the space of
//! C² piecewise cubics on the breakpoints. Repeating each interior knot
//! lowers the smoothness there by one order.

use nalgebra::{DMatrix, DVector};

use super::{FeatureMap, FirstStageFit, OlsDesign};
use crate::error::{Error, Result};

const DEGREE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SplineBasis {
    breakpoints: Vec<f64>,
    knots: Vec<f64>,
    continuity: usize,
    /// Knot-span index of each polynomial piece.
    spans: Vec<usize>,
}

impl SplineBasis {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidInput("need at least two breakpoints".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("breakpoints must be finite and strictly increasing".into()));
        }
        Ok(Self::build(breakpoints, 2))
    }

    fn build(breakpoints: Vec<f64>, continuity: usize) -> Self {
        let lo = breakpoints[0];
        let hi = *breakpoints.last().unwrap();
        let mult = DEGREE - continuity;
        let mut knots = vec![lo; DEGREE + 1];
        let mut spans = vec![DEGREE];
        for &b in &breakpoints[1..breakpoints.len() - 1] {
            knots.extend(std::iter::repeat_n(b, mult));
            spans.push(knots.len() - 1);
        }
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        SplineBasis { breakpoints, knots, continuity, spans }
    }

    /// Same breakpoints with the fitted function only `C^continuity` at
    /// interior breakpoints (0, 1 or 2).
    pub fn with_continuity(self, continuity: usize) -> Result<Self> {
        if continuity > 2 {
            return Err(Error::InvalidInput(format!("cubic pieces cannot join with C^{continuity} continuity")));
        }
        Ok(Self::build(self.breakpoints, continuity))
    }

    pub fn continuity(&self) -> usize {
        self.continuity
    }

    /// Evenly spaced breakpoints `lo, lo + step, ..., hi`.
    pub fn uniform(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let count = ((hi - lo) / step).round() as usize;
        if count == 0 || ((lo + count as f64 * step) - hi).abs() > 1e-9 * (1.0 + hi.abs()) {
            return Err(Error::InvalidInput(format!("step {step} does not tile [{lo}, {hi}]")));
        }
        Self::new((0..=count).map(|i| lo + step * i as f64).collect())
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn range(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Number of polynomial pieces.
    pub fn pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    fn piece_of(&self, x: f64) -> usize {
        let j = self.breakpoints.partition_point(|&b| b <= x);
        j.saturating_sub(1).min(self.pieces() - 1)
    }

    /// Values of all basis functions (and up to `order` derivatives) using
    /// the polynomial of piece `piece`, evaluated at any `x`.
    pub fn eval_piece(&self, piece: usize, x: f64, order: usize) -> Vec<DVector<f64>> {
        let span = self.spans[piece];
        let ders = basis_derivatives(&self.knots, span, x, order);
        let mut out = vec![DVector::zeros(self.dim()); order + 1];
        for (k, row) in ders.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[k][span - DEGREE + j] = *v;
            }
        }
        out
    }

    /// Basis row at `x`, which must lie inside the breakpoint range.
    pub fn eval(&self, x: f64) -> Result<DVector<f64>> {
        let (lo, hi) = self.range();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfRange(format!("{x} outside spline range [{lo}, {hi}]")));
        }
        Ok(self.eval_piece(self.piece_of(x), x, 0).remove(0))
    }

    /// Basis row at `x` clamped into range, warning when clamping occurs.
    pub fn eval_clamped(&self, x: f64) -> DVector<f64> {
        let (lo, hi) = self.range();
        let xc = x.clamp(lo, hi);
        if xc != x {
            log::warn!("spline evaluated at {x}, outside [{lo}, {hi}]; clamped");
        }
        self.eval_piece(self.piece_of(xc), xc, 0).remove(0)
    }

    /// Design matrix with one basis row per point.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.dim());
        for (i, &x) in xs.iter().enumerate() {
            m.row_mut(i).copy_from(&self.eval_clamped(x).transpose());
        }
        m
    }
}

/// Nonzero B-spline values and derivatives on knot span `span`
/// (`ders[k][j]` is the k-th derivative of basis `span - DEGREE + j`).
fn basis_derivatives(knots: &[f64], span: usize, x: f64, order: usize) -> Vec<[f64; DEGREE + 1]> {
    let p = DEGREE;
    let mut ndu = [[0.0f64; DEGREE + 1]; DEGREE + 1];
    let mut left = [0.0f64; DEGREE + 1];
    let mut right = [0.0f64; DEGREE + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let order = order.min(p);
    let mut ders = vec![[0.0f64; DEGREE + 1]; order + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = [[0.0f64; DEGREE + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=order {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=order {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

/// Covariance attached to a spline first stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplineCovariance {
    /// HC0 sandwich, matching the joint OLS first stage.
    #[default]
    Robust,
    /// `s^2 (B'B)^{-1}` with `s^2 = RSS / (n - p)`.
    Classical,
}

/// Least-squares cubic spline of `d` on `z` with the HC0 covariance.
pub fn spline_gam_fit(z: &[f64], d: &[f64], basis: &SplineBasis) -> Result<FirstStageFit> {
    spline_gam_fit_with(z, d, basis, SplineCovariance::Robust)
}

pub fn spline_gam_fit_with(z: &[f64], d: &[f64], basis: &SplineBasis, cov: SplineCovariance) -> Result<FirstStageFit> {
    if z.len() != d.len() {
        return Err(Error::SizeMismatch(format!("{} points but {} outcomes", z.len(), d.len())));
    }
    let (lo, hi) = basis.range();
    if let Some(x) = z.iter().find(|x| !(**x >= lo && **x <= hi)) {
        return Err(Error::OutOfRange(format!("{x} outside spline range [{lo}, {hi}]")));
    }
    let design = OlsDesign::new(basis.design(z))?;
    let y = DVector::from_column_slice(d);
    let fit = design.fit(&[&y])?;
    let cov_gamma = match cov {
        SplineCovariance::Robust => fit.cov_gamma,
        SplineCovariance::Classical => {
            let dof = (z.len() - basis.dim()) as f64;
            design.gram_inv() * (fit.residuals.norm_squared() / dof)
        }
    };
    FirstStageFit::new(fit.gamma_hat, cov_gamma, fit.residuals, FeatureMap::Spline(basis.clone()), 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_basis() -> SplineBasis {
        SplineBasis::uniform(0.0, 10.0, 0.5).unwrap()
    }

    #[test]
    fn dimension_matches_piecewise_cubic_count() {
        // 20 cubics (80 coefficients) minus 3 continuity conditions at 19 knots
        assert_eq!(unit_basis().dim(), 80 - 57);
    }

    #[test]
    fn partition_of_unity() {
        let b = unit_basis();
        for i in 0..=200 {
            let x = i as f64 * 0.05;
            assert!((b.eval(x).unwrap().sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = unit_basis();
        let x = 3.37;
        let piece = b.piece_of(x);
        let d = b.eval_piece(piece, x, 2);
        let h = 1e-5;
        let up = b.eval_piece(piece, x + h, 1);
        let dn = b.eval_piece(piece, x - h, 1);
        let fd1 = (&up[0] - &dn[0]) / (2.0 * h);
        let fd2 = (&up[1] - &dn[1]) / (2.0 * h);
        assert!((&d[1] - fd1).amax() < 1e-6);
        assert!((&d[2] - fd2).amax() < 1e-5);
    }

    #[test]
    fn constant_and_linear_reproduction() {
        let b = unit_basis();
        let z: Vec<f64> = (0..400).map(|i| i as f64 * 10.0 / 399.0).collect();
        let c = vec![0.37; z.len()];
        let fit = spline_gam_fit(&z, &c, &b).unwrap();
        let lin = spline_gam_fit(&z, &z, &b).unwrap();
        for i in 0..=1000 {
            let x = i as f64 * 0.01;
            assert!((fit.predict(&[x])[0] - 0.37).abs() < 1e-8);
            assert!((lin.predict(&[x])[0] - x).abs() < 1e-8);
        }
    }

    #[test]
    fn doubled_knots_give_c1_pieces() {
        let b = unit_basis().with_continuity(1).unwrap();
        assert_eq!(b.dim(), 80 - 2 * 19);
        assert_eq!(b.continuity(), 1);
        for i in 0..=200 {
            let x = i as f64 * 0.05;
            assert!((b.eval(x).unwrap().sum() - 1.0).abs() < 1e-12);
        }
        let z: Vec<f64> = (0..600).map(|i| i as f64 * 10.0 / 599.0).collect();
        let cube: Vec<f64> = z.iter().map(|x| 0.01 * x * x * x - x).collect();
        let fit = spline_gam_fit(&z, &cube, &b).unwrap();
        for i in 0..=100 {
            let x = i as f64 * 0.1;
            assert!((fit.predict(&[x])[0] - (0.01 * x * x * x - x)).abs() < 1e-8);
        }
        // first derivative joins, second generally does not
        let g = DVector::from_fn(b.dim(), |i, _| ((i * 7919) % 13) as f64 - 6.0);
        let mut second_jump: f64 = 0.0;
        for piece in 1..b.pieces() {
            let knot = b.breakpoints()[piece];
            let l = b.eval_piece(piece - 1, knot, 2);
            let r = b.eval_piece(piece, knot, 2);
            assert!((l[0].dot(&g) - r[0].dot(&g)).abs() < 1e-9);
            assert!((l[1].dot(&g) - r[1].dot(&g)).abs() < 1e-8);
            second_jump = second_jump.max((l[2].dot(&g) - r[2].dot(&g)).abs());
        }
        assert!(second_jump > 1e-3);
        assert!(unit_basis().with_continuity(3).is_err());
    }

    #[test]
    fn out_of_range_is_reported() {
        let b = unit_basis();
        assert!(matches!(b.eval(10.5), Err(Error::OutOfRange(_))));
        assert_eq!(b.eval_clamped(10.5), b.eval(10.0).unwrap());
        assert!(matches!(spline_gam_fit(&[11.0; 30], &[0.0; 30], &b), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn recovers_bernoulli_probability_curve() {
        let b = unit_basis();
        let mut rng = Stream::new(2024).rng();
        let n = 5000;
        let z: Vec<f64> = (0..n).map(|_| 10.0 * rng.random::<f64>()).collect();
        let p = |x: f64| (std::f64::consts::PI * x).sin().powi(2);
        let d: Vec<f64> = z.iter().map(|&x| f64::from(rng.random::<f64>() < p(x))).collect();
        let fit = spline_gam_fit(&z, &d, &b).unwrap();
        let worst = (0..=1000)
            .map(|i| i as f64 * 0.01)
            .map(|x| (fit.predict(&[x])[0] - p(x)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "max error {worst}");
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 32, rng_seed: proptest::test_runner::RngSeed::Fixed(3), ..ProptestConfig::default() })]
        #[test]
        fn fitted_curve_is_c2_at_knots(coefs in prop::collection::vec(-5.0f64..5.0, 23)) {
            let b = unit_basis();
            let g = DVector::from_vec(coefs);
            for piece in 1..b.pieces() {
                let knot = b.breakpoints()[piece];
                let left = b.eval_piece(piece - 1, knot, 2);
                let right = b.eval_piece(piece, knot, 2);
                for k in 0..3 {
                    let l = left[k].dot(&g);
                    let r = right[k].dot(&g);
                    prop_assert!((l - r).abs() <= 1e-8 * (1.0 + l.abs()), "order {} at {}: {} vs {}", k, knot, l, r);
                }
            }
        }
    }
}
