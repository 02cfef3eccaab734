//! Long-run covariance with the quadratic spectral kernel.

use nalgebra::DMatrix;

use crate::linalg;

pub fn qs_kernel(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let a = 6.0 * std::f64::consts::PI * x / 5.0;
    if a.abs() < 1e-2 {
        // series form avoids cancellation near zero
        let a2 = a * a;
        return 1.0 - a2 / 10.0 + a2 * a2 / 280.0;
    }
    25.0 / (12.0 * std::f64::consts::PI.powi(2) * x * x) * (a.sin() / a - a.cos())
}

/// `Gamma_0 + sum_j k(j/b) (Gamma_j + Gamma_j')` over all lags, where
/// `Gamma_j = (1/n) sum_i s_i s_{i-j}'`. Scores are used as given (they are
/// centered at the optimum they come from). A zero bandwidth gives the plain
/// outer-product covariance.
pub fn hac_covariance_with_bandwidth(scores: &DMatrix<f64>, bandwidth: f64) -> DMatrix<f64> {
    let n = scores.nrows();
    let mut out = scores.tr_mul(scores);
    if bandwidth > 0.0 {
        for j in 1..n {
            let w = qs_kernel(j as f64 / bandwidth);
            if w == 0.0 {
                continue;
            }
            let lead = scores.rows(j, n - j);
            let lag = scores.rows(0, n - j);
            let gamma = lead.tr_mul(&lag);
            out += (&gamma + gamma.transpose()) * w;
        }
    }
    out /= n.max(1) as f64;
    linalg::psd_repair(&out).unwrap_or_else(|_| clip_eigen(&out))
}

fn clip_eigen(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = linalg::symmetrize(m).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    linalg::symmetrize(&(q * DMatrix::from_diagonal(&clipped) * q.transpose()))
}

/// HAC covariance with bandwidth `(3/4) n^{1/3}`.
pub fn hac_covariance(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let n = scores.nrows() as f64;
    hac_covariance_with_bandwidth(scores, 0.75 * n.cbrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn kernel_shape() {
        assert_eq!(qs_kernel(0.0), 1.0);
        assert!((qs_kernel(1e-6) - 1.0).abs() < 1e-6);
        assert!(qs_kernel(50.0).abs() < 1e-3);
    }

    #[test]
    fn zero_scores_give_zero() {
        let s = DMatrix::<f64>::zeros(50, 3);
        assert_eq!(hac_covariance(&s), DMatrix::zeros(3, 3));
    }

    #[test]
    fn white_noise_matches_sample_covariance() {
        let mut rng = Stream::new(5).rng();
        let n = 20_000;
        let s = DMatrix::from_fn(n, 2, |_, j| {
            let z: f64 = rng.sample(StandardNormal);
            if j == 0 { z } else { 2.0 * z }
        });
        let hac = hac_covariance(&s);
        let plain = s.tr_mul(&s) / n as f64;
        for i in 0..2 {
            assert!((hac[(i, i)] / plain[(i, i)] - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn ar1_long_run_variance() {
        let mut rng = Stream::new(6).rng();
        let n = 50_000;
        let rho = 0.5;
        let mut x = 0.0;
        let mut s = DMatrix::zeros(n, 1);
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            x = rho * x + e;
            s[(i, 0)] = x;
        }
        // innovation variance 1 gives marginal variance 1/(1-rho^2)
        let sigma2 = 1.0 / (1.0 - rho * rho);
        let target = sigma2 * (1.0 + rho) / (1.0 - rho);
        let got = hac_covariance(&s)[(0, 0)];
        assert!((got / target - 1.0).abs() < 0.1, "{got} vs {target}");
    }

    #[test]
    fn zero_bandwidth_is_outer_product() {
        let mut rng = Stream::new(7).rng();
        let s = DMatrix::from_fn(200, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let plain = s.tr_mul(&s) / 200.0;
        assert!((hac_covariance_with_bandwidth(&s, 0.0) - &plain).amax() < 1e-12);
        assert!((hac_covariance_with_bandwidth(&s, 1e-9) - &plain).amax() < 1e-9);
    }
}
