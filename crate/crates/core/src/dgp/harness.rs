use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_model, generate, DgpSpec};
use crate::error::{Error, Result};
use crate::inference::{
    curve_distance, linear_grid, normal_quantile, quantile_sorted, AsymptoticLaw, DebiasMode, EmpiricalCdf, Interval,
    Simulation,
};
use crate::rng::{tag, Stream};
use crate::second_stage::constraint_check;

/// Nodes of the common grid the averaged CDF curves are evaluated on.
pub const CDF_GRID_POINTS: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub reps: usize,
    pub kappa: usize,
    pub seed: u64,
    pub level: f64,
    pub mode: DebiasMode,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { reps: 1000, kappa: 1000, seed: 0, level: 0.95, mode: DebiasMode::Mean }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalMethod {
    /// Quantiles of the simulated law around the plug-in estimate.
    Sim,
    /// Zero-mean normal approximation around the plug-in estimate.
    Nor,
    /// Centered simulated law around the debiased estimate.
    DSim,
}

/// Two-sided interval plus the one-sided bounds taken from the same law:
/// `(-inf, lower_sided]` and `[upper_sided, inf)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub two_sided: Interval,
    pub lower_sided: f64,
    pub upper_sided: f64,
}

impl Bounds {
    pub fn covers(&self, x: f64) -> [bool; 3] {
        [self.two_sided.contains(x), x <= self.lower_sided, x >= self.upper_sided]
    }
}

/// Quantile `q` of `center - X / sqrt(n)` where `X` follows `law`.
fn implied_quantiles(law: &AsymptoticLaw, center: f64, root_n: f64, qs: &[f64]) -> Result<Vec<f64>> {
    match law {
        AsymptoticLaw::Simulated(e) => {
            let t: Vec<f64> = e.sorted().iter().rev().map(|x| center - x / root_n).collect();
            qs.iter().map(|&q| quantile_sorted(&t, q)).collect()
        }
        AsymptoticLaw::Normal { mean, sd } => {
            Ok(qs.iter().map(|&q| center - (mean + sd * normal_quantile(1.0 - q)) / root_n).collect())
        }
    }
}

fn law_bounds(law: &AsymptoticLaw, center: f64, root_n: f64, level: f64) -> Result<Bounds> {
    let tail = (1.0 - level) / 2.0;
    let q = implied_quantiles(law, center, root_n, &[tail, 1.0 - tail, level, 1.0 - level])?;
    Ok(Bounds {
        two_sided: Interval { lower: q[0], upper: q[1], level },
        lower_sided: q[2],
        upper_sided: q[3],
    })
}

fn law_moments(law: &AsymptoticLaw) -> (f64, f64) {
    match law {
        AsymptoticLaw::Simulated(e) => {
            let s = e.sorted();
            let m = s.iter().sum::<f64>() / s.len() as f64;
            let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / s.len() as f64;
            (m, v.sqrt())
        }
        AsymptoticLaw::Normal { mean, sd } => (*mean, *sd),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub n: usize,
    pub theta_hat: Vec<f64>,
    /// Debiased estimate under the configured correction.
    pub theta_star: Vec<f64>,
    pub theta_star_mean: Vec<f64>,
    pub theta_star_median: Vec<f64>,
    /// Estimated standard error of `theta_hat`.
    pub std_error: Vec<f64>,
    pub sim: Vec<Bounds>,
    pub nor: Vec<Bounds>,
    pub dsim: Vec<Bounds>,
    /// Mean and standard deviation of the simulated law of
    /// `sqrt(n)(theta_hat - theta_0)`.
    pub psi_mean: Vec<f64>,
    pub psi_sd: Vec<f64>,
    pub bound_hit_share: f64,
    pub constraint_exhausted: bool,
}

impl ReplicationRecord {
    fn bounds(&self, method: IntervalMethod) -> &[Bounds] {
        match method {
            IntervalMethod::Sim => &self.sim,
            IntervalMethod::Nor => &self.nor,
            IntervalMethod::DSim => &self.dsim,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub kind: String,
    pub message: String,
}

/// Per-replication estimated laws, one triple `(F_hat, H_hat, F_hat_star)`
/// per coordinate.
struct Laws(Vec<[AsymptoticLaw; 3]>);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub mae: f64,
}

impl Summary {
    /// Moments around `truth` with the population standard deviation, so
    /// that `rmse^2 = bias^2 + sd^2`.
    pub fn of(values: &[f64], truth: f64) -> Self {
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
        let rmse = (values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / m).sqrt();
        let mae = values.iter().map(|v| (v - truth).abs()).sum::<f64>() / m;
        Summary { mean, bias: mean - truth, sd, rmse, mae }
    }
}

/// Averaged CDF curves of one coordinate on a common grid, with their
/// L1 distances to the Monte Carlo truth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveSet {
    pub grid: Vec<f64>,
    /// Empirical CDF of `sqrt(n)(theta_hat - theta_0)` over replications.
    pub f0: Vec<f64>,
    pub h_n: Vec<f64>,
    pub f_n: Vec<f64>,
    /// Empirical CDF of `sqrt(n)(theta_star - theta_0)`.
    pub f0_star: Vec<f64>,
    pub f_n_star: Vec<f64>,
    pub w_f_n: f64,
    pub w_h_n: f64,
    pub w_f_n_star: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McResult {
    pub spec: DgpSpec,
    pub config: McConfig,
    pub theta0: Vec<f64>,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<ReplicationFailure>,
    pub classical: Vec<Summary>,
    pub debiased: Vec<Summary>,
    pub debiased_mean: Vec<Summary>,
    pub debiased_median: Vec<Summary>,
    pub curves: Vec<CurveSet>,
    /// Replications whose first-stage redraws mostly hit parameter bounds.
    pub constraint_exhausted: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub two_sided: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Share of replications whose intervals contain the truth, per coordinate.
pub fn coverage(result: &McResult, method: IntervalMethod, level: f64) -> Result<Vec<Coverage>> {
    let recorded = result.config.level;
    if (recorded - level).abs() > 1e-12 {
        return Err(Error::LevelMismatch { recorded, requested: level });
    }
    if result.records.is_empty() {
        return Err(Error::EmptySample);
    }
    let m = result.records.len() as f64;
    Ok((0..result.theta0.len())
        .map(|k| {
            let mut hits = [0usize; 3];
            for r in &result.records {
                for (h, c) in hits.iter_mut().zip(r.bounds(method)[k].covers(result.theta0[k])) {
                    *h += usize::from(c);
                }
            }
            Coverage { two_sided: hits[0] as f64 / m, lower: hits[1] as f64 / m, upper: hits[2] as f64 / m }
        })
        .collect())
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn replicate(spec: &DgpSpec, cfg: &McConfig, rep: usize, stream: Stream) -> Result<(ReplicationRecord, Laws)> {
    let data = generate(spec, stream.child(tag::DATA))?;
    let model = fit_model(spec, &data)?;
    let n = model.n();
    let root_n = (n as f64).sqrt();
    let theta_hat = model.theta_hat().clone();
    let dim = theta_hat.len();
    let parts = model.parts_at(&theta_hat)?;
    let sim = Simulation::run(&parts, n, cfg.kappa, stream.child(tag::RUN))?;
    let star_mean = sim.debiased(&theta_hat, &parts, DebiasMode::Mean);
    let star_median = sim.debiased(&theta_hat, &parts, DebiasMode::Median);
    let theta_star = match cfg.mode {
        DebiasMode::Mean => star_mean.clone(),
        DebiasMode::Median => star_median.clone(),
    };
    let (variance, laws) = if parts.cond_variance().is_some() {
        let psi = sim.psi(&parts)?;
        let variance = sim.variance(&parts)?;
        let parts_star = model.parts_at(&theta_star)?;
        let sim_star = Simulation::run(&parts_star, n, cfg.kappa, stream.child(tag::STAR))?;
        let psi_star = sim_star.centered_psi(&parts_star, cfg.mode)?;
        let laws = (0..dim)
            .map(|k| {
                Ok([
                    AsymptoticLaw::Simulated(EmpiricalCdf::from_sorted(psi.sorted_coordinate(k))?),
                    AsymptoticLaw::Normal { mean: 0.0, sd: (n as f64 * variance[(k, k)]).sqrt() },
                    AsymptoticLaw::Simulated(EmpiricalCdf::from_sorted(psi_star.sorted_coordinate(k))?),
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        (variance, laws)
    } else {
        // normal limit: simulated mean shift, sandwich variance
        let variance = model.normal_variance()?;
        let shift = parts.hessian_inv() * sim.omega(cfg.mode);
        let laws = (0..dim)
            .map(|k| {
                let sd = (n as f64 * variance[(k, k)]).sqrt();
                [
                    AsymptoticLaw::Normal { mean: shift[k], sd },
                    AsymptoticLaw::Normal { mean: 0.0, sd },
                    AsymptoticLaw::Normal { mean: 0.0, sd },
                ]
            })
            .collect();
        (variance, laws)
    };
    let mut record = ReplicationRecord {
        rep,
        n,
        theta_hat: to_vec(&theta_hat),
        theta_star: to_vec(&theta_star),
        theta_star_mean: to_vec(&star_mean),
        theta_star_median: to_vec(&star_median),
        std_error: (0..dim).map(|k| variance[(k, k)].max(0.0).sqrt()).collect(),
        sim: Vec::with_capacity(dim),
        nor: Vec::with_capacity(dim),
        dsim: Vec::with_capacity(dim),
        psi_mean: Vec::with_capacity(dim),
        psi_sd: Vec::with_capacity(dim),
        bound_hit_share: sim.bound_hit_draws as f64 / cfg.kappa as f64,
        constraint_exhausted: constraint_check(&sim).is_err(),
    };
    for (k, [f, h, fs]) in laws.iter().enumerate() {
        record.sim.push(law_bounds(f, theta_hat[k], root_n, cfg.level)?);
        record.nor.push(law_bounds(h, theta_hat[k], root_n, cfg.level)?);
        record.dsim.push(law_bounds(fs, theta_star[k], root_n, cfg.level)?);
        let (m, s) = law_moments(f);
        record.psi_mean.push(m);
        record.psi_sd.push(s);
    }
    Ok((record, Laws(laws)))
}

fn averaged(grid: &[f64], laws: &[&AsymptoticLaw]) -> Vec<f64> {
    let m = laws.len() as f64;
    grid.iter().map(|&t| laws.iter().map(|l| l.cdf(t)).sum::<f64>() / m).collect()
}

fn curves(records: &[ReplicationRecord], laws: &[Laws], theta0: &[f64]) -> Result<Vec<CurveSet>> {
    (0..theta0.len())
        .map(|k| {
            let scaled = |v: &dyn Fn(&ReplicationRecord) -> f64| -> Result<EmpiricalCdf> {
                EmpiricalCdf::new(&records.iter().map(|r| (r.n as f64).sqrt() * (v(r) - theta0[k])).collect::<Vec<_>>())
            };
            let f0 = scaled(&|r| r.theta_hat[k])?;
            let f0_star = scaled(&|r| r.theta_star[k])?;
            let lo = f0.sorted()[0].min(f0_star.sorted()[0]);
            let hi = f0.sorted()[f0.len() - 1].max(f0_star.sorted()[f0_star.len() - 1]);
            let (lo, hi) = if hi - lo > 1e-12 { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
            let grid = linear_grid(lo, hi, CDF_GRID_POINTS);
            let f0_curve: Vec<f64> = grid.iter().map(|&t| f0.eval(t)).collect();
            let f0_star_curve: Vec<f64> = grid.iter().map(|&t| f0_star.eval(t)).collect();
            let f_n = averaged(&grid, &laws.iter().map(|l| &l.0[k][0]).collect::<Vec<_>>());
            let h_n = averaged(&grid, &laws.iter().map(|l| &l.0[k][1]).collect::<Vec<_>>());
            let f_n_star = averaged(&grid, &laws.iter().map(|l| &l.0[k][2]).collect::<Vec<_>>());
            Ok(CurveSet {
                w_f_n: curve_distance(&grid, &f_n, &f0_curve),
                w_h_n: curve_distance(&grid, &h_n, &f0_curve),
                w_f_n_star: curve_distance(&grid, &f_n_star, &f0_star_curve),
                grid,
                f0: f0_curve,
                h_n,
                f_n,
                f0_star: f0_star_curve,
                f_n_star,
            })
        })
        .collect()
}

/// Monte Carlo study of one design. Replications run in parallel on
/// independent streams and are aggregated in replication order, so the
/// result does not depend on the thread count.
pub fn run_mc(spec: &DgpSpec, cfg: &McConfig) -> Result<McResult> {
    spec.validate()?;
    if cfg.reps < 2 {
        return Err(Error::InvalidInput(format!("need at least two replications, got {}", cfg.reps)));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::DomainError(format!("level {} not in (0,1)", cfg.level)));
    }
    let root = Stream::new(cfg.seed).child(tag::REPLICATION);
    let outcomes: Vec<Result<(ReplicationRecord, Laws)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| replicate(spec, cfg, r, root.child(r as u64)))
        .collect();
    let mut records = Vec::with_capacity(cfg.reps);
    let mut laws = Vec::with_capacity(cfg.reps);
    let mut failures = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((rec, l)) => {
                records.push(rec);
                laws.push(l);
            }
            Err(e) => {
                log::debug!("replication {rep} failed: {e}");
                failures.push(ReplicationFailure { rep, kind: e.kind().to_string(), message: e.to_string() });
            }
        }
    }
    if !failures.is_empty() {
        log::warn!("{} of {} replications failed and were excluded", failures.len(), cfg.reps);
    }
    if failures.len() * 100 >= cfg.reps {
        return Err(Error::ReplicationBudget { failed: failures.len(), reps: cfg.reps });
    }
    let theta0 = to_vec(&spec.theta0());
    let summarize = |pick: &dyn Fn(&ReplicationRecord) -> &Vec<f64>| -> Vec<Summary> {
        (0..theta0.len())
            .map(|k| Summary::of(&records.iter().map(|r| pick(r)[k]).collect::<Vec<_>>(), theta0[k]))
            .collect()
    };
    let classical = summarize(&|r| &r.theta_hat);
    let debiased = summarize(&|r| &r.theta_star);
    let debiased_mean = summarize(&|r| &r.theta_star_mean);
    let debiased_median = summarize(&|r| &r.theta_star_median);
    let curves = curves(&records, &laws, &theta0)?;
    let constraint_exhausted = records.iter().filter(|r| r.constraint_exhausted).count();
    Ok(McResult {
        spec: spec.clone(),
        config: cfg.clone(),
        theta0,
        records,
        failures,
        classical,
        debiased,
        debiased_mean,
        debiased_median,
        curves,
        constraint_exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{confidence_interval, PsiSample};

    #[test]
    fn summary_identity() {
        let v = [0.9, 1.3, 1.05, 0.7, 1.2];
        let s = Summary::of(&v, 1.0);
        assert!((s.rmse.powi(2) - s.bias.powi(2) - s.sd.powi(2)).abs() < 1e-14);
        assert!(s.mae >= s.bias.abs());
        assert_eq!(s.bias, s.mean - 1.0);
    }

    #[test]
    fn simulated_bounds_match_interval_routine() {
        let draws: Vec<DVector<f64>> = (0..101).map(|i| DVector::from_element(1, (i as f64 * 0.37).sin() * 3.0)).collect();
        let psi = PsiSample { draws, n: 400, kappa: 101, theta_hat: DVector::from_element(1, 2.0), debiased: false };
        let ci = confidence_interval(&psi.theta_hat, &psi, 0.9).unwrap()[0];
        let law = AsymptoticLaw::Simulated(EmpiricalCdf::from_sorted(psi.sorted_coordinate(0)).unwrap());
        let b = law_bounds(&law, 2.0, 20.0, 0.9).unwrap();
        assert_eq!(b.two_sided, ci);
        assert!(b.lower_sided <= b.two_sided.upper && b.upper_sided >= b.two_sided.lower);
    }

    #[test]
    fn normal_bounds_are_symmetric() {
        let law = AsymptoticLaw::Normal { mean: 0.0, sd: 2.0 };
        let b = law_bounds(&law, 1.0, 10.0, 0.95).unwrap();
        assert!((b.two_sided.upper - 1.0 - 0.2 * 1.959963984540054).abs() < 1e-8);
        assert!((b.two_sided.lower + b.two_sided.upper - 2.0).abs() < 1e-12);
        assert!((b.lower_sided - 1.0 - 0.2 * 1.6448536269514722).abs() < 1e-8);
    }

    fn small_run() -> McResult {
        let cfg = McConfig { reps: 20, kappa: 50, seed: 3, level: 0.95, mode: DebiasMode::Mean };
        run_mc(&DgpSpec::a(200), &cfg).unwrap()
    }

    #[test]
    fn coverage_edge_cases() {
        let mut res = small_run();
        assert!(matches!(coverage(&res, IntervalMethod::Sim, 0.9), Err(Error::LevelMismatch { .. })));
        for r in &mut res.records {
            r.sim[0] = Bounds {
                two_sided: Interval { lower: f64::NEG_INFINITY, upper: f64::INFINITY, level: 0.95 },
                lower_sided: f64::INFINITY,
                upper_sided: f64::NEG_INFINITY,
            };
            r.nor[0] = Bounds {
                two_sided: Interval { lower: 10.0, upper: 11.0, level: 0.95 },
                lower_sided: -10.0,
                upper_sided: 10.0,
            };
        }
        let c = coverage(&res, IntervalMethod::Sim, 0.95).unwrap()[0];
        assert_eq!((c.two_sided, c.lower, c.upper), (1.0, 1.0, 1.0));
        let c = coverage(&res, IntervalMethod::Nor, 0.95).unwrap()[0];
        assert_eq!((c.two_sided, c.lower, c.upper), (0.0, 0.0, 0.0));
    }

    #[test]
    fn runs_are_reproducible() {
        let a = small_run();
        let b = small_run();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.failures.is_empty());
        assert_eq!(a.curves[0].grid.len(), CDF_GRID_POINTS);
        assert!(a.curves[0].w_f_n.is_finite() && a.curves[0].w_h_n.is_finite());
        for s in a.classical.iter().chain(&a.debiased) {
            assert!((s.rmse.powi(2) - s.bias.powi(2) - s.sd.powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(small_run);
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(small_run);
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&three).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = McConfig { reps: 1, ..McConfig::default() };
        assert!(run_mc(&DgpSpec::a(200), &cfg).is_err());
        let cfg = McConfig { level: 1.5, ..McConfig::default() };
        assert!(run_mc(&DgpSpec::a(200), &cfg).is_err());
    }
}
