use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::instruments::{prune_collinear, select, InstrumentSet, PRUNE_TOL};
use super::{build_instruments, SchoolNetwork};
use crate::error::{Error, Result};
use crate::first_stage::OlsDesign;
use crate::inference::{confidence_interval, normal_quantile, DebiasMode, Interval, PsiSample, Simulation, TwoStageModel};
use crate::linalg;
use crate::rng::{tag, Stream};
use crate::second_stage::{iv_estimate, IvFit, LinearIvModel};

/// First-stage F below this marks the excluded instruments as weak.
const WEAK_F: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerMethod {
    Ols,
    Civ,
    Oiv,
    Ivmi,
    Divmi,
}

impl PeerMethod {
    pub const ALL: [PeerMethod; 5] = [PeerMethod::Ols, PeerMethod::Civ, PeerMethod::Oiv, PeerMethod::Ivmi, PeerMethod::Divmi];

    pub fn as_str(self) -> &'static str {
        match self {
            PeerMethod::Ols => "ols",
            PeerMethod::Civ => "civ",
            PeerMethod::Oiv => "oiv",
            PeerMethod::Ivmi => "ivmi",
            PeerMethod::Divmi => "divmi",
        }
    }
}

impl fmt::Display for PeerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PeerMethod::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown peer method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeerDiagnostics {
    pub n: usize,
    pub groups: usize,
    /// Nodes without friends; their peer averages are zero.
    pub isolates: usize,
    /// Excluded instruments actually used.
    pub instruments: usize,
    pub pruned: Vec<String>,
    pub first_stage_f: Option<f64>,
    pub weak_instrument: bool,
    pub kappa: Option<usize>,
    pub bound_hit_draws: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeerEstimate {
    pub method: PeerMethod,
    pub fixed_effects: bool,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub intervals: Vec<Interval>,
    pub theta1: f64,
    pub theta2: Vec<f64>,
    pub theta3: Vec<f64>,
    pub intercept: Option<f64>,
    /// Recovered group effects under fixed effects.
    pub alpha: Option<Vec<f64>>,
    /// `1 / (1 - theta1)`, absent when `|theta1| >= 1`.
    pub multiplier: Option<f64>,
    pub diagnostics: PeerDiagnostics,
}

/// Classical and debiased many-instrument estimates from one simulation.
#[derive(Clone, Debug)]
pub struct ManyIvResult {
    pub classical: PeerEstimate,
    pub debiased: PeerEstimate,
    pub psi: PsiSample,
    pub psi_star: PsiSample,
}

pub fn social_multiplier(theta1: f64) -> Result<f64> {
    if theta1.abs() < 1.0 {
        Ok(1.0 / (1.0 - theta1))
    } else {
        Err(Error::OutOfRange(format!("peer effect {theta1} gives no unique equilibrium")))
    }
}

/// Excluded instruments after demeaning and pruning against the exogenous
/// regressors, factored once for any number of outcomes.
#[derive(Clone, Debug)]
pub struct Instrumented {
    pub design: Arc<OlsDesign>,
    pub exog_cols: Vec<usize>,
    pub names: Vec<String>,
    pub pruned: Vec<String>,
}

/// Everything about the regression that does not depend on the outcome:
/// row-normalized networks, exogenous regressors `[X, G~X]` (plus a
/// constant without fixed effects) and the group layout.
#[derive(Clone, Debug)]
pub struct PeerDesign {
    fixed_effects: bool,
    gt: Vec<DMatrix<f64>>,
    /// `(first row, size)` of every group.
    ranges: Vec<(usize, usize)>,
    k: usize,
    exog_raw: DMatrix<f64>,
    exog: Arc<OlsDesign>,
    names: Vec<String>,
    isolates: usize,
}

impl PeerDesign {
    pub fn new(net: &SchoolNetwork, fixed_effects: bool) -> Result<Self> {
        let k = net.covariates.len();
        let n = net.n();
        let width = 2 * k + usize::from(!fixed_effects);
        let mut exog_raw = DMatrix::zeros(n, width);
        let mut gt = Vec::with_capacity(net.groups.len());
        let mut ranges = Vec::with_capacity(net.groups.len());
        let mut row = 0;
        for g in &net.groups {
            let m = g.row_normalized();
            let nr = g.len();
            exog_raw.view_mut((row, 0), (nr, k)).copy_from(&g.x);
            exog_raw.view_mut((row, k), (nr, k)).copy_from(&(&m * &g.x));
            if !fixed_effects {
                exog_raw.view_mut((row, 2 * k), (nr, 1)).fill(1.0);
            }
            ranges.push((row, nr));
            gt.push(m);
            row += nr;
        }
        let mut names = vec!["peer".to_string()];
        names.extend(net.covariates.iter().cloned());
        names.extend(net.covariates.iter().map(|c| format!("G_{c}")));
        if !fixed_effects {
            names.push("intercept".into());
        }
        let exog = if fixed_effects { demean(&exog_raw, &ranges) } else { exog_raw.clone() };
        Ok(PeerDesign {
            fixed_effects,
            gt,
            ranges,
            k,
            exog_raw,
            exog: Arc::new(OlsDesign::new(exog)?),
            names,
            isolates: net.isolates(),
        })
    }

    pub fn n(&self) -> usize {
        self.exog_raw.nrows()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn group_ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ranges.iter().copied()
    }

    /// Within-group demeaning under fixed effects, identity otherwise.
    fn transform(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.fixed_effects {
            demean(m, &self.ranges)
        } else {
            m.clone()
        }
    }

    fn transform_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.transform(&m).column(0).into_owned()
    }

    /// Stacked outcome and peer average `G~ y`, untransformed.
    fn outcome(&self, ys: &[DVector<f64>]) -> Result<(DVector<f64>, DVector<f64>)> {
        if ys.len() != self.gt.len() {
            return Err(Error::SizeMismatch(format!("{} outcome vectors for {} groups", ys.len(), self.gt.len())));
        }
        let mut y = DVector::zeros(self.n());
        let mut gy = DVector::zeros(self.n());
        for ((s, len), (m, yr)) in self.group_ranges().zip(self.gt.iter().zip(ys)) {
            if yr.len() != len {
                return Err(Error::SizeMismatch(format!("group with {len} nodes has {} outcomes", yr.len())));
            }
            y.rows_mut(s, len).copy_from(yr);
            gy.rows_mut(s, len).copy_from(&(m * yr));
        }
        Ok((y, gy))
    }

    /// Demeans and prunes `excluded` against the exogenous regressors.
    pub fn instrumented(&self, excluded: &InstrumentSet) -> Result<Instrumented> {
        let ex = self.transform(&excluded.matrix);
        let keep = prune_collinear(Some(self.exog.z()), &ex, PRUNE_TOL)?;
        let kept = select(&ex, &excluded.names, &keep);
        let q = kept.matrix.ncols();
        if q == 0 {
            return Err(Error::RankDeficient { null_dim: 1 });
        }
        let exog = self.exog.z();
        let mut z = DMatrix::zeros(self.n(), q + exog.ncols());
        z.columns_mut(0, q).copy_from(&kept.matrix);
        z.columns_mut(q, exog.ncols()).copy_from(exog);
        let mut pruned = excluded.pruned.clone();
        pruned.extend(kept.pruned);
        Ok(Instrumented {
            design: Arc::new(OlsDesign::new(z)?),
            exog_cols: (q..q + exog.ncols()).collect(),
            names: kept.names,
            pruned,
        })
    }

    /// Instruments `G~^2 X, ..., G~^{2+k_max} X` for this design.
    pub fn network_instruments(&self, net: &SchoolNetwork, k_max: usize) -> Result<Instrumented> {
        self.instrumented(&build_instruments(net, k_max)?)
    }

    fn first_stage_f(&self, inst: &Instrumented, gy: &DVector<f64>) -> f64 {
        let resid = |d: &OlsDesign| {
            let z = d.z();
            (gy - z * (d.gram_inv() * z.tr_mul(gy))).norm_squared()
        };
        let rss_u = resid(&inst.design);
        let rss_r = resid(&self.exog);
        let q = inst.names.len() as f64;
        let absorbed = if self.fixed_effects { self.gt.len() } else { 0 };
        let df = self.n() as f64 - inst.design.z().ncols() as f64 - absorbed as f64;
        ((rss_r - rss_u) / q) / (rss_u / df)
    }

    fn regressors(&self, gy: &DVector<f64>) -> DMatrix<f64> {
        let exog = self.exog.z();
        let mut x = DMatrix::zeros(self.n(), 1 + exog.ncols());
        x.set_column(0, gy);
        x.columns_mut(1, exog.ncols()).copy_from(exog);
        x
    }

    fn estimate(
        &self,
        method: PeerMethod,
        coef: &DVector<f64>,
        cov: &DMatrix<f64>,
        intervals: Vec<Interval>,
        ys: &[DVector<f64>],
        diagnostics: PeerDiagnostics,
    ) -> Result<PeerEstimate> {
        let k = self.k;
        let (y, gy) = self.outcome(ys)?;
        let alpha = if self.fixed_effects {
            let fitted = &self.exog_raw * coef.rows(1, 2 * k) + &gy * coef[0];
            let resid = y - fitted;
            Some(self.group_ranges().map(|(s, len)| resid.rows(s, len).mean()).collect())
        } else {
            None
        };
        let theta1 = coef[0];
        Ok(PeerEstimate {
            method,
            fixed_effects: self.fixed_effects,
            names: self.names.clone(),
            coefficients: coef.iter().copied().collect(),
            std_errors: cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
            intervals,
            theta1,
            theta2: coef.rows(1, k).iter().copied().collect(),
            theta3: coef.rows(1 + k, k).iter().copied().collect(),
            intercept: (!self.fixed_effects).then(|| coef[1 + 2 * k]),
            alpha,
            multiplier: social_multiplier(theta1).ok(),
            diagnostics,
        })
    }

    fn diagnostics(&self, inst: Option<(&Instrumented, &DVector<f64>)>) -> PeerDiagnostics {
        let (instruments, pruned, f) = match inst {
            Some((i, gy)) => (i.names.len(), i.pruned.clone(), Some(self.first_stage_f(i, gy))),
            None => (0, vec![], None),
        };
        PeerDiagnostics {
            n: self.n(),
            groups: self.gt.len(),
            isolates: self.isolates,
            instruments,
            pruned,
            first_stage_f: f,
            weak_instrument: f.is_some_and(|f| !(f >= WEAK_F)),
            kappa: None,
            bound_hit_draws: None,
        }
    }

    pub fn ols(&self, ys: &[DVector<f64>], level: f64) -> Result<PeerEstimate> {
        let (y, gy) = self.outcome(ys)?;
        let (y, gy) = (self.transform_vec(&y), self.transform_vec(&gy));
        let fit = OlsDesign::new(self.regressors(&gy))?.fit(&[&y])?;
        let intervals = normal_intervals(&fit.gamma_hat, &fit.cov_gamma, level)?;
        self.estimate(PeerMethod::Ols, &fit.gamma_hat, &fit.cov_gamma, intervals, ys, self.diagnostics(None))
    }

    fn iv_fit(&self, inst: &Instrumented, ys: &[DVector<f64>]) -> Result<(IvFit, DVector<f64>, DVector<f64>)> {
        let (y, gy) = self.outcome(ys)?;
        let (y, gy) = (self.transform_vec(&y), self.transform_vec(&gy));
        let model = LinearIvModel::with_design(
            Arc::clone(&inst.design),
            y.clone(),
            DMatrix::from_column_slice(gy.len(), 1, gy.as_slice()),
            inst.exog_cols.clone(),
        )?;
        let (_, _, fit) = iv_estimate(&model)?;
        Ok((fit, y, gy))
    }

    /// 2SLS with an HC0 sandwich and normal intervals.
    pub fn tsls(&self, method: PeerMethod, inst: &Instrumented, ys: &[DVector<f64>], level: f64) -> Result<PeerEstimate> {
        let (fit, y, gy) = self.iv_fit(inst, ys)?;
        let theta = &fit.theta_hat;
        let u = &y - self.regressors(&gy) * theta;
        let xh = &fit.x_hat;
        let bread = linalg::checked_inverse(&xh.tr_mul(xh)).map_err(|_| Error::RankDeficient { null_dim: 1 })?;
        let w: Vec<f64> = u.iter().map(|v| v * v).collect();
        let cov = linalg::symmetrize(&(&bread * linalg::weighted_gram(xh, &w) * &bread));
        let intervals = normal_intervals(theta, &cov, level)?;
        let diag = self.diagnostics(Some((inst, &gy)));
        if diag.weak_instrument {
            log::warn!("{method}: first-stage F = {:.2}", diag.first_stage_f.unwrap_or(f64::NAN));
        }
        self.estimate(method, theta, &cov, intervals, ys, diag)
    }

    /// Plug-in instrument `G~ (I - t1 G~)^{-1} (alpha + X t2 + G~X t3)` from
    /// a preliminary estimate.
    pub fn optimal_instrument(&self, prelim: &PeerEstimate) -> Result<InstrumentSet> {
        let t1 = prelim.theta1;
        if !(t1.abs() < 1.0) {
            return Err(Error::NonInvertible { theta1: t1 });
        }
        if prelim.coefficients.len() != self.names.len() || prelim.fixed_effects != self.fixed_effects {
            return Err(Error::InvalidInput("preliminary estimate comes from a different design".into()));
        }
        let k = self.k;
        let coef = DVector::from_column_slice(&prelim.coefficients);
        let index = &self.exog_raw.columns(0, 2 * k) * coef.rows(1, 2 * k);
        let mut col = DVector::zeros(self.n());
        for (r, ((s, len), m)) in self.group_ranges().zip(&self.gt).enumerate() {
            let a = match (&prelim.alpha, prelim.intercept) {
                (Some(alpha), _) => alpha[r],
                (None, Some(c)) => c,
                (None, None) => 0.0,
            };
            let v = index.rows(s, len).add_scalar(a);
            let lhs = DMatrix::identity(len, len) - m * t1;
            let sol = lhs.lu().solve(&v).ok_or(Error::NonInvertible { theta1: t1 })?;
            col.rows_mut(s, len).copy_from(&(m * sol));
        }
        Ok(InstrumentSet {
            matrix: DMatrix::from_column_slice(col.len(), 1, col.as_slice()),
            names: vec!["optimal".into()],
            pruned: vec![],
            candidates: 1,
        })
    }

    /// IV with many instruments plus its debiased counterpart. Intervals come
    /// from the simulated sample; the debiased one is centered at its own
    /// estimate.
    pub fn many_iv(
        &self,
        inst: &Instrumented,
        ys: &[DVector<f64>],
        kappa: usize,
        seed: u64,
        level: f64,
    ) -> Result<ManyIvResult> {
        let (fit, _, gy) = self.iv_fit(inst, ys)?;
        let n = self.n();
        let stream = Stream::new(seed);
        let theta = fit.theta_hat.clone();
        let parts = fit.parts_at(&theta)?;
        let sim = Simulation::run(&parts, n, kappa, stream)?;
        let psi = sim.psi(&parts)?;
        let cov = sim.variance(&parts)?;
        let theta_star = sim.debiased(&theta, &parts, DebiasMode::Mean);
        let parts_star = fit.parts_at(&theta_star)?;
        let sim_star = Simulation::run(&parts_star, n, kappa, stream.child(tag::STAR))?;
        let psi_star = sim_star.centered_psi(&parts_star, DebiasMode::Mean)?;
        let cov_star = sim_star.variance(&parts_star)?;

        let mut diag = self.diagnostics(Some((inst, &gy)));
        diag.kappa = Some(kappa);
        diag.bound_hit_draws = Some(sim.bound_hit_draws);
        let classical = self.estimate(
            PeerMethod::Ivmi,
            &theta,
            &cov,
            confidence_interval(&theta, &psi, level)?,
            ys,
            diag.clone(),
        )?;
        diag.bound_hit_draws = Some(sim_star.bound_hit_draws);
        let debiased = self.estimate(
            PeerMethod::Divmi,
            &theta_star,
            &cov_star,
            confidence_interval(&theta_star, &psi_star, level)?,
            ys,
            diag,
        )?;
        Ok(ManyIvResult {
            classical,
            debiased,
            psi,
            psi_star,
        })
    }
}

fn demean(m: &DMatrix<f64>, ranges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut out = m.clone();
    for &(s, len) in ranges {
        let mut block = out.rows_mut(s, len);
        for mut col in block.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
    }
    out
}

fn normal_intervals(theta: &DVector<f64>, cov: &DMatrix<f64>, level: f64) -> Result<Vec<Interval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::DomainError(format!("level {level} not in (0,1)")));
    }
    let z = normal_quantile(0.5 + level / 2.0);
    Ok(theta
        .iter()
        .zip(cov.diagonal().iter())
        .map(|(&t, &v)| {
            let h = z * v.max(0.0).sqrt();
            Interval {
                lower: t - h,
                upper: t + h,
                level,
            }
        })
        .collect())
}

pub fn ols_estimate(net: &SchoolNetwork, fixed_effects: bool) -> Result<PeerEstimate> {
    PeerDesign::new(net, fixed_effects)?.ols(&net.outcomes(), 0.95)
}

/// 2SLS instrumenting `G~y` with `G~^2 X`.
pub fn civ_estimate(net: &SchoolNetwork, fixed_effects: bool) -> Result<PeerEstimate> {
    let design = PeerDesign::new(net, fixed_effects)?;
    let inst = design.network_instruments(net, 0)?;
    design.tsls(PeerMethod::Civ, &inst, &net.outcomes(), 0.95)
}

pub fn oiv_estimate(net: &SchoolNetwork, civ: &PeerEstimate, fixed_effects: bool) -> Result<PeerEstimate> {
    let design = PeerDesign::new(net, fixed_effects)?;
    let inst = design.instrumented(&design.optimal_instrument(civ)?)?;
    design.tsls(PeerMethod::Oiv, &inst, &net.outcomes(), 0.95)
}

pub fn ivmi_estimate(
    net: &SchoolNetwork,
    k_max: usize,
    fixed_effects: bool,
    kappa: usize,
    seed: u64,
    level: f64,
) -> Result<ManyIvResult> {
    let design = PeerDesign::new(net, fixed_effects)?;
    let inst = design.network_instruments(net, k_max)?;
    design.many_iv(&inst, &net.outcomes(), kappa, seed, level)
}
