use std::io::Write;

use serde::Serialize;

use super::harness::{coverage, Coverage, IntervalMethod, McResult, Summary};
use crate::error::{Error, Result};

/// One CSV row per replication and coordinate.
pub fn write_replications_csv<W: Write>(result: &McResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rep", "coord", "theta0", "theta_hat", "theta_star", "theta_star_mean", "theta_star_median", "std_error",
        "sim_lower", "sim_upper", "nor_lower", "nor_upper", "dsim_lower", "dsim_upper", "psi_mean", "psi_sd",
        "bound_hit_share", "constraint_exhausted",
    ])?;
    for r in &result.records {
        for k in 0..result.theta0.len() {
            w.write_record(&[
                r.rep.to_string(),
                k.to_string(),
                result.theta0[k].to_string(),
                r.theta_hat[k].to_string(),
                r.theta_star[k].to_string(),
                r.theta_star_mean[k].to_string(),
                r.theta_star_median[k].to_string(),
                r.std_error[k].to_string(),
                r.sim[k].two_sided.lower.to_string(),
                r.sim[k].two_sided.upper.to_string(),
                r.nor[k].two_sided.lower.to_string(),
                r.nor[k].two_sided.upper.to_string(),
                r.dsim[k].two_sided.lower.to_string(),
                r.dsim[k].two_sided.upper.to_string(),
                r.psi_mean[k].to_string(),
                r.psi_sd[k].to_string(),
                r.bound_hit_share.to_string(),
                r.constraint_exhausted.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Averaged CDF curves of coordinate `coord` on their common grid.
pub fn write_cdf_csv<W: Write>(result: &McResult, coord: usize, out: W) -> Result<()> {
    let c = result
        .curves
        .get(coord)
        .ok_or_else(|| Error::InvalidInput(format!("no coordinate {coord}")))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "F0", "Hn", "Fn", "F0_star", "Fn_star"])?;
    for i in 0..c.grid.len() {
        w.write_record(&[
            c.grid[i].to_string(),
            c.f0[i].to_string(),
            c.h_n[i].to_string(),
            c.f_n[i].to_string(),
            c.f0_star[i].to_string(),
            c.f_n_star[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean, bias, sd, RMSE and MAE per coordinate for the plug-in estimator
/// and, when `debiased` is set, for both the mean- and median-corrected ones.
pub fn write_summary_csv<W: Write>(result: &McResult, debiased: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["coord", "theta0", "estimator", "Mean", "Bias", "Sd", "RMSE", "MAE"])?;
    for k in 0..result.theta0.len() {
        let mut rows = vec![("classical", result.classical[k])];
        if debiased {
            rows.push(("debiased_mean", result.debiased_mean[k]));
            rows.push(("debiased_median", result.debiased_median[k]));
        }
        for (name, s) in rows {
            w.write_record(&[
                k.to_string(),
                result.theta0[k].to_string(),
                name.to_string(),
                s.mean.to_string(),
                s.bias.to_string(),
                s.sd.to_string(),
                s.rmse.to_string(),
                s.mae.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Empirical coverage of the Sim and Nor intervals, plus DSim when
/// `debiased` is set, two-sided and one-sided, per coordinate.
pub fn write_coverage_csv<W: Write>(result: &McResult, debiased: bool, out: W) -> Result<()> {
    let level = result.config.level;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["coord", "method", "level", "two_sided", "lower", "upper"])?;
    let methods = [("Sim", IntervalMethod::Sim), ("Nor", IntervalMethod::Nor), ("DSim", IntervalMethod::DSim)];
    let table = methods[..if debiased { 3 } else { 2 }]
        .iter()
        .map(|(name, m)| Ok((*name, coverage(result, *m, level)?)))
        .collect::<Result<Vec<_>>>()?;
    for k in 0..result.theta0.len() {
        for (name, cov) in &table {
            let c = cov[k];
            w.write_record(&[
                k.to_string(),
                name.to_string(),
                level.to_string(),
                c.two_sided.to_string(),
                c.lower.to_string(),
                c.upper.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CoordinateSummary {
    theta0: f64,
    classical: Summary,
    debiased: Summary,
    debiased_mean: Summary,
    debiased_median: Summary,
    coverage_sim: Coverage,
    coverage_nor: Coverage,
    coverage_dsim: Coverage,
    wasserstein_f_n: f64,
    wasserstein_h_n: f64,
    wasserstein_f_n_star: f64,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    design: String,
    spec: &'a super::DgpSpec,
    config: &'a super::McConfig,
    replications: usize,
    failed: usize,
    failure_kinds: Vec<(String, usize)>,
    constraint_exhausted: usize,
    coordinates: Vec<CoordinateSummary>,
}

/// Aggregate table of a run as pretty-printed JSON.
pub fn write_summary_json<W: Write>(result: &McResult, out: W) -> Result<()> {
    let level = result.config.level;
    let sim = coverage(result, IntervalMethod::Sim, level)?;
    let nor = coverage(result, IntervalMethod::Nor, level)?;
    let dsim = coverage(result, IntervalMethod::DSim, level)?;
    let coordinates = (0..result.theta0.len())
        .map(|k| CoordinateSummary {
            theta0: result.theta0[k],
            classical: result.classical[k],
            debiased: result.debiased[k],
            debiased_mean: result.debiased_mean[k],
            debiased_median: result.debiased_median[k],
            coverage_sim: sim[k],
            coverage_nor: nor[k],
            coverage_dsim: dsim[k],
            wasserstein_f_n: result.curves[k].w_f_n,
            wasserstein_h_n: result.curves[k].w_h_n,
            wasserstein_f_n_star: result.curves[k].w_f_n_star,
        })
        .collect();
    let mut kinds: Vec<(String, usize)> = Vec::new();
    for f in &result.failures {
        match kinds.iter_mut().find(|(k, _)| *k == f.kind) {
            Some((_, c)) => *c += 1,
            None => kinds.push((f.kind.clone(), 1)),
        }
    }
    let doc = SummaryDoc {
        design: result.spec.label(),
        spec: &result.spec,
        config: &result.config,
        replications: result.records.len(),
        failed: result.failures.len(),
        failure_kinds: kinds,
        constraint_exhausted: result.constraint_exhausted,
        coordinates,
    };
    serde_json::to_writer_pretty(out, &doc)?;
    Ok(())
}
