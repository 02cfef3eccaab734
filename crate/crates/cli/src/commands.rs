use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use twostage::dgp::{
    fit_model, generate, run_mc, write_cdf_csv, write_coverage_csv, write_replications_csv, write_summary_csv,
    write_summary_json, McConfig,
};
use twostage::inference::{estimate_report, DebiasMode};
use twostage::network::{
    bundled_network, load_network, synthetic_network, write_coefficient_csv, write_network, write_peer_json, PeerDesign,
    PeerEstimate, PeerMethod, SyntheticConfig,
};
use twostage::rng::{tag, Stream};
use twostage::{Error, Result};

use crate::config::{EstimateRun, GenRun, McRun, PeerRun, Source};
use crate::data::fit_user_model;

fn create(dir: &Path, name: &str, files: &mut Vec<String>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    files.push(path.display().to_string());
    Ok(BufWriter::new(File::create(path)?))
}

fn mode_name(mode: Option<DebiasMode>) -> &'static str {
    match mode {
        Some(DebiasMode::Mean) => "mean",
        Some(DebiasMode::Median) => "median",
        None => "off",
    }
}

pub fn mc(r: &McRun) -> Result<Value> {
    fs::create_dir_all(&r.out)?;
    log::info!("design {}: {} replications with kappa {}", r.spec.label(), r.reps, r.kappa);
    let cfg = McConfig {
        reps: r.reps,
        kappa: r.kappa,
        seed: r.seed,
        level: r.level,
        mode: r.debias.0.unwrap_or(DebiasMode::Mean),
    };
    let result = run_mc(&r.spec, &cfg)?;
    let debiased = r.debias.0.is_some();
    let mut files = Vec::new();
    write_summary_csv(&result, debiased, create(&r.out, "summary.csv", &mut files)?)?;
    write_coverage_csv(&result, debiased, create(&r.out, "coverage.csv", &mut files)?)?;
    for k in 0..result.theta0.len() {
        write_cdf_csv(&result, k, create(&r.out, &format!("cdf_{k}.csv"), &mut files)?)?;
    }
    write_replications_csv(&result, create(&r.out, "replications.csv", &mut files)?)?;
    write_summary_json(&result, create(&r.out, "summary.json", &mut files)?)?;
    log::info!("{} replications done, {} failed", result.records.len(), result.failures.len());
    Ok(json!({
        "command": "mc",
        "design": r.spec.label(),
        "debias": mode_name(r.debias.0),
        "replications": result.records.len(),
        "failed": result.failures.len(),
        "bias": result.classical.iter().map(|s| s.bias).collect::<Vec<_>>(),
        "debiased_bias": debiased.then(|| result.debiased.iter().map(|s| s.bias).collect::<Vec<_>>()),
        "files": files,
    }))
}

pub fn estimate(r: &EstimateRun) -> Result<Value> {
    let root = Stream::new(r.seed);
    let model = match &r.source {
        Source::Design(spec) => {
            log::info!("drawing one sample of design {}", spec.label());
            fit_model(spec, &generate(spec, root.child(tag::DATA))?)?
        }
        Source::Data { path, model, outcome, endog, exog } => {
            log::info!("fitting {}", path.display());
            fit_user_model(path, *model, outcome, endog, exog)?
        }
    };
    let report = estimate_report(model.as_ref(), r.kappa, root.child(tag::RUN), r.level, r.debias.0.unwrap_or(DebiasMode::Mean))?;
    let mut doc = serde_json::to_value(&report)?;
    let obj = doc.as_object_mut().expect("report serializes to an object");
    obj.insert("debias".into(), json!(mode_name(r.debias.0)));
    if r.debias.0.is_none() {
        obj.remove("theta_star");
        obj.remove("debiased_intervals");
    }
    let mut files = Vec::new();
    if let Some(out) = &r.out {
        fs::create_dir_all(out)?;
        serde_json::to_writer_pretty(create(out, "estimate.json", &mut files)?, &doc)?;
    }
    let obj = doc.as_object_mut().expect("report serializes to an object");
    obj.remove("cdf_grid");
    obj.insert("command".into(), json!("estimate"));
    obj.insert("files".into(), json!(files));
    Ok(doc)
}

pub fn peer(r: &PeerRun) -> Result<Value> {
    let net = match &r.files {
        Some((edges, attrs)) => load_network(edges, attrs, &r.outcome)?,
        None if r.outcome == "y" => bundled_network()?,
        None => return Err(Error::InvalidInput(format!("the bundled network has no outcome '{}'", r.outcome))),
    };
    log::info!("{} nodes in {} groups, {} isolates", net.n(), net.groups.len(), net.isolates());
    let design = PeerDesign::new(&net, r.fixed_effects)?;
    let ys = net.outcomes();
    let wants = |m: PeerMethod| r.methods.contains(&m);
    let mut estimates: Vec<PeerEstimate> = Vec::new();
    if wants(PeerMethod::Ols) {
        estimates.push(design.ols(&ys, r.level)?);
    }
    if wants(PeerMethod::Civ) || wants(PeerMethod::Oiv) {
        let civ = design.tsls(PeerMethod::Civ, &design.network_instruments(&net, 0)?, &ys, r.level)?;
        if wants(PeerMethod::Oiv) {
            let inst = design.instrumented(&design.optimal_instrument(&civ)?)?;
            let oiv = design.tsls(PeerMethod::Oiv, &inst, &ys, r.level)?;
            if wants(PeerMethod::Civ) {
                estimates.push(civ);
            }
            estimates.push(oiv);
        } else {
            estimates.push(civ);
        }
    }
    if wants(PeerMethod::Ivmi) || wants(PeerMethod::Divmi) {
        log::info!("many-instrument estimate with k_max {} and kappa {}", r.kmax, r.kappa);
        let inst = design.network_instruments(&net, r.kmax)?;
        let res = design.many_iv(&inst, &ys, r.kappa, r.seed, r.level)?;
        if wants(PeerMethod::Ivmi) {
            estimates.push(res.classical);
        }
        if wants(PeerMethod::Divmi) {
            estimates.push(res.debiased);
        }
    }
    fs::create_dir_all(&r.out)?;
    let json_path = r.out.join("peer.json");
    let csv_path = r.out.join("peer_coefficients.csv");
    write_peer_json(&json_path, &estimates)?;
    write_coefficient_csv(&csv_path, &estimates)?;
    let rows: Vec<Value> = estimates
        .iter()
        .map(|e| {
            json!({
                "method": e.method,
                "theta1": e.theta1,
                "std_error": e.std_errors[0],
                "interval": [e.intervals[0].lower, e.intervals[0].upper],
                "multiplier": e.multiplier,
                "weak_instrument": e.diagnostics.weak_instrument,
            })
        })
        .collect();
    Ok(json!({
        "command": "peer",
        "fixed_effects": r.fixed_effects,
        "estimates": rows,
        "files": [json_path.display().to_string(), csv_path.display().to_string()],
    }))
}

pub fn network_gen(r: &GenRun) -> Result<Value> {
    let cfg = match &r.params {
        Some(p) => toml::from_str::<SyntheticConfig>(&fs::read_to_string(p)?)
            .map_err(|e| Error::InvalidInput(format!("{}: {}", p.display(), e.message())))?,
        None => SyntheticConfig::default(),
    };
    let net = synthetic_network(&cfg, r.seed)?;
    fs::create_dir_all(&r.out)?;
    let edges: PathBuf = r.out.join("edges.csv");
    let attrs: PathBuf = r.out.join("attrs.csv");
    write_network(&net, &edges, &attrs, "y")?;
    Ok(json!({
        "command": "network-gen",
        "nodes": net.n(),
        "groups": net.groups.len(),
        "isolates": net.isolates(),
        "files": [edges.display().to_string(), attrs.display().to_string()],
    }))
}
