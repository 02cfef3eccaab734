use std::path::{Path, PathBuf};

use serde::Deserialize;
use twostage::dgp::{DgpId, DgpSpec};
use twostage::inference::DebiasMode;
use twostage::network::PeerMethod;
use twostage::{Error, Result};

use crate::args::{EstimateArgs, GenArgs, McArgs, PeerArgs};

/// Values read from `--config`. Every key mirrors a flag; flags given on the
/// command line take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub dgp: Option<String>,
    pub n: Option<usize>,
    pub kn_mult: Option<f64>,
    pub reps: Option<usize>,
    pub kappa: Option<usize>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
    pub debias: Option<String>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<String>,
    pub outcome: Option<String>,
    pub endog: Option<Vec<String>>,
    pub exog: Option<Vec<String>>,
    pub edges: Option<PathBuf>,
    pub attrs: Option<PathBuf>,
    pub kmax: Option<usize>,
    pub fixed_effects: Option<bool>,
    pub method: Option<Vec<String>>,
    pub params: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {}", path.display(), e.message())))
    }
}

/// `mean`, `median` or `off`; `None` means no debiasing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Debias(pub Option<DebiasMode>);

impl Debias {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Debias(None)),
            other => Ok(Debias(Some(other.parse()?))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McRun {
    pub spec: DgpSpec,
    pub reps: usize,
    pub kappa: usize,
    pub seed: u64,
    pub level: f64,
    pub debias: Debias,
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UserModel {
    Iv,
    Poisson,
    Copula,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Design(DgpSpec),
    Data {
        path: PathBuf,
        model: UserModel,
        outcome: String,
        endog: Vec<String>,
        exog: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRun {
    pub source: Source,
    pub kappa: usize,
    pub seed: u64,
    pub level: f64,
    pub debias: Debias,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeerRun {
    /// Edge and attribute files; the bundled network when absent.
    pub files: Option<(PathBuf, PathBuf)>,
    pub outcome: String,
    pub kmax: usize,
    pub fixed_effects: bool,
    pub methods: Vec<PeerMethod>,
    pub kappa: usize,
    pub seed: u64,
    pub level: f64,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenRun {
    pub params: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

/// A fully resolved and validated command.
#[derive(Clone, Debug, PartialEq)]
pub enum RunConfig {
    Mc(McRun),
    Estimate(EstimateRun),
    Peer(PeerRun),
    NetworkGen(GenRun),
}

const DEFAULT_OUT: &str = "twostage-out";

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn check_level(level: f64) -> Result<f64> {
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(invalid(format!("--level must lie in (0, 1), got {level}")))
    }
}

fn check_kappa(kappa: usize) -> Result<usize> {
    if kappa >= 2 {
        Ok(kappa)
    } else {
        Err(invalid(format!("--kappa must be at least 2, got {kappa}")))
    }
}

fn design(dgp: Option<&str>, n: Option<usize>, kn_mult: Option<f64>) -> Result<DgpSpec> {
    let id: DgpId = dgp.ok_or_else(|| invalid("--dgp is required"))?.parse()?;
    let n = n.unwrap_or(250);
    if kn_mult.is_some() && id != DgpId::B {
        return Err(invalid("--kn-mult applies to design B only"));
    }
    let spec = match id {
        DgpId::A => DgpSpec::a(n),
        DgpId::B => {
            let m = kn_mult.unwrap_or(2.0);
            if m != 2.0 && m != 4.0 {
                return Err(invalid(format!("--kn-mult must be 2 or 4, got {m}")));
            }
            DgpSpec::b(n, m)
        }
        DgpId::C => DgpSpec::c(n),
        DgpId::D => DgpSpec::d(n),
    };
    spec.validate()?;
    Ok(spec)
}

impl RunConfig {
    pub fn mc(a: McArgs, f: &FileConfig) -> Result<Self> {
        let spec = design(a.dgp.as_deref().or(f.dgp.as_deref()), a.n.or(f.n), a.kn_mult.or(f.kn_mult))?;
        let reps = a.reps.or(f.reps).unwrap_or(1000);
        if reps < 2 {
            return Err(invalid(format!("--reps must be at least 2, got {reps}")));
        }
        Ok(RunConfig::Mc(McRun {
            spec,
            reps,
            kappa: check_kappa(a.kappa.or(f.kappa).unwrap_or(1000))?,
            seed: a.seed.or(f.seed).unwrap_or(0),
            level: check_level(a.level.or(f.level).unwrap_or(0.95))?,
            debias: Debias::parse(a.debias.as_deref().or(f.debias.as_deref()).unwrap_or("mean"))?,
            out: a.out.or(f.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
        }))
    }

    pub fn estimate(a: EstimateArgs, f: &FileConfig) -> Result<Self> {
        let dgp = a.dgp.as_deref().or(f.dgp.as_deref());
        let data = a.data.or(f.data.clone());
        let source = match (dgp, data) {
            (Some(_), Some(_)) => return Err(invalid("give either --dgp or --data, not both")),
            (None, None) => return Err(invalid("one of --dgp or --data is required")),
            (Some(d), None) => Source::Design(design(Some(d), a.n.or(f.n), a.kn_mult.or(f.kn_mult))?),
            (None, Some(path)) => {
                let model = match a.model.as_deref().or(f.model.as_deref()).unwrap_or("iv") {
                    "iv" => UserModel::Iv,
                    "poisson" => UserModel::Poisson,
                    "copula" => UserModel::Copula,
                    other => return Err(invalid(format!("unknown model '{other}', expected iv, poisson or copula"))),
                };
                let endog = a.endog.or(f.endog.clone()).unwrap_or_else(|| vec!["d".into()]);
                let exog = a.exog.or(f.exog.clone()).unwrap_or_default();
                if model == UserModel::Iv && endog.is_empty() && exog.is_empty() {
                    return Err(invalid("the IV model needs at least one regressor"));
                }
                Source::Data {
                    path,
                    model,
                    outcome: a.outcome.or(f.outcome.clone()).unwrap_or_else(|| "y".into()),
                    endog,
                    exog,
                }
            }
        };
        Ok(RunConfig::Estimate(EstimateRun {
            source,
            kappa: check_kappa(a.kappa.or(f.kappa).unwrap_or(1000))?,
            seed: a.seed.or(f.seed).unwrap_or(0),
            level: check_level(a.level.or(f.level).unwrap_or(0.95))?,
            debias: Debias::parse(a.debias.as_deref().or(f.debias.as_deref()).unwrap_or("mean"))?,
            out: a.out.or(f.out.clone()),
        }))
    }

    pub fn peer(a: PeerArgs, f: &FileConfig) -> Result<Self> {
        let files = match (a.edges.or(f.edges.clone()), a.attrs.or(f.attrs.clone())) {
            (Some(e), Some(t)) => Some((e, t)),
            (None, None) => None,
            _ => return Err(invalid("--edges and --attrs go together")),
        };
        let names = a.method.or(f.method.clone()).unwrap_or_else(|| vec!["all".into()]);
        let mut methods = Vec::new();
        for name in &names {
            let add: Vec<PeerMethod> = if name == "all" { PeerMethod::ALL.to_vec() } else { vec![name.parse()?] };
            for m in add {
                if !methods.contains(&m) {
                    methods.push(m);
                }
            }
        }
        if methods.is_empty() {
            return Err(invalid("--method lists no methods"));
        }
        Ok(RunConfig::Peer(PeerRun {
            files,
            outcome: a.outcome.or(f.outcome.clone()).unwrap_or_else(|| "y".into()),
            kmax: a.kmax.or(f.kmax).unwrap_or(9),
            fixed_effects: a.fixed_effects || f.fixed_effects.unwrap_or(false),
            methods,
            kappa: check_kappa(a.kappa.or(f.kappa).unwrap_or(1000))?,
            seed: a.seed.or(f.seed).unwrap_or(0),
            level: check_level(a.level.or(f.level).unwrap_or(0.95))?,
            out: a.out.or(f.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
        }))
    }

    pub fn network_gen(a: GenArgs, f: &FileConfig) -> Result<Self> {
        Ok(RunConfig::NetworkGen(GenRun {
            params: a.params.or(f.params.clone()),
            seed: a.seed.or(f.seed).unwrap_or(twostage::network::BUNDLED_SEED),
            out: a.out.or(f.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc_args() -> McArgs {
        McArgs {
            dgp: Some("A".into()),
            n: None,
            kn_mult: None,
            reps: None,
            kappa: None,
            seed: None,
            level: None,
            debias: None,
            out: None,
        }
    }

    #[test]
    fn flags_override_the_file() {
        let file: FileConfig = toml::from_str("reps = 50\nkappa = 300\nseed = 9\n").unwrap();
        let RunConfig::Mc(run) = RunConfig::mc(McArgs { reps: Some(20), ..mc_args() }, &file).unwrap() else {
            panic!("not an mc run");
        };
        assert_eq!((run.reps, run.kappa, run.seed), (20, 300, 9));
        assert_eq!(run.debias, Debias(Some(DebiasMode::Mean)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("repz = 5\n").is_err());
    }

    #[test]
    fn values_are_validated() {
        let f = FileConfig::default();
        assert!(RunConfig::mc(McArgs { level: Some(1.5), ..mc_args() }, &f).is_err());
        assert!(RunConfig::mc(McArgs { reps: Some(1), ..mc_args() }, &f).is_err());
        assert!(RunConfig::mc(McArgs { kn_mult: Some(4.0), ..mc_args() }, &f).is_err());
        assert!(RunConfig::mc(McArgs { dgp: Some("E".into()), ..mc_args() }, &f).is_err());
        assert!(RunConfig::mc(McArgs { debias: Some("mode".into()), ..mc_args() }, &f).is_err());
        let b = RunConfig::mc(McArgs { dgp: Some("b".into()), kn_mult: Some(4.0), ..mc_args() }, &f).unwrap();
        let RunConfig::Mc(run) = b else { panic!() };
        assert_eq!(run.spec.multiplier, Some(4.0));
        let off = RunConfig::mc(McArgs { debias: Some("off".into()), ..mc_args() }, &f).unwrap();
        let RunConfig::Mc(run) = off else { panic!() };
        assert_eq!(run.debias, Debias(None));
    }
}
