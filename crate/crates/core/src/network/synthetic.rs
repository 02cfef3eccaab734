use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Group, SchoolNetwork};
use crate::error::{Error, Result};
use crate::rng::{tag, Stream};

/// Shape and parameters of the synthetic school networks.
///
/// Students sit at a latent position on a circle; friendships and the
/// continuous covariates both follow that position, which makes friends'
/// characteristics informative about one's own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub group_sizes: Vec<usize>,
    pub covariates: usize,
    /// Leading covariates drawn as 0/1 indicators.
    pub binary_covariates: usize,
    pub theta1: f64,
    pub theta2: Vec<f64>,
    pub theta3: Vec<f64>,
    pub group_effects: Vec<f64>,
    pub noise_sd: f64,
    /// Each student names between 0 and this many friends.
    pub max_friends: usize,
    /// Chance that a named friend names the student back.
    pub reciprocity: f64,
    /// Length scale of the friendship kernel on the unit circle.
    pub homophily: f64,
}

fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![a],
        _ => (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect(),
    }
}

impl Default for SyntheticConfig {
    /// 16 schools, 2,735 students, 25 covariates and a peer effect of 0.4.
    fn default() -> Self {
        let k = 25;
        SyntheticConfig {
            group_sizes: vec![98, 121, 133, 142, 150, 158, 165, 171, 176, 182, 188, 194, 201, 209, 218, 229],
            covariates: k,
            binary_covariates: 10,
            theta1: 0.4,
            theta2: linspace(-0.3, 0.3, k),
            theta3: linspace(0.25, -0.25, k),
            group_effects: linspace(1.5, 3.0, 16),
            noise_sd: 1.0,
            max_friends: 3,
            reciprocity: 1.0,
            homophily: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.group_sizes.is_empty() || self.group_sizes.iter().any(|&s| s < 2) {
            return bad("every group needs at least two students".into());
        }
        if self.theta2.len() != self.covariates || self.theta3.len() != self.covariates {
            return bad(format!("{} covariates but {} / {} coefficients", self.covariates, self.theta2.len(), self.theta3.len()));
        }
        if self.group_effects.len() != self.group_sizes.len() {
            return bad(format!("{} group effects for {} groups", self.group_effects.len(), self.group_sizes.len()));
        }
        if self.binary_covariates > self.covariates {
            return bad("more binary covariates than covariates".into());
        }
        if !(self.theta1.abs() < 1.0) {
            return Err(Error::NonInvertible { theta1: self.theta1 });
        }
        if !(self.noise_sd >= 0.0) || !(0.0..=1.0).contains(&self.reciprocity) || !(self.homophily > 0.0) {
            return bad("noise_sd, reciprocity or homophily out of range".into());
        }
        Ok(())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (0..self.covariates)
            .map(|c| {
                if c < self.binary_covariates {
                    format!("b{:02}", c + 1)
                } else {
                    format!("c{:02}", c + 1 - self.binary_covariates)
                }
            })
            .collect()
    }
}

fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

fn synthetic_group(cfg: &SyntheticConfig, id: usize, stream: Stream) -> Group {
    let n = cfg.group_sizes[id];
    let k = cfg.covariates;
    let kb = cfg.binary_covariates;
    let mut rng = stream.rng();
    let pos: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut adjacency = DMatrix::zeros(n, n);
    let others: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let d = rng.random_range(0..=cfg.max_friends).min(n - 1);
        let weight = |&j: &usize| if j == i { 0.0 } else { (-circle_distance(pos[i], pos[j]) / cfg.homophily).exp() };
        let chosen: Vec<usize> = others
            .choose_multiple_weighted(&mut rng, d, weight)
            .expect("kernel weights are finite and non-negative")
            .copied()
            .collect();
        for j in chosen {
            adjacency[(i, j)] = 1.0;
            if rng.random::<f64>() < cfg.reciprocity {
                adjacency[(j, i)] = 1.0;
            }
        }
    }
    let shares = linspace(0.2, 0.5, kb);
    let slopes = linspace(0.0, 1.0, k - kb);
    let mut x = DMatrix::zeros(n, k);
    for i in 0..n {
        for c in 0..k {
            x[(i, c)] = if c < kb {
                f64::from(u8::from(rng.random::<f64>() < shares[c]))
            } else {
                let z: f64 = rng.sample(StandardNormal);
                z + (pos[i] - 0.5) * 2.0 * slopes[c - kb]
            };
        }
    }
    Group {
        id: format!("s{:02}", id + 1),
        nodes: (0..n).map(|i| format!("{}", i + 1)).collect(),
        adjacency,
        x,
        y: DVector::zeros(n),
    }
}

/// Network, covariates and one outcome draw, all from `seed`.
pub fn synthetic_network(cfg: &SyntheticConfig, seed: u64) -> Result<SchoolNetwork> {
    cfg.validate()?;
    let stream = Stream::new(seed);
    let groups: Vec<Group> = (0..cfg.group_sizes.len())
        .map(|r| synthetic_group(cfg, r, stream.child(tag::DATA).child(r as u64)))
        .collect();
    let net = SchoolNetwork::new(groups, cfg.covariate_names())?;
    let ys = simulate_outcomes(&net, cfg, stream.child(tag::RUN))?;
    net.with_outcomes(ys)
}

/// Equilibrium outcomes `(I - t1 G~)^{-1} (alpha_r + X t2 + G~X t3 + e)` with
/// fresh normal errors for every student.
pub fn simulate_outcomes(net: &SchoolNetwork, cfg: &SyntheticConfig, stream: Stream) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    if net.groups.len() != cfg.group_effects.len() || net.covariates.len() != cfg.covariates {
        return Err(Error::SizeMismatch("network shape differs from the configuration".into()));
    }
    let t2 = DVector::from_column_slice(&cfg.theta2);
    let t3 = DVector::from_column_slice(&cfg.theta3);
    net.groups
        .iter()
        .enumerate()
        .map(|(r, g)| {
            let n = g.len();
            let mut rng = stream.child(r as u64).rng();
            let gt = g.row_normalized();
            let e = DVector::from_fn(n, |_, _| cfg.noise_sd * rng.sample::<f64, _>(StandardNormal));
            let rhs = (&g.x * &t2 + &gt * &g.x * &t3 + e).add_scalar(cfg.group_effects[r]);
            let lhs = DMatrix::identity(n, n) - gt * cfg.theta1;
            lhs.lu().solve(&rhs).ok_or(Error::NonInvertible { theta1: cfg.theta1 })
        })
        .collect()
}
