//! Linear-in-means peer effects on school friendship networks.
//!
//! Each group (school) carries a 0/1 friendship matrix, node covariates and
//! an outcome. Friendships never cross groups, so every matrix here is
//! block-diagonal by group and is handled one group at a time.

mod estimate;
mod instruments;
mod io;
mod report;
mod synthetic;

pub use estimate::{
    civ_estimate, ivmi_estimate, ols_estimate, oiv_estimate, social_multiplier, Instrumented, ManyIvResult, PeerDesign,
    PeerDiagnostics, PeerEstimate, PeerMethod,
};
pub use instruments::{build_instruments, prune_collinear, InstrumentSet, PRUNE_TOL};
pub use io::{bundled_network, load_network, read_network, write_network, BUNDLED_SEED};
pub use report::{write_coefficient_csv, write_peer_json};
pub use synthetic::{simulate_outcomes, synthetic_network, SyntheticConfig};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub id: String,
    pub nodes: Vec<String>,
    /// `g_ij = 1` when `i` names `j` as a friend.
    pub adjacency: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Group {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `G~` with rows scaled to sum to one; isolates keep a zero row.
    pub fn row_normalized(&self) -> DMatrix<f64> {
        row_normalize(&self.adjacency)
    }

    pub fn isolates(&self) -> usize {
        self.adjacency.row_iter().filter(|r| r.sum() == 0.0).count()
    }
}

pub fn row_normalize(g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = g.clone();
    for mut row in out.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchoolNetwork {
    pub groups: Vec<Group>,
    pub covariates: Vec<String>,
}

impl SchoolNetwork {
    pub fn new(groups: Vec<Group>, covariates: Vec<String>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::EmptySample);
        }
        let k = covariates.len();
        for g in &groups {
            let n = g.len();
            if n == 0 {
                return Err(Error::InvalidInput(format!("group {} has no nodes", g.id)));
            }
            if g.adjacency.shape() != (n, n) || g.x.shape() != (n, k) || g.y.len() != n {
                return Err(Error::SizeMismatch(format!(
                    "group {}: {n} nodes, adjacency {:?}, covariates {:?}, outcome {}",
                    g.id,
                    g.adjacency.shape(),
                    g.x.shape(),
                    g.y.len()
                )));
            }
            if g.adjacency.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::DomainError(format!("group {}: adjacency entries must be 0 or 1", g.id)));
            }
            if let Some(i) = (0..n).find(|&i| g.adjacency[(i, i)] != 0.0) {
                return Err(Error::DomainError(format!("group {}: node {} is its own friend", g.id, g.nodes[i])));
            }
            if g.x.iter().chain(g.y.iter()).any(|v| !v.is_finite()) {
                return Err(Error::DomainError(format!("group {}: non-finite data", g.id)));
            }
        }
        Ok(SchoolNetwork { groups, covariates })
    }

    pub fn n(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    pub fn isolates(&self) -> usize {
        self.groups.iter().map(Group::isolates).sum()
    }

    pub fn outcomes(&self) -> Vec<DVector<f64>> {
        self.groups.iter().map(|g| g.y.clone()).collect()
    }

    /// Same network and covariates with new outcomes.
    pub fn with_outcomes(&self, ys: Vec<DVector<f64>>) -> Result<Self> {
        if ys.len() != self.groups.len() {
            return Err(Error::SizeMismatch(format!("{} outcome vectors for {} groups", ys.len(), self.groups.len())));
        }
        let mut out = self.clone();
        for (g, y) in out.groups.iter_mut().zip(ys) {
            if y.len() != g.len() {
                return Err(Error::SizeMismatch(format!("group {}: {} outcomes for {} nodes", g.id, y.len(), g.len())));
            }
            g.y = y;
        }
        Ok(out)
    }
}
