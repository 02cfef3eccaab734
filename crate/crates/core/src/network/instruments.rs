use nalgebra::{DMatrix, DVector};

use super::SchoolNetwork;
use crate::error::{Error, Result};

/// A column is dropped when its pivoted-QR diagonal falls below this
/// multiple of its own norm.
pub const PRUNE_TOL: f64 = 1e-10;

/// Network-power instruments `G~^{2+p} X`, `p = 0..=k_max`, rows stacked by
/// group, after dropping collinear columns.
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentSet {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
    pub pruned: Vec<String>,
    pub candidates: usize,
}

pub fn build_instruments(net: &SchoolNetwork, k_max: usize) -> Result<InstrumentSet> {
    let k = net.covariates.len();
    let width = (k_max + 1) * k;
    let mut matrix = DMatrix::zeros(net.n(), width);
    let mut row = 0;
    for g in &net.groups {
        let gt = g.row_normalized();
        let mut power = &gt * &gt;
        for p in 0..=k_max {
            let block = &power * &g.x;
            matrix.view_mut((row, p * k), (g.len(), k)).copy_from(&block);
            if p < k_max {
                power = &gt * power;
            }
        }
        row += g.len();
    }
    let names: Vec<String> = (0..=k_max)
        .flat_map(|p| net.covariates.iter().map(move |c| format!("G{}_{c}", p + 2)))
        .collect();
    let keep = prune_collinear(None, &matrix, PRUNE_TOL)?;
    Ok(select(&matrix, &names, &keep))
}

pub(crate) fn select(matrix: &DMatrix<f64>, names: &[String], keep: &[usize]) -> InstrumentSet {
    let pruned: Vec<String> = (0..names.len())
        .filter(|j| keep.binary_search(j).is_err())
        .map(|j| names[j].clone())
        .collect();
    if !pruned.is_empty() {
        log::info!("dropped {} collinear instrument columns", pruned.len());
    }
    InstrumentSet {
        matrix: matrix.select_columns(keep),
        names: keep.iter().map(|&j| names[j].clone()).collect(),
        pruned,
        candidates: names.len(),
    }
}

/// Indices (ascending) of the columns of `cand` to keep. Columns are first
/// residualized on `base`, then a pivoted QR drops every column whose
/// diagonal is below `tol` times the column's original norm.
pub fn prune_collinear(base: Option<&DMatrix<f64>>, cand: &DMatrix<f64>, tol: f64) -> Result<Vec<usize>> {
    let (n, m) = cand.shape();
    if m == 0 {
        return Ok(vec![]);
    }
    if let Some(b) = base {
        if b.nrows() != n {
            return Err(Error::SizeMismatch(format!("base has {} rows, candidates {n}", b.nrows())));
        }
    }
    let norms: Vec<f64> = cand.column_iter().map(|c| c.norm()).collect();
    let resid = match base {
        Some(b) if b.ncols() > 0 => {
            let q = b.clone().qr().q();
            cand - &q * q.tr_mul(cand)
        }
        _ => cand.clone(),
    };
    let qr = resid.col_piv_qr();
    let r = qr.r();
    let mut order = DMatrix::from_fn(1, m, |_, j| j as f64);
    qr.p().permute_columns(&mut order);
    let diag = DVector::from_fn(r.nrows().min(m), |j, _| r[(j, j)].abs());
    let mut keep: Vec<usize> = diag
        .iter()
        .enumerate()
        .filter_map(|(j, &d)| {
            let col = order[(0, j)] as usize;
            (norms[col] > 0.0 && d > tol * norms[col]).then_some(col)
        })
        .collect();
    keep.sort_unstable();
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Group;
    use crate::rng::Stream;
    use rand::Rng;

    fn net_of(adjacency: DMatrix<f64>, x: DMatrix<f64>) -> SchoolNetwork {
        let n = adjacency.nrows();
        let k = x.ncols();
        let g = Group {
            id: "0".into(),
            nodes: (0..n).map(|i| i.to_string()).collect(),
            adjacency,
            x,
            y: DVector::zeros(n),
        };
        SchoolNetwork::new(vec![g], (0..k).map(|c| format!("x{c}")).collect()).unwrap()
    }

    #[test]
    fn mutual_pair_squares_to_identity() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, -1.0]);
        let net = net_of(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), x.clone());
        let set = build_instruments(&net, 0).unwrap();
        assert_eq!(set.matrix, x);
        assert_eq!(set.names, vec!["G2_x0", "G2_x1"]);
    }

    #[test]
    fn isolates_give_no_instruments() {
        let mut rng = Stream::new(1).rng();
        let x = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>());
        let net = net_of(DMatrix::zeros(6, 6), x);
        let set = build_instruments(&net, 2).unwrap();
        assert_eq!(set.matrix.ncols(), 0);
        assert_eq!(set.pruned.len(), 9);
        assert_eq!(set.candidates, 9);
    }

    #[test]
    fn star_blocks_match_repeated_products() {
        // hub 0 with four leaves, leaves name only the hub, the hub names all
        let mut a = DMatrix::zeros(5, 5);
        for l in 1..5 {
            a[(0, l)] = 1.0;
            a[(l, 0)] = 1.0;
        }
        let x = DMatrix::from_fn(5, 2, |i, j| (i * 2 + j) as f64 + 0.5 * (i as f64).powi(2));
        let net = net_of(a.clone(), x.clone());
        let set = build_instruments(&net, 3).unwrap();
        let gt = crate::network::row_normalize(&a);
        let mut p = gt.clone() * gt.clone();
        let mut expected = Vec::new();
        for _ in 0..4 {
            expected.push(&p * &x);
            p = &gt * p;
        }
        // a star is bipartite, so G~^4 = G~^2 and later powers repeat
        for (j, name) in set.names.iter().enumerate() {
            let pos = (0..8).find(|&c| format!("G{}_x{}", c / 2 + 2, c % 2) == *name).unwrap();
            let col = expected[pos / 2].column(pos % 2);
            assert!((set.matrix.column(j) - col).amax() < 1e-12);
        }
        assert!(!set.pruned.is_empty());
    }

    #[test]
    fn pruning_keeps_independent_columns() {
        let mut rng = Stream::new(2).rng();
        let mut m = DMatrix::from_fn(50, 5, |_, _| rng.random::<f64>());
        let dup = m.column(1) * 2.0 - m.column(3);
        m = m.insert_column(5, 0.0);
        m.set_column(5, &dup);
        m = m.insert_column(6, 0.0);
        assert_eq!(prune_collinear(None, &m, PRUNE_TOL).unwrap().len(), 5);
        let base = m.columns(0, 2).into_owned();
        let keep = prune_collinear(Some(&base), &m.columns(0, 5).into_owned(), PRUNE_TOL).unwrap();
        assert_eq!(keep, vec![2, 3, 4]);
    }
}
