//! User data files for `estimate --data`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use twostage::first_stage::{ar_garch_fit, spline_gam_fit, SplineBasis};
use twostage::inference::TwoStageModel;
use twostage::second_stage::{copula_estimate, iv_estimate, poisson_estimate, LinearIvModel};
use twostage::{Error, Result};

use crate::config::UserModel;

/// Spline pieces spanning the observed covariate range in the Poisson model.
const SPLINE_PIECES: usize = 20;

/// A numeric CSV table; empty cells are missing values.
pub struct Table {
    pub path: String,
    pub headers: Vec<String>,
    /// File line of every row.
    pub lines: Vec<u64>,
    pub rows: Vec<Vec<Option<f64>>>,
}

fn schema(path: &str, line: u64, column: Option<&str>, message: impl Into<String>) -> Error {
    Error::Schema { path: path.to_string(), line, column: column.map(str::to_string), message: message.into() }
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let mut r = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_path(path)?;
        let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let (mut lines, mut rows) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != headers.len() {
                return Err(schema(&name, line, None, format!("expected {} fields, found {}", headers.len(), rec.len())));
            }
            let row = rec
                .iter()
                .zip(&headers)
                .map(|(cell, h)| {
                    if cell.is_empty() {
                        return Ok(None);
                    }
                    match cell.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(Some(v)),
                        _ => Err(schema(&name, line, Some(h), format!("'{cell}' is not a finite number"))),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            lines.push(line);
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(schema(&name, 1, None, "no data rows"));
        }
        Ok(Table { path: name, headers, lines, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(&self.path, 1, Some(name), format!("missing column '{name}'")))
    }

    /// Column values, every one required.
    pub fn column(&self, c: usize) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .zip(&self.lines)
            .map(|(row, &line)| row[c].ok_or_else(|| schema(&self.path, line, Some(&self.headers[c]), "missing value")))
            .collect()
    }
}

/// `y` regressed on the `endog` columns and the `exog` columns, with every
/// column besides `y` and `endog` used as an instrument.
fn iv_model(t: &Table, outcome: &str, endog: &[String], exog: &[String]) -> Result<Box<dyn TwoStageModel>> {
    let yc = t.column_index(outcome)?;
    let ec = endog.iter().map(|e| t.column_index(e)).collect::<Result<Vec<_>>>()?;
    for e in exog {
        if e == outcome || endog.contains(e) {
            return Err(Error::InvalidInput(format!("column '{e}' cannot be both exogenous and the outcome or endogenous")));
        }
    }
    let zc: Vec<usize> = (0..t.headers.len()).filter(|c| *c != yc && !ec.contains(c)).collect();
    let exog_cols = exog
        .iter()
        .map(|e| {
            let c = t.column_index(e)?;
            Ok(zc.iter().position(|&z| z == c).expect("exogenous columns are instruments"))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = t.rows.len();
    let cols = |cs: &[usize]| -> Result<DMatrix<f64>> {
        let data = cs.iter().map(|&c| t.column(c)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(n, cs.len(), |i, j| data[j][i]))
    };
    let model = LinearIvModel::new(cols(&zc)?, DVector::from_vec(t.column(yc)?), cols(&ec)?, exog_cols)?;
    let (_, _, fit) = iv_estimate(&model)?;
    Ok(Box::new(fit))
}

/// Counts `y`, covariate `z` and a 0/1 treatment `d` that may be missing.
/// The treatment probability is a cubic spline in `z` fitted on the rows
/// where `d` is observed.
fn poisson_model(t: &Table) -> Result<Box<dyn TwoStageModel>> {
    let (yc, zc, dc) = (t.column_index("y")?, t.column_index("z")?, t.column_index("d")?);
    let z = t.column(zc)?;
    let y = t
        .column(yc)?
        .iter()
        .zip(&t.lines)
        .map(|(&v, &line)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(schema(&t.path, line, Some("y"), format!("{v} is not a count")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut zl, mut dl) = (Vec::new(), Vec::new());
    for ((row, &line), &zi) in t.rows.iter().zip(&t.lines).zip(&z) {
        if let Some(d) = row[dc] {
            if d != 0.0 && d != 1.0 {
                return Err(schema(&t.path, line, Some("d"), format!("{d} is not 0 or 1")));
            }
            zl.push(zi);
            dl.push(d);
        }
    }
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::InvalidInput("covariate z is constant".into()));
    }
    let basis = SplineBasis::uniform(lo, hi, (hi - lo) / SPLINE_PIECES as f64)?;
    let fs = spline_gam_fit(&zl, &dl, &basis)?;
    Ok(Box::new(poisson_estimate(&y, &fs, &z)?))
}

/// One return series per column.
fn copula_model(t: &Table) -> Result<Box<dyn TwoStageModel>> {
    if t.headers.len() < 2 {
        return Err(Error::InvalidInput("the copula model needs at least two series".into()));
    }
    let fits = (0..t.headers.len()).map(|c| ar_garch_fit(&t.column(c)?)).collect::<Result<Vec<_>>>()?;
    Ok(Box::new(copula_estimate(fits)?))
}

pub fn fit_user_model(
    path: &Path,
    model: UserModel,
    outcome: &str,
    endog: &[String],
    exog: &[String],
) -> Result<Box<dyn TwoStageModel>> {
    let t = Table::read(path)?;
    match model {
        UserModel::Iv => iv_model(&t, outcome, endog, exog),
        UserModel::Poisson => poisson_model(&t),
        UserModel::Copula => copula_model(&t),
    }
}
