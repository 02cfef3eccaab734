use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::PeerEstimate;
use crate::error::{Error, Result};

pub fn write_peer_json(path: &Path, estimates: &[PeerEstimate]) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), estimates)?;
    Ok(())
}

/// One row per coefficient, an estimate and a standard-error column per
/// method, all estimates sharing the same coefficient layout.
pub fn write_coefficient_csv(path: &Path, estimates: &[PeerEstimate]) -> Result<()> {
    let Some(first) = estimates.first() else {
        return Err(Error::EmptySample);
    };
    if estimates.iter().any(|e| e.names != first.names) {
        return Err(Error::InvalidInput("estimates have different coefficient layouts".into()));
    }
    let mut w = csv::Writer::from_writer(File::create(path)?);
    let mut header = vec!["term".to_string()];
    for e in estimates {
        header.push(format!("{}_coef", e.method));
        header.push(format!("{}_sd", e.method));
    }
    w.write_record(&header)?;
    for (j, name) in first.names.iter().enumerate() {
        let mut row = vec![name.clone()];
        for e in estimates {
            row.push(e.coefficients[j].to_string());
            row.push(e.std_errors[j].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
