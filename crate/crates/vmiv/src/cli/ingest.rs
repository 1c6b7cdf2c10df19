//! CSV ingestion: header-addressed columns, threshold expansion of
//! discretized instruments, and strict validation (binary treatment and
//! instruments, no missing values).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::{discretize_instrument, Dataset, InstrumentDesign, SourceInfo};
use crate::error::{Error, Result};

/// One threshold-expansion rule for a named column.
#[derive(Clone, Debug, Serialize)]
pub struct DiscretizeRule {
    pub column: String,
    pub cuts: Vec<f64>,
    pub ascending: bool,
}

/// Column assignments for a run.
#[derive(Clone, Debug, Serialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatment: String,
    pub instruments: Vec<String>,
    pub controls: Vec<String>,
    pub discretize: Vec<DiscretizeRule>,
}

/// The ingested sample plus the implied design and the final binary
/// instrument names (threshold indicators expand in place).
#[derive(Clone, Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    pub design: InstrumentDesign,
    pub instrument_names: Vec<String>,
}

pub fn ingest_csv(path: &Path, roles: &ColumnRoles) -> Result<Ingested> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidData(format!("column `{name}` not found in header")))
    };

    let y_col = col(&roles.outcome)?;
    let d_col = col(&roles.treatment)?;
    let z_cols: Vec<usize> =
        roles.instruments.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let x_cols: Vec<usize> = roles.controls.iter().map(|n| col(n)).collect::<Result<_>>()?;
    for rule in &roles.discretize {
        if !roles.instruments.iter().any(|n| n == &rule.column) {
            return Err(Error::InvalidConfig(format!(
                "discretize rule for `{}` which is not an instrument",
                rule.column
            )));
        }
    }

    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut missing: Vec<usize> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(headers.len());
        let mut bad = false;
        for field in record.iter() {
            match field.trim() {
                "" => {
                    bad = true;
                    row.push(f64::NAN);
                }
                text => match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(v),
                    _ => {
                        bad = true;
                        row.push(f64::NAN);
                    }
                },
            }
        }
        if bad {
            missing.push(row_idx + 2); // 1-based, counting the header line
        }
        raw.push(row);
    }
    if !missing.is_empty() {
        let shown: Vec<usize> = missing.iter().copied().take(20).collect();
        return Err(Error::InvalidData(format!(
            "missing or non-numeric values at file lines {shown:?}{}",
            if missing.len() > shown.len() { " (and more)" } else { "" }
        )));
    }
    let n = raw.len();
    if n == 0 {
        return Err(Error::InvalidData("no data rows".into()));
    }

    // Expand instruments, applying threshold rules in slot order.
    let mut z_data: Vec<Vec<f64>> = Vec::new();
    let mut sources: Vec<Option<SourceInfo>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for (slot, &c) in z_cols.iter().enumerate() {
        let name = &roles.instruments[slot];
        let values: Vec<f64> = raw.iter().map(|r| r[c]).collect();
        if let Some(rule) = roles.discretize.iter().find(|r| &r.column == name) {
            let (m, info) = discretize_instrument(&values, &rule.cuts, rule.ascending, name)?;
            for (k, inf) in info.into_iter().enumerate() {
                z_data.push((0..n).map(|i| m[(i, k)]).collect());
                let op = if rule.ascending { ">=" } else { "<" };
                names.push(format!("{name}{op}{}", inf.threshold));
                sources.push(Some(inf));
            }
        } else {
            z_data.push(values);
            names.push(name.clone());
            sources.push(None);
        }
    }
    let j = z_data.len();
    if j == 0 {
        return Err(Error::InvalidConfig("no instruments given".into()));
    }

    let y = DVector::from_fn(n, |i, _| raw[i][y_col]);
    let d = DVector::from_fn(n, |i, _| raw[i][d_col]);
    let z = DMatrix::from_fn(n, j, |i, c| z_data[c][i]);
    let x = if x_cols.is_empty() {
        None
    } else {
        Some(DMatrix::from_fn(n, x_cols.len(), |i, c| raw[i][x_cols[c]]))
    };
    let dataset = Dataset::new(y, d, z, x)?;
    let design = InstrumentDesign::with_sources(j, sources)?;
    Ok(Ingested { dataset, design, instrument_names: names })
}
