//! CSV forms of sample sets and participation factors.
//!
//! Samples: a header of bus ids, then one row per sample in p.u.
//! Participation factors: header `generator,alpha`, one row per unit with
//! its zero-based position in the case's generator list.

use nalgebra::DMatrix;

use super::UncertaintyError;
use crate::net::NetworkCase;

fn csv_err(e: impl std::fmt::Display) -> UncertaintyError {
    UncertaintyError::Csv(e.to_string())
}

fn parse_float(field: &str, row: usize) -> Result<f64, UncertaintyError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| UncertaintyError::Csv(format!("row {row}: {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(UncertaintyError::Csv(format!("row {row}: non-finite value")));
    }
    Ok(v)
}

/// Values are written in shortest round-trip form.
pub fn write_samples_csv(case: &NetworkCase, buses: &[usize], samples: &DMatrix<f64>) -> Result<String, UncertaintyError> {
    if samples.ncols() != buses.len() {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "{} columns for {} buses",
            samples.ncols(),
            buses.len()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(buses.iter().map(|&b| case.buses[b].id.to_string())).map_err(csv_err)?;
    for row in samples.row_iter() {
        w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(csv_err)?).map_err(csv_err)
}

/// Returns internal bus indices and the `M × N` sample matrix.
pub fn read_samples_csv(case: &NetworkCase, text: &str) -> Result<(Vec<usize>, DMatrix<f64>), UncertaintyError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    let mut buses = Vec::with_capacity(header.len());
    for h in header.iter() {
        let id: u32 = h
            .trim()
            .parse()
            .map_err(|_| UncertaintyError::Csv(format!("header {h:?} is not a bus id")))?;
        let idx = case.bus_index(id).ok_or(UncertaintyError::UnknownBus(id))?;
        if buses.contains(&idx) {
            return Err(UncertaintyError::Csv(format!("bus {id} listed twice")));
        }
        buses.push(idx);
    }
    if buses.is_empty() {
        return Err(UncertaintyError::Csv("empty header".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != buses.len() {
            return Err(UncertaintyError::Csv(format!("row {} has {} fields", k + 1, rec.len())));
        }
        for f in rec.iter() {
            values.push(parse_float(f, k + 1)?);
        }
        rows += 1;
    }
    let m = DMatrix::from_row_slice(rows, buses.len(), &values);
    Ok((buses, m))
}

pub fn write_alpha_csv(alpha: &[f64]) -> String {
    let mut out = String::from("generator,alpha\n");
    for (g, a) in alpha.iter().enumerate() {
        out.push_str(&format!("{g},{a}\n"));
    }
    out
}

/// Participation factors for `ng` units; every unit must be listed once.
pub fn read_alpha_csv(text: &str, ng: usize) -> Result<Vec<f64>, UncertaintyError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != ["generator", "alpha"] {
        return Err(UncertaintyError::Csv(format!("expected header generator,alpha, found {names:?}")));
    }
    let mut alpha = vec![None; ng];
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(UncertaintyError::Csv(format!("row {} has {} fields", k + 1, rec.len())));
        }
        let g: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| UncertaintyError::Csv(format!("row {}: bad generator index", k + 1)))?;
        let slot = alpha
            .get_mut(g)
            .ok_or_else(|| UncertaintyError::Csv(format!("row {}: generator {g} out of range", k + 1)))?;
        if slot.is_some() {
            return Err(UncertaintyError::Csv(format!("generator {g} listed twice")));
        }
        *slot = Some(parse_float(&rec[1], k + 1)?);
    }
    alpha
        .into_iter()
        .enumerate()
        .map(|(g, a)| a.ok_or_else(|| UncertaintyError::Csv(format!("generator {g} missing"))))
        .collect()
}
