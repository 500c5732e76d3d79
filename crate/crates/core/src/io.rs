//! Matrix CSV files and network edge lists.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CovError, Result};
use crate::la::{AsMatrix, DataMatrix};

/// A data matrix with the column names from its header row, if it had one.
#[derive(Debug, Clone)]
pub struct LabeledMatrix {
    pub data: DataMatrix,
    pub names: Option<Vec<String>>,
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

/// Parses comma-separated numbers, rows = samples. A first row with any
/// non-numeric cell is taken as the header.
pub fn parse_matrix_csv(reader: impl Read) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut names = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(CovError::Data(format!("row {} has {} fields, expected {w}", line + 1, record.len())));
        }
        let parsed: Vec<Option<f64>> = record.iter().map(parse_cell).collect();
        if line == 0 && parsed.iter().any(Option::is_none) {
            names = Some(record.iter().map(|s| s.trim().to_string()).collect());
            continue;
        }
        let mut row = Vec::with_capacity(w);
        for (col, v) in parsed.into_iter().enumerate() {
            match v {
                Some(v) => row.push(v),
                None => {
                    return Err(CovError::Data(format!(
                        "non-numeric cell {:?} at row {}, column {}",
                        &record[col],
                        line + 1,
                        col + 1
                    )))
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CovError::Data("no numeric rows in matrix file".into()));
    }
    Ok(LabeledMatrix { data: DataMatrix::from_rows(&rows)?, names })
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<LabeledMatrix> {
    parse_matrix_csv(File::open(path)?)
}

/// Writes a matrix with shortest round-trip formatting, so reading it back
/// gives the same values.
pub fn write_matrix(m: &DMatrix<f64>, names: Option<&[String]>, writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    if let Some(names) = names {
        if names.len() != m.ncols() {
            return Err(CovError::Dimension(format!("{} names for {} columns", names.len(), m.ncols())));
        }
        w.write_record(names)?;
    }
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_csv(m: impl AsMatrix, names: Option<&[String]>, path: impl AsRef<Path>) -> Result<()> {
    write_matrix(m.as_matrix(), names, File::create(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// The `target_edges` largest off-diagonal entries by magnitude, taken from
/// the upper triangle. Ties go to the smaller `(i, j)`.
pub fn top_edges(m: impl AsMatrix, target_edges: usize) -> Result<Vec<Edge>> {
    let m = m.as_matrix();
    let p = m.nrows();
    let total = p * p.saturating_sub(1) / 2;
    if target_edges > total {
        return Err(CovError::InvalidParameter(format!("target_edges must be <= {total}, got {target_edges}")));
    }
    let mut edges: Vec<Edge> =
        (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).map(|(i, j)| Edge { i, j, weight: m[(i, j)] }).collect();
    edges.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()).then((a.i, a.j).cmp(&(b.i, b.j))));
    edges.truncate(target_edges);
    Ok(edges)
}

/// Writes `feature_i,feature_j,weight` rows, using column names if given.
pub fn write_edges(edges: &[Edge], names: Option<&[String]>, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature_i", "feature_j", "weight"])?;
    let label = |i: usize| names.and_then(|n| n.get(i).cloned()).unwrap_or_else(|| i.to_string());
    for e in edges {
        w.write_record([label(e.i), label(e.j), e.weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_network(
    estimate: impl AsMatrix,
    target_edges: usize,
    names: Option<&[String]>,
    path: impl AsRef<Path>,
) -> Result<Vec<Edge>> {
    let edges = top_edges(estimate, target_edges)?;
    write_edges(&edges, names, File::create(path)?)?;
    Ok(edges)
}
