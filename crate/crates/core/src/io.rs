//! CSV and JSON persistence for matrices, instances and reports.
//!
//! Matrices are stored as headerless CSV, one matrix row per line, with
//! values printed in shortest round-trip form so that a write followed by a
//! read reproduces every bit.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{invalid, LscError, Result};
use crate::mat_core::DenseMatrix;
use crate::sa::DetectionReport;
use crate::synth::{Instance, ModelParams};

pub const CERTIFICATE_HEADER: [&str; 5] = ["column_index", "dominant_fraction", "dominant_count", "is_outlier", "converged"];

fn csv_error(e: csv::Error) -> LscError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => LscError::Io(io),
            _ => unreachable!(),
        }
    } else {
        LscError::InvalidInput(format!("malformed CSV: {e}"))
    }
}

pub fn write_matrix<W: Write>(out: W, m: &DenseMatrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let a = m.as_matrix();
    let mut record = Vec::with_capacity(a.ncols());
    for i in 0..a.nrows() {
        record.clear();
        record.extend((0..a.ncols()).map(|j| a[(i, j)].to_string()));
        w.write_record(&record).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(input: R) -> Result<DenseMatrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut entries = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in r.records() {
        let record = record.map_err(csv_error)?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return invalid(format!("row {} has {} fields, expected {c}", rows + 1, record.len()));
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| LscError::InvalidInput(format!("row {}: cannot parse '{field}' as a number", rows + 1)))?;
            entries.push(v);
        }
        rows += 1;
    }
    let Some(cols) = cols else {
        return invalid("CSV matrix is empty");
    };
    DenseMatrix::from_row_major(rows, cols, entries)
}

pub fn save_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), m)
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes `D.csv`, `L.csv`, `S.csv`, `C.csv`, `params.json` and `outliers.json`.
pub fn save_instance(dir: &Path, inst: &Instance) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_matrix(&dir.join("D.csv"), &inst.d)?;
    save_matrix(&dir.join("L.csv"), &inst.l)?;
    save_matrix(&dir.join("S.csv"), &inst.s)?;
    save_matrix(&dir.join("C.csv"), &inst.c)?;
    save_json(&dir.join("params.json"), &inst.params)?;
    save_json(&dir.join("outliers.json"), &inst.outlier_indices)?;
    Ok(())
}

pub fn load_instance(dir: &Path) -> Result<Instance> {
    let d = load_matrix(&dir.join("D.csv"))?;
    let l = load_matrix(&dir.join("L.csv"))?;
    let s = load_matrix(&dir.join("S.csv"))?;
    let c = load_matrix(&dir.join("C.csv"))?;
    let params: ModelParams = load_json(&dir.join("params.json"))?;
    let mut outlier_indices: Vec<usize> = load_json(&dir.join("outliers.json"))?;
    outlier_indices.sort_unstable();
    let shape = (d.rows(), d.cols());
    for (name, m) in [("L", &l), ("S", &s), ("C", &c)] {
        if (m.rows(), m.cols()) != shape {
            return invalid(format!("{name}.csv is {}x{}, D.csv is {}x{}", m.rows(), m.cols(), shape.0, shape.1));
        }
    }
    if shape != (params.n1, params.n2) {
        return invalid("params.json disagrees with the stored matrix shape");
    }
    if outlier_indices.iter().any(|&j| j >= shape.1) {
        return invalid("outliers.json lists a column outside the matrix");
    }
    Ok(Instance { d, l, s, c, outlier_indices, params })
}

/// Reads a data matrix from a CSV file or from `D.csv` inside an instance directory.
pub fn load_data(path: &Path) -> Result<DenseMatrix> {
    if path.is_dir() {
        load_matrix(&path.join("D.csv"))
    } else {
        load_matrix(path)
    }
}

pub fn write_certificates<W: Write>(out: W, report: &DetectionReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CERTIFICATE_HEADER).map_err(csv_error)?;
    for (c, solve) in report.certificates.iter().zip(&report.solves) {
        w.write_record([
            c.column_index.to_string(),
            c.dominant_fraction.to_string(),
            c.dominant_count.to_string(),
            c.is_outlier.to_string(),
            solve.converged.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
