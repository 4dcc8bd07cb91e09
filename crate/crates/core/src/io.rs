//! Headered CSV for maps and matrices.
//!
//! A matrix is written with a header row `c0,c1,...` followed by one line per
//! row. A single map is a one-column matrix with header `value`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let header: Vec<String> = (0..m.ncols()).map(|c| format!("c{c}")).collect();
    write_matrix_csv_with_header(path, m, &header)
}

pub fn write_matrix_csv_with_header(path: &Path, m: &DMatrix<f64>, header: &[String]) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.ncols(),
            got: header.len(),
            context: "CSV header length",
        });
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    let mut row = Vec::with_capacity(m.ncols());
    for r in 0..m.nrows() {
        row.clear();
        row.extend((0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    let ncols = r.headers()?.len();
    let mut data = Vec::new();
    let mut nrows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != ncols {
            return Err(Error::parse(
                path,
                format!("row {} has {} fields, header has {ncols}", line + 1, rec.len()),
            ));
        }
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(path, format!("row {}: cannot parse {field:?}", line + 1))
            })?;
            data.push(v);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

pub fn write_map_csv(path: &Path, map: &[f64]) -> Result<()> {
    let m = DMatrix::from_column_slice(map.len(), 1, map);
    write_matrix_csv_with_header(path, &m, &["value".to_owned()])
}

pub fn read_map_csv(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(Error::parse(path, format!("expected one column, found {}", m.ncols())));
    }
    Ok(m.as_slice().to_vec())
}
