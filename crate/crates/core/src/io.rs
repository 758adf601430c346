//! CSV input and table output.
//!
//! Dialect: comma separator, mandatory header row, '.' decimal point, UTF-8.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, StepQuantileProcess};

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let err = |message: String| Error::Parse {
        row: Some(row),
        column: Some(column.to_string()),
        message,
    };
    let cell = raw.trim();
    if cell.is_empty() {
        return Err(err("missing value".into()));
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| err(format!("'{cell}' is not a number (use '.' as decimal point)")))?;
    if !v.is_finite() {
        return Err(err(format!("'{cell}' is not a finite number")));
    }
    Ok(v)
}

/// Reads the response and covariate columns by header name.
pub fn read_dataset<R: Read>(reader: R, response: &str, covariates: &[String]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { row: None, column: None, message: e.to_string() })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut missing = Vec::new();
    let mut find = |name: &str| match header.iter().position(|h| h == name) {
        Some(i) => i,
        None => {
            missing.push(format!("column '{name}' is not in the header ({})", header.join(", ")));
            0
        }
    };
    let yi = find(response);
    let xi: Vec<usize> = covariates.iter().map(|c| find(c)).collect();
    if !missing.is_empty() {
        return Err(Error::Config(missing));
    }

    let p = covariates.len();
    let (mut y, mut x) = (Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| Error::Parse { row: Some(row), column: None, message: e.to_string() })?;
        let get = |i: usize, name: &str| parse_cell(rec.get(i).unwrap_or(""), row, name);
        y.push(get(yi, response)?);
        for (j, &i) in xi.iter().enumerate() {
            x.push(get(i, &covariates[j])?);
        }
    }
    Dataset::new(y, x, p)
}

pub fn read_dataset_path(path: &Path, response: &str, covariates: &[String]) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset(std::io::BufReader::new(file), response, covariates)
}

/// Columns `y, x1..xp`, plus `z` when the hidden errors are given.
pub fn dataset_csv(ds: &Dataset, errors: Option<&[f64]>) -> String {
    let mut out = String::from("y");
    for j in 1..=ds.p() {
        out.push_str(&format!(",x{j}"));
    }
    if errors.is_some() {
        out.push_str(",z");
    }
    out.push('\n');
    for i in 0..ds.n() {
        out.push_str(&ds.y()[i].to_string());
        for v in ds.row(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        if let Some(z) = errors {
            out.push(',');
            out.push_str(&z[i].to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset_csv(path: &Path, ds: &Dataset, errors: Option<&[f64]>) -> Result<()> {
    if let Some(z) = errors {
        if z.len() != ds.n() {
            return Err(Error::Dimension(format!("{} errors for {} observations", z.len(), ds.n())));
        }
    }
    std::fs::write(path, dataset_csv(ds, errors)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Step table with header `alpha_breakpoint,value`.
pub fn process_csv(proc: &StepQuantileProcess) -> String {
    let mut out = String::from("alpha_breakpoint,value\n");
    for (a, v) in proc.steps() {
        out.push_str(&format!("{a},{v}\n"));
    }
    out
}
