//! Tabular input and output. Data files hold one observation per row with
//! response columns `y1..yC` and covariates by name.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use dirlaplace::compositional::{needs_open_interval_transform, transform_to_open_interval, CompositionMatrix};
use dirlaplace::model::CovariateTable;
use serde::Serialize;

use crate::failure::{Failure, Outcome};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub response: CompositionMatrix,
    pub covariates: CovariateTable,
    /// The closed-simplex compression was applied on load.
    pub transformed: bool,
}

struct Table {
    headers: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

fn read_table(path: &Path) -> Outcome<Table> {
    let file = File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Failure::Validation(format!("{}: empty data file, no header row", path.display())));
    }
    let mut columns = vec![Vec::new(); headers.len()];
    let mut n_rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Failure::Validation(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                r + 1,
                record.len(),
                headers.len()
            )));
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Failure::Validation(format!("{}: row {}, column `{}`: `{field}` is not a number", path.display(), r + 1, headers[k]))
            })?;
            if !v.is_finite() {
                return Err(Failure::Validation(format!("{}: row {}, column `{}` is not finite", path.display(), r + 1, headers[k])));
            }
            columns[k].push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Failure::Validation(format!("{}: no data rows", path.display())));
    }
    Ok(Table { headers, columns, n_rows })
}

fn response_index(name: &str) -> Option<usize> {
    name.strip_prefix('y')?.parse::<usize>().ok().filter(|&c| c >= 1)
}

/// Reads responses and covariates, compressing into the open simplex when any
/// response sits on the boundary.
pub fn read_dataset(path: &Path) -> Outcome<Dataset> {
    let table = read_table(path)?;
    let mut response_cols: Vec<(usize, usize)> =
        table.headers.iter().enumerate().filter_map(|(k, h)| response_index(h).map(|c| (c, k))).collect();
    response_cols.sort();
    let n_cat = response_cols.len();
    if n_cat < 2 || response_cols.iter().enumerate().any(|(i, (c, _))| *c != i + 1) {
        return Err(Failure::Validation(format!(
            "{}: expected response columns y1..yC with C >= 2, found {:?}",
            path.display(),
            response_cols.iter().map(|(c, _)| format!("y{c}")).collect::<Vec<_>>()
        )));
    }
    let mut data = Vec::with_capacity(n_cat * table.n_rows);
    for n in 0..table.n_rows {
        for (_, k) in &response_cols {
            data.push(table.columns[*k][n]);
        }
    }
    let transformed = needs_open_interval_transform(&data);
    let response = if transformed {
        transform_to_open_interval(&data, table.n_rows, n_cat)?
    } else {
        CompositionMatrix::from_column_major(n_cat, data)?
    };
    let covariates = covariate_table(&table, |h| response_index(h).is_none())?;
    Ok(Dataset { response, covariates, transformed })
}

/// Every column is read as a covariate.
pub fn read_covariates(path: &Path) -> Outcome<CovariateTable> {
    let table = read_table(path)?;
    covariate_table(&table, |_| true)
}

fn covariate_table(table: &Table, keep: impl Fn(&str) -> bool) -> Outcome<CovariateTable> {
    let (names, columns): (Vec<String>, Vec<Vec<f64>>) = table
        .headers
        .iter()
        .zip(&table.columns)
        .filter(|(h, _)| keep(h))
        .map(|(h, c)| (h.clone(), c.clone()))
        .unzip();
    if names.is_empty() {
        return Ok(CovariateTable::empty(table.n_rows));
    }
    Ok(CovariateTable::new(names, columns)?)
}

pub fn write_dataset(path: &Path, response: &CompositionMatrix, covariates: &CovariateTable) -> Outcome<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=response.n_categories()).map(|c| format!("y{c}")).collect();
    header.extend(covariates.names().iter().cloned());
    w.write_record(&header)?;
    let cols: Vec<&[f64]> = covariates.names().iter().map(|n| covariates.get(n)).collect::<Result<_, _>>()?;
    for n in 0..response.n_obs() {
        let mut row: Vec<String> = response.column(n).iter().map(f64::to_string).collect();
        row.extend(cols.iter().map(|c| c[n].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let mut file = File::create(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    let file = File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

pub fn write_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Outcome<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Outcome<()> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}
