use std::path::Path;

use elrdd_core::Sample;

use crate::Failure;

const MISSING: [&str; 6] = ["", "na", "nan", "null", ".", "n/a"];

#[derive(Debug)]
pub struct Ingested {
    pub sample: Sample,
    pub dropped: usize,
}

/// Reads the forcing column `x` and every bound column. Rows with a missing
/// value in any bound field are dropped; `binary` columns must be 0/1.
pub fn ingest_csv(path: &Path, x: &str, cutoff: f64, columns: &[String], binary: &[String]) -> Result<Ingested, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Failure::Input(format!("bad header: {e}")))?.clone();

    let mut names = vec![x.to_string()];
    for c in columns {
        if !names.contains(c) {
            names.push(c.clone());
        }
    }
    let index: Vec<usize> = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Failure::Input(format!("column '{name}' not found in header")))
        })
        .collect::<Result<_, _>>()?;

    let mut data: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut dropped = 0;
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Failure::Input(format!("line {line}: {e}")))?;
        let mut values = Vec::with_capacity(names.len());
        let mut missing = false;
        for (name, &i) in names.iter().zip(&index) {
            let raw = record.get(i).unwrap_or("");
            if MISSING.contains(&raw.to_ascii_lowercase().as_str()) {
                missing = true;
                break;
            }
            let v: f64 = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Failure::Input(format!("line {line}, column '{name}': cannot parse '{raw}' as a number")))?;
            values.push(v);
        }
        if missing {
            dropped += 1;
            continue;
        }
        for (col, v) in data.iter_mut().zip(values) {
            col.push(v);
        }
    }
    if data[0].is_empty() {
        return Err(Failure::Input(format!("no complete rows in {} after dropping {dropped} with missing values", path.display())));
    }

    for name in binary {
        let k = names.iter().position(|n| n == name).expect("binary columns are bound");
        if let Some(i) = data[k].iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Failure::Input(format!("column '{name}' must be binary (0/1), found {} in data row {}", data[k][i], i + 1)));
        }
    }

    let mut cols = data.into_iter();
    let mut sample = Sample::new(cols.next().expect("x column"), cutoff)?;
    for (name, values) in names.iter().skip(1).zip(cols) {
        sample = sample.with_column(name, values)?;
    }
    Ok(Ingested { sample, dropped })
}
