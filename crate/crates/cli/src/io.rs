//! CSV files for datasets, result rows and traces.

use std::path::Path;

use dipnet_core::data::{IntervalDataset, IntervalFunctionDataset, PointDataset};
use dipnet_core::tensor::Tensor;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Writes `bytes` via a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn fmt(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v:?}")
}

fn write_matrix(path: &Path, header: &[String], cols: &[&Tensor]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    let rows = cols.first().map_or(0, |t| t.rows());
    for i in 0..rows {
        let rec: Vec<String> = cols.iter().flat_map(|t| t.row(i).iter().map(|v| fmt(*v))).collect();
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn names(prefix: &str, n: usize, suffix: &str) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}{suffix}")).collect()
}

/// Reads a headed numeric CSV as `(header, rows × cols)`.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, Tensor)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Run(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for f in rec.iter() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| CliError::Run(format!("{}: `{f}` is not a number", path.display())))?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((header.clone(), Tensor::matrix(rows, header.len(), data)?))
}

/// Columns `x_1..x_d, y_1..y_m`.
pub fn write_points(path: &Path, d: &PointDataset) -> CliResult<()> {
    let mut h = names("x_", d.inputs.cols(), "");
    h.extend(names("y_", d.outputs.cols(), ""));
    write_matrix(path, &h, &[&d.inputs, &d.outputs])
}

pub fn read_points(path: &Path) -> CliResult<PointDataset> {
    let (h, t) = read_matrix(path)?;
    let x: Vec<usize> = (0..h.len()).filter(|&j| h[j].starts_with("x_")).collect();
    let y: Vec<usize> = (0..h.len()).filter(|&j| h[j].starts_with("y_")).collect();
    if x.is_empty() || y.is_empty() || x.len() + y.len() != h.len() {
        return Err(CliError::Run(format!("{}: expected columns x_1.., y_1..", path.display())));
    }
    Ok(PointDataset::new(t.select_cols(&x), t.select_cols(&y))?)
}

fn interleave(lo: &Tensor, hi: &Tensor) -> Tensor {
    Tensor::from_fn(lo.rows(), 2 * lo.cols(), |i, j| if j % 2 == 0 { lo.get(i, j / 2) } else { hi.get(i, j / 2) })
}

/// Columns `x1_lo, x1_hi, …, y1_lo, y1_hi, …`.
pub fn write_intervals(path: &Path, d: &IntervalDataset) -> CliResult<()> {
    let mut h = Vec::new();
    for (p, n) in [("x", d.input_dim()), ("y", d.output_dim())] {
        for i in 1..=n {
            h.push(format!("{p}{i}_lo"));
            h.push(format!("{p}{i}_hi"));
        }
    }
    let x = interleave(&d.inputs_lo, &d.inputs_hi);
    let y = interleave(&d.outputs_lo, &d.outputs_hi);
    write_matrix(path, &h, &[&x, &y])
}

pub fn read_intervals(path: &Path) -> CliResult<IntervalDataset> {
    let (h, t) = read_matrix(path)?;
    let cols = |p: &str, end: &str| -> Vec<usize> { (0..h.len()).filter(|&j| h[j].starts_with(p) && h[j].ends_with(end)).collect() };
    let (xl, xh, yl, yh) = (cols("x", "_lo"), cols("x", "_hi"), cols("y", "_lo"), cols("y", "_hi"));
    if xl.is_empty() || yl.is_empty() || xl.len() != xh.len() || yl.len() != yh.len() {
        return Err(CliError::Run(format!("{}: expected columns x1_lo, x1_hi, …, y1_lo, y1_hi, …", path.display())));
    }
    Ok(IntervalDataset::new(t.select_cols(&xl), t.select_cols(&xh), t.select_cols(&yl), t.select_cols(&yh))?)
}

/// Five files `<stem>_{sensors_lo,sensors_hi,values_lo,values_hi,coords}.csv`.
pub fn write_function_intervals(dir: &Path, stem: &str, d: &IntervalFunctionDataset) -> CliResult<Vec<String>> {
    let parts: [(&str, &Tensor, &str); 5] = [
        ("sensors_lo", &d.sensors_lo, "s"),
        ("sensors_hi", &d.sensors_hi, "s"),
        ("values_lo", &d.values_lo, "v"),
        ("values_hi", &d.values_hi, "v"),
        ("coords", &d.coords, "c"),
    ];
    let mut files = Vec::new();
    for (name, t, p) in parts {
        let file = format!("{stem}_{name}.csv");
        write_matrix(&dir.join(&file), &names(p, t.cols(), ""), &[t])?;
        files.push(file);
    }
    Ok(files)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Run(format!("cannot read {}: {e}", path.display())))?;
    r.deserialize().map(|x| x.map_err(CliError::from)).collect()
}
