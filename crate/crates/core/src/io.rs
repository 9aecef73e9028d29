//! File formats: correspondence CSV, JSON artifacts, sweep / trace / grid /
//! curve CSVs.
//!
//! Result tables and reports use 9 significant digits. Data artifacts that
//! are read back (scenes, pools, models, tables) keep full precision.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, Result};
use crate::eval::ErrorGrid;
use crate::geometry::{Correspondence, CorrespondenceSet};
use crate::localopt::OptTrace;

/// `x` rounded to 9 significant digits, printed in shortest form.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    round_sig(x).to_string()
}

pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Rounds every float in a JSON value to 9 significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig(x)))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// JSON with floats rounded to 9 significant digits.
pub fn write_report_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, &round_json(serde_json::to_value(value)?))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(serde_json::from_str(&s)?)
}

#[derive(Serialize, Deserialize)]
struct CorrRow {
    u_x: f64,
    u_y: f64,
    v_x: f64,
    v_y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

pub fn write_correspondences_csv<W: Write>(w: W, set: &CorrespondenceSet) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let labels = set.labels();
    let mut header = vec!["u_x", "u_y", "v_x", "v_y"];
    if labels.is_some() {
        header.push("label");
    }
    out.write_record(&header)?;
    for (i, c) in set.items().iter().enumerate() {
        let mut rec = vec![fmt_sig(c.u.x), fmt_sig(c.u.y), fmt_sig(c.v.x), fmt_sig(c.v.y)];
        if let Some(l) = labels {
            rec.push(u8::from(l[i]).to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `u_x,u_y,v_x,v_y[,label]`; labels must be present on all rows or none.
pub fn read_correspondences_csv<R: Read>(r: R) -> Result<CorrespondenceSet> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut items = Vec::new();
    let mut labels = Vec::new();
    for row in rdr.deserialize() {
        let row: CorrRow = row?;
        items.push(Correspondence::from_coords(row.u_x, row.u_y, row.v_x, row.v_y));
        if let Some(l) = row.label {
            if l > 1 {
                return Err(invalid(format!("label {l} is not 0 or 1")));
            }
            labels.push(l == 1);
        }
    }
    match labels.len() {
        0 => CorrespondenceSet::new(items),
        n if n == items.len() => CorrespondenceSet::with_labels(items, labels),
        _ => Err(invalid("labels must be given for all rows or none")),
    }
}

/// `threshold,score` rows.
pub fn write_sweep_csv<W: Write>(w: W, thresholds: &[f64], scores: &[f64]) -> Result<()> {
    if thresholds.len() != scores.len() {
        return Err(invalid("one score per threshold is required"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["threshold", "score"])?;
    for (t, s) in thresholds.iter().zip(scores) {
        out.write_record([fmt_sig(*t), fmt_sig(*s)])?;
    }
    out.flush()?;
    Ok(())
}

/// `iter,objective,step_norm,accepted` rows.
pub fn write_trace_csv<W: Write>(w: W, trace: &OptTrace) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "objective", "step_norm", "accepted"])?;
    for e in &trace.iterations {
        out.write_record([
            e.iter.to_string(),
            fmt_sig(e.objective),
            fmt_sig(e.step_norm),
            u8::from(e.accepted).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Metadata stored next to an error-grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub method: String,
    pub instance_ids: Vec<String>,
    pub thresholds: Vec<f64>,
}

/// Long-format `instance,threshold,error` rows (instance-major).
pub fn write_error_grid_csv<W: Write>(w: W, grid: &ErrorGrid) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["instance", "threshold", "error"])?;
    for (id, row) in grid.instance_ids.iter().zip(&grid.errors) {
        for (t, e) in grid.thresholds.iter().zip(row) {
            out.write_record([id.clone(), fmt_sig(*t), fmt_sig(*e)])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn save_error_grid(dir: &Path, stem: &str, grid: &ErrorGrid) -> Result<()> {
    write_error_grid_csv(File::create(dir.join(format!("{stem}.csv")))?, grid)?;
    let header = GridHeader {
        method: grid.method.clone(),
        instance_ids: grid.instance_ids.clone(),
        thresholds: grid.thresholds.clone(),
    };
    write_json(&dir.join(format!("{stem}.json")), &header)
}

/// Reads a grid written by [`save_error_grid`]. Thresholds come from the
/// header; rows must follow its instance and threshold order.
pub fn load_error_grid(dir: &Path, stem: &str) -> Result<ErrorGrid> {
    let header: GridHeader = read_json(&dir.join(format!("{stem}.json")))?;
    let mut rdr = csv::Reader::from_reader(File::open(dir.join(format!("{stem}.csv")))?);
    let t = header.thresholds.len();
    let mut errors = vec![Vec::with_capacity(t); header.instance_ids.len()];
    let mut count = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(invalid("grid rows need three columns"));
        }
        let (i, j) = (count / t.max(1), count % t.max(1));
        if i >= errors.len() || rec[0] != header.instance_ids[i] {
            return Err(invalid(format!("grid row {count} does not match the header order")));
        }
        let thr: f64 = rec[1].parse().map_err(|_| invalid("bad threshold"))?;
        if (thr - round_sig(header.thresholds[j])).abs() > 1e-9 * thr.abs().max(1.0) {
            return Err(invalid(format!("grid row {count} threshold does not match the header")));
        }
        errors[i].push(rec[2].parse().map_err(|_| invalid("bad error value"))?);
        count += 1;
    }
    if count != t * header.instance_ids.len() {
        return Err(invalid("grid CSV is incomplete"));
    }
    ErrorGrid::new(header.method, header.instance_ids, header.thresholds, errors)
}

/// `x,<name>...` columns of equal length.
pub fn write_curve_csv<W: Write>(w: W, x_name: &str, x: &[f64], columns: &[(&str, &[f64])]) -> Result<()> {
    if columns.iter().any(|(_, c)| c.len() != x.len()) {
        return Err(invalid("curve columns must match the x axis length"));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![x_name.to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    out.write_record(&header)?;
    for (i, xi) in x.iter().enumerate() {
        let mut rec = vec![fmt_sig(*xi)];
        rec.extend(columns.iter().map(|(_, c)| fmt_sig(c[i])));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
