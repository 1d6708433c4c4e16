//! CSV persistence of recorded time series and Monte-Carlo summaries.
//!
//! Floats are written with 17 significant digits, which reproduces every
//! `f64` exactly on reading.

use std::fs;
use std::path::{Path, PathBuf};

use crate::engine::TimeSeriesRecord;
use crate::error::{Error, Result};
use crate::montecarlo::MonteCarloReport;

pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Header plus one row per recorded step.
pub fn write_csv(record: &TimeSeriesRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(&record.columns)?;
    let k_col = record.column_index("k");
    for row in &record.rows {
        let fields = row.iter().enumerate().map(|(i, &v)| {
            if Some(i) == k_col {
                format!("{}", v as u64)
            } else {
                format_f64(v)
            }
        });
        w.write_record(fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Column names and numeric rows of a file written by [`write_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "{}: row {}: `{f}` is not a number",
                        path.display(),
                        line + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((columns, rows))
}

/// `<out>/<stem>/run<idx>.csv`
pub fn run_csv_path(out: &Path, stem: &str, run: usize) -> PathBuf {
    out.join(stem).join(format!("run{run}.csv"))
}

/// `<out>/<stem>/aggregate.csv`
pub fn aggregate_path(out: &Path, stem: &str) -> PathBuf {
    out.join(stem).join("aggregate.csv")
}

/// One row per run plus a final `mean` row.
pub fn write_aggregate(report: &MonteCarloReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let metric_names: Vec<&String> = report
        .per_run
        .first()
        .map(|r| r.metrics.keys().collect())
        .unwrap_or_default();
    let mut header = vec![
        "run".to_string(),
        "seed".into(),
        "n".into(),
        "excess_kurtosis".into(),
        "hill".into(),
        "mean_acf_raw".into(),
        "mean_abs_acf_raw".into(),
        "mean_acf_abs".into(),
    ];
    header.extend(metric_names.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for run in &report.per_run {
        let s = &run.stats;
        let mut row = vec![
            run.run.to_string(),
            run.seed.to_string(),
            s.n.to_string(),
            format_f64(s.excess_kurtosis),
            format_f64(s.hill),
            format_f64(s.mean_acf_raw()),
            format_f64(s.mean_abs_acf_raw()),
            format_f64(s.mean_acf_abs()),
        ];
        row.extend(metric_names.iter().map(|k| format_f64(run.metrics[*k])));
        w.write_record(&row)?;
    }
    let m = &report.mean;
    let mut row = vec![
        "mean".to_string(),
        String::new(),
        m.n.to_string(),
        format_f64(m.excess_kurtosis),
        format_f64(m.hill),
        format_f64(m.mean_acf_raw()),
        format_f64(m.mean_abs_acf_raw()),
        format_f64(m.mean_acf_abs()),
    ];
    row.extend(
        metric_names
            .iter()
            .map(|k| format_f64(report.mean_metrics[*k])),
    );
    w.write_record(&row)?;
    w.flush().map_err(|e| Error::io(path, e))
}
