//! CSV and plot-data files.

use std::path::Path;

use super::analysis::Series;
use super::latency::LatencySample;
use super::MetricsError;

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Writes `group_size,<metric>` followed by one row per point.
pub fn export_csv(series: &Series, metric: &str, path: &Path) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group_size", metric])?;
    for &(x, y) in &series.points {
        w.write_record([fmt_num(x), fmt_num(y)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`export_csv`]; the metric column names the series.
pub fn read_csv(path: &Path) -> Result<Series, MetricsError> {
    let mut r = csv::Reader::from_path(path)?;
    let name = r.headers()?.get(1).unwrap_or("value").to_string();
    let mut points = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let parse = |k: usize| -> Result<f64, MetricsError> {
            row.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| MetricsError::BadLine {
                    line: i + 2,
                    reason: format!("column {k} is not a number"),
                })
        };
        points.push((parse(0)?, parse(1)?));
    }
    Ok(Series::new(&name, points))
}

/// Several labelled series aligned on the union of their x values; missing
/// cells are left empty.
pub fn export_combined_csv(series: &[Series], path: &Path) -> Result<(), MetricsError> {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.xs()).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["group_size".to_string()];
    header.extend(series.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for x in xs {
        let mut row = vec![fmt_num(x)];
        row.extend(series.iter().map(|s| s.get(x).map(fmt_num).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_latency_csv(samples: &[LatencySample], path: &Path) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "group_size", "committer", "commit_ts", "members", "mean_latency_ns", "max_latency_ns"])?;
    for s in samples {
        w.write_record([
            s.group.clone(),
            s.group_size.to_string(),
            s.committer.clone(),
            s.commit_ts.to_string(),
            s.latencies_ns.len().to_string(),
            s.mean_ns().map(fmt_num).unwrap_or_default(),
            s.max_ns().map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated `x y` lines.
pub fn export_plotdata(series: &Series, path: &Path) -> Result<(), MetricsError> {
    let mut out = String::new();
    for &(x, y) in &series.points {
        out.push_str(&format!("{} {}\n", fmt_num(x), fmt_num(y)));
    }
    std::fs::write(path, out)?;
    Ok(())
}
