//! Aggregation by group size and least-squares fits.

use std::collections::BTreeMap;

use super::MetricsError;

/// Average Update cost: `(cc + sum(cp)) / n`.
pub fn auc(cc: f64, cp: &[f64], n: usize) -> Result<f64, MetricsError> {
    if n == 0 || !(cp.is_empty() || cp.len() == n) {
        return Err(MetricsError::BadArity { got: cp.len(), n });
    }
    Ok((cc + cp.iter().sum::<f64>()) / n as f64)
}

/// How group sizes map to series x values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bucketing {
    Exact,
    /// Nearest power of two on a log scale, e.g. sizes 46..=90 map to 64.
    Log2,
}

impl Bucketing {
    pub fn bucket(self, size: u32) -> u32 {
        match self {
            Bucketing::Exact => size,
            Bucketing::Log2 => {
                let e = (size.max(1) as f64).log2().round() as u32;
                1 << e
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(x, y)` sorted by x.
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.to_string(),
            points,
        }
    }

    pub fn get(&self, x: f64) -> Option<f64> {
        self.points.iter().find(|(px, _)| *px == x).map(|(_, y)| *y)
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    /// Points whose x lies in `xs`.
    pub fn restrict(&self, xs: &[f64]) -> Series {
        Series::new(
            &self.name,
            self.points.iter().copied().filter(|(x, _)| xs.contains(x)).collect(),
        )
    }
}

/// Arithmetic mean of `(group_size, value)` samples per bucket. Empty
/// buckets are omitted.
pub fn aggregate(name: &str, samples: impl IntoIterator<Item = (u32, f64)>, bucketing: Bucketing) -> Series {
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (size, v) in samples {
        let e = acc.entry(bucketing.bucket(size)).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    Series::new(
        name,
        acc.into_iter().map(|(x, (s, n))| (x as f64, s / n as f64)).collect(),
    )
}

/// Mean across runs per x value, over the runs that have that x.
pub fn average_series(name: &str, runs: &[Series]) -> Series {
    let mut acc: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for s in runs {
        for &(x, y) in &s.points {
            let e = acc.entry(x.to_bits()).or_insert((x, 0.0, 0));
            e.1 += y;
            e.2 += 1;
        }
    }
    let mut points: Vec<(f64, f64)> = acc.into_values().map(|(x, s, n)| (x, s / n as f64)).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Series::new(name, points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitModel {
    /// `y = slope * x + intercept`
    Linear,
    /// `y = slope * ln(x) + intercept`
    Logarithmic,
}

impl FitModel {
    pub fn as_str(self) -> &'static str {
        match self {
            FitModel::Linear => "linear",
            FitModel::Logarithmic => "logarithmic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionFit {
    pub model: FitModel,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit(series: &Series, model: FitModel) -> Result<RegressionFit, MetricsError> {
    if series.points.len() < 3 {
        return Err(MetricsError::DegenerateSeries);
    }
    let xs: Vec<f64> = series
        .points
        .iter()
        .map(|&(x, _)| match model {
            FitModel::Linear => x,
            FitModel::Logarithmic => x.ln(),
        })
        .collect();
    let ys: Vec<f64> = series.points.iter().map(|p| p.1).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !sxx.is_finite() || sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(MetricsError::DegenerateSeries);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - (slope * x + intercept)).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(RegressionFit {
        model,
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(1000.0, &[100.0; 4], 4).unwrap(), 350.0);
        assert_eq!(auc(1065.0, &[], 1).unwrap(), 1065.0);
        assert!(matches!(auc(1.0, &[100.0], 4), Err(MetricsError::BadArity { .. })));
        assert!(auc(1.0, &[], 0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate("cost", [(8, 4000.0), (8, 6000.0), (16, 1.0)], Bucketing::Exact);
        assert_eq!(s.points, vec![(8.0, 5000.0), (16.0, 1.0)]);
        let runs = [
            Series::new("a", vec![(8.0, 1.0), (16.0, 2.0)]),
            Series::new("b", vec![(8.0, 3.0), (16.0, 4.0)]),
            Series::new("c", vec![(8.0, 5.0)]),
        ];
        assert_eq!(average_series("m", &runs).points, vec![(8.0, 3.0), (16.0, 3.0)]);
    }

    #[test]
    fn log2_buckets() {
        let b = Bucketing::Log2;
        assert_eq!([1, 2, 3, 5, 6, 8, 11, 12, 45, 46, 90, 91, 128].map(|s| b.bucket(s)), [1, 2, 4, 4, 8, 8, 8, 16, 32, 64, 64, 128, 128]);
    }

    #[test]
    fn fits() {
        let line = Series::new("l", (1..=5).map(|x| (x as f64, 2.0 * x as f64 + 1.0)).collect());
        let f = fit(&line, FitModel::Linear).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);

        let log = Series::new("g", [2.0f64, 4.0, 8.0, 16.0, 32.0].iter().map(|&x| (x, 3.0 * x.ln())).collect());
        assert!((fit(&log, FitModel::Logarithmic).unwrap().r_squared - 1.0).abs() < 1e-12);
        assert!(fit(&log, FitModel::Linear).unwrap().r_squared < 1.0);

        let two = Series::new("t", vec![(1.0, 1.0), (2.0, 2.0)]);
        assert!(matches!(fit(&two, FitModel::Linear), Err(MetricsError::DegenerateSeries)));
        let flat = Series::new("f", vec![(3.0, 1.0), (3.0, 2.0), (3.0, 5.0)]);
        assert!(matches!(fit(&flat, FitModel::Linear), Err(MetricsError::DegenerateSeries)));
    }
}
