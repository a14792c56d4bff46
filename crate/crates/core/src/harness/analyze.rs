//! Offline analysis of run directories.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::manifest::Manifest;
use super::HarnessError;
use crate::metrics::{
    aggregate, auc, average_series, compute_latency, export, fit, parse_log, Action, Bucketing, FitModel, LatencySample,
    LogRecord, Series,
};
use crate::NS_PER_MS;

/// One run directory: its log and, when present, its manifest.
#[derive(Clone, Debug)]
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: Option<Manifest>,
    pub records: Vec<LogRecord>,
}

impl RunData {
    pub fn proposals_per_commit(&self) -> usize {
        match &self.manifest {
            Some(m) if m.run.paradigm == "propose" => m.run.proposals_per_commit.max(1),
            _ => 1,
        }
    }
}

pub fn load_run(dir: &Path) -> Result<RunData, HarnessError> {
    let log = dir.join("log.txt");
    if !log.is_file() {
        return Err(HarnessError::EmptyRun(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&log).map_err(|e| HarnessError::io(&log, e))?;
    let records = parse_log(&text).map_err(|e| HarnessError::metrics(&log, e))?;
    let manifest_path = dir.join("manifest.toml");
    let manifest = if manifest_path.is_file() {
        Some(Manifest::read(&manifest_path)?)
    } else {
        None
    };
    Ok(RunData {
        dir: dir.to_path_buf(),
        manifest,
        records,
    })
}

/// A path is either a run directory or a directory of run directories.
fn collect_runs(path: &Path) -> Result<Vec<RunData>, HarnessError> {
    if path.join("log.txt").is_file() {
        return Ok(vec![load_run(path)?]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| HarnessError::io(path, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("log.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(HarnessError::EmptyRun(path.to_path_buf()));
    }
    dirs.iter().map(|d| load_run(d)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnalyzeOptions {
    pub bucketing: Bucketing,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            bucketing: Bucketing::Exact,
        }
    }
}

/// Every metric series derived from one run, keyed by metric name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSeries {
    pub series: BTreeMap<String, Series>,
    pub latency: Vec<LatencySample>,
}

fn member_commit(a: Action) -> bool {
    matches!(a, Action::Invite | Action::Remove | Action::Update)
}

impl RunSeries {
    pub fn from_records(records: &[LogRecord], proposals_per_commit: usize, bucketing: Bucketing) -> RunSeries {
        let mut out = RunSeries::default();
        let mut put = |name: &str, pick: &dyn Fn(&LogRecord) -> Option<f64>| {
            let s = aggregate(name, records.iter().filter_map(|r| pick(r).map(|v| (r.group_size, v))), bucketing);
            if !s.points.is_empty() {
                out.series.insert(name.to_string(), s);
            }
        };
        let cost = |keep: fn(Action) -> bool| move |r: &LogRecord| keep(r.action).then_some(r.cost_us as f64);
        let size = |keep: fn(Action) -> bool| move |r: &LogRecord| keep(r.action).then_some(r.size_bytes? as f64);
        put("generation_cost_us", &cost(member_commit));
        put("invite_cost_us", &cost(|a| a == Action::Invite));
        put("remove_cost_us", &cost(|a| a == Action::Remove));
        put("update_cost_us", &cost(|a| a == Action::Update));
        put("join_cost_us", &cost(|a| a == Action::Join));
        put("processing_cost_us", &cost(|a| a == Action::Process));
        put("welcome_cost_us", &cost(|a| a == Action::Welcome));
        put("group_info_cost_us", &cost(|a| a == Action::GroupInfo));
        put("proposal_cost_us", &cost(|a| a == Action::Propose));
        put("commit_size_bytes", &size(member_commit));
        put("update_size_bytes", &size(|a| a == Action::Update));
        put("join_size_bytes", &size(|a| a == Action::Join));
        put("welcome_size_bytes", &size(|a| a == Action::Welcome));
        put("group_info_size_bytes", &size(|a| a == Action::GroupInfo));
        put("proposal_size_bytes", &size(|a| a == Action::Propose));

        let report = compute_latency(records);
        let mean = aggregate(
            "latency_mean_ms",
            report
                .samples
                .iter()
                .filter_map(|s| s.mean_ns().map(|m| (s.group_size, m / NS_PER_MS as f64))),
            bucketing,
        );
        let max = aggregate(
            "latency_max_ms",
            report
                .samples
                .iter()
                .filter_map(|s| s.max_ns().map(|m| (s.group_size, m as f64 / NS_PER_MS as f64))),
            bucketing,
        );
        for s in [mean, max] {
            if !s.points.is_empty() {
                out.series.insert(s.name.clone(), s);
            }
        }
        out.latency = report.samples;

        if let (Some(inv), Some(wel)) = (out.series.get("invite_cost_us"), out.series.get("welcome_cost_us")) {
            let pts: Vec<(f64, f64)> = inv.points.iter().filter_map(|&(x, c)| wel.get(x).map(|w| (x, c + w))).collect();
            if !pts.is_empty() {
                out.series.insert(
                    "commit_plus_welcome_cost_us".into(),
                    Series::new("commit_plus_welcome_cost_us", pts),
                );
            }
        }

        let k = proposals_per_commit.max(1);
        let gen = out.series.get("generation_cost_us");
        let proc_ = out.series.get("processing_cost_us");
        let size = out.series.get("commit_size_bytes");
        let pcost = out.series.get("proposal_cost_us");
        let psize = out.series.get("proposal_size_bytes");
        let mut aucs = Vec::new();
        for (name, commit, per_proposal) in [
            ("auc_generation_us", gen, pcost),
            ("auc_processing_us", proc_, None),
            ("auc_size_bytes", size, psize),
        ] {
            let Some(commit) = commit else { continue };
            let mut pts = Vec::new();
            for &(x, cc) in &commit.points {
                let cp = if k == 1 {
                    Vec::new()
                } else {
                    match per_proposal {
                        Some(p) => match p.get(x) {
                            Some(v) => vec![v; k],
                            None => continue,
                        },
                        None => vec![0.0; k],
                    }
                };
                if let Ok(v) = auc(cc, &cp, k) {
                    pts.push((x, v));
                }
            }
            let name = format!("{name}_k{k}");
            aucs.push(Series::new(&name, pts));
        }
        for s in aucs {
            if !s.points.is_empty() {
                out.series.insert(s.name.clone(), s);
            }
        }
        out
    }
}

/// Averages each metric over the runs that produced it.
fn average_runs(runs: &[RunSeries]) -> BTreeMap<String, Series> {
    let names: BTreeSet<&String> = runs.iter().flat_map(|r| r.series.keys()).collect();
    names
        .into_iter()
        .map(|n| {
            let per_run: Vec<Series> = runs.iter().filter_map(|r| r.series.get(n).cloned()).collect();
            (n.clone(), average_series(n, &per_run))
        })
        .collect()
}

fn series_for(runs: &[RunData], opts: AnalyzeOptions) -> (BTreeMap<String, Series>, Vec<LatencySample>) {
    let per_run: Vec<RunSeries> = runs
        .iter()
        .map(|r| RunSeries::from_records(&r.records, r.proposals_per_commit(), opts.bucketing))
        .collect();
    let latency = per_run.iter().flat_map(|r| r.latency.clone()).collect();
    (average_runs(&per_run), latency)
}

fn write_fits(series: &BTreeMap<String, Series>, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::metrics(path, e.into()))?;
    let row = |w: &mut csv::Writer<std::fs::File>, rec: &[String]| {
        w.write_record(rec).map_err(|e| HarnessError::metrics(path, e.into()))
    };
    row(&mut w, &["series", "model", "slope", "intercept", "r_squared"].map(String::from))?;
    for (name, s) in series {
        for model in [FitModel::Linear, FitModel::Logarithmic] {
            if let Ok(f) = fit(s, model) {
                row(
                    &mut w,
                    &[
                        name.clone(),
                        model.as_str().into(),
                        f.slope.to_string(),
                        f.intercept.to_string(),
                        f.r_squared.to_string(),
                    ],
                )?;
            }
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Writes one CSV and one plot-data file per metric, averaged over every
/// run found under `inputs`, plus `fits.csv` and `latency_samples.csv`.
/// Runs with a different `proposals_per_commit` contribute separate auc series.
pub fn analyze(inputs: &[PathBuf], out: &Path, opts: AnalyzeOptions) -> Result<Vec<PathBuf>, HarnessError> {
    if inputs.is_empty() {
        return Err(HarnessError::EmptyRun(PathBuf::from(".")));
    }
    let mut runs = Vec::new();
    for p in inputs {
        runs.extend(collect_runs(p)?);
    }
    let (mut series, latency) = series_for(&runs, opts);
    // auc series come from each proposals-per-commit group separately.
    series.retain(|n, _| !n.starts_with("auc_"));
    let mut by_k: BTreeMap<usize, Vec<RunData>> = BTreeMap::new();
    for r in runs {
        by_k.entry(r.proposals_per_commit()).or_default().push(r);
    }
    for group in by_k.values() {
        let (s, _) = series_for(group, opts);
        series.extend(s.into_iter().filter(|(n, _)| n.starts_with("auc_")));
    }

    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut written = Vec::new();
    for (name, s) in &series {
        let csv_path = out.join(format!("{name}.csv"));
        export::export_csv(s, name, &csv_path).map_err(|e| HarnessError::metrics(&csv_path, e))?;
        let dat = out.join(format!("{name}.dat"));
        export::export_plotdata(s, &dat).map_err(|e| HarnessError::metrics(&dat, e))?;
        written.push(csv_path);
        written.push(dat);
    }
    let fits = out.join("fits.csv");
    write_fits(&series, &fits)?;
    written.push(fits);
    let lat = out.join("latency_samples.csv");
    export::export_latency_csv(&latency, &lat).map_err(|e| HarnessError::metrics(&lat, e))?;
    written.push(lat);
    Ok(written)
}

fn labels(inputs: &[PathBuf], sets: &[Vec<RunData>]) -> Vec<String> {
    type Field = fn(&Manifest) -> String;
    let fields: [Field; 5] = [
        |m| m.run.ds.clone(),
        |m| m.run.policy.clone(),
        |m| format!("{}-k{}", m.run.paradigm, m.run.proposals_per_commit),
        |m| if m.run.external_join { "external".into() } else { "invite".into() },
        |m| m.run.cost_clock.clone(),
    ];
    let manifests: Option<Vec<&Manifest>> = sets.iter().map(|s| s[0].manifest.as_ref()).collect();
    if let Some(ms) = manifests {
        for f in fields {
            let vals: Vec<String> = ms.iter().map(|m| f(m)).collect();
            let distinct: BTreeSet<&String> = vals.iter().collect();
            if distinct.len() == vals.len() {
                return vals;
            }
        }
    }
    let names: Vec<String> = inputs
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string()))
        .collect();
    let distinct: BTreeSet<&String> = names.iter().collect();
    if distinct.len() == names.len() {
        names
    } else {
        names.iter().enumerate().map(|(i, n)| format!("{n}-{i}")).collect()
    }
}

/// Aligns the same metrics from several run sets into one labelled CSV per
/// metric. With `metrics` empty, every metric common to all inputs is used.
pub fn compare(
    inputs: &[PathBuf],
    metrics: &[String],
    out: &Path,
    opts: AnalyzeOptions,
) -> Result<Vec<PathBuf>, HarnessError> {
    if inputs.len() < 2 {
        return Err(HarnessError::IncompatibleRuns(format!(
            "need at least two run sets, got {}",
            inputs.len()
        )));
    }
    let sets: Vec<Vec<RunData>> = inputs.iter().map(|p| collect_runs(p)).collect::<Result<_, _>>()?;
    let averaged: Vec<BTreeMap<String, Series>> = sets.iter().map(|s| series_for(s, opts).0).collect();
    let chosen: Vec<String> = if metrics.is_empty() {
        let mut common: BTreeSet<&String> = averaged[0].keys().collect();
        for a in &averaged[1..] {
            common.retain(|k| a.contains_key(*k));
        }
        common.into_iter().cloned().collect()
    } else {
        for m in metrics {
            for (a, p) in averaged.iter().zip(inputs) {
                if !a.contains_key(m) {
                    return Err(HarnessError::IncompatibleRuns(format!("{} has no {m} data", p.display())));
                }
            }
        }
        metrics.to_vec()
    };
    if chosen.is_empty() {
        return Err(HarnessError::IncompatibleRuns("the inputs share no metric".into()));
    }
    let labels = labels(inputs, &sets);
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut written = Vec::new();
    for metric in &chosen {
        let labelled: Vec<Series> = averaged
            .iter()
            .zip(&labels)
            .map(|(a, l)| Series::new(l, a[metric].points.clone()))
            .collect();
        let path = out.join(format!("compare_{metric}.csv"));
        export::export_combined_csv(&labelled, &path).map_err(|e| HarnessError::metrics(&path, e))?;
        written.push(path);
        for s in &labelled {
            let dat = out.join(format!("compare_{metric}_{}.dat", s.name));
            export::export_plotdata(s, &dat).map_err(|e| HarnessError::metrics(&dat, e))?;
            written.push(dat);
        }
    }
    Ok(written)
}
