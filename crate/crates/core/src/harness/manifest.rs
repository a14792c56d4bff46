//! Run manifests: what was run and what came out, as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sim::RunOutcome;
use super::HarnessError;
use crate::NS_PER_MS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub version: String,
    pub seed: u64,
    pub replicas: usize,
    pub ds: String,
    pub policy: String,
    pub paradigm: String,
    pub proposals_per_commit: usize,
    pub external_join: bool,
    pub termination: String,
    pub cost_clock: String,
    pub cost_unit: String,
    pub suite: String,
    pub link_model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestResult {
    pub reached: bool,
    pub end_time_ms: u64,
    pub events: u64,
    pub records: usize,
    pub max_group_size: u32,
    pub commits_won: u64,
    pub commits_lost: u64,
    pub stale_commits: u64,
    pub evictions: u64,
    pub resyncs: u64,
    pub dropped_groups: u64,
    pub joins_lost: u64,
    pub joins_abandoned: u64,
    pub malformed: u64,
    pub failed_opens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run: ManifestRun,
    pub result: ManifestResult,
}

impl Manifest {
    pub fn from_outcome(o: &RunOutcome) -> Manifest {
        let s = &o.scenario;
        let c = &s.config;
        Manifest {
            run: ManifestRun {
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: s.seed,
                replicas: c.replicas,
                ds: c.ds.as_str().to_string(),
                policy: c.auth_policy.as_str().to_string(),
                paradigm: c.paradigm.as_str().to_string(),
                proposals_per_commit: c.proposals_per_commit,
                external_join: c.external_join,
                termination: s.termination.to_string(),
                cost_clock: s.cost_clock.as_str().to_string(),
                cost_unit: "us".to_string(),
                suite: s.suite.as_str().to_string(),
                link_model: s.links.default.spec(),
            },
            result: ManifestResult {
                reached: o.reached,
                end_time_ms: o.end_time / NS_PER_MS,
                events: o.events,
                records: o.records.len(),
                max_group_size: o.max_group_size,
                commits_won: o.stats.commits_won,
                commits_lost: o.stats.commits_lost,
                stale_commits: o.stats.stale_commits,
                evictions: o.stats.evictions,
                resyncs: o.stats.resyncs,
                dropped_groups: o.stats.dropped_groups,
                joins_lost: o.stats.joins_lost,
                joins_abandoned: o.stats.joins_abandoned,
                malformed: o.stats.malformed,
                failed_opens: o.stats.failed_opens,
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest fields always serialize")
    }

    pub fn read(path: &Path) -> Result<Manifest, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::BadManifest {
            path: path.to_path_buf(),
            reason: e.message().to_string(),
        })
    }
}
