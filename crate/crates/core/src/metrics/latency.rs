//! Commit latency: time from a commit's generation to its application by
//! each other member.

use std::collections::BTreeMap;

use super::log::{Action, LogRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct LatencySample {
    pub group: String,
    pub committer: String,
    pub action: Action,
    pub group_size: u32,
    pub commit_ts: u64,
    /// Per processing member, `process_ts - commit_ts`.
    pub latencies_ns: Vec<u64>,
}

impl LatencySample {
    /// `None` when no member processed the commit.
    pub fn mean_ns(&self) -> Option<f64> {
        if self.latencies_ns.is_empty() {
            return None;
        }
        Some(self.latencies_ns.iter().map(|&l| l as f64).sum::<f64>() / self.latencies_ns.len() as f64)
    }

    pub fn max_ns(&self) -> Option<u64> {
        self.latencies_ns.iter().copied().max()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyReport {
    pub samples: Vec<LatencySample>,
    /// Process records with no matching preceding commit.
    pub orphan_processes: usize,
}

/// Pairs every commit record with the `Process` records that name its
/// committer and precede the group's next commit. Records are ordered by
/// timestamp first; ties keep input order.
pub fn compute_latency(records: &[LogRecord]) -> LatencyReport {
    let mut order: Vec<&LogRecord> = records.iter().collect();
    order.sort_by_key(|r| r.timestamp_ns);
    let mut report = LatencyReport::default();
    let mut current: BTreeMap<&str, usize> = BTreeMap::new();
    for r in order {
        if r.action.is_commit() {
            current.insert(&r.group, report.samples.len());
            report.samples.push(LatencySample {
                group: r.group.clone(),
                committer: r.actor.clone(),
                action: r.action,
                group_size: r.group_size,
                commit_ts: r.timestamp_ns,
                latencies_ns: Vec::new(),
            });
        } else if r.action == Action::Process {
            let matched = current.get(r.group.as_str()).map(|&i| &mut report.samples[i]).filter(|s| {
                r.counterpart.as_deref() == Some(s.committer.as_str()) && r.timestamp_ns >= s.commit_ts
            });
            match matched {
                Some(s) => s.latencies_ns.push(r.timestamp_ns - s.commit_ts),
                None => report.orphan_processes += 1,
            }
        }
    }
    report
}
