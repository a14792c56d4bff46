//! Scenario runner and offline analysis.
//!
//! [`run_scenario`] drives a population of clients against one delivery
//! service on a virtual clock. [`write_run`] persists the log and a
//! manifest; [`analyze`] and [`compare`] turn run directories into CSV and
//! plot-data files.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::client::{ClientConfig, ConfigError};
use crate::delivery::{DeliveryError, GossipParams, LatencyModel, Links};
use crate::metrics::{CostClock, MetricsError};
use crate::VirtualTime;

mod analyze;
mod manifest;
mod sim;

pub use analyze::{analyze, compare, load_run, AnalyzeOptions, RunData, RunSeries};
pub use manifest::Manifest;
pub use sim::{run_scenario, write_run, RunOutcome, Simulation};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Delivery(#[from] DeliveryError),
    #[error("no event fired between {last_ms} ms and {next_ms} ms of virtual time: {diagnostic}")]
    Deadlock {
        last_ms: u64,
        next_ms: u64,
        diagnostic: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Metrics {
        path: PathBuf,
        #[source]
        source: MetricsError,
    },
    #[error("bad manifest {}: {reason}", path.display())]
    BadManifest { path: PathBuf, reason: String },
    #[error("no run logs found under {}", .0.display())]
    EmptyRun(PathBuf),
    #[error("runs cannot be compared: {0}")]
    IncompatibleRuns(String),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn metrics(path: impl Into<PathBuf>, source: MetricsError) -> Self {
        HarnessError::Metrics {
            path: path.into(),
            source,
        }
    }
}

/// When a run stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Virtual milliseconds since the start.
    Duration { ms: u64 },
    /// First moment any member sees a group of this many members.
    TargetSize(u32),
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Duration { ms } => write!(f, "duration:{ms}ms"),
            Termination::TargetSize(n) => write!(f, "target-size:{n}"),
        }
    }
}

/// Which cryptographic provider the clients use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// X25519, ChaCha20-Poly1305, SHA-256, Ed25519.
    Real,
    /// Fast insecure arithmetic suite for large functional runs.
    Toy,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Real => "x25519-chacha20poly1305-sha256-ed25519",
            Suite::Toy => "toy",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    /// Client behaviour. `config.replicas` is the number of clients and
    /// `config.ds` selects the delivery service.
    pub config: ClientConfig,
    pub seed: u64,
    pub termination: Termination,
    pub cost_clock: CostClock,
    pub suite: Suite,
    pub links: Links,
    pub gossip: GossipParams,
    /// Hard stop for target-size runs that never reach their target.
    pub max_virtual_ms: u64,
}

impl Scenario {
    pub fn new(config: ClientConfig, seed: u64, termination: Termination) -> Self {
        Scenario {
            config,
            seed,
            termination,
            cost_clock: CostClock::CpuTime,
            suite: Suite::Real,
            links: Links::with_default(LatencyModel::default()),
            gossip: GossipParams::default(),
            max_virtual_ms: 30 * 24 * 3600 * 1000,
        }
    }

    pub(crate) fn end_time(&self) -> VirtualTime {
        let cap = self.max_virtual_ms * crate::NS_PER_MS;
        match self.termination {
            Termination::Duration { ms } => (ms * crate::NS_PER_MS).min(cap),
            Termination::TargetSize(_) => cap,
        }
    }
}
