//! Per-link latency models.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::SessionId;
use crate::{VirtualTime, NS_PER_MS};

/// One-way link latency distribution, parameters in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatencyModel {
    Constant { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
    /// Normal distribution truncated to non-negative values by resampling.
    Normal { mean_ms: f64, std_ms: f64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Uniform {
            min_ms: 5.0,
            max_ms: 25.0,
        }
    }
}

impl LatencyModel {
    pub fn sample_ns(&self, rng: &mut impl Rng) -> VirtualTime {
        let ms = match *self {
            LatencyModel::Constant { ms } => ms,
            LatencyModel::Uniform { min_ms, max_ms } => {
                if max_ms > min_ms {
                    rng.gen_range(min_ms..max_ms)
                } else {
                    min_ms
                }
            }
            LatencyModel::Normal { mean_ms, std_ms } => match Normal::new(mean_ms, std_ms) {
                Ok(dist) => (0..64).map(|_| dist.sample(rng)).find(|v| *v >= 0.0).unwrap_or(0.0),
                Err(_) => mean_ms,
            },
        };
        (ms.max(0.0) * NS_PER_MS as f64).round() as VirtualTime
    }

    pub fn mean_ms(&self) -> f64 {
        match *self {
            LatencyModel::Constant { ms } => ms,
            LatencyModel::Uniform { min_ms, max_ms } => (min_ms + max_ms) / 2.0,
            LatencyModel::Normal { mean_ms, .. } => mean_ms,
        }
    }

    /// Inverse of [`parse`](Self::parse).
    pub fn spec(&self) -> String {
        match *self {
            LatencyModel::Constant { ms } => format!("constant:{ms}"),
            LatencyModel::Uniform { min_ms, max_ms } => format!("uniform:{min_ms}:{max_ms}"),
            LatencyModel::Normal { mean_ms, std_ms } => format!("normal:{mean_ms}:{std_ms}"),
        }
    }

    /// Parses `constant:<ms>`, `uniform:<min>:<max>` or `normal:<mean>:<std>`.
    pub fn parse(s: &str) -> Option<LatencyModel> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| parts.get(i).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite() && *v >= 0.0);
        match (parts.first().copied(), parts.len()) {
            (Some("constant"), 2) => Some(LatencyModel::Constant { ms: num(1)? }),
            (Some("uniform"), 3) if num(1)? <= num(2)? => Some(LatencyModel::Uniform {
                min_ms: num(1)?,
                max_ms: num(2)?,
            }),
            (Some("normal"), 3) => Some(LatencyModel::Normal {
                mean_ms: num(1)?,
                std_ms: num(2)?,
            }),
            _ => None,
        }
    }
}

/// Latency models for every directed link: a default plus per-link overrides.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Links {
    pub default: LatencyModel,
    overrides: HashMap<(SessionId, SessionId), LatencyModel>,
}

impl Links {
    pub fn with_default(model: LatencyModel) -> Self {
        Links {
            default: model,
            overrides: HashMap::new(),
        }
    }

    pub fn set(&mut self, src: SessionId, dst: SessionId, model: LatencyModel) {
        self.overrides.insert((src, dst), model);
    }

    pub fn model(&self, src: SessionId, dst: SessionId) -> &LatencyModel {
        self.overrides.get(&(src, dst)).unwrap_or(&self.default)
    }
}
