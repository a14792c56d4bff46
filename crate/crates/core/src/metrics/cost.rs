//! Compute-cost measurement of protocol operations.
//!
//! [`CostClock::CpuTime`] reads the calling thread's CPU clock.
//! [`CostClock::Model`] prices the cryptographic operations counted by a
//! [`MeteredProvider`], which keeps run logs reproducible byte for byte.

use std::sync::Arc;

use crate::crypto::MeteredProvider;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostClock {
    CpuTime,
    Model,
}

impl CostClock {
    pub fn as_str(self) -> &'static str {
        match self {
            CostClock::CpuTime => "cpu",
            CostClock::Model => "model",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CostMeter {
    clock: CostClock,
    metered: Option<Arc<MeteredProvider>>,
}

fn thread_cpu_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0, "thread CPU clock unavailable");
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

impl CostMeter {
    pub fn cpu_time() -> Self {
        CostMeter {
            clock: CostClock::CpuTime,
            metered: None,
        }
    }

    pub fn model(provider: Arc<MeteredProvider>) -> Self {
        CostMeter {
            clock: CostClock::Model,
            metered: Some(provider),
        }
    }

    pub fn clock(&self) -> CostClock {
        self.clock
    }

    /// Runs `f` and returns its result with its cost in microseconds.
    pub fn measure<T>(&self, f: impl FnOnce() -> T) -> (T, u64) {
        match &self.metered {
            Some(p) => {
                let before = p.snapshot();
                let out = f();
                let ns = (p.snapshot() - before).model_cost_ns();
                (out, (ns + 500) / 1000)
            }
            None => {
                let start = thread_cpu_ns();
                let out = f();
                let ns = thread_cpu_ns().saturating_sub(start);
                (out, (ns + 500) / 1000)
            }
        }
    }
}
