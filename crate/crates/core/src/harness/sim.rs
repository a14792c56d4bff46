//! The discrete-event loop.

use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::manifest::Manifest;
use super::{HarnessError, Scenario, Suite, Termination};
use crate::client::{Client, ClientStats, Env};
use crate::crypto::{hex, CryptoProvider, MeteredProvider, RustCryptoProvider, ToyProvider};
use crate::delivery::{
    new_service_with, CentralDirectory, DeliveryService, DhtDirectory, Directory, DsKind, UserRegistry,
};
use crate::metrics::{CostClock, CostMeter, LogRecord, LogSink};
use crate::{VirtualTime, NS_PER_MS};

/// A population of clients sharing one delivery service and directory.
pub struct Simulation {
    scenario: Scenario,
    ds: Box<dyn DeliveryService>,
    directory: Arc<dyn Directory>,
    dht: Option<Arc<DhtDirectory>>,
    registry: UserRegistry,
    log: LogSink,
    crypto: Arc<dyn CryptoProvider>,
    meter: CostMeter,
    clients: Vec<Client>,
    master: ChaCha20Rng,
    now: VirtualTime,
    last_event: VirtualTime,
    events: u64,
    max_group_size: u32,
}

enum Next {
    Network,
    Deadline(usize),
    Wake(usize),
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Simulation, HarnessError> {
        scenario.config.validate()?;
        let mut master = ChaCha20Rng::seed_from_u64(scenario.seed);
        let inner: Arc<dyn CryptoProvider> = match scenario.suite {
            Suite::Real => Arc::new(RustCryptoProvider),
            Suite::Toy => Arc::new(ToyProvider),
        };
        let metered = Arc::new(MeteredProvider::new(inner));
        let meter = match scenario.cost_clock {
            CostClock::CpuTime => CostMeter::cpu_time(),
            CostClock::Model => CostMeter::model(metered.clone()),
        };
        let ds = new_service_with(scenario.config.ds, scenario.links.clone(), scenario.gossip, master.next_u64());
        let (directory, dht): (Arc<dyn Directory>, _) = match scenario.config.ds {
            DsKind::Mqtt => (Arc::new(CentralDirectory::new()), None),
            DsKind::Gossipsub => {
                let d = Arc::new(DhtDirectory::new(3));
                (d.clone(), Some(d))
            }
        };
        let mut sim = Simulation {
            ds,
            directory,
            dht,
            registry: UserRegistry::new(),
            log: LogSink::new(),
            crypto: metered,
            meter,
            clients: Vec::new(),
            master,
            now: 0,
            last_event: 0,
            events: 0,
            max_group_size: 0,
            scenario,
        };
        for i in 0..sim.scenario.config.replicas {
            sim.add_client(i)?;
        }
        Ok(sim)
    }

    fn add_client(&mut self, index: usize) -> Result<(), HarnessError> {
        let mut id = [0u8; 6];
        self.master.fill_bytes(&mut id);
        let name = format!("User_{}", hex(&id));
        let seed = self.master.next_u64();
        let config = Arc::new(self.scenario.config.clone());
        let mut client = Client::new(
            &name,
            config,
            self.crypto.clone(),
            self.meter.clone(),
            seed,
            self.ds.as_mut(),
            &self.registry,
        )?;
        if let Some(d) = &self.dht {
            d.add_peer(&name);
        }
        let sleep_max = self.scenario.config.sleep_millis_max * NS_PER_MS;
        let start = if self.scenario.config.scale {
            index as u64 * sleep_max
        } else {
            client.draw_offset(sleep_max)
        };
        client.set_next_wake(self.now + start);
        self.clients.push(client);
        Ok(())
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn log(&self) -> &LogSink {
        &self.log
    }

    pub fn directory(&self) -> &dyn Directory {
        self.directory.as_ref()
    }

    pub fn registry(&self) -> &UserRegistry {
        &self.registry
    }

    pub fn ds(&self) -> &dyn DeliveryService {
        self.ds.as_ref()
    }

    /// Largest group any member has been part of so far.
    pub fn max_group_size(&self) -> u32 {
        self.max_group_size
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn stats(&self) -> ClientStats {
        let mut total = ClientStats::default();
        for c in &self.clients {
            let s = c.stats();
            total.commits_won += s.commits_won;
            total.commits_lost += s.commits_lost;
            total.stale_commits += s.stale_commits;
            total.malformed += s.malformed;
            total.failed_opens += s.failed_opens;
            total.evictions += s.evictions;
            total.resyncs += s.resyncs;
            total.dropped_groups += s.dropped_groups;
            total.joins_lost += s.joins_lost;
            total.joins_abandoned += s.joins_abandoned;
        }
        total
    }

    fn pick_next(&self) -> Option<(VirtualTime, Next)> {
        let mut best: Option<(VirtualTime, Next)> = self.ds.next_event_time().map(|t| (t, Next::Network));
        for (i, c) in self.clients.iter().enumerate() {
            if let Some(t) = c.next_deadline() {
                if best.as_ref().is_none_or(|(b, _)| t < *b) {
                    best = Some((t, Next::Deadline(i)));
                }
            }
        }
        for (i, c) in self.clients.iter().enumerate() {
            let t = c.next_wake();
            if best.as_ref().is_none_or(|(b, _)| t < *b) {
                best = Some((t, Next::Wake(i)));
            }
        }
        best
    }

    fn note_sizes(&mut self, i: usize) {
        let c = &self.clients[i];
        for g in c.joined_groups() {
            if let Some(s) = c.group(&g) {
                self.max_group_size = self.max_group_size.max(s.member_count() as u32);
            }
        }
    }

    /// Processes the next event unless it lies after `until`. Returns false
    /// when nothing was processed.
    pub fn step(&mut self, until: VirtualTime) -> Result<bool, HarnessError> {
        let sleep_max = self.scenario.config.sleep_millis_max.max(1) * NS_PER_MS;
        let Some((t, next)) = self.pick_next() else {
            return Err(HarnessError::Deadlock {
                last_ms: self.last_event / NS_PER_MS,
                next_ms: self.last_event / NS_PER_MS,
                diagnostic: "the event queue is empty".into(),
            });
        };
        if t > until {
            return Ok(false);
        }
        if t > self.last_event + sleep_max {
            return Err(HarnessError::Deadlock {
                last_ms: self.last_event / NS_PER_MS,
                next_ms: t / NS_PER_MS,
                diagnostic: format!(
                    "{} clients, {} network events pending",
                    self.clients.len(),
                    if self.ds.is_quiescent() { "no" } else { "some" }
                ),
            });
        }
        self.now = t.max(self.now);
        self.last_event = self.now;
        self.events += 1;
        let mut env = Env {
            ds: self.ds.as_mut(),
            directory: self.directory.as_ref(),
            registry: &self.registry,
            log: &self.log,
            now: self.now,
        };
        match next {
            Next::Network => {
                let deliveries = env.ds.advance(self.now);
                let mut touched = Vec::new();
                for d in deliveries {
                    let i = d.to.0 as usize;
                    env.now = d.at;
                    self.clients[i].deliver(&d.envelope, &mut env);
                    touched.push(i);
                }
                touched.dedup();
                for i in touched {
                    self.note_sizes(i);
                }
            }
            Next::Deadline(i) => {
                self.clients[i].on_deadline(&mut env);
                self.note_sizes(i);
            }
            Next::Wake(i) => {
                self.clients[i].step(&mut env);
                self.note_sizes(i);
            }
        }
        Ok(true)
    }

    fn done(&self) -> bool {
        match self.scenario.termination {
            Termination::TargetSize(n) => self.max_group_size >= n,
            Termination::Duration { .. } => false,
        }
    }

    /// Runs until the termination condition or the virtual-time cap.
    pub fn run(&mut self) -> Result<(), HarnessError> {
        let end = self.scenario.end_time();
        while !self.done() {
            if !self.step(end)? {
                break;
            }
        }
        Ok(())
    }

    pub fn into_outcome(self) -> RunOutcome {
        let reached = match self.scenario.termination {
            Termination::TargetSize(n) => self.max_group_size >= n,
            Termination::Duration { .. } => true,
        };
        RunOutcome {
            log_text: self.log.render(),
            records: self.log.records(),
            stats: self.stats(),
            end_time: self.now,
            events: self.events,
            max_group_size: self.max_group_size,
            reached,
            scenario: self.scenario,
        }
    }
}

pub struct RunOutcome {
    pub scenario: Scenario,
    pub records: Vec<LogRecord>,
    /// The log file contents.
    pub log_text: String,
    pub stats: ClientStats,
    pub end_time: VirtualTime,
    pub events: u64,
    pub max_group_size: u32,
    /// Whether the termination condition was met before the time cap.
    pub reached: bool,
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutcome, HarnessError> {
    let mut sim = Simulation::new(scenario.clone())?;
    sim.run()?;
    Ok(sim.into_outcome())
}

/// Writes `log.txt`, `config.toml` and `manifest.toml` into `dir`.
pub fn write_run(outcome: &RunOutcome, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| HarnessError::io(p, e))
    };
    write("log.txt", &outcome.log_text)?;
    write("config.toml", &outcome.scenario.config.to_toml())?;
    write("manifest.toml", &Manifest::from_outcome(outcome).to_toml())?;
    Ok(())
}
