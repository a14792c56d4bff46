//! The client state machine.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::config::{ClientConfig, Paradigm};
use crate::cgka::messages::{CommitProposal, GroupInfo, HandshakeMessage, ProposalKind, Sender, WireMessage};
use crate::cgka::{CgkaError, GroupConfig, GroupState, KeyPackage, KeyPackageSecrets, MemberIdentity, Modification, PendingCommit, Welcome};
use crate::crypto::CryptoProvider;
use crate::delivery::{
    epoch_winner, DeliveryError, DeliveryService, Directory, DsKind, Envelope, MessageId, SessionId, Topic, UserRegistry,
};
use crate::metrics::{Action, CostMeter, LogRecord, LogSink};
use crate::{VirtualTime, NS_PER_MS};

/// Everything a client may touch while handling one event.
pub struct Env<'a> {
    pub ds: &'a mut dyn DeliveryService,
    pub directory: &'a dyn Directory,
    pub registry: &'a UserRegistry,
    pub log: &'a LogSink,
    pub now: VirtualTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModKind {
    Invite,
    Remove,
    Update,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModifyError {
    #[error("no invitee has a key package available")]
    NoKeyPackageAvailable,
    #[error("the updater policy does not allow this member to modify the group")]
    PolicyDenied,
    #[error("the group has no other member to remove")]
    EmptyGroup,
    #[error("a commit for the current epoch is still undecided")]
    Busy,
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// What a successful modification attempt published.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Published {
    pub proposal: bool,
    pub commit: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepEvent {
    Message { group: String, bytes: usize },
    Modify { group: String, kind: ModKind, result: Result<Published, ModifyError> },
    Created { group: String },
    ExternalJoin { group: String, result: Result<(), String> },
    KeyPackagePublished { group: String },
    AwaitingInvite { group: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub commits_won: u64,
    pub commits_lost: u64,
    pub stale_commits: u64,
    pub malformed: u64,
    pub failed_opens: u64,
    pub evictions: u64,
    pub resyncs: u64,
    pub dropped_groups: u64,
    pub joins_lost: u64,
    pub joins_abandoned: u64,
}

struct Candidate {
    id: MessageId,
    msg: HandshakeMessage,
}

/// Commit candidates seen for one epoch.
#[derive(Default)]
struct Race {
    first_seen: Option<VirtualTime>,
    candidates: Vec<Candidate>,
}

impl Race {
    fn add(&mut self, id: MessageId, msg: HandshakeMessage, now: VirtualTime) {
        self.first_seen.get_or_insert(now);
        if self.candidates.iter().all(|c| c.id != id) {
            self.candidates.push(Candidate { id, msg });
        }
    }

    fn deadline(&self, window: VirtualTime) -> Option<VirtualTime> {
        self.first_seen.map(|t| t + window)
    }

    fn winner(&mut self, kind: DsKind) -> Option<Candidate> {
        let ids: Vec<MessageId> = self.candidates.iter().map(|c| c.id).collect();
        let w = epoch_winner(kind, &ids)?;
        let pos = self.candidates.iter().position(|c| c.id == w)?;
        self.first_seen = None;
        let winner = self.candidates.swap_remove(pos);
        self.candidates.clear();
        Some(winner)
    }
}

/// A commit of ours waiting to be confirmed as the epoch winner.
struct OwnCommit {
    id: MessageId,
    pending: PendingCommit,
    welcomes: Vec<(String, Welcome)>,
    action: Action,
    counterpart: Option<String>,
    size: u64,
    generated_at: VirtualTime,
    cost_us: u64,
}

struct Membership {
    state: GroupState,
    /// Proposals of the current epoch with the cost of receiving them.
    proposals: Vec<(HandshakeMessage, u64)>,
    own_commit: Option<OwnCommit>,
    race: Race,
    /// Messages for later epochs, replayed once the epoch advances.
    future: Vec<Arc<Envelope>>,
    behind_since: Option<VirtualTime>,
}

impl Membership {
    fn new(state: GroupState) -> Self {
        Membership {
            state,
            proposals: Vec::new(),
            own_commit: None,
            race: Race::default(),
            future: Vec::new(),
            behind_since: None,
        }
    }
}

struct ExternalAttempt {
    epoch: u64,
    own: OwnCommit,
    race: Race,
    future: Vec<Arc<Envelope>>,
}

pub struct Client {
    name: String,
    session: SessionId,
    config: Arc<ClientConfig>,
    crypto: Arc<dyn CryptoProvider>,
    meter: CostMeter,
    rng: ChaCha20Rng,
    identity: MemberIdentity,
    groups: BTreeMap<String, Membership>,
    joining: BTreeMap<String, ExternalAttempt>,
    key_packages: BTreeMap<Vec<u8>, KeyPackageSecrets>,
    ds_kind: DsKind,
    window: VirtualTime,
    next_wake: VirtualTime,
    stats: ClientStats,
}

fn group_size(state: &GroupState) -> u32 {
    state.member_count() as u32
}

fn committer_name(state: &GroupState, msg: &HandshakeMessage) -> Option<String> {
    match msg.sender {
        Sender::Member(l) => state.member_identity(l).map(str::to_string),
        Sender::NewMember => msg.commit().map(|c| c.path.leaf_node.identity.clone()),
    }
}

/// Log action and counterpart describing a commit by its most significant
/// change.
fn describe_commit(state: &GroupState, msg: &HandshakeMessage) -> (Action, Option<String>) {
    let Some(commit) = msg.commit() else {
        return (Action::Update, None);
    };
    if commit.external.is_some() {
        return (Action::Join, None);
    }
    let kinds: Vec<&ProposalKind> = commit
        .proposals
        .iter()
        .filter_map(|p| match p {
            CommitProposal::Framed(m) => m.proposal(),
            CommitProposal::Inline(k) => Some(k),
        })
        .collect();
    if let Some(ProposalKind::Add(kp)) = kinds.iter().find(|k| matches!(k, ProposalKind::Add(_))) {
        return (Action::Invite, Some(kp.leaf_node.identity.clone()));
    }
    if let Some(ProposalKind::Remove(t)) = kinds.iter().find(|k| matches!(k, ProposalKind::Remove(_))) {
        return (Action::Remove, state.member_identity(*t).map(str::to_string));
    }
    (Action::Update, None)
}

impl Client {
    /// Connects to the delivery service, subscribes to the client's welcome
    /// topic and registers with the signaling registry.
    pub fn new(
        name: &str,
        config: Arc<ClientConfig>,
        crypto: Arc<dyn CryptoProvider>,
        meter: CostMeter,
        seed: u64,
        ds: &mut dyn DeliveryService,
        registry: &UserRegistry,
    ) -> Result<Client, DeliveryError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let identity = MemberIdentity::generate(crypto.as_ref(), name, &mut rng);
        let session = ds.connect(name)?;
        ds.subscribe(session, &Topic::welcome(name))?;
        registry.register(name);
        Ok(Client {
            name: name.to_string(),
            session,
            config,
            crypto,
            meter,
            rng,
            identity,
            groups: BTreeMap::new(),
            joining: BTreeMap::new(),
            key_packages: BTreeMap::new(),
            ds_kind: ds.kind(),
            window: ds.confirmation_window(),
            next_wake: 0,
            stats: ClientStats::default(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn session(&self) -> SessionId {
        self.session
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn stats(&self) -> ClientStats {
        self.stats
    }

    pub fn group(&self, group: &str) -> Option<&GroupState> {
        self.groups.get(group).map(|m| &m.state)
    }

    pub fn joined_groups(&self) -> Vec<String> {
        self.groups.keys().cloned().collect()
    }

    pub fn next_wake(&self) -> VirtualTime {
        self.next_wake
    }

    pub fn set_next_wake(&mut self, at: VirtualTime) {
        self.next_wake = at;
    }

    /// Draws a uniform value in `[0, bound]`, used by the harness for start offsets.
    pub fn draw_offset(&mut self, bound: VirtualTime) -> VirtualTime {
        self.rng.gen_range(0..=bound)
    }

    fn stall_timeout(&self) -> VirtualTime {
        2 * self.window
    }

    /// Earliest time at which [`on_deadline`](Self::on_deadline) has work.
    pub fn next_deadline(&self) -> Option<VirtualTime> {
        let w = self.window;
        let stall = self.stall_timeout();
        let groups = self
            .groups
            .values()
            .flat_map(|m| [m.race.deadline(w), m.behind_since.map(|t| t + stall)]);
        let joins = self.joining.values().map(|a| a.race.deadline(w));
        groups.chain(joins).flatten().min()
    }

    fn emit(&self, env: &Env, group: &str, size: u32, action: Action, counterpart: Option<String>, bytes: Option<u64>, ts: VirtualTime, cost: u64) {
        env.log.emit(LogRecord {
            group: group.to_string(),
            group_size: size.max(1),
            actor: self.name.clone(),
            action,
            counterpart,
            size_bytes: bytes,
            timestamp_ns: ts,
            cost_us: cost,
        });
    }

    // ---- scheduled behaviour ----

    /// One wake-up: act on joined groups, try to join the others, then
    /// schedule the next wake-up.
    pub fn step(&mut self, env: &mut Env) -> Vec<StepEvent> {
        let mut events = Vec::new();
        let abandoned: Vec<String> = self
            .joining
            .iter()
            .filter(|(_, a)| a.race.candidates.is_empty())
            .map(|(g, _)| g.clone())
            .collect();
        for g in abandoned {
            self.joining.remove(&g);
            self.stats.joins_abandoned += 1;
            let _ = env.ds.unsubscribe(self.session, &Topic::group(&g));
        }

        let cfg = self.config.clone();
        for g in self.joined_groups() {
            if self.rng.gen_bool(cfg.message_chance) {
                if let Some(bytes) = self.send_message(&g, env) {
                    events.push(StepEvent::Message { group: g.clone(), bytes });
                }
            }
            if self.rng.gen_bool(cfg.issue_update_chance) {
                let u: f64 = self.rng.gen();
                let kind = if u < cfg.invite_chance {
                    ModKind::Invite
                } else if u < cfg.invite_chance + cfg.remove_chance {
                    ModKind::Remove
                } else {
                    ModKind::Update
                };
                let result = self.modify_group(&g, kind, env);
                events.push(StepEvent::Modify { group: g.clone(), kind, result });
            }
        }
        for g in &cfg.groups {
            if self.groups.contains_key(g) || self.joining.contains_key(g) {
                continue;
            }
            if self.rng.gen_bool(cfg.join_chance) {
                events.push(self.join_group(g, env));
            }
        }
        let sleep_ms = self.rng.gen_range(cfg.sleep_millis_min..=cfg.sleep_millis_max);
        self.next_wake = env.now + sleep_ms * NS_PER_MS;
        events
    }

    fn send_message(&mut self, g: &str, env: &mut Env) -> Option<usize> {
        let len = self.rng.gen_range(self.config.message_length_min..=self.config.message_length_max);
        let mut body = vec![0u8; len];
        self.rng.fill_bytes(&mut body);
        let m = self.groups.get_mut(g)?;
        let (msg, cost) = self.meter.measure(|| m.state.seal_application(&body));
        let size = group_size(&m.state);
        let payload = WireMessage::Application(msg).encode();
        let bytes = payload.len();
        env.ds.publish(self.session, Topic::group(g), payload, env.now).ok()?;
        self.emit(env, g, size, Action::Message, None, Some(bytes as u64), env.now, cost);
        Some(bytes)
    }

    fn pick_modification(&mut self, g: &str, kind: ModKind, env: &mut Env) -> Result<(Modification, Option<String>), ModifyError> {
        let state = &self.groups[g].state;
        match kind {
            ModKind::Invite => {
                let candidates: Vec<String> = env
                    .registry
                    .list()
                    .into_iter()
                    .filter(|u| *u != self.name && state.find_member(u).is_none() && env.directory.has_key_package(u))
                    .collect();
                if candidates.is_empty() {
                    return Err(ModifyError::NoKeyPackageAvailable);
                }
                let victim = candidates[self.rng.gen_range(0..candidates.len())].clone();
                let bytes = env.directory.take_key_package(&victim).map_err(|_| ModifyError::NoKeyPackageAvailable)?;
                match WireMessage::decode(&bytes) {
                    Ok(WireMessage::KeyPackage(kp)) => Ok((Modification::Add(kp), Some(victim))),
                    _ => Err(ModifyError::NoKeyPackageAvailable),
                }
            }
            ModKind::Remove => {
                let others: Vec<_> = state.tree().leaves().map(|(l, _)| l).filter(|l| *l != state.my_leaf()).collect();
                if others.is_empty() {
                    return Err(ModifyError::EmptyGroup);
                }
                let victim = others[self.rng.gen_range(0..others.len())];
                let name = state.member_identity(victim).map(str::to_string);
                Ok((Modification::Remove(victim), name))
            }
            ModKind::Update => Ok((Modification::Update, None)),
        }
    }

    /// Attempts one group modification under the configured paradigm and policy.
    pub fn modify_group(&mut self, g: &str, kind: ModKind, env: &mut Env) -> Result<Published, ModifyError> {
        let m = self.groups.get(g).ok_or_else(|| ModifyError::Protocol("not a member".into()))?;
        if !self.config.auth_policy.allows(&m.state) {
            return Err(ModifyError::PolicyDenied);
        }
        if m.own_commit.is_some() || !m.race.candidates.is_empty() {
            return Err(ModifyError::Busy);
        }
        let (modification, counterpart) = self.pick_modification(g, kind, env)?;
        match self.config.paradigm {
            Paradigm::Commit => {
                let m = self.groups.get(g).expect("checked above");
                let (bundle, cost) = self.meter.measure(|| m.state.commit_modifications(&mut self.rng, &[modification]));
                let bundle = bundle.map_err(|e| ModifyError::Protocol(e.to_string()))?;
                self.publish_commit(g, bundle.commit, bundle.pending, bundle.welcomes, cost, env)?;
                Ok(Published {
                    proposal: false,
                    commit: true,
                })
            }
            Paradigm::Propose => {
                let m = self.groups.get_mut(g).expect("checked above");
                let (msg, cost) = self.meter.measure(|| m.state.propose(&mut self.rng, modification));
                let msg = msg.map_err(|e| ModifyError::Protocol(e.to_string()))?;
                let payload = WireMessage::Handshake(msg.clone()).encode();
                let bytes = payload.len() as u64;
                env.ds
                    .publish(self.session, Topic::group(g), payload, env.now)
                    .map_err(|e| ModifyError::Protocol(e.to_string()))?;
                let size = group_size(&m.state);
                m.proposals.push((msg, 0));
                let ready = m.proposals.len() >= self.config.proposals_per_commit;
                self.emit(env, g, size, Action::Propose, counterpart, Some(bytes), env.now, cost);
                let commit = ready && self.commit_proposals(g, env)?;
                Ok(Published { proposal: true, commit })
            }
        }
    }

    /// Commits up to `proposals_per_commit` buffered proposals.
    fn commit_proposals(&mut self, g: &str, env: &mut Env) -> Result<bool, ModifyError> {
        let k = self.config.proposals_per_commit;
        let m = self.groups.get(g).expect("caller checked membership");
        let buffered: Vec<HandshakeMessage> = m.proposals.iter().map(|(p, _)| p.clone()).collect();
        let ((framed, bundle), cost) = self.meter.measure(|| {
            let mut framed = m.state.filter_committable(&buffered);
            framed.truncate(k);
            let bundle = (!framed.is_empty()).then(|| m.state.create_commit(&mut self.rng, &framed, &[]));
            (framed, bundle)
        });
        let _ = framed;
        let Some(bundle) = bundle else {
            return Ok(false);
        };
        let bundle = bundle.map_err(|e| ModifyError::Protocol(e.to_string()))?;
        self.publish_commit(g, bundle.commit, bundle.pending, bundle.welcomes, cost, env)?;
        Ok(true)
    }

    fn publish_commit(
        &mut self,
        g: &str,
        commit: HandshakeMessage,
        pending: PendingCommit,
        welcomes: Vec<(String, Welcome)>,
        cost_us: u64,
        env: &mut Env,
    ) -> Result<(), ModifyError> {
        let m = self.groups.get_mut(g).expect("caller checked membership");
        let (action, counterpart) = describe_commit(&m.state, &commit);
        let payload = WireMessage::Handshake(commit).encode();
        let size = payload.len() as u64;
        let env_msg = env
            .ds
            .publish(self.session, Topic::group(g), payload, env.now)
            .map_err(|e| ModifyError::Protocol(e.to_string()))?;
        m.own_commit = Some(OwnCommit {
            id: env_msg.message_id,
            pending,
            welcomes,
            action,
            counterpart,
            size,
            generated_at: env.now,
            cost_us,
        });
        Ok(())
    }

    fn publish_group_info(&self, g: &str, env: &mut Env) {
        let Some(m) = self.groups.get(g) else {
            return;
        };
        let (gi, cost) = self.meter.measure(|| m.state.export_group_info());
        let epoch = gi.context.epoch;
        let bytes = WireMessage::GroupInfo(gi).encode();
        let size = bytes.len() as u64;
        env.directory.publish_group_info(g, epoch, bytes);
        self.emit(env, g, group_size(&m.state), Action::GroupInfo, None, Some(size), env.now, cost);
    }

    fn fetch_group_info(&self, g: &str, env: &Env) -> Option<GroupInfo> {
        let (_, bytes) = env.directory.fetch_group_info(g).ok()?;
        match WireMessage::decode(&bytes) {
            Ok(WireMessage::GroupInfo(gi)) => Some(gi),
            _ => None,
        }
    }

    /// Joins, creates or prepares to be invited to group `g`.
    pub fn join_group(&mut self, g: &str, env: &mut Env) -> StepEvent {
        let Some(gi) = self.fetch_group_info(g, env) else {
            let cfg = GroupConfig {
                external_joins: self.config.external_join,
            };
            let state = GroupState::create(self.crypto.clone(), &mut self.rng, g, self.identity.clone(), cfg);
            let _ = env.ds.subscribe(self.session, &Topic::group(g));
            self.groups.insert(g.to_string(), Membership::new(state));
            self.publish_group_info(g, env);
            return StepEvent::Created { group: g.to_string() };
        };
        if self.config.external_join {
            let result = self.start_external_join(g, &gi, false, env);
            if result.is_ok() {
                return StepEvent::ExternalJoin {
                    group: g.to_string(),
                    result,
                };
            }
        }
        if env.directory.has_key_package(&self.name) {
            return StepEvent::AwaitingInvite { group: g.to_string() };
        }
        let (kp, secrets) = KeyPackage::generate(self.crypto.as_ref(), &self.identity, &mut self.rng);
        self.key_packages.insert(secrets.reference.clone(), secrets);
        env.directory.publish_key_package(&self.name, WireMessage::KeyPackage(kp).encode());
        StepEvent::KeyPackagePublished { group: g.to_string() }
    }

    fn start_external_join(&mut self, g: &str, gi: &GroupInfo, resync: bool, env: &mut Env) -> Result<(), String> {
        let (out, cost) = self
            .meter
            .measure(|| GroupState::join_external(self.crypto.clone(), &mut self.rng, gi, self.identity.clone(), resync));
        let (msg, pending) = out.map_err(|e| e.to_string())?;
        let topic = Topic::group(g);
        env.ds.subscribe(self.session, &topic).map_err(|e| e.to_string())?;
        let payload = WireMessage::Handshake(msg).encode();
        let size = payload.len() as u64;
        let published = env.ds.publish(self.session, topic, payload, env.now).map_err(|e| e.to_string())?;
        self.joining.insert(
            g.to_string(),
            ExternalAttempt {
                epoch: gi.context.epoch,
                own: OwnCommit {
                    id: published.message_id,
                    pending,
                    welcomes: Vec::new(),
                    action: Action::Join,
                    counterpart: None,
                    size,
                    generated_at: env.now,
                    cost_us: cost,
                },
                race: Race::default(),
                future: Vec::new(),
            },
        );
        Ok(())
    }

    // ---- incoming messages ----

    pub fn deliver(&mut self, envelope: &Arc<Envelope>, env: &mut Env) {
        match &envelope.topic {
            Topic::Welcome(_) => self.on_welcome(envelope, env),
            Topic::Group(g) => {
                let g = g.clone();
                if self.groups.contains_key(&g) {
                    self.on_group_message(&g, envelope, env);
                } else if self.joining.contains_key(&g) {
                    self.on_joining_message(&g, envelope, env);
                }
            }
        }
    }

    fn on_welcome(&mut self, envelope: &Envelope, env: &mut Env) {
        let Ok(WireMessage::Welcome(w)) = WireMessage::decode(&envelope.payload) else {
            self.stats.malformed += 1;
            return;
        };
        let Some(secrets) = self.key_packages.remove(&w.key_package_ref) else {
            return;
        };
        let (state, cost) = self
            .meter
            .measure(|| GroupState::from_welcome(self.crypto.clone(), &w, &secrets, self.identity.clone()));
        let Ok(state) = state else {
            self.stats.malformed += 1;
            return;
        };
        let g = state.group_id().to_string();
        if self.groups.contains_key(&g) || self.joining.contains_key(&g) {
            return;
        }
        let _ = env.ds.subscribe(self.session, &Topic::group(&g));
        let size = group_size(&state);
        self.groups.insert(g.clone(), Membership::new(state));
        self.emit(
            env,
            &g,
            size,
            Action::Welcome,
            Some(envelope.sender.clone()),
            Some(envelope.payload.len() as u64),
            env.now,
            cost,
        );
    }

    fn on_group_message(&mut self, g: &str, envelope: &Arc<Envelope>, env: &mut Env) {
        let Ok(wire) = WireMessage::decode(&envelope.payload) else {
            self.stats.malformed += 1;
            return;
        };
        let m = self.groups.get_mut(g).expect("caller checked membership");
        let epoch = m.state.epoch();
        match wire {
            WireMessage::Application(app) => {
                if app.epoch > epoch {
                    m.future.push(envelope.clone());
                } else if envelope.sender != self.name && m.state.open_application(&app).is_err() {
                    self.stats.failed_opens += 1;
                }
            }
            WireMessage::Handshake(h) => {
                if h.epoch > epoch {
                    if h.is_commit() {
                        m.behind_since.get_or_insert(env.now);
                    }
                    m.future.push(envelope.clone());
                } else if h.epoch < epoch {
                    if h.is_commit() {
                        self.stats.stale_commits += 1;
                    }
                } else if h.is_commit() {
                    m.race.add(envelope.message_id, h, env.now);
                } else if envelope.sender != self.name {
                    let (ok, cost) = self.meter.measure(|| m.state.verify_proposal(&h));
                    match ok {
                        Ok(()) => m.proposals.push((h, cost)),
                        Err(_) => self.stats.malformed += 1,
                    }
                }
            }
            _ => self.stats.malformed += 1,
        }
        self.run_due(g, env);
    }

    fn on_joining_message(&mut self, g: &str, envelope: &Arc<Envelope>, env: &mut Env) {
        let a = self.joining.get_mut(g).expect("caller checked");
        match WireMessage::decode(&envelope.payload) {
            Ok(WireMessage::Handshake(h)) if h.is_commit() && h.epoch == a.epoch => {
                a.race.add(envelope.message_id, h, env.now);
            }
            Ok(WireMessage::Handshake(h)) if h.epoch > a.epoch => a.future.push(envelope.clone()),
            Ok(WireMessage::Application(app)) if app.epoch > a.epoch => a.future.push(envelope.clone()),
            Ok(_) => {}
            Err(_) => self.stats.malformed += 1,
        }
        self.run_due_join(g, env);
    }

    // ---- deadlines ----

    /// Resolves every race and stall that is due at `env.now`.
    pub fn on_deadline(&mut self, env: &mut Env) {
        for g in self.joined_groups() {
            self.run_due(&g, env);
        }
        let joining: Vec<String> = self.joining.keys().cloned().collect();
        for g in joining {
            self.run_due_join(&g, env);
        }
    }

    fn run_due(&mut self, g: &str, env: &mut Env) {
        let Some(m) = self.groups.get(g) else {
            return;
        };
        if m.race.deadline(self.window).is_some_and(|t| t <= env.now) {
            self.decide(g, env);
            return;
        }
        if m.race.candidates.is_empty() && m.behind_since.is_some_and(|t| t + self.stall_timeout() <= env.now) {
            self.resync(g, env);
        }
    }

    fn run_due_join(&mut self, g: &str, env: &mut Env) {
        let due = self.joining.get(g).and_then(|a| a.race.deadline(self.window)).is_some_and(|t| t <= env.now);
        if due {
            self.decide_join(g, env);
        }
    }

    fn decide(&mut self, g: &str, env: &mut Env) {
        let kind = self.ds_kind;
        let m = self.groups.get_mut(g).expect("caller checked membership");
        let Some(winner) = m.race.winner(kind) else {
            return;
        };
        let own = m.own_commit.take();
        let proposals = std::mem::take(&mut m.proposals);
        m.behind_since = None;
        match own {
            Some(own) if own.id == winner.id => {
                match m.state.merge_pending(own.pending, &winner.msg) {
                    Ok(next) => {
                        m.state = next;
                        self.stats.commits_won += 1;
                        let size = group_size(&m.state);
                        self.emit(env, g, size, own.action, own.counterpart, Some(own.size), own.generated_at, own.cost_us);
                        for (invitee, w) in own.welcomes {
                            let payload = WireMessage::Welcome(w).encode();
                            let _ = env.ds.publish(self.session, Topic::welcome(&invitee), payload, env.now);
                        }
                        self.publish_group_info(g, env);
                    }
                    Err(_) => {
                        self.resync(g, env);
                        return;
                    }
                }
            }
            own => {
                if own.is_some() {
                    self.stats.commits_lost += 1;
                }
                let included_cost: u64 = winner
                    .msg
                    .commit()
                    .map(|c| {
                        c.proposals
                            .iter()
                            .filter_map(|p| match p {
                                CommitProposal::Framed(f) => proposals.iter().find(|(b, _)| b == f).map(|(_, cost)| *cost),
                                CommitProposal::Inline(_) => None,
                            })
                            .sum()
                    })
                    .unwrap_or(0);
                let committer = committer_name(&m.state, &winner.msg);
                let (next, cost) = self.meter.measure(|| m.state.process_commit(&winner.msg));
                match next {
                    Ok(next) => {
                        m.state = next;
                        let size = group_size(&m.state);
                        self.emit(env, g, size, Action::Process, committer, None, env.now, cost + included_cost);
                    }
                    Err(CgkaError::Evicted) => {
                        self.stats.evictions += 1;
                        self.leave(g, env);
                        return;
                    }
                    Err(_) => {
                        self.resync(g, env);
                        return;
                    }
                }
            }
        }
        self.replay(g, env);
    }

    fn replay(&mut self, g: &str, env: &mut Env) {
        let Some(m) = self.groups.get_mut(g) else {
            return;
        };
        let future = std::mem::take(&mut m.future);
        for e in future {
            if self.groups.contains_key(g) {
                self.on_group_message(g, &e, env);
            }
        }
    }

    fn decide_join(&mut self, g: &str, env: &mut Env) {
        let kind = self.ds_kind;
        let mut a = self.joining.remove(g).expect("caller checked");
        let Some(winner) = a.race.winner(kind) else {
            return;
        };
        if winner.id != a.own.id {
            self.stats.joins_lost += 1;
            let _ = env.ds.unsubscribe(self.session, &Topic::group(g));
            return;
        }
        let Ok(state) = a.own.pending.confirm(&winner.msg) else {
            self.stats.joins_lost += 1;
            let _ = env.ds.unsubscribe(self.session, &Topic::group(g));
            return;
        };
        let size = group_size(&state);
        let mut m = Membership::new(state);
        m.future = a.future;
        self.groups.insert(g.to_string(), m);
        self.emit(env, g, size, Action::Join, None, Some(a.own.size), a.own.generated_at, a.own.cost_us);
        self.publish_group_info(g, env);
        self.replay(g, env);
    }

    /// Rejoins a group whose state can no longer follow the others.
    fn resync(&mut self, g: &str, env: &mut Env) {
        self.groups.remove(g);
        if self.config.external_join {
            if let Some(gi) = self.fetch_group_info(g, env) {
                if self.start_external_join(g, &gi, true, env).is_ok() {
                    self.stats.resyncs += 1;
                    return;
                }
            }
        }
        self.stats.dropped_groups += 1;
        let _ = env.ds.unsubscribe(self.session, &Topic::group(g));
    }

    fn leave(&mut self, g: &str, env: &mut Env) {
        self.groups.remove(g);
        let _ = env.ds.unsubscribe(self.session, &Topic::group(g));
    }
}
