//! Simulated publish-subscribe delivery services.
//!
//! Both services run on the caller's virtual clock: `publish` schedules
//! network events and `advance` releases the deliveries due up to a given
//! instant. Nothing here reads the wall clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{hex, sha256};
use crate::VirtualTime;

mod broker;
mod directory;
mod gossip;
mod latency;
mod registry;

pub use broker::Broker;
pub use directory::{CentralDirectory, DhtDirectory, Directory};
pub use gossip::{GossipMesh, GossipParams};
pub use latency::{LatencyModel, Links};
pub use registry::UserRegistry;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeliveryError {
    #[error("user {0} already has a session")]
    DuplicateUser(String),
    #[error("session {0} is not connected")]
    Disconnected(SessionId),
    #[error("nothing stored under {0}")]
    NotFound(String),
    #[error("unknown delivery service {0:?}")]
    UnknownKind(String),
}

/// Which delivery service implementation to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DsKind {
    /// Central broker.
    Mqtt,
    /// Gossip mesh.
    Gossipsub,
}

impl DsKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DsKind::Mqtt => "mqtt",
            DsKind::Gossipsub => "gossipsub",
        }
    }
}

impl fmt::Display for DsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DsKind {
    type Err = DeliveryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mqtt" => Ok(DsKind::Mqtt),
            "gossipsub" => Ok(DsKind::Gossipsub),
            other => Err(DeliveryError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Topic {
    Group(String),
    Welcome(String),
}

impl Topic {
    pub fn group(id: &str) -> Self {
        Topic::Group(id.to_string())
    }

    pub fn welcome(user: &str) -> Self {
        Topic::Welcome(user.to_string())
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    pub fn parse(name: &str) -> Option<Topic> {
        if let Some(g) = name.strip_prefix("group/") {
            Some(Topic::group(g))
        } else {
            name.strip_prefix("welcome/").map(Topic::welcome)
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topic::Group(g) => write!(f, "group/{g}"),
            Topic::Welcome(u) => write!(f, "welcome/{u}"),
        }
    }
}

/// SHA-256 of payload, sender and the service-wide publish sequence number.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageId(pub [u8; 32]);

impl MessageId {
    pub fn compute(payload: &[u8], sender: &str, sequence: u64) -> Self {
        let mut input = Vec::with_capacity(payload.len() + sender.len() + 8);
        input.extend_from_slice(payload);
        input.extend_from_slice(sender.as_bytes());
        input.extend_from_slice(&sequence.to_be_bytes());
        MessageId(sha256(&input).try_into().expect("sha256 is 32 bytes"))
    }
}

impl fmt::Debug for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MessageId({})", &hex(&self.0)[..12])
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex(&self.0))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub topic: Topic,
    pub payload: Arc<[u8]>,
    pub sender: String,
    pub message_id: MessageId,
    pub publish_time: VirtualTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId(pub u32);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One message handed to one session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub to: SessionId,
    pub envelope: Arc<Envelope>,
    pub at: VirtualTime,
}

pub trait DeliveryService: Send {
    fn kind(&self) -> DsKind;

    fn connect(&mut self, user: &str) -> Result<SessionId, DeliveryError>;

    /// Drops the session's subscriptions; queued deliveries to it are discarded.
    fn disconnect(&mut self, session: SessionId);

    fn subscribe(&mut self, session: SessionId, topic: &Topic) -> Result<(), DeliveryError>;

    fn unsubscribe(&mut self, session: SessionId, topic: &Topic) -> Result<(), DeliveryError>;

    /// Publishing does not require a subscription to the topic.
    fn publish(
        &mut self,
        session: SessionId,
        topic: Topic,
        payload: Vec<u8>,
        now: VirtualTime,
    ) -> Result<Arc<Envelope>, DeliveryError>;

    /// Time of the earliest internal event, if any is scheduled.
    fn next_event_time(&self) -> Option<VirtualTime>;

    /// Processes every internal event due at or before `until` and returns
    /// the resulting deliveries in time order.
    fn advance(&mut self, until: VirtualTime) -> Vec<Delivery>;

    /// How long after the first commit candidate of an epoch a member must
    /// wait before [`epoch_winner`] may be applied.
    fn confirmation_window(&self) -> VirtualTime;

    /// No message is in flight.
    fn is_quiescent(&self) -> bool;
}

/// Creates a service of the given kind with default gossip parameters.
pub fn new_service(kind: DsKind, links: Links, seed: u64) -> Box<dyn DeliveryService> {
    new_service_with(kind, links, GossipParams::default(), seed)
}

/// Creates a service of the given kind; `gossip` is ignored by the broker.
pub fn new_service_with(kind: DsKind, links: Links, gossip: GossipParams, seed: u64) -> Box<dyn DeliveryService> {
    match kind {
        DsKind::Mqtt => Box::new(Broker::new(links, seed)),
        DsKind::Gossipsub => Box::new(GossipMesh::new(gossip, links, seed)),
    }
}

/// Picks the winning commit of one epoch from the candidates a member
/// observed, listed in arrival order. The broker's total order makes the
/// first arrival the winner; the gossip mesh has no order, so the smallest
/// id wins.
pub fn epoch_winner(kind: DsKind, observed: &[MessageId]) -> Option<MessageId> {
    match kind {
        DsKind::Mqtt => observed.first().copied(),
        DsKind::Gossipsub => observed.iter().min().copied(),
    }
}

/// Session bookkeeping shared by both services.
#[derive(Debug, Default)]
pub(crate) struct Sessions {
    users: Vec<String>,
    connected: Vec<bool>,
    by_user: HashMap<String, SessionId>,
    subs: BTreeMap<Topic, BTreeSet<SessionId>>,
    topics_of: Vec<BTreeSet<Topic>>,
}

impl Sessions {
    pub(crate) fn connect(&mut self, user: &str) -> Result<SessionId, DeliveryError> {
        if self.by_user.contains_key(user) {
            return Err(DeliveryError::DuplicateUser(user.to_string()));
        }
        let id = SessionId(self.users.len() as u32);
        self.users.push(user.to_string());
        self.connected.push(true);
        self.topics_of.push(BTreeSet::new());
        self.by_user.insert(user.to_string(), id);
        Ok(id)
    }

    /// Returns the topics the session was subscribed to.
    pub(crate) fn disconnect(&mut self, s: SessionId) -> Vec<Topic> {
        if !self.is_connected(s) {
            return Vec::new();
        }
        self.connected[s.0 as usize] = false;
        self.by_user.remove(&self.users[s.0 as usize]);
        let topics: Vec<Topic> = std::mem::take(&mut self.topics_of[s.0 as usize]).into_iter().collect();
        for t in &topics {
            if let Some(set) = self.subs.get_mut(t) {
                set.remove(&s);
            }
        }
        topics
    }

    pub(crate) fn check(&self, s: SessionId) -> Result<(), DeliveryError> {
        if self.is_connected(s) {
            Ok(())
        } else {
            Err(DeliveryError::Disconnected(s))
        }
    }

    pub(crate) fn is_connected(&self, s: SessionId) -> bool {
        self.connected.get(s.0 as usize).copied().unwrap_or(false)
    }

    pub(crate) fn user(&self, s: SessionId) -> &str {
        &self.users[s.0 as usize]
    }

    pub(crate) fn len(&self) -> usize {
        self.users.len()
    }

    /// Returns false if already subscribed.
    pub(crate) fn subscribe(&mut self, s: SessionId, topic: &Topic) -> Result<bool, DeliveryError> {
        self.check(s)?;
        self.topics_of[s.0 as usize].insert(topic.clone());
        Ok(self.subs.entry(topic.clone()).or_default().insert(s))
    }

    /// Returns false if not subscribed.
    pub(crate) fn unsubscribe(&mut self, s: SessionId, topic: &Topic) -> Result<bool, DeliveryError> {
        self.check(s)?;
        self.topics_of[s.0 as usize].remove(topic);
        Ok(self.subs.get_mut(topic).is_some_and(|set| set.remove(&s)))
    }

    pub(crate) fn is_subscribed(&self, s: SessionId, topic: &Topic) -> bool {
        self.subs.get(topic).is_some_and(|set| set.contains(&s))
    }

    pub(crate) fn subscribers(&self, topic: &Topic) -> impl Iterator<Item = SessionId> + '_ {
        self.subs.get(topic).into_iter().flatten().copied()
    }

    pub(crate) fn topics_of(&self, s: SessionId) -> &BTreeSet<Topic> {
        &self.topics_of[s.0 as usize]
    }
}

/// Min-queue of timed events; equal times pop in insertion order.
#[derive(Debug)]
pub(crate) struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(VirtualTime, u64)>>,
    events: HashMap<u64, E>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            events: HashMap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub(crate) fn push(&mut self, at: VirtualTime, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((at, seq)));
        self.events.insert(seq, event);
    }

    pub(crate) fn peek_time(&self) -> Option<VirtualTime> {
        self.heap.peek().map(|Reverse((t, _))| *t)
    }

    pub(crate) fn pop_due(&mut self, until: VirtualTime) -> Option<(VirtualTime, E)> {
        if self.peek_time()? > until {
            return None;
        }
        let Reverse((t, seq)) = self.heap.pop()?;
        Some((t, self.events.remove(&seq).expect("every heap entry has an event")))
    }

    #[cfg(test)]
    pub(crate) fn len(&self) -> usize {
        self.heap.len()
    }
}
