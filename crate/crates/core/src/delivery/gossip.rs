//! Gossip mesh: peers forward to a bounded set of topic neighbours and
//! repair gaps through periodic IHAVE/IWANT exchanges.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    Delivery, DeliveryError, DeliveryService, DsKind, Envelope, EventQueue, Links, MessageId, SessionId, Sessions, Topic,
};
use crate::{VirtualTime, NS_PER_MS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GossipParams {
    /// Target mesh degree.
    pub d: usize,
    pub d_low: usize,
    pub d_high: usize,
    /// Non-mesh peers that receive IHAVE digests each heartbeat.
    pub d_lazy: usize,
    pub heartbeat_ms: u64,
    /// Heartbeat windows advertised in IHAVE digests.
    pub history_gossip: usize,
    /// Heartbeat windows retained for answering IWANT.
    pub history_length: usize,
    /// Processing time at each receiving peer before delivery and forwarding.
    pub validation_ms: f64,
    /// How long a message id is remembered for deduplication.
    pub seen_ttl_ms: u64,
}

impl Default for GossipParams {
    fn default() -> Self {
        GossipParams {
            d: 4,
            d_low: 3,
            d_high: 8,
            d_lazy: 4,
            heartbeat_ms: 1000,
            history_gossip: 3,
            history_length: 5,
            validation_ms: 5.0,
            seen_ttl_ms: 120_000,
        }
    }
}

#[derive(Debug)]
enum Event {
    Heartbeat,
    SelfDeliver(SessionId, Arc<Envelope>),
    Arrive { to: SessionId, from: SessionId, env: Arc<Envelope> },
    Validated { at: SessionId, from: SessionId, env: Arc<Envelope> },
    IHave { to: SessionId, from: SessionId, ids: Vec<MessageId> },
    IWant { to: SessionId, from: SessionId, ids: Vec<MessageId> },
}

#[derive(Debug, Default)]
struct Peer {
    mesh: BTreeMap<Topic, BTreeSet<SessionId>>,
    seen: HashMap<MessageId, VirtualTime>,
    /// Front is the current heartbeat window.
    mcache: VecDeque<Vec<Arc<Envelope>>>,
}

impl Peer {
    fn cached(&self, id: &MessageId) -> Option<&Arc<Envelope>> {
        self.mcache.iter().flatten().find(|e| e.message_id == *id)
    }
}

/// Subscription state is global knowledge and mesh changes take effect on
/// both ends at once; only data and IHAVE/IWANT traffic travels over links.
#[derive(Debug)]
pub struct GossipMesh {
    params: GossipParams,
    sessions: Sessions,
    peers: Vec<Peer>,
    links: Links,
    rng: ChaCha8Rng,
    queue: EventQueue<Event>,
    heartbeat_scheduled: bool,
    sequence: u64,
    in_flight: usize,
    duplicates: u64,
    iwant_served: u64,
}

impl GossipMesh {
    pub fn new(params: GossipParams, links: Links, seed: u64) -> Self {
        assert!(params.d_low <= params.d && params.d <= params.d_high);
        GossipMesh {
            params,
            sessions: Sessions::default(),
            peers: Vec::new(),
            links,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: EventQueue::default(),
            heartbeat_scheduled: false,
            sequence: 0,
            in_flight: 0,
            duplicates: 0,
            iwant_served: 0,
        }
    }

    pub fn params(&self) -> &GossipParams {
        &self.params
    }

    pub fn mesh(&self, s: SessionId, topic: &Topic) -> Vec<SessionId> {
        self.peers[s.0 as usize].mesh.get(topic).into_iter().flatten().copied().collect()
    }

    /// Copies of already-seen messages that were discarded.
    pub fn duplicates_dropped(&self) -> u64 {
        self.duplicates
    }

    /// Messages sent in answer to IWANT requests.
    pub fn iwant_served(&self) -> u64 {
        self.iwant_served
    }

    fn heartbeat_ns(&self) -> VirtualTime {
        self.params.heartbeat_ms * NS_PER_MS
    }

    fn degree(&self, s: SessionId, topic: &Topic) -> usize {
        self.peers[s.0 as usize].mesh.get(topic).map_or(0, |m| m.len())
    }

    fn link(&mut self, from: SessionId, to: SessionId) -> VirtualTime {
        self.links.model(from, to).sample_ns(&mut self.rng)
    }

    fn send(&mut self, at: VirtualTime, event: Event) {
        self.in_flight += 1;
        self.queue.push(at, event);
    }

    fn graft(&mut self, a: SessionId, b: SessionId, topic: &Topic) {
        self.peers[a.0 as usize].mesh.entry(topic.clone()).or_default().insert(b);
        self.peers[b.0 as usize].mesh.entry(topic.clone()).or_default().insert(a);
    }

    fn prune(&mut self, a: SessionId, b: SessionId, topic: &Topic) {
        for (x, y) in [(a, b), (b, a)] {
            if let Some(m) = self.peers[x.0 as usize].mesh.get_mut(topic) {
                m.remove(&y);
            }
        }
    }

    /// Grafts up to `want` random subscribers whose degree is below `d_high`.
    fn graft_candidates(&mut self, s: SessionId, topic: &Topic, want: usize) {
        let current: BTreeSet<SessionId> = self.mesh(s, topic).into_iter().collect();
        let mut candidates: Vec<SessionId> = self
            .sessions
            .subscribers(topic)
            .filter(|&c| c != s && !current.contains(&c) && self.degree(c, topic) < self.params.d_high)
            .collect();
        candidates.shuffle(&mut self.rng);
        for c in candidates.into_iter().take(want) {
            self.graft(s, c, topic);
        }
    }

    fn maintain(&mut self, s: SessionId, topic: &Topic) {
        let p = self.params;
        let degree = self.degree(s, topic);
        if degree < p.d_low {
            self.graft_candidates(s, topic, p.d - degree);
        } else if degree > p.d_high {
            let mut mesh = self.mesh(s, topic);
            mesh.shuffle(&mut self.rng);
            mesh.sort_by_key(|&m| std::cmp::Reverse(self.degree(m, topic)));
            let mut degree = degree;
            for m in mesh {
                if degree <= p.d {
                    break;
                }
                if self.degree(m, topic) > p.d_low {
                    self.prune(s, m, topic);
                    degree -= 1;
                }
            }
        }
    }

    fn heartbeat(&mut self, now: VirtualTime) {
        let p = self.params;
        for i in 0..self.sessions.len() {
            let s = SessionId(i as u32);
            if !self.sessions.is_connected(s) {
                continue;
            }
            let topics: Vec<Topic> = self.sessions.topics_of(s).iter().cloned().collect();
            for topic in topics {
                self.maintain(s, &topic);
                let ids: Vec<MessageId> = self.peers[i]
                    .mcache
                    .iter()
                    .take(p.history_gossip)
                    .flatten()
                    .filter(|e| e.topic == topic)
                    .map(|e| e.message_id)
                    .collect();
                if ids.is_empty() {
                    continue;
                }
                let mesh: BTreeSet<SessionId> = self.mesh(s, &topic).into_iter().collect();
                let mut lazy: Vec<SessionId> =
                    self.sessions.subscribers(&topic).filter(|&c| c != s && !mesh.contains(&c)).collect();
                lazy.shuffle(&mut self.rng);
                for to in lazy.into_iter().take(p.d_lazy) {
                    let at = now + self.link(s, to);
                    self.send(
                        at,
                        Event::IHave {
                            to,
                            from: s,
                            ids: ids.clone(),
                        },
                    );
                }
            }
        }
        let ttl = p.seen_ttl_ms * NS_PER_MS;
        for peer in &mut self.peers {
            peer.mcache.push_front(Vec::new());
            peer.mcache.truncate(p.history_length);
            peer.seen.retain(|_, t| now.saturating_sub(*t) <= ttl);
        }
    }

    /// Marks the message seen at `s`; false if it already was.
    fn receive(&mut self, s: SessionId, env: &Arc<Envelope>, now: VirtualTime) -> bool {
        let peer = &mut self.peers[s.0 as usize];
        if peer.seen.contains_key(&env.message_id) {
            return false;
        }
        peer.seen.insert(env.message_id, now);
        if peer.mcache.is_empty() {
            peer.mcache.push_front(Vec::new());
        }
        peer.mcache[0].push(env.clone());
        true
    }

    fn forward(&mut self, s: SessionId, except: Option<SessionId>, env: &Arc<Envelope>, now: VirtualTime) {
        for to in self.mesh(s, &env.topic) {
            if Some(to) == except || to == s {
                continue;
            }
            let at = now + self.link(s, to);
            self.send(
                at,
                Event::Arrive {
                    to,
                    from: s,
                    env: env.clone(),
                },
            );
        }
    }
}

impl DeliveryService for GossipMesh {
    fn kind(&self) -> DsKind {
        DsKind::Gossipsub
    }

    fn connect(&mut self, user: &str) -> Result<SessionId, DeliveryError> {
        let s = self.sessions.connect(user)?;
        self.peers.push(Peer::default());
        Ok(s)
    }

    fn disconnect(&mut self, session: SessionId) {
        for topic in self.sessions.disconnect(session) {
            for m in self.mesh(session, &topic) {
                self.prune(session, m, &topic);
            }
        }
    }

    fn subscribe(&mut self, session: SessionId, topic: &Topic) -> Result<(), DeliveryError> {
        if self.sessions.subscribe(session, topic)? {
            let d = self.params.d;
            self.graft_candidates(session, topic, d);
        }
        Ok(())
    }

    fn unsubscribe(&mut self, session: SessionId, topic: &Topic) -> Result<(), DeliveryError> {
        if self.sessions.unsubscribe(session, topic)? {
            for m in self.mesh(session, topic) {
                self.prune(session, m, topic);
            }
            self.peers[session.0 as usize].mesh.remove(topic);
        }
        Ok(())
    }

    fn publish(
        &mut self,
        session: SessionId,
        topic: Topic,
        payload: Vec<u8>,
        now: VirtualTime,
    ) -> Result<Arc<Envelope>, DeliveryError> {
        self.sessions.check(session)?;
        if !self.heartbeat_scheduled {
            self.heartbeat_scheduled = true;
            let h = self.heartbeat_ns();
            self.queue.push((now / h + 1) * h, Event::Heartbeat);
        }
        let sender = self.sessions.user(session).to_string();
        let env = Arc::new(Envelope {
            message_id: MessageId::compute(&payload, &sender, self.sequence),
            topic,
            payload: payload.into(),
            sender,
            publish_time: now,
        });
        self.sequence += 1;
        self.receive(session, &env, now);
        if self.sessions.is_subscribed(session, &env.topic) {
            self.send(now, Event::SelfDeliver(session, env.clone()));
            self.forward(session, None, &env, now);
        } else {
            let mut fanout: Vec<SessionId> = self.sessions.subscribers(&env.topic).collect();
            fanout.shuffle(&mut self.rng);
            for to in fanout.into_iter().take(self.params.d) {
                let at = now + self.link(session, to);
                self.send(
                    at,
                    Event::Arrive {
                        to,
                        from: session,
                        env: env.clone(),
                    },
                );
            }
        }
        Ok(env)
    }

    fn next_event_time(&self) -> Option<VirtualTime> {
        self.queue.peek_time()
    }

    fn advance(&mut self, until: VirtualTime) -> Vec<Delivery> {
        let mut out = Vec::new();
        while let Some((now, event)) = self.queue.pop_due(until) {
            if !matches!(event, Event::Heartbeat) {
                self.in_flight -= 1;
            }
            match event {
                Event::Heartbeat => {
                    self.heartbeat(now);
                    self.queue.push(now + self.heartbeat_ns(), Event::Heartbeat);
                }
                Event::SelfDeliver(to, envelope) => {
                    if self.sessions.is_connected(to) {
                        out.push(Delivery { to, envelope, at: now });
                    }
                }
                Event::Arrive { to, from, env } => {
                    if !self.sessions.is_connected(to) {
                        continue;
                    }
                    if !self.receive(to, &env, now) {
                        self.duplicates += 1;
                        continue;
                    }
                    let at = now + (self.params.validation_ms * NS_PER_MS as f64).round() as VirtualTime;
                    self.send(at, Event::Validated { at: to, from, env });
                }
                Event::Validated { at, from, env } => {
                    if !self.sessions.is_connected(at) {
                        continue;
                    }
                    if self.sessions.is_subscribed(at, &env.topic) {
                        out.push(Delivery {
                            to: at,
                            envelope: env.clone(),
                            at: now,
                        });
                    }
                    self.forward(at, Some(from), &env, now);
                }
                Event::IHave { to, from, ids } => {
                    if !self.sessions.is_connected(to) {
                        continue;
                    }
                    let seen = &self.peers[to.0 as usize].seen;
                    let wanted: Vec<MessageId> = ids.into_iter().filter(|id| !seen.contains_key(id)).collect();
                    if !wanted.is_empty() {
                        let at = now + self.link(to, from);
                        self.send(at, Event::IWant { to: from, from: to, ids: wanted });
                    }
                }
                Event::IWant { to, from, ids } => {
                    if !self.sessions.is_connected(to) {
                        continue;
                    }
                    let found: Vec<Arc<Envelope>> =
                        ids.iter().filter_map(|id| self.peers[to.0 as usize].cached(id).cloned()).collect();
                    for env in found {
                        self.iwant_served += 1;
                        let at = now + self.link(to, from);
                        self.send(at, Event::Arrive { to: from, from: to, env });
                    }
                }
            }
        }
        out
    }

    fn confirmation_window(&self) -> VirtualTime {
        2 * self.heartbeat_ns()
    }

    fn is_quiescent(&self) -> bool {
        self.in_flight == 0
    }
}
