//! Central broker: every message goes client → broker → subscribers.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    Delivery, DeliveryError, DeliveryService, DsKind, Envelope, EventQueue, Links, MessageId, SessionId, Sessions, Topic,
};
use crate::VirtualTime;

#[derive(Debug)]
enum Event {
    AtBroker(Arc<Envelope>),
    Deliver(SessionId, Arc<Envelope>),
}

/// Both link directions are FIFO per session, so the broker's arrival order
/// on a topic is the order every subscriber observes. Subscribers, including
/// the publisher, are resolved when the message reaches the broker. There is
/// no retained history. A link model describes the end-to-end latency
/// between two clients; each of the two hops through the broker takes half
/// of an independent sample.
#[derive(Debug)]
pub struct Broker {
    sessions: Sessions,
    links: Links,
    rng: ChaCha8Rng,
    queue: EventQueue<Event>,
    last_up: Vec<VirtualTime>,
    last_down: Vec<VirtualTime>,
    sequence: u64,
    in_flight: usize,
}

/// The broker's own id in link lookups.
const BROKER: SessionId = SessionId(u32::MAX);

impl Broker {
    pub fn new(links: Links, seed: u64) -> Self {
        Broker {
            sessions: Sessions::default(),
            links,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: EventQueue::default(),
            last_up: Vec::new(),
            last_down: Vec::new(),
            sequence: 0,
            in_flight: 0,
        }
    }
}

impl DeliveryService for Broker {
    fn kind(&self) -> DsKind {
        DsKind::Mqtt
    }

    fn connect(&mut self, user: &str) -> Result<SessionId, DeliveryError> {
        let s = self.sessions.connect(user)?;
        self.last_up.push(0);
        self.last_down.push(0);
        Ok(s)
    }

    fn disconnect(&mut self, session: SessionId) {
        self.sessions.disconnect(session);
    }

    fn subscribe(&mut self, session: SessionId, topic: &Topic) -> Result<(), DeliveryError> {
        self.sessions.subscribe(session, topic).map(|_| ())
    }

    fn unsubscribe(&mut self, session: SessionId, topic: &Topic) -> Result<(), DeliveryError> {
        self.sessions.unsubscribe(session, topic).map(|_| ())
    }

    fn publish(
        &mut self,
        session: SessionId,
        topic: Topic,
        payload: Vec<u8>,
        now: VirtualTime,
    ) -> Result<Arc<Envelope>, DeliveryError> {
        self.sessions.check(session)?;
        let sender = self.sessions.user(session).to_string();
        let env = Arc::new(Envelope {
            message_id: MessageId::compute(&payload, &sender, self.sequence),
            topic,
            payload: payload.into(),
            sender,
            publish_time: now,
        });
        self.sequence += 1;
        let i = session.0 as usize;
        let at = (now + self.links.model(session, BROKER).sample_ns(&mut self.rng) / 2).max(self.last_up[i]);
        self.last_up[i] = at;
        self.queue.push(at, Event::AtBroker(env.clone()));
        self.in_flight += 1;
        Ok(env)
    }

    fn next_event_time(&self) -> Option<VirtualTime> {
        self.queue.peek_time()
    }

    fn advance(&mut self, until: VirtualTime) -> Vec<Delivery> {
        let mut out = Vec::new();
        while let Some((t, event)) = self.queue.pop_due(until) {
            match event {
                Event::AtBroker(env) => {
                    self.in_flight -= 1;
                    let targets: Vec<SessionId> = self.sessions.subscribers(&env.topic).collect();
                    for s in targets {
                        let i = s.0 as usize;
                        let at = (t + self.links.model(BROKER, s).sample_ns(&mut self.rng).div_ceil(2)).max(self.last_down[i]);
                        self.last_down[i] = at;
                        self.queue.push(at, Event::Deliver(s, env.clone()));
                        self.in_flight += 1;
                    }
                }
                Event::Deliver(to, envelope) => {
                    self.in_flight -= 1;
                    if self.sessions.is_connected(to) {
                        out.push(Delivery { to, envelope, at: t });
                    }
                }
            }
        }
        out
    }

    fn confirmation_window(&self) -> VirtualTime {
        0
    }

    fn is_quiescent(&self) -> bool {
        self.in_flight == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delivery::LatencyModel;

    fn broker() -> Broker {
        Broker::new(Links::default(), 7)
    }

    fn drain(ds: &mut dyn DeliveryService) -> Vec<Delivery> {
        ds.advance(VirtualTime::MAX)
    }

    #[test]
    fn subscribers_and_echo() {
        let mut b = broker();
        let t = Topic::group("g");
        let ids: Vec<_> = ["a", "b", "c"].iter().map(|u| b.connect(u).unwrap()).collect();
        for &s in &ids {
            b.subscribe(s, &t).unwrap();
        }
        let outsider = b.connect("d").unwrap();
        b.publish(ids[0], t.clone(), b"hi".to_vec(), 0).unwrap();
        let got = drain(&mut b);
        let mut to: Vec<_> = got.iter().map(|d| d.to).collect();
        to.sort();
        assert_eq!(to, ids, "three subscribers including the sender's echo");
        assert!(got.iter().all(|d| d.to != outsider && d.at > 0));
        assert!(b.is_quiescent());
    }

    #[test]
    fn no_replay_and_unsubscribe() {
        let mut b = broker();
        let t = Topic::group("g");
        let a = b.connect("a").unwrap();
        let c = b.connect("c").unwrap();
        b.publish(a, t.clone(), b"early".to_vec(), 0).unwrap();
        drain(&mut b);
        b.subscribe(c, &t).unwrap();
        assert!(drain(&mut b).is_empty());
        b.publish(a, t.clone(), b"now".to_vec(), 100).unwrap();
        assert_eq!(drain(&mut b).len(), 1);
        b.unsubscribe(c, &t).unwrap();
        b.publish(a, t.clone(), b"later".to_vec(), 200).unwrap();
        assert!(drain(&mut b).is_empty());
    }

    #[test]
    fn constant_links_take_one_sample_end_to_end() {
        let mut b = Broker::new(Links::with_default(LatencyModel::Constant { ms: 5.0 }), 1);
        let t = Topic::group("g");
        let a = b.connect("a").unwrap();
        let c = b.connect("c").unwrap();
        b.subscribe(c, &t).unwrap();
        b.publish(a, t, b"x".to_vec(), 1000).unwrap();
        let got = drain(&mut b);
        assert_eq!(got[0].at, 1000 + 5 * crate::NS_PER_MS);
    }

    #[test]
    fn disconnected_publish_fails() {
        let mut b = broker();
        let a = b.connect("a").unwrap();
        b.disconnect(a);
        assert_eq!(b.publish(a, Topic::group("g"), vec![], 0), Err(DeliveryError::Disconnected(a)));
    }

    #[test]
    fn per_topic_order_identical_for_all() {
        let mut b = Broker::new(
            Links::with_default(LatencyModel::Normal {
                mean_ms: 20.0,
                std_ms: 15.0,
            }),
            3,
        );
        let t = Topic::group("g");
        let ids: Vec<_> = (0..6).map(|i| b.connect(&format!("u{i}")).unwrap()).collect();
        for &s in &ids {
            b.subscribe(s, &t).unwrap();
        }
        let mut now = 0;
        let mut got = Vec::new();
        for k in 0..1000u32 {
            b.publish(ids[k as usize % 6], t.clone(), k.to_be_bytes().to_vec(), now).unwrap();
            now += 1_000_000;
            got.extend(b.advance(now));
        }
        got.extend(drain(&mut b));
        let order = |s: SessionId| -> Vec<MessageId> {
            got.iter().filter(|d| d.to == s).map(|d| d.envelope.message_id).collect()
        };
        let first = order(ids[0]);
        assert_eq!(first.len(), 1000);
        for &s in &ids[1..] {
            assert_eq!(order(s), first);
        }
        // One sender's messages keep their publish order.
        let mine: Vec<u32> = got
            .iter()
            .filter(|d| d.to == ids[1] && d.envelope.sender == "u0")
            .map(|d| u32::from_be_bytes(d.envelope.payload[..4].try_into().unwrap()))
            .collect();
        assert!(mine.windows(2).all(|w| w[0] < w[1]));
    }
}
