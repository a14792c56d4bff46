//! KeyPackage and GroupInfo storage.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use super::DeliveryError;
use crate::crypto::sha256;

/// Shared storage for KeyPackages (consumed on read) and GroupInfo (latest
/// epoch wins). Implementations are internally synchronized.
pub trait Directory: Send + Sync {
    fn publish_key_package(&self, user: &str, key_package: Vec<u8>);

    /// Removes and returns the oldest stored package of `user`.
    fn take_key_package(&self, user: &str) -> Result<Vec<u8>, DeliveryError>;

    fn has_key_package(&self, user: &str) -> bool;

    /// Older epochs than the stored one are ignored.
    fn publish_group_info(&self, group: &str, epoch: u64, group_info: Vec<u8>);

    fn fetch_group_info(&self, group: &str) -> Result<(u64, Vec<u8>), DeliveryError>;
}

#[derive(Debug, Default, Clone)]
struct Store {
    key_packages: BTreeMap<String, VecDeque<Vec<u8>>>,
    group_infos: BTreeMap<String, (u64, Vec<u8>)>,
}

impl Store {
    fn put_group_info(&mut self, group: &str, epoch: u64, gi: Vec<u8>) -> bool {
        match self.group_infos.get(group) {
            Some((e, _)) if *e >= epoch => false,
            _ => {
                self.group_infos.insert(group.to_string(), (epoch, gi));
                true
            }
        }
    }
}

fn kp_key(user: &str) -> String {
    format!("kp/{user}")
}

fn gi_key(group: &str) -> String {
    format!("gi/{group}")
}

/// A single server-side store.
#[derive(Debug, Default)]
pub struct CentralDirectory {
    store: Mutex<Store>,
}

impl CentralDirectory {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Directory for CentralDirectory {
    fn publish_key_package(&self, user: &str, key_package: Vec<u8>) {
        let mut s = self.store.lock().expect("directory lock");
        s.key_packages.entry(user.to_string()).or_default().push_back(key_package);
    }

    fn take_key_package(&self, user: &str) -> Result<Vec<u8>, DeliveryError> {
        let mut s = self.store.lock().expect("directory lock");
        s.key_packages
            .get_mut(user)
            .and_then(|q| q.pop_front())
            .ok_or_else(|| DeliveryError::NotFound(kp_key(user)))
    }

    fn has_key_package(&self, user: &str) -> bool {
        let s = self.store.lock().expect("directory lock");
        s.key_packages.get(user).is_some_and(|q| !q.is_empty())
    }

    fn publish_group_info(&self, group: &str, epoch: u64, group_info: Vec<u8>) {
        self.store.lock().expect("directory lock").put_group_info(group, epoch, group_info);
    }

    fn fetch_group_info(&self, group: &str) -> Result<(u64, Vec<u8>), DeliveryError> {
        let s = self.store.lock().expect("directory lock");
        s.group_infos.get(group).cloned().ok_or_else(|| DeliveryError::NotFound(gi_key(group)))
    }
}

#[derive(Debug, Default)]
struct Dht {
    peers: BTreeMap<String, Store>,
}

impl Dht {
    fn replicas(&self, key: &str, k: usize) -> Vec<String> {
        let mut scored: Vec<(Vec<u8>, &String)> = self
            .peers
            .keys()
            .map(|p| {
                let mut input = key.as_bytes().to_vec();
                input.push(0);
                input.extend_from_slice(p.as_bytes());
                (sha256(&input), p)
            })
            .collect();
        scored.sort();
        scored.into_iter().rev().take(k).map(|(_, p)| p.clone()).collect()
    }

    /// Replica stores first, then every other peer, for read-repair after
    /// membership changes moved the placement.
    fn search_order(&self, key: &str, k: usize) -> Vec<String> {
        let mut order = self.replicas(key, k);
        order.extend(self.peers.keys().filter(|p| !order.contains(p)).cloned().collect::<Vec<_>>());
        order
    }
}

/// Records are placed on the `k` peers with the highest rendezvous score
/// `sha256(key || 0 || peer)`. Fetches repair stale or missing replicas.
/// Routing is instantaneous; only placement is modeled.
#[derive(Debug)]
pub struct DhtDirectory {
    k: usize,
    dht: Mutex<Dht>,
}

impl DhtDirectory {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1);
        DhtDirectory {
            k,
            dht: Mutex::new(Dht::default()),
        }
    }

    pub fn add_peer(&self, peer: &str) {
        self.dht.lock().expect("dht lock").peers.entry(peer.to_string()).or_default();
    }

    /// Drops the peer and everything it stored.
    pub fn remove_peer(&self, peer: &str) {
        self.dht.lock().expect("dht lock").peers.remove(peer);
    }

    pub fn peer_count(&self) -> usize {
        self.dht.lock().expect("dht lock").peers.len()
    }

    pub fn replicas_for_group_info(&self, group: &str) -> Vec<String> {
        self.dht.lock().expect("dht lock").replicas(&gi_key(group), self.k)
    }

    pub fn replicas_for_key_package(&self, user: &str) -> Vec<String> {
        self.dht.lock().expect("dht lock").replicas(&kp_key(user), self.k)
    }

    /// Peers currently holding a GroupInfo record for `group`.
    pub fn group_info_holders(&self, group: &str) -> Vec<String> {
        let d = self.dht.lock().expect("dht lock");
        d.peers
            .iter()
            .filter(|(_, s)| s.group_infos.contains_key(group))
            .map(|(p, _)| p.clone())
            .collect()
    }

    pub fn key_package_holders(&self, user: &str) -> Vec<String> {
        let d = self.dht.lock().expect("dht lock");
        d.peers
            .iter()
            .filter(|(_, s)| s.key_packages.get(user).is_some_and(|q| !q.is_empty()))
            .map(|(p, _)| p.clone())
            .collect()
    }
}

impl Directory for DhtDirectory {
    fn publish_key_package(&self, user: &str, key_package: Vec<u8>) {
        let mut d = self.dht.lock().expect("dht lock");
        for p in d.replicas(&kp_key(user), self.k) {
            let store = d.peers.get_mut(&p).expect("replica is a peer");
            store.key_packages.entry(user.to_string()).or_default().push_back(key_package.clone());
        }
    }

    fn take_key_package(&self, user: &str) -> Result<Vec<u8>, DeliveryError> {
        let mut d = self.dht.lock().expect("dht lock");
        let order = d.search_order(&kp_key(user), self.k);
        let found = order
            .iter()
            .find_map(|p| d.peers[p].key_packages.get(user).and_then(|q| q.front().cloned()));
        let Some(kp) = found else {
            return Err(DeliveryError::NotFound(kp_key(user)));
        };
        // Consume every replica of this package so it cannot be taken twice.
        for store in d.peers.values_mut() {
            if let Some(q) = store.key_packages.get_mut(user) {
                if let Some(pos) = q.iter().position(|x| *x == kp) {
                    q.remove(pos);
                }
            }
        }
        Ok(kp)
    }

    fn has_key_package(&self, user: &str) -> bool {
        let d = self.dht.lock().expect("dht lock");
        d.peers.values().any(|s| s.key_packages.get(user).is_some_and(|q| !q.is_empty()))
    }

    fn publish_group_info(&self, group: &str, epoch: u64, group_info: Vec<u8>) {
        let mut d = self.dht.lock().expect("dht lock");
        for p in d.replicas(&gi_key(group), self.k) {
            d.peers.get_mut(&p).expect("replica is a peer").put_group_info(group, epoch, group_info.clone());
        }
    }

    fn fetch_group_info(&self, group: &str) -> Result<(u64, Vec<u8>), DeliveryError> {
        let mut d = self.dht.lock().expect("dht lock");
        let key = gi_key(group);
        let replicas = d.replicas(&key, self.k);
        let from_replicas = replicas.iter().filter_map(|p| d.peers[p].group_infos.get(group)).max_by_key(|(e, _)| *e).cloned();
        let best = match from_replicas {
            Some(r) => Some(r),
            None => d.peers.values().filter_map(|s| s.group_infos.get(group)).max_by_key(|(e, _)| *e).cloned(),
        };
        let Some((epoch, gi)) = best else {
            return Err(DeliveryError::NotFound(key));
        };
        for p in replicas {
            d.peers.get_mut(&p).expect("replica is a peer").put_group_info(group, epoch, gi.clone());
        }
        Ok((epoch, gi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn dht(n: usize) -> DhtDirectory {
        let d = DhtDirectory::new(3);
        for i in 0..n {
            d.add_peer(&format!("peer-{i}"));
        }
        d
    }

    fn directories() -> Vec<Box<dyn Directory>> {
        vec![Box::new(CentralDirectory::new()), Box::new(dht(10))]
    }

    #[test]
    fn key_packages_are_single_use() {
        for d in directories() {
            assert_eq!(d.take_key_package("a"), Err(DeliveryError::NotFound("kp/a".into())));
            d.publish_key_package("a", vec![1]);
            assert!(d.has_key_package("a"));
            assert_eq!(d.take_key_package("a").unwrap(), vec![1]);
            assert!(d.take_key_package("a").is_err());
            d.publish_key_package("a", vec![2]);
            d.publish_key_package("a", vec![3]);
            let x = d.take_key_package("a").unwrap();
            let y = d.take_key_package("a").unwrap();
            assert_ne!(x, y);
            assert!(d.take_key_package("a").is_err());
            assert!(!d.has_key_package("a"));
        }
    }

    #[test]
    fn group_info_keeps_max_epoch() {
        for d in directories() {
            assert!(d.fetch_group_info("g").is_err());
            d.publish_group_info("g", 3, vec![3]);
            d.publish_group_info("g", 5, vec![5]);
            assert_eq!(d.fetch_group_info("g").unwrap(), (5, vec![5]));
            d.publish_group_info("g", 4, vec![4]);
            assert_eq!(d.fetch_group_info("g").unwrap(), (5, vec![5]));
        }
    }

    #[test]
    fn concurrent_takes_single_winner() {
        for d in directories() {
            let d: Arc<dyn Directory> = Arc::from(d);
            d.publish_key_package("a", vec![9]);
            let handles: Vec<_> = (0..8)
                .map(|_| {
                    let d = d.clone();
                    std::thread::spawn(move || d.take_key_package("a").is_ok())
                })
                .collect();
            let wins = handles.into_iter().filter(|_| true).map(|h| h.join().unwrap()).filter(|&ok| ok).count();
            assert_eq!(wins, 1);
        }
    }

    #[test]
    fn rendezvous_placement() {
        let d = dht(16);
        d.publish_group_info("g", 1, vec![1]);
        let mut expected = d.replicas_for_group_info("g");
        expected.sort();
        assert_eq!(expected.len(), 3);
        assert_eq!(d.group_info_holders("g"), expected);

        // Oracle: the three highest scores computed independently.
        let mut scores: Vec<(Vec<u8>, String)> = (0..16)
            .map(|i| {
                let p = format!("peer-{i}");
                (sha256(format!("gi/g\0{p}").as_bytes()), p)
            })
            .collect();
        scores.sort();
        let mut top: Vec<String> = scores.into_iter().rev().take(3).map(|x| x.1).collect();
        top.sort();
        assert_eq!(top, expected);
    }

    #[test]
    fn read_repair_after_churn() {
        let d = dht(4);
        d.publish_group_info("g", 2, vec![2]);
        for i in 4..40 {
            d.add_peer(&format!("peer-{i}"));
        }
        assert_eq!(d.fetch_group_info("g").unwrap(), (2, vec![2]));
        let holders = d.group_info_holders("g");
        for r in d.replicas_for_group_info("g") {
            assert!(holders.contains(&r), "replica {r} repaired");
        }
        // A replica holder leaving does not lose the record.
        let first = d.replicas_for_group_info("g")[0].clone();
        d.remove_peer(&first);
        assert_eq!(d.fetch_group_info("g").unwrap().0, 2);
    }
}
