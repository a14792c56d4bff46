//! Shared drivers for integration tests: a group of in-memory members that
//! apply random operation sequences to each other without a delivery service.

#![allow(dead_code)]

use std::sync::Arc;

use mlsim::cgka::testing::{any_path_secret_opens, open_with_secret};
use mlsim::cgka::{
    CgkaError, CommitBundle, GroupConfig, GroupState, HandshakeMessage, KeyPackage, KeyPackageSecrets, LeafIndex,
    MemberIdentity, Modification, Sender,
};
use mlsim::crypto::{CryptoProvider, ToyProvider};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn toy() -> Arc<dyn CryptoProvider> {
    Arc::new(ToyProvider)
}

/// A member removed from the group, frozen at the state it held just before
/// the removing commit, with every private key it ever knew.
pub struct Evicted {
    pub state: GroupState,
    pub keys: Vec<Vec<u8>>,
    pub at_epoch: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Remove,
    Update,
    ExternalJoin,
}

pub struct Fleet {
    pub crypto: Arc<dyn CryptoProvider>,
    pub rng: ChaCha20Rng,
    pub members: Vec<GroupState>,
    pub evicted: Vec<Evicted>,
    /// Every commit applied so far with its committer's leaf.
    pub commits: Vec<(HandshakeMessage, LeafIndex)>,
    next_name: usize,
}

impl Fleet {
    pub fn new(crypto: Arc<dyn CryptoProvider>, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let id = MemberIdentity::generate(crypto.as_ref(), "m0", &mut rng);
        let creator = GroupState::create(crypto.clone(), &mut rng, "g", id, GroupConfig { external_joins: true });
        Fleet {
            crypto,
            rng,
            members: vec![creator],
            evicted: Vec::new(),
            commits: Vec::new(),
            next_name: 1,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.members[0].epoch()
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    fn fresh_identity(&mut self) -> MemberIdentity {
        let name = format!("m{}", self.next_name);
        self.next_name += 1;
        MemberIdentity::generate(self.crypto.as_ref(), &name, &mut self.rng)
    }

    fn key_package(&mut self) -> (MemberIdentity, KeyPackage, KeyPackageSecrets) {
        let id = self.fresh_identity();
        let (kp, secrets) = KeyPackage::generate(self.crypto.as_ref(), &id, &mut self.rng);
        (id, kp, secrets)
    }

    fn random_member(&mut self) -> usize {
        self.rng.gen_range(0..self.members.len())
    }

    /// Applies a commit to everyone: the committer merges, evicted members
    /// are frozen, and invitees join from their Welcomes.
    fn apply(&mut self, committer: usize, bundle: CommitBundle, invitees: Vec<(MemberIdentity, KeyPackageSecrets)>) {
        let CommitBundle {
            commit: msg,
            welcomes,
            pending,
            ..
        } = bundle;
        let mut pending = Some(pending);
        let leaf = match msg.sender {
            Sender::Member(l) => l,
            Sender::NewMember => unreachable!("members do not send external commits"),
        };
        let mut next = Vec::with_capacity(self.members.len());
        for (i, s) in self.members.iter().enumerate() {
            if i == committer {
                next.push(s.merge_pending(pending.take().expect("one committer"), &msg).expect("committer merges"));
                continue;
            }
            match s.process_commit(&msg) {
                Ok(n) => next.push(n),
                Err(CgkaError::Evicted) => {
                    let mut keys = s.held_private_keys();
                    keys.extend(s.pending_update_keys());
                    self.evicted.push(Evicted {
                        state: s.clone(),
                        keys,
                        at_epoch: s.epoch(),
                    });
                }
                Err(e) => panic!("member {i} failed to process: {e}"),
            }
        }
        self.members = next;
        for (id, secrets) in invitees {
            let welcome = welcomes
                .iter()
                .find(|(name, _)| *name == id.name)
                .map(|(_, w)| w.clone())
                .expect("a welcome for every invitee");
            let joined = GroupState::from_welcome(self.crypto.clone(), &welcome, &secrets, id).expect("welcome opens");
            self.members.push(joined);
        }
        self.commits.push((msg, leaf));
    }

    /// One operation committed directly by a random allowed member.
    pub fn commit_op(&mut self, op: Op) {
        match op {
            Op::ExternalJoin => return self.external_join(),
            Op::Remove if self.members.len() < 2 => return self.commit_op(Op::Update),
            _ => {}
        }
        let committer = self.random_member();
        let mut invitees = Vec::new();
        let modification = match op {
            Op::Add => {
                let (id, kp, secrets) = self.key_package();
                invitees.push((id, secrets));
                Modification::Add(kp)
            }
            Op::Remove => {
                let me = self.members[committer].my_leaf();
                let others: Vec<LeafIndex> =
                    self.members[committer].tree().leaves().map(|(l, _)| l).filter(|l| *l != me).collect();
                Modification::Remove(others[self.rng.gen_range(0..others.len())])
            }
            Op::Update => Modification::Update,
            Op::ExternalJoin => unreachable!(),
        };
        let bundle = self.members[committer]
            .commit_modifications(&mut self.rng, &[modification])
            .expect("commit");
        self.apply(committer, bundle, invitees);
    }

    /// `ops.len()` proposals from random members, committed together by a
    /// random member. Proposals the committer cannot include are dropped.
    pub fn propose_ops(&mut self, ops: &[Op]) {
        let mut proposals = Vec::new();
        let mut invitees = Vec::new();
        for &op in ops {
            let proposer = self.random_member();
            let modification = match op {
                Op::Add | Op::ExternalJoin => {
                    let (id, kp, secrets) = self.key_package();
                    invitees.push((id, secrets));
                    Modification::Add(kp)
                }
                Op::Remove => {
                    let me = self.members[proposer].my_leaf();
                    let others: Vec<LeafIndex> =
                        self.members[proposer].tree().leaves().map(|(l, _)| l).filter(|l| *l != me).collect();
                    if others.is_empty() {
                        Modification::Update
                    } else {
                        Modification::Remove(others[self.rng.gen_range(0..others.len())])
                    }
                }
                Op::Update => Modification::Update,
            };
            let p = self.members[proposer].propose(&mut self.rng, modification).expect("propose");
            proposals.push(p);
        }
        let committer = self.random_member();
        let framed = self.members[committer].filter_committable(&proposals);
        let bundle = self.members[committer].create_commit(&mut self.rng, &framed, &[]).expect("commit");
        invitees.retain(|(id, _)| bundle.welcomes.iter().any(|(n, _)| *n == id.name));
        self.apply(committer, bundle, invitees);
    }

    pub fn external_join(&mut self) {
        let from = self.random_member();
        let gi = self.members[from].export_group_info();
        let id = self.fresh_identity();
        let (msg, pending) =
            GroupState::join_external(self.crypto.clone(), &mut self.rng, &gi, id, false).expect("external join");
        let mut next: Vec<GroupState> = self
            .members
            .iter()
            .map(|s| s.process_commit(&msg).expect("members accept the join"))
            .collect();
        let joiner = pending.confirm(&msg).expect("joiner confirms");
        let leaf = joiner.my_leaf();
        next.push(joiner);
        self.members = next;
        self.commits.push((msg, leaf));
    }

    /// Every current member holds the same epoch secret, tree and context.
    pub fn consistent(&self) -> Result<(), String> {
        let first = &self.members[0];
        for (i, s) in self.members.iter().enumerate().skip(1) {
            if s.epoch_secret() != first.epoch_secret() {
                return Err(format!("member {i} has a different epoch secret at epoch {}", first.epoch()));
            }
            if s.tree() != first.tree() {
                return Err(format!("member {i} has a different tree at epoch {}", first.epoch()));
            }
            if s.context() != first.context() {
                return Err(format!("member {i} has a different context at epoch {}", first.epoch()));
            }
        }
        if first.member_count() != self.members.len() {
            return Err(format!(
                "tree lists {} members but {} states exist",
                first.member_count(),
                self.members.len()
            ));
        }
        Ok(())
    }

    /// Checks every evicted member against every later commit and against a
    /// fresh application message from a current member.
    pub fn evicted_locked_out(&mut self) -> Result<(), String> {
        let sender = self.random_member();
        let body: Vec<u8> = (0..64).map(|_| self.rng.gen()).collect();
        let app = self.members[sender].seal_application(&body);
        for (n, ev) in self.evicted.iter().enumerate() {
            if ev.state.open_application(&app).is_ok() {
                return Err(format!("evicted member {n} opened a message at epoch {}", self.epoch()));
            }
            if open_with_secret(self.crypto.as_ref(), ev.state.application_secret(), &app) {
                return Err(format!("evicted member {n}'s old application secret opens epoch {}", self.epoch()));
            }
            for (msg, leaf) in self.commits.iter().filter(|(m, _)| m.epoch >= ev.at_epoch) {
                if any_path_secret_opens(self.crypto.as_ref(), &ev.keys, msg, *leaf) {
                    return Err(format!("evicted member {n} decrypts the path of the commit from epoch {}", msg.epoch));
                }
            }
        }
        Ok(())
    }
}
