use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::RngCore;

use super::key_package::{KeyPackage, KeyPackageSecrets, MemberIdentity};
use super::key_schedule::{self as ks, EpochSecrets};
use super::messages::{
    ApplicationMessage, Commit, CommitProposal, Content, ExternalInit, GroupContext, GroupInfo,
    GroupSecrets, HandshakeMessage, ProposalKind, Sender, UpdatePath, UpdatePathNode, Welcome,
};
use super::tree::{LeafNode, Node, ParentNode, RatchetTree};
use super::treemath::{self, LeafIndex, NodeIndex};
use super::CgkaError;
use crate::codec;
use crate::crypto::{hpke_open, hpke_seal, CryptoProvider, KemKeyPair, Secret, NONCE_LEN};

type Result<T> = std::result::Result<T, CgkaError>;

fn invalid(msg: &str) -> CgkaError {
    CgkaError::InvalidProposalCombination(msg.to_string())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GroupConfig {
    pub external_joins: bool,
}

/// A group change requested by the local member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Modification {
    Add(KeyPackage),
    Remove(LeafIndex),
    Update,
}

/// One member's view of a group at one epoch.
#[derive(Clone)]
pub struct GroupState {
    crypto: Arc<dyn CryptoProvider>,
    identity: MemberIdentity,
    context: GroupContext,
    tree: RatchetTree,
    my_leaf: LeafIndex,
    private_keys: BTreeMap<NodeIndex, KemKeyPair>,
    secrets: EpochSecrets,
    interim_transcript_hash: Vec<u8>,
    confirmation_tag: Vec<u8>,
    join_order: Vec<LeafIndex>,
    /// Leaf keys of this member's own published Update proposals, by public key.
    pending_updates: BTreeMap<Vec<u8>, Vec<u8>>,
    app_generation: u32,
}

impl fmt::Debug for GroupState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupState")
            .field("group_id", &self.context.group_id)
            .field("epoch", &self.context.epoch)
            .field("my_leaf", &self.my_leaf)
            .field("members", &self.tree.member_count())
            .finish_non_exhaustive()
    }
}

/// State staged by a committer until its commit is confirmed as the epoch winner.
pub struct PendingCommit {
    pub commit_ref: Vec<u8>,
    pub from_epoch: u64,
    state: Box<GroupState>,
}

impl fmt::Debug for PendingCommit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PendingCommit")
            .field("from_epoch", &self.from_epoch)
            .finish_non_exhaustive()
    }
}

impl PendingCommit {
    /// Releases the staged state if `confirmed` is the commit it was built for.
    pub fn confirm(self, confirmed: &HandshakeMessage) -> Result<GroupState> {
        let r = self.state.crypto.hash(&codec::encode(confirmed));
        if r != self.commit_ref {
            return Err(CgkaError::PendingMismatch);
        }
        Ok(*self.state)
    }

    pub fn preview(&self) -> &GroupState {
        &self.state
    }
}

#[derive(Debug)]
pub struct CommitBundle {
    pub commit: HandshakeMessage,
    /// One Welcome per added member, keyed by the invitee's identity.
    pub welcomes: Vec<(String, Welcome)>,
    pub group_info: GroupInfo,
    pub pending: PendingCommit,
}

struct Applied {
    tree: RatchetTree,
    join_order: Vec<LeafIndex>,
    added: Vec<(LeafIndex, KeyPackage)>,
    removed: Vec<LeafIndex>,
    updated: Vec<(LeafIndex, LeafNode)>,
}

struct PathOutput {
    path: UpdatePath,
    secrets: Vec<(NodeIndex, Secret)>,
    keypairs: Vec<(NodeIndex, KemKeyPair)>,
    commit_secret: Secret,
}

pub(crate) fn path_aad(group_id: &str, epoch: u64, committer: LeafIndex) -> Vec<u8> {
    codec::to_bytes(&("path", group_id, epoch, committer))
}

/// Refreshes the committer's leaf and filtered direct path in `tree` and
/// encrypts each new path secret to the copath resolution, skipping `exclude`.
fn make_path(
    crypto: &dyn CryptoProvider,
    rng: &mut dyn RngCore,
    tree: &mut RatchetTree,
    committer: LeafIndex,
    identity: &MemberIdentity,
    exclude: &BTreeSet<NodeIndex>,
    aad: &[u8],
) -> Result<PathOutput> {
    let leaf_secret = crypto.random_secret(rng);
    let leaf_kp = ks::node_keypair(crypto, &leaf_secret);
    let leaf = LeafNode::new_signed(
        crypto,
        &identity.name,
        &identity.signer.public_key,
        &identity.signer.private_key,
        leaf_kp.public_key.clone(),
    );
    tree.set_leaf(committer, leaf.clone());
    tree.blank_direct_path(committer);
    let fdp = tree.filtered_direct_path(committer);

    let mut ps = leaf_secret;
    let mut secrets = Vec::with_capacity(fdp.len());
    let mut keypairs = vec![(committer.node(), leaf_kp)];
    let mut nodes = Vec::with_capacity(fdp.len());
    for (x, c) in fdp {
        ps = ks::path_step(crypto, &ps);
        let kp = ks::node_keypair(crypto, &ps);
        let mut cts = Vec::new();
        for r in tree.resolution(c) {
            if exclude.contains(&r) {
                continue;
            }
            let pk = tree.node(r).expect("resolution holds non-blank nodes").encryption_key();
            cts.push(hpke_seal(crypto, pk, b"path secret", aad, ps.as_bytes(), rng)?);
        }
        tree.set_node(
            x,
            Some(Node::Parent(ParentNode {
                encryption_key: kp.public_key.clone(),
            })),
        );
        nodes.push(UpdatePathNode {
            encryption_key: kp.public_key.clone(),
            encrypted_path_secrets: cts,
        });
        secrets.push((x, ps.clone()));
        keypairs.push((x, kp));
    }
    Ok(PathOutput {
        path: UpdatePath {
            leaf_node: leaf,
            nodes,
        },
        secrets,
        keypairs,
        commit_secret: ks::path_step(crypto, &ps),
    })
}

/// Places an external joiner, after removing its earlier leaf if requested.
fn external_placement(
    tree: &RatchetTree,
    join_order: &[LeafIndex],
    joiner: &LeafNode,
    resync_remove: Option<LeafIndex>,
) -> Result<(RatchetTree, Vec<LeafIndex>, LeafIndex)> {
    let mut tree = tree.clone();
    let mut join_order = join_order.to_vec();
    if let Some(r) = resync_remove {
        let old = tree.leaf(r).ok_or(CgkaError::NoSuchMember(r))?;
        if old.identity != joiner.identity {
            return Err(invalid("resync removes a different member"));
        }
        tree.blank_leaf(r);
        join_order.retain(|x| *x != r);
    }
    if tree.find_identity(&joiner.identity).is_some() {
        return Err(invalid("external joiner is already a member"));
    }
    let leaf = tree.add_leaf(joiner.clone());
    join_order.push(leaf);
    Ok((tree, join_order, leaf))
}

/// Checks a GroupInfo received from outside the group.
fn verify_group_info(crypto: &dyn CryptoProvider, gi: &GroupInfo) -> Result<()> {
    gi.tree.validate(crypto)?;
    if gi.tree.tree_hash(crypto) != gi.context.tree_hash {
        return Err(CgkaError::BadGroupInfo("tree hash mismatch".into()));
    }
    let signer = gi
        .tree
        .leaf(gi.signer)
        .ok_or_else(|| CgkaError::BadGroupInfo("signer is not a member".into()))?;
    if !crypto.verify(&signer.signature_key, &gi.tbs(), &gi.signature) {
        return Err(CgkaError::BadGroupInfo("signature does not verify".into()));
    }
    let occupied: BTreeSet<LeafIndex> = gi.tree.leaves().map(|(l, _)| l).collect();
    let listed: BTreeSet<LeafIndex> = gi.join_order.iter().copied().collect();
    if occupied != listed || listed.len() != gi.join_order.len() {
        return Err(CgkaError::BadGroupInfo("join order does not match the tree".into()));
    }
    Ok(())
}

impl GroupState {
    /// Creates a one-member group at epoch 0.
    pub fn create(
        crypto: Arc<dyn CryptoProvider>,
        rng: &mut dyn RngCore,
        group_id: &str,
        identity: MemberIdentity,
        config: GroupConfig,
    ) -> GroupState {
        let c = crypto.as_ref();
        let leaf_kp = c.kem_generate(rng);
        let leaf = LeafNode::new_signed(
            c,
            &identity.name,
            &identity.signer.public_key,
            &identity.signer.private_key,
            leaf_kp.public_key.clone(),
        );
        let tree = RatchetTree::new_single(leaf);
        let context = GroupContext {
            group_id: group_id.to_string(),
            epoch: 0,
            tree_hash: tree.tree_hash(c),
            confirmed_transcript_hash: Vec::new(),
            external_joins: config.external_joins,
        };
        let secrets = EpochSecrets::from_epoch_secret(c, c.random_secret(rng));
        let confirmation_tag = c.mac(&secrets.confirmation_key, &context.confirmed_transcript_hash);
        let interim = ks::interim_transcript_hash(c, &context.confirmed_transcript_hash, &confirmation_tag);
        let mut private_keys = BTreeMap::new();
        private_keys.insert(NodeIndex(0), leaf_kp);
        GroupState {
            crypto,
            identity,
            context,
            tree,
            my_leaf: LeafIndex(0),
            private_keys,
            secrets,
            interim_transcript_hash: interim,
            confirmation_tag,
            join_order: vec![LeafIndex(0)],
            pending_updates: BTreeMap::new(),
            app_generation: 0,
        }
    }

    pub fn crypto(&self) -> &Arc<dyn CryptoProvider> {
        &self.crypto
    }

    pub fn identity(&self) -> &MemberIdentity {
        &self.identity
    }

    pub fn group_id(&self) -> &str {
        &self.context.group_id
    }

    pub fn epoch(&self) -> u64 {
        self.context.epoch
    }

    pub fn context(&self) -> &GroupContext {
        &self.context
    }

    pub fn tree(&self) -> &RatchetTree {
        &self.tree
    }

    pub fn my_leaf(&self) -> LeafIndex {
        self.my_leaf
    }

    pub fn epoch_secret(&self) -> &Secret {
        &self.secrets.epoch_secret
    }

    pub fn init_secret(&self) -> &Secret {
        &self.secrets.init_secret
    }

    pub fn external_public_key(&self) -> &[u8] {
        &self.secrets.external_keypair.public_key
    }

    pub fn confirmed_transcript_hash(&self) -> &[u8] {
        &self.context.confirmed_transcript_hash
    }

    /// Occupied leaves, oldest member first.
    pub fn join_order(&self) -> &[LeafIndex] {
        &self.join_order
    }

    pub fn member_count(&self) -> usize {
        self.tree.member_count()
    }

    pub fn member_identity(&self, leaf: LeafIndex) -> Option<&str> {
        self.tree.leaf(leaf).map(|l| l.identity.as_str())
    }

    pub fn find_member(&self, identity: &str) -> Option<LeafIndex> {
        self.tree.find_identity(identity)
    }

    fn frame(&self, content: Content) -> HandshakeMessage {
        let c = self.crypto.as_ref();
        let sender = Sender::Member(self.my_leaf);
        let tbs = HandshakeMessage::tbs(&self.context.group_id, self.context.epoch, &sender, &content);
        let mut msg = HandshakeMessage {
            group_id: self.context.group_id.clone(),
            epoch: self.context.epoch,
            sender,
            content,
            signature: c.sign(&self.identity.signer.private_key, &tbs),
            confirmation_tag: None,
            membership_tag: None,
        };
        msg.membership_tag = Some(c.mac(&self.secrets.membership_key, &msg.membership_input()));
        msg
    }

    fn check_modification(&self, m: &Modification) -> Result<()> {
        match m {
            Modification::Add(kp) if !kp.verify(self.crypto.as_ref()) => Err(CgkaError::InvalidKeyPackage),
            Modification::Remove(t) if *t == self.my_leaf => Err(CgkaError::SelfRemoveUnsupported),
            Modification::Remove(t) if self.tree.leaf(*t).is_none() => Err(CgkaError::NoSuchMember(*t)),
            _ => Ok(()),
        }
    }

    /// Frames and authenticates a proposal. Only an Update touches local
    /// state, to remember the private key of the proposed leaf.
    pub fn propose(&mut self, rng: &mut dyn RngCore, m: Modification) -> Result<HandshakeMessage> {
        self.check_modification(&m)?;
        let kind = match m {
            Modification::Add(kp) => ProposalKind::Add(kp),
            Modification::Remove(t) => ProposalKind::Remove(t),
            Modification::Update => {
                let c = self.crypto.as_ref();
                let kp = c.kem_generate(rng);
                let leaf = LeafNode::new_signed(
                    c,
                    &self.identity.name,
                    &self.identity.signer.public_key,
                    &self.identity.signer.private_key,
                    kp.public_key.clone(),
                );
                self.pending_updates.insert(kp.public_key, kp.private_key);
                ProposalKind::Update(leaf)
            }
        };
        Ok(self.frame(Content::Proposal(kind)))
    }

    fn verify_framed<'a>(&self, msg: &'a HandshakeMessage) -> Result<(LeafIndex, &'a ProposalKind)> {
        if msg.group_id != self.context.group_id {
            return Err(CgkaError::WrongGroup);
        }
        if msg.epoch != self.context.epoch {
            return Err(CgkaError::StaleProposal {
                expected: self.context.epoch,
                found: msg.epoch,
            });
        }
        let Content::Proposal(kind) = &msg.content else {
            return Err(invalid("commit where a proposal was expected"));
        };
        let Sender::Member(proposer) = msg.sender else {
            return Err(invalid("proposal from a non-member"));
        };
        let leaf = self.tree.leaf(proposer).ok_or(CgkaError::NoSuchMember(proposer))?;
        let c = self.crypto.as_ref();
        if !c.verify(&leaf.signature_key, &msg.own_tbs(), &msg.signature) {
            return Err(CgkaError::BadSignature);
        }
        let tag = msg.membership_tag.as_ref().ok_or(CgkaError::BadMembershipTag)?;
        if c.mac(&self.secrets.membership_key, &msg.membership_input()) != *tag {
            return Err(CgkaError::BadMembershipTag);
        }
        Ok((proposer, kind))
    }

    /// Authenticates a proposal received from another member.
    pub fn verify_proposal(&self, msg: &HandshakeMessage) -> Result<()> {
        self.verify_framed(msg).map(|_| ())
    }

    fn collect_proposals<'a>(
        &self,
        proposals: &'a [CommitProposal],
        committer: LeafIndex,
    ) -> Result<Vec<(LeafIndex, &'a ProposalKind)>> {
        proposals
            .iter()
            .map(|p| match p {
                CommitProposal::Framed(m) => self.verify_framed(m),
                CommitProposal::Inline(ProposalKind::Update(_)) => Err(invalid("inline update")),
                CommitProposal::Inline(k) => Ok((committer, k)),
            })
            .collect()
    }

    fn apply_proposals(&self, list: &[(LeafIndex, &ProposalKind)], committer: LeafIndex) -> Result<Applied> {
        let c = self.crypto.as_ref();
        let mut updated = Vec::new();
        let mut removed = Vec::new();
        let mut adds = Vec::new();
        let mut updaters = BTreeSet::new();
        for (proposer, kind) in list {
            if let ProposalKind::Update(leaf) = kind {
                if *proposer == committer {
                    // Superseded by the committer's update path.
                    continue;
                }
                if !updaters.insert(*proposer) {
                    return Err(invalid("two updates from one member"));
                }
                let old = self.tree.leaf(*proposer).ok_or(CgkaError::NoSuchMember(*proposer))?;
                if leaf.identity != old.identity || leaf.signature_key != old.signature_key {
                    return Err(invalid("update changes the member's identity"));
                }
                if !leaf.verify(c) {
                    return Err(CgkaError::BadSignature);
                }
                updated.push((*proposer, leaf.clone()));
            }
        }
        for (proposer, kind) in list {
            if let ProposalKind::Remove(target) = kind {
                if *target == committer || target == proposer {
                    return Err(CgkaError::SelfRemoveUnsupported);
                }
                if self.tree.leaf(*target).is_none() {
                    return Err(CgkaError::NoSuchMember(*target));
                }
                if removed.contains(target) {
                    return Err(invalid("duplicate remove"));
                }
                if updaters.contains(target) {
                    return Err(invalid("remove of a member with an update"));
                }
                removed.push(*target);
            }
        }
        for (_, kind) in list {
            if let ProposalKind::Add(kp) = kind {
                if !kp.verify(c) {
                    return Err(CgkaError::InvalidKeyPackage);
                }
                adds.push(kp);
            }
        }

        let mut tree = self.tree.clone();
        let mut join_order = self.join_order.clone();
        for (l, leaf) in &updated {
            tree.set_leaf(*l, leaf.clone());
            tree.blank_direct_path(*l);
        }
        for r in &removed {
            tree.blank_leaf(*r);
            join_order.retain(|x| x != r);
        }
        let mut added = Vec::with_capacity(adds.len());
        for kp in adds {
            if tree.find_identity(&kp.leaf_node.identity).is_some() {
                return Err(invalid("add of a current member"));
            }
            let l = tree.add_leaf(kp.leaf_node.clone());
            join_order.push(l);
            added.push((l, kp.clone()));
        }
        Ok(Applied {
            tree,
            join_order,
            added,
            removed,
            updated,
        })
    }

    /// Greedy subset of `proposals`, in order, that this member can commit
    /// together: invalid, stale and conflicting proposals are dropped.
    pub fn filter_committable(&self, proposals: &[HandshakeMessage]) -> Vec<HandshakeMessage> {
        let mut kept: Vec<HandshakeMessage> = Vec::new();
        for p in proposals {
            if self.verify_framed(p).is_err() {
                continue;
            }
            let mut trial: Vec<CommitProposal> = kept.iter().cloned().map(CommitProposal::Framed).collect();
            trial.push(CommitProposal::Framed(p.clone()));
            let ok = self
                .collect_proposals(&trial, self.my_leaf)
                .and_then(|list| self.apply_proposals(&list, self.my_leaf))
                .is_ok();
            if ok {
                kept.push(p.clone());
            }
        }
        kept
    }

    /// Commits the given framed proposals plus the committer's own inline
    /// modifications. Every commit carries an update path.
    pub fn create_commit(
        &self,
        rng: &mut dyn RngCore,
        framed: &[HandshakeMessage],
        inline: &[ProposalKind],
    ) -> Result<CommitBundle> {
        let c = self.crypto.as_ref();
        let mut proposals: Vec<CommitProposal> = framed.iter().cloned().map(CommitProposal::Framed).collect();
        proposals.extend(inline.iter().cloned().map(CommitProposal::Inline));
        let list = self.collect_proposals(&proposals, self.my_leaf)?;
        let applied = self.apply_proposals(&list, self.my_leaf)?;
        let exclude: BTreeSet<NodeIndex> = applied.added.iter().map(|(l, _)| l.node()).collect();

        let mut tree = applied.tree;
        let aad = path_aad(&self.context.group_id, self.context.epoch, self.my_leaf);
        let out = make_path(c, rng, &mut tree, self.my_leaf, &self.identity, &exclude, &aad)?;

        let content = Content::Commit(Commit {
            proposals,
            external: None,
            path: out.path,
        });
        let sender = Sender::Member(self.my_leaf);
        let tbs = HandshakeMessage::tbs(&self.context.group_id, self.context.epoch, &sender, &content);
        let signature = c.sign(&self.identity.signer.private_key, &tbs);

        let context = GroupContext {
            group_id: self.context.group_id.clone(),
            epoch: self.context.epoch + 1,
            tree_hash: tree.tree_hash(c),
            confirmed_transcript_hash: ks::confirmed_transcript_hash(c, &self.interim_transcript_hash, &tbs, &signature),
            external_joins: self.context.external_joins,
        };
        let joiner = ks::joiner_secret(c, &self.secrets.init_secret, &out.commit_secret);
        let secrets = EpochSecrets::from_epoch_secret(c, ks::epoch_secret(c, &joiner, &context));
        let confirmation_tag = c.mac(&secrets.confirmation_key, &context.confirmed_transcript_hash);

        let mut commit = HandshakeMessage {
            group_id: self.context.group_id.clone(),
            epoch: self.context.epoch,
            sender,
            content,
            signature,
            confirmation_tag: Some(confirmation_tag.clone()),
            membership_tag: None,
        };
        commit.membership_tag = Some(c.mac(&self.secrets.membership_key, &commit.membership_input()));

        let mut next = GroupState {
            crypto: self.crypto.clone(),
            identity: self.identity.clone(),
            interim_transcript_hash: ks::interim_transcript_hash(c, &context.confirmed_transcript_hash, &confirmation_tag),
            context,
            tree,
            my_leaf: self.my_leaf,
            private_keys: out.keypairs.into_iter().collect(),
            secrets,
            confirmation_tag,
            join_order: applied.join_order,
            pending_updates: BTreeMap::new(),
            app_generation: 0,
        };
        next.prune_private_keys();
        let group_info = next.export_group_info();

        let mut welcomes = Vec::with_capacity(applied.added.len());
        if !applied.added.is_empty() {
            let encrypted_group_info = c.aead_seal(
                &ks::welcome_key(c, &joiner),
                &[0u8; NONCE_LEN],
                b"welcome",
                &codec::to_bytes(&group_info),
            );
            for (leaf, kp) in &applied.added {
                let lca = treemath::common_ancestor(self.my_leaf.node(), leaf.node());
                let path_secret = out
                    .secrets
                    .iter()
                    .find(|(x, _)| *x == lca)
                    .map(|(x, s)| (*x, s.as_bytes().to_vec()));
                let gs = GroupSecrets {
                    joiner_secret: joiner.as_bytes().to_vec(),
                    path_secret,
                };
                let kp_ref = kp.reference(c);
                let enc = hpke_seal(c, &kp.init_key, b"welcome", &kp_ref, &codec::to_bytes(&gs), rng)?;
                welcomes.push((
                    kp.leaf_node.identity.clone(),
                    Welcome {
                        key_package_ref: kp_ref,
                        encrypted_group_secrets: enc,
                        encrypted_group_info: encrypted_group_info.clone(),
                    },
                ));
            }
        }

        let commit_ref = c.hash(&codec::encode(&commit));
        Ok(CommitBundle {
            pending: PendingCommit {
                commit_ref,
                from_epoch: self.context.epoch,
                state: Box::new(next),
            },
            commit,
            welcomes,
            group_info,
        })
    }

    /// Commits local modifications directly, without separate proposals.
    /// A lone `Update` produces an empty commit whose path refreshes the
    /// committer's leaf.
    pub fn commit_modifications(&self, rng: &mut dyn RngCore, mods: &[Modification]) -> Result<CommitBundle> {
        let mut inline = Vec::new();
        for m in mods {
            self.check_modification(m)?;
            match m {
                Modification::Add(kp) => inline.push(ProposalKind::Add(kp.clone())),
                Modification::Remove(t) => inline.push(ProposalKind::Remove(*t)),
                Modification::Update if mods.len() == 1 => {}
                Modification::Update => return Err(invalid("update combined with other changes")),
            }
        }
        self.create_commit(rng, &[], &inline)
    }

    fn prune_private_keys(&mut self) {
        let mut keep: BTreeSet<NodeIndex> = self.tree.direct_path(self.my_leaf).into_iter().collect();
        keep.insert(self.my_leaf.node());
        let tree = &self.tree;
        self.private_keys.retain(|x, kp| {
            keep.contains(x) && tree.node(*x).map(|n| n.encryption_key()) == Some(kp.public_key.as_slice())
        });
    }

    /// Applies the committer's update path to `tree` and recovers the commit
    /// secret from the one ciphertext addressed to a key this member holds.
    #[allow(clippy::too_many_arguments)]
    fn apply_path(
        &self,
        tree: &mut RatchetTree,
        committer: LeafIndex,
        path: &UpdatePath,
        exclude: &BTreeSet<NodeIndex>,
        aad: &[u8],
        my_keys: &BTreeMap<NodeIndex, KemKeyPair>,
    ) -> Result<(Secret, Vec<(NodeIndex, KemKeyPair)>)> {
        let c = self.crypto.as_ref();
        tree.set_leaf(committer, path.leaf_node.clone());
        tree.blank_direct_path(committer);
        let fdp = tree.filtered_direct_path(committer);
        if fdp.len() != path.nodes.len() {
            return Err(CgkaError::MalformedPath(format!(
                "{} path nodes for a filtered direct path of {}",
                path.nodes.len(),
                fdp.len()
            )));
        }
        let mut targets = Vec::with_capacity(fdp.len());
        for ((_, cop), node) in fdp.iter().zip(&path.nodes) {
            let t: Vec<NodeIndex> = tree
                .resolution(*cop)
                .into_iter()
                .filter(|r| !exclude.contains(r))
                .collect();
            if t.len() != node.encrypted_path_secrets.len() {
                return Err(CgkaError::MalformedPath("ciphertext count mismatch".into()));
            }
            targets.push(t);
        }
        let me = self.my_leaf.node();
        let pos = fdp
            .iter()
            .position(|(_, cop)| *cop == me || treemath::is_ancestor(*cop, me))
            .ok_or_else(|| CgkaError::MalformedPath("receiver is not below the committer's path".into()))?;
        let holds = |r: &NodeIndex| {
            my_keys.get(r).is_some_and(|kp| {
                tree.node(*r).map(|n| n.encryption_key()) == Some(kp.public_key.as_slice())
            })
        };
        let j = targets[pos].iter().position(holds).ok_or(CgkaError::UnableToDecrypt)?;
        let kp = &my_keys[&targets[pos][j]];
        let ps = hpke_open(c, &kp.private_key, b"path secret", aad, &path.nodes[pos].encrypted_path_secrets[j])
            .map_err(|_| CgkaError::UnableToDecrypt)?;
        let mut ps = Secret::from_bytes(ps);
        let mut keys = Vec::new();
        for i in pos..fdp.len() {
            if i > pos {
                ps = ks::path_step(c, &ps);
            }
            let kp = ks::node_keypair(c, &ps);
            if kp.public_key != path.nodes[i].encryption_key {
                return Err(CgkaError::MalformedPath("path secret does not match the public key".into()));
            }
            keys.push((fdp[i].0, kp));
        }
        for ((x, _), node) in fdp.iter().zip(&path.nodes) {
            tree.set_node(
                *x,
                Some(Node::Parent(ParentNode {
                    encryption_key: node.encryption_key.clone(),
                })),
            );
        }
        Ok((ks::path_step(c, &ps), keys))
    }

    /// Processes a commit from another member or an external joiner and
    /// returns the state for the next epoch.
    pub fn process_commit(&self, msg: &HandshakeMessage) -> Result<GroupState> {
        let c = self.crypto.as_ref();
        if msg.group_id != self.context.group_id {
            return Err(CgkaError::WrongGroup);
        }
        if msg.epoch != self.context.epoch {
            return Err(CgkaError::WrongEpoch {
                expected: self.context.epoch,
                found: msg.epoch,
            });
        }
        let commit = msg.commit().ok_or_else(|| invalid("expected a commit"))?;
        let confirmation_tag = msg.confirmation_tag.as_ref().ok_or(CgkaError::BadConfirmationTag)?;
        let path = &commit.path;

        let (committer, applied, init_secret) = match msg.sender {
            Sender::Member(l) => {
                if l == self.my_leaf {
                    return Err(CgkaError::OwnCommit);
                }
                let leaf = self.tree.leaf(l).ok_or(CgkaError::NoSuchMember(l))?;
                if !c.verify(&leaf.signature_key, &msg.own_tbs(), &msg.signature) {
                    return Err(CgkaError::BadSignature);
                }
                let tag = msg.membership_tag.as_ref().ok_or(CgkaError::BadMembershipTag)?;
                if c.mac(&self.secrets.membership_key, &msg.membership_input()) != *tag {
                    return Err(CgkaError::BadMembershipTag);
                }
                if commit.external.is_some() {
                    return Err(invalid("external init in a member commit"));
                }
                if path.leaf_node.identity != leaf.identity || path.leaf_node.signature_key != leaf.signature_key {
                    return Err(CgkaError::MalformedPath("committer leaf changes identity".into()));
                }
                let list = self.collect_proposals(&commit.proposals, l)?;
                let applied = self.apply_proposals(&list, l)?;
                (l, applied, self.secrets.init_secret.clone())
            }
            Sender::NewMember => {
                if !self.context.external_joins {
                    return Err(CgkaError::ExternalJoinsDisabled);
                }
                let ext = commit.external.as_ref().ok_or_else(|| invalid("external commit without init"))?;
                if !commit.proposals.is_empty() || msg.membership_tag.is_some() {
                    return Err(invalid("external commits carry no proposals or membership tag"));
                }
                if !c.verify(&path.leaf_node.signature_key, &msg.own_tbs(), &msg.signature) {
                    return Err(CgkaError::BadSignature);
                }
                let (tree, join_order, leaf) =
                    external_placement(&self.tree, &self.join_order, &path.leaf_node, ext.resync_remove)?;
                let init = c.kem_decap(&self.secrets.external_keypair.private_key, &ext.kem_output)?;
                let applied = Applied {
                    tree,
                    join_order,
                    added: Vec::new(),
                    removed: ext.resync_remove.into_iter().collect(),
                    updated: Vec::new(),
                };
                (leaf, applied, init)
            }
        };
        if applied.removed.contains(&self.my_leaf) {
            return Err(CgkaError::Evicted);
        }
        if !path.leaf_node.verify(c) {
            return Err(CgkaError::BadSignature);
        }

        let mut my_keys = self.private_keys.clone();
        if let Some((_, leaf)) = applied.updated.iter().find(|(l, _)| *l == self.my_leaf) {
            let private = self
                .pending_updates
                .get(&leaf.encryption_key)
                .ok_or(CgkaError::UnableToDecrypt)?;
            my_keys.insert(
                self.my_leaf.node(),
                KemKeyPair {
                    public_key: leaf.encryption_key.clone(),
                    private_key: private.clone(),
                },
            );
        }
        let exclude: BTreeSet<NodeIndex> = applied.added.iter().map(|(l, _)| l.node()).collect();
        let mut tree = applied.tree;
        let aad = path_aad(&self.context.group_id, self.context.epoch, committer);
        let (commit_secret, new_keys) = self.apply_path(&mut tree, committer, path, &exclude, &aad, &my_keys)?;

        let context = GroupContext {
            group_id: self.context.group_id.clone(),
            epoch: self.context.epoch + 1,
            tree_hash: tree.tree_hash(c),
            confirmed_transcript_hash: ks::confirmed_transcript_hash(
                c,
                &self.interim_transcript_hash,
                &msg.own_tbs(),
                &msg.signature,
            ),
            external_joins: self.context.external_joins,
        };
        let joiner = ks::joiner_secret(c, &init_secret, &commit_secret);
        let secrets = EpochSecrets::from_epoch_secret(c, ks::epoch_secret(c, &joiner, &context));
        if c.mac(&secrets.confirmation_key, &context.confirmed_transcript_hash) != *confirmation_tag {
            return Err(CgkaError::BadConfirmationTag);
        }
        my_keys.extend(new_keys);
        let mut next = GroupState {
            crypto: self.crypto.clone(),
            identity: self.identity.clone(),
            interim_transcript_hash: ks::interim_transcript_hash(c, &context.confirmed_transcript_hash, confirmation_tag),
            context,
            tree,
            my_leaf: self.my_leaf,
            private_keys: my_keys,
            secrets,
            confirmation_tag: confirmation_tag.clone(),
            join_order: applied.join_order,
            pending_updates: BTreeMap::new(),
            app_generation: 0,
        };
        next.prune_private_keys();
        Ok(next)
    }

    /// Applies this member's own commit once it is confirmed as the winner.
    pub fn merge_pending(&self, pending: PendingCommit, confirmed: &HandshakeMessage) -> Result<GroupState> {
        if pending.from_epoch != self.context.epoch || confirmed.group_id != self.context.group_id {
            return Err(CgkaError::PendingMismatch);
        }
        pending.confirm(confirmed)
    }

    /// Joins through a Welcome produced by a commit that added `kp_secrets`'s package.
    pub fn from_welcome(
        crypto: Arc<dyn CryptoProvider>,
        welcome: &Welcome,
        kp_secrets: &KeyPackageSecrets,
        identity: MemberIdentity,
    ) -> Result<GroupState> {
        let c = crypto.as_ref();
        if welcome.key_package_ref != kp_secrets.reference {
            return Err(CgkaError::NotForMe);
        }
        let gs = hpke_open(
            c,
            &kp_secrets.init_private,
            b"welcome",
            &kp_secrets.reference,
            &welcome.encrypted_group_secrets,
        )?;
        let gs: GroupSecrets = codec::from_bytes(&gs)?;
        let joiner = Secret::from_bytes(gs.joiner_secret);
        let gi = c.aead_open(
            &ks::welcome_key(c, &joiner),
            &[0u8; NONCE_LEN],
            b"welcome",
            &welcome.encrypted_group_info,
        )?;
        let gi: GroupInfo = codec::from_bytes(&gi)?;
        verify_group_info(c, &gi)?;
        let my_leaf = gi
            .tree
            .leaves()
            .find(|(_, l)| l.identity == identity.name && l.encryption_key == kp_secrets.leaf_public)
            .map(|(i, _)| i)
            .ok_or(CgkaError::NotForMe)?;
        let secrets = EpochSecrets::from_epoch_secret(c, ks::epoch_secret(c, &joiner, &gi.context));
        if c.mac(&secrets.confirmation_key, &gi.context.confirmed_transcript_hash) != gi.confirmation_tag {
            return Err(CgkaError::BadConfirmationTag);
        }

        let mut private_keys = BTreeMap::new();
        private_keys.insert(
            my_leaf.node(),
            KemKeyPair {
                public_key: kp_secrets.leaf_public.clone(),
                private_key: kp_secrets.leaf_private.clone(),
            },
        );
        if let Some((x, ps)) = gs.path_secret {
            if !treemath::is_ancestor(x, my_leaf.node()) {
                return Err(CgkaError::BadTree("path secret for a node above another member".into()));
            }
            let fdp = gi.tree.filtered_direct_path(gi.signer);
            let start = fdp
                .iter()
                .position(|(n, _)| *n == x)
                .ok_or_else(|| CgkaError::BadTree("path secret off the committer's path".into()))?;
            let mut ps = Secret::from_bytes(ps);
            for (i, (node, _)) in fdp.iter().enumerate().skip(start) {
                if i > start {
                    ps = ks::path_step(c, &ps);
                }
                let kp = ks::node_keypair(c, &ps);
                if gi.tree.node(*node).map(|n| n.encryption_key()) != Some(kp.public_key.as_slice()) {
                    return Err(CgkaError::BadTree("path secret does not match the tree".into()));
                }
                private_keys.insert(*node, kp);
            }
        }

        let mut state = GroupState {
            crypto: crypto.clone(),
            identity,
            interim_transcript_hash: ks::interim_transcript_hash(
                c,
                &gi.context.confirmed_transcript_hash,
                &gi.confirmation_tag,
            ),
            context: gi.context,
            tree: gi.tree,
            my_leaf,
            private_keys,
            secrets,
            confirmation_tag: gi.confirmation_tag,
            join_order: gi.join_order,
            pending_updates: BTreeMap::new(),
            app_generation: 0,
        };
        state.prune_private_keys();
        Ok(state)
    }

    /// Signed snapshot of the current epoch for external joiners.
    pub fn export_group_info(&self) -> GroupInfo {
        let mut gi = GroupInfo {
            context: self.context.clone(),
            tree: self.tree.clone(),
            join_order: self.join_order.clone(),
            external_pub: self.secrets.external_keypair.public_key.clone(),
            confirmation_tag: self.confirmation_tag.clone(),
            signer: self.my_leaf,
            signature: Vec::new(),
        };
        gi.signature = self.crypto.sign(&self.identity.signer.private_key, &gi.tbs());
        gi
    }

    /// Builds an external commit from a published GroupInfo. With `resync`,
    /// an existing leaf of the same identity is removed by the join.
    pub fn join_external(
        crypto: Arc<dyn CryptoProvider>,
        rng: &mut dyn RngCore,
        gi: &GroupInfo,
        identity: MemberIdentity,
        resync: bool,
    ) -> Result<(HandshakeMessage, PendingCommit)> {
        let c = crypto.as_ref();
        verify_group_info(c, gi)?;
        if !gi.context.external_joins {
            return Err(CgkaError::ExternalJoinsDisabled);
        }
        let (kem_output, init_secret) = c.kem_encap(&gi.external_pub, rng)?;
        let resync_remove = if resync {
            gi.tree.find_identity(&identity.name)
        } else {
            None
        };
        let placeholder = LeafNode {
            identity: identity.name.clone(),
            signature_key: identity.signer.public_key.clone(),
            encryption_key: Vec::new(),
            credential: Vec::new(),
            signature: Vec::new(),
        };
        let (mut tree, join_order, my_leaf) = external_placement(&gi.tree, &gi.join_order, &placeholder, resync_remove)?;
        let aad = path_aad(&gi.context.group_id, gi.context.epoch, my_leaf);
        let out = make_path(c, rng, &mut tree, my_leaf, &identity, &BTreeSet::new(), &aad)?;

        let content = Content::Commit(Commit {
            proposals: Vec::new(),
            external: Some(ExternalInit {
                kem_output,
                resync_remove,
            }),
            path: out.path,
        });
        let sender = Sender::NewMember;
        let tbs = HandshakeMessage::tbs(&gi.context.group_id, gi.context.epoch, &sender, &content);
        let signature = c.sign(&identity.signer.private_key, &tbs);
        let interim = ks::interim_transcript_hash(c, &gi.context.confirmed_transcript_hash, &gi.confirmation_tag);
        let context = GroupContext {
            group_id: gi.context.group_id.clone(),
            epoch: gi.context.epoch + 1,
            tree_hash: tree.tree_hash(c),
            confirmed_transcript_hash: ks::confirmed_transcript_hash(c, &interim, &tbs, &signature),
            external_joins: gi.context.external_joins,
        };
        let joiner = ks::joiner_secret(c, &init_secret, &out.commit_secret);
        let secrets = EpochSecrets::from_epoch_secret(c, ks::epoch_secret(c, &joiner, &context));
        let confirmation_tag = c.mac(&secrets.confirmation_key, &context.confirmed_transcript_hash);
        let msg = HandshakeMessage {
            group_id: gi.context.group_id.clone(),
            epoch: gi.context.epoch,
            sender,
            content,
            signature,
            confirmation_tag: Some(confirmation_tag.clone()),
            membership_tag: None,
        };
        let mut state = GroupState {
            crypto: crypto.clone(),
            identity,
            interim_transcript_hash: ks::interim_transcript_hash(c, &context.confirmed_transcript_hash, &confirmation_tag),
            context,
            tree,
            my_leaf,
            private_keys: out.keypairs.into_iter().collect(),
            secrets,
            confirmation_tag,
            join_order,
            pending_updates: BTreeMap::new(),
            app_generation: 0,
        };
        state.prune_private_keys();
        let pending = PendingCommit {
            commit_ref: c.hash(&codec::encode(&msg)),
            from_epoch: gi.context.epoch,
            state: Box::new(state),
        };
        Ok((msg, pending))
    }

    fn application_aad(group_id: &str, epoch: u64, sender: LeafIndex, generation: u32) -> Vec<u8> {
        codec::to_bytes(&("application", group_id, epoch, sender, generation))
    }

    fn application_key(crypto: &dyn CryptoProvider, secret: &Secret, sender: LeafIndex, generation: u32) -> Secret {
        crypto.kdf_derive(secret, "application", &codec::to_bytes(&(sender, generation)))
    }

    pub fn seal_application(&mut self, body: &[u8]) -> ApplicationMessage {
        let c = self.crypto.as_ref();
        let generation = self.app_generation;
        self.app_generation += 1;
        let aad = Self::application_aad(&self.context.group_id, self.context.epoch, self.my_leaf, generation);
        let mut signed = aad.clone();
        signed.extend_from_slice(body);
        let signature = c.sign(&self.identity.signer.private_key, &signed);
        let key = Self::application_key(c, &self.secrets.application_secret, self.my_leaf, generation);
        let plaintext = codec::to_bytes(&(body, signature));
        ApplicationMessage {
            group_id: self.context.group_id.clone(),
            epoch: self.context.epoch,
            sender: self.my_leaf,
            generation,
            ciphertext: c.aead_seal(&key, &[0u8; NONCE_LEN], &aad, &plaintext),
        }
    }

    /// Decrypts and authenticates an application message of the current epoch.
    pub fn open_application(&self, msg: &ApplicationMessage) -> Result<(LeafIndex, Vec<u8>)> {
        if msg.group_id != self.context.group_id {
            return Err(CgkaError::WrongGroup);
        }
        if msg.epoch != self.context.epoch {
            return Err(CgkaError::WrongEpoch {
                expected: self.context.epoch,
                found: msg.epoch,
            });
        }
        let c = self.crypto.as_ref();
        let body = open_application_with(c, &self.secrets.application_secret, msg)?;
        let (body, signature): (Vec<u8>, Vec<u8>) = codec::from_bytes(&body)?;
        let leaf = self.tree.leaf(msg.sender).ok_or(CgkaError::NoSuchMember(msg.sender))?;
        let mut signed = Self::application_aad(&msg.group_id, msg.epoch, msg.sender, msg.generation);
        signed.extend_from_slice(&body);
        if !c.verify(&leaf.signature_key, &signed, &signature) {
            return Err(CgkaError::BadSignature);
        }
        Ok((msg.sender, body))
    }
}

/// Raw AEAD open of an application message under a given application
/// secret, without epoch or sender checks.
pub(crate) fn open_application_with(
    crypto: &dyn CryptoProvider,
    application_secret: &Secret,
    msg: &ApplicationMessage,
) -> Result<Vec<u8>> {
    let key = GroupState::application_key(crypto, application_secret, msg.sender, msg.generation);
    let aad = GroupState::application_aad(&msg.group_id, msg.epoch, msg.sender, msg.generation);
    Ok(crypto.aead_open(&key, &[0u8; NONCE_LEN], &aad, &msg.ciphertext)?)
}

#[doc(hidden)]
impl GroupState {
    /// Every private KEM key this member currently holds.
    pub fn held_private_keys(&self) -> Vec<Vec<u8>> {
        self.private_keys.values().map(|kp| kp.private_key.clone()).collect()
    }

    pub fn held_private_nodes(&self) -> Vec<NodeIndex> {
        self.private_keys.keys().copied().collect()
    }

    pub fn application_secret(&self) -> &Secret {
        &self.secrets.application_secret
    }

    pub fn pending_update_keys(&self) -> Vec<Vec<u8>> {
        self.pending_updates.values().cloned().collect()
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        crypto: Arc<dyn CryptoProvider>,
        identity: MemberIdentity,
        tree: RatchetTree,
        my_leaf: LeafIndex,
        private_keys: BTreeMap<NodeIndex, KemKeyPair>,
        epoch_secret: Secret,
        group_id: &str,
    ) -> GroupState {
        let c = crypto.as_ref();
        let context = GroupContext {
            group_id: group_id.to_string(),
            epoch: 0,
            tree_hash: tree.tree_hash(c),
            confirmed_transcript_hash: Vec::new(),
            external_joins: true,
        };
        let secrets = EpochSecrets::from_epoch_secret(c, epoch_secret);
        let confirmation_tag = c.mac(&secrets.confirmation_key, &context.confirmed_transcript_hash);
        let join_order = tree.leaves().map(|(l, _)| l).collect();
        GroupState {
            interim_transcript_hash: ks::interim_transcript_hash(c, &context.confirmed_transcript_hash, &confirmation_tag),
            crypto,
            identity,
            context,
            tree,
            my_leaf,
            private_keys,
            secrets,
            confirmation_tag,
            join_order,
            pending_updates: BTreeMap::new(),
            app_generation: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgka::testing;
    use crate::crypto::{RustCryptoProvider, ToyProvider};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy() -> Arc<dyn CryptoProvider> {
        Arc::new(ToyProvider)
    }

    fn ident(c: &dyn CryptoProvider, name: &str, rng: &mut ChaCha20Rng) -> MemberIdentity {
        MemberIdentity::generate(c, name, rng)
    }

    /// Applies `msg` to every member other than `committer`, which merges.
    fn everyone_applies(states: &mut Vec<GroupState>, committer: usize, bundle: CommitBundle) {
        let msg = bundle.commit;
        let mut next = Vec::new();
        for (i, s) in states.iter().enumerate() {
            if i == committer {
                continue;
            }
            match s.process_commit(&msg) {
                Ok(n) => next.push((i, n)),
                Err(CgkaError::Evicted) => {}
                Err(e) => panic!("member {i} failed: {e}"),
            }
        }
        let merged = states[committer].merge_pending(bundle.pending, &msg).unwrap();
        let mut out = vec![merged];
        out.extend(next.into_iter().map(|(_, s)| s));
        *states = out;
    }

    fn assert_consistent(states: &[GroupState]) {
        for s in &states[1..] {
            assert_eq!(s.epoch_secret(), states[0].epoch_secret());
            assert_eq!(s.tree(), states[0].tree());
            assert_eq!(s.context(), states[0].context());
        }
    }

    fn grow(crypto: Arc<dyn CryptoProvider>, n: usize, rng: &mut ChaCha20Rng) -> Vec<GroupState> {
        let c = crypto.as_ref();
        let creator = ident(c, "m0", rng);
        let mut states = vec![GroupState::create(crypto.clone(), rng, "g", creator, GroupConfig { external_joins: true })];
        for i in 1..n {
            let id = ident(c, &format!("m{i}"), rng);
            let (kp, secrets) = KeyPackage::generate(c, &id, rng);
            let bundle = states[0].commit_modifications(rng, &[Modification::Add(kp)]).unwrap();
            let welcome = bundle.welcomes[0].1.clone();
            everyone_applies(&mut states, 0, bundle);
            states.push(GroupState::from_welcome(crypto.clone(), &welcome, &secrets, id).unwrap());
            assert_consistent(&states);
        }
        states
    }

    #[test]
    fn create_group() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let c = toy();
        let id_a = ident(c.as_ref(), "a", &mut rng);
        let a = GroupState::create(c.clone(), &mut rng, "g", id_a, GroupConfig::default());
        assert_eq!((a.member_count(), a.epoch()), (1, 0));
        assert_eq!(a.export_group_info().tree.leaf_count(), 1);
        let mut rng2 = ChaCha20Rng::seed_from_u64(2);
        let id_b = ident(c.as_ref(), "a", &mut rng2);
        let b = GroupState::create(c.clone(), &mut rng2, "g", id_b, GroupConfig::default());
        assert_ne!(a.epoch_secret(), b.epoch_secret());
    }

    #[test]
    fn single_member_update_has_no_ciphertexts() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let c = toy();
        let id_a = ident(c.as_ref(), "a", &mut rng);
        let a = GroupState::create(c.clone(), &mut rng, "g", id_a, GroupConfig::default());
        let bundle = a.commit_modifications(&mut rng, &[Modification::Update]).unwrap();
        assert_eq!(bundle.commit.commit().unwrap().path.ciphertext_count(), 0);
        let a2 = a.merge_pending(bundle.pending, &bundle.commit).unwrap();
        assert_eq!(a2.epoch(), 1);
        assert_ne!(a2.epoch_secret(), a.epoch_secret());
    }

    #[test]
    fn invite_flow_and_sizes() {
        for crypto in [toy(), Arc::new(RustCryptoProvider) as Arc<dyn CryptoProvider>] {
            let mut rng = ChaCha20Rng::seed_from_u64(4);
            let states = grow(crypto.clone(), 8, &mut rng);
            assert_eq!(states[0].member_count(), 8);
            assert_eq!(states[0].epoch(), 7);
            let c = crypto.as_ref();
            let id = ident(c, "late", &mut rng);
            let (kp, _) = KeyPackage::generate(c, &id, &mut rng);
            let bundle = states[0].commit_modifications(&mut rng, &[Modification::Add(kp)]).unwrap();
            let commit_len = codec::encode(&bundle.commit).len();
            let welcome_len = codec::encode(&bundle.welcomes[0].1).len();
            assert!(welcome_len > commit_len);
        }
    }

    #[test]
    fn full_tree_commit_uses_one_ciphertext_per_copath_node() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut states = testing::group_from_labeling(toy(), &mut rng, 8, &[true; 8], &[true; 7]);
        let bundle = states[0].commit_modifications(&mut rng, &[Modification::Update]).unwrap();
        let path = &bundle.commit.commit().unwrap().path;
        assert_eq!(path.nodes.len(), 3);
        assert_eq!(path.ciphertext_count(), 3);
        everyone_applies(&mut states, 0, bundle);
        assert_eq!(states.len(), 8);
        assert_consistent(&states);
    }

    #[test]
    fn proposals_then_commit() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let crypto = toy();
        let c = crypto.as_ref();
        let mut states = grow(crypto.clone(), 3, &mut rng);
        let epoch = states[0].epoch();
        let mut props = Vec::new();
        let mut kps = Vec::new();
        for i in 0..4 {
            let id = ident(c, &format!("new{i}"), &mut rng);
            let (kp, sec) = KeyPackage::generate(c, &id, &mut rng);
            let proposer = i % 3;
            let p = states[proposer].propose(&mut rng, Modification::Add(kp)).unwrap();
            assert_eq!(codec::decode::<HandshakeMessage>(&codec::encode(&p)).unwrap(), p);
            props.push(p);
            kps.push((id, sec));
        }
        assert!(states.iter().all(|s| s.epoch() == epoch));
        let bundle = states[1].create_commit(&mut rng, &props, &[]).unwrap();
        assert_eq!(bundle.welcomes.len(), 4);
        let welcomes = bundle.welcomes.clone();
        everyone_applies(&mut states, 1, bundle);
        for ((_, w), (id, sec)) in welcomes.iter().zip(kps) {
            states.push(GroupState::from_welcome(crypto.clone(), w, &sec, id).unwrap());
        }
        assert_eq!(states[0].epoch(), epoch + 1);
        assert_eq!(states[0].member_count(), 7);
        assert_consistent(&states);
    }

    #[test]
    fn update_proposal_is_committed_by_another_member() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut states = grow(toy(), 5, &mut rng);
        let p = states[3].propose(&mut rng, Modification::Update).unwrap();
        let r = states[4].propose(&mut rng, Modification::Remove(LeafIndex(1))).unwrap();
        let bundle = states[0].create_commit(&mut rng, &[p.clone(), r], &[]).unwrap();
        everyone_applies(&mut states, 0, bundle);
        assert_eq!(states.len(), 4);
        assert_consistent(&states);
        assert!(states[0].create_commit(&mut rng, &[p], &[]).is_err());
    }

    #[test]
    fn rejected_operations() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let crypto = toy();
        let mut states = grow(crypto.clone(), 3, &mut rng);
        let me = states[0].my_leaf();
        assert!(matches!(
            states[0].propose(&mut rng, Modification::Remove(me)),
            Err(CgkaError::SelfRemoveUnsupported)
        ));
        assert!(matches!(
            states[0].propose(&mut rng, Modification::Remove(LeafIndex(3))),
            Err(CgkaError::NoSuchMember(_))
        ));
        let id = ident(crypto.as_ref(), "x", &mut rng);
        let (mut kp, _) = KeyPackage::generate(crypto.as_ref(), &id, &mut rng);
        kp.leaf_node.identity = "y".into();
        assert!(matches!(
            states[0].propose(&mut rng, Modification::Add(kp)),
            Err(CgkaError::InvalidKeyPackage)
        ));

        let stale = states[1].propose(&mut rng, Modification::Update).unwrap();
        let b1 = states[0].commit_modifications(&mut rng, &[Modification::Update]).unwrap();
        let old = states.clone();
        everyone_applies(&mut states, 0, b1);
        assert!(matches!(states[0].create_commit(&mut rng, &[stale], &[]), Err(CgkaError::StaleProposal { .. })));
        let b2 = old[2].commit_modifications(&mut rng, &[Modification::Update]).unwrap();
        assert!(matches!(states[1].process_commit(&b2.commit), Err(CgkaError::WrongEpoch { .. })));
        assert!(matches!(
            states[1].merge_pending(b2.pending, &b2.commit),
            Err(CgkaError::PendingMismatch)
        ));

        let b3 = states[0].commit_modifications(&mut rng, &[Modification::Update]).unwrap();
        let b4 = states[0].commit_modifications(&mut rng, &[Modification::Update]).unwrap();
        assert!(matches!(b3.pending.confirm(&b4.commit), Err(CgkaError::PendingMismatch)));
        let mut forged = b4.commit.clone();
        forged.signature[0] ^= 1;
        assert!(matches!(states[1].process_commit(&forged), Err(CgkaError::BadSignature)));
        let mut forged = b4.commit.clone();
        forged.confirmation_tag.as_mut().unwrap()[0] ^= 1;
        assert!(states[1].process_commit(&forged).is_err());
    }

    #[test]
    fn removed_member_is_evicted() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let crypto = toy();
        let mut states = grow(crypto.clone(), 4, &mut rng);
        let victim = states[2].clone();
        let bundle = states[0].commit_modifications(&mut rng, &[Modification::Remove(victim.my_leaf())]).unwrap();
        assert!(matches!(victim.process_commit(&bundle.commit), Err(CgkaError::Evicted)));
        assert!(!testing::any_path_secret_opens(
            crypto.as_ref(),
            &victim.held_private_keys(),
            &bundle.commit,
            states[0].my_leaf()
        ));
        everyone_applies(&mut states, 0, bundle);
        assert_eq!(states.len(), 3);
        let msg = states[1].seal_application(b"secret");
        assert!(victim.open_application(&msg).is_err());
        assert!(!testing::open_with_secret(crypto.as_ref(), victim.application_secret(), &msg));
        assert_eq!(states[2].open_application(&msg).unwrap().1, b"secret");
    }

    #[test]
    fn external_join() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let crypto = toy();
        let mut states = grow(crypto.clone(), 4, &mut rng);
        let gi = states[3].export_group_info();
        let id = ident(crypto.as_ref(), "ext", &mut rng);
        let (msg, pending) = GroupState::join_external(crypto.clone(), &mut rng, &gi, id.clone(), false).unwrap();
        let mut next: Vec<GroupState> = states.iter().map(|s| s.process_commit(&msg).unwrap()).collect();
        next.push(pending.confirm(&msg).unwrap());
        assert_eq!(next[0].member_count(), 5);
        assert_consistent(&next);

        let (stale, _) = GroupState::join_external(crypto.clone(), &mut rng, &gi, id.clone(), false).unwrap();
        assert!(matches!(next[0].process_commit(&stale), Err(CgkaError::WrongEpoch { .. })));

        let gi = next[0].export_group_info();
        let (resync, pending) = GroupState::join_external(crypto.clone(), &mut rng, &gi, id, true).unwrap();
        let old_leaf = next[4].my_leaf();
        assert!(matches!(next[4].process_commit(&resync), Err(CgkaError::Evicted)));
        let mut again: Vec<GroupState> = next[..4].iter().map(|s| s.process_commit(&resync).unwrap()).collect();
        let rejoined = pending.confirm(&resync).unwrap();
        assert_eq!(rejoined.my_leaf(), old_leaf);
        again.push(rejoined);
        assert_eq!(again[0].member_count(), 5);
        assert_consistent(&again);

        states = again;
        let a = states[0].clone();
        let id_disabled = ident(crypto.as_ref(), "z", &mut rng);
        let disabled = GroupState::create(crypto.clone(), &mut rng, "h", id_disabled, GroupConfig::default());
        let id = ident(crypto.as_ref(), "w", &mut rng);
        assert!(matches!(
            GroupState::join_external(crypto.clone(), &mut rng, &disabled.export_group_info(), id, false),
            Err(CgkaError::ExternalJoinsDisabled)
        ));
        let mut gi = a.export_group_info();
        gi.signature[0] ^= 1;
        let id = ident(crypto.as_ref(), "v", &mut rng);
        assert!(matches!(
            GroupState::join_external(crypto, &mut rng, &gi, id, false),
            Err(CgkaError::BadGroupInfo(_))
        ));
    }

    #[test]
    fn welcome_rejects_tampering() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let crypto = toy();
        let c = crypto.as_ref();
        let states = grow(crypto.clone(), 3, &mut rng);
        let id = ident(c, "bob", &mut rng);
        let (kp, sec) = KeyPackage::generate(c, &id, &mut rng);
        let (_, other_sec) = KeyPackage::generate(c, &id, &mut rng);
        let bundle = states[0].commit_modifications(&mut rng, &[Modification::Add(kp)]).unwrap();
        let w = &bundle.welcomes[0].1;
        assert!(matches!(
            GroupState::from_welcome(crypto.clone(), w, &other_sec, id.clone()),
            Err(CgkaError::NotForMe)
        ));
        let mut bad = w.clone();
        let last = bad.encrypted_group_info.len() - 1;
        bad.encrypted_group_info[last] ^= 1;
        assert!(GroupState::from_welcome(crypto.clone(), &bad, &sec, id.clone()).is_err());
        let ok = GroupState::from_welcome(crypto.clone(), w, &sec, id).unwrap();
        assert_eq!(ok.epoch_secret(), bundle.pending.preview().epoch_secret());
    }

    #[test]
    fn application_messages() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let mut states = grow(toy(), 3, &mut rng);
        let m1 = states[0].seal_application(b"hello");
        let m2 = states[0].seal_application(b"hello");
        assert_ne!(m1.ciphertext, m2.ciphertext);
        assert_eq!(states[1].open_application(&m1).unwrap(), (states[0].my_leaf(), b"hello".to_vec()));
        let mut bad = m2.clone();
        bad.ciphertext[0] ^= 1;
        assert!(matches!(states[2].open_application(&bad), Err(CgkaError::Crypto(_))));
        let b = states[1].commit_modifications(&mut rng, &[Modification::Update]).unwrap();
        everyone_applies(&mut states, 1, b);
        assert!(matches!(states[0].open_application(&m1), Err(CgkaError::WrongEpoch { .. })));
    }

    #[test]
    fn filter_drops_conflicts() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let mut states = grow(toy(), 4, &mut rng);
        let a = states[1].propose(&mut rng, Modification::Remove(LeafIndex(2))).unwrap();
        let b = states[3].propose(&mut rng, Modification::Remove(LeafIndex(2))).unwrap();
        let own = states[0].propose(&mut rng, Modification::Update).unwrap();
        let kept = states[0].filter_committable(&[a.clone(), b, own.clone()]);
        assert_eq!(kept, vec![a, own.clone()]);
        let bundle = states[0].create_commit(&mut rng, &kept, &[]).unwrap();
        everyone_applies(&mut states, 0, bundle);
        assert_eq!(states.len(), 3);
        assert_consistent(&states);
    }
}
