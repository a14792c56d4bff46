//! Protocol messages and their canonical framing.

use serde::{Deserialize, Serialize};

use super::key_package::KeyPackage;
use super::tree::{LeafNode, RatchetTree};
use super::treemath::{LeafIndex, NodeIndex};
use crate::codec::{self, CodecError};
use crate::crypto::HpkeCiphertext;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupContext {
    pub group_id: String,
    pub epoch: u64,
    pub tree_hash: Vec<u8>,
    pub confirmed_transcript_hash: Vec<u8>,
    pub external_joins: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sender {
    Member(LeafIndex),
    NewMember,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalKind {
    Add(KeyPackage),
    Remove(LeafIndex),
    Update(LeafNode),
}

impl ProposalKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProposalKind::Add(_) => "add",
            ProposalKind::Remove(_) => "remove",
            ProposalKind::Update(_) => "update",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdatePathNode {
    pub encryption_key: Vec<u8>,
    /// One ciphertext per node of the copath child's resolution, in
    /// resolution order, skipping leaves added by the same commit.
    pub encrypted_path_secrets: Vec<HpkeCiphertext>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdatePath {
    pub leaf_node: LeafNode,
    pub nodes: Vec<UpdatePathNode>,
}

impl UpdatePath {
    pub fn ciphertext_count(&self) -> usize {
        self.nodes.iter().map(|n| n.encrypted_path_secrets.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalInit {
    pub kem_output: Vec<u8>,
    /// Earlier leaf of the same identity, removed by this join.
    pub resync_remove: Option<LeafIndex>,
}

/// A proposal applied by a commit: either a full framed copy of a proposal
/// published earlier, or a modification made by the committer itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommitProposal {
    Framed(HandshakeMessage),
    Inline(ProposalKind),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub proposals: Vec<CommitProposal>,
    pub external: Option<ExternalInit>,
    pub path: UpdatePath,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Content {
    Proposal(ProposalKind),
    Commit(Commit),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeMessage {
    pub group_id: String,
    pub epoch: u64,
    pub sender: Sender,
    pub content: Content,
    pub signature: Vec<u8>,
    pub confirmation_tag: Option<Vec<u8>>,
    pub membership_tag: Option<Vec<u8>>,
}

impl HandshakeMessage {
    pub(crate) fn tbs(group_id: &str, epoch: u64, sender: &Sender, content: &Content) -> Vec<u8> {
        codec::to_bytes(&("handshake", group_id, epoch, sender, content))
    }

    pub(crate) fn own_tbs(&self) -> Vec<u8> {
        Self::tbs(&self.group_id, self.epoch, &self.sender, &self.content)
    }

    pub(crate) fn membership_input(&self) -> Vec<u8> {
        let mut input = self.own_tbs();
        input.extend_from_slice(&codec::to_bytes(&(&self.signature, &self.confirmation_tag)));
        input
    }

    pub fn is_commit(&self) -> bool {
        matches!(self.content, Content::Commit(_))
    }

    pub fn commit(&self) -> Option<&Commit> {
        match &self.content {
            Content::Commit(c) => Some(c),
            Content::Proposal(_) => None,
        }
    }

    pub fn proposal(&self) -> Option<&ProposalKind> {
        match &self.content {
            Content::Proposal(p) => Some(p),
            Content::Commit(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub context: GroupContext,
    pub tree: RatchetTree,
    /// Occupied leaves in the order their members joined.
    pub join_order: Vec<LeafIndex>,
    pub external_pub: Vec<u8>,
    pub confirmation_tag: Vec<u8>,
    pub signer: LeafIndex,
    pub signature: Vec<u8>,
}

impl GroupInfo {
    pub(crate) fn tbs(&self) -> Vec<u8> {
        codec::to_bytes(&(
            "group info",
            &self.context,
            &self.tree,
            &self.join_order,
            &self.external_pub,
            &self.confirmation_tag,
            self.signer,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSecrets {
    pub joiner_secret: Vec<u8>,
    pub path_secret: Option<(NodeIndex, Vec<u8>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Welcome {
    pub key_package_ref: Vec<u8>,
    pub encrypted_group_secrets: HpkeCiphertext,
    /// [`GroupInfo`] sealed under a key derived from the joiner secret.
    pub encrypted_group_info: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicationMessage {
    pub group_id: String,
    pub epoch: u64,
    pub sender: LeafIndex,
    pub generation: u32,
    pub ciphertext: Vec<u8>,
}

/// Every object that crosses the delivery layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireMessage {
    Handshake(HandshakeMessage),
    Welcome(Welcome),
    GroupInfo(GroupInfo),
    KeyPackage(KeyPackage),
    Application(ApplicationMessage),
}

impl WireMessage {
    pub fn encode(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        codec::decode(bytes)
    }
}
