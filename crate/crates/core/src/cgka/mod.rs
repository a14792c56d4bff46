//! TreeKEM continuous group key agreement.
//!
//! A [`GroupState`] is one member's view of a group at one epoch. Commits
//! move the group to the next epoch: the committer refreshes every key on its
//! filtered direct path and encrypts each new path secret to the resolution
//! of the matching copath node. Proposals are applied in a fixed order
//! (updates, then removes, then adds). Added members have their direct path
//! blanked and receive their secrets through a [`Welcome`].

use thiserror::Error;

mod group;
pub mod key_package;
pub mod key_schedule;
pub mod messages;
pub mod tree;
pub mod treemath;

pub use group::{CommitBundle, GroupConfig, GroupState, Modification, PendingCommit};
pub use key_package::{KeyPackage, KeyPackageSecrets, MemberIdentity};
pub use messages::{
    ApplicationMessage, Commit, CommitProposal, Content, GroupContext, GroupInfo,
    HandshakeMessage, ProposalKind, Sender, UpdatePath, Welcome, WireMessage,
};
pub use tree::{LeafNode, Node, ParentNode, RatchetTree};
pub use treemath::{LeafIndex, NodeIndex};

use crate::codec::CodecError;
use crate::crypto::CryptoError;

#[derive(Debug, Error)]
pub enum CgkaError {
    #[error("key package does not verify")]
    InvalidKeyPackage,
    #[error("{0} is not an occupied leaf")]
    NoSuchMember(LeafIndex),
    #[error("members cannot remove themselves")]
    SelfRemoveUnsupported,
    #[error("proposal from epoch {found} used at epoch {expected}")]
    StaleProposal { expected: u64, found: u64 },
    #[error("group has no other members")]
    EmptyGroup,
    #[error("invalid proposal combination: {0}")]
    InvalidProposalCombination(String),
    #[error("message for epoch {found}, group is at epoch {expected}")]
    WrongEpoch { expected: u64, found: u64 },
    #[error("message belongs to another group")]
    WrongGroup,
    #[error("signature does not verify")]
    BadSignature,
    #[error("membership tag does not verify")]
    BadMembershipTag,
    #[error("confirmation tag does not verify")]
    BadConfirmationTag,
    #[error("no path secret is encrypted to a key this member holds")]
    UnableToDecrypt,
    #[error("this member was removed from the group")]
    Evicted,
    #[error("pending commit does not match the confirmed commit")]
    PendingMismatch,
    #[error("welcome is addressed to another key package")]
    NotForMe,
    #[error("invalid ratchet tree: {0}")]
    BadTree(String),
    #[error("invalid group info: {0}")]
    BadGroupInfo(String),
    #[error("group does not accept external joins")]
    ExternalJoinsDisabled,
    #[error("malformed update path: {0}")]
    MalformedPath(String),
    #[error("own commits are applied with merge_pending")]
    OwnCommit,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[doc(hidden)]
pub mod testing;
