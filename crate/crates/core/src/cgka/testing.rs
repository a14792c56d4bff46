//! Construction helpers for oracle tests. Not part of the stable API.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;

use super::group::{open_application_with, path_aad};
use super::key_package::MemberIdentity;
use super::messages::{ApplicationMessage, HandshakeMessage};
use super::tree::{LeafNode, Node, ParentNode, RatchetTree};
use super::treemath::{self, LeafIndex, NodeIndex};
use super::GroupState;
use crate::crypto::{hpke_open, CryptoProvider, KemKeyPair, Secret};

/// Builds every member's state for a tree with an arbitrary blank labeling.
///
/// `occupied[i]` marks leaf `i` as a member and `parent_filled[j]` marks the
/// `j`-th parent node (node index `2j + 1`) as holding a key. Each member
/// receives the private keys of the non-blank nodes on its direct path and
/// all members share one epoch secret. Returns states in leaf order.
pub fn group_from_labeling(
    crypto: Arc<dyn CryptoProvider>,
    rng: &mut dyn RngCore,
    n_leaves: u32,
    occupied: &[bool],
    parent_filled: &[bool],
) -> Vec<GroupState> {
    assert!(n_leaves.is_power_of_two());
    assert_eq!(occupied.len(), n_leaves as usize);
    assert_eq!(parent_filled.len(), n_leaves as usize - 1);
    let c = crypto.as_ref();
    let width = treemath::node_width(n_leaves) as usize;
    let mut nodes: Vec<Option<Node>> = vec![None; width];
    let mut keys: BTreeMap<NodeIndex, KemKeyPair> = BTreeMap::new();
    let mut identities = BTreeMap::new();
    for (i, occ) in occupied.iter().enumerate() {
        if !occ {
            continue;
        }
        let id = MemberIdentity::generate(c, &format!("member-{i}"), rng);
        let kp = c.kem_generate(rng);
        nodes[2 * i] = Some(Node::Leaf(LeafNode::new_signed(
            c,
            &id.name,
            &id.signer.public_key,
            &id.signer.private_key,
            kp.public_key.clone(),
        )));
        keys.insert(NodeIndex(2 * i as u32), kp);
        identities.insert(LeafIndex(i as u32), id);
    }
    for (j, filled) in parent_filled.iter().enumerate() {
        if !filled {
            continue;
        }
        let kp = c.kem_generate(rng);
        nodes[2 * j + 1] = Some(Node::Parent(ParentNode {
            encryption_key: kp.public_key.clone(),
        }));
        keys.insert(NodeIndex(2 * j as u32 + 1), kp);
    }
    let tree = RatchetTree::from_nodes(nodes).expect("labeling needs at least one member");
    let epoch_secret = c.random_secret(rng);
    identities
        .into_iter()
        .map(|(leaf, id)| {
            let mut mine = BTreeMap::new();
            let mut path = tree.direct_path(leaf);
            path.push(leaf.node());
            for x in path {
                if let Some(kp) = keys.get(&x) {
                    mine.insert(x, kp.clone());
                }
            }
            GroupState::from_parts(
                crypto.clone(),
                id,
                tree.clone(),
                leaf,
                mine,
                Secret::from_bytes(epoch_secret.as_bytes().to_vec()),
                "labeled",
            )
        })
        .collect()
}

/// Attempts an application-message open with a raw application secret,
/// skipping the epoch and membership checks a member would perform.
pub fn open_with_secret(crypto: &dyn CryptoProvider, application_secret: &Secret, msg: &ApplicationMessage) -> bool {
    open_application_with(crypto, application_secret, msg).is_ok()
}

/// Tries every private key against every path-secret ciphertext of a
/// commit authored from leaf `committer` and reports whether any opens.
pub fn any_path_secret_opens(
    crypto: &dyn CryptoProvider,
    private_keys: &[Vec<u8>],
    commit: &HandshakeMessage,
    committer: LeafIndex,
) -> bool {
    let Some(body) = commit.commit() else {
        return false;
    };
    let aad = path_aad(&commit.group_id, commit.epoch, committer);
    body.path.nodes.iter().flat_map(|n| &n.encrypted_path_secrets).any(|ct| {
        private_keys
            .iter()
            .any(|sk| hpke_open(crypto, sk, b"path secret", &aad, ct).is_ok())
    })
}
