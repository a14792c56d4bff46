//! The ratchet tree: public key material for every member and every
//! internal node, stored as a flat array in left-balanced order.

use serde::{Deserialize, Serialize};

use super::treemath::{self, LeafIndex, NodeIndex};
use super::CgkaError;
use crate::codec;
use crate::crypto::CryptoProvider;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafNode {
    pub identity: String,
    pub signature_key: Vec<u8>,
    pub encryption_key: Vec<u8>,
    pub credential: Vec<u8>,
    pub signature: Vec<u8>,
}

impl LeafNode {
    fn tbs(identity: &str, signature_key: &[u8], encryption_key: &[u8], credential: &[u8]) -> Vec<u8> {
        codec::to_bytes(&("leaf node", identity, signature_key, encryption_key, credential))
    }

    pub fn new_signed(
        crypto: &dyn CryptoProvider,
        identity: &str,
        signature_key: &[u8],
        signature_private: &[u8],
        encryption_key: Vec<u8>,
    ) -> LeafNode {
        let credential = identity.as_bytes().to_vec();
        let tbs = Self::tbs(identity, signature_key, &encryption_key, &credential);
        LeafNode {
            identity: identity.to_string(),
            signature_key: signature_key.to_vec(),
            encryption_key,
            credential,
            signature: crypto.sign(signature_private, &tbs),
        }
    }

    pub fn verify(&self, crypto: &dyn CryptoProvider) -> bool {
        self.credential == self.identity.as_bytes()
            && crypto.verify(
                &self.signature_key,
                &Self::tbs(
                    &self.identity,
                    &self.signature_key,
                    &self.encryption_key,
                    &self.credential,
                ),
                &self.signature,
            )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentNode {
    pub encryption_key: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Node {
    Leaf(LeafNode),
    Parent(ParentNode),
}

impl Node {
    pub fn encryption_key(&self) -> &[u8] {
        match self {
            Node::Leaf(l) => &l.encryption_key,
            Node::Parent(p) => &p.encryption_key,
        }
    }
}

/// Array-backed ratchet tree. The leaf count is always a power of two.
///
/// Deserialization checks the array shape and node kinds; signatures and
/// the tree hash are checked separately by [`RatchetTree::validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Option<Node>>", into = "Vec<Option<Node>>")]
pub struct RatchetTree {
    nodes: Vec<Option<Node>>,
}

impl TryFrom<Vec<Option<Node>>> for RatchetTree {
    type Error = String;

    fn try_from(nodes: Vec<Option<Node>>) -> Result<Self, String> {
        let tree = RatchetTree { nodes };
        tree.check_shape().map_err(|e| e.to_string())?;
        Ok(tree)
    }
}

impl From<RatchetTree> for Vec<Option<Node>> {
    fn from(t: RatchetTree) -> Self {
        t.nodes
    }
}

impl RatchetTree {
    pub fn new_single(leaf: LeafNode) -> Self {
        RatchetTree {
            nodes: vec![Some(Node::Leaf(leaf))],
        }
    }

    /// Builds a tree from raw nodes, checking only the array shape.
    pub fn from_nodes(nodes: Vec<Option<Node>>) -> Result<Self, CgkaError> {
        let tree = RatchetTree { nodes };
        tree.check_shape()?;
        Ok(tree)
    }

    fn check_shape(&self) -> Result<(), CgkaError> {
        let width = self.nodes.len() as u32;
        let n_leaves = (width + 1) / 2;
        if width == 0 || !n_leaves.is_power_of_two() || treemath::node_width(n_leaves) != width {
            return Err(CgkaError::BadTree("array width is not a full tree".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match (i % 2 == 0, node) {
                (_, None) | (true, Some(Node::Leaf(_))) | (false, Some(Node::Parent(_))) => {}
                _ => return Err(CgkaError::BadTree(format!("node {i} has the wrong kind"))),
            }
        }
        if self.leaves().next().is_none() {
            return Err(CgkaError::BadTree("tree has no members".into()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Option<Node>] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> u32 {
        (self.nodes.len() as u32 + 1) / 2
    }

    pub fn root(&self) -> NodeIndex {
        treemath::root(self.leaf_count())
    }

    pub fn node(&self, x: NodeIndex) -> Option<&Node> {
        self.nodes.get(x.0 as usize).and_then(Option::as_ref)
    }

    pub fn is_blank(&self, x: NodeIndex) -> bool {
        self.node(x).is_none()
    }

    pub fn leaf(&self, l: LeafIndex) -> Option<&LeafNode> {
        match self.node(l.node()) {
            Some(Node::Leaf(leaf)) => Some(leaf),
            _ => None,
        }
    }

    /// Occupied leaves in index order.
    pub fn leaves(&self) -> impl Iterator<Item = (LeafIndex, &LeafNode)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Some(Node::Leaf(l)) => Some((LeafIndex(i as u32 / 2), l)),
            _ => None,
        })
    }

    pub fn member_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn find_identity(&self, identity: &str) -> Option<LeafIndex> {
        self.leaves()
            .find(|(_, l)| l.identity == identity)
            .map(|(i, _)| i)
    }

    /// Minimal set of non-blank nodes covering the subtree under `x`.
    pub fn resolution(&self, x: NodeIndex) -> Vec<NodeIndex> {
        let mut out = Vec::new();
        self.resolve_into(x, &mut out);
        out
    }

    fn resolve_into(&self, x: NodeIndex, out: &mut Vec<NodeIndex>) {
        if !self.is_blank(x) {
            out.push(x);
        } else if !x.is_leaf() {
            self.resolve_into(treemath::left(x), out);
            self.resolve_into(treemath::right(x), out);
        }
    }

    pub fn direct_path(&self, l: LeafIndex) -> Vec<NodeIndex> {
        treemath::direct_path(l.node(), self.leaf_count())
    }

    pub fn copath(&self, l: LeafIndex) -> Vec<NodeIndex> {
        treemath::copath(l.node(), self.leaf_count())
    }

    /// Direct-path nodes whose copath child has a non-empty resolution,
    /// paired with that copath child.
    pub fn filtered_direct_path(&self, l: LeafIndex) -> Vec<(NodeIndex, NodeIndex)> {
        self.direct_path(l)
            .into_iter()
            .zip(self.copath(l))
            .filter(|(_, c)| !self.resolution(*c).is_empty())
            .collect()
    }

    pub fn set_node(&mut self, x: NodeIndex, node: Option<Node>) {
        self.nodes[x.0 as usize] = node;
    }

    pub fn set_leaf(&mut self, l: LeafIndex, leaf: LeafNode) {
        self.set_node(l.node(), Some(Node::Leaf(leaf)));
    }

    pub fn blank_direct_path(&mut self, l: LeafIndex) {
        for x in self.direct_path(l) {
            self.set_node(x, None);
        }
    }

    /// Places `leaf` in the leftmost blank leaf, doubling the tree when full,
    /// and blanks the new leaf's direct path.
    pub fn add_leaf(&mut self, leaf: LeafNode) -> LeafIndex {
        let slot = (0..self.leaf_count())
            .map(LeafIndex)
            .find(|l| self.is_blank(l.node()));
        let slot = match slot {
            Some(s) => s,
            None => {
                let n = self.leaf_count();
                self.nodes.resize(treemath::node_width(2 * n) as usize, None);
                LeafIndex(n)
            }
        };
        self.set_leaf(slot, leaf);
        self.blank_direct_path(slot);
        slot
    }

    pub fn blank_leaf(&mut self, l: LeafIndex) {
        self.set_node(l.node(), None);
        self.blank_direct_path(l);
    }

    pub fn tree_hash(&self, crypto: &dyn CryptoProvider) -> Vec<u8> {
        self.hash_node(crypto, self.root())
    }

    fn hash_node(&self, crypto: &dyn CryptoProvider, x: NodeIndex) -> Vec<u8> {
        let mut input = Vec::new();
        if x.is_leaf() {
            input.push(0u8);
            input.extend_from_slice(&codec::to_bytes(&(x.0, self.node(x))));
        } else {
            input.push(1u8);
            input.extend_from_slice(&codec::to_bytes(&(x.0, self.node(x))));
            input.extend_from_slice(&self.hash_node(crypto, treemath::left(x)));
            input.extend_from_slice(&self.hash_node(crypto, treemath::right(x)));
        }
        crypto.hash(&input)
    }

    /// Full validation for trees received from others: shape, leaf
    /// signatures and distinct identities.
    pub fn validate(&self, crypto: &dyn CryptoProvider) -> Result<(), CgkaError> {
        self.check_shape()?;
        let mut seen = std::collections::BTreeSet::new();
        for (i, leaf) in self.leaves() {
            if !leaf.verify(crypto) {
                return Err(CgkaError::BadTree(format!("{i} has an invalid signature")));
            }
            if !seen.insert(leaf.identity.as_str()) {
                return Err(CgkaError::BadTree(format!("duplicate identity {}", leaf.identity)));
            }
        }
        Ok(())
    }

    pub fn count_blank_parents(&self) -> usize {
        (0..self.nodes.len())
            .filter(|i| i % 2 == 1 && self.nodes[*i].is_none())
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::ToyProvider;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn leaf(name: &str, rng: &mut ChaCha20Rng) -> LeafNode {
        let c = ToyProvider;
        let s = c.signature_generate(rng);
        let e = c.kem_generate(rng);
        LeafNode::new_signed(&c, name, &s.public_key, &s.private_key, e.public_key)
    }

    fn parent_node(rng: &mut ChaCha20Rng) -> Node {
        Node::Parent(ParentNode {
            encryption_key: ToyProvider.kem_generate(rng).public_key,
        })
    }

    #[test]
    fn add_leaf_grows_and_fills_leftmost() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut t = RatchetTree::new_single(leaf("a", &mut rng));
        assert_eq!(t.add_leaf(leaf("b", &mut rng)), LeafIndex(1));
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(t.add_leaf(leaf("c", &mut rng)), LeafIndex(2));
        assert_eq!(t.leaf_count(), 4);
        t.blank_leaf(LeafIndex(1));
        assert_eq!(t.add_leaf(leaf("d", &mut rng)), LeafIndex(1));
        assert_eq!(t.member_count(), 3);
        assert_eq!(t.leaf_count(), 4);
    }

    #[test]
    fn resolution_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut t = RatchetTree::new_single(leaf("a", &mut rng));
        for n in ["b", "c", "d"] {
            t.add_leaf(leaf(n, &mut rng));
        }
        for p in [1, 3, 5] {
            t.set_node(NodeIndex(p), Some(parent_node(&mut rng)));
        }
        assert_eq!(t.resolution(NodeIndex(3)), vec![NodeIndex(3)]);
        t.set_node(NodeIndex(3), None);
        assert_eq!(t.resolution(NodeIndex(3)), vec![NodeIndex(1), NodeIndex(5)]);
        t.blank_leaf(LeafIndex(3));
        assert_eq!(t.resolution(NodeIndex(6)), vec![]);
        assert_eq!(t.resolution(NodeIndex(3)), vec![NodeIndex(1), NodeIndex(4)]);
    }

    #[test]
    fn serde_rejects_bad_shapes() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let l = leaf("a", &mut rng);
        let bad_width: Vec<Option<Node>> = vec![Some(Node::Leaf(l.clone())), None];
        assert!(codec::from_bytes::<RatchetTree>(&codec::to_bytes(&bad_width)).is_err());
        let bad_kind: Vec<Option<Node>> =
            vec![Some(Node::Leaf(l.clone())), Some(Node::Leaf(l.clone())), None];
        assert!(codec::from_bytes::<RatchetTree>(&codec::to_bytes(&bad_kind)).is_err());
        let empty: Vec<Option<Node>> = vec![None];
        assert!(codec::from_bytes::<RatchetTree>(&codec::to_bytes(&empty)).is_err());
        let ok = RatchetTree::new_single(l);
        let back: RatchetTree = codec::from_bytes(&codec::to_bytes(&ok)).unwrap();
        assert_eq!(back, ok);
    }

    #[test]
    fn tree_hash_detects_changes_and_validate_checks_signatures() {
        let c = ToyProvider;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut t = RatchetTree::new_single(leaf("a", &mut rng));
        t.add_leaf(leaf("b", &mut rng));
        let h = t.tree_hash(&c);
        assert!(t.validate(&c).is_ok());
        let mut t2 = t.clone();
        if let Some(Node::Leaf(l)) = &mut t2.nodes[2] {
            l.identity = "mallory".into();
        }
        assert_ne!(t2.tree_hash(&c), h);
        assert!(matches!(t2.validate(&c), Err(CgkaError::BadTree(_))));
        let mut t3 = t.clone();
        t3.add_leaf(leaf("a", &mut rng));
        assert!(matches!(t3.validate(&c), Err(CgkaError::BadTree(_))));
    }
}
