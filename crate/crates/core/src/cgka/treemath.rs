//! Index arithmetic for array-represented left-balanced binary trees.
//!
//! Leaves sit at even indices (leaf `i` at node `2i`), parents at odd
//! indices. A node's level is its number of trailing one bits. Trees here
//! always have a power-of-two leaf count, so the root of an `n`-leaf tree is
//! node `n - 1`.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LeafIndex(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeIndex(pub u32);

impl LeafIndex {
    pub fn node(self) -> NodeIndex {
        NodeIndex(self.0 * 2)
    }
}

impl NodeIndex {
    pub fn is_leaf(self) -> bool {
        self.0 % 2 == 0
    }

    pub fn leaf(self) -> Option<LeafIndex> {
        self.is_leaf().then_some(LeafIndex(self.0 / 2))
    }
}

impl fmt::Display for LeafIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "leaf {}", self.0)
    }
}

impl fmt::Display for NodeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}", self.0)
    }
}

pub fn level(x: NodeIndex) -> u32 {
    x.0.trailing_ones()
}

/// Number of nodes in a tree with `n_leaves` leaves (a power of two).
pub fn node_width(n_leaves: u32) -> u32 {
    debug_assert!(n_leaves.is_power_of_two());
    2 * n_leaves - 1
}

pub fn root(n_leaves: u32) -> NodeIndex {
    debug_assert!(n_leaves.is_power_of_two());
    NodeIndex(n_leaves - 1)
}

pub fn left(x: NodeIndex) -> NodeIndex {
    let k = level(x);
    assert!(k > 0, "leaf has no children");
    NodeIndex(x.0 ^ (1 << (k - 1)))
}

pub fn right(x: NodeIndex) -> NodeIndex {
    let k = level(x);
    assert!(k > 0, "leaf has no children");
    NodeIndex(x.0 ^ (3 << (k - 1)))
}

pub fn parent(x: NodeIndex, n_leaves: u32) -> NodeIndex {
    assert_ne!(x, root(n_leaves), "root has no parent");
    let k = level(x);
    let b = (x.0 >> (k + 1)) & 1;
    NodeIndex((x.0 | (1 << k)) ^ (b << (k + 1)))
}

pub fn sibling(x: NodeIndex, n_leaves: u32) -> NodeIndex {
    let p = parent(x, n_leaves);
    if x.0 < p.0 {
        right(p)
    } else {
        left(p)
    }
}

/// Ancestors of `x` from its parent up to and including the root.
pub fn direct_path(x: NodeIndex, n_leaves: u32) -> Vec<NodeIndex> {
    let r = root(n_leaves);
    let mut out = Vec::new();
    let mut cur = x;
    while cur != r {
        cur = parent(cur, n_leaves);
        out.push(cur);
    }
    out
}

/// Siblings of `x` and of each non-root node of its direct path.
pub fn copath(x: NodeIndex, n_leaves: u32) -> Vec<NodeIndex> {
    let r = root(n_leaves);
    let mut out = Vec::new();
    let mut cur = x;
    while cur != r {
        out.push(sibling(cur, n_leaves));
        cur = parent(cur, n_leaves);
    }
    out
}

/// Lowest common ancestor of two nodes.
pub fn common_ancestor(a: NodeIndex, b: NodeIndex) -> NodeIndex {
    let (lx, ly) = (level(a) + 1, level(b) + 1);
    if lx <= ly && a.0 >> ly == b.0 >> ly {
        return b;
    }
    if ly <= lx && a.0 >> lx == b.0 >> lx {
        return a;
    }
    let (mut x, mut y, mut k) = (a.0, b.0, 0u32);
    while x != y {
        x >>= 1;
        y >>= 1;
        k += 1;
    }
    NodeIndex((x << k) + (1 << (k - 1)) - 1)
}

/// Leaves underneath `x`, inclusive range.
pub fn leaf_span(x: NodeIndex) -> (LeafIndex, LeafIndex) {
    let k = level(x);
    let first = x.0 - ((1 << k) - 1);
    let last = x.0 + ((1 << k) - 1);
    (LeafIndex(first / 2), LeafIndex(last / 2))
}

pub fn is_ancestor(ancestor: NodeIndex, x: NodeIndex) -> bool {
    let (lo, hi) = leaf_span(ancestor);
    let (xlo, xhi) = leaf_span(x);
    ancestor != x && lo <= xlo && xhi <= hi && level(ancestor) > level(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// Independent oracle: build the tree recursively as explicit nodes and
    /// record parent/children relations by in-order numbering.
    struct Oracle {
        parent: BTreeMap<u32, u32>,
        children: BTreeMap<u32, (u32, u32)>,
        root: u32,
    }

    fn build(lo: u32, hi: u32, o: &mut Oracle) -> u32 {
        // Subtree covering leaves [lo, hi); in-order index of a balanced subtree.
        if hi - lo == 1 {
            return 2 * lo;
        }
        let mid = (lo + hi) / 2;
        let l = build(lo, mid, o);
        let r = build(mid, hi, o);
        let me = 2 * mid - 1;
        o.parent.insert(l, me);
        o.parent.insert(r, me);
        o.children.insert(me, (l, r));
        me
    }

    fn oracle(n: u32) -> Oracle {
        let mut o = Oracle {
            parent: BTreeMap::new(),
            children: BTreeMap::new(),
            root: 0,
        };
        o.root = build(0, n, &mut o);
        o
    }

    #[test]
    fn matches_recursive_construction() {
        for log_n in 0..7 {
            let n = 1u32 << log_n;
            let o = oracle(n);
            assert_eq!(root(n).0, o.root);
            for x in 0..node_width(n) {
                let x_ix = NodeIndex(x);
                if let Some(&(l, r)) = o.children.get(&x) {
                    assert_eq!(left(x_ix).0, l);
                    assert_eq!(right(x_ix).0, r);
                } else {
                    assert!(x_ix.is_leaf());
                }
                match o.parent.get(&x) {
                    Some(&p) => {
                        assert_eq!(parent(x_ix, n).0, p);
                        let (l, r) = o.children[&p];
                        let sib = if l == x { r } else { l };
                        assert_eq!(sibling(x_ix, n).0, sib);
                    }
                    None => assert_eq!(x, o.root),
                }
                let mut dp = Vec::new();
                let mut cur = x;
                while let Some(&p) = o.parent.get(&cur) {
                    dp.push(p);
                    cur = p;
                }
                assert_eq!(
                    direct_path(x_ix, n).iter().map(|n| n.0).collect::<Vec<_>>(),
                    dp
                );
                assert_eq!(copath(x_ix, n).len(), dp.len());
            }
        }
    }

    #[test]
    fn lca_and_spans() {
        let n = 16;
        for a in 0..node_width(n) {
            for b in 0..node_width(n) {
                let (a, b) = (NodeIndex(a), NodeIndex(b));
                let lca = common_ancestor(a, b);
                // Brute force: lowest node whose leaf span covers both.
                let mut best: Option<NodeIndex> = None;
                for c in 0..node_width(n) {
                    let c = NodeIndex(c);
                    let covers = |x: NodeIndex| {
                        let (lo, hi) = leaf_span(c);
                        let (xl, xh) = leaf_span(x);
                        lo <= xl && xh <= hi && level(c) >= level(x)
                    };
                    if covers(a) && covers(b) && best.is_none_or(|bb| level(c) < level(bb)) {
                        best = Some(c);
                    }
                }
                assert_eq!(Some(lca), best, "lca({a:?},{b:?})");
            }
        }
        assert_eq!(leaf_span(NodeIndex(7)), (LeafIndex(0), LeafIndex(7)));
        assert_eq!(leaf_span(NodeIndex(9)), (LeafIndex(4), LeafIndex(5)));
        assert!(is_ancestor(NodeIndex(7), NodeIndex(4)));
        assert!(!is_ancestor(NodeIndex(4), NodeIndex(4)));
    }

    #[test]
    fn single_leaf_tree() {
        assert_eq!(root(1), NodeIndex(0));
        assert!(direct_path(NodeIndex(0), 1).is_empty());
        assert!(copath(NodeIndex(0), 1).is_empty());
    }
}
