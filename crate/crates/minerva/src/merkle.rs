//! k-ary and fat Merkle trees over chunk lists.
//!
//! A standard tree packs leaves bottom-up, leftmost-greedy, with fanout `k`.
//! A fat Merkle tree (FMT) has at most three levels: one root, a middle layer
//! of `ceil(N/k)` nodes over contiguous runs of `k` leaves, and the `N` leaves
//! themselves (two levels when `N <= k`). The flat shape caps the number of
//! sequential resolution rounds a reader needs, at the price of a wide root.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chunkstore::{Chunk, ContentId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeShape {
    Standard,
    Fat,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MerkleNode {
    pub cid: ContentId,
    /// Ordered child ids; empty iff this node is a leaf.
    pub children: Vec<ContentId>,
    pub is_leaf: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MerkleTree {
    pub root: ContentId,
    pub nodes: HashMap<ContentId, MerkleNode>,
    pub shape: TreeShape,
    pub fanout_k: usize,
    /// Leaf count N.
    pub leaf_count: usize,
    /// Number of levels, root level included.
    pub height: usize,
    /// Exact number of tree positions (duplicate-content nodes counted once
    /// per position).
    pub total_nodes: usize,
    /// Leaf ids in object order.
    pub leaves: Vec<ContentId>,
}

/// Height of a standard k-ary tree over N leaves: `ceil(log_k N) + 1`.
pub fn standard_height(leaf_count: usize, k: usize) -> usize {
    assert!(leaf_count >= 1 && k >= 2);
    let mut levels_above = 0usize;
    let mut capacity: u128 = 1;
    while capacity < leaf_count as u128 {
        capacity *= k as u128;
        levels_above += 1;
    }
    levels_above + 1
}

/// Total node count `(k^H - 1) / (k - 1)` of a perfect k-ary tree with N
/// leaves. N must be an exact power of k (or 1).
pub fn perfect_tree_node_count(leaf_count: usize, k: usize) -> Result<u128> {
    if k < 2 {
        return Err(Error::invalid("fanout k must be >= 2"));
    }
    if leaf_count == 0 {
        return Err(Error::invalid("leaf count must be >= 1"));
    }
    let mut n = leaf_count as u128;
    let mut height = 1u32;
    while n > 1 {
        if n % k as u128 != 0 {
            return Err(Error::invalid(format!(
                "N={leaf_count} is not a perfect power of k={k}"
            )));
        }
        n /= k as u128;
        height += 1;
    }
    let k = k as u128;
    Ok((k.pow(height) - 1) / (k - 1))
}

fn group_level(level: &[ContentId], k: usize) -> Vec<MerkleNode> {
    level
        .chunks(k)
        .map(|group| MerkleNode {
            cid: ContentId::of_children(group),
            children: group.to_vec(),
            is_leaf: false,
        })
        .collect()
}

fn leaf_nodes(leaves: &[ContentId]) -> impl Iterator<Item = (ContentId, MerkleNode)> + '_ {
    leaves.iter().map(|cid| {
        (
            *cid,
            MerkleNode {
                cid: *cid,
                children: Vec::new(),
                is_leaf: true,
            },
        )
    })
}

/// Build a standard k-ary tree, packing leaves leftmost-greedy bottom-up.
pub fn build_standard_tree(chunks: &[Chunk], k: usize) -> Result<MerkleTree> {
    let leaves: Vec<ContentId> = chunks.iter().map(|c| c.cid).collect();
    standard_from_leaves(&leaves, k)
}

pub fn standard_from_leaves(leaves: &[ContentId], k: usize) -> Result<MerkleTree> {
    if k < 2 {
        return Err(Error::invalid("fanout k must be >= 2"));
    }
    if leaves.is_empty() {
        return Err(Error::invalid("tree needs at least one chunk"));
    }
    let mut nodes: HashMap<ContentId, MerkleNode> = leaf_nodes(leaves).collect();
    let mut current: Vec<ContentId> = leaves.to_vec();
    let mut total_nodes = leaves.len();
    let mut height = 1;
    while current.len() > 1 {
        let parents = group_level(&current, k);
        current = parents.iter().map(|n| n.cid).collect();
        total_nodes += parents.len();
        height += 1;
        for node in parents {
            nodes.insert(node.cid, node);
        }
    }
    Ok(MerkleTree {
        root: current[0],
        nodes,
        shape: TreeShape::Standard,
        fanout_k: k,
        leaf_count: leaves.len(),
        height,
        total_nodes,
        leaves: leaves.to_vec(),
    })
}

/// Build a fat Merkle tree: root, `ceil(N/k)` middle nodes over contiguous
/// leaf runs, leaves. Two levels when `N <= k`.
pub fn build_fat_tree(chunks: &[Chunk], k: usize) -> Result<MerkleTree> {
    let leaves: Vec<ContentId> = chunks.iter().map(|c| c.cid).collect();
    fat_from_leaves(&leaves, k)
}

pub fn fat_from_leaves(leaves: &[ContentId], k: usize) -> Result<MerkleTree> {
    if k < 2 {
        return Err(Error::invalid("fanout k must be >= 2"));
    }
    if leaves.is_empty() {
        return Err(Error::invalid("tree needs at least one chunk"));
    }
    let n = leaves.len();
    let mut nodes: HashMap<ContentId, MerkleNode> = leaf_nodes(leaves).collect();
    let (root, height, total_nodes) = if n <= k {
        let root = MerkleNode {
            cid: ContentId::of_children(leaves),
            children: leaves.to_vec(),
            is_leaf: false,
        };
        let cid = root.cid;
        nodes.insert(cid, root);
        (cid, 2, 1 + n)
    } else {
        let middles = group_level(leaves, k);
        let middle_cids: Vec<ContentId> = middles.iter().map(|m| m.cid).collect();
        let middle_count = middles.len();
        for node in middles {
            nodes.insert(node.cid, node);
        }
        let root = MerkleNode {
            cid: ContentId::of_children(&middle_cids),
            children: middle_cids,
            is_leaf: false,
        };
        let cid = root.cid;
        nodes.insert(cid, root);
        (cid, 3, 1 + middle_count + n)
    };
    Ok(MerkleTree {
        root,
        nodes,
        shape: TreeShape::Fat,
        fanout_k: k,
        leaf_count: n,
        height,
        total_nodes,
        leaves: leaves.to_vec(),
    })
}

/// Result of flattening a standard tree into FMT shape.
pub struct FmtConversion {
    pub tree: MerkleTree,
    /// Internal-node digests computed during the conversion; leaves are
    /// never rehashed, so this is `ceil(N/k) + 1` (or 1 when `N <= k`).
    pub hashes_computed: usize,
}

/// Regroup a standard tree's leaves into a fat tree over the identical leaf
/// sequence. Only the new middle layer and the root are hashed.
pub fn convert_to_fmt(tree: &MerkleTree) -> Result<FmtConversion> {
    if tree.shape != TreeShape::Standard {
        return Err(Error::invalid("convert_to_fmt expects a standard tree"));
    }
    if !verify_tree(tree) {
        return Err(Error::Integrity(format!(
            "standard tree rooted at {} fails verification",
            tree.root
        )));
    }
    let fat = fat_from_leaves(&tree.leaves, tree.fanout_k)?;
    let hashes_computed = if tree.leaf_count <= tree.fanout_k {
        1
    } else {
        tree.leaf_count.div_ceil(tree.fanout_k) + 1
    };
    Ok(FmtConversion {
        tree: fat,
        hashes_computed,
    })
}

/// Check that every internal node's id equals the digest of its ordered
/// children and that every referenced node exists. Returns false on any
/// violation instead of erroring.
pub fn verify_tree(tree: &MerkleTree) -> bool {
    let root = match tree.nodes.get(&tree.root) {
        Some(node) => node,
        None => return false,
    };
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if node.is_leaf != node.children.is_empty() {
            return false;
        }
        if node.is_leaf {
            continue;
        }
        if ContentId::of_children(&node.children) != node.cid {
            return false;
        }
        for child in &node.children {
            match tree.nodes.get(child) {
                Some(entry) => stack.push(entry),
                None => return false,
            }
        }
    }
    true
}

/// Leaf ids in object order by depth-first traversal from the root.
pub fn traverse_leaves(tree: &MerkleTree) -> Vec<ContentId> {
    fn walk(tree: &MerkleTree, cid: &ContentId, out: &mut Vec<ContentId>) {
        match tree.nodes.get(cid) {
            Some(node) if node.is_leaf => out.push(*cid),
            Some(node) => {
                for child in &node.children {
                    walk(tree, child, out);
                }
            }
            None => {}
        }
    }
    let mut out = Vec::with_capacity(tree.leaf_count);
    walk(tree, &tree.root, &mut out);
    out
}
