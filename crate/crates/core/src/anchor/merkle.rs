//! Binary SHA-256 Merkle tree with Bitcoin's duplicate-last rule for odd levels.

use serde::{Deserialize, Serialize};

use super::AnchorError;
use crate::hash::Hash256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub sibling: Hash256,
    /// Where the sibling sits relative to the running hash.
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf: Hash256,
    pub path: Vec<ProofStep>,
    pub root: Hash256,
    pub batch_id: u64,
}

fn parent(left: &Hash256, right: &Hash256) -> Hash256 {
    Hash256::digest_parts(&[left.as_bytes(), right.as_bytes()])
}

fn next_level(level: &[Hash256]) -> Vec<Hash256> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => parent(l, r),
            [odd] => parent(odd, odd),
            _ => unreachable!(),
        })
        .collect()
}

pub fn build_merkle(leaves: &[Hash256]) -> Result<Hash256, AnchorError> {
    if leaves.is_empty() {
        return Err(AnchorError::EmptyLeaves);
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    Ok(level[0])
}

pub fn prove_inclusion(leaves: &[Hash256], index: usize) -> Result<InclusionProof, AnchorError> {
    prove_in_batch(leaves, index, 0)
}

pub(crate) fn prove_in_batch(
    leaves: &[Hash256],
    index: usize,
    batch_id: u64,
) -> Result<InclusionProof, AnchorError> {
    if index >= leaves.len() {
        return Err(AnchorError::IndexOutOfRange {
            index,
            len: leaves.len(),
        });
    }
    let mut path = Vec::new();
    let mut level = leaves.to_vec();
    let mut pos = index;
    while level.len() > 1 {
        let step = if pos.is_multiple_of(2) {
            // Odd tail pairs with itself.
            let sibling = level.get(pos + 1).copied().unwrap_or(level[pos]);
            ProofStep { sibling, side: Side::Right }
        } else {
            ProofStep {
                sibling: level[pos - 1],
                side: Side::Left,
            }
        };
        path.push(step);
        level = next_level(&level);
        pos /= 2;
    }
    Ok(InclusionProof {
        leaf: leaves[index],
        path,
        root: level[0],
        batch_id,
    })
}

/// Folds the leaf up the path; needs nothing but the proof.
pub fn verify_inclusion(proof: &InclusionProof) -> bool {
    let folded = proof.path.iter().fold(proof.leaf, |acc, step| match step.side {
        Side::Left => parent(&step.sibling, &acc),
        Side::Right => parent(&acc, &step.sibling),
    });
    folded == proof.root
}
