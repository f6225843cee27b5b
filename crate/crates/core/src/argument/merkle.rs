use sha2::{Digest as _, Sha256};

pub type Digest = [u8; 32];

const LEAF: u8 = 0x00;
const NODE: u8 = 0x01;
const PAD: u8 = 0x02;

/// Leaf hash: `H(0x00 ‖ domain ‖ bytes)`.
pub fn hash_leaf(domain: u8, bytes: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF, domain]);
    h.update(bytes);
    h.finalize().into()
}

pub fn hash_node(l: &Digest, r: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE]);
    h.update(l);
    h.update(r);
    h.finalize().into()
}

/// Stand-in for the missing leaves of a tree padded to a power of two. No
/// byte string hashes to it as a leaf.
pub fn pad_leaf(domain: u8) -> Digest {
    let mut h = Sha256::new();
    h.update([PAD, domain]);
    h.finalize().into()
}

/// Binary Merkle tree over a power-of-two number of leaves, every level kept.
#[derive(Clone, Debug)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    /// `leaves` is padded with [`pad_leaf`] up to the next power of two.
    pub fn from_leaf_hashes(mut leaves: Vec<Digest>, domain: u8) -> Self {
        let n = leaves.len().max(1).next_power_of_two();
        leaves.resize(n, pad_leaf(domain));
        let mut levels = vec![leaves];
        while levels.last().map_or(0, |l| l.len()) > 1 {
            let prev = levels.last().expect("non-empty");
            let next = prev.chunks(2).map(|p| hash_node(&p[0], &p[1])).collect();
            levels.push(next);
        }
        Self { levels }
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("at least one level")[0]
    }

    pub fn n_leaves(&self) -> usize {
        self.levels[0].len()
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Sibling hashes from the leaf level up.
    pub fn path(&self, index: usize) -> Vec<Digest> {
        let mut i = index;
        self.levels[..self.depth()]
            .iter()
            .map(|level| {
                let s = level[i ^ 1];
                i >>= 1;
                s
            })
            .collect()
    }
}

/// Recomputes the root from a leaf hash and its path.
pub fn verify_path(root: &Digest, leaf: Digest, index: usize, path: &[Digest], depth: usize) -> bool {
    if path.len() != depth || index >> depth != 0 {
        return false;
    }
    let mut acc = leaf;
    let mut i = index;
    for s in path {
        acc = if i & 1 == 0 { hash_node(&acc, s) } else { hash_node(s, &acc) };
        i >>= 1;
    }
    &acc == root
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_verify_and_bind_position() {
        for n in [1usize, 2, 5, 8, 13] {
            let leaves: Vec<Digest> = (0..n).map(|i| hash_leaf(7, &[i as u8])).collect();
            let t = MerkleTree::from_leaf_hashes(leaves.clone(), 7);
            assert!(t.n_leaves().is_power_of_two());
            for (i, &l) in leaves.iter().enumerate() {
                let p = t.path(i);
                assert!(verify_path(&t.root(), l, i, &p, t.depth()));
                if t.depth() > 0 {
                    assert!(!verify_path(&t.root(), l, i ^ 1, &p, t.depth()));
                    assert!(!verify_path(&t.root(), hash_leaf(7, &[99]), i, &p, t.depth()));
                }
            }
        }
    }

    #[test]
    fn domains_and_padding_are_separated() {
        assert_ne!(hash_leaf(1, b"x"), hash_leaf(2, b"x"));
        assert_ne!(pad_leaf(1), hash_leaf(1, b""));
        let a = MerkleTree::from_leaf_hashes(vec![hash_leaf(1, b"a")], 1);
        let b = MerkleTree::from_leaf_hashes(vec![hash_leaf(1, b"a"), pad_leaf(1)], 1);
        assert_ne!(a.root(), b.root());
    }
}
