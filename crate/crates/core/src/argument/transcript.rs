use std::collections::HashMap;

use sha2::{Digest as _, Sha256};

use super::{ArgumentError, Digest};

const TRANSCRIPT_TAG: &[u8] = b"zkml-transcript-v1";
const CHALLENGE_TAG: &[u8] = b"zkml-challenge-v1";

/// Fiat–Shamir transcript. Every absorb is length-prefixed and labelled, so
/// the challenge is a function of the exact message sequence.
#[derive(Clone)]
pub struct Transcript {
    h: Sha256,
}

impl Default for Transcript {
    fn default() -> Self {
        Self::new()
    }
}

impl Transcript {
    pub fn new() -> Self {
        let mut h = Sha256::new();
        h.update(TRANSCRIPT_TAG);
        Self { h }
    }

    pub fn absorb(&mut self, label: &[u8], bytes: &[u8]) {
        self.h.update((label.len() as u32).to_le_bytes());
        self.h.update(label);
        self.h.update((bytes.len() as u64).to_le_bytes());
        self.h.update(bytes);
    }

    /// Seed for challenge expansion. The transcript itself is not consumed.
    pub fn challenge_seed(&self) -> Digest {
        self.h.clone().finalize().into()
    }
}

/// Counter-mode expansion of a seed into uniform `u64`s.
struct Stream {
    seed: Digest,
    counter: u64,
    buf: Vec<u64>,
}

impl Stream {
    fn next(&mut self) -> u64 {
        if self.buf.is_empty() {
            let mut h = Sha256::new();
            h.update(CHALLENGE_TAG);
            h.update(self.seed);
            h.update(self.counter.to_le_bytes());
            self.counter += 1;
            let block: Digest = h.finalize().into();
            self.buf =
                block.chunks(8).rev().map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        }
        self.buf.pop().expect("refilled")
    }

    /// Uniform in `[0, bound)` by rejection.
    fn below(&mut self, bound: u64) -> u64 {
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let x = self.next();
            if x < zone {
                return x % bound;
            }
        }
    }
}

/// `k` distinct rows in `[0, n_rows)`: the first `k` steps of a Fisher–Yates
/// shuffle driven by the transcript, kept sparse so the cost is O(k).
pub fn challenge_rows(t: &Transcript, k: usize, n_rows: usize) -> Result<Vec<u32>, ArgumentError> {
    if k > n_rows {
        return Err(ArgumentError::TooManySamples { k, n_rows });
    }
    let mut s = Stream { seed: t.challenge_seed(), counter: 0, buf: Vec::new() };
    let mut swapped: HashMap<u64, u64> = HashMap::with_capacity(2 * k);
    let n = n_rows as u64;
    (0..k as u64)
        .map(|i| {
            let j = i + s.below(n - i);
            let vj = swapped.get(&j).copied().unwrap_or(j);
            let vi = swapped.get(&i).copied().unwrap_or(i);
            swapped.insert(j, vi);
            Ok(vj as u32)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(bytes: &[u8]) -> Transcript {
        let mut t = Transcript::new();
        t.absorb(b"x", bytes);
        t
    }

    #[test]
    fn deterministic_distinct_and_full() {
        let a = challenge_rows(&t(b"abc"), 30, 4096).unwrap();
        assert_eq!(a, challenge_rows(&t(b"abc"), 30, 4096).unwrap());
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 30);
        let mut all = challenge_rows(&t(b"abc"), 64, 64).unwrap();
        all.sort();
        assert_eq!(all, (0..64).collect::<Vec<u32>>());
        assert!(challenge_rows(&t(b"abc"), 65, 64).is_err());
        assert!(challenge_rows(&t(b"abc"), 0, 0).unwrap().is_empty());
    }

    #[test]
    fn absorb_is_framed() {
        let mut a = Transcript::new();
        a.absorb(b"ab", b"c");
        let mut b = Transcript::new();
        b.absorb(b"a", b"bc");
        assert_ne!(a.challenge_seed(), b.challenge_seed());
    }

    #[test]
    fn roughly_uniform() {
        let mut counts = [0usize; 16];
        for i in 0..2000u32 {
            for r in challenge_rows(&t(&i.to_le_bytes()), 4, 16).unwrap() {
                counts[r as usize] += 1;
            }
        }
        // 500 expected per bucket
        assert!(counts.iter().all(|&c| (400..600).contains(&c)), "{counts:?}");
    }
}
