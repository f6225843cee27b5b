use std::fmt;

use sha2::{Digest, Sha256};

use super::WeightStore;
use crate::field::QuantConfig;

const COMMIT_TAG: &[u8] = b"zkml-commit-v1";

/// Binding digest of a model: graph text, canonical weights, quantization.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelCommitment {
    pub digest: [u8; 32],
}

impl ModelCommitment {
    pub fn to_hex(&self) -> String {
        self.digest.iter().map(|b| format!("{:02x}", b)).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 || !s.is_ascii() {
            return None;
        }
        let mut digest = [0u8; 32];
        for (i, d) in digest.iter_mut().enumerate() {
            *d = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(Self { digest })
    }
}

impl fmt::Display for ModelCommitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ModelCommitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelCommitment({})", self.to_hex())
    }
}

/// SHA-256 over `tag ‖ len(graph) ‖ graph ‖ len(weights) ‖ weights ‖ f ‖ B`,
/// lengths as u64 little-endian.
pub fn commit(graph_bytes: &[u8], weights: &WeightStore, cfg: &QuantConfig) -> ModelCommitment {
    commit_bytes(graph_bytes, &weights.to_bytes(), cfg)
}

pub fn commit_bytes(graph_bytes: &[u8], weight_bytes: &[u8], cfg: &QuantConfig) -> ModelCommitment {
    let mut h = Sha256::new();
    h.update(COMMIT_TAG);
    h.update((graph_bytes.len() as u64).to_le_bytes());
    h.update(graph_bytes);
    h.update((weight_bytes.len() as u64).to_le_bytes());
    h.update(weight_bytes);
    h.update([cfg.frac_bits() as u8, cfg.lookup_bits() as u8]);
    ModelCommitment { digest: h.finalize().into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::WeightTensor;

    #[test]
    fn deterministic_and_sensitive() {
        let mut w = WeightStore::new();
        w.insert("a", WeightTensor::new(vec![2], vec![0.5, 1.0]));
        let cfg = QuantConfig::default();
        let c1 = commit(b"graph", &w, &cfg);
        assert_eq!(c1, commit(b"graph", &w, &cfg));
        assert_ne!(c1, commit(b"grapH", &w, &cfg));
        assert_ne!(c1, commit(b"graph", &w, &QuantConfig::new(8, 16).unwrap()));
        let x = &mut w.get_mut("a").unwrap().data[0];
        *x = f32::from_bits(x.to_bits() + 1);
        assert_ne!(c1, commit(b"graph", &w, &cfg));
        assert_eq!(ModelCommitment::from_hex(&c1.to_hex()), Some(c1));
    }
}
