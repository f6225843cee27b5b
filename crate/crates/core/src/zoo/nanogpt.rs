use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::{GraphBuilder, WeightStore, WeightTensor, ZooError};
use crate::graph::{EinsumSpec, Graph, InputKind, OpKind};

/// Decoder-only transformer shape. The proved sequence length equals
/// `block_size`; dropout is always zero at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NanoGptConfig {
    pub vocab_size: usize,
    pub block_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_size: usize,
}

impl Default for NanoGptConfig {
    fn default() -> Self {
        Self { vocab_size: 65, block_size: 64, n_layers: 4, n_heads: 4, embed_size: 64 }
    }
}

impl NanoGptConfig {
    /// The small model used throughout tests: 2 layers of width 32.
    pub fn toy() -> Self {
        Self { vocab_size: 65, block_size: 16, n_layers: 2, n_heads: 4, embed_size: 32 }
    }

    pub fn validate(&self) -> Result<(), ZooError> {
        let bad = |m: &str| Err(ZooError::Config(m.to_string()));
        if self.vocab_size == 0 || self.block_size == 0 || self.embed_size == 0 || self.n_heads == 0 {
            return bad("vocab, block, embed and heads must be positive");
        }
        if !self.embed_size.is_multiple_of(self.n_heads) {
            return bad("embed_size must be divisible by n_heads");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_size / self.n_heads
    }

    /// Every weight tensor the graph reads, with its shape.
    pub fn weight_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (v, t, e) = (self.vocab_size, self.block_size, self.embed_size);
        let mut out = vec![("wte".to_string(), vec![v, e]), ("wpe".to_string(), vec![t, e])];
        for l in 0..self.n_layers {
            let p = format!("h{}", l);
            for ln in ["ln1", "ln2"] {
                out.push((format!("{}.{}.weight", p, ln), vec![e]));
                out.push((format!("{}.{}.bias", p, ln), vec![e]));
            }
            for lin in ["q", "k", "v", "proj"] {
                out.push((format!("{}.attn.{}.weight", p, lin), vec![e, e]));
                out.push((format!("{}.attn.{}.bias", p, lin), vec![e]));
            }
            out.push((format!("{}.mlp.fc.weight", p), vec![e, 4 * e]));
            out.push((format!("{}.mlp.fc.bias", p), vec![4 * e]));
            out.push((format!("{}.mlp.proj.weight", p), vec![4 * e, e]));
            out.push((format!("{}.mlp.proj.bias", p), vec![e]));
        }
        out.push(("ln_f.weight".to_string(), vec![e]));
        out.push(("ln_f.bias".to_string(), vec![e]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.weight_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Builds the composite-level graph: token Gather plus positional Add, masked
/// multi-head attention and GELU MLP per block, final LayerNorm, and an LM
/// head tied to the token embedding.
pub fn build_nanogpt(cfg: &NanoGptConfig, weights: &WeightStore) -> Result<Graph, ZooError> {
    cfg.validate()?;
    for (name, shape) in cfg.weight_shapes() {
        weights.require(&name, &shape)?;
    }
    let (v, t, e, h, hd) = (cfg.vocab_size, cfg.block_size, cfg.embed_size, cfg.n_heads, cfg.head_dim());
    let mut b = GraphBuilder::default();
    b.input("tokens", vec![t], InputKind::Tokens { vocab: v });
    for (name, shape) in cfg.weight_shapes() {
        b.param(&name, shape);
    }
    b.literal("attn.scale", vec![], vec![1.0 / (hd as f64).sqrt()]);

    b.node("tok_emb", OpKind::Gather, &["wte", "tokens"], vec![t, e]);
    b.node("emb", OpKind::Add, &["tok_emb", "wpe"], vec![t, e]);
    let mut x = b.node("emb.drop", OpKind::Dropout { rate: 0.0 }, &["emb"], vec![t, e]);
    let einsum = |s: &str| OpKind::Einsum(EinsumSpec::parse(s).expect("static spec"));
    let swap = OpKind::Transpose { perm: vec![1, 0, 2] };

    for l in 0..cfg.n_layers {
        let p = format!("h{}", l);
        let ln1 = b.layernorm(&format!("{}.ln1", p), &x, vec![t, e]);
        let mut heads = Vec::new();
        for which in ["q", "k", "v"] {
            let base = format!("{}.attn.{}", p, which);
            let lin = b.linear(&base, &ln1, e);
            let split = b.node(&format!("{}.split", base), OpKind::Reshape, &[&lin], vec![t, h, hd]);
            heads.push(b.node(&format!("{}.heads", base), swap.clone(), &[&split], vec![h, t, hd]));
        }
        let a = format!("{}.attn", p);
        let scores =
            b.node(&format!("{}.scores", a), einsum("htd,hsd->hts"), &[&heads[0], &heads[1]], vec![h, t, t]);
        let scaled =
            b.node(&format!("{}.scaled", a), einsum("hts,->hts"), &[&scores, "attn.scale"], vec![h, t, t]);
        let probs =
            b.node(&format!("{}.probs", a), OpKind::Softmax { causal: true }, &[&scaled], vec![h, t, t]);
        let mix = b.node(&format!("{}.mix", a), einsum("hts,hsd->htd"), &[&probs, &heads[2]], vec![h, t, hd]);
        let merged_t = b.node(&format!("{}.unheads", a), swap.clone(), &[&mix], vec![t, h, hd]);
        let merged = b.node(&format!("{}.merge", a), OpKind::Reshape, &[&merged_t], vec![t, e]);
        let proj = b.linear(&format!("{}.proj", a), &merged, e);
        let drop = b.node(&format!("{}.drop", a), OpKind::Dropout { rate: 0.0 }, &[&proj], vec![t, e]);
        let res1 = b.node(&format!("{}.res1", p), OpKind::Add, &[&x, &drop], vec![t, e]);

        let ln2 = b.layernorm(&format!("{}.ln2", p), &res1, vec![t, e]);
        let fc = b.linear(&format!("{}.mlp.fc", p), &ln2, 4 * e);
        let act = b.node(
            &format!("{}.mlp.gelu", p),
            OpKind::Nonlinear(crate::field::FunctionId::Gelu),
            &[&fc],
            vec![t, 4 * e],
        );
        let proj = b.linear(&format!("{}.mlp.proj", p), &act, e);
        let drop = b.node(&format!("{}.mlp.drop", p), OpKind::Dropout { rate: 0.0 }, &[&proj], vec![t, e]);
        x = b.node(&format!("{}.res2", p), OpKind::Add, &[&res1, &drop], vec![t, e]);
    }
    let lnf = b.layernorm("ln_f", &x, vec![t, e]);
    b.node("logits", einsum("te,ve->tv"), &[&lnf, "wte"], vec![t, v]);
    b.output("logits");
    b.finish()
}

/// Seeded weights for a config. Token embeddings use σ = 0.15, positional
/// embeddings σ = 0.8, linear layers σ = 0.02, LayerNorm γ = 1 and β = 0;
/// every value is snapped to the `2^-frac_bits` grid so quantization is exact.
pub fn init_nanogpt(cfg: &NanoGptConfig, seed: u64, frac_bits: u32) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    let mut shapes = cfg.weight_shapes();
    shapes.sort();
    for (name, shape) in shapes {
        let t = if name.contains(".ln") || name.starts_with("ln_f") {
            WeightTensor::filled(shape, if name.ends_with(".weight") { 1.0 } else { 0.0 })
        } else {
            let sigma = match name.as_str() {
                "wte" => 0.15,
                "wpe" => 0.8,
                _ => 0.02,
            };
            gaussian_tensor(&mut rng, shape, sigma, frac_bits)
        };
        store.insert(name, t);
    }
    store
}

pub(crate) fn gaussian_tensor(
    rng: &mut ChaCha8Rng,
    shape: Vec<usize>,
    sigma: f64,
    frac_bits: u32,
) -> WeightTensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, sigma).expect("positive sigma");
    let scale = (1u64 << frac_bits) as f64;
    let data = (0..n).map(|_| ((rng.sample(dist) * scale).round() / scale) as f32).collect();
    WeightTensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_configs() {
        let cfg = NanoGptConfig { embed_size: 30, ..NanoGptConfig::toy() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_weight_is_named() {
        let cfg = NanoGptConfig::toy();
        let mut w = init_nanogpt(&cfg, 1, 7);
        let mut pruned = WeightStore::new();
        for (k, v) in w.iter() {
            if k != "h1.mlp.fc.bias" {
                pruned.insert(k.clone(), v.clone());
            }
        }
        let err = build_nanogpt(&cfg, &pruned).unwrap_err();
        assert_eq!(err.to_string(), "missing weight tensor h1.mlp.fc.bias");
        w.insert("wte", WeightTensor::filled(vec![3, 3], 0.0));
        assert!(build_nanogpt(&cfg, &w).is_err());
    }

    #[test]
    fn init_is_deterministic_and_on_grid() {
        let cfg = NanoGptConfig::toy();
        let a = init_nanogpt(&cfg, 7, 7);
        assert_eq!(a, init_nanogpt(&cfg, 7, 7));
        assert_ne!(a, init_nanogpt(&cfg, 8, 7));
        for (_, t) in a.iter() {
            assert!(t.data.iter().all(|x| (x * 128.0).fract() == 0.0));
        }
    }
}
