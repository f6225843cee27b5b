use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nanogpt::gaussian_tensor;
use super::{GraphBuilder, WeightStore, ZooError};
use crate::field::FunctionId;
use crate::graph::{Graph, InputKind, OpKind};

/// Stack of square `linear → ReLU → rescale` layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpConfig {
    pub n_layers: usize,
    pub width: usize,
}

impl MlpConfig {
    /// The small model used throughout tests.
    pub fn toy() -> Self {
        Self { n_layers: 2, width: 32 }
    }

    /// Width whose parameter count is closest to `target` for `n_layers` layers.
    pub fn for_target(target: usize, n_layers: usize) -> Self {
        let n_layers = n_layers.max(1);
        let per_layer = target as f64 / n_layers as f64;
        let guess = ((-1.0 + (1.0 + 4.0 * per_layer).sqrt()) / 2.0).floor().max(1.0) as usize;
        let width = (guess.saturating_sub(1).max(1)..=guess + 2)
            .min_by_key(|&w| (Self { n_layers, width: w }.param_count() as i64 - target as i64).abs())
            .expect("non-empty range");
        Self { n_layers, width }
    }

    pub fn validate(&self) -> Result<(), ZooError> {
        if self.width == 0 {
            return Err(ZooError::Config("width must be positive".into()));
        }
        Ok(())
    }

    pub fn weight_shapes(&self) -> Vec<(String, Vec<usize>)> {
        (0..self.n_layers)
            .flat_map(|l| {
                [
                    (format!("l{}.weight", l), vec![self.width, self.width]),
                    (format!("l{}.bias", l), vec![self.width]),
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.n_layers * (self.width * self.width + self.width)
    }
}

pub fn build_mlp(cfg: &MlpConfig, weights: &WeightStore) -> Result<Graph, ZooError> {
    cfg.validate()?;
    for (name, shape) in cfg.weight_shapes() {
        weights.require(&name, &shape)?;
    }
    let w = cfg.width;
    let mut b = GraphBuilder::default();
    b.input("x", vec![w], InputKind::Fixed);
    for (name, shape) in cfg.weight_shapes() {
        b.param(&name, shape);
    }
    let mut x = "x".to_string();
    for l in 0..cfg.n_layers {
        let lin = b.linear(&format!("l{}", l), &x, w);
        x = b.node(&format!("l{}.relu", l), OpKind::Nonlinear(FunctionId::Relu), &[&lin], vec![w]);
    }
    b.output(&x);
    b.finish()
}

/// Seeded weights: σ = 1/sqrt(width) for matrices, 0.02 for biases, snapped
/// to the fixed-point grid.
pub fn init_mlp(cfg: &MlpConfig, seed: u64, frac_bits: u32) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    let mut shapes = cfg.weight_shapes();
    shapes.sort();
    for (name, shape) in shapes {
        let sigma = if name.ends_with(".weight") { 1.0 / (cfg.width as f64).sqrt() } else { 0.02 };
        store.insert(name, gaussian_tensor(&mut rng, shape, sigma, frac_bits));
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_for_target() {
        for (target, layers) in [(200_000, 4), (53_472, 4), (1000, 1), (50_000, 2)] {
            let cfg = MlpConfig::for_target(target, layers);
            let n = cfg.param_count() as f64;
            assert!((n - target as f64).abs() / target as f64 <= 0.01, "{:?} gives {}", cfg, n);
        }
    }

    #[test]
    fn single_layer_structure() {
        let cfg = MlpConfig { n_layers: 1, width: 2 };
        let g = build_mlp(&cfg, &init_mlp(&cfg, 0, 7)).unwrap();
        let ops: Vec<&str> = g.nodes.iter().map(|n| n.op.name()).collect();
        assert_eq!(ops, ["einsum", "add", "relu"]);
    }
}
