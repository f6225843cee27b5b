//! Model builders, canonical weight files and model commitments.

mod commit;
mod mlp;
mod nanogpt;
pub mod reference;
mod weights;

pub use commit::{commit, commit_bytes, ModelCommitment};
pub use mlp::{build_mlp, init_mlp, MlpConfig};
pub use nanogpt::{build_nanogpt, init_nanogpt, NanoGptConfig};
pub use weights::{WeightStore, WeightTensor, WEIGHTS_VERSION};

use crate::graph::{matmul_spec, Graph, GraphError, InputKind, Node, OpKind, Shape, Source, SourceKind};

#[derive(Debug, thiserror::Error)]
pub enum ZooError {
    #[error("missing weight tensor {0}")]
    MissingWeight(String),
    #[error("weight {name} has shape {found:?}, expected {expected:?}")]
    WeightShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("malformed weights file: {0}")]
    Format(String),
    #[error("weight {name}: {msg}")]
    Quantize { name: String, msg: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Incremental graph construction for the builders.
#[derive(Default)]
pub(crate) struct GraphBuilder {
    g: Graph,
}

impl GraphBuilder {
    pub fn input(&mut self, id: &str, shape: Shape, kind: InputKind) {
        self.g.sources.push(Source { id: id.into(), kind: SourceKind::Input(kind), shape });
    }

    pub fn param(&mut self, id: &str, shape: Shape) {
        self.g.sources.push(Source { id: id.into(), kind: SourceKind::Param, shape });
    }

    pub fn literal(&mut self, id: &str, shape: Shape, values: Vec<f64>) {
        self.g.sources.push(Source { id: id.into(), kind: SourceKind::Literal(values), shape });
    }

    pub fn node(&mut self, id: &str, op: OpKind, inputs: &[&str], shape: Shape) -> String {
        self.g.nodes.push(Node {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            shape,
        });
        id.to_string()
    }

    fn shape_of(&self, id: &str) -> Shape {
        self.g.shape_of(id).expect("builder references known tensors").to_vec()
    }

    /// `x @ {base}.weight + {base}.bias`, named `{base}`.
    pub fn linear(&mut self, base: &str, x: &str, out: usize) -> String {
        let w = format!("{}.weight", base);
        let xs = self.shape_of(x);
        let spec = matmul_spec(&xs, &self.shape_of(&w)).expect("linear shapes agree");
        let mut shape = xs[..xs.len() - 1].to_vec();
        shape.push(out);
        let mm = self.node(&format!("{}.matmul", base), OpKind::Einsum(spec), &[x, &w], shape.clone());
        self.node(base, OpKind::Add, &[&mm, &format!("{}.bias", base)], shape)
    }

    pub fn layernorm(&mut self, base: &str, x: &str, shape: Shape) -> String {
        let (w, b) = (format!("{}.weight", base), format!("{}.bias", base));
        self.node(base, OpKind::LayerNorm { eps: 1e-5 }, &[x, &w, &b], shape)
    }

    pub fn output(&mut self, id: &str) {
        self.g.outputs.push(id.into());
    }

    pub fn finish(self) -> Result<Graph, ZooError> {
        self.g.validate()?;
        Ok(self.g)
    }
}
