//! Computational-graph IR: text format, shape inference, einsum-centric
//! reduction and the quantized evaluation oracle.

mod einsum;
mod eval;
mod reduce;
mod shape;
mod text;

use std::collections::HashMap;
use std::fmt;

pub use einsum::{row_major_strides, EinsumPlan, EinsumSpec};
pub use eval::{
    evaluate_quantized, prepare_inputs, tensor_scales, wiring_sources, Evaluation, ModelInput, ParamValues,
    Tensor, WireSource,
};
pub use reduce::reduce;
pub use shape::infer_shape;
pub(crate) use shape::matmul_spec;
pub use text::{parse_graph, write_graph, FORMAT_VERSION};

use crate::field::FunctionId;

pub type Shape = Vec<usize>;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("graph is not a DAG: cycle through node {0}")]
    NotDag(String),
    #[error("unsupported op {op:?} at node {node}")]
    UnsupportedOp { node: String, op: String },
    #[error("unsupported composite {op} at node {node}: {msg}")]
    UnsupportedComposite { node: String, op: String, msg: String },
    #[error("shape error at node {node}: {msg}")]
    Shape { node: String, msg: String },
    #[error("undefined tensor {tensor} referenced by {node}")]
    UndefinedTensor { tensor: String, node: String },
    #[error("duplicate tensor id {0}")]
    Duplicate(String),
    #[error("bad einsum spec {spec:?}: {msg}")]
    Einsum { spec: String, msg: String },
    #[error("scale error at node {node}: {msg}")]
    Scale { node: String, msg: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("missing weight tensor {0}")]
    MissingParam(String),
    #[error("node {node} requires a reduced graph")]
    NotReduced { node: String },
}

/// How a graph input is supplied.
#[derive(Clone, Debug, PartialEq)]
pub enum InputKind {
    /// Real values quantized to the fixed-point grid.
    Fixed,
    /// Token ids in `[0, vocab)`, consumed by `Gather`.
    Tokens { vocab: usize },
    /// Token ids supplied as a `[T, vocab]` one-hot matrix of fixed-point ones.
    OneHot { vocab: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SourceKind {
    Input(InputKind),
    /// Named tensor resolved from the weights file.
    Param,
    /// Inline real constant, quantized with the run's config.
    Literal(Vec<f64>),
}

/// A tensor with no producing node: graph input, weight, or literal.
#[derive(Clone, Debug, PartialEq)]
pub struct Source {
    pub id: String,
    pub kind: SourceKind,
    pub shape: Shape,
}

impl Source {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_input(&self) -> bool {
        matches!(self.kind, SourceKind::Input(_))
    }

    pub fn is_const(&self) -> bool {
        !self.is_input()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Einsum(EinsumSpec),
    Add,
    Sub,
    Mul,
    Nonlinear(FunctionId),
    /// Divide a double-scale tensor by `2^f`.
    Rescale,
    /// Target shape is the node's shape.
    Reshape,
    Transpose {
        perm: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    /// Broadcast to the node's shape; input axis `i` lands on `axes[i]`.
    Expand {
        axes: Vec<usize>,
    },
    /// Strict upper triangle of the last two axes set to the mask value.
    MaskFill,
    // composites, removed by `reduce`
    Gather,
    MatMul,
    Softmax {
        causal: bool,
    },
    LayerNorm {
        eps: f64,
    },
    Dropout {
        rate: f64,
    },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Einsum(_) => "einsum",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Nonlinear(f) => match f {
                FunctionId::Relu => "relu",
                FunctionId::Gelu => "gelu",
                FunctionId::Exp => "exp",
                FunctionId::Recip => "recip",
                FunctionId::Rsqrt => "rsqrt",
                FunctionId::RescaleDiv => "rescale_div",
            },
            OpKind::Rescale => "rescale",
            OpKind::Reshape => "reshape",
            OpKind::Transpose { .. } => "transpose",
            OpKind::Concat { .. } => "concat",
            OpKind::Expand { .. } => "expand",
            OpKind::MaskFill => "maskfill",
            OpKind::Gather => "gather",
            OpKind::MatMul => "matmul",
            OpKind::Softmax { .. } => "softmax",
            OpKind::LayerNorm { .. } => "layernorm",
            OpKind::Dropout { .. } => "dropout",
        }
    }

    /// Coarse family used for profiling breakdowns.
    pub fn family(&self) -> &'static str {
        match self {
            OpKind::Nonlinear(_) => "nonlinear",
            other => other.name(),
        }
    }

    pub fn is_composite(&self) -> bool {
        matches!(
            self,
            OpKind::Gather
                | OpKind::MatMul
                | OpKind::Softmax { .. }
                | OpKind::LayerNorm { .. }
                | OpKind::Dropout { .. }
        )
    }

    pub fn is_wiring(&self) -> bool {
        matches!(
            self,
            OpKind::Reshape
                | OpKind::Transpose { .. }
                | OpKind::Concat { .. }
                | OpKind::Expand { .. }
                | OpKind::MaskFill
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: OpKind,
    pub inputs: Vec<String>,
    pub shape: Shape,
}

impl Node {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A validated graph: sources, topologically ordered nodes, outputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Graph {
    pub sources: Vec<Source>,
    pub nodes: Vec<Node>,
    pub outputs: Vec<String>,
}

/// Where a tensor id comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRef {
    Source(usize),
    Node(usize),
}

impl Graph {
    /// Checks ids, ordering and shapes; every constructor funnels through here.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut shapes: HashMap<&str, &[usize]> = HashMap::new();
        for s in &self.sources {
            if shapes.insert(&s.id, &s.shape).is_some() {
                return Err(GraphError::Duplicate(s.id.clone()));
            }
            match &s.kind {
                SourceKind::Literal(v) if v.len() != s.numel() => {
                    return Err(GraphError::Shape {
                        node: s.id.clone(),
                        msg: format!("literal has {} values for shape {:?}", v.len(), s.shape),
                    })
                }
                SourceKind::Input(InputKind::Tokens { .. }) if s.shape.len() != 1 => {
                    return Err(GraphError::Shape {
                        node: s.id.clone(),
                        msg: "token input must be rank 1".into(),
                    })
                }
                SourceKind::Input(InputKind::OneHot { vocab })
                    if s.shape.len() != 2 || s.shape[1] != *vocab =>
                {
                    return Err(GraphError::Shape {
                        node: s.id.clone(),
                        msg: "one-hot input must be [T, vocab]".into(),
                    })
                }
                _ => {}
            }
        }
        for n in &self.nodes {
            let mut in_shapes = Vec::with_capacity(n.inputs.len());
            for i in &n.inputs {
                let s = shapes
                    .get(i.as_str())
                    .ok_or_else(|| GraphError::UndefinedTensor { tensor: i.clone(), node: n.id.clone() })?;
                in_shapes.push(*s);
            }
            let inferred = infer_shape(self, n, &in_shapes)?;
            if inferred != n.shape {
                return Err(GraphError::Shape {
                    node: n.id.clone(),
                    msg: format!("declared {:?}, inferred {:?}", n.shape, inferred),
                });
            }
            if shapes.insert(&n.id, &n.shape).is_some() {
                return Err(GraphError::Duplicate(n.id.clone()));
            }
        }
        for o in &self.outputs {
            if !shapes.contains_key(o.as_str()) {
                return Err(GraphError::UndefinedTensor { tensor: o.clone(), node: "outputs".into() });
            }
        }
        Ok(())
    }

    pub fn lookup(&self, id: &str) -> Option<TensorRef> {
        self.sources
            .iter()
            .position(|s| s.id == id)
            .map(TensorRef::Source)
            .or_else(|| self.nodes.iter().position(|n| n.id == id).map(TensorRef::Node))
    }

    /// Id → location map for repeated lookups.
    pub fn index(&self) -> HashMap<&str, TensorRef> {
        let mut m = HashMap::with_capacity(self.sources.len() + self.nodes.len());
        for (i, s) in self.sources.iter().enumerate() {
            m.insert(s.id.as_str(), TensorRef::Source(i));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            m.insert(n.id.as_str(), TensorRef::Node(i));
        }
        m
    }

    pub fn shape_of(&self, id: &str) -> Option<&[usize]> {
        match self.lookup(id)? {
            TensorRef::Source(i) => Some(&self.sources[i].shape),
            TensorRef::Node(i) => Some(&self.nodes[i].shape),
        }
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Source> {
        self.sources.iter().filter(|s| s.is_input())
    }

    pub fn params(&self) -> impl Iterator<Item = &Source> {
        self.sources.iter().filter(|s| matches!(s.kind, SourceKind::Param))
    }

    /// Number of model parameters: total size of weight tensors.
    pub fn param_count(&self) -> usize {
        self.params().map(Source::numel).sum()
    }

    pub fn is_reduced(&self) -> bool {
        self.nodes.iter().all(|n| !n.op.is_composite())
            && self.inputs().all(|s| !matches!(s.kind, SourceKind::Input(InputKind::Tokens { .. })))
    }

    /// Number of nodes with each op name.
    pub fn op_histogram(&self) -> std::collections::BTreeMap<&'static str, usize> {
        let mut h = std::collections::BTreeMap::new();
        for n in &self.nodes {
            *h.entry(n.op.name()).or_insert(0) += 1;
        }
        h
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&write_graph(self))
    }
}
