use std::collections::{BTreeMap, HashMap};

use super::einsum::row_major_strides;
use super::shape::matmul_spec;
use super::{EinsumPlan, EinsumSpec, Graph, GraphError, InputKind, OpKind, Shape, SourceKind};
use crate::field::{quantize_fixed, rescale_div, FieldElement, FunctionId, QuantConfig};

/// Dense row-major tensor of fixed-point integers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<i64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<i64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0; n] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_field(&self) -> Vec<FieldElement> {
        self.data.iter().map(|&v| FieldElement::from_i64(v)).collect()
    }
}

/// Quantized weights by name.
pub type ParamValues = BTreeMap<String, Tensor>;

/// A value for one graph input, before encoding.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelInput {
    Tokens(Vec<usize>),
    Values(Vec<f64>),
}

/// Encodes model inputs in graph-input order. Token inputs stay as raw ids for
/// `Gather`; one-hot inputs become `[T, vocab]` matrices of fixed-point ones.
pub fn prepare_inputs(
    g: &Graph,
    inputs: &[ModelInput],
    cfg: &QuantConfig,
) -> Result<Vec<Tensor>, GraphError> {
    let decl: Vec<_> = g.inputs().collect();
    if decl.len() != inputs.len() {
        return Err(GraphError::Input(format!("graph has {} inputs, {} supplied", decl.len(), inputs.len())));
    }
    decl.iter()
        .zip(inputs)
        .map(|(src, value)| {
            let SourceKind::Input(kind) = &src.kind else { unreachable!() };
            let bad = |msg: String| GraphError::Input(format!("{}: {}", src.id, msg));
            match (kind, value) {
                (InputKind::Fixed, ModelInput::Values(v)) => {
                    if v.len() != src.numel() {
                        return Err(bad(format!("expected {} values, got {}", src.numel(), v.len())));
                    }
                    let data = v
                        .iter()
                        .map(|&x| quantize_fixed(x, cfg).map_err(|e| bad(e.to_string())))
                        .collect::<Result<_, _>>()?;
                    Ok(Tensor::new(src.shape.clone(), data))
                }
                (InputKind::Tokens { vocab } | InputKind::OneHot { vocab }, ModelInput::Tokens(ids)) => {
                    let t = src.shape[0];
                    if ids.len() != t {
                        return Err(bad(format!("expected {} tokens, got {}", t, ids.len())));
                    }
                    if let Some(&bad_id) = ids.iter().find(|&&i| i >= *vocab) {
                        return Err(bad(format!("token {} outside vocabulary of {}", bad_id, vocab)));
                    }
                    if matches!(kind, InputKind::Tokens { .. }) {
                        Ok(Tensor::new(vec![t], ids.iter().map(|&i| i as i64).collect()))
                    } else {
                        let mut data = vec![0; t * vocab];
                        for (row, &id) in ids.iter().enumerate() {
                            data[row * vocab + id] = cfg.scale();
                        }
                        Ok(Tensor::new(vec![t, *vocab], data))
                    }
                }
                _ => Err(bad("input kind does not match supplied value".into())),
            }
        })
        .collect()
}

/// Scale exponent of every tensor: 0 for token ids, 1 for `2^f`, 2 for `2^2f`.
/// Any non-rescale consumer of a scale-2 tensor sees it rescaled first.
pub fn tensor_scales(g: &Graph) -> Result<HashMap<String, u8>, GraphError> {
    let mut s: HashMap<String, u8> = HashMap::new();
    for src in &g.sources {
        let v = match src.kind {
            SourceKind::Input(InputKind::Tokens { .. }) => 0,
            _ => 1,
        };
        s.insert(src.id.clone(), v);
    }
    for n in &g.nodes {
        let ins: Vec<u8> = n.inputs.iter().map(|i| s[i]).collect();
        let scale_err = |msg: &str| GraphError::Scale { node: n.id.clone(), msg: msg.to_string() };
        let v = match &n.op {
            OpKind::Rescale => {
                if ins[0] != 2 {
                    return Err(scale_err("rescale input is not double scale"));
                }
                1
            }
            OpKind::Einsum(spec) => spec.n_operands() as u8,
            OpKind::Mul | OpKind::MatMul => 2,
            OpKind::Gather => {
                if ins[1] != 0 {
                    return Err(scale_err("gather indices must be token ids"));
                }
                1
            }
            _ => 1,
        };
        if !matches!(n.op, OpKind::Gather) && ins.contains(&0) {
            return Err(scale_err("token ids used outside gather"));
        }
        s.insert(n.id.clone(), v);
    }
    Ok(s)
}

/// Result of one quantized forward pass.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Values of sources: inputs as supplied, constants quantized.
    pub sources: Vec<Tensor>,
    /// Raw node outputs, double-scale where the op doubles scale.
    pub nodes: Vec<Tensor>,
    /// Graph outputs at single scale.
    pub outputs: Vec<Tensor>,
    /// Values clamped into the lookup range.
    pub saturations: usize,
}

struct Ctx<'a> {
    cfg: &'a QuantConfig,
    saturations: usize,
}

impl Ctx<'_> {
    fn rescale(&mut self, t: &Tensor) -> Tensor {
        let data = t
            .data
            .iter()
            .map(|&q| {
                let (v, sat) = self.cfg.saturate(rescale_div(q, self.cfg.frac_bits()));
                self.saturations += usize::from(sat);
                v
            })
            .collect();
        Tensor::new(t.shape.clone(), data)
    }

    fn lookup(&mut self, f: FunctionId, t: &Tensor) -> Tensor {
        let data = t
            .data
            .iter()
            .map(|&q| {
                let (v, sat) = f.eval_saturating(q, self.cfg);
                self.saturations += usize::from(sat);
                v
            })
            .collect();
        Tensor::new(t.shape.clone(), data)
    }
}

/// Where a wiring op's output element comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WireSource {
    Input { operand: usize, index: usize },
    Mask,
}

/// Source of every output element of a wiring op, in row-major order.
pub fn wiring_sources(op: &OpKind, in_shapes: &[&[usize]], out_shape: &[usize]) -> Vec<WireSource> {
    let n: usize = out_shape.iter().product();
    let input = |operand, index| WireSource::Input { operand, index };
    match op {
        OpKind::Reshape => (0..n).map(|i| input(0, i)).collect(),
        OpKind::Transpose { perm } => {
            let in_strides = row_major_strides(in_shapes[0]);
            let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
            multi_index_offsets(out_shape, &strides).into_iter().map(|i| input(0, i)).collect()
        }
        OpKind::Expand { axes } => {
            let src = in_shapes[0];
            let src_strides = row_major_strides(src);
            let mut strides = vec![0; out_shape.len()];
            for (i, &a) in axes.iter().enumerate() {
                if src[i] != 1 {
                    strides[a] = src_strides[i];
                }
            }
            multi_index_offsets(out_shape, &strides).into_iter().map(|i| input(0, i)).collect()
        }
        OpKind::Concat { axis } => {
            let outer: usize = out_shape[..*axis].iter().product();
            let inner: usize = out_shape[axis + 1..].iter().product();
            let mut out = Vec::with_capacity(n);
            for o in 0..outer {
                for (k, s) in in_shapes.iter().enumerate() {
                    let block = s[*axis] * inner;
                    out.extend((0..block).map(|j| input(k, o * block + j)));
                }
            }
            out
        }
        OpKind::MaskFill => {
            let r = out_shape.len();
            let (rows, cols) = (out_shape[r - 2], out_shape[r - 1]);
            (0..n)
                .map(|i| {
                    let (row, col) = ((i / cols) % rows, i % cols);
                    if col > row {
                        WireSource::Mask
                    } else {
                        input(0, i)
                    }
                })
                .collect()
        }
        other => panic!("{} is not a wiring op", other.name()),
    }
}

fn multi_index_offsets(dims: &[usize], strides: &[usize]) -> Vec<usize> {
    let n: usize = dims.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; dims.len()];
    for _ in 0..n {
        out.push(idx.iter().zip(strides).map(|(i, s)| i * s).sum());
        for ax in (0..dims.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

fn wire(op: &OpKind, ins: &[&Tensor], out_shape: &[usize], mask: i64) -> Tensor {
    let shapes: Vec<&[usize]> = ins.iter().map(|t| t.shape.as_slice()).collect();
    let data = wiring_sources(op, &shapes, out_shape)
        .into_iter()
        .map(|w| match w {
            WireSource::Input { operand, index } => ins[operand].data[index],
            WireSource::Mask => mask,
        })
        .collect();
    Tensor::new(out_shape.to_vec(), data)
}

fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape == shape {
        return t.clone();
    }
    let offset = shape.len() - t.shape.len();
    let axes: Vec<usize> = (0..t.shape.len()).map(|i| i + offset).collect();
    wire(&OpKind::Expand { axes }, &[t], shape, 0)
}

fn einsum(spec: &EinsumSpec, ins: &[&Tensor]) -> Tensor {
    let shapes: Vec<&[usize]> = ins.iter().map(|t| t.shape.as_slice()).collect();
    let plan = EinsumPlan::new(spec, &shapes).expect("validated einsum");
    let data: Vec<&[i64]> = ins.iter().map(|t| t.data.as_slice()).collect();
    Tensor::new(plan.out_shape.clone(), plan.eval(&data))
}

/// Row reduction over the last axis, scaled by a fixed-point constant.
fn scaled_row_sum(x: &Tensor, c: i64) -> Tensor {
    let e = *x.shape.last().expect("rank >= 1");
    let data = x.data.chunks(e).map(|row| row.iter().map(|v| v * c).sum()).collect();
    Tensor::new(x.shape[..x.shape.len() - 1].to_vec(), data)
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(i64, i64) -> i64) -> Tensor {
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape.clone(), data)
}

/// `1/E` as a fixed-point constant; shared with the layer-norm lowering.
pub(crate) fn mean_literal(e: usize) -> f64 {
    1.0 / e as f64
}

fn quantize_literal(id: &str, v: f64, cfg: &QuantConfig) -> Result<i64, GraphError> {
    quantize_fixed(v, cfg).map_err(|e| GraphError::Input(format!("literal {}: {}", id, e)))
}

/// Evaluates a graph (reduced or not) over fixed-point integers.
///
/// Double-scale tensors consumed by anything other than `Rescale` are
/// rescaled first, so a graph and its reduction produce identical values.
pub fn evaluate_quantized(
    g: &Graph,
    inputs: &[Tensor],
    params: &ParamValues,
    cfg: &QuantConfig,
) -> Result<Evaluation, GraphError> {
    let scales = tensor_scales(g)?;
    let mut values: HashMap<&str, Tensor> = HashMap::new();
    let mut sources = Vec::with_capacity(g.sources.len());
    let mut input_iter = inputs.iter();
    for s in &g.sources {
        let t = match &s.kind {
            SourceKind::Input(_) => {
                let t = input_iter
                    .next()
                    .ok_or_else(|| GraphError::Input(format!("missing value for input {}", s.id)))?;
                if t.shape != s.shape {
                    return Err(GraphError::Input(format!(
                        "input {} has shape {:?}, expected {:?}",
                        s.id, t.shape, s.shape
                    )));
                }
                t.clone()
            }
            SourceKind::Param => {
                let t = params.get(&s.id).ok_or_else(|| GraphError::MissingParam(s.id.clone()))?;
                if t.shape != s.shape {
                    return Err(GraphError::Shape {
                        node: s.id.clone(),
                        msg: format!("weight has shape {:?}, graph expects {:?}", t.shape, s.shape),
                    });
                }
                t.clone()
            }
            SourceKind::Literal(v) => {
                let data = v.iter().map(|&x| quantize_literal(&s.id, x, cfg)).collect::<Result<_, _>>()?;
                Tensor::new(s.shape.clone(), data)
            }
        };
        sources.push(t.clone());
        values.insert(&s.id, t);
    }
    if input_iter.next().is_some() {
        return Err(GraphError::Input("more input tensors than graph inputs".into()));
    }

    let mut ctx = Ctx { cfg, saturations: 0 };
    let mut rescaled: HashMap<&str, Tensor> = HashMap::new();
    let mut nodes = Vec::with_capacity(g.nodes.len());
    for n in &g.nodes {
        let raw_input = !matches!(n.op, OpKind::Rescale);
        for i in &n.inputs {
            if raw_input && scales[i] == 2 && !rescaled.contains_key(i.as_str()) {
                let r = ctx.rescale(&values[i.as_str()]);
                rescaled.insert(i, r);
            }
        }
        let ins: Vec<&Tensor> = n
            .inputs
            .iter()
            .map(|i| match rescaled.get(i.as_str()) {
                Some(r) if raw_input => r,
                _ => &values[i.as_str()],
            })
            .collect();
        let out = eval_node(&mut ctx, n, &ins)?;
        debug_assert_eq!(out.shape, n.shape, "node {}", n.id);
        nodes.push(out.clone());
        values.insert(&n.id, out);
    }
    let outputs = g
        .outputs
        .iter()
        .map(|o| match rescaled.get(o.as_str()) {
            Some(r) => r.clone(),
            None if scales[o] == 2 => ctx.rescale(&values[o.as_str()]),
            None => values[o.as_str()].clone(),
        })
        .collect();
    Ok(Evaluation { sources, nodes, outputs, saturations: ctx.saturations })
}

fn eval_node(ctx: &mut Ctx, n: &super::Node, ins: &[&Tensor]) -> Result<Tensor, GraphError> {
    let cfg = ctx.cfg;
    Ok(match &n.op {
        OpKind::Einsum(spec) => einsum(spec, ins),
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let a = broadcast_to(ins[0], &n.shape);
            let b = broadcast_to(ins[1], &n.shape);
            match n.op {
                OpKind::Add => zip_with(&a, &b, |x, y| x + y),
                OpKind::Sub => zip_with(&a, &b, |x, y| x - y),
                _ => zip_with(&a, &b, |x, y| x * y),
            }
        }
        OpKind::Nonlinear(f) => ctx.lookup(*f, ins[0]),
        OpKind::Rescale => ctx.rescale(ins[0]),
        OpKind::Reshape
        | OpKind::Transpose { .. }
        | OpKind::Concat { .. }
        | OpKind::Expand { .. }
        | OpKind::MaskFill => wire(&n.op, ins, &n.shape, cfg.mask_value()),
        OpKind::Dropout { .. } => ins[0].clone(),
        OpKind::Gather => {
            let (table, ids) = (ins[0], ins[1]);
            let e = table.shape[1];
            let mut data = Vec::with_capacity(n.numel());
            for &id in &ids.data {
                let id = id as usize;
                data.extend_from_slice(&table.data[id * e..(id + 1) * e]);
            }
            Tensor::new(n.shape.clone(), data)
        }
        OpKind::MatMul => {
            let spec = matmul_spec(&ins[0].shape, &ins[1].shape).ok_or_else(|| GraphError::Shape {
                node: n.id.clone(),
                msg: "unsupported matmul shapes".into(),
            })?;
            einsum(&spec, ins)
        }
        OpKind::Softmax { causal } => {
            let x = if *causal {
                wire(&OpKind::MaskFill, &[ins[0]], &n.shape, cfg.mask_value())
            } else {
                ins[0].clone()
            };
            let e = ctx.lookup(FunctionId::Exp, &x);
            let s = scaled_row_sum(&e, 1);
            let r = ctx.lookup(FunctionId::Recip, &s);
            let rb = broadcast_to(&Tensor::new([r.shape.clone(), vec![1]].concat(), r.data), &n.shape);
            ctx.rescale(&zip_with(&e, &rb, |a, b| a * b))
        }
        OpKind::LayerNorm { .. } => {
            let (x, gamma, beta) = (ins[0], ins[1], ins[2]);
            let e = *x.shape.last().expect("rank >= 1");
            let c = quantize_literal(&n.id, mean_literal(e), cfg)?;
            let col = |t: Tensor| Tensor::new([t.shape.clone(), vec![1]].concat(), t.data);
            let mu = ctx.rescale(&scaled_row_sum(x, c));
            let d = zip_with(x, &broadcast_to(&col(mu), &n.shape), |a, b| a - b);
            let sq = ctx.rescale(&zip_with(&d, &d, |a, b| a * b));
            let var = ctx.rescale(&scaled_row_sum(&sq, c));
            let r = ctx.lookup(FunctionId::Rsqrt, &var);
            let y = ctx.rescale(&zip_with(&d, &broadcast_to(&col(r), &n.shape), |a, b| a * b));
            let z = ctx.rescale(&zip_with(&y, &broadcast_to(gamma, &n.shape), |a, b| a * b));
            zip_with(&z, &broadcast_to(beta, &n.shape), |a, b| a + b)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;

    fn cfg() -> QuantConfig {
        QuantConfig::default()
    }

    #[test]
    fn identity_graph() {
        let g = parse_graph("zkgraph 1\ntensors 1\nx input [3] kind=fixed\nnodes 0\noutputs x\n").unwrap();
        let x = prepare_inputs(&g, &[ModelInput::Values(vec![1.0, 2.0, 3.0])], &cfg()).unwrap();
        let ev = evaluate_quantized(&g, &x, &ParamValues::new(), &cfg()).unwrap();
        assert_eq!(ev.outputs[0].data, vec![128, 256, 384]);
    }

    #[test]
    fn relu_of_negative() {
        let g = parse_graph("zkgraph 1\ntensors 1\nx input [1] kind=fixed\nnodes 1\ny relu x\noutputs y\n")
            .unwrap();
        let ev =
            evaluate_quantized(&g, &[Tensor::new(vec![1], vec![-5])], &ParamValues::new(), &cfg()).unwrap();
        assert_eq!(ev.outputs[0].data, vec![0]);
    }

    #[test]
    fn saturation_is_counted() {
        let g = parse_graph("zkgraph 1\ntensors 1\nx input [2] kind=fixed\nnodes 1\ny mul x x\noutputs y\n")
            .unwrap();
        let x = Tensor::new(vec![2], vec![30000, 2]);
        let ev = evaluate_quantized(&g, &[x], &ParamValues::new(), &cfg()).unwrap();
        assert_eq!(ev.saturations, 1);
        assert_eq!(ev.outputs[0].data, vec![cfg().range_max(), 0]);
    }

    #[test]
    fn wiring_maps() {
        let t = OpKind::Transpose { perm: vec![1, 0] };
        let src = wiring_sources(&t, &[&[2, 3]], &[3, 2]);
        let idx: Vec<usize> = src
            .iter()
            .map(|w| match w {
                WireSource::Input { index, .. } => *index,
                WireSource::Mask => usize::MAX,
            })
            .collect();
        assert_eq!(idx, vec![0, 3, 1, 4, 2, 5]);
        let m = wiring_sources(&OpKind::MaskFill, &[&[2, 2]], &[2, 2]);
        assert_eq!(m[1], WireSource::Mask);
        assert_eq!(m[2], WireSource::Input { operand: 0, index: 2 });
        let c = wiring_sources(&OpKind::Concat { axis: 1 }, &[&[2, 1], &[2, 2]], &[2, 3]);
        assert_eq!(c[0], WireSource::Input { operand: 0, index: 0 });
        assert_eq!(c[1], WireSource::Input { operand: 1, index: 0 });
        assert_eq!(c[3], WireSource::Input { operand: 0, index: 1 });
    }

    #[test]
    fn token_inputs() {
        let g = parse_graph("zkgraph 1\ntensors 1\nt input [2] kind=onehot vocab=3\nnodes 0\noutputs t\n");
        assert!(g.is_err(), "one-hot inputs must be declared [T, vocab]");
        let g = parse_graph("zkgraph 1\ntensors 1\nt input [2,3] kind=onehot vocab=3\nnodes 0\noutputs t\n")
            .unwrap();
        let x = prepare_inputs(&g, &[ModelInput::Tokens(vec![2, 0])], &cfg()).unwrap();
        assert_eq!(x[0].data, vec![0, 0, 128, 128, 0, 0]);
        assert!(prepare_inputs(&g, &[ModelInput::Tokens(vec![3, 0])], &cfg()).is_err());
    }
}
