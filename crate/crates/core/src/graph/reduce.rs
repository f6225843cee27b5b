use std::collections::{HashMap, HashSet};

use super::eval::{mean_literal, tensor_scales};
use super::shape::matmul_spec;
use super::{EinsumSpec, Graph, GraphError, InputKind, Node, OpKind, Shape, Source, SourceKind};
use crate::field::FunctionId;

const LABELS: &str = "abcdefghijklmnopqrstuvwxyz";

struct Builder {
    sources: Vec<Source>,
    nodes: Vec<Node>,
    taken: HashSet<String>,
    alias: HashMap<String, String>,
}

impl Builder {
    fn fresh(&mut self, base: &str) -> String {
        let mut name = base.to_string();
        let mut i = 1;
        while self.taken.contains(&name) {
            name = format!("{}.{}", base, i);
            i += 1;
        }
        self.taken.insert(name.clone());
        name
    }

    fn resolve(&self, id: &str) -> String {
        let mut cur = id;
        while let Some(next) = self.alias.get(cur) {
            cur = next;
        }
        cur.to_string()
    }

    fn shape(&self, id: &str) -> Shape {
        self.sources
            .iter()
            .find(|s| s.id == id)
            .map(|s| s.shape.clone())
            .or_else(|| self.nodes.iter().rev().find(|n| n.id == id).map(|n| n.shape.clone()))
            .expect("tensor defined earlier")
    }

    fn push(&mut self, id: String, op: OpKind, inputs: Vec<String>, shape: Shape) -> String {
        self.nodes.push(Node { id: id.clone(), op, inputs, shape });
        id
    }

    /// Intermediate node named after its composite.
    fn push_tmp(
        &mut self,
        owner: &str,
        suffix: &str,
        op: OpKind,
        inputs: Vec<String>,
        shape: Shape,
    ) -> String {
        let id = self.fresh(&format!("{}.{}", owner, suffix));
        self.push(id, op, inputs, shape)
    }

    fn literal(&mut self, base: &str, value: f64) -> String {
        if let Some(s) = self.sources.iter().find(|s| {
            s.id.starts_with(base)
                && matches!(&s.kind, SourceKind::Literal(v) if v.len() == 1 && v[0] == value)
                && s.shape.is_empty()
        }) {
            return s.id.clone();
        }
        let id = self.fresh(base);
        self.sources.push(Source { id: id.clone(), kind: SourceKind::Literal(vec![value]), shape: vec![] });
        id
    }

    /// Expands `id` to `shape` when it is smaller, aligning trailing axes.
    fn broadcast(&mut self, owner: &str, id: String, shape: &[usize]) -> String {
        let s = self.shape(&id);
        if s == shape {
            return id;
        }
        let offset = shape.len() - s.len();
        let axes = (offset..shape.len()).collect();
        self.push_tmp(owner, "bcast", OpKind::Expand { axes }, vec![id], shape.to_vec())
    }
}

fn labels(rank: usize) -> Result<String, String> {
    LABELS.get(..rank).map(str::to_string).ok_or_else(|| format!("rank {} too large", rank))
}

fn spec(s: &str) -> EinsumSpec {
    EinsumSpec::parse(s).expect("generated einsum spec")
}

/// Lowers composite ops to the reduced set and makes every rescale explicit.
///
/// Lowerings: MatMul → Einsum; Gather → one-hot Einsum against the table;
/// Softmax → [MaskFill] Exp, row-sum Einsum, Recip, Expand, Mul, Rescale;
/// LayerNorm → mean Einsum, Sub, square, variance Einsum, Rsqrt, Mul, gamma
/// Einsum, beta Add; Dropout → removed. Broadcasting binary ops get explicit
/// Expand nodes. Any double-scale tensor read by a non-rescale consumer gets a
/// Rescale node, which takes over the tensor's id.
pub fn reduce(g: &Graph) -> Result<Graph, GraphError> {
    let mut taken: HashSet<String> = g.sources.iter().map(|s| s.id.clone()).collect();
    taken.extend(g.nodes.iter().map(|n| n.id.clone()));
    let mut b = Builder { sources: g.sources.clone(), nodes: Vec::new(), taken, alias: HashMap::new() };

    for n in &g.nodes {
        let inputs: Vec<String> = n.inputs.iter().map(|i| b.resolve(i)).collect();
        let composite = |msg: String| GraphError::UnsupportedComposite {
            node: n.id.clone(),
            op: n.op.name().to_string(),
            msg,
        };
        match &n.op {
            OpKind::Dropout { rate } => {
                if *rate != 0.0 {
                    return Err(composite(format!("dropout rate {} at inference", rate)));
                }
                b.alias.insert(n.id.clone(), inputs[0].clone());
            }
            OpKind::MatMul => {
                let (sa, sb) = (b.shape(&inputs[0]), b.shape(&inputs[1]));
                let s = matmul_spec(&sa, &sb).ok_or_else(|| composite("unsupported operand ranks".into()))?;
                b.push(n.id.clone(), OpKind::Einsum(s), inputs, n.shape.clone());
            }
            OpKind::Gather => {
                let src = b
                    .sources
                    .iter_mut()
                    .find(|s| s.id == inputs[1])
                    .ok_or_else(|| composite("indices are not a graph input".into()))?;
                match src.kind {
                    SourceKind::Input(InputKind::Tokens { vocab }) => {
                        src.kind = SourceKind::Input(InputKind::OneHot { vocab });
                        src.shape = vec![src.shape[0], vocab];
                    }
                    SourceKind::Input(InputKind::OneHot { .. }) => {}
                    _ => return Err(composite("indices are not a token input".into())),
                }
                b.push(
                    n.id.clone(),
                    OpKind::Einsum(spec("tv,ve->te")),
                    vec![inputs[1].clone(), inputs[0].clone()],
                    n.shape.clone(),
                );
            }
            OpKind::Softmax { causal } => {
                let shape = n.shape.clone();
                let r = shape.len();
                let l = labels(r).map_err(composite)?;
                let mut cur = inputs[0].clone();
                if *causal {
                    if r < 2 {
                        return Err(composite("causal softmax needs rank >= 2".into()));
                    }
                    cur = b.push_tmp(&n.id, "mask", OpKind::MaskFill, vec![cur], shape.clone());
                }
                let e =
                    b.push_tmp(&n.id, "exp", OpKind::Nonlinear(FunctionId::Exp), vec![cur], shape.clone());
                let row = shape[..r - 1].to_vec();
                let sum = b.push_tmp(
                    &n.id,
                    "sum",
                    OpKind::Einsum(spec(&format!("{}->{}", l, &l[..r - 1]))),
                    vec![e.clone()],
                    row.clone(),
                );
                let rec = b.push_tmp(&n.id, "recip", OpKind::Nonlinear(FunctionId::Recip), vec![sum], row);
                let rb = b.push_tmp(
                    &n.id,
                    "bcast",
                    OpKind::Expand { axes: (0..r - 1).collect() },
                    vec![rec],
                    shape.clone(),
                );
                b.push(n.id.clone(), OpKind::Mul, vec![e, rb], shape);
            }
            OpKind::LayerNorm { .. } => {
                let shape = n.shape.clone();
                let r = shape.len();
                let e = shape[r - 1];
                let l = labels(r).map_err(composite)?;
                let (x, gamma, beta) = (inputs[0].clone(), inputs[1].clone(), inputs[2].clone());
                let c = b.literal(&format!("const.inv{}", e), mean_literal(e));
                let row = shape[..r - 1].to_vec();
                let mean_spec = spec(&format!("{},->{}", l, &l[..r - 1]));
                let row_axes: Vec<usize> = (0..r - 1).collect();

                let mu = b.push_tmp(
                    &n.id,
                    "mean",
                    OpKind::Einsum(mean_spec.clone()),
                    vec![x.clone(), c.clone()],
                    row.clone(),
                );
                let mub = b.push_tmp(
                    &n.id,
                    "mean_bcast",
                    OpKind::Expand { axes: row_axes.clone() },
                    vec![mu],
                    shape.clone(),
                );
                let d = b.push_tmp(&n.id, "centered", OpKind::Sub, vec![x, mub], shape.clone());
                let sq = b.push_tmp(&n.id, "square", OpKind::Mul, vec![d.clone(), d.clone()], shape.clone());
                let var = b.push_tmp(&n.id, "var", OpKind::Einsum(mean_spec), vec![sq, c], row.clone());
                let rs = b.push_tmp(&n.id, "rsqrt", OpKind::Nonlinear(FunctionId::Rsqrt), vec![var], row);
                let rsb = b.push_tmp(
                    &n.id,
                    "rsqrt_bcast",
                    OpKind::Expand { axes: row_axes },
                    vec![rs],
                    shape.clone(),
                );
                let y = b.push_tmp(&n.id, "norm", OpKind::Mul, vec![d, rsb], shape.clone());
                let z = b.push_tmp(
                    &n.id,
                    "scale",
                    OpKind::Einsum(spec(&format!("{},{}->{}", l, &l[r - 1..], l))),
                    vec![y, gamma],
                    shape.clone(),
                );
                let bb = b.push_tmp(
                    &n.id,
                    "shift_bcast",
                    OpKind::Expand { axes: vec![r - 1] },
                    vec![beta],
                    shape.clone(),
                );
                b.push(n.id.clone(), OpKind::Add, vec![z, bb], shape);
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let x = b.broadcast(&n.id, inputs[0].clone(), &n.shape);
                let y = b.broadcast(&n.id, inputs[1].clone(), &n.shape);
                b.push(n.id.clone(), n.op.clone(), vec![x, y], n.shape.clone());
            }
            _ => {
                b.push(n.id.clone(), n.op.clone(), inputs, n.shape.clone());
            }
        }
    }
    let outputs: Vec<String> = g.outputs.iter().map(|o| b.resolve(o)).collect();
    let lowered = Graph { sources: b.sources.clone(), nodes: std::mem::take(&mut b.nodes), outputs };
    let out = insert_rescales(lowered, &mut b.taken)?;
    out.validate()?;
    Ok(out)
}

fn insert_rescales(g: Graph, taken: &mut HashSet<String>) -> Result<Graph, GraphError> {
    let scales = tensor_scales(&g)?;
    let mut needs: HashSet<&str> = HashSet::new();
    for n in &g.nodes {
        if !matches!(n.op, OpKind::Rescale) {
            needs.extend(n.inputs.iter().filter(|i| scales[*i] == 2).map(String::as_str));
        }
    }
    needs.extend(g.outputs.iter().filter(|o| scales[*o] == 2).map(String::as_str));
    if needs.is_empty() {
        return Ok(g);
    }

    let mut renamed: HashMap<String, String> = HashMap::new();
    let mut nodes = Vec::with_capacity(g.nodes.len() + needs.len());
    for n in &g.nodes {
        let mut node = n.clone();
        if matches!(node.op, OpKind::Rescale) {
            // an existing rescale now reads the raw producer
            if let Some(raw) = renamed.get(&node.inputs[0]) {
                node.inputs[0] = raw.clone();
            }
        }
        if needs.contains(n.id.as_str()) {
            let base = format!("{}.raw", n.id);
            let mut raw = base.clone();
            let mut i = 1;
            while taken.contains(&raw) {
                raw = format!("{}.{}", base, i);
                i += 1;
            }
            taken.insert(raw.clone());
            node.id = raw.clone();
            nodes.push(node);
            nodes.push(Node {
                id: n.id.clone(),
                op: OpKind::Rescale,
                inputs: vec![raw.clone()],
                shape: n.shape.clone(),
            });
            renamed.insert(n.id.clone(), raw);
        } else {
            nodes.push(node);
        }
    }
    Ok(Graph { sources: g.sources, nodes, outputs: g.outputs })
}
