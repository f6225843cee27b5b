use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::shape::matmul_spec;
use super::{infer_shape, EinsumSpec, Graph, GraphError, InputKind, Node, OpKind, Source, SourceKind};
use crate::field::FunctionId;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "zkgraph";

struct Line<'a> {
    no: usize,
    tokens: Vec<&'a str>,
}

fn syntax(line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Syntax { line, msg: msg.into() }
}

fn parse_dims(line: usize, s: &str) -> Result<Vec<usize>, GraphError> {
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| syntax(line, format!("expected [d0,d1,...], got {:?}", s)))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|_| syntax(line, format!("bad dimension {:?}", d))))
        .collect()
}

fn parse_list(line: usize, s: &str) -> Result<Vec<usize>, GraphError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|d| d.parse::<usize>().map_err(|_| syntax(line, format!("bad integer {:?}", d))))
        .collect()
}

fn fmt_dims(d: &[usize]) -> String {
    let parts: Vec<String> = d.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(","))
}

fn fmt_list(d: &[usize]) -> String {
    let parts: Vec<String> = d.iter().map(|x| x.to_string()).collect();
    parts.join(",")
}

fn parse_source(l: &Line) -> Result<Source, GraphError> {
    let t = &l.tokens;
    if t.len() < 3 {
        return Err(syntax(l.no, "tensor line needs: id kind [shape]"));
    }
    let id = t[0].to_string();
    let shape = parse_dims(l.no, t[2])?;
    let attrs = attr_map(l, &t[3..])?;
    let kind = match t[1] {
        "param" => SourceKind::Param,
        "literal" => {
            let raw = attrs.get("values").ok_or_else(|| syntax(l.no, "literal needs values="))?;
            let values = if raw.is_empty() {
                Vec::new()
            } else {
                raw.split(',')
                    .map(|v| v.parse::<f64>().map_err(|_| syntax(l.no, format!("bad literal value {:?}", v))))
                    .collect::<Result<_, _>>()?
            };
            SourceKind::Literal(values)
        }
        "input" => {
            let vocab = || -> Result<usize, GraphError> {
                attrs
                    .get("vocab")
                    .ok_or_else(|| syntax(l.no, "token input needs vocab="))?
                    .parse()
                    .map_err(|_| syntax(l.no, "bad vocab"))
            };
            match attrs.get("kind").copied().unwrap_or("fixed") {
                "fixed" => SourceKind::Input(InputKind::Fixed),
                "token" => SourceKind::Input(InputKind::Tokens { vocab: vocab()? }),
                "onehot" => SourceKind::Input(InputKind::OneHot { vocab: vocab()? }),
                other => return Err(syntax(l.no, format!("unknown input kind {:?}", other))),
            }
        }
        other => return Err(syntax(l.no, format!("unknown tensor kind {:?}", other))),
    };
    Ok(Source { id, kind, shape })
}

fn attr_map<'a>(l: &Line, toks: &[&'a str]) -> Result<HashMap<&'a str, &'a str>, GraphError> {
    let mut m = HashMap::new();
    for tok in toks {
        let (k, v) =
            tok.split_once('=').ok_or_else(|| syntax(l.no, format!("expected key=value, got {:?}", tok)))?;
        if m.insert(k, v).is_some() {
            return Err(syntax(l.no, format!("repeated attribute {:?}", k)));
        }
    }
    Ok(m)
}

struct RawNode {
    line: usize,
    id: String,
    op: String,
    attrs: BTreeMap<String, String>,
    inputs: Vec<String>,
}

fn parse_node_line(l: &Line) -> Result<RawNode, GraphError> {
    if l.tokens.len() < 2 {
        return Err(syntax(l.no, "node line needs: id op [attrs] inputs..."));
    }
    let mut attrs = BTreeMap::new();
    let mut inputs = Vec::new();
    for tok in &l.tokens[2..] {
        match tok.split_once('=') {
            Some((k, v)) => {
                if attrs.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(syntax(l.no, format!("repeated attribute {:?}", k)));
                }
            }
            None => inputs.push(tok.to_string()),
        }
    }
    Ok(RawNode { line: l.no, id: l.tokens[0].to_string(), op: l.tokens[1].to_string(), attrs, inputs })
}

fn build_op(raw: &RawNode) -> Result<OpKind, GraphError> {
    let a = |k: &str| raw.attrs.get(k).map(String::as_str);
    let need = |k: &str| a(k).ok_or_else(|| syntax(raw.line, format!("{} needs {}=", raw.op, k)));
    let float = |k: &str, default: f64| -> Result<f64, GraphError> {
        a(k).map_or(Ok(default), |v| v.parse().map_err(|_| syntax(raw.line, format!("bad {}", k))))
    };
    Ok(match raw.op.as_str() {
        "einsum" => OpKind::Einsum(EinsumSpec::parse(need("spec")?)?),
        "add" => OpKind::Add,
        "sub" => OpKind::Sub,
        "mul" => OpKind::Mul,
        "rescale" => OpKind::Rescale,
        "reshape" => OpKind::Reshape,
        "transpose" => OpKind::Transpose { perm: parse_list(raw.line, need("perm")?)? },
        "concat" => OpKind::Concat { axis: need("axis")?.parse().map_err(|_| syntax(raw.line, "bad axis"))? },
        "expand" => OpKind::Expand { axes: parse_list(raw.line, need("axes")?)? },
        "maskfill" => OpKind::MaskFill,
        "gather" => OpKind::Gather,
        "matmul" => OpKind::MatMul,
        "softmax" => OpKind::Softmax {
            causal: match a("causal").unwrap_or("0") {
                "0" => false,
                "1" => true,
                _ => return Err(syntax(raw.line, "causal must be 0 or 1")),
            },
        },
        "layernorm" => OpKind::LayerNorm { eps: float("eps", 1e-5)? },
        "dropout" => OpKind::Dropout { rate: float("rate", 0.0)? },
        name => match name.parse::<FunctionId>() {
            Ok(FunctionId::RescaleDiv) | Err(_) => {
                return Err(GraphError::UnsupportedOp { node: raw.id.clone(), op: name.to_string() })
            }
            Ok(f) => OpKind::Nonlinear(f),
        },
    })
}

/// Parses the text graph format. Nodes may appear in any order; the result is
/// topologically sorted (stable with respect to file order), `matmul` nodes
/// become einsums, and every shape is inferred and checked.
pub fn parse_graph(text: &str) -> Result<Graph, GraphError> {
    let lines: Vec<Line> = text
        .lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let body = raw.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = body.split_whitespace().collect();
            (!tokens.is_empty()).then_some(Line { no: i + 1, tokens })
        })
        .collect();
    let mut it = lines.iter();

    let header = it.next().ok_or_else(|| syntax(0, "empty graph file"))?;
    if header.tokens.len() != 2 || header.tokens[0] != MAGIC {
        return Err(syntax(header.no, format!("expected header '{} {}'", MAGIC, FORMAT_VERSION)));
    }
    if header.tokens[1] != FORMAT_VERSION.to_string() {
        return Err(syntax(header.no, format!("unsupported format version {}", header.tokens[1])));
    }

    let count = |l: Option<&Line>, key: &str| -> Result<usize, GraphError> {
        let l = l.ok_or_else(|| syntax(0, format!("missing '{}' section", key)))?;
        if l.tokens.len() != 2 || l.tokens[0] != key {
            return Err(syntax(l.no, format!("expected '{} <count>'", key)));
        }
        l.tokens[1].parse().map_err(|_| syntax(l.no, "bad count"))
    };

    let n_tensors = count(it.next(), "tensors")?;
    let mut sources = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let l = it.next().ok_or_else(|| syntax(0, "truncated tensor table"))?;
        sources.push(parse_source(l)?);
    }
    let n_nodes = count(it.next(), "nodes")?;
    let mut raw_nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let l = it.next().ok_or_else(|| syntax(0, "truncated node list"))?;
        raw_nodes.push(parse_node_line(l)?);
    }
    let out_line = it.next().ok_or_else(|| syntax(0, "missing 'outputs' line"))?;
    if out_line.tokens[0] != "outputs" {
        return Err(syntax(out_line.no, "expected 'outputs id...'"));
    }
    let outputs: Vec<String> = out_line.tokens[1..].iter().map(|s| s.to_string()).collect();
    if let Some(extra) = it.next() {
        return Err(syntax(extra.no, "unexpected content after outputs"));
    }

    let order = topo_order(&sources, &raw_nodes)?;
    let mut g = Graph { sources, nodes: Vec::with_capacity(n_nodes), outputs };
    let mut shapes: HashMap<String, Vec<usize>> =
        g.sources.iter().map(|s| (s.id.clone(), s.shape.clone())).collect();
    for idx in order {
        let raw = &raw_nodes[idx];
        let mut op = build_op(raw)?;
        let declared = match raw.attrs.get("shape") {
            Some(s) => Some(parse_dims(raw.line, s)?),
            None => None,
        };
        if matches!(op, OpKind::Reshape | OpKind::Expand { .. }) && declared.is_none() {
            return Err(syntax(raw.line, format!("{} needs shape=", raw.op)));
        }
        let in_shapes: Vec<&[usize]> = raw.inputs.iter().map(|i| shapes[i].as_slice()).collect();
        if let OpKind::MatMul = op {
            if in_shapes.len() == 2 {
                if let Some(spec) = matmul_spec(in_shapes[0], in_shapes[1]) {
                    op = OpKind::Einsum(spec);
                }
            }
        }
        let mut node = Node {
            id: raw.id.clone(),
            op,
            inputs: raw.inputs.clone(),
            shape: declared.clone().unwrap_or_default(),
        };
        let inferred = infer_shape(&g, &node, &in_shapes)?;
        if let Some(d) = declared {
            if d != inferred {
                return Err(GraphError::Shape {
                    node: node.id.clone(),
                    msg: format!("declared {:?}, inferred {:?}", d, inferred),
                });
            }
        }
        node.shape = inferred;
        shapes.insert(node.id.clone(), node.shape.clone());
        g.nodes.push(node);
    }
    g.validate()?;
    Ok(g)
}

/// Kahn's algorithm, always taking the earliest ready node in file order.
fn topo_order(sources: &[Source], nodes: &[RawNode]) -> Result<Vec<usize>, GraphError> {
    let mut producer: HashMap<&str, usize> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if producer.insert(&n.id, i).is_some() || sources.iter().any(|s| s.id == n.id) {
            return Err(GraphError::Duplicate(n.id.clone()));
        }
    }
    let known: std::collections::HashSet<&str> = sources.iter().map(|s| s.id.as_str()).collect();
    let mut indegree = vec![0usize; nodes.len()];
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for inp in &n.inputs {
            if let Some(&p) = producer.get(inp.as_str()) {
                indegree[i] += 1;
                users[p].push(i);
            } else if !known.contains(inp.as_str()) {
                return Err(GraphError::UndefinedTensor { tensor: inp.clone(), node: n.id.clone() });
            }
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &u in &users[i] {
            indegree[u] -= 1;
            if indegree[u] == 0 {
                ready.insert(u);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = (0..nodes.len()).find(|&i| indegree[i] > 0).expect("some node is stuck");
        return Err(GraphError::NotDag(nodes[stuck].id.clone()));
    }
    Ok(order)
}

/// Serializes a graph; `parse_graph(write_graph(g)) == g` for graphs without
/// matmul nodes.
pub fn write_graph(g: &Graph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", MAGIC, FORMAT_VERSION);
    let _ = writeln!(out, "tensors {}", g.sources.len());
    for s in &g.sources {
        let _ = write!(out, "{} ", s.id);
        match &s.kind {
            SourceKind::Param => {
                let _ = write!(out, "param {}", fmt_dims(&s.shape));
            }
            SourceKind::Literal(v) => {
                let vals: Vec<String> = v.iter().map(|x| format!("{:?}", x)).collect();
                let _ = write!(out, "literal {} values={}", fmt_dims(&s.shape), vals.join(","));
            }
            SourceKind::Input(k) => {
                let _ = write!(out, "input {}", fmt_dims(&s.shape));
                let _ = match k {
                    InputKind::Fixed => write!(out, " kind=fixed"),
                    InputKind::Tokens { vocab } => write!(out, " kind=token vocab={}", vocab),
                    InputKind::OneHot { vocab } => write!(out, " kind=onehot vocab={}", vocab),
                };
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "nodes {}", g.nodes.len());
    for n in &g.nodes {
        let _ = write!(out, "{} {}", n.id, n.op.name());
        match &n.op {
            OpKind::Einsum(spec) => {
                let _ = write!(out, " spec={}", spec);
            }
            OpKind::Transpose { perm } => {
                let _ = write!(out, " perm={}", fmt_list(perm));
            }
            OpKind::Concat { axis } => {
                let _ = write!(out, " axis={}", axis);
            }
            OpKind::Expand { axes } => {
                let _ = write!(out, " axes={}", fmt_list(axes));
            }
            OpKind::Softmax { causal } => {
                let _ = write!(out, " causal={}", u8::from(*causal));
            }
            OpKind::LayerNorm { eps } => {
                let _ = write!(out, " eps={:?}", eps);
            }
            OpKind::Dropout { rate } => {
                let _ = write!(out, " rate={:?}", rate);
            }
            _ => {}
        }
        let _ = write!(out, " shape={}", fmt_dims(&n.shape));
        for i in &n.inputs {
            let _ = write!(out, " {}", i);
        }
        out.push('\n');
    }
    let _ = write!(out, "outputs");
    for o in &g.outputs {
        let _ = write!(out, " {}", o);
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MATMUL: &str = "zkgraph 1
tensors 2
a input [2,3] kind=fixed
b param [3,4]
nodes 1
y matmul a b
outputs y
";

    #[test]
    fn single_matmul_becomes_einsum() {
        let g = parse_graph(MATMUL).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert!(matches!(g.nodes[0].op, OpKind::Einsum(_)));
        assert_eq!(g.nodes[0].shape, vec![2, 4]);
    }

    #[test]
    fn undefined_tensor() {
        let text = MATMUL.replace("y matmul a b", "y matmul a c");
        match parse_graph(&text) {
            Err(GraphError::UndefinedTensor { tensor, node }) => {
                assert_eq!(tensor, "c");
                assert_eq!(node, "y");
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn cycle_detected() {
        let text = "zkgraph 1
tensors 1
x input [2] kind=fixed
nodes 2
a add x b
b add x a
outputs b
";
        assert!(matches!(parse_graph(text), Err(GraphError::NotDag(_))));
    }

    #[test]
    fn unknown_op() {
        let text = MATMUL.replace("y matmul a b", "y conv a b");
        let err = parse_graph(&text).unwrap_err();
        assert!(matches!(err, GraphError::UnsupportedOp { .. }));
        assert!(err.to_string().contains("unsupported op"));
    }

    #[test]
    fn shape_error_names_node() {
        let text = MATMUL.replace("b param [3,4]", "b param [4,4]");
        let err = parse_graph(&text).unwrap_err();
        assert!(matches!(&err, GraphError::Shape { node, .. } if node == "y"), "{err}");
        let declared = MATMUL.replace("y matmul a b", "y matmul shape=[2,5] a b");
        assert!(matches!(parse_graph(&declared), Err(GraphError::Shape { .. })));
    }

    #[test]
    fn nodes_sorted_topologically() {
        let text = "zkgraph 1
tensors 1
x input [2] kind=fixed
nodes 2
z relu y
y add x x
outputs z
";
        let g = parse_graph(text).unwrap();
        assert_eq!(g.nodes[0].id, "y");
        assert_eq!(g.nodes[1].id, "z");
    }

    #[test]
    fn write_then_parse() {
        let g = parse_graph(MATMUL).unwrap();
        let again = parse_graph(&write_graph(&g)).unwrap();
        assert_eq!(g, again);
    }
}
