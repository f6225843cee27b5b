use super::{Graph, GraphError, InputKind, Node, OpKind, Shape, SourceKind};

fn arity(n: &Node, want: usize) -> Result<(), GraphError> {
    if n.inputs.len() != want {
        return Err(GraphError::Shape {
            node: n.id.clone(),
            msg: format!("{} expects {} inputs, got {}", n.op.name(), want, n.inputs.len()),
        });
    }
    Ok(())
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast(a: &[usize], b: &[usize]) -> Option<Shape> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Output shape of `n` given its input shapes. Reshape and Expand take their
/// target from the node's declared shape.
pub fn infer_shape(g: &Graph, n: &Node, ins: &[&[usize]]) -> Result<Shape, GraphError> {
    let err = |msg: String| GraphError::Shape { node: n.id.clone(), msg };
    match &n.op {
        OpKind::Einsum(spec) => spec.infer_shape(ins).map_err(err),
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            arity(n, 2)?;
            broadcast(ins[0], ins[1])
                .ok_or_else(|| err(format!("cannot broadcast {:?} with {:?}", ins[0], ins[1])))
        }
        OpKind::Nonlinear(_) | OpKind::Rescale | OpKind::Dropout { .. } => {
            arity(n, 1)?;
            Ok(ins[0].to_vec())
        }
        OpKind::Softmax { .. } => {
            arity(n, 1)?;
            if ins[0].is_empty() {
                return Err(err("softmax needs rank >= 1".into()));
            }
            Ok(ins[0].to_vec())
        }
        OpKind::MaskFill => {
            arity(n, 1)?;
            if ins[0].len() < 2 {
                return Err(err("maskfill needs rank >= 2".into()));
            }
            Ok(ins[0].to_vec())
        }
        OpKind::Reshape => {
            arity(n, 1)?;
            let a: usize = ins[0].iter().product();
            let b: usize = n.shape.iter().product();
            if a != b {
                return Err(err(format!("cannot reshape {:?} into {:?}", ins[0], n.shape)));
            }
            Ok(n.shape.clone())
        }
        OpKind::Transpose { perm } => {
            arity(n, 1)?;
            let mut seen = vec![false; perm.len()];
            if perm.len() != ins[0].len()
                || perm.iter().any(|&p| p >= perm.len() || std::mem::replace(&mut seen[p], true))
            {
                return Err(err(format!("bad permutation {:?} for rank {}", perm, ins[0].len())));
            }
            Ok(perm.iter().map(|&p| ins[0][p]).collect())
        }
        OpKind::Concat { axis } => {
            if ins.is_empty() {
                return Err(err("concat needs inputs".into()));
            }
            let first = ins[0];
            if *axis >= first.len() {
                return Err(err(format!("concat axis {} out of range", axis)));
            }
            let mut out = first.to_vec();
            out[*axis] = 0;
            for s in ins {
                if s.len() != first.len()
                    || s.iter().zip(first.iter()).enumerate().any(|(i, (a, b))| i != *axis && a != b)
                {
                    return Err(err(format!("concat shapes {:?} and {:?} differ", first, s)));
                }
                out[*axis] += s[*axis];
            }
            Ok(out)
        }
        OpKind::Expand { axes } => {
            arity(n, 1)?;
            let target = &n.shape;
            let src = ins[0];
            let ok = axes.len() == src.len()
                && axes.windows(2).all(|w| w[0] < w[1])
                && axes.iter().zip(src.iter()).all(|(&a, &d)| a < target.len() && (d == target[a] || d == 1));
            if !ok {
                return Err(err(format!("cannot expand {:?} into {:?} via axes {:?}", src, target, axes)));
            }
            Ok(target.clone())
        }
        OpKind::Gather => {
            arity(n, 2)?;
            let table = ins[0];
            if table.len() != 2 {
                return Err(err("gather table must be rank 2".into()));
            }
            let ids = g.sources.iter().find(|s| s.id == n.inputs[1]);
            match ids.map(|s| &s.kind) {
                Some(SourceKind::Input(InputKind::Tokens { vocab })) if *vocab == table[0] => {}
                Some(SourceKind::Input(InputKind::Tokens { vocab })) => {
                    return Err(err(format!("vocab {} does not match table rows {}", vocab, table[0])))
                }
                _ => return Err(err("gather indices must be a token input".into())),
            }
            Ok(vec![ins[1][0], table[1]])
        }
        OpKind::MatMul => {
            arity(n, 2)?;
            matmul_spec(ins[0], ins[1])
                .map(|s| s.infer_shape(ins).expect("spec built from shapes"))
                .ok_or_else(|| err(format!("cannot multiply {:?} by {:?}", ins[0], ins[1])))
        }
        OpKind::LayerNorm { .. } => {
            arity(n, 3)?;
            let e = *ins[0].last().ok_or_else(|| err("layernorm needs rank >= 1".into()))?;
            if ins[1] != [e] || ins[2] != [e] {
                return Err(err(format!("layernorm affine params must be [{}]", e)));
            }
            Ok(ins[0].to_vec())
        }
    }
}

/// Einsum equivalent to a matrix product of the given shapes, if supported:
/// `a` of any rank ≥ 1 against `b` of rank 1 or 2, or equal-batch rank-3 pairs.
pub(crate) fn matmul_spec(a: &[usize], b: &[usize]) -> Option<super::EinsumSpec> {
    const L: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let ra = a.len();
    if ra == 0 || ra > 20 || b.is_empty() {
        return None;
    }
    let batch = &L[..ra - 1];
    let (k_a, k_b) = (a[ra - 1], if b.len() == 1 { b[0] } else { b[b.len() - 2] });
    if k_a != k_b {
        return None;
    }
    let k = b'y';
    let nn = b'z';
    let mut lhs = batch.to_vec();
    lhs.push(k);
    let (rhs, out) = match b.len() {
        1 => (vec![k], batch.to_vec()),
        2 => {
            let mut out = batch.to_vec();
            out.push(nn);
            (vec![k, nn], out)
        }
        rb if rb == ra && ra >= 3 && a[..ra - 2] == b[..rb - 2] => {
            let mut rhs = L[..ra - 2].to_vec();
            rhs.push(k);
            rhs.push(nn);
            let mut out = batch.to_vec();
            out.push(nn);
            (rhs, out)
        }
        _ => return None,
    };
    let spec = format!(
        "{},{}->{}",
        String::from_utf8(lhs).ok()?,
        String::from_utf8(rhs).ok()?,
        String::from_utf8(out).ok()?
    );
    super::EinsumSpec::parse(&spec).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcasting() {
        assert_eq!(broadcast(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast(&[4, 1], &[1, 5]), Some(vec![4, 5]));
        assert_eq!(broadcast(&[2], &[3]), None);
    }

    #[test]
    fn matmul_specs() {
        assert_eq!(matmul_spec(&[2, 3], &[3, 4]).unwrap().to_string(), "ay,yz->az");
        assert_eq!(matmul_spec(&[3], &[3, 4]).unwrap().to_string(), "y,yz->z");
        assert_eq!(matmul_spec(&[2, 3], &[3]).unwrap().to_string(), "ay,y->a");
        assert_eq!(matmul_spec(&[5, 2, 3], &[5, 3, 4]).unwrap().to_string(), "aby,ayz->abz");
        assert!(matmul_spec(&[2, 3], &[4, 4]).is_none());
    }
}
