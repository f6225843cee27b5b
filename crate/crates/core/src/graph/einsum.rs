use std::fmt;

use super::GraphError;

/// Parsed einsum equation with one or two operands. Labels are lowercase
/// ASCII letters; an empty operand is a scalar.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EinsumSpec {
    operands: Vec<Vec<u8>>,
    output: Vec<u8>,
}

impl EinsumSpec {
    pub fn parse(s: &str) -> Result<Self, GraphError> {
        let err = |msg: &str| GraphError::Einsum { spec: s.to_string(), msg: msg.to_string() };
        let (lhs, rhs) = s.split_once("->").ok_or_else(|| err("missing '->'"))?;
        let operands: Vec<Vec<u8>> = lhs.split(',').map(|o| o.as_bytes().to_vec()).collect();
        if operands.is_empty() || operands.len() > 2 {
            return Err(err("expected one or two operands"));
        }
        let output = rhs.as_bytes().to_vec();
        for labels in operands.iter().chain(std::iter::once(&output)) {
            if labels.iter().any(|c| !c.is_ascii_lowercase()) {
                return Err(err("labels must be lowercase letters"));
            }
            let mut seen = [false; 26];
            for &c in labels {
                let i = (c - b'a') as usize;
                if seen[i] {
                    return Err(err("repeated label within one term"));
                }
                seen[i] = true;
            }
        }
        for &c in &output {
            if !operands.iter().any(|o| o.contains(&c)) {
                return Err(err("output label missing from inputs"));
            }
        }
        Ok(Self { operands, output })
    }

    pub fn n_operands(&self) -> usize {
        self.operands.len()
    }

    pub fn operand(&self, i: usize) -> &[u8] {
        &self.operands[i]
    }

    pub fn output(&self) -> &[u8] {
        &self.output
    }

    /// Labels summed over, in order of first appearance.
    pub fn contracted(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for o in &self.operands {
            for &c in o {
                if !self.output.contains(&c) && !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Output shape, checking every label binds one consistent size.
    pub fn infer_shape(&self, shapes: &[&[usize]]) -> Result<Vec<usize>, String> {
        let dims = self.label_dims(shapes)?;
        Ok(self.output.iter().map(|c| dims[(c - b'a') as usize]).collect())
    }

    fn label_dims(&self, shapes: &[&[usize]]) -> Result<[usize; 26], String> {
        if shapes.len() != self.operands.len() {
            return Err(format!(
                "einsum {} expects {} operands, got {}",
                self,
                self.operands.len(),
                shapes.len()
            ));
        }
        let mut dims = [0usize; 26];
        for (labels, shape) in self.operands.iter().zip(shapes) {
            if labels.len() != shape.len() {
                return Err(format!(
                    "einsum {}: operand rank {} does not match labels {:?}",
                    self,
                    shape.len(),
                    String::from_utf8_lossy(labels)
                ));
            }
            for (&c, &d) in labels.iter().zip(shape.iter()) {
                let slot = &mut dims[(c - b'a') as usize];
                if *slot != 0 && *slot != d {
                    return Err(format!(
                        "einsum {}: label '{}' bound to both {} and {}",
                        self, c as char, slot, d
                    ));
                }
                *slot = d;
            }
        }
        Ok(dims)
    }
}

impl fmt::Display for EinsumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, o) in self.operands.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(std::str::from_utf8(o).expect("ascii labels"))?;
        }
        write!(f, "->{}", std::str::from_utf8(&self.output).expect("ascii labels"))
    }
}

/// Flat offsets of every multiply-accumulate term of an einsum. Term `(o, j)`
/// multiplies element `base[op][o] + contr[op][j]` of each operand.
#[derive(Clone, Debug)]
pub struct EinsumPlan {
    pub out_shape: Vec<usize>,
    /// Number of terms per output element (1 when nothing is contracted).
    pub k: usize,
    base: Vec<Vec<usize>>,
    contr: Vec<Vec<usize>>,
}

impl EinsumPlan {
    pub fn new(spec: &EinsumSpec, shapes: &[&[usize]]) -> Result<Self, String> {
        let dims = spec.label_dims(shapes)?;
        let out_shape: Vec<usize> = spec.output.iter().map(|c| dims[(c - b'a') as usize]).collect();
        let contracted = spec.contracted();
        let contr_dims: Vec<usize> = contracted.iter().map(|c| dims[(c - b'a') as usize]).collect();
        let n_out: usize = out_shape.iter().product();
        let k: usize = contr_dims.iter().product();

        let mut base = Vec::with_capacity(shapes.len());
        let mut contr = Vec::with_capacity(shapes.len());
        for (labels, shape) in spec.operands.iter().zip(shapes) {
            let strides = row_major_strides(shape);
            let stride_of = |c: u8| labels.iter().position(|&l| l == c).map(|p| strides[p]).unwrap_or(0);
            let out_strides: Vec<usize> = spec.output.iter().map(|&c| stride_of(c)).collect();
            let c_strides: Vec<usize> = contracted.iter().map(|&c| stride_of(c)).collect();
            base.push(offsets(&out_shape, &out_strides, n_out));
            contr.push(offsets(&contr_dims, &c_strides, k));
        }
        Ok(Self { out_shape, k, base, contr })
    }

    pub fn n_out(&self) -> usize {
        self.base.first().map_or(0, |b| b.len())
    }

    #[inline]
    pub fn offset(&self, operand: usize, o: usize, j: usize) -> usize {
        self.base[operand][o] + self.contr[operand][j]
    }

    /// Evaluates over integers; operands must already share one scale.
    pub fn eval(&self, operands: &[&[i64]]) -> Vec<i64> {
        (0..self.n_out())
            .map(|o| {
                (0..self.k)
                    .map(|j| {
                        operands.iter().enumerate().map(|(i, t)| t[self.offset(i, o, j)]).product::<i64>()
                    })
                    .sum()
            })
            .collect()
    }
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Flat offsets of every multi-index over `dims` (row-major) under `strides`.
fn offsets(dims: &[usize], strides: &[usize], count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut idx = vec![0usize; dims.len()];
    for _ in 0..count {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let s = EinsumSpec::parse("te,ve->tv").unwrap();
        assert_eq!(s.to_string(), "te,ve->tv");
        assert_eq!(s.contracted(), b"e".to_vec());
        let scalar = EinsumSpec::parse("hts,->hts").unwrap();
        assert_eq!(scalar.n_operands(), 2);
        assert!(scalar.operand(1).is_empty());
        assert!(EinsumSpec::parse("ab,bc").is_err());
        assert!(EinsumSpec::parse("aa->a").is_err());
        assert!(EinsumSpec::parse("ab->c").is_err());
        assert!(EinsumSpec::parse("a,b,c->abc").is_err());
    }

    #[test]
    fn matmul_plan() {
        let s = EinsumSpec::parse("mk,kn->mn").unwrap();
        let plan = EinsumPlan::new(&s, &[&[2, 3], &[3, 2]]).unwrap();
        assert_eq!(plan.out_shape, vec![2, 2]);
        assert_eq!(plan.k, 3);
        let a = [1, 2, 3, 4, 5, 6];
        let b = [1, 0, 0, 1, 1, 1];
        assert_eq!(plan.eval(&[&a, &b]), vec![4, 5, 10, 11]);
    }

    #[test]
    fn transpose_and_sum() {
        let t = EinsumSpec::parse("ab->ba").unwrap();
        let plan = EinsumPlan::new(&t, &[&[2, 3]]).unwrap();
        assert_eq!(plan.eval(&[&[1, 2, 3, 4, 5, 6]]), vec![1, 4, 2, 5, 3, 6]);
        let rows = EinsumSpec::parse("ab->a").unwrap();
        let plan = EinsumPlan::new(&rows, &[&[2, 3]]).unwrap();
        assert_eq!(plan.eval(&[&[1, 2, 3, 4, 5, 6]]), vec![6, 15]);
        let scaled = EinsumSpec::parse("ab,->a").unwrap();
        let plan = EinsumPlan::new(&scaled, &[&[2, 3], &[]]).unwrap();
        assert_eq!(plan.eval(&[&[1, 2, 3, 4, 5, 6], &[2]]), vec![12, 30]);
    }

    #[test]
    fn inconsistent_dims() {
        let s = EinsumSpec::parse("mk,kn->mn").unwrap();
        assert!(s.infer_shape(&[&[2, 3], &[4, 2]]).is_err());
        assert!(s.infer_shape(&[&[2, 3]]).is_err());
    }
}
