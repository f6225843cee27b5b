use std::collections::BTreeMap;

use super::ZooError;
use crate::field::{quantize_fixed, QuantConfig};
use crate::graph::{ParamValues, Tensor};

const MAGIC: &[u8; 4] = b"ZKWT";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "weight data does not match shape");
        Self { shape, data }
    }

    pub fn filled(shape: Vec<usize>, v: f32) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![v; n] }
    }
}

/// Named real-valued tensors, kept in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, WeightTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: WeightTensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut WeightTensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &WeightTensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Checks a tensor exists with the given shape.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<(), ZooError> {
        match self.tensors.get(name) {
            None => Err(ZooError::MissingWeight(name.to_string())),
            Some(t) if t.shape != shape => Err(ZooError::WeightShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape.clone(),
            }),
            Some(_) => Ok(()),
        }
    }

    /// Fixed-point values of every tensor.
    pub fn quantize(&self, cfg: &QuantConfig) -> Result<ParamValues, ZooError> {
        self.tensors
            .iter()
            .map(|(name, t)| {
                let data = t
                    .data
                    .iter()
                    .map(|&x| {
                        quantize_fixed(x as f64, cfg)
                            .map_err(|e| ZooError::Quantize { name: name.clone(), msg: e.to_string() })
                    })
                    .collect::<Result<_, _>>()?;
                Ok((name.clone(), Tensor::new(t.shape.clone(), data)))
            })
            .collect()
    }

    /// Canonical byte serialization; see `docs/weights-format.md`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.param_count() * 4 + self.len() * 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ZooError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ZooError::Format("bad magic, expected ZKWT".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != WEIGHTS_VERSION {
            return Err(ZooError::Format(format!("unsupported weights version {}", version)));
        }
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut store = WeightStore::new();
        let mut prev: Option<String> = None;
        for _ in 0..count {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| ZooError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            if prev.as_ref().is_some_and(|p| *p >= name) {
                return Err(ZooError::Format(format!("tensor {:?} out of order or duplicated", name)));
            }
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| ZooError::Format(format!("tensor {:?} is too large", name)))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| ZooError::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            prev = Some(name.clone());
            store.insert(name, WeightTensor { shape, data });
        }
        if r.pos != bytes.len() {
            return Err(ZooError::Format("trailing bytes after last tensor".into()));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ZooError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ZooError::Format("truncated weights file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ZooError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightStore {
        let mut w = WeightStore::new();
        w.insert("b", WeightTensor::new(vec![2], vec![1.5, -2.0]));
        w.insert("a", WeightTensor::new(vec![1, 2], vec![0.25, 3.0]));
        w.insert("s", WeightTensor::new(vec![], vec![7.0]));
        w
    }

    #[test]
    fn round_trip() {
        let w = sample();
        let bytes = w.to_bytes();
        assert_eq!(&bytes[..4], b"ZKWT");
        assert_eq!(WeightStore::from_bytes(&bytes).unwrap(), w);
    }

    #[test]
    fn layout_is_exact() {
        let mut w = WeightStore::new();
        w.insert("x", WeightTensor::new(vec![1], vec![1.0]));
        let expect: Vec<u8> =
            [&b"ZKWT"[..], &[1, 0], &[1, 0, 0, 0], &[1, 0], b"x", &[1], &[1, 0, 0, 0], &1.0f32.to_le_bytes()]
                .concat();
        assert_eq!(w.to_bytes(), expect);
    }

    #[test]
    fn rejects_corrupt_files() {
        let bytes = sample().to_bytes();
        assert!(WeightStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(WeightStore::from_bytes(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(WeightStore::from_bytes(&magic).is_err());
    }

    #[test]
    fn quantize_reports_name() {
        let mut w = WeightStore::new();
        w.insert("big", WeightTensor::new(vec![1], vec![1e6]));
        let err = w.quantize(&QuantConfig::default()).unwrap_err();
        assert!(err.to_string().contains("big"));
    }
}
