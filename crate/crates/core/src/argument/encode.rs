//! Binary layouts of proofs and circuit descriptions. All integers are
//! little-endian; field elements are canonical `u64`s.

use super::{
    AdviceOpening, ArgumentError, CircuitDescription, Digest, FixedRow, Proof, ProofHeader, RowOpening,
    TableOpening,
};
use crate::field::{FieldElement, FunctionId, QuantConfig};
use crate::zoo::ModelCommitment;

pub const PROOF_MAGIC: &[u8; 4] = b"ZKPF";
pub const DESCRIPTION_MAGIC: &[u8; 4] = b"ZKCD";
const DESCRIPTION_VERSION: u16 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }
    fn fe(&mut self, v: FieldElement) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn digest(&mut self, d: &Digest) {
        self.0.extend_from_slice(d);
    }
    fn path(&mut self, p: &[Digest]) {
        self.u8(p.len() as u8);
        for d in p {
            self.digest(d);
        }
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn cells(&mut self, cells: &[[FieldElement; 3]]) {
        for c in cells {
            for &v in c {
                self.fe(v);
            }
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> ArgumentError {
        ArgumentError::Format { what: self.what, msg: msg.into() }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArgumentError> {
        if self.b.len() < n {
            return Err(self.err(format!("truncated: needed {} more bytes, {} left", n, self.b.len())));
        }
        let (h, t) = self.b.split_at(n);
        self.b = t;
        Ok(h)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], ArgumentError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
    fn u8(&mut self) -> Result<u8, ArgumentError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ArgumentError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, ArgumentError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    /// A count of items of at least `min_size` bytes each, checked against
    /// the remaining input before anything is allocated.
    fn len(&mut self, min_size: usize) -> Result<usize, ArgumentError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_size) > self.b.len() {
            return Err(self.err(format!("count {} exceeds remaining input", n)));
        }
        Ok(n)
    }
    fn fe(&mut self) -> Result<FieldElement, ArgumentError> {
        let b = self.array()?;
        FieldElement::from_le_bytes(b).ok_or_else(|| self.err("non-canonical field element"))
    }
    fn digest(&mut self) -> Result<Digest, ArgumentError> {
        self.array()
    }
    fn path(&mut self) -> Result<Vec<Digest>, ArgumentError> {
        let n = self.u8()? as usize;
        (0..n).map(|_| self.digest()).collect()
    }
    fn str(&mut self) -> Result<String, ArgumentError> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.err("name is not UTF-8"))
    }
    fn cells(&mut self, lanes: usize) -> Result<Vec<[FieldElement; 3]>, ArgumentError> {
        if lanes.saturating_mul(24) > self.b.len() {
            return Err(self.err("truncated row"));
        }
        (0..lanes).map(|_| Ok([self.fe()?, self.fe()?, self.fe()?])).collect()
    }
    fn table(&mut self) -> Result<FunctionId, ArgumentError> {
        let tag = self.u8()?;
        FunctionId::from_tag(tag).ok_or_else(|| self.err(format!("unknown table tag {}", tag)))
    }
    fn finish(&self) -> Result<(), ArgumentError> {
        if self.b.is_empty() {
            Ok(())
        } else {
            Err(self.err(format!("{} trailing bytes", self.b.len())))
        }
    }
}

fn write_shapes(w: &mut Writer, io: &[(String, Vec<usize>)]) {
    w.len(io.len());
    for (name, shape) in io {
        w.str(name);
        w.len(shape.len());
        for &d in shape {
            w.u32(d as u32);
        }
    }
}

fn read_shapes(r: &mut Reader) -> Result<Vec<(String, Vec<usize>)>, ArgumentError> {
    let n = r.len(8)?;
    (0..n)
        .map(|_| {
            let name = r.str()?;
            let rank = r.len(4)?;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
            Ok((name, shape))
        })
        .collect()
}

/// Description fields covered by the geometry digest (everything but the
/// fixed root).
pub(super) fn description_body(d: &CircuitDescription) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(d.cfg.frac_bits() as u8);
    w.u8(d.cfg.lookup_bits() as u8);
    w.u32(d.n_rows as u32);
    w.u32(d.n_lanes as u32);
    w.u32(d.n_public as u32);
    write_shapes(&mut w, &d.inputs);
    write_shapes(&mut w, &d.outputs);
    w.len(d.tables.len());
    for (f, root) in &d.tables {
        w.u8(f.tag());
        w.digest(root);
    }
    w.0
}

pub(super) fn write_description(d: &CircuitDescription) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(DESCRIPTION_MAGIC);
    w.u16(DESCRIPTION_VERSION);
    w.0.extend_from_slice(&description_body(d));
    w.digest(&d.fixed_root);
    w.0
}

pub(super) fn read_description(bytes: &[u8]) -> Result<CircuitDescription, ArgumentError> {
    let mut r = Reader { b: bytes, what: "circuit description" };
    if &r.array::<4>()? != DESCRIPTION_MAGIC {
        return Err(r.err("bad magic"));
    }
    let v = r.u16()?;
    if v != DESCRIPTION_VERSION {
        return Err(r.err(format!("unsupported version {}", v)));
    }
    let (f, b) = (r.u8()?, r.u8()?);
    let cfg = QuantConfig::new(f as u32, b as u32).map_err(|e| r.err(e.to_string()))?;
    let n_rows = r.u32()? as usize;
    if !n_rows.is_power_of_two() {
        return Err(r.err(format!("row count {} is not a power of two", n_rows)));
    }
    let n_lanes = r.u32()? as usize;
    let n_public = r.u32()? as usize;
    let inputs = read_shapes(&mut r)?;
    let outputs = read_shapes(&mut r)?;
    let nt = r.len(33)?;
    let tables = (0..nt).map(|_| Ok((r.table()?, r.digest()?))).collect::<Result<_, ArgumentError>>()?;
    let fixed_root = r.digest()?;
    r.finish()?;
    Ok(CircuitDescription { cfg, n_rows, n_lanes, n_public, inputs, outputs, tables, fixed_root })
}

pub(super) fn write_proof(p: &Proof) -> Vec<u8> {
    let mut w = Writer::default();
    let h = &p.head;
    w.0.extend_from_slice(PROOF_MAGIC);
    w.u16(h.version);
    w.u32(h.k);
    w.u8(h.frac_bits);
    w.u8(h.lookup_bits);
    w.digest(&h.mc.digest);
    w.digest(&h.geometry);
    w.digest(&h.fixed_root);
    w.digest(&h.advice_root);
    let lanes = p.rows.first().map_or(0, |o| o.advice.cells.len());
    let n_inst = p.rows.first().map_or(0, |o| o.fixed.instance_sigma.len());
    w.u32(lanes as u32);
    w.u32(n_inst as u32);
    w.len(p.public_io.len());
    for &v in &p.public_io {
        w.fe(v);
    }
    w.len(p.indices.len());
    for &i in &p.indices {
        w.u32(i);
    }
    w.len(p.rows.len());
    for o in &p.rows {
        w.u32(o.advice.row);
        w.cells(&o.advice.cells);
        w.path(&o.advice.path);
        let f = &o.fixed;
        for lane in 0..lanes {
            w.u8(f.kind[lane]);
            w.fe(f.w[lane]);
            for s in f.sigma[lane] {
                w.u32(s);
            }
        }
        for &s in &f.instance_sigma {
            w.u32(s);
        }
        w.path(&o.fixed_path);
    }
    w.len(p.extra.len());
    for o in &p.extra {
        w.u32(o.row);
        w.cells(&o.cells);
        w.path(&o.path);
    }
    w.len(p.lookups.len());
    for t in &p.lookups {
        w.u8(t.table.tag());
        w.u32(t.index);
        w.fe(t.input);
        w.fe(t.output);
        w.path(&t.path);
    }
    w.0
}

pub(super) fn read_proof(bytes: &[u8]) -> Result<Proof, ArgumentError> {
    let mut r = Reader { b: bytes, what: "proof" };
    if &r.array::<4>()? != PROOF_MAGIC {
        return Err(r.err("bad magic"));
    }
    let head = ProofHeader {
        version: r.u16()?,
        k: r.u32()?,
        frac_bits: r.u8()?,
        lookup_bits: r.u8()?,
        mc: ModelCommitment { digest: r.digest()? },
        geometry: r.digest()?,
        fixed_root: r.digest()?,
        advice_root: r.digest()?,
    };
    let lanes = r.u32()? as usize;
    let n_inst = r.u32()? as usize;
    let n = r.len(8)?;
    let public_io = (0..n).map(|_| r.fe()).collect::<Result<_, _>>()?;
    let n = r.len(4)?;
    let indices = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
    let n = r.len(4 + 45 * lanes)?;
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let row = r.u32()?;
        let cells = r.cells(lanes)?;
        let path = r.path()?;
        let mut fixed = FixedRow { kind: vec![], w: vec![], sigma: vec![], instance_sigma: vec![] };
        for _ in 0..lanes {
            fixed.kind.push(r.u8()?);
            fixed.w.push(r.fe()?);
            fixed.sigma.push([r.u32()?, r.u32()?, r.u32()?]);
        }
        if n_inst.saturating_mul(4) > r.b.len() {
            return Err(r.err("truncated instance σ"));
        }
        for _ in 0..n_inst {
            fixed.instance_sigma.push(r.u32()?);
        }
        let fixed_path = r.path()?;
        rows.push(RowOpening { advice: AdviceOpening { row, cells, path }, fixed, fixed_path });
    }
    let n = r.len(5 + 24 * lanes)?;
    let extra = (0..n)
        .map(|_| Ok(AdviceOpening { row: r.u32()?, cells: r.cells(lanes)?, path: r.path()? }))
        .collect::<Result<_, ArgumentError>>()?;
    let n = r.len(22)?;
    let lookups = (0..n)
        .map(|_| {
            Ok(TableOpening {
                table: r.table()?,
                index: r.u32()?,
                input: r.fe()?,
                output: r.fe()?,
                path: r.path()?,
            })
        })
        .collect::<Result<_, ArgumentError>>()?;
    r.finish()?;
    Ok(Proof { head, public_io, indices, rows, extra, lookups })
}
