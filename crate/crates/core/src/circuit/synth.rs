//! Graph-to-matrix lowering. Compilation, witness generation and constraint
//! counting all run this one walk, so the layout cannot drift between them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;
use std::sync::OnceLock;

use super::layout::Placer;
use super::{
    AdviceCol, Cell, CircuitError, CircuitMatrix, FixedLane, GateKind, GateSet, Geometry, OpCost, Witness,
};
use crate::field::{quantize_fixed, rescale_div, FieldElement, FunctionId, QuantConfig};
use crate::graph::{
    tensor_scales, wiring_sources, EinsumPlan, Graph, OpKind, ParamValues, Shape, SourceKind, Tensor,
    WireSource,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Row, lookup and copy counts only.
    Count,
    /// Fixed columns and the copy permutation.
    Compile,
    /// Advice values for one input.
    Witness,
}

struct Vals {
    cells: Vec<Cell>,
    data: Vec<i64>,
}

pub(crate) struct Synth<'a> {
    g: &'a Graph,
    cfg: QuantConfig,
    params: &'a ParamValues,
    mode: Mode,
    placer: Placer,
    kinds: Vec<Vec<u8>>,
    ws: Vec<Vec<FieldElement>>,
    advice: Vec<Vec<[FieldElement; 3]>>,
    copies: Vec<(Cell, Cell)>,
    stats: BTreeMap<String, OpCost>,
    bucket: &'static str,
    values: HashMap<String, Rc<Vals>>,
    mask: Option<(Cell, i64)>,
    public: Vec<i64>,
    outputs: Vec<Tensor>,
    saturations: usize,
    tables: BTreeSet<FunctionId>,
}

impl<'a> Synth<'a> {
    pub fn new(
        g: &'a Graph,
        params: &'a ParamValues,
        cfg: &QuantConfig,
        row_cap: Option<usize>,
        mode: Mode,
    ) -> Result<Self, CircuitError> {
        Ok(Self {
            g,
            cfg: *cfg,
            params,
            mode,
            placer: Placer::new(row_cap)?,
            kinds: Vec::new(),
            ws: Vec::new(),
            advice: Vec::new(),
            copies: Vec::new(),
            stats: BTreeMap::new(),
            bucket: "const",
            values: HashMap::new(),
            mask: None,
            public: Vec::new(),
            outputs: Vec::new(),
            saturations: 0,
            tables: BTreeSet::new(),
        })
    }

    fn cost(&mut self) -> &mut OpCost {
        self.stats.entry(self.bucket.to_string()).or_default()
    }

    fn place(&mut self, height: usize, node: &str) -> Result<(u32, u32), CircuitError> {
        let (lane, row) = self.placer.place(height, node)?;
        self.cost().rows += height;
        Ok((lane, row))
    }

    fn emit(&mut self, lane: u32, row: u32, kind: GateKind, w: i64, v: [i64; 3], used: usize) {
        let cost = self.cost();
        cost.cells += used;
        if kind != GateKind::None {
            cost.gate_rows += 1;
            cost.lookups += kind.n_lookups();
        }
        let lane = lane as usize;
        match self.mode {
            Mode::Count => {}
            Mode::Compile => {
                while self.kinds.len() <= lane {
                    self.kinds.push(Vec::new());
                    self.ws.push(Vec::new());
                }
                debug_assert_eq!(self.kinds[lane].len(), row as usize);
                self.kinds[lane].push(kind.code());
                self.ws[lane].push(FieldElement::from_i64(w));
            }
            Mode::Witness => {
                while self.advice.len() <= lane {
                    self.advice.push(Vec::new());
                }
                debug_assert_eq!(self.advice[lane].len(), row as usize);
                self.advice[lane].push(v.map(FieldElement::from_i64));
            }
        }
    }

    fn copy(&mut self, a: Cell, b: Cell) {
        self.cost().copies += 1;
        if self.mode == Mode::Compile {
            self.copies.push((a, b));
        }
    }

    fn with_bucket<T>(&mut self, bucket: &'static str, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = std::mem::replace(&mut self.bucket, bucket);
        let out = f(self);
        self.bucket = saved;
        out
    }

    /// Materializes a constant into advice through one `Const` row.
    fn const_row(&mut self, v: i64, owner: &str) -> Result<Cell, CircuitError> {
        let (lane, row) = self.place(1, owner)?;
        self.emit(lane, row, GateKind::Const, v, [v, 0, 0], 1);
        Ok(Cell::Advice { lane, row, col: AdviceCol::A })
    }

    fn mask_cell(&mut self) -> Result<(Cell, i64), CircuitError> {
        if let Some(m) = self.mask {
            return Ok(m);
        }
        let v = self.cfg.mask_value();
        let cell = self.with_bucket("const", |s| s.const_row(v, "mask"))?;
        self.mask = Some((cell, v));
        Ok((cell, v))
    }

    /// Cells and values of a tensor, materializing constants on first use.
    fn operand(&mut self, id: &str) -> Result<Rc<Vals>, CircuitError> {
        if let Some(v) = self.values.get(id) {
            return Ok(v.clone());
        }
        let src = self
            .g
            .sources
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| CircuitError::Unsupported { node: id.into(), msg: "unknown tensor".into() })?;
        let data: Vec<i64> = match &src.kind {
            SourceKind::Param => match self.params.get(id) {
                Some(t) if t.shape == src.shape => t.data.clone(),
                Some(t) => {
                    return Err(CircuitError::Unsupported {
                        node: id.into(),
                        msg: format!("weight has shape {:?}, graph expects {:?}", t.shape, src.shape),
                    })
                }
                None if self.mode == Mode::Count => vec![0; src.numel()],
                None => return Err(crate::graph::GraphError::MissingParam(id.into()).into()),
            },
            SourceKind::Literal(vals) => vals
                .iter()
                .map(|&x| {
                    quantize_fixed(x, &self.cfg)
                        .map_err(|e| CircuitError::Unsupported { node: id.into(), msg: e.to_string() })
                })
                .collect::<Result<_, _>>()?,
            SourceKind::Input(_) => unreachable!("inputs are bound before nodes"),
        };
        let cells = self.with_bucket("const", |s| {
            data.iter().map(|&v| s.const_row(v, id)).collect::<Result<Vec<_>, _>>()
        })?;
        let vals = Rc::new(Vals { cells, data });
        self.values.insert(id.to_string(), vals.clone());
        Ok(vals)
    }

    pub fn run(&mut self, inputs: Option<&[Tensor]>) -> Result<(), CircuitError> {
        let g = self.g;
        if !g.is_reduced() {
            return Err(CircuitError::NotReduced("composite ops or token inputs remain".into()));
        }
        let scales = tensor_scales(g)?;
        let decl: Vec<_> = g.inputs().collect();
        if let Some(xs) = inputs {
            if xs.len() != decl.len() {
                return Err(CircuitError::Mismatch(format!(
                    "graph has {} inputs, {} supplied",
                    decl.len(),
                    xs.len()
                )));
            }
        }
        let mut next = 0u32;
        for (i, src) in decl.iter().enumerate() {
            let data = match inputs {
                Some(xs) if xs[i].shape != src.shape => {
                    return Err(CircuitError::Mismatch(format!(
                        "input {} has shape {:?}, expected {:?}",
                        src.id, xs[i].shape, src.shape
                    )))
                }
                Some(xs) => xs[i].data.clone(),
                None => vec![0; src.numel()],
            };
            let cells = (0..data.len() as u32).map(|j| Cell::Instance(next + j)).collect();
            next += data.len() as u32;
            self.public.extend_from_slice(&data);
            self.values.insert(src.id.clone(), Rc::new(Vals { cells, data }));
        }

        for n in &g.nodes {
            for i in &n.inputs {
                if scales[i.as_str()] == 2 && !matches!(n.op, OpKind::Rescale) {
                    return Err(CircuitError::NotReduced(format!(
                        "{} reads double-scale {} without a rescale",
                        n.id, i
                    )));
                }
            }
            let ins = n.inputs.iter().map(|i| self.operand(i)).collect::<Result<Vec<_>, _>>()?;
            self.bucket = n.op.name();
            self.cost().nodes += 1;
            let out = self.node(n, &ins)?;
            self.values.insert(n.id.clone(), Rc::new(out));
        }

        self.bucket = "output";
        for o in &g.outputs {
            if scales[o.as_str()] == 2 {
                return Err(CircuitError::NotReduced(format!("output {} is double scale", o)));
            }
            let v = self.operand(o)?;
            for (&cell, &x) in v.cells.iter().zip(&v.data) {
                self.copy(Cell::Instance(next), cell);
                next += 1;
                self.public.push(x);
            }
            let shape = g.shape_of(o).expect("validated output").to_vec();
            self.outputs.push(Tensor::new(shape, v.data.clone()));
        }
        Ok(())
    }

    fn node(&mut self, n: &crate::graph::Node, ins: &[Rc<Vals>]) -> Result<Vals, CircuitError> {
        let unsupported = |msg: &str| CircuitError::Unsupported { node: n.id.clone(), msg: msg.to_string() };
        let cfg = self.cfg;
        let shapes: Vec<Shape> =
            n.inputs.iter().map(|i| self.g.shape_of(i).expect("validated graph").to_vec()).collect();
        let numel = n.numel();
        let mut cells = Vec::with_capacity(numel);
        let mut data = Vec::with_capacity(numel);
        match &n.op {
            OpKind::Einsum(spec) => {
                let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
                let plan = EinsumPlan::new(spec, &refs).map_err(|e| unsupported(&e))?;
                if plan.k == 0 {
                    return Err(unsupported("empty contraction"));
                }
                let two = ins.len() == 2;
                for o in 0..plan.n_out() {
                    let (lane, row) = self.place(plan.k, &n.id)?;
                    let mut acc = 0i64;
                    for j in 0..plan.k {
                        let r = row + j as u32;
                        let cell = |col| Cell::Advice { lane, row: r, col };
                        let ia = plan.offset(0, o, j);
                        let a = ins[0].data[ia];
                        if two {
                            let ib = plan.offset(1, o, j);
                            let b = ins[1].data[ib];
                            acc += a * b;
                            let kind = if j == 0 { GateKind::Mul } else { GateKind::Mac };
                            self.emit(lane, r, kind, 0, [a, b, acc], 3);
                            self.copy(cell(AdviceCol::A), ins[0].cells[ia]);
                            self.copy(cell(AdviceCol::B), ins[1].cells[ib]);
                        } else {
                            acc += a;
                            let kind = if j == 0 { GateKind::Sum0 } else { GateKind::Sum };
                            self.emit(lane, r, kind, 0, [a, 0, acc], 2);
                            self.copy(cell(AdviceCol::A), ins[0].cells[ia]);
                        }
                    }
                    cells.push(Cell::Advice { lane, row: row + plan.k as u32 - 1, col: AdviceCol::C });
                    data.push(acc);
                }
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                if shapes.iter().any(|s| *s != n.shape) {
                    return Err(unsupported("elementwise operands must already have the output shape"));
                }
                let kind = match n.op {
                    OpKind::Add => GateKind::Add,
                    OpKind::Sub => GateKind::Sub,
                    _ => GateKind::Mul,
                };
                for i in 0..numel {
                    let (a, b) = (ins[0].data[i], ins[1].data[i]);
                    let c = match kind {
                        GateKind::Add => a + b,
                        GateKind::Sub => a - b,
                        _ => a * b,
                    };
                    let (lane, row) = self.place(1, &n.id)?;
                    self.emit(lane, row, kind, 0, [a, b, c], 3);
                    self.copy(Cell::Advice { lane, row, col: AdviceCol::A }, ins[0].cells[i]);
                    self.copy(Cell::Advice { lane, row, col: AdviceCol::B }, ins[1].cells[i]);
                    cells.push(Cell::Advice { lane, row, col: AdviceCol::C });
                    data.push(c);
                }
            }
            OpKind::Nonlinear(f) => {
                self.tables.insert(*f);
                for i in 0..numel {
                    let q = ins[0].data[i];
                    let (y, sat) = f.eval_saturating(q, &cfg);
                    self.saturations += usize::from(sat);
                    let (lane, row) = self.place(1, &n.id)?;
                    self.emit(lane, row, GateKind::Lookup(*f), 0, [q, y, 0], 2);
                    self.copy(Cell::Advice { lane, row, col: AdviceCol::A }, ins[0].cells[i]);
                    cells.push(Cell::Advice { lane, row, col: AdviceCol::B });
                    data.push(y);
                }
            }
            OpKind::Rescale => {
                self.tables.insert(FunctionId::RescaleDiv);
                let f = cfg.frac_bits();
                for i in 0..numel {
                    let q = ins[0].data[i];
                    let (r, sat) = cfg.saturate(rescale_div(q, f));
                    self.saturations += usize::from(sat);
                    let rem = q - (r << f);
                    let (lane, row) = self.place(1, &n.id)?;
                    self.emit(lane, row, GateKind::Rescale, 0, [q, r, rem], 3);
                    self.copy(Cell::Advice { lane, row, col: AdviceCol::A }, ins[0].cells[i]);
                    cells.push(Cell::Advice { lane, row, col: AdviceCol::B });
                    data.push(r);
                }
            }
            OpKind::Reshape
            | OpKind::Transpose { .. }
            | OpKind::Concat { .. }
            | OpKind::Expand { .. }
            | OpKind::MaskFill => {
                let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
                let srcs = wiring_sources(&n.op, &refs, &n.shape);
                let mask = if srcs.contains(&WireSource::Mask) { Some(self.mask_cell()?) } else { None };
                let resolve = |w: WireSource| match w {
                    WireSource::Input { operand, index } => {
                        (ins[operand].cells[index], ins[operand].data[index])
                    }
                    WireSource::Mask => mask.expect("mask materialized"),
                };
                if numel > 0 {
                    let (lane, row) = self.place(numel.div_ceil(3), &n.id)?;
                    for (r, chunk) in srcs.chunks(3).enumerate() {
                        let r = row + r as u32;
                        let mut v = [0i64; 3];
                        for (k, &w) in chunk.iter().enumerate() {
                            v[k] = resolve(w).1;
                        }
                        self.emit(lane, r, GateKind::None, 0, v, chunk.len());
                        for (k, &w) in chunk.iter().enumerate() {
                            let (src, x) = resolve(w);
                            let col = AdviceCol::from_index(k).expect("three columns");
                            let cell = Cell::Advice { lane, row: r, col };
                            self.copy(cell, src);
                            cells.push(cell);
                            data.push(x);
                        }
                    }
                }
            }
            other => {
                return Err(CircuitError::NotReduced(format!(
                    "{} is a composite {} node",
                    n.id,
                    other.name()
                )))
            }
        }
        Ok(Vals { cells, data })
    }

    fn geometry(&self, row_cap: Option<usize>) -> Result<Geometry, CircuitError> {
        Geometry::new(
            self.placer.n_rows(),
            self.placer.n_lanes(),
            self.public.len(),
            row_cap,
            self.placer.used_rows(),
        )
    }

    pub fn into_stats(self) -> (BTreeMap<String, OpCost>, usize, usize, usize, usize) {
        let n_public = self.public.len();
        (self.stats, self.placer.n_rows(), self.placer.n_lanes(), self.placer.used_rows(), n_public)
    }

    pub fn into_circuit(self, row_cap: Option<usize>) -> Result<CircuitMatrix, CircuitError> {
        let geometry = self.geometry(row_cap)?;
        let n = geometry.n_rows;
        let (sigma_advice, instance_sigma) = permutation(&geometry, &self.copies);
        let mut fixed = Vec::with_capacity(geometry.n_lanes);
        let mut kinds = self.kinds.into_iter();
        let mut ws = self.ws.into_iter();
        for (lane, sigma) in sigma_advice.into_iter().enumerate() {
            let mut kind = kinds.next().unwrap_or_default();
            let mut w = ws.next().unwrap_or_default();
            debug_assert!(kind.len() <= n, "lane {} overflows", lane);
            kind.resize(n, 0);
            w.resize(n, FieldElement::ZERO);
            fixed.push(FixedLane { kind, w, sigma });
        }
        let inputs = self.g.inputs().map(|s| (s.id.clone(), s.shape.clone())).collect();
        let outputs = self
            .g
            .outputs
            .iter()
            .map(|o| (o.clone(), self.g.shape_of(o).expect("validated").to_vec()))
            .collect();
        let tensor_cells = self.values.into_iter().map(|(k, v)| (k, v.cells.clone())).collect();
        Ok(CircuitMatrix {
            gates: GateSet::new(&self.cfg),
            cfg: self.cfg,
            geometry,
            fixed,
            instance_sigma,
            tables: self.tables.into_iter().collect(),
            inputs,
            outputs,
            stats: self.stats,
            tensor_cells,
            lookup_tables: OnceLock::new(),
        })
    }

    pub fn into_witness(self, c: &CircuitMatrix, budget: usize) -> Result<Witness, CircuitError> {
        let geometry = self.geometry(c.geometry.row_cap)?;
        if geometry != c.geometry {
            return Err(CircuitError::Mismatch(format!(
                "layout {:?} differs from compiled {:?}",
                geometry, c.geometry
            )));
        }
        if self.saturations > budget {
            return Err(CircuitError::Saturation { count: self.saturations, budget });
        }
        let n = geometry.n_rows;
        let mut advice = self.advice;
        advice.resize(geometry.n_lanes, Vec::new());
        for lane in &mut advice {
            lane.resize(n, [FieldElement::ZERO; 3]);
        }
        Ok(Witness {
            advice,
            public_io: self.public.iter().map(|&v| FieldElement::from_i64(v)).collect(),
            outputs: self.outputs,
            saturations: self.saturations,
        })
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Turns copy pairs into σ: each equivalence class becomes one cycle in
/// ascending cell-id order.
fn permutation(geom: &Geometry, copies: &[(Cell, Cell)]) -> (Vec<Vec<[u32; 3]>>, Vec<Vec<u32>>) {
    let total = geom.total_cells();
    let mut parent: Vec<u32> = (0..total as u32).collect();
    for &(a, b) in copies {
        let (ra, rb) = (find(&mut parent, geom.cell_id(a)), find(&mut parent, geom.cell_id(b)));
        if ra != rb {
            parent[ra.max(rb) as usize] = ra.min(rb);
        }
    }
    let mut sigma: Vec<u32> = (0..total as u32).collect();
    let mut last: Vec<u32> = vec![u32::MAX; total];
    for id in 0..total as u32 {
        let r = find(&mut parent, id);
        if r != id {
            let l = last[r as usize];
            sigma[if l == u32::MAX { r } else { l } as usize] = id;
            last[r as usize] = id;
        }
    }
    for (r, &l) in last.iter().enumerate() {
        if l != u32::MAX {
            sigma[l as usize] = r as u32;
        }
    }
    let n = geom.n_rows;
    let advice = (0..geom.n_lanes)
        .map(|lane| {
            (0..n)
                .map(|row| {
                    let at = |col: usize| sigma[(lane * 3 + col) * n + row];
                    [at(0), at(1), at(2)]
                })
                .collect()
        })
        .collect();
    let base = geom.advice_columns() * n;
    let instance = (0..geom.n_instance).map(|j| sigma[base + j * n..base + (j + 1) * n].to_vec()).collect();
    (advice, instance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_cycles() {
        let g = Geometry::new(4, 1, 2, None, 4).unwrap();
        let a = |row| Cell::Advice { lane: 0, row, col: AdviceCol::A };
        let c = |row| Cell::Advice { lane: 0, row, col: AdviceCol::C };
        let (adv, inst) = permutation(&g, &[(a(1), c(0)), (a(2), c(0)), (Cell::Instance(0), c(3))]);
        // class {A1, A2, C0}: ids 1, 2, 8 form 1 → 2 → 8 → 1
        assert_eq!(adv[0][1][0], 2);
        assert_eq!(adv[0][2][0], 8);
        assert_eq!(adv[0][0][2], 1);
        // class {C3, I0}: ids 11, 12
        assert_eq!(adv[0][3][2], 12);
        assert_eq!(inst[0][0], 11);
        assert_eq!(inst[0][1], 13);
        assert_eq!(adv[0][3][1], 7);
    }
}
