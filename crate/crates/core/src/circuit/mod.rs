//! Plonkish circuit matrix: region layout with column overflow, gates, copy
//! permutation, lookup tables, witness generation and constraint profiling.

mod check;
mod gates;
mod layout;
mod profile;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

pub use check::{satisfies_all, Violation, ViolationKind};
pub use gates::{AdviceCol, Expr, Gate, GateKind, GateSet, LookupSpec, Query, RowFault};
pub use layout::{Cell, Geometry};
pub use profile::{count_constraints, profile, CircuitProfile, OpCost};

use crate::field::{build_lookup, FieldElement, FunctionId, LookupTable, QuantConfig};
use crate::graph::{Graph, GraphError, ParamValues, Shape, Tensor};
use synth::{Mode, Synth};

#[derive(Debug, thiserror::Error)]
pub enum CircuitError {
    #[error("graph is not reduced: {0}")]
    NotReduced(String),
    #[error("row cap {0} is not a power of two")]
    BadRowCap(usize),
    #[error("region does not fit: {node} needs {height} rows, row cap is {cap}")]
    RegionTooTall { node: String, height: usize, cap: usize },
    #[error("cannot lower {node}: {msg}")]
    Unsupported { node: String, msg: String },
    #[error("circuit too large: {0} permutation cells exceed 32-bit ids")]
    TooLarge(u64),
    #[error("witness does not match circuit: {0}")]
    Mismatch(String),
    #[error("{count} values saturated during witness generation, budget is {budget}")]
    Saturation { count: usize, budget: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Fixed columns of one lane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedLane {
    /// Gate selector per row, see [`GateKind::code`].
    pub kind: Vec<u8>,
    /// Constants and weights loaded by `Const` rows.
    pub w: Vec<FieldElement>,
    /// Copy permutation: σ of the `A`, `B`, `C` cells as global cell ids.
    pub sigma: Vec<[u32; 3]>,
}

/// A compiled circuit. Fixed columns carry the quantized weights, so the
/// matrix is specific to one model.
#[derive(Debug)]
pub struct CircuitMatrix {
    pub cfg: QuantConfig,
    pub geometry: Geometry,
    pub fixed: Vec<FixedLane>,
    /// σ of every instance cell, one vector per instance column.
    pub instance_sigma: Vec<Vec<u32>>,
    /// Lookup tables the circuit uses.
    pub tables: Vec<FunctionId>,
    pub inputs: Vec<(String, Shape)>,
    pub outputs: Vec<(String, Shape)>,
    stats: BTreeMap<String, OpCost>,
    tensor_cells: HashMap<String, Vec<Cell>>,
    gates: GateSet,
    lookup_tables: OnceLock<BTreeMap<FunctionId, LookupTable>>,
}

impl CircuitMatrix {
    pub fn gates(&self) -> &GateSet {
        &self.gates
    }

    pub fn kind_at(&self, lane: usize, row: usize) -> GateKind {
        GateKind::from_code(self.fixed[lane].kind[row]).unwrap_or(GateKind::None)
    }

    /// σ of a cell as a global id.
    pub fn sigma(&self, cell: Cell) -> u32 {
        match cell {
            Cell::Advice { lane, row, col } => self.fixed[lane as usize].sigma[row as usize][col.index()],
            Cell::Instance(i) => {
                let (j, r) = self.geometry.instance_position(i as usize);
                self.instance_sigma[j][r]
            }
        }
    }

    /// Cells holding each element of a tensor (graph inputs, materialized
    /// constants and node outputs).
    pub fn cells_of(&self, tensor: &str) -> Option<&[Cell]> {
        self.tensor_cells.get(tensor).map(|v| v.as_slice())
    }

    pub fn lookup_table(&self, f: FunctionId) -> Option<&LookupTable> {
        self.lookup_tables
            .get_or_init(|| self.tables.iter().map(|&t| (t, build_lookup(t, &self.cfg))).collect())
            .get(&f)
    }

    pub fn stats(&self) -> &BTreeMap<String, OpCost> {
        &self.stats
    }

    pub fn public_len(&self) -> usize {
        self.geometry.n_public
    }

    /// Number of public values that belong to the inputs.
    pub fn public_input_len(&self) -> usize {
        self.inputs.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Advice assignment plus public values for one inference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    /// `[A, B, C]` per row, one vector per lane.
    pub advice: Vec<Vec<[FieldElement; 3]>>,
    /// Encoded inputs followed by encoded outputs.
    pub public_io: Vec<FieldElement>,
    /// Outputs as fixed-point integers.
    pub outputs: Vec<Tensor>,
    pub saturations: usize,
}

impl Witness {
    pub fn value(&self, cell: Cell) -> FieldElement {
        match cell {
            Cell::Advice { lane, row, col } => self.advice[lane as usize][row as usize][col.index()],
            Cell::Instance(i) => self.public_io.get(i as usize).copied().unwrap_or(FieldElement::ZERO),
        }
    }

    pub fn set(&mut self, cell: Cell, v: FieldElement) {
        match cell {
            Cell::Advice { lane, row, col } => self.advice[lane as usize][row as usize][col.index()] = v,
            Cell::Instance(i) => self.public_io[i as usize] = v,
        }
    }

    /// Serialized size of the full assignment: every advice and instance cell.
    pub fn byte_size(&self, geometry: &Geometry) -> usize {
        8 * (geometry.advice_columns() + geometry.n_instance) * geometry.n_rows
    }

    /// Column-major dump of the assignment: advice columns lane by lane,
    /// then the instance columns zero-padded to full height.
    pub fn to_bytes(&self, geometry: &Geometry) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_size(geometry));
        for lane in &self.advice {
            for col in 0..3 {
                for row in lane {
                    out.extend_from_slice(&row[col].to_le_bytes());
                }
            }
        }
        for i in 0..geometry.n_instance * geometry.n_rows {
            out.extend_from_slice(&self.value(Cell::Instance(i as u32)).to_le_bytes());
        }
        out
    }
}

/// Lowers a reduced graph to a circuit matrix. `params` supplies the weights
/// placed in fixed columns; `row_cap` forces lanes of that height.
pub fn compile(
    g: &Graph,
    params: &ParamValues,
    cfg: &QuantConfig,
    row_cap: Option<usize>,
) -> Result<CircuitMatrix, CircuitError> {
    let mut s = Synth::new(g, params, cfg, row_cap, Mode::Compile)?;
    s.run(None)?;
    s.into_circuit(row_cap)
}

/// Honest assignment for `inputs` (encoded tensors, one per graph input).
/// Fails if any value saturates.
pub fn gen_witness(
    c: &CircuitMatrix,
    g: &Graph,
    inputs: &[Tensor],
    params: &ParamValues,
) -> Result<Witness, CircuitError> {
    gen_witness_with_budget(c, g, inputs, params, 0)
}

/// Like [`gen_witness`], tolerating up to `budget` saturated values. A
/// saturated value breaks its rescale or lookup row, so such a witness does
/// not satisfy the circuit.
pub fn gen_witness_with_budget(
    c: &CircuitMatrix,
    g: &Graph,
    inputs: &[Tensor],
    params: &ParamValues,
    budget: usize,
) -> Result<Witness, CircuitError> {
    let mut s = Synth::new(g, params, &c.cfg, c.geometry.row_cap, Mode::Witness)?;
    s.run(Some(inputs))?;
    s.into_witness(c, budget)
}
