//! Spot-check argument: Merkle commitments to the circuit matrix, a
//! Fiat–Shamir transcript choosing `k` rows, and verification of gates,
//! lookups and copies on those rows only.
//!
//! Leaves are whole matrix rows (every lane side by side), so an opened row
//! costs one authentication path per tree regardless of the lane count.

mod encode;
mod merkle;
mod transcript;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

pub use merkle::{hash_leaf, hash_node, pad_leaf, verify_path, Digest, MerkleTree};
pub use transcript::{challenge_rows, Transcript};

use crate::circuit::{
    satisfies_all, AdviceCol, Cell, CircuitMatrix, GateKind, GateSet, Geometry, RowFault, Violation, Witness,
};
use crate::field::{decode, FieldElement, FunctionId, LookupTable, QuantConfig};
use crate::graph::Shape;
use crate::zoo::ModelCommitment;

/// Proof format and transcript version.
pub const PROOF_VERSION: u16 = 1;
/// Row samples per proof unless a deployment chooses otherwise.
pub const DEFAULT_K: usize = 30;

const ADVICE_DOMAIN: u8 = b'A';
const FIXED_DOMAIN: u8 = b'F';
const TABLE_DOMAIN: u8 = 0x40;
const GATE_SET_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArgumentError {
    #[error("refusing to prove an unsatisfied witness: {0}")]
    Unsatisfied(Violation),
    #[error("cannot sample {k} distinct rows from {n_rows}")]
    TooManySamples { k: usize, n_rows: usize },
    #[error("witness shape does not match circuit: {0}")]
    Shape(String),
    #[error("proving key was built for a different circuit")]
    KeyMismatch,
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
}

/// Everything a verifier needs about a circuit. Contains no weights: the
/// fixed columns enter only through `fixed_root`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CircuitDescription {
    pub cfg: QuantConfig,
    pub n_rows: usize,
    pub n_lanes: usize,
    pub n_public: usize,
    pub inputs: Vec<(String, Shape)>,
    pub outputs: Vec<(String, Shape)>,
    /// Root of each lookup table the circuit uses.
    pub tables: Vec<(FunctionId, Digest)>,
    pub fixed_root: Digest,
}

impl CircuitDescription {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            n_rows: self.n_rows,
            n_lanes: self.n_lanes,
            n_instance: self.n_public.div_ceil(self.n_rows),
            n_public: self.n_public,
            row_cap: None,
            used_rows: 0,
        }
    }

    pub fn n_instance(&self) -> usize {
        self.n_public.div_ceil(self.n_rows)
    }

    pub fn public_input_len(&self) -> usize {
        self.inputs.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Digest of the public shape of the circuit: quantization, geometry,
    /// io shapes, gate set and table roots. The fixed root is registered
    /// separately.
    pub fn geometry_digest(&self) -> Digest {
        let mut t = Transcript::new();
        t.absorb(b"geometry", &encode::description_body(self));
        t.absorb(b"gates", &GATE_SET_VERSION.to_le_bytes());
        t.challenge_seed()
    }

    /// Recomputes every table root from the quantization config.
    pub fn tables_are_canonical(&self) -> bool {
        self.tables
            .iter()
            .all(|&(f, root)| table_tree(&crate::field::build_lookup(f, &self.cfg)).root() == root)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode::write_description(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArgumentError> {
        encode::read_description(bytes)
    }
}

fn row_cells(wit: &Witness, r: usize) -> Vec<[FieldElement; 3]> {
    wit.advice.iter().map(|l| l[r]).collect()
}

fn advice_leaf(row: &[[FieldElement; 3]]) -> Digest {
    let mut b = Vec::with_capacity(24 * row.len());
    for cells in row {
        for v in cells {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    hash_leaf(ADVICE_DOMAIN, &b)
}

/// Fixed columns of one row across all lanes, plus the row's instance σ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedRow {
    pub kind: Vec<u8>,
    pub w: Vec<FieldElement>,
    pub sigma: Vec<[u32; 3]>,
    pub instance_sigma: Vec<u32>,
}

impl FixedRow {
    fn of(c: &CircuitMatrix, row: usize) -> Self {
        Self {
            kind: c.fixed.iter().map(|l| l.kind[row]).collect(),
            w: c.fixed.iter().map(|l| l.w[row]).collect(),
            sigma: c.fixed.iter().map(|l| l.sigma[row]).collect(),
            instance_sigma: c.instance_sigma.iter().map(|col| col[row]).collect(),
        }
    }

    fn leaf(&self) -> Digest {
        let mut b = Vec::with_capacity(21 * self.kind.len() + 4 * self.instance_sigma.len());
        for lane in 0..self.kind.len() {
            b.push(self.kind[lane]);
            b.extend_from_slice(&self.w[lane].to_le_bytes());
            for s in self.sigma[lane] {
                b.extend_from_slice(&s.to_le_bytes());
            }
        }
        for s in &self.instance_sigma {
            b.extend_from_slice(&s.to_le_bytes());
        }
        hash_leaf(FIXED_DOMAIN, &b)
    }
}

fn table_leaf(f: FunctionId, input: FieldElement, output: FieldElement) -> Digest {
    let mut b = [0u8; 16];
    b[..8].copy_from_slice(&input.to_le_bytes());
    b[8..].copy_from_slice(&output.to_le_bytes());
    hash_leaf(TABLE_DOMAIN + f.tag(), &b)
}

fn table_tree(t: &LookupTable) -> MerkleTree {
    let f = t.function();
    MerkleTree::from_leaf_hashes(t.rows().map(|(i, o)| table_leaf(f, i, o)).collect(), TABLE_DOMAIN + f.tag())
}

/// Row of the table holding `input`, if the input is in range.
fn table_index(cfg: &QuantConfig, input: FieldElement) -> Option<u32> {
    let q = decode(input);
    cfg.in_range(q).then(|| (q - cfg.range_min()) as u32)
}

/// Prover-side commitments that do not depend on the witness.
#[derive(Debug)]
pub struct ProvingKey {
    desc: CircuitDescription,
    fixed: MerkleTree,
    tables: BTreeMap<FunctionId, MerkleTree>,
}

impl ProvingKey {
    pub fn new(c: &CircuitMatrix) -> Self {
        let n = c.geometry.n_rows;
        let fixed =
            MerkleTree::from_leaf_hashes((0..n).map(|r| FixedRow::of(c, r).leaf()).collect(), FIXED_DOMAIN);
        let tables: BTreeMap<_, _> =
            c.tables.iter().map(|&f| (f, table_tree(c.lookup_table(f).expect("registered table")))).collect();
        let desc = CircuitDescription {
            cfg: c.cfg,
            n_rows: n,
            n_lanes: c.geometry.n_lanes,
            n_public: c.geometry.n_public,
            inputs: c.inputs.clone(),
            outputs: c.outputs.clone(),
            tables: tables.iter().map(|(&f, t)| (f, t.root())).collect(),
            fixed_root: fixed.root(),
        };
        Self { desc, fixed, tables }
    }

    pub fn description(&self) -> &CircuitDescription {
        &self.desc
    }

    /// Proves `wit` after checking that it satisfies every constraint.
    pub fn prove(
        &self,
        c: &CircuitMatrix,
        wit: &Witness,
        mc: &ModelCommitment,
        k: usize,
    ) -> Result<Proof, ArgumentError> {
        satisfies_all(c, wit).map_err(ArgumentError::Unsatisfied)?;
        self.prove_unchecked(c, wit, mc, k)
    }

    /// Builds a proof without the honest-prover guard. Used to measure how
    /// often the verifier catches a bad witness.
    pub fn prove_unchecked(
        &self,
        c: &CircuitMatrix,
        wit: &Witness,
        mc: &ModelCommitment,
        k: usize,
    ) -> Result<Proof, ArgumentError> {
        let advice = self.commit_advice(c, wit)?;
        let mut head = ProofHeader {
            version: PROOF_VERSION,
            k: k as u32,
            frac_bits: c.cfg.frac_bits() as u8,
            lookup_bits: c.cfg.lookup_bits() as u8,
            mc: *mc,
            geometry: self.desc.geometry_digest(),
            fixed_root: self.fixed.root(),
            advice_root: advice.root(),
        };
        let indices = challenge_rows(&transcript(&head, &wit.public_io), k, c.geometry.n_rows)?;
        head.k = indices.len() as u32;
        Ok(self.open(c, wit, &advice, head, indices))
    }

    /// Rows among `candidates` that the verifier would reject if it opened
    /// them, with the reason, found by running the verifier's row checks on
    /// single-row openings. With `d` such rows out of `n`, a `k`-sample
    /// proof is caught with probability `1 - C(n-d, k) / C(n, k)`.
    pub fn detecting_rows(
        &self,
        c: &CircuitMatrix,
        wit: &Witness,
        candidates: impl IntoIterator<Item = u32>,
    ) -> Result<Vec<(u32, FailureReason)>, ArgumentError> {
        let advice = self.commit_advice(c, wit)?;
        let head = ProofHeader {
            version: PROOF_VERSION,
            k: 1,
            frac_bits: c.cfg.frac_bits() as u8,
            lookup_bits: c.cfg.lookup_bits() as u8,
            mc: ModelCommitment { digest: [0; 32] },
            geometry: self.desc.geometry_digest(),
            fixed_root: self.fixed.root(),
            advice_root: advice.root(),
        };
        let n = c.geometry.n_rows as u32;
        let candidates: BTreeSet<u32> = candidates.into_iter().filter(|&r| r < n).collect();
        Ok(candidates
            .into_iter()
            .filter_map(|r| {
                let p = self.open(c, wit, &advice, head, vec![r]);
                Verifier::new(&p, &self.desc).check_openings().err().map(|(reason, _)| (r, reason))
            })
            .collect())
    }

    fn commit_advice(&self, c: &CircuitMatrix, wit: &Witness) -> Result<MerkleTree, ArgumentError> {
        let geo = &c.geometry;
        if self.desc.n_rows != geo.n_rows || self.desc.n_lanes != geo.n_lanes || self.desc.cfg != c.cfg {
            return Err(ArgumentError::KeyMismatch);
        }
        if wit.advice.len() != geo.n_lanes || wit.advice.iter().any(|l| l.len() != geo.n_rows) {
            return Err(ArgumentError::Shape(format!(
                "expected {} lanes of {} rows",
                geo.n_lanes, geo.n_rows
            )));
        }
        if wit.public_io.len() != geo.n_public {
            return Err(ArgumentError::Shape(format!("expected {} public values", geo.n_public)));
        }
        let leaves = (0..geo.n_rows).map(|r| advice_leaf(&row_cells(wit, r))).collect();
        Ok(MerkleTree::from_leaf_hashes(leaves, ADVICE_DOMAIN))
    }

    /// Openings for `indices`: the rows themselves, the advice rows their
    /// gates and copy links read, and the table rows their lookups read.
    fn open(
        &self,
        c: &CircuitMatrix,
        wit: &Witness,
        advice: &MerkleTree,
        head: ProofHeader,
        indices: Vec<u32>,
    ) -> Proof {
        let geo = &c.geometry;
        let opened: BTreeSet<u32> = indices.iter().copied().collect();
        let mut extra_rows = BTreeSet::new();
        let mut lookups = BTreeSet::new();
        let gates = c.gates();
        for &r in &indices {
            let row = r as usize;
            for lane in 0..geo.n_lanes {
                let kind = c.kind_at(lane, row);
                if kind.uses_prev() && row > 0 {
                    extra_rows.insert(r - 1);
                }
                let prev = row.checked_sub(1).map(|p| &wit.advice[lane][p]);
                let fixed = &c.fixed[lane];
                let _ = gates.check_row(
                    fixed.kind[row],
                    &wit.advice[lane][row],
                    prev,
                    fixed.w[row],
                    |t, i, _| {
                        if let Some(idx) = table_index(&c.cfg, i) {
                            lookups.insert((t, idx));
                        }
                        true
                    },
                );
                for &s in &fixed.sigma[row] {
                    if let Some(Cell::Advice { row: pr, .. }) = geo.cell_of(s) {
                        extra_rows.insert(pr);
                    }
                }
            }
            for col in &c.instance_sigma {
                if let Some(Cell::Advice { row: pr, .. }) = geo.cell_of(col[row]) {
                    extra_rows.insert(pr);
                }
            }
        }
        let open_advice = |r: u32| AdviceOpening {
            row: r,
            cells: row_cells(wit, r as usize),
            path: advice.path(r as usize),
        };
        let rows = indices
            .iter()
            .map(|&r| RowOpening {
                advice: open_advice(r),
                fixed: FixedRow::of(c, r as usize),
                fixed_path: self.fixed.path(r as usize),
            })
            .collect();
        let extra = extra_rows.into_iter().filter(|r| !opened.contains(r)).map(open_advice).collect();
        let lookups = lookups
            .into_iter()
            .map(|(t, idx)| {
                let (input, output) = c.lookup_table(t).expect("registered table").field_row(idx as usize);
                let path = self.tables.get(&t).expect("registered table").path(idx as usize);
                TableOpening { table: t, index: idx, input, output, path }
            })
            .collect();
        Proof { head, public_io: wit.public_io.clone(), indices, rows, extra, lookups }
    }
}

/// One-shot proving: builds the proving key, then proves.
pub fn prove(
    c: &CircuitMatrix,
    wit: &Witness,
    mc: &ModelCommitment,
    k: usize,
) -> Result<Proof, ArgumentError> {
    ProvingKey::new(c).prove(c, wit, mc, k)
}

/// Public description of a compiled circuit.
pub fn describe(c: &CircuitMatrix) -> CircuitDescription {
    ProvingKey::new(c).desc
}

/// Fixed-size leading block of a proof.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProofHeader {
    pub version: u16,
    pub k: u32,
    pub frac_bits: u8,
    pub lookup_bits: u8,
    pub mc: ModelCommitment,
    pub geometry: Digest,
    pub fixed_root: Digest,
    pub advice_root: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdviceOpening {
    pub row: u32,
    /// `[A, B, C]` of every lane.
    pub cells: Vec<[FieldElement; 3]>,
    pub path: Vec<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowOpening {
    pub advice: AdviceOpening,
    pub fixed: FixedRow,
    pub fixed_path: Vec<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableOpening {
    pub table: FunctionId,
    pub index: u32,
    pub input: FieldElement,
    pub output: FieldElement,
    pub path: Vec<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proof {
    pub head: ProofHeader,
    /// Encoded inputs followed by encoded outputs.
    pub public_io: Vec<FieldElement>,
    /// Challenged rows in transcript order.
    pub indices: Vec<u32>,
    /// Openings of the challenged rows, in the order of `indices`.
    pub rows: Vec<RowOpening>,
    /// Advice of the rows read by continuation gates and copy links, sorted
    /// by row, excluding challenged rows.
    pub extra: Vec<AdviceOpening>,
    /// Table rows read by lookups on challenged rows, sorted by table and row.
    pub lookups: Vec<TableOpening>,
}

impl Proof {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode::write_proof(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArgumentError> {
        encode::read_proof(bytes)
    }

    pub fn byte_size(&self) -> usize {
        self.to_bytes().len()
    }

    /// Public outputs, after the inputs.
    pub fn public_outputs(&self, desc: &CircuitDescription) -> &[FieldElement] {
        &self.public_io[desc.public_input_len().min(self.public_io.len())..]
    }
}

/// Transcript over the header and public values, in absorption order.
pub fn transcript(head: &ProofHeader, public_io: &[FieldElement]) -> Transcript {
    let mut t = Transcript::new();
    t.absorb(b"version", &head.version.to_le_bytes());
    let mut params = head.k.to_le_bytes().to_vec();
    params.extend_from_slice(&[head.frac_bits, head.lookup_bits]);
    t.absorb(b"params", &params);
    t.absorb(b"model", &head.mc.digest);
    t.absorb(b"geometry", &head.geometry);
    t.absorb(b"fixed", &head.fixed_root);
    t.absorb(b"advice", &head.advice_root);
    let io: Vec<u8> = public_io.iter().flat_map(|v| v.to_le_bytes()).collect();
    t.absorb(b"public", &io);
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FailureReason {
    None,
    CommitmentMismatch,
    MerklePath,
    GateViolation,
    LookupViolation,
    CopyViolation,
    TranscriptMismatch,
}

impl FailureReason {
    pub const ALL: [FailureReason; 7] = [
        FailureReason::None,
        FailureReason::CommitmentMismatch,
        FailureReason::MerklePath,
        FailureReason::GateViolation,
        FailureReason::LookupViolation,
        FailureReason::CopyViolation,
        FailureReason::TranscriptMismatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::None => "none",
            FailureReason::CommitmentMismatch => "commitment-mismatch",
            FailureReason::MerklePath => "merkle-path",
            FailureReason::GateViolation => "gate-violation",
            FailureReason::LookupViolation => "lookup-violation",
            FailureReason::CopyViolation => "copy-violation",
            FailureReason::TranscriptMismatch => "transcript-mismatch",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailureReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown failure reason {:?}", s))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyReport {
    pub accepted: bool,
    pub failure_reason: FailureReason,
    pub detail: String,
}

impl VerifyReport {
    fn accept() -> Self {
        Self { accepted: true, failure_reason: FailureReason::None, detail: String::new() }
    }

    fn reject(reason: FailureReason, detail: impl Into<String>) -> Self {
        Self { accepted: false, failure_reason: reason, detail: detail.into() }
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.accepted {
            f.write_str("accepted")
        } else {
            write!(f, "rejected ({}): {}", self.failure_reason, self.detail)
        }
    }
}

/// Verifies with the default minimum of [`DEFAULT_K`] samples (or every
/// row, for circuits shorter than that).
pub fn verify(p: &Proof, desc: &CircuitDescription, mc: &ModelCommitment) -> VerifyReport {
    verify_with_min_k(p, desc, mc, DEFAULT_K)
}

pub fn verify_with_min_k(
    p: &Proof,
    desc: &CircuitDescription,
    mc: &ModelCommitment,
    min_k: usize,
) -> VerifyReport {
    match Verifier::new(p, desc).run(mc, min_k) {
        Ok(()) => VerifyReport::accept(),
        Err((reason, detail)) => VerifyReport::reject(reason, detail),
    }
}

type Fail = (FailureReason, String);

struct Verifier<'a> {
    p: &'a Proof,
    desc: &'a CircuitDescription,
    geo: Geometry,
    depth: usize,
}

/// Opened table rows by (table, index): (input, output).
type OpenedTables = HashMap<(FunctionId, u32), (FieldElement, FieldElement)>;

impl<'a> Verifier<'a> {
    fn new(p: &'a Proof, desc: &'a CircuitDescription) -> Self {
        Self { p, desc, geo: desc.geometry(), depth: desc.n_rows.trailing_zeros() as usize }
    }

    fn run(&self, mc: &ModelCommitment, min_k: usize) -> Result<(), Fail> {
        use FailureReason as R;
        let (p, desc, h) = (self.p, self.desc, &self.p.head);
        let n = desc.n_rows;
        let err = |r: FailureReason, m: String| Err((r, m));
        if h.version != PROOF_VERSION {
            return err(R::TranscriptMismatch, format!("unsupported proof version {}", h.version));
        }
        if (h.frac_bits as u32, h.lookup_bits as u32) != (desc.cfg.frac_bits(), desc.cfg.lookup_bits()) {
            return err(
                R::CommitmentMismatch,
                format!("proof uses f={} B={}, circuit uses {}", h.frac_bits, h.lookup_bits, desc.cfg),
            );
        }
        if h.mc != *mc {
            return err(R::CommitmentMismatch, format!("proof is for model {}, expected {}", h.mc, mc));
        }
        if h.geometry != desc.geometry_digest() {
            return err(
                R::CommitmentMismatch,
                "circuit geometry digest differs from the registered one".into(),
            );
        }
        if h.fixed_root != desc.fixed_root {
            return err(R::CommitmentMismatch, "fixed-column root differs from the registered one".into());
        }
        let k = h.k as usize;
        if k > n || k < min_k.min(n) {
            return err(R::TranscriptMismatch, format!("k = {} outside [{}, {}]", k, min_k.min(n), n));
        }
        if p.public_io.len() != desc.n_public {
            return err(
                R::TranscriptMismatch,
                format!("{} public values, circuit has {}", p.public_io.len(), desc.n_public),
            );
        }
        let expect = challenge_rows(&transcript(h, &p.public_io), k, n)
            .map_err(|e| (R::TranscriptMismatch, e.to_string()))?;
        if expect != p.indices {
            return err(R::TranscriptMismatch, "opened rows are not the ones the transcript selects".into());
        }

        self.check_openings()
    }

    /// Merkle paths, then gates, lookups and copies on every opened row.
    fn check_openings(&self) -> Result<(), Fail> {
        let advice = self.check_paths()?;
        let tables = self.check_tables()?;
        let gates = GateSet::new(&self.desc.cfg);
        for o in &self.p.rows {
            self.check_row(o, &advice, &tables, &gates)?;
        }
        Ok(())
    }

    /// Authenticates every advice and fixed opening. Returns advice by row.
    fn check_paths(&self) -> Result<HashMap<u32, &'a [[FieldElement; 3]]>, Fail> {
        let bad = |m: String| (FailureReason::MerklePath, m);
        let (p, h) = (self.p, &self.p.head);
        if p.rows.len() != p.indices.len() {
            return Err(bad(format!("{} row openings for {} challenges", p.rows.len(), p.indices.len())));
        }
        let mut advice = HashMap::new();
        let mut add = |o: &'a AdviceOpening| -> Result<(), Fail> {
            if o.cells.len() != self.desc.n_lanes {
                return Err(bad(format!("row {} opens {} lanes", o.row, o.cells.len())));
            }
            if !verify_path(&h.advice_root, advice_leaf(&o.cells), o.row as usize, &o.path, self.depth) {
                return Err(bad(format!("advice path for row {} does not reach the root", o.row)));
            }
            advice.insert(o.row, o.cells.as_slice());
            Ok(())
        };
        for (o, &r) in p.rows.iter().zip(&p.indices) {
            if o.advice.row != r {
                return Err(bad(format!("opening for row {} where {} was challenged", o.advice.row, r)));
            }
            add(&o.advice)?;
            let f = &o.fixed;
            let lanes = self.desc.n_lanes;
            if f.kind.len() != lanes
                || f.w.len() != lanes
                || f.sigma.len() != lanes
                || f.instance_sigma.len() != self.geo.n_instance
            {
                return Err(bad(format!("fixed opening for row {} has the wrong width", r)));
            }
            if !verify_path(&h.fixed_root, f.leaf(), r as usize, &o.fixed_path, self.depth) {
                return Err(bad(format!("fixed path for row {} does not reach the root", r)));
            }
        }
        for o in &p.extra {
            add(o)?;
        }
        Ok(advice)
    }

    fn check_tables(&self) -> Result<OpenedTables, Fail> {
        let depth = self.desc.cfg.lookup_bits() as usize;
        let mut out = HashMap::new();
        for t in &self.p.lookups {
            let root = self.desc.tables.iter().find(|(f, _)| *f == t.table).map(|(_, r)| r);
            let ok = root.is_some_and(|root| {
                verify_path(root, table_leaf(t.table, t.input, t.output), t.index as usize, &t.path, depth)
            });
            if !ok {
                return Err((
                    FailureReason::MerklePath,
                    format!("{} table row {} not authenticated", t.table, t.index),
                ));
            }
            out.insert((t.table, t.index), (t.input, t.output));
        }
        Ok(out)
    }

    fn check_row(
        &self,
        o: &RowOpening,
        advice: &HashMap<u32, &[[FieldElement; 3]]>,
        tables: &OpenedTables,
        gates: &GateSet,
    ) -> Result<(), Fail> {
        use FailureReason as R;
        let row = o.advice.row;
        let cfg = &self.desc.cfg;
        let missing = |m: String| (R::MerklePath, m);
        for lane in 0..self.desc.n_lanes {
            let code = o.fixed.kind[lane];
            let kind = GateKind::from_code(code);
            let prev = match row.checked_sub(1) {
                Some(pr) if kind.is_some_and(|k| k.uses_prev()) => Some(
                    &advice
                        .get(&pr)
                        .ok_or_else(|| missing(format!("row {} not opened for lane {}", pr, lane)))?[lane],
                ),
                _ => None,
            };
            let mut absent = None;
            let res =
                gates.check_row(code, &o.advice.cells[lane], prev, o.fixed.w[lane], |t, input, output| {
                    let Some(idx) = table_index(cfg, input) else { return false };
                    match tables.get(&(t, idx)) {
                        Some(&(i, out)) => i == input && output.is_none_or(|x| x == out),
                        None => {
                            absent = Some((t, idx));
                            true
                        }
                    }
                });
            if let Some((t, idx)) = absent {
                return Err(missing(format!("{} table row {} not opened", t, idx)));
            }
            if let Err(fault) = res {
                let reason =
                    if matches!(fault, RowFault::Lookup(..)) { R::LookupViolation } else { R::GateViolation };
                return Err((reason, format!("lane {} row {}: {}", lane, row, fault)));
            }
        }

        let value =
            |id: u32| -> Result<FieldElement, Fail> {
                match self.geo.cell_of(id) {
                    Some(Cell::Advice { lane, row, col }) => advice
                        .get(&row)
                        .map(|cells| cells[lane as usize][col.index()])
                        .ok_or_else(|| missing(format!("copy partner row {} not opened", row))),
                    Some(Cell::Instance(i)) => self.p.public_io.get(i as usize).copied().ok_or_else(|| {
                        (R::CopyViolation, format!("σ points past the public values: {}", id))
                    }),
                    None => Err((R::CopyViolation, format!("σ points outside the matrix: {}", id))),
                }
            };
        for lane in 0..self.desc.n_lanes {
            for (k, &s) in o.fixed.sigma[lane].iter().enumerate() {
                let col = AdviceCol::from_index(k).expect("three columns");
                let cell = Cell::Advice { lane: lane as u32, row, col };
                if s != self.geo.cell_id(cell) && value(s)? != o.advice.cells[lane][k] {
                    return Err((
                        R::CopyViolation,
                        format!("lane {} row {} column {:?} differs from its copy", lane, row, col),
                    ));
                }
            }
        }
        for (j, &s) in o.fixed.instance_sigma.iter().enumerate() {
            let i = j * self.desc.n_rows + row as usize;
            if i >= self.desc.n_public {
                continue;
            }
            let cell = Cell::Instance(i as u32);
            if s != self.geo.cell_id(cell) && value(s)? != self.p.public_io[i] {
                return Err((R::CopyViolation, format!("public value {} differs from its copy", i)));
            }
        }
        Ok(())
    }
}
