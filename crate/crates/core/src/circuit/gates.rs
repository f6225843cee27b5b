use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::field::{FieldElement, FunctionId, QuantConfig};

/// The three advice columns of a lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdviceCol {
    A = 0,
    B = 1,
    C = 2,
}

impl AdviceCol {
    pub const ALL: [AdviceCol; 3] = [AdviceCol::A, AdviceCol::B, AdviceCol::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Selector value stored in the `kind` fixed column. Exactly one gate is
/// active per row; `None` marks padding and pure-copy rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GateKind {
    None,
    Add,
    Sub,
    Mul,
    /// Multiply-accumulate chained through `C` of the previous row.
    Mac,
    /// First row of a single-operand reduction.
    Sum0,
    Sum,
    /// Loads the `W` fixed cell into advice.
    Const,
    /// `A = 2^f·B + C` with `C` a centred remainder.
    Rescale,
    Lookup(FunctionId),
}

impl GateKind {
    const LOOKUP_BASE: u8 = 16;

    pub fn code(self) -> u8 {
        match self {
            GateKind::None => 0,
            GateKind::Add => 1,
            GateKind::Sub => 2,
            GateKind::Mul => 3,
            GateKind::Mac => 4,
            GateKind::Sum0 => 5,
            GateKind::Sum => 6,
            GateKind::Const => 7,
            GateKind::Rescale => 8,
            GateKind::Lookup(f) => Self::LOOKUP_BASE + f.tag(),
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => GateKind::None,
            1 => GateKind::Add,
            2 => GateKind::Sub,
            3 => GateKind::Mul,
            4 => GateKind::Mac,
            5 => GateKind::Sum0,
            6 => GateKind::Sum,
            7 => GateKind::Const,
            8 => GateKind::Rescale,
            c if c > Self::LOOKUP_BASE => GateKind::Lookup(FunctionId::from_tag(c - Self::LOOKUP_BASE)?),
            _ => return None,
        })
    }

    pub fn name(self) -> String {
        match self {
            GateKind::None => "none".into(),
            GateKind::Add => "add".into(),
            GateKind::Sub => "sub".into(),
            GateKind::Mul => "mul".into(),
            GateKind::Mac => "mac".into(),
            GateKind::Sum0 => "sum0".into(),
            GateKind::Sum => "sum".into(),
            GateKind::Const => "const".into(),
            GateKind::Rescale => "rescale".into(),
            GateKind::Lookup(f) => format!("lookup-{}", f.name()),
        }
    }

    /// Whether the gate reads `C` at rotation −1.
    pub fn uses_prev(self) -> bool {
        matches!(self, GateKind::Mac | GateKind::Sum)
    }

    /// Advice cells of the row the gate constrains.
    pub fn used_cells(self) -> usize {
        match self {
            GateKind::None => 0,
            GateKind::Const => 1,
            GateKind::Sum0 | GateKind::Sum | GateKind::Lookup(_) => 2,
            _ => 3,
        }
    }

    pub fn n_lookups(self) -> usize {
        match self {
            GateKind::Rescale => 2,
            GateKind::Lookup(_) => 1,
            _ => 0,
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A column reference inside a gate polynomial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Query {
    Advice {
        col: AdviceCol,
        rot: i32,
    },
    /// The `W` fixed column.
    Fixed {
        rot: i32,
    },
}

/// Polynomial over cells at relative row offsets.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Constant(FieldElement),
    Query(Query),
    Sum(Box<Expr>, Box<Expr>),
    Product(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

impl Expr {
    pub fn advice(col: AdviceCol, rot: i32) -> Self {
        Expr::Query(Query::Advice { col, rot })
    }

    pub fn evaluate(&self, q: &impl Fn(Query) -> FieldElement) -> FieldElement {
        match self {
            Expr::Constant(c) => *c,
            Expr::Query(x) => q(*x),
            Expr::Sum(a, b) => a.evaluate(q) + b.evaluate(q),
            Expr::Product(a, b) => a.evaluate(q) * b.evaluate(q),
            Expr::Neg(a) => -a.evaluate(q),
        }
    }

    pub fn queries(&self, out: &mut Vec<Query>) {
        match self {
            Expr::Constant(_) => {}
            Expr::Query(x) => out.push(*x),
            Expr::Sum(a, b) | Expr::Product(a, b) => {
                a.queries(out);
                b.queries(out);
            }
            Expr::Neg(a) => a.queries(out),
        }
    }

    pub fn degree(&self) -> usize {
        match self {
            Expr::Constant(_) => 0,
            Expr::Query(_) => 1,
            Expr::Sum(a, b) => a.degree().max(b.degree()),
            Expr::Product(a, b) => a.degree() + b.degree(),
            Expr::Neg(a) => a.degree(),
        }
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Sum(Box::new(self), Box::new(rhs))
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sum(Box::new(self), Box::new(Expr::Neg(Box::new(rhs))))
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Product(Box::new(self), Box::new(rhs))
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

/// `(input, output) ∈ table`, or `input ∈ table inputs` when `output` is absent.
#[derive(Clone, Debug, PartialEq)]
pub struct LookupSpec {
    pub input: Expr,
    pub output: Option<Expr>,
    pub table: FunctionId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    /// Polynomials that must vanish on every row carrying this selector.
    pub constraints: Vec<Expr>,
    pub lookups: Vec<LookupSpec>,
}

/// Why a single row failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RowFault {
    UnknownKind(u8),
    Gate(GateKind),
    Lookup(GateKind, FunctionId),
    /// A continuation gate on row 0 of a lane.
    NoPrevious(GateKind),
}

impl fmt::Display for RowFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowFault::UnknownKind(c) => write!(f, "unknown gate selector {}", c),
            RowFault::Gate(k) => write!(f, "{} gate does not vanish", k),
            RowFault::Lookup(k, t) => write!(f, "{} lookup into {} table failed", k, t),
            RowFault::NoPrevious(k) => write!(f, "{} gate on the first row of a lane", k),
        }
    }
}

/// Every gate the builder can emit, for one quantization config.
#[derive(Clone, Debug)]
pub struct GateSet {
    gates: Vec<Option<Gate>>,
}

impl GateSet {
    pub fn new(cfg: &QuantConfig) -> Self {
        use AdviceCol::*;
        let a = || Expr::advice(A, 0);
        let b = || Expr::advice(B, 0);
        let c = || Expr::advice(C, 0);
        let c_prev = || Expr::advice(C, -1);
        let w = || Expr::Query(Query::Fixed { rot: 0 });
        let two_f = Expr::Constant(FieldElement::new(cfg.scale() as u64));
        let poly = |kind, e: Expr| Gate { kind, constraints: vec![e], lookups: vec![] };

        let mut all = vec![
            poly(GateKind::Add, c() - (a() + b())),
            poly(GateKind::Sub, c() - (a() - b())),
            poly(GateKind::Mul, c() - a() * b()),
            poly(GateKind::Mac, c() - (c_prev() + a() * b())),
            poly(GateKind::Sum0, c() - a()),
            poly(GateKind::Sum, c() - (c_prev() + a())),
            poly(GateKind::Const, a() - w()),
            Gate {
                kind: GateKind::Rescale,
                constraints: vec![a() - (two_f * b() + c())],
                lookups: vec![
                    LookupSpec {
                        input: c(),
                        output: Some(Expr::Constant(FieldElement::ZERO)),
                        table: FunctionId::RescaleDiv,
                    },
                    LookupSpec { input: b(), output: None, table: FunctionId::RescaleDiv },
                ],
            },
        ];
        for f in FunctionId::ALL {
            if f != FunctionId::RescaleDiv {
                all.push(Gate {
                    kind: GateKind::Lookup(f),
                    constraints: vec![],
                    lookups: vec![LookupSpec { input: a(), output: Some(b()), table: f }],
                });
            }
        }
        let mut gates = vec![None; 256];
        gates[0] = Some(Gate { kind: GateKind::None, constraints: vec![], lookups: vec![] });
        for g in all {
            let code = g.kind.code() as usize;
            gates[code] = Some(g);
        }
        Self { gates }
    }

    pub fn get(&self, kind: GateKind) -> Option<&Gate> {
        self.gates[kind.code() as usize].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Gate> {
        self.gates.iter().flatten()
    }

    /// Checks one row. `prev` is the same lane's previous row, if any;
    /// `lookup(table, input, output)` decides table membership.
    pub fn check_row(
        &self,
        code: u8,
        cur: &[FieldElement; 3],
        prev: Option<&[FieldElement; 3]>,
        w: FieldElement,
        mut lookup: impl FnMut(FunctionId, FieldElement, Option<FieldElement>) -> bool,
    ) -> Result<(), RowFault> {
        let gate = self.gates[code as usize].as_ref().ok_or(RowFault::UnknownKind(code))?;
        if gate.kind == GateKind::None {
            return Ok(());
        }
        if gate.kind.uses_prev() && prev.is_none() {
            return Err(RowFault::NoPrevious(gate.kind));
        }
        let q = |x: Query| match x {
            Query::Advice { col, rot: 0 } => cur[col.index()],
            Query::Advice { col, rot: -1 } => prev.map_or(FieldElement::ZERO, |p| p[col.index()]),
            Query::Fixed { rot: 0 } => w,
            _ => unreachable!("gate rotations are limited to 0 and -1"),
        };
        for e in &gate.constraints {
            if !e.evaluate(&q).is_zero() {
                return Err(RowFault::Gate(gate.kind));
            }
        }
        for l in &gate.lookups {
            let input = l.input.evaluate(&q);
            let output = l.output.as_ref().map(|e| e.evaluate(&q));
            if !lookup(l.table, input, output) {
                return Err(RowFault::Lookup(gate.kind, l.table));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        let set = GateSet::new(&QuantConfig::default());
        for g in set.iter() {
            assert_eq!(GateKind::from_code(g.kind.code()), Some(g.kind));
        }
        assert_eq!(GateKind::from_code(9), None);
        assert_eq!(GateKind::from_code(200), None);
    }

    #[test]
    fn offsets_and_degrees_are_bounded() {
        let set = GateSet::new(&QuantConfig::default());
        for g in set.iter() {
            let mut qs = Vec::new();
            for e in &g.constraints {
                assert!(e.degree() <= 2);
                e.queries(&mut qs);
            }
            for l in &g.lookups {
                l.input.queries(&mut qs);
            }
            for q in qs {
                let rot = match q {
                    Query::Advice { rot, .. } | Query::Fixed { rot } => rot,
                };
                assert!((-1..=1).contains(&rot));
                if rot == -1 {
                    assert!(g.kind.uses_prev());
                }
            }
        }
    }

    #[test]
    fn mac_row() {
        let set = GateSet::new(&QuantConfig::default());
        let f = FieldElement::from_i64;
        let ok = set.check_row(4, &[f(3), f(-2), f(4)], Some(&[f(0), f(0), f(10)]), f(0), |_, _, _| true);
        assert_eq!(ok, Ok(()));
        let bad = set.check_row(4, &[f(3), f(-2), f(5)], Some(&[f(0), f(0), f(10)]), f(0), |_, _, _| true);
        assert_eq!(bad, Err(RowFault::Gate(GateKind::Mac)));
        assert_eq!(
            set.check_row(4, &[f(0); 3], None, f(0), |_, _, _| true),
            Err(RowFault::NoPrevious(GateKind::Mac))
        );
    }

    #[test]
    fn rescale_row() {
        let cfg = QuantConfig::default();
        let set = GateSet::new(&cfg);
        let f = FieldElement::from_i64;
        // 1000 = 128·8 − 24
        assert_eq!(set.check_row(8, &[f(1000), f(8), f(-24)], None, f(0), |_, _, _| true), Ok(()));
        assert!(set.check_row(8, &[f(1000), f(7), f(104)], None, f(0), |_, i, _| i != f(104)).is_err());
    }
}
