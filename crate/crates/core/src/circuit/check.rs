use std::fmt;

use super::{Cell, CircuitMatrix, RowFault, Witness};
use crate::field::FieldElement;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Shape,
    Gate,
    Lookup,
    Copy,
}

/// First failing constraint found by [`satisfies_all`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub lane: usize,
    pub row: usize,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ViolationKind::Shape => "shape",
            ViolationKind::Gate => "gate",
            ViolationKind::Lookup => "lookup",
            ViolationKind::Copy => "copy",
        };
        write!(f, "{} violation at lane {} row {}: {}", kind, self.lane, self.row, self.detail)
    }
}

impl std::error::Error for Violation {}

/// Checks every gate row, lookup and copy link. Rows are scanned lane by lane,
/// then copies, so the reported violation is deterministic.
pub fn satisfies_all(c: &CircuitMatrix, w: &Witness) -> Result<(), Violation> {
    let geo = &c.geometry;
    let shape = |detail: String| Violation { kind: ViolationKind::Shape, lane: 0, row: 0, detail };
    if w.advice.len() != geo.n_lanes || w.advice.iter().any(|l| l.len() != geo.n_rows) {
        return Err(shape(format!("witness is not {} lanes of {} rows", geo.n_lanes, geo.n_rows)));
    }
    if w.public_io.len() != geo.n_public {
        return Err(shape(format!("{} public values, circuit expects {}", w.public_io.len(), geo.n_public)));
    }
    for (lane, (fixed, advice)) in c.fixed.iter().zip(&w.advice).enumerate() {
        for row in 0..geo.n_rows {
            let prev = row.checked_sub(1).map(|r| &advice[r]);
            let res = c.gates().check_row(fixed.kind[row], &advice[row], prev, fixed.w[row], |t, i, o| {
                let table = c.lookup_table(t).expect("circuit registers every table it uses");
                match o {
                    Some(o) => table.contains(i, o),
                    None => table.contains_input(i),
                }
            });
            if let Err(fault) = res {
                let kind = match fault {
                    RowFault::Lookup(..) => ViolationKind::Lookup,
                    _ => ViolationKind::Gate,
                };
                return Err(Violation { kind, lane, row, detail: fault.to_string() });
            }
        }
    }
    let value = |id: u32| -> Option<FieldElement> { geo.cell_of(id).map(|cell| w.value(cell)) };
    let copy_fault = |cell: Cell, lane: usize, row: usize, partner: u32| Violation {
        kind: ViolationKind::Copy,
        lane,
        row,
        detail: format!("{:?} differs from its copy partner {:?}", cell, geo.cell_of(partner)),
    };
    for (lane, fixed) in c.fixed.iter().enumerate() {
        for (row, sig) in fixed.sigma.iter().enumerate() {
            for (k, &s) in sig.iter().enumerate() {
                let cell = Cell::Advice {
                    lane: lane as u32,
                    row: row as u32,
                    col: super::AdviceCol::from_index(k).expect("three columns"),
                };
                if s != geo.cell_id(cell) && value(s) != Some(w.advice[lane][row][k]) {
                    return Err(copy_fault(cell, lane, row, s));
                }
            }
        }
    }
    for (j, col) in c.instance_sigma.iter().enumerate() {
        for (row, &s) in col.iter().enumerate() {
            let cell = Cell::Instance((j * geo.n_rows + row) as u32);
            if s != geo.cell_id(cell) && value(s) != Some(w.value(cell)) {
                return Err(copy_fault(cell, j, row, s));
            }
        }
    }
    Ok(())
}
