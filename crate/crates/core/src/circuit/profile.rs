use std::collections::BTreeMap;
use std::fmt;

use super::synth::{Mode, Synth};
use super::{CircuitError, CircuitMatrix};
use crate::field::QuantConfig;
use crate::graph::{Graph, ParamValues};

/// Cost attributed to one op kind. Constants materialized into advice are
/// reported as `const`, public-output bindings as `output`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCost {
    pub nodes: usize,
    pub rows: usize,
    pub gate_rows: usize,
    pub lookups: usize,
    pub copies: usize,
    /// Advice cells written.
    pub cells: usize,
}

impl OpCost {
    /// Constraint count: gate instantiations + lookup invocations + copies.
    pub fn constraints(&self) -> usize {
        self.gate_rows + self.lookups + self.copies
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircuitProfile {
    /// Total constraints M.
    pub m: usize,
    /// Model parameter count N.
    pub n: usize,
    /// M / N, undefined when the graph has no parameters.
    pub ratio: Option<f64>,
    pub gate_rows: usize,
    pub lookups: usize,
    pub copies: usize,
    pub used_rows: usize,
    /// Written advice cells plus public cells.
    pub used_cells: usize,
    pub n_rows: usize,
    pub n_lanes: usize,
    pub n_instance: usize,
    pub n_columns: usize,
    pub per_op: BTreeMap<String, OpCost>,
}

impl CircuitProfile {
    fn build(
        per_op: BTreeMap<String, OpCost>,
        n: usize,
        n_rows: usize,
        n_lanes: usize,
        used_rows: usize,
        n_public: usize,
    ) -> Self {
        let sum = |f: fn(&OpCost) -> usize| per_op.values().map(f).sum::<usize>();
        let (gate_rows, lookups, copies) = (sum(|c| c.gate_rows), sum(|c| c.lookups), sum(|c| c.copies));
        let m = gate_rows + lookups + copies;
        let n_instance = n_public.div_ceil(n_rows);
        Self {
            m,
            n,
            ratio: (n > 0).then(|| m as f64 / n as f64),
            gate_rows,
            lookups,
            copies,
            used_rows,
            used_cells: sum(|c| c.cells) + n_public,
            n_rows,
            n_lanes,
            n_instance,
            n_columns: 8 * n_lanes + 2 * n_instance,
            per_op,
        }
    }

    pub fn ratio_display(&self) -> String {
        match self.ratio {
            Some(r) => format!("{:.2}", r),
            None => "undefined".into(),
        }
    }
}

impl fmt::Display for CircuitProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "M (gate rows + lookups + copies)  {}", self.m)?;
        writeln!(f, "N (parameters)                    {}", self.n)?;
        writeln!(f, "M/N                               {}", self.ratio_display())?;
        writeln!(
            f,
            "geometry                          {} rows x {} lanes, {} instance columns, {} columns",
            self.n_rows, self.n_lanes, self.n_instance, self.n_columns
        )?;
        writeln!(f, "used rows / cells                 {} / {}", self.used_rows, self.used_cells)?;
        writeln!(
            f,
            "{:<12} {:>6} {:>10} {:>10} {:>10} {:>10} {:>12}",
            "op", "nodes", "rows", "gates", "lookups", "copies", "constraints"
        )?;
        for (op, c) in &self.per_op {
            writeln!(
                f,
                "{:<12} {:>6} {:>10} {:>10} {:>10} {:>10} {:>12}",
                op,
                c.nodes,
                c.rows,
                c.gate_rows,
                c.lookups,
                c.copies,
                c.constraints()
            )?;
        }
        Ok(())
    }
}

/// Profile of a compiled circuit.
pub fn profile(c: &CircuitMatrix, g: &Graph) -> CircuitProfile {
    let geo = &c.geometry;
    CircuitProfile::build(
        c.stats().clone(),
        g.param_count(),
        geo.n_rows,
        geo.n_lanes,
        geo.used_rows,
        geo.n_public,
    )
}

/// Same numbers as [`profile`] without materializing the matrix; weights are
/// not needed.
pub fn count_constraints(
    g: &Graph,
    cfg: &QuantConfig,
    row_cap: Option<usize>,
) -> Result<CircuitProfile, CircuitError> {
    let none = ParamValues::new();
    let mut s = Synth::new(g, &none, cfg, row_cap, Mode::Count)?;
    s.run(None)?;
    let (stats, n_rows, n_lanes, used_rows, n_public) = s.into_stats();
    Ok(CircuitProfile::build(stats, g.param_count(), n_rows, n_lanes, used_rows, n_public))
}
