use super::{AdviceCol, CircuitError};

/// One cell of the matrix. Instance cells are addressed by public index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cell {
    Advice { lane: u32, row: u32, col: AdviceCol },
    Instance(u32),
}

/// Matrix shape. Every lane holds advice columns `A B C` and fixed columns
/// `kind W σA σB σC`; public values fill `n_instance` instance columns
/// top to bottom, each with its own σ column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub n_rows: usize,
    pub n_lanes: usize,
    pub n_instance: usize,
    pub n_public: usize,
    pub row_cap: Option<usize>,
    /// Rows holding a gate or copied cells, over all lanes.
    pub used_rows: usize,
}

impl Geometry {
    pub(crate) fn new(
        n_rows: usize,
        n_lanes: usize,
        n_public: usize,
        row_cap: Option<usize>,
        used_rows: usize,
    ) -> Result<Self, CircuitError> {
        let n_instance = n_public.div_ceil(n_rows);
        let g = Self { n_rows, n_lanes, n_instance, n_public, row_cap, used_rows };
        let cells = g.total_cells() as u64;
        if cells > u32::MAX as u64 {
            return Err(CircuitError::TooLarge(cells));
        }
        Ok(g)
    }

    pub fn advice_columns(&self) -> usize {
        3 * self.n_lanes
    }

    pub fn fixed_columns(&self) -> usize {
        5 * self.n_lanes + self.n_instance
    }

    pub fn n_columns(&self) -> usize {
        self.advice_columns() + self.fixed_columns() + self.n_instance
    }

    /// Cells taking part in the copy permutation.
    pub fn total_cells(&self) -> usize {
        (self.advice_columns() + self.n_instance) * self.n_rows
    }

    pub fn cell_id(&self, cell: Cell) -> u32 {
        match cell {
            Cell::Advice { lane, row, col } => {
                ((lane as usize * 3 + col.index()) * self.n_rows + row as usize) as u32
            }
            Cell::Instance(i) => (self.advice_columns() * self.n_rows + i as usize) as u32,
        }
    }

    pub fn cell_of(&self, id: u32) -> Option<Cell> {
        let id = id as usize;
        let advice = self.advice_columns() * self.n_rows;
        if id < advice {
            let (column, row) = (id / self.n_rows, id % self.n_rows);
            Some(Cell::Advice {
                lane: (column / 3) as u32,
                row: row as u32,
                col: AdviceCol::from_index(column % 3)?,
            })
        } else if id < self.total_cells() {
            Some(Cell::Instance((id - advice) as u32))
        } else {
            None
        }
    }

    /// Instance column and row of public value `index`.
    pub fn instance_position(&self, index: usize) -> (usize, usize) {
        (index / self.n_rows, index % self.n_rows)
    }
}

/// First-fit region placement. Without a cap everything goes in one lane
/// sized afterwards; with a cap, lanes of exactly `cap` rows are opened on
/// demand.
#[derive(Clone, Debug)]
pub(crate) struct Placer {
    cap: Option<usize>,
    cursors: Vec<usize>,
    /// Lanes with free rows, in opening order.
    open: Vec<usize>,
}

impl Placer {
    pub fn new(cap: Option<usize>) -> Result<Self, CircuitError> {
        if let Some(c) = cap {
            if !c.is_power_of_two() {
                return Err(CircuitError::BadRowCap(c));
            }
        }
        Ok(Self { cap, cursors: vec![0], open: vec![0] })
    }

    /// Reserves `height` consecutive rows in one lane.
    pub fn place(&mut self, height: usize, node: &str) -> Result<(u32, u32), CircuitError> {
        let Some(cap) = self.cap else {
            let row = self.cursors[0];
            self.cursors[0] += height;
            return Ok((0, row as u32));
        };
        if height > cap {
            return Err(CircuitError::RegionTooTall { node: node.to_string(), height, cap });
        }
        let slot = self.open.iter().position(|&l| cap - self.cursors[l] >= height);
        let (pos, lane) = match slot {
            Some(p) => (p, self.open[p]),
            None => {
                self.cursors.push(0);
                self.open.push(self.cursors.len() - 1);
                (self.open.len() - 1, self.cursors.len() - 1)
            }
        };
        let row = self.cursors[lane];
        self.cursors[lane] += height;
        if self.cursors[lane] == cap {
            self.open.remove(pos);
        }
        Ok((lane as u32, row as u32))
    }

    pub fn used_rows(&self) -> usize {
        self.cursors.iter().sum()
    }

    pub fn n_lanes(&self) -> usize {
        self.cursors.len()
    }

    /// Rows per lane once placement is complete.
    pub fn n_rows(&self) -> usize {
        match self.cap {
            Some(c) => c,
            None => self.cursors[0].max(1).next_power_of_two(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        let g = Geometry::new(8, 3, 20, Some(8), 20).unwrap();
        assert_eq!(g.n_instance, 3);
        for id in 0..g.total_cells() as u32 {
            assert_eq!(g.cell_id(g.cell_of(id).unwrap()), id);
        }
        assert_eq!(g.cell_of(g.total_cells() as u32), None);
    }

    #[test]
    fn first_fit_with_cap() {
        let mut p = Placer::new(Some(4)).unwrap();
        assert_eq!(p.place(3, "a").unwrap(), (0, 0));
        assert_eq!(p.place(2, "b").unwrap(), (1, 0));
        assert_eq!(p.place(1, "c").unwrap(), (0, 3));
        assert_eq!(p.place(2, "d").unwrap(), (1, 2));
        assert_eq!(p.place(1, "e").unwrap(), (2, 0));
        assert_eq!(p.used_rows(), 9);
        assert_eq!(p.n_lanes(), 3);
        let err = p.place(5, "tall").unwrap_err();
        assert!(err.to_string().contains("region does not fit"));
        assert!(Placer::new(Some(6)).is_err());
    }

    #[test]
    fn uncapped_is_one_lane() {
        let mut p = Placer::new(None).unwrap();
        p.place(5, "a").unwrap();
        p.place(4, "b").unwrap();
        assert_eq!((p.n_lanes(), p.n_rows()), (1, 16));
        assert_eq!(Placer::new(None).unwrap().n_rows(), 1);
    }
}
