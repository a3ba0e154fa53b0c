//! Row-standardized hexagonal contiguity weights.
//!
//! Two observed hexagons are neighbours when they share an edge. The binary
//! adjacency `C` is symmetric, so the row-standardized `W = D⁻¹C` is similar
//! to the symmetric `D^{-1/2} C D^{-1/2}` and its eigenvalues are real. They
//! are computed once and reused for every `ln|I − ρW|` evaluation.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hexgrid::HexCellId;

#[derive(Debug, Clone)]
pub struct SpatialWeights {
    n: usize,
    /// Per row: `(column, weight)`, columns ascending.
    neighbors: Vec<Vec<(usize, f64)>>,
    /// Ascending.
    eigenvalues: Vec<f64>,
    cells: Vec<HexCellId>,
    index: HashMap<HexCellId, usize>,
    dropped: Vec<HexCellId>,
}

/// Builds first-order edge-contiguity weights over `cells`.
///
/// Cells with no observed neighbour are dropped (logged and listed in
/// [`SpatialWeights::dropped`]); retained cells keep their input order.
pub fn build_weights(cells: &[HexCellId]) -> Result<SpatialWeights> {
    let distinct: BTreeSet<_> = cells.iter().collect();
    if distinct.len() != cells.len() {
        return Err(Error::Weights("cell ids are not distinct".into()));
    }
    let present: HashMap<HexCellId, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let has_neighbor = |c: &HexCellId| c.neighbors().iter().any(|n| present.contains_key(n));

    let (kept, dropped): (Vec<HexCellId>, Vec<HexCellId>) = cells.iter().partition(|c| has_neighbor(c));
    for c in &dropped {
        log::warn!("hexagon ({}, {}) has no observed neighbours; dropped from weights", c.q, c.r);
    }
    if kept.len() < 2 {
        return Err(Error::Weights(format!(
            "fewer than 2 connected observations ({} of {} kept)",
            kept.len(),
            cells.len()
        )));
    }
    let index: HashMap<HexCellId, usize> = kept.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let edges: Vec<(usize, usize)> = kept
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            let index = &index;
            c.neighbors()
                .into_iter()
                .filter_map(move |n| index.get(&n).map(|&j| (i, j)))
        })
        .filter(|(i, j)| i < j)
        .collect();
    let mut w = SpatialWeights::from_symmetric_edges(kept.len(), &edges)?;
    w.cells = kept;
    w.index = index;
    w.dropped = dropped;
    Ok(w)
}

impl SpatialWeights {
    /// Row-standardized weights from an undirected edge list over `0..n`.
    /// Rows without edges stay all-zero. Cells default to `(i, 0)`.
    pub fn from_symmetric_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Weights(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::Weights(format!("self-neighbour at {i}")));
            }
            adj[i].insert(j);
            adj[j].insert(i);
        }
        let neighbors: Vec<Vec<(usize, f64)>> = adj
            .iter()
            .map(|set| {
                let w = 1.0 / set.len() as f64;
                set.iter().map(|&j| (j, w)).collect()
            })
            .collect();
        let eigenvalues = symmetric_similarity_eigenvalues(&adj);
        let cells: Vec<HexCellId> = (0..n as i64).map(|i| HexCellId::new(i, 0)).collect();
        let index = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Ok(Self {
            n,
            neighbors,
            eigenvalues,
            cells,
            index,
            dropped: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, row: usize) -> &[(usize, f64)] {
        &self.neighbors[row]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Observation order of the rows.
    pub fn cells(&self) -> &[HexCellId] {
        &self.cells
    }

    pub fn row_of(&self, cell: &HexCellId) -> Option<usize> {
        self.index.get(cell).copied()
    }

    /// Input cells removed for having no observed neighbour.
    pub fn dropped(&self) -> &[HexCellId] {
        &self.dropped
    }

    /// Open interval of coefficients for which `I − coef·W` is nonsingular.
    pub fn feasible_interval(&self) -> (f64, f64) {
        let min = self.eigenvalues.first().copied().unwrap_or(0.0);
        let max = self.eigenvalues.last().copied().unwrap_or(0.0);
        let lower = if min < 0.0 { 1.0 / min } else { -1.0 };
        let upper = if max > 0.0 { 1.0 / max } else { 1.0 };
        (lower, upper)
    }

    /// `W·v`.
    pub fn spatial_lag(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: v.len(),
            });
        }
        Ok(self
            .neighbors
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * v[j]).sum())
            .collect())
    }

    /// `W·M` applied column by column.
    pub fn lag_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.n, "row count mismatch");
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (i, row) in self.neighbors.iter().enumerate() {
            for &(j, w) in row {
                for c in 0..m.ncols() {
                    out[(i, c)] += w * m[(j, c)];
                }
            }
        }
        out
    }

    /// `ln|I − coef·W| = Σ ln(1 − coef·ωᵢ)`.
    pub fn log_det_factor(&self, coef: f64) -> Result<f64> {
        let mut total = 0.0;
        for &omega in &self.eigenvalues {
            let f = 1.0 - coef * omega;
            if !(f > 0.0) {
                let (lower, upper) = self.feasible_interval();
                return Err(Error::Infeasible { coef, lower, upper });
            }
            total += f.ln();
        }
        Ok(total)
    }

    /// `S₀ = Σᵢⱼ wᵢⱼ`.
    pub fn s0(&self) -> f64 {
        self.neighbors.iter().flatten().map(|(_, w)| w).sum()
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        self.neighbors[i]
            .binary_search_by(|(c, _)| c.cmp(&j))
            .map_or(0.0, |k| self.neighbors[i][k].1)
    }

    /// `(tr(WᵀW), tr(W²))`.
    pub fn traces(&self) -> (f64, f64) {
        let mut wtw = 0.0;
        let mut ww = 0.0;
        for (i, row) in self.neighbors.iter().enumerate() {
            for &(j, w) in row {
                wtw += w * w;
                ww += w * self.weight(j, i);
            }
        }
        (wtw, ww)
    }

    /// `S₁ = ½ Σᵢⱼ (wᵢⱼ + wⱼᵢ)²` and `S₂ = Σᵢ (wᵢ. + w.ᵢ)²`.
    pub fn moran_sums(&self) -> (f64, f64) {
        let mut s1 = 0.0;
        let mut col_sums = vec![0.0; self.n];
        for (i, row) in self.neighbors.iter().enumerate() {
            for &(j, w) in row {
                let sym = w + self.weight(j, i);
                s1 += sym * sym;
                col_sums[j] += w;
            }
        }
        // Every unordered pair is visited twice above.
        s1 *= 0.5;
        let s2 = self
            .neighbors
            .iter()
            .zip(&col_sums)
            .map(|(row, c)| {
                let r: f64 = row.iter().map(|(_, w)| w).sum();
                (r + c) * (r + c)
            })
            .sum();
        (s1, s2)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.neighbors.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Sparse triplets `i,j,weight`.
    pub fn write_triplets_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["i", "j", "weight"])?;
        for (i, row) in self.neighbors.iter().enumerate() {
            for &(j, weight) in row {
                w.write_record([i.to_string(), j.to_string(), weight.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn symmetric_similarity_eigenvalues(adj: &[BTreeSet<usize>]) -> Vec<f64> {
    let connected: Vec<usize> = (0..adj.len()).filter(|&i| !adj[i].is_empty()).collect();
    let mut eig = vec![0.0; adj.len() - connected.len()];
    if !connected.is_empty() {
        let pos: HashMap<usize, usize> = connected.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let m = connected.len();
        let mut s = DMatrix::<f64>::zeros(m, m);
        for (a, &i) in connected.iter().enumerate() {
            let di = adj[i].len() as f64;
            for &j in &adj[i] {
                let b = pos[&j];
                s[(a, b)] = 1.0 / (di * adj[j].len() as f64).sqrt();
            }
        }
        eig.extend(s.symmetric_eigenvalues().iter().copied());
    }
    eig.sort_by(f64::total_cmp);
    eig
}

pub fn spatial_lag(w: &SpatialWeights, v: &[f64]) -> Result<Vec<f64>> {
    w.spatial_lag(v)
}

pub fn log_det_factor(w: &SpatialWeights, coef: f64) -> Result<f64> {
    w.log_det_factor(coef)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn adjacent_pair() {
        let w = build_weights(&[HexCellId::new(0, 0), HexCellId::new(1, 0)]).unwrap();
        assert_eq!(w.to_dense(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_relative_eq!(w.eigenvalues()[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(w.eigenvalues()[1], 1.0, epsilon = 1e-12);
        assert_eq!(w.spatial_lag(&[1.0, -1.0]).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn distant_pair_is_rejected() {
        let err = build_weights(&[HexCellId::new(0, 0), HexCellId::new(5, 5)]).unwrap_err();
        assert!(matches!(err, Error::Weights(_)));
    }

    #[test]
    fn duplicates_are_rejected() {
        assert!(build_weights(&[HexCellId::new(0, 0), HexCellId::new(0, 0)]).is_err());
    }

    #[test]
    fn flower_center_row() {
        let center = HexCellId::new(0, 0);
        let mut cells = vec![center];
        cells.extend(center.neighbors());
        let w = build_weights(&cells).unwrap();
        let row = w.neighbors(w.row_of(&center).unwrap());
        assert_eq!(row.len(), 6);
        assert!(row.iter().all(|&(_, x)| x == 1.0 / 6.0));
        assert_relative_eq!(*w.eigenvalues().last().unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn isolated_cell_is_dropped_and_reported() {
        let cells = [HexCellId::new(0, 0), HexCellId::new(1, 0), HexCellId::new(0, 1), HexCellId::new(9, 9)];
        let w = build_weights(&cells).unwrap();
        assert_eq!(w.n(), 3);
        assert_eq!(w.dropped(), &[HexCellId::new(9, 9)]);
        assert_eq!(w.cells(), &cells[..3]);
    }

    #[test]
    fn log_det_examples() {
        let w = build_weights(&[HexCellId::new(0, 0), HexCellId::new(1, 0)]).unwrap();
        assert_eq!(w.log_det_factor(0.0).unwrap(), 0.0);
        assert_relative_eq!(w.log_det_factor(0.5).unwrap(), 0.75f64.ln(), epsilon = 1e-12);
        assert!(matches!(w.log_det_factor(1.0), Err(Error::Infeasible { .. })));
        let (lo, hi) = w.feasible_interval();
        assert_relative_eq!(lo, -1.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spatial_lag_length_mismatch() {
        let w = build_weights(&[HexCellId::new(0, 0), HexCellId::new(1, 0)]).unwrap();
        assert!(matches!(w.spatial_lag(&[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn zero_weights_have_zero_spectrum() {
        let w = SpatialWeights::from_symmetric_edges(4, &[]).unwrap();
        assert!(w.eigenvalues().iter().all(|&e| e == 0.0));
        assert_eq!(w.spatial_lag(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0; 4]);
        assert_eq!(w.feasible_interval(), (-1.0, 1.0));
    }

    #[test]
    fn triplet_export() {
        let w = build_weights(&[HexCellId::new(0, 0), HexCellId::new(1, 0)]).unwrap();
        let mut out = Vec::new();
        w.write_triplets_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "i,j,weight\n0,1,1\n1,0,1\n");
    }
}
