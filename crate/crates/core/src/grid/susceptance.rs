//! Susceptance matrix assembly and the load/generator partition.
//!
//! The bus susceptance matrix is built from connected branches only, using
//! series reactances (lossless model): off-diagonal entries are `+b_ij`
//! with `b_ij = 1/x_ij`, diagonals are `-Σ_j b_ij`. This is the imaginary
//! part of the admittance matrix for purely inductive lines; the load
//! stress matrix is invariant to a global sign flip because the
//! open-circuit-voltage term enters it quadratically.

use nalgebra::DMatrix;
use std::collections::HashMap;

use super::{BusKind, GridModel};

/// Partition of the bus susceptance matrix into load (L) and generator (G)
/// blocks, with deterministic ascending-bus-id ordering on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptancePartition {
    pub b_ll: DMatrix<f64>,
    pub b_lg: DMatrix<f64>,
    pub b_gg: DMatrix<f64>,
    pub b_gl: DMatrix<f64>,
    /// Load bus ids in row/column order of `b_ll`.
    pub load_buses: Vec<usize>,
    /// Generator bus ids in row/column order of `b_gg`.
    pub gen_buses: Vec<usize>,
    load_index: HashMap<usize, usize>,
    gen_index: HashMap<usize, usize>,
    pub topology_id: String,
}

impl SusceptancePartition {
    pub(super) fn build(grid: &GridModel) -> SusceptancePartition {
        let load_buses = grid.load_buses();
        let gen_buses = grid.generator_buses();
        let m = load_buses.len();
        let n = gen_buses.len();

        // role + partition index per bus position
        let mut role: HashMap<usize, (BusKind, usize)> = HashMap::new();
        for (i, &b) in load_buses.iter().enumerate() {
            role.insert(b, (BusKind::Load, i));
        }
        for (i, &b) in gen_buses.iter().enumerate() {
            role.insert(b, (BusKind::Generator, i));
        }

        let mut b_ll = DMatrix::zeros(m, m);
        let mut b_lg = DMatrix::zeros(m, n);
        let mut b_gg = DMatrix::zeros(n, n);
        for br in grid.branches().iter().filter(|b| b.is_connected()) {
            let b = 1.0 / br.reactance;
            let (kf, i) = role[&br.from];
            let (kt, j) = role[&br.to];
            match (kf, kt) {
                (BusKind::Load, BusKind::Load) => {
                    b_ll[(i, j)] += b;
                    b_ll[(j, i)] += b;
                    b_ll[(i, i)] -= b;
                    b_ll[(j, j)] -= b;
                }
                (BusKind::Generator, BusKind::Generator) => {
                    b_gg[(i, j)] += b;
                    b_gg[(j, i)] += b;
                    b_gg[(i, i)] -= b;
                    b_gg[(j, j)] -= b;
                }
                (BusKind::Load, BusKind::Generator) => {
                    b_lg[(i, j)] += b;
                    b_ll[(i, i)] -= b;
                    b_gg[(j, j)] -= b;
                }
                (BusKind::Generator, BusKind::Load) => {
                    b_lg[(j, i)] += b;
                    b_ll[(j, j)] -= b;
                    b_gg[(i, i)] -= b;
                }
            }
        }
        let b_gl = b_lg.transpose();
        SusceptancePartition {
            b_ll,
            b_lg,
            b_gg,
            b_gl,
            load_index: load_buses.iter().enumerate().map(|(i, &b)| (b, i)).collect(),
            gen_index: gen_buses.iter().enumerate().map(|(i, &b)| (b, i)).collect(),
            load_buses,
            gen_buses,
            topology_id: grid.topology_id(),
        }
    }

    pub fn load_count(&self) -> usize {
        self.load_buses.len()
    }

    pub fn gen_count(&self) -> usize {
        self.gen_buses.len()
    }

    pub fn load_index(&self, bus: usize) -> Option<usize> {
        self.load_index.get(&bus).copied()
    }

    pub fn gen_index(&self, bus: usize) -> Option<usize> {
        self.gen_index.get(&bus).copied()
    }

    /// Reassemble the full (n+m)×(n+m) matrix `[B_GG B_GL; B_LG B_LL]`
    /// (generator block first).
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let n = self.gen_count();
        let m = self.load_count();
        let mut full = DMatrix::zeros(n + m, n + m);
        full.view_mut((0, 0), (n, n)).copy_from(&self.b_gg);
        full.view_mut((0, n), (n, m)).copy_from(&self.b_gl);
        full.view_mut((n, 0), (m, n)).copy_from(&self.b_lg);
        full.view_mut((n, n), (m, m)).copy_from(&self.b_ll);
        full
    }

    /// Susceptance entry between two buses in full-matrix convention
    /// (off-diagonal `+b`, diagonal `-Σb`), regardless of partition side.
    pub fn entry(&self, bus_i: usize, bus_j: usize) -> f64 {
        let side = |b| -> Option<(bool, usize)> {
            self.load_index(b)
                .map(|i| (true, i))
                .or_else(|| self.gen_index(b).map(|i| (false, i)))
        };
        match (side(bus_i), side(bus_j)) {
            (Some((true, i)), Some((true, j))) => self.b_ll[(i, j)],
            (Some((false, i)), Some((false, j))) => self.b_gg[(i, j)],
            (Some((true, i)), Some((false, j))) => self.b_lg[(i, j)],
            (Some((false, i)), Some((true, j))) => self.b_gl[(i, j)],
            _ => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::grid::{ne39, GridModel};

    const TWO_BUS: &str = r#"{
        "name": "toy2",
        "base_mva": 100.0,
        "buses": [
            {"id": 1, "kind": "generator", "base_voltage": 1.0},
            {"id": 2, "kind": "load", "base_voltage": 1.0}
        ],
        "branches": [{"from": 1, "to": 2, "reactance": 0.2}],
        "generators": [{"bus": 1, "mech_power": 0.0, "inertia": 5.0, "damping": 2.0, "transient_reactance": 0.1}],
        "loads": [{"bus": 2, "active": 0.0, "reactive": 0.0}]
    }"#;

    #[test]
    fn two_bus_partition_values() {
        let g = GridModel::from_json_str(TWO_BUS).unwrap();
        let p = g.susceptance_partition();
        assert_eq!(p.b_ll.nrows(), 1);
        assert_eq!(p.b_ll[(0, 0)], -5.0);
        assert_eq!(p.b_lg[(0, 0)], 5.0);
        assert_eq!(p.b_gg[(0, 0)], -5.0);
    }

    #[test]
    fn ne39_full_matrix_symmetric() {
        let p = ne39().susceptance_partition();
        let full = p.full_matrix();
        assert_eq!(full.nrows(), 39);
        let asym = (&full - full.transpose()).abs().max();
        assert!(asym < 1e-12, "asymmetry {asym}");
    }

    #[test]
    fn removed_branch_couples_nothing() {
        let g = ne39().disconnect_lines(&[(2, 3)]).unwrap();
        let p = g.susceptance_partition();
        assert_eq!(p.entry(2, 3), 0.0);
        assert_eq!(p.entry(3, 2), 0.0);
        // base topology has the coupling
        let p0 = ne39().susceptance_partition();
        assert!(p0.entry(2, 3) > 0.0);
    }

    #[test]
    fn offdiagonal_structure_matches_incidence() {
        let g = ne39();
        let p = g.susceptance_partition();
        let connected: std::collections::HashSet<(usize, usize)> = g
            .branches()
            .iter()
            .filter(|b| b.is_connected())
            .map(|b| b.key())
            .collect();
        for i in 1..=39usize {
            for j in (i + 1)..=39 {
                let has_branch = connected.contains(&(i, j));
                let nonzero = p.entry(i, j) != 0.0;
                assert_eq!(has_branch, nonzero, "bus pair {i}-{j}");
            }
        }
    }
}
