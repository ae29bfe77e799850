//! Pre-fault steady state and the steady-state voltage-stress mathematics.
//!
//! `solve_power_flow` produces an [`OperatingPoint`] on the lossless
//! series-susceptance network (the same susceptance graph the stress math
//! is defined on). From it:
//!
//! - [`reactive_injection`] — nodal reactive power
//!   `Q_i = -Σ_j V_i V_j b_ij cos(θ_i - θ_j)`;
//! - [`load_matrix`] — the load stress matrix
//!   `L_s = ¼ diag(v_oc) B_LL diag(v_oc)` with open-circuit voltages
//!   `v_oc = -B_LL⁻¹ B_LG V_G` (sign chosen so `v_oc > 0`; `L_s` is
//!   unchanged either way since `v_oc` enters quadratically);
//! - [`reactive_demand`] — `q_L = -[V_L](B_LL V_L + B_LG V_G)`;
//! - [`stability_index`] — `Δ = ‖L_s⁻¹ q_L‖_∞`, solved by factorization.
//!
//! `Δ = 1` marks the depletion of the guaranteed steady-state margin.

mod powerflow;

pub use powerflow::{solve_power_flow, solve_power_flow_with, NetworkModel, PowerFlowOptions};
pub(crate) use powerflow::admittance_matrix as powerflow_admittance;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::grid::SusceptancePartition;

#[derive(Debug, Error)]
pub enum SteadyStateError {
    #[error("power flow did not converge: mismatch {mismatch:.3e} after {iterations} iterations")]
    NonConvergence { mismatch: f64, iterations: usize },
    #[error("load_scale must be strictly positive (got {0})")]
    BadLoadScale(f64),
    #[error("B_LL is singular: disconnected load subnetwork")]
    SingularBll,
    #[error("open-circuit voltage non-positive at load index {index} ({value:.3e})")]
    NonPositiveOpenCircuit { index: usize, value: f64 },
    #[error("L_s is singular")]
    SingularLoadMatrix,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown bus {0}")]
    UnknownBus(usize),
}

/// Solved steady-state operating condition. Bus vectors follow the grid's
/// ascending-bus-id ordering; `v_gen`/`v_load` follow the partition maps.
#[derive(Debug, Clone, Serialize)]
pub struct OperatingPoint {
    /// Bus ids, ascending (grid ordering).
    pub bus_ids: Vec<usize>,
    /// Voltage magnitudes, p.u.
    pub vm: Vec<f64>,
    /// Voltage angles, rad.
    pub va: Vec<f64>,
    /// Active injections, p.u.
    pub p_inj: Vec<f64>,
    /// Reactive injections, p.u.
    pub q_inj: Vec<f64>,
    /// Generator-bus voltage magnitudes in partition order.
    pub v_gen: Vec<f64>,
    /// Load-bus voltage magnitudes in partition order.
    pub v_load: Vec<f64>,
    /// Demand multiplier this point was solved at.
    pub load_scale: f64,
    /// Final power-mismatch infinity norm.
    pub mismatch: f64,
    /// Newton iterations used.
    pub iterations: usize,
}

impl OperatingPoint {
    pub fn voltage(&self, position: usize) -> Complex64 {
        Complex64::from_polar(self.vm[position], self.va[position])
    }

    pub fn v_gen_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.v_gen.clone())
    }

    pub fn v_load_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.v_load.clone())
    }
}

/// Topology-derived stress matrix `L_s` with its open-circuit voltages.
#[derive(Debug, Clone)]
pub struct LoadMatrix {
    pub l_s: DMatrix<f64>,
    pub v_oc: DVector<f64>,
    pub topology_id: String,
}

/// Reactive injection at one bus from Eq.-style susceptance summation:
/// `Q_i = -Σ_j V_i V_j b_ij cos(θ_i - θ_j)` over every bus of the grid.
///
/// On the lossless network this equals the power-flow reactive injection
/// exactly.
pub fn reactive_injection(
    op: &OperatingPoint,
    part: &SusceptancePartition,
    bus: usize,
) -> Result<f64, SteadyStateError> {
    let pos = op
        .bus_ids
        .iter()
        .position(|&b| b == bus)
        .ok_or(SteadyStateError::UnknownBus(bus))?;
    let mut q = 0.0;
    for (j, &bus_j) in op.bus_ids.iter().enumerate() {
        let b_ij = part.entry(bus, bus_j);
        if b_ij != 0.0 {
            q -= op.vm[pos] * op.vm[j] * b_ij * (op.va[pos] - op.va[j]).cos();
        }
    }
    Ok(q)
}

/// Build the load stress matrix from the partition and generator voltages.
pub fn load_matrix(
    part: &SusceptancePartition,
    v_gen: &DVector<f64>,
) -> Result<LoadMatrix, SteadyStateError> {
    let m = part.load_count();
    if v_gen.len() != part.gen_count() {
        return Err(SteadyStateError::Dimension { expected: part.gen_count(), got: v_gen.len() });
    }
    let rhs = &part.b_lg * v_gen;
    let lu = part.b_ll.clone().lu();
    let solved = lu.solve(&rhs).ok_or(SteadyStateError::SingularBll)?;
    let v_oc = -solved;
    for i in 0..m {
        if !(v_oc[i] > 0.0) {
            return Err(SteadyStateError::NonPositiveOpenCircuit { index: i, value: v_oc[i] });
        }
    }
    let mut l_s = part.b_ll.clone();
    // ¼ diag(v_oc) B_LL diag(v_oc): scale rows and columns
    for i in 0..m {
        for j in 0..m {
            l_s[(i, j)] *= 0.25 * v_oc[i] * v_oc[j];
        }
    }
    Ok(LoadMatrix { l_s, v_oc, topology_id: part.topology_id.clone() })
}

/// Reactive power demand of the loads: `q_L = -[V_L](B_LL V_L + B_LG V_G)`.
pub fn reactive_demand(
    v_load: &DVector<f64>,
    part: &SusceptancePartition,
    v_gen: &DVector<f64>,
) -> Result<DVector<f64>, SteadyStateError> {
    if v_load.len() != part.load_count() {
        return Err(SteadyStateError::Dimension { expected: part.load_count(), got: v_load.len() });
    }
    if v_gen.len() != part.gen_count() {
        return Err(SteadyStateError::Dimension { expected: part.gen_count(), got: v_gen.len() });
    }
    let bracket = &part.b_ll * v_load + &part.b_lg * v_gen;
    Ok(-v_load.component_mul(&bracket))
}

/// Scalar stability index `Δ = ‖L_s⁻¹ q_L‖_∞` (factorized solve, never an
/// explicit inverse).
pub fn stability_index(lm: &LoadMatrix, q_load: &DVector<f64>) -> Result<f64, SteadyStateError> {
    if q_load.len() != lm.l_s.nrows() {
        return Err(SteadyStateError::Dimension { expected: lm.l_s.nrows(), got: q_load.len() });
    }
    let lu = lm.l_s.clone().lu();
    let x = lu.solve(q_load).ok_or(SteadyStateError::SingularLoadMatrix)?;
    Ok(x.amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ne39, GridModel};

    fn two_bus() -> GridModel {
        GridModel::from_json_str(
            r#"{
            "name": "toy2",
            "base_mva": 100.0,
            "buses": [
                {"id": 1, "kind": "generator", "base_voltage": 1.0},
                {"id": 2, "kind": "load", "base_voltage": 1.0}
            ],
            "branches": [{"from": 1, "to": 2, "reactance": 0.2}],
            "generators": [{"bus": 1, "mech_power": 0.0, "inertia": 5.0, "damping": 2.0, "transient_reactance": 0.1}],
            "loads": [{"bus": 2, "active": 0.0, "reactive": 0.0}]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn two_bus_load_matrix_scalar_case() {
        let part = two_bus().susceptance_partition();
        let v_gen = DVector::from_element(1, 1.0);
        let lm = load_matrix(&part, &v_gen).unwrap();
        assert!((lm.v_oc[0] - 1.0).abs() < 1e-14);
        assert!((lm.l_s[(0, 0)] + 1.25).abs() < 1e-14);
    }

    #[test]
    fn two_bus_reactive_demand_and_delta() {
        let part = two_bus().susceptance_partition();
        let v_gen = DVector::from_element(1, 1.0);
        let lm = load_matrix(&part, &v_gen).unwrap();
        let v_load = DVector::from_element(1, 0.9);
        let q = reactive_demand(&v_load, &part, &v_gen).unwrap();
        assert!((q[0] + 0.45).abs() < 1e-14, "q = {}", q[0]);
        let delta = stability_index(&lm, &q).unwrap();
        assert!((delta - 0.36).abs() < 1e-14, "delta = {delta}");
    }

    #[test]
    fn q_l_vanishes_at_open_circuit() {
        let part = ne39().susceptance_partition();
        let v_gen = DVector::from_vec(vec![1.05, 0.98, 0.98, 1.0, 1.01, 1.05, 1.06, 1.03, 1.03, 1.03]);
        let lm = load_matrix(&part, &v_gen).unwrap();
        let q = reactive_demand(&lm.v_oc, &part, &v_gen).unwrap();
        assert!(q.amax() < 1e-12, "max |q_L(v_oc)| = {}", q.amax());
    }

    #[test]
    fn delta_zero_for_zero_demand() {
        let part = two_bus().susceptance_partition();
        let lm = load_matrix(&part, &DVector::from_element(1, 1.0)).unwrap();
        let delta = stability_index(&lm, &DVector::zeros(1)).unwrap();
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn load_matrix_symmetric_ne39() {
        let part = ne39().susceptance_partition();
        let v_gen = DVector::from_element(10, 1.0);
        let lm = load_matrix(&part, &v_gen).unwrap();
        let asym = (&lm.l_s - lm.l_s.transpose()).abs().max();
        assert!(asym < 1e-12, "asymmetry {asym}");
    }

    #[test]
    fn vg_scaling_law() {
        // scaling V_G by α scales v_oc by α and L_s by α²
        let part = ne39().susceptance_partition();
        let v1 = DVector::from_element(10, 1.0);
        let alpha = 1.37;
        let v2 = &v1 * alpha;
        let lm1 = load_matrix(&part, &v1).unwrap();
        let lm2 = load_matrix(&part, &v2).unwrap();
        for i in 0..lm1.v_oc.len() {
            let rel = (lm2.v_oc[i] - alpha * lm1.v_oc[i]).abs() / lm1.v_oc[i].abs();
            assert!(rel < 1e-10);
        }
        for i in 0..lm1.l_s.nrows() {
            for j in 0..lm1.l_s.ncols() {
                let base = lm1.l_s[(i, j)];
                if base.abs() > 1e-300 {
                    let rel = (lm2.l_s[(i, j)] - alpha * alpha * base).abs() / base.abs();
                    assert!(rel < 1e-10, "({i},{j}) rel {rel}");
                }
            }
        }
    }

    #[test]
    fn delta_absolutely_homogeneous() {
        let part = ne39().susceptance_partition();
        let lm = load_matrix(&part, &DVector::from_element(10, 1.0)).unwrap();
        let m = part.load_count();
        let q = DVector::from_fn(m, |i, _| ((i * 7 + 3) as f64 * 0.013).sin() * 0.4);
        let d1 = stability_index(&lm, &q).unwrap();
        for alpha in [-2.5f64, 0.125, 17.0] {
            let d2 = stability_index(&lm, &(&q * alpha)).unwrap();
            let rel = (d2 - alpha.abs() * d1).abs() / d1;
            assert!(rel < 1e-12, "alpha {alpha}: rel {rel}");
        }
    }
}
