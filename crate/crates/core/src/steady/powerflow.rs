//! Newton-Raphson AC power flow (polar form, dense Jacobian).
//!
//! Generator buses are PV (the highest-numbered one is slack), load buses
//! are PQ with demands scaled by `load_scale`. The default network model is
//! lossless (series susceptances only), matching the susceptance graph the
//! stress mathematics is defined on; the dynamic simulator initializes
//! itself through the lossy variant so its own network is in equilibrium.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{OperatingPoint, SteadyStateError};
use crate::grid::{BusKind, GridModel};

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions { tolerance: 1e-8, max_iterations: 50 }
    }
}

/// Which branch impedances enter the admittance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkModel {
    /// Series susceptance only (`y = 1/(jx)`).
    Lossless,
    /// Full series impedance (`y = 1/(r + jx)`).
    Lossy,
}

/// Admittance matrix of the connected branches under the chosen model.
pub(crate) fn admittance_matrix(grid: &GridModel, model: NetworkModel) -> DMatrix<Complex64> {
    let n = grid.bus_count();
    let mut y = DMatrix::zeros(n, n);
    for br in grid.branches().iter().filter(|b| b.is_connected()) {
        let yb = match model {
            NetworkModel::Lossless => Complex64::new(0.0, -1.0 / br.reactance),
            NetworkModel::Lossy => Complex64::new(1.0, 0.0) / Complex64::new(br.resistance, br.reactance),
        };
        let i = grid.bus_position(br.from).unwrap();
        let j = grid.bus_position(br.to).unwrap();
        y[(i, j)] -= yb;
        y[(j, i)] -= yb;
        y[(i, i)] += yb;
        y[(j, j)] += yb;
    }
    y
}

/// Solve the default (lossless) power flow at a demand multiplier.
pub fn solve_power_flow(grid: &GridModel, load_scale: f64) -> Result<OperatingPoint, SteadyStateError> {
    solve_power_flow_with(grid, load_scale, NetworkModel::Lossless, PowerFlowOptions::default())
}

pub fn solve_power_flow_with(
    grid: &GridModel,
    load_scale: f64,
    model: NetworkModel,
    opts: PowerFlowOptions,
) -> Result<OperatingPoint, SteadyStateError> {
    if !(load_scale > 0.0) {
        return Err(SteadyStateError::BadLoadScale(load_scale));
    }
    let n = grid.bus_count();
    let y = admittance_matrix(grid, model);
    let g_mat = y.map(|c| c.re);
    let b_mat = y.map(|c| c.im);

    let slack = grid.bus_position(grid.slack_bus()).unwrap();
    let mut pv: Vec<usize> = Vec::new();
    let mut pq: Vec<usize> = Vec::new();
    for (pos, bus) in grid.buses().iter().enumerate() {
        match bus.kind {
            BusKind::Generator if pos != slack => pv.push(pos),
            BusKind::Generator => {}
            BusKind::Load => pq.push(pos),
        }
    }

    // flat start: PV/slack at set point, PQ at 1.0 p.u., angles 0
    let mut vm: DVector<f64> = DVector::from_element(n, 1.0);
    let mut va: DVector<f64> = DVector::zeros(n);
    for (pos, bus) in grid.buses().iter().enumerate() {
        if bus.kind == BusKind::Generator {
            vm[pos] = bus.base_voltage;
        }
    }

    let mut p_sched: DVector<f64> = DVector::zeros(n);
    let mut q_sched: DVector<f64> = DVector::zeros(n);
    for gen in grid.generators() {
        p_sched[grid.bus_position(gen.bus).unwrap()] += gen.mech_power;
    }
    for load in grid.loads() {
        let pos = grid.bus_position(load.bus).unwrap();
        p_sched[pos] -= load.active * load_scale;
        q_sched[pos] -= load.reactive * load_scale;
    }

    let pvpq: Vec<usize> = pv.iter().chain(pq.iter()).copied().collect();
    let n_a = pvpq.len();
    let n_v = pq.len();

    let mut mismatch = f64::INFINITY;
    for iteration in 0..=opts.max_iterations {
        // injections at the current state
        let (p, q) = injections(&g_mat, &b_mat, &vm, &va);
        let mut f: DVector<f64> = DVector::zeros(n_a + n_v);
        for (r, &i) in pvpq.iter().enumerate() {
            f[r] = p_sched[i] - p[i];
        }
        for (r, &i) in pq.iter().enumerate() {
            f[n_a + r] = q_sched[i] - q[i];
        }
        mismatch = f.amax();
        if mismatch < opts.tolerance {
            return Ok(finish(grid, vm, va, p, q, load_scale, mismatch, iteration));
        }
        if !mismatch.is_finite() || mismatch > 1e8 || iteration == opts.max_iterations {
            break;
        }

        // dense polar Jacobian
        let mut jac: DMatrix<f64> = DMatrix::zeros(n_a + n_v, n_a + n_v);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &j) in pvpq.iter().enumerate() {
                jac[(r, c)] = if i == j {
                    -q[i] - b_mat[(i, i)] * vm[i] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    vm[i] * vm[j] * (g_mat[(i, j)] * th.sin() - b_mat[(i, j)] * th.cos())
                };
            }
            for (c, &j) in pq.iter().enumerate() {
                jac[(r, n_a + c)] = if i == j {
                    p[i] / vm[i] + g_mat[(i, i)] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    vm[i] * (g_mat[(i, j)] * th.cos() + b_mat[(i, j)] * th.sin())
                };
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &j) in pvpq.iter().enumerate() {
                jac[(n_a + r, c)] = if i == j {
                    p[i] - g_mat[(i, i)] * vm[i] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    -vm[i] * vm[j] * (g_mat[(i, j)] * th.cos() + b_mat[(i, j)] * th.sin())
                };
            }
            for (c, &j) in pq.iter().enumerate() {
                jac[(n_a + r, n_a + c)] = if i == j {
                    q[i] / vm[i] - b_mat[(i, i)] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    vm[i] * (g_mat[(i, j)] * th.sin() - b_mat[(i, j)] * th.cos())
                };
            }
        }

        let Some(dx) = jac.lu().solve(&f) else { break };
        for (r, &i) in pvpq.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in pq.iter().enumerate() {
            vm[i] += dx[n_a + r];
        }
    }
    Err(SteadyStateError::NonConvergence { mismatch, iterations: opts.max_iterations })
}

fn injections(
    g_mat: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    vm: &DVector<f64>,
    va: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = vm.len();
    let mut p: DVector<f64> = DVector::zeros(n);
    let mut q: DVector<f64> = DVector::zeros(n);
    for i in 0..n {
        let mut pi = 0.0;
        let mut qi = 0.0;
        for j in 0..n {
            let gij = g_mat[(i, j)];
            let bij = b_mat[(i, j)];
            if gij == 0.0 && bij == 0.0 {
                continue;
            }
            let th = va[i] - va[j];
            let vv = vm[i] * vm[j];
            pi += vv * (gij * th.cos() + bij * th.sin());
            qi += vv * (gij * th.sin() - bij * th.cos());
        }
        p[i] = pi;
        q[i] = qi;
    }
    (p, q)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    grid: &GridModel,
    vm: DVector<f64>,
    va: DVector<f64>,
    p: DVector<f64>,
    q: DVector<f64>,
    load_scale: f64,
    mismatch: f64,
    iterations: usize,
) -> OperatingPoint {
    let mut v_gen = Vec::new();
    let mut v_load = Vec::new();
    for (pos, bus) in grid.buses().iter().enumerate() {
        match bus.kind {
            BusKind::Generator => v_gen.push(vm[pos]),
            BusKind::Load => v_load.push(vm[pos]),
        }
    }
    OperatingPoint {
        bus_ids: grid.buses().iter().map(|b| b.id).collect(),
        vm: vm.iter().copied().collect(),
        va: va.iter().copied().collect(),
        p_inj: p.iter().copied().collect(),
        q_inj: q.iter().copied().collect(),
        v_gen,
        v_load,
        load_scale,
        mismatch,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ne39;
    use crate::steady::{load_matrix, reactive_demand, reactive_injection, stability_index};

    #[test]
    fn zero_load_two_bus_is_flat() {
        let g = GridModel::from_json_str(
            r#"{
            "name": "toy2", "base_mva": 100.0,
            "buses": [
                {"id": 1, "kind": "generator", "base_voltage": 1.0},
                {"id": 2, "kind": "load", "base_voltage": 1.0}
            ],
            "branches": [{"from": 1, "to": 2, "reactance": 0.2}],
            "generators": [{"bus": 1, "mech_power": 0.0, "inertia": 5.0, "damping": 2.0, "transient_reactance": 0.1}],
            "loads": [{"bus": 2, "active": 0.0, "reactive": 0.0}]
        }"#,
        )
        .unwrap();
        let op = solve_power_flow(&g, 1.0).unwrap();
        assert!((op.vm[1] - op.vm[0]).abs() < 1e-12);
        assert!(op.va[1].abs() < 1e-12);
        assert!(op.p_inj[0].abs() < 1e-10 && op.q_inj[0].abs() < 1e-10);
    }

    #[test]
    fn ne39_base_case_converges_in_band() {
        let op = solve_power_flow(&ne39(), 1.0).unwrap();
        assert!(op.mismatch < 1e-8);
        for (i, &v) in op.vm.iter().enumerate() {
            assert!((0.9..=1.1).contains(&v), "bus {} voltage {v}", op.bus_ids[i]);
        }
    }

    #[test]
    fn ne39_extreme_loading_fails() {
        let err = solve_power_flow(&ne39(), 50.0).unwrap_err();
        match err {
            SteadyStateError::NonConvergence { iterations, .. } => assert_eq!(iterations, 50),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn flat_equal_angle_injection_is_laplacian_row_sum() {
        // all angles equal, flat voltages: Q_i = -(row sum of B) = 0 per bus
        let g = GridModel::from_json_str(
            r#"{
            "name": "toy2", "base_mva": 100.0,
            "buses": [
                {"id": 1, "kind": "generator", "base_voltage": 1.0},
                {"id": 2, "kind": "load", "base_voltage": 1.0}
            ],
            "branches": [{"from": 1, "to": 2, "reactance": 0.2}],
            "generators": [{"bus": 1, "mech_power": 0.0, "inertia": 5.0, "damping": 2.0, "transient_reactance": 0.1}],
            "loads": [{"bus": 2, "active": 0.0, "reactive": 0.0}]
        }"#,
        )
        .unwrap();
        let op = solve_power_flow(&g, 1.0).unwrap();
        let part = g.susceptance_partition();
        for bus in [1usize, 2] {
            let q = reactive_injection(&op, &part, bus).unwrap();
            assert!(q.abs() < 1e-12, "bus {bus}: {q}");
        }
    }

    #[test]
    fn reactive_injection_matches_power_flow_at_load_buses() {
        // lossless model: the susceptance-sum form reproduces the solved
        // reactive injections (equal to -scaled demand at PQ buses)
        let g = ne39();
        let scale = 1.1;
        let op = solve_power_flow(&g, scale).unwrap();
        let part = g.susceptance_partition();
        for load in g.loads() {
            let q = reactive_injection(&op, &part, load.bus).unwrap();
            let expected = -load.reactive * scale;
            assert!(
                (q - expected).abs() < 1e-7,
                "bus {}: {q} vs {expected}",
                load.bus
            );
        }
    }

    #[test]
    fn power_balance_at_solution() {
        let g = ne39();
        let op = solve_power_flow(&g, 1.0).unwrap();
        // scheduled vs computed at non-slack buses
        let slack = g.slack_bus();
        for (pos, &bus) in op.bus_ids.iter().enumerate() {
            if bus == slack {
                continue;
            }
            let gen_p: f64 = g.generators().iter().filter(|x| x.bus == bus).map(|x| x.mech_power).sum();
            let load = g.load_record(bus);
            let p_sched = gen_p - load.map_or(0.0, |l| l.active);
            assert!((op.p_inj[pos] - p_sched).abs() < 1e-8, "bus {bus}");
            if g.bus(bus).unwrap().kind == BusKind::Load {
                let q_sched = -load.map_or(0.0, |l| l.reactive);
                assert!((op.q_inj[pos] - q_sched).abs() < 1e-8, "bus {bus}");
            }
        }
    }

    #[test]
    fn base_case_stability_margin_inside_bound() {
        let g = ne39();
        let op = solve_power_flow(&g, 1.0).unwrap();
        let part = g.susceptance_partition();
        let lm = load_matrix(&part, &op.v_gen_vector()).unwrap();
        let q = reactive_demand(&op.v_load_vector(), &part, &op.v_gen_vector()).unwrap();
        let delta = stability_index(&lm, &q).unwrap();
        assert!(delta > 0.0 && delta < 1.0, "delta = {delta}");
    }

    #[test]
    fn lossy_variant_converges_ne39() {
        let op = solve_power_flow_with(
            &ne39(),
            1.0,
            NetworkModel::Lossy,
            PowerFlowOptions::default(),
        )
        .unwrap();
        assert!(op.mismatch < 1e-8);
        // losses make total injection positive
        let total_p: f64 = op.p_inj.iter().sum();
        assert!(total_p > 0.0 && total_p < 1.0, "losses {total_p}");
    }

    use crate::grid::GridModel;
}
