//! Time-domain simulation of post-fault voltage dynamics.
//!
//! Machine models:
//!
//! - Generators: classical model — constant EMF magnitude behind the
//!   transient reactance, swing dynamics
//!   `dδ/dt = ω_s Δω`, `2H dΔω/dt = P_m - P_e - D Δω` (speeds in p.u.).
//! - Composite loads: a third-order induction motor absorbing a configurable
//!   fraction of the active demand (slip plus complex transient EMF with the
//!   open-circuit time constant), the remainder held as constant power with
//!   a low-voltage constant-impedance cutoff.
//!
//! Faults are large shunt admittances applied at a bus for a time interval
//! snapped to the integration grid and removed at clearing without topology
//! change. Integration is fixed-step RK4 with the algebraic network solved
//! at every stage (see [`solver`]). The simulator is deterministic:
//! identical inputs give bit-identical trajectories.

mod solver;
mod trajectory;

pub use solver::{constant_power_current, CP_VOLTAGE_CUTOFF};
pub use trajectory::{read_binary, TrajectoryMeta, VoltageTrajectory};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridModel;
use crate::steady::{
    solve_power_flow_with, NetworkModel, OperatingPoint, PowerFlowOptions, SteadyStateError,
};
use solver::NetSolver;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("initialization power flow failed: {0}")]
    PowerFlow(#[from] SteadyStateError),
    #[error("motor at bus {bus} stalls at steady state: demanded {demanded:.3} p.u. exceeds peak {peak:.3} p.u.")]
    MotorStallAtInit { bus: usize, demanded: f64, peak: f64 },
    #[error("initial state is not an equilibrium: max |dx/dt| = {max_deriv:.3e}")]
    NotEquilibrium { max_deriv: f64 },
    #[error("network solver construction failed (singular augmented admittance)")]
    SingularNetwork,
    #[error("time step {0} outside (0, 0.02] s")]
    InvalidTimeStep(f64),
    #[error("horizon {got:.3} s too short: need at least t_on + duration + 2 s = {min:.3} s")]
    HorizonTooShort { min: f64, got: f64 },
    #[error("fault bus {0} does not exist")]
    UnknownFaultBus(usize),
}

/// Induction-motor parameter set, p.u. on the motor's own MVA base.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MotorParams {
    pub stator_resistance: f64,
    pub stator_reactance: f64,
    pub magnetizing_reactance: f64,
    pub rotor_resistance: f64,
    pub rotor_reactance: f64,
    /// Inertia constant, seconds on motor base.
    pub inertia: f64,
    /// Load torque ~ (1 - slip)^exponent.
    pub torque_exponent: f64,
}

impl MotorParams {
    pub fn default_set() -> MotorParams {
        MotorParams {
            stator_resistance: 0.01,
            stator_reactance: 0.10,
            magnetizing_reactance: 3.0,
            rotor_resistance: 0.018,
            rotor_reactance: 0.18,
            inertia: 0.5,
            torque_exponent: 2.0,
        }
    }

    pub fn by_id(id: &str) -> Option<MotorParams> {
        match id {
            "default" => Some(MotorParams::default_set()),
            _ => None,
        }
    }

    pub fn is_known_id(id: &str) -> bool {
        MotorParams::by_id(id).is_some()
    }

    /// Open-circuit reactance `X = X_s + X_m`.
    pub fn x_open(&self) -> f64 {
        self.stator_reactance + self.magnetizing_reactance
    }

    /// Transient reactance `X' = X_s + X_m X_r / (X_m + X_r)`.
    pub fn x_transient(&self) -> f64 {
        self.stator_reactance
            + self.magnetizing_reactance * self.rotor_reactance
                / (self.magnetizing_reactance + self.rotor_reactance)
    }

    /// Open-circuit transient time constant `T'_0 = (X_r + X_m)/(ω_s R_r)`.
    pub fn t0_prime(&self, omega_s: f64) -> f64 {
        (self.rotor_reactance + self.magnetizing_reactance) / (omega_s * self.rotor_resistance)
    }

    /// Steady-state terminal impedance at slip `s` (equals the equivalent
    /// circuit of the transient model at its equilibrium).
    pub fn impedance(&self, slip: f64) -> Complex64 {
        let sigma = slip * (self.magnetizing_reactance + self.rotor_reactance)
            / self.rotor_resistance;
        Complex64::new(self.stator_resistance, self.x_transient())
            + Complex64::new(0.0, self.x_open() - self.x_transient())
                / Complex64::new(1.0, sigma)
    }
}

/// Three-phase bus fault: shunt `admittance` applied at `bus` during
/// `[t_on, t_on + duration)`, snapped to the integration grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FaultSpec {
    pub bus: usize,
    pub t_on: f64,
    pub duration: f64,
    /// Shunt admittance during the fault, p.u. (near-bolted by default).
    pub admittance: f64,
}

impl FaultSpec {
    pub const DEFAULT_ADMITTANCE: f64 = 1e4;

    pub fn new(bus: usize, t_on: f64, duration: f64) -> FaultSpec {
        FaultSpec { bus, t_on, duration, admittance: FaultSpec::DEFAULT_ADMITTANCE }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimOptions {
    /// System frequency, Hz.
    pub sync_freq_hz: f64,
    /// Motor MVA base = motor active share / loading. Smaller values leave
    /// more torque margin for reacceleration.
    pub motor_loading: f64,
    /// Network Newton tolerance (voltage-residual infinity norm).
    pub network_tolerance: f64,
    pub network_max_iterations: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            sync_freq_hz: 60.0,
            motor_loading: 0.35,
            network_tolerance: 1e-8,
            network_max_iterations: 20,
        }
    }
}

#[derive(Debug, Clone)]
struct GenDevice {
    bus_pos: usize,
    emf_mag: f64,
    mech_power: f64,
    inertia: f64,
    damping: f64,
    y_internal: Complex64,
}

#[derive(Debug, Clone)]
struct MotorDevice {
    bus_pos: usize,
    bus_id: usize,
    /// Motor MVA base in system p.u.
    #[allow(dead_code)]
    mva_base: f64,
    params: MotorParams,
    /// Load-torque coefficient calibrated so the initial slip is an exact
    /// torque equilibrium.
    torque_coeff: f64,
    /// 1/(R_s + jX') scaled to system base.
    y_internal_sys: Complex64,
    x_open: f64,
    x_trans: f64,
    t0_prime: f64,
}

/// Immutable device tables + network matrices for one operating condition.
#[derive(Debug)]
pub struct DynamicModel {
    n_bus: usize,
    bus_ids: Vec<usize>,
    y_aug: DMatrix<Complex64>,
    gens: Vec<GenDevice>,
    motors: Vec<MotorDevice>,
    cp_pos: Vec<usize>,
    cp_power: Vec<Complex64>,
    omega_s: f64,
    opts: SimOptions,
    topology_id: String,
    load_scale: f64,
}

/// Dynamic state snapshot: generator angles/speed deviations, motor
/// slips/transient EMFs, and the network voltages they induce.
#[derive(Debug, Clone)]
pub struct DynamicState {
    pub gen_angle: Vec<f64>,
    pub gen_speed: Vec<f64>,
    pub motor_slip: Vec<f64>,
    pub motor_emf: Vec<Complex64>,
    pub voltages: Vec<Complex64>,
}

/// Initialize devices and state so that the no-fault time derivative of
/// every state variable is below 1e-6 (true equilibrium of the lossy
/// dynamic network, solved by an internal power flow).
pub fn init_dynamic_state(
    grid: &GridModel,
    op: &OperatingPoint,
    opts: SimOptions,
) -> Result<(DynamicModel, DynamicState), DynamicsError> {
    let lossy = solve_power_flow_with(
        grid,
        op.load_scale,
        NetworkModel::Lossy,
        PowerFlowOptions::default(),
    )?;
    let n = grid.bus_count();
    let omega_s = 2.0 * std::f64::consts::PI * opts.sync_freq_hz;
    let mut y_aug = crate::steady::powerflow_admittance(grid, NetworkModel::Lossy);

    let v: Vec<Complex64> = (0..n).map(|i| lossy.voltage(i)).collect();

    let mut gens = Vec::with_capacity(grid.generators().len());
    let mut gen_angle = Vec::new();
    let mut gen_speed = Vec::new();
    for g in grid.generators() {
        let pos = grid.bus_position(g.bus).unwrap();
        let s_inj = Complex64::new(lossy.p_inj[pos], lossy.q_inj[pos]);
        let vt = v[pos];
        let current = (s_inj / vt).conj();
        let emf = vt + Complex64::new(0.0, g.transient_reactance) * current;
        let y_int = Complex64::new(1.0, 0.0) / Complex64::new(0.0, g.transient_reactance);
        let pe = (emf * current.conj()).re;
        y_aug[(pos, pos)] += y_int;
        gens.push(GenDevice {
            bus_pos: pos,
            emf_mag: emf.norm(),
            mech_power: pe,
            inertia: g.inertia,
            damping: g.damping,
            y_internal: y_int,
        });
        gen_angle.push(emf.arg());
        gen_speed.push(0.0);
    }

    let mut motors = Vec::new();
    let mut motor_slip = Vec::new();
    let mut motor_emf = Vec::new();
    let mut cp_pos = Vec::new();
    let mut cp_power = Vec::new();
    for l in grid.loads() {
        let pos = grid.bus_position(l.bus).unwrap();
        let vt = v[pos];
        let s_total = Complex64::new(l.active, l.reactive) * op.load_scale;
        let p_motor = l.motor_fraction * l.active * op.load_scale;
        let mut s_const = s_total;
        if p_motor > 0.0 {
            let params = MotorParams::by_id(&l.motor_params).expect("validated id");
            let mva_base = p_motor / opts.motor_loading;
            let eq = motor_equilibrium(&params, vt.norm(), opts.motor_loading)
                .ok_or_else(|| {
                    let peak = motor_peak_power(&params, vt.norm());
                    DynamicsError::MotorStallAtInit {
                        bus: l.bus,
                        demanded: opts.motor_loading,
                        peak,
                    }
                })?;
            let rot = vt / vt.norm();
            let emf = eq.emf * rot;
            let current = eq.current * rot;
            let y_mb = Complex64::new(1.0, 0.0)
                / Complex64::new(params.stator_resistance, params.x_transient());
            let y_sys = y_mb * mva_base;
            y_aug[(pos, pos)] += y_sys;
            let s_motor_sys = vt * (current * mva_base).conj();
            s_const = s_total - s_motor_sys;
            motors.push(MotorDevice {
                bus_pos: pos,
                bus_id: l.bus,
                mva_base,
                params,
                torque_coeff: eq.torque_coeff,
                y_internal_sys: y_sys,
                x_open: params.x_open(),
                x_trans: params.x_transient(),
                t0_prime: params.t0_prime(omega_s),
            });
            motor_slip.push(eq.slip);
            motor_emf.push(emf);
        }
        if s_const.norm() > 1e-12 {
            cp_pos.push(pos);
            cp_power.push(s_const);
        }
    }

    let model = DynamicModel {
        n_bus: n,
        bus_ids: grid.buses().iter().map(|b| b.id).collect(),
        y_aug,
        gens,
        motors,
        cp_pos,
        cp_power,
        omega_s,
        opts,
        topology_id: grid.topology_id(),
        load_scale: op.load_scale,
    };
    let state = DynamicState { gen_angle, gen_speed, motor_slip, motor_emf, voltages: v };

    let max_deriv = model.no_fault_derivative_norm(&state)?;
    if max_deriv >= 1e-6 {
        return Err(DynamicsError::NotEquilibrium { max_deriv });
    }
    Ok((model, state))
}

struct MotorEquilibrium {
    slip: f64,
    /// EMF and stator current for a terminal voltage on the real axis.
    emf: Complex64,
    current: Complex64,
    torque_coeff: f64,
}

fn motor_drawn_power(params: &MotorParams, v_mag: f64, slip: f64) -> f64 {
    let z = params.impedance(slip);
    v_mag * v_mag * (Complex64::new(1.0, 0.0) / z).re
}

fn motor_peak_power(params: &MotorParams, v_mag: f64) -> f64 {
    (1..400)
        .map(|k| motor_drawn_power(params, v_mag, 0.5 * k as f64 / 400.0))
        .fold(0.0, f64::max)
}

/// Solve for the slip at which the motor draws `p_target` (motor p.u.) at
/// terminal voltage `v_mag`, on the stable side of the torque peak.
fn motor_equilibrium(params: &MotorParams, v_mag: f64, p_target: f64) -> Option<MotorEquilibrium> {
    // locate the power peak, then bisect on the rising branch
    let mut peak_slip = 1e-5;
    let mut peak = 0.0;
    for k in 1..400 {
        let s = 0.5 * k as f64 / 400.0;
        let p = motor_drawn_power(params, v_mag, s);
        if p > peak {
            peak = p;
            peak_slip = s;
        }
    }
    if peak < p_target {
        return None;
    }
    let (mut lo, mut hi) = (1e-7, peak_slip);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if motor_drawn_power(params, v_mag, mid) < p_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let slip = 0.5 * (lo + hi);
    let vt = Complex64::new(v_mag, 0.0);
    let current = vt / params.impedance(slip);
    let emf = vt - Complex64::new(params.stator_resistance, params.x_transient()) * current;
    let te = (emf * current.conj()).re;
    let torque_coeff = te / (1.0 - slip).powf(params.torque_exponent);
    Some(MotorEquilibrium { slip, emf, current, torque_coeff })
}

impl DynamicModel {
    pub fn generator_count(&self) -> usize {
        self.gens.len()
    }

    pub fn motor_count(&self) -> usize {
        self.motors.len()
    }

    pub fn motor_bus_ids(&self) -> Vec<usize> {
        self.motors.iter().map(|m| m.bus_id).collect()
    }

    fn state_dim(&self) -> usize {
        2 * self.gens.len() + 3 * self.motors.len()
    }

    fn flatten(&self, state: &DynamicState) -> Vec<f64> {
        let ng = self.gens.len();
        let nm = self.motors.len();
        let mut x = Vec::with_capacity(self.state_dim());
        x.extend_from_slice(&state.gen_angle[..ng]);
        x.extend_from_slice(&state.gen_speed[..ng]);
        x.extend_from_slice(&state.motor_slip[..nm]);
        x.extend(state.motor_emf.iter().map(|e| e.re));
        x.extend(state.motor_emf.iter().map(|e| e.im));
        x
    }

    fn solver(&self, fault: Option<(usize, f64)>) -> Result<NetSolver, DynamicsError> {
        let mut y = self.y_aug.clone();
        if let Some((pos, adm)) = fault {
            y[(pos, pos)] += Complex64::new(adm, 0.0);
        }
        NetSolver::new(
            y,
            self.cp_pos.clone(),
            self.cp_power.clone(),
            self.opts.network_tolerance,
            self.opts.network_max_iterations,
        )
        .ok_or(DynamicsError::SingularNetwork)
    }

    /// Stage right-hand side. Returns `None` if the network solve diverges.
    fn rhs(
        &self,
        net: &NetSolver,
        x: &[f64],
        warm: &DVector<Complex64>,
    ) -> Option<(Vec<f64>, DVector<Complex64>)> {
        let ng = self.gens.len();
        let nm = self.motors.len();
        let mut i_n = DVector::zeros(self.n_bus);
        for (i, g) in self.gens.iter().enumerate() {
            let emf = Complex64::from_polar(g.emf_mag, x[i]);
            i_n[g.bus_pos] += emf * g.y_internal;
        }
        for (j, m) in self.motors.iter().enumerate() {
            let emf = Complex64::new(x[2 * ng + nm + j], x[2 * ng + 2 * nm + j]);
            i_n[m.bus_pos] += emf * m.y_internal_sys;
        }
        let (v, _iters) = net.solve(&i_n, warm)?;

        let mut dx = vec![0.0; self.state_dim()];
        for (i, g) in self.gens.iter().enumerate() {
            let delta = x[i];
            let speed = x[ng + i];
            let emf = Complex64::from_polar(g.emf_mag, delta);
            let ig = (emf - v[g.bus_pos]) * g.y_internal;
            let pe = (emf * ig.conj()).re;
            dx[i] = self.omega_s * speed;
            dx[ng + i] = (g.mech_power - pe - g.damping * speed) / (2.0 * g.inertia);
        }
        for (j, m) in self.motors.iter().enumerate() {
            let slip = x[2 * ng + j];
            let emf = Complex64::new(x[2 * ng + nm + j], x[2 * ng + 2 * nm + j]);
            let current = (v[m.bus_pos] - emf)
                / Complex64::new(m.params.stator_resistance, m.x_trans);
            let te = (emf * current.conj()).re;
            let tl = m.torque_coeff * (1.0 - slip).powf(m.params.torque_exponent);
            dx[2 * ng + j] = (tl - te) / (2.0 * m.params.inertia);
            let demf = -(emf - Complex64::new(0.0, m.x_open - m.x_trans) * current) / m.t0_prime
                - Complex64::new(0.0, slip * self.omega_s) * emf;
            dx[2 * ng + nm + j] = demf.re;
            dx[2 * ng + 2 * nm + j] = demf.im;
        }
        Some((dx, v))
    }

    /// Infinity norm of the state derivative with no fault applied; the
    /// equilibrium check used at initialization.
    pub fn no_fault_derivative_norm(&self, state: &DynamicState) -> Result<f64, DynamicsError> {
        let net = self.solver(None)?;
        let warm = DVector::from_vec(state.voltages.clone());
        let x = self.flatten(state);
        let (dx, _) = self.rhs(&net, &x, &warm).ok_or(DynamicsError::SingularNetwork)?;
        Ok(dx.iter().fold(0.0f64, |a, &d| a.max(d.abs())))
    }
}

/// Simulate with default [`SimOptions`].
pub fn simulate(
    grid: &GridModel,
    op: &OperatingPoint,
    fault: &FaultSpec,
    horizon: f64,
    dt: f64,
) -> Result<VoltageTrajectory, DynamicsError> {
    simulate_with(grid, op, fault, horizon, dt, SimOptions::default())
}

pub fn simulate_with(
    grid: &GridModel,
    op: &OperatingPoint,
    fault: &FaultSpec,
    horizon: f64,
    dt: f64,
    opts: SimOptions,
) -> Result<VoltageTrajectory, DynamicsError> {
    if !(dt > 0.0 && dt <= 0.02) {
        return Err(DynamicsError::InvalidTimeStep(dt));
    }
    let min_horizon = fault.t_on + fault.duration + 2.0;
    if horizon < min_horizon {
        return Err(DynamicsError::HorizonTooShort { min: min_horizon, got: horizon });
    }
    let fault_pos = grid
        .bus_position(fault.bus)
        .ok_or(DynamicsError::UnknownFaultBus(fault.bus))?;

    let (model, state0) = init_dynamic_state(grid, op, opts)?;

    let steps = (horizon / dt).round() as usize;
    let k_on = (fault.t_on / dt).round() as usize;
    let k_clear = ((fault.t_on + fault.duration) / dt).round() as usize;
    let faulted = fault.admittance > 0.0 && k_clear > k_on && k_on < steps;

    let base = model.solver(None)?;
    let during = if faulted {
        Some(model.solver(Some((fault_pos, fault.admittance)))?)
    } else {
        None
    };
    let pick = |k: usize| -> &NetSolver {
        match &during {
            Some(f) if k >= k_on && k < k_clear => f,
            _ => &base,
        }
    };

    let meta = TrajectoryMeta {
        topology_id: model.topology_id.clone(),
        load_scale: model.load_scale,
        fault: FaultSpec {
            bus: fault.bus,
            t_on: k_on as f64 * dt,
            duration: (k_clear.saturating_sub(k_on)) as f64 * dt,
            admittance: if faulted { fault.admittance } else { 0.0 },
        },
        seed: None,
        collapsed: false,
        fault_on_step: k_on,
        fault_clear_step: k_clear,
    };
    let mut traj = VoltageTrajectory::new(dt, model.bus_ids.clone(), meta);

    let mut x = model.flatten(&state0);
    let mut warm = DVector::from_vec(state0.voltages.clone());
    let record = |traj: &mut VoltageTrajectory, v: &DVector<Complex64>| {
        let mags: Vec<f64> = v.iter().map(|c| c.norm()).collect();
        let angs: Vec<f64> = v.iter().map(|c| c.arg()).collect();
        traj.push_sample(&mags, &angs);
    };

    let h = dt;
    let mut collapsed = false;
    for k in 0..steps {
        let sv = pick(k);
        let sv_next = pick(k + 1);

        let Some((k1, v1)) = model.rhs(sv, &x, &warm) else {
            collapsed = true;
            break;
        };
        record(&mut traj, &v1);

        let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, d)| a + 0.5 * h * d).collect();
        let Some((k2, v2)) = model.rhs(sv, &x2, &v1) else {
            collapsed = true;
            break;
        };
        let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, d)| a + 0.5 * h * d).collect();
        let Some((k3, v3)) = model.rhs(sv, &x3, &v2) else {
            collapsed = true;
            break;
        };
        let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, d)| a + h * d).collect();
        let Some((k4, v4)) = model.rhs(sv_next, &x4, &v3) else {
            collapsed = true;
            break;
        };
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !x.iter().all(|v| v.is_finite()) {
            collapsed = true;
            break;
        }
        warm = v4;
    }
    if !collapsed {
        // final sample at the end state (post-fault topology)
        if let Some((_, v)) = model.rhs(&base, &x, &warm) {
            record(&mut traj, &v);
        } else {
            collapsed = true;
        }
    }
    traj.meta.collapsed = collapsed;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ne39;
    use crate::steady::solve_power_flow;

    fn base_op() -> (GridModel, OperatingPoint) {
        let g = ne39();
        let op = solve_power_flow(&g, 1.0).unwrap();
        (g, op)
    }

    #[test]
    fn init_is_equilibrium_at_base_and_high_load() {
        let g = ne39();
        for scale in [1.0, 1.2] {
            let op = solve_power_flow(&g, scale).unwrap();
            let (model, state) = init_dynamic_state(&g, &op, SimOptions::default()).unwrap();
            let d = model.no_fault_derivative_norm(&state).unwrap();
            assert!(d < 1e-6, "scale {scale}: max derivative {d}");
        }
    }

    #[test]
    fn zero_motor_fraction_has_no_motor_states() {
        let g = GridModel::from_json_str(
            r#"{
            "name": "toy2", "base_mva": 100.0,
            "buses": [
                {"id": 1, "kind": "generator", "base_voltage": 1.0},
                {"id": 2, "kind": "load", "base_voltage": 1.0}
            ],
            "branches": [{"from": 1, "to": 2, "reactance": 0.2, "resistance": 0.02}],
            "generators": [{"bus": 1, "mech_power": 0.5, "inertia": 5.0, "damping": 2.0, "transient_reactance": 0.1}],
            "loads": [{"bus": 2, "active": 0.5, "reactive": 0.1, "motor_fraction": 0.0}]
        }"#,
        )
        .unwrap();
        let op = solve_power_flow(&g, 1.0).unwrap();
        let (model, state) = init_dynamic_state(&g, &op, SimOptions::default()).unwrap();
        assert_eq!(model.motor_count(), 0);
        assert!(model.no_fault_derivative_norm(&state).unwrap() < 1e-6);
    }

    #[test]
    fn overloaded_motor_init_names_the_bus() {
        let (g, op) = base_op();
        let opts = SimOptions { motor_loading: 3.0, ..SimOptions::default() };
        let err = init_dynamic_state(&g, &op, opts).unwrap_err();
        match err {
            DynamicsError::MotorStallAtInit { bus, .. } => {
                assert!(g.load_record(bus).is_some(), "bus {bus}")
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn no_fault_persistence() {
        let (g, op) = base_op();
        let fault = FaultSpec { bus: 8, t_on: 0.1, duration: 0.001, admittance: 0.0 };
        let traj = simulate(&g, &op, &fault, 5.0, 0.01).unwrap();
        assert!(!traj.meta.collapsed);
        assert_eq!(traj.sample_count(), 501);
        let first = traj.magnitudes_at(0).to_vec();
        let mut drift = 0.0f64;
        for k in 0..traj.sample_count() {
            for b in 0..traj.bus_count() {
                drift = drift.max((traj.magnitude(k, b) - first[b]).abs());
            }
        }
        assert!(drift < 1e-3, "drift {drift}");
    }

    #[test]
    fn argument_validation() {
        let (g, op) = base_op();
        let fault = FaultSpec::new(8, 0.1, 0.2);
        assert!(matches!(
            simulate(&g, &op, &fault, 5.0, 0.05),
            Err(DynamicsError::InvalidTimeStep(_))
        ));
        assert!(matches!(
            simulate(&g, &op, &fault, 1.0, 0.01),
            Err(DynamicsError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn determinism_bit_exact() {
        let (g, op) = base_op();
        let fault = FaultSpec::new(16, 0.1, 0.25);
        let a = simulate(&g, &op, &fault, 3.0, 0.01).unwrap();
        let b = simulate(&g, &op, &fault, 3.0, 0.01).unwrap();
        assert_eq!(a.sample_count(), b.sample_count());
        for k in 0..a.sample_count() {
            assert_eq!(a.magnitudes_at(k), b.magnitudes_at(k));
            assert_eq!(a.angles_at(k), b.angles_at(k));
        }
    }

    #[test]
    fn severe_fault_depresses_voltage_mild_recovers() {
        let (g, op) = base_op();
        // severe: long fault at a heavy motor bus
        let severe = simulate(&g, &op, &FaultSpec::new(8, 0.1, 0.4), 3.0, 0.01).unwrap();
        let bs_severe = severe.below_threshold_bus_seconds(0.8);
        // mild: short fault at a light bus
        let mild = simulate(&g, &op, &FaultSpec::new(12, 0.1, 0.1), 3.0, 0.01).unwrap();
        let bs_mild = mild.below_threshold_bus_seconds(0.8);
        assert!(bs_severe > 10.0 * bs_mild.max(0.01), "severe {bs_severe} mild {bs_mild}");
        // mild case recovers: all magnitudes ≥ 0.8 within 1 s after clearing
        let clear = mild.meta.fault_clear_step;
        let one_second = (1.0 / mild.dt) as usize;
        let mut recovered = false;
        'outer: for k in clear..clear + one_second {
            if mild.magnitudes_at(k).iter().all(|&v| v >= 0.8) {
                recovered = true;
                break 'outer;
            }
        }
        assert!(recovered);
    }

    #[test]
    fn fault_steps_snap_to_grid() {
        let (g, op) = base_op();
        let fault = FaultSpec::new(16, 0.103, 0.248);
        let traj = simulate(&g, &op, &fault, 3.0, 0.01).unwrap();
        assert_eq!(traj.meta.fault_on_step, 10);
        assert_eq!(traj.meta.fault_clear_step, 35);
        assert!((traj.meta.fault.t_on - 0.10).abs() < 1e-12);
        assert!((traj.meta.fault.duration - 0.25).abs() < 1e-12);
    }
}
