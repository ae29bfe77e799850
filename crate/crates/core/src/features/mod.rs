//! Topology-aware voltage dynamic features.
//!
//! Each trajectory snapshot maps through the fixed pre-fault load matrix:
//! `Δ_t = L_s⁻¹ q_L(V_L(t))` with `q_L` evaluated at the instantaneous load
//! voltage magnitudes and the pre-fault generator voltages. Stacking the
//! snapshots gives an m×N feature matrix; a moving window anchored at fault
//! inception cuts the CNN input out of it. Labels come from the voltage
//! dwell rule on the clean trajectory; measurement noise perturbs features
//! only.

use nalgebra::{DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::dynamics::VoltageTrajectory;
use crate::grid::SusceptancePartition;
use crate::io::atomic_write;
use crate::steady::{reactive_demand, LoadMatrix, SteadyStateError};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Steady(#[from] SteadyStateError),
    #[error("L_s is singular")]
    SingularLoadMatrix,
    #[error("topology mismatch: load matrix built on '{lm}' but trajectory is '{traj}'")]
    TopologyMismatch { lm: String, traj: String },
    #[error("trajectory does not include load bus {0}")]
    MissingLoadBus(usize),
    #[error("window [{start:.3}, {end:.3}] s exceeds trajectory horizon {horizon:.3} s")]
    WindowOutOfRange { start: f64, end: f64, horizon: f64 },
    #[error("trajectory horizon {horizon:.3} s too short to label: needs {needed:.3} s after clearing")]
    LabelHorizonTooShort { horizon: f64, needed: f64 },
    #[error("non-finite feature value at load {row}, step {col}")]
    NonFinite { row: usize, col: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

/// Dwell-rule labeling outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityLabel {
    pub stability: Stability,
    /// Bus id with the longest sub-threshold dwell.
    pub worst_bus: usize,
    /// Longest contiguous time below the voltage threshold, seconds.
    pub longest_dwell: f64,
}

/// An m×n slice of the feature matrix plus its provenance.
#[derive(Debug, Clone)]
pub struct FeatureWindow {
    /// m loads × n window steps.
    pub values: DMatrix<f64>,
    /// Window start time, seconds from trajectory start.
    pub start_time: f64,
    /// Window length, seconds.
    pub window_s: f64,
    pub label: Option<Stability>,
    pub topology_id: String,
    pub trajectory_id: String,
}

/// Reusable factorization of `L_s` for many snapshots of one trajectory.
pub struct DeltaSolver {
    lu: nalgebra::LU<f64, Dyn, Dyn>,
    pub topology_id: String,
    m: usize,
}

impl DeltaSolver {
    pub fn new(lm: &LoadMatrix) -> Result<DeltaSolver, FeatureError> {
        let lu = lm.l_s.clone().lu();
        if lu.determinant().abs() < 1e-300 {
            return Err(FeatureError::SingularLoadMatrix);
        }
        Ok(DeltaSolver { lu, topology_id: lm.topology_id.clone(), m: lm.l_s.nrows() })
    }

    pub fn solve(&self, q_load: &DVector<f64>) -> Result<DVector<f64>, FeatureError> {
        self.lu.solve(q_load).ok_or(FeatureError::SingularLoadMatrix)
    }

    pub fn load_count(&self) -> usize {
        self.m
    }
}

/// One feature snapshot `Δ_t = L_s⁻¹ q_L(V_L_t)`.
pub fn delta_snapshot(
    lm: &LoadMatrix,
    v_load_t: &DVector<f64>,
    part: &SusceptancePartition,
    v_gen: &DVector<f64>,
) -> Result<DVector<f64>, FeatureError> {
    let solver = DeltaSolver::new(lm)?;
    let q = reactive_demand(v_load_t, part, v_gen)?;
    solver.solve(&q)
}

/// Stack snapshots for every trajectory sample into an m×N feature matrix
/// (column `t` = `Δ_t`).
pub fn build_features(
    traj: &VoltageTrajectory,
    lm: &LoadMatrix,
    part: &SusceptancePartition,
    v_gen: &DVector<f64>,
) -> Result<DMatrix<f64>, FeatureError> {
    if lm.topology_id != traj.meta.topology_id {
        return Err(FeatureError::TopologyMismatch {
            lm: lm.topology_id.clone(),
            traj: traj.meta.topology_id.clone(),
        });
    }
    let solver = DeltaSolver::new(lm)?;
    // positions of the partition's load buses inside the trajectory
    let mut load_pos = Vec::with_capacity(part.load_count());
    for &bus in &part.load_buses {
        let pos = traj
            .bus_ids
            .iter()
            .position(|&b| b == bus)
            .ok_or(FeatureError::MissingLoadBus(bus))?;
        load_pos.push(pos);
    }
    let m = part.load_count();
    let n = traj.sample_count();
    let mut out = DMatrix::zeros(m, n);
    let mut v_l = DVector::zeros(m);
    for t in 0..n {
        let mags = traj.magnitudes_at(t);
        for (r, &pos) in load_pos.iter().enumerate() {
            v_l[r] = mags[pos];
        }
        let q = reactive_demand(&v_l, part, v_gen)?;
        let delta = solver.solve(&q)?;
        for r in 0..m {
            let v = delta[r];
            if !v.is_finite() {
                return Err(FeatureError::NonFinite { row: r, col: t });
            }
            out[(r, t)] = v;
        }
    }
    Ok(out)
}

/// Cut the m×n sub-matrix starting at the step nearest `t_start`.
pub fn extract_window(
    features: &DMatrix<f64>,
    t_start: f64,
    window_s: f64,
    dt: f64,
) -> Result<FeatureWindow, FeatureError> {
    let n = (window_s / dt).round() as usize;
    let start = (t_start / dt).round() as usize;
    let total = features.ncols();
    if n == 0 || start + n > total {
        return Err(FeatureError::WindowOutOfRange {
            start: t_start,
            end: t_start + window_s,
            horizon: total.saturating_sub(1) as f64 * dt,
        });
    }
    let values = features.columns(start, n).into_owned();
    Ok(FeatureWindow {
        values,
        start_time: start as f64 * dt,
        window_s,
        label: None,
        topology_id: String::new(),
        trajectory_id: String::new(),
    })
}

/// Dwell-rule labeling: unstable iff some bus stays below `v_thresh` for a
/// contiguous run longer than `dwell_thresh` seconds. Trajectories flagged
/// as numerically collapsed count as unstable (the collapse persists).
pub fn label_trajectory(
    traj: &VoltageTrajectory,
    v_thresh: f64,
    dwell_thresh: f64,
) -> Result<StabilityLabel, FeatureError> {
    let horizon = traj.horizon();
    if !traj.meta.collapsed {
        let needed = traj.meta.fault_clear_step as f64 * traj.dt + dwell_thresh;
        if horizon < needed {
            return Err(FeatureError::LabelHorizonTooShort { horizon, needed });
        }
    }
    let mut worst_bus = traj.bus_ids.first().copied().unwrap_or(0);
    let mut worst_run = 0usize;
    for b in 0..traj.bus_count() {
        let mut run = 0usize;
        let mut best = 0usize;
        for k in 0..traj.sample_count() {
            if traj.magnitude(k, b) < v_thresh {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        if best > worst_run {
            worst_run = best;
            worst_bus = traj.bus_ids[b];
        }
    }
    let mut dwell = worst_run as f64 * traj.dt;
    let mut unstable = dwell > dwell_thresh;
    if traj.meta.collapsed {
        unstable = true;
        dwell = dwell.max(dwell_thresh + traj.dt);
    }
    Ok(StabilityLabel {
        stability: if unstable { Stability::Unstable } else { Stability::Stable },
        worst_bus,
        longest_dwell: dwell,
    })
}

/// Add i.i.d. zero-mean Gaussian measurement noise to magnitudes (clamped at
/// zero) and angles. Deterministic for a given seed; `σ = 0` returns a
/// bit-identical copy.
pub fn inject_pmu_noise(
    traj: &VoltageTrajectory,
    sigma_mag: f64,
    sigma_ang_deg: f64,
    seed: u64,
) -> VoltageTrajectory {
    let mut out = traj.clone();
    if sigma_mag == 0.0 && sigma_ang_deg == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_mag = Normal::new(0.0, sigma_mag).expect("σ must be finite and non-negative");
    let n_ang = Normal::new(0.0, sigma_ang_deg.to_radians()).expect("σ must be finite and non-negative");
    let count = out.sample_count() * out.bus_count();
    {
        let mags = out.magnitudes_mut();
        for item in mags.iter_mut().take(count) {
            if sigma_mag > 0.0 {
                *item = (*item + n_mag.sample(&mut rng)).max(0.0);
            }
        }
    }
    {
        let angs = out.angles_mut();
        for item in angs.iter_mut().take(count) {
            if sigma_ang_deg > 0.0 {
                *item += n_ang.sample(&mut rng);
            }
        }
    }
    out
}

/// CSV export of a feature window (m rows × n columns).
pub fn write_window_csv(window: &FeatureWindow, path: &Path) -> std::io::Result<()> {
    let mut out = String::new();
    for r in 0..window.values.nrows() {
        for c in 0..window.values.ncols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.9}", window.values[(r, c)]));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Binary PGM (P5) export, min-max scaled to 0..255.
pub fn write_window_pgm(window: &FeatureWindow, path: &Path) -> std::io::Result<()> {
    let (m, n) = (window.values.nrows(), window.values.ncols());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in window.values.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{n} {m}\n255\n").into_bytes();
    for r in 0..m {
        for c in 0..n {
            let x = ((window.values[(r, c)] - lo) / span * 255.0).round();
            bytes.push(x.clamp(0.0, 255.0) as u8);
        }
    }
    atomic_write(path, &bytes)
}
