//! Randomized dataset generation.
//!
//! Every sample is driven by its own seed derived from the master seed and
//! the sample index, so dataset content is independent of worker count and
//! scheduling. A sample draws a load level, fault duration and fault bus,
//! solves the pre-fault power flow (redrawing on infeasible loadings),
//! simulates the disturbance, builds the topology-aware features, and cuts
//! the moving window anchored at fault inception. Labels always come from
//! the clean trajectory; optional PMU noise perturbs the features only.

use nalgebra::DMatrix;
use ndarray::{Array4, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::HarnessError;
use crate::dynamics::{simulate_with, FaultSpec, SimOptions};
use crate::exec;
use crate::features::{
    build_features, extract_window, inject_pmu_noise, label_trajectory, Stability,
};
use crate::grid::GridModel;
use crate::io::{atomic_write, hex_digest};
use crate::steady::{load_matrix, solve_power_flow};

pub const LABEL_V_THRESH: f64 = 0.8;
pub const LABEL_DWELL_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct NoiseSpec {
    pub sigma_mag: f64,
    pub sigma_ang_deg: f64,
}

/// Generation recipe: topology, sampling ranges, seeds, window geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Provenance name of the base grid (e.g. `builtin:ne39`).
    pub grid_name: String,
    /// Lines removed from the base grid before generation.
    pub disconnect: Vec<(usize, usize)>,
    pub count: usize,
    pub load_range: (f64, f64),
    pub duration_range: (f64, f64),
    pub master_seed: u64,
    /// Moving-window length, seconds.
    pub window_s: f64,
    pub dt: f64,
    /// Fault inception time.
    pub t_on: f64,
    /// Simulated time after fault clearing.
    pub post_fault_horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl DatasetSpec {
    pub fn new(grid_name: &str, count: usize, master_seed: u64) -> DatasetSpec {
        DatasetSpec {
            grid_name: grid_name.to_string(),
            disconnect: Vec::new(),
            count,
            load_range: (0.8, 1.2),
            duration_range: (0.1, 0.4),
            master_seed,
            window_s: 0.8,
            dt: 0.01,
            t_on: 0.1,
            post_fault_horizon: 5.0,
            noise: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.count == 0 {
            return Err(HarnessError::BadSpec("sample count must be at least 1".into()));
        }
        if self.load_range.0 >= self.load_range.1 || self.duration_range.0 >= self.duration_range.1
        {
            return Err(HarnessError::BadSpec("sampling ranges must be non-degenerate".into()));
        }
        if self.window_s <= 0.0 || self.dt <= 0.0 {
            return Err(HarnessError::BadSpec("window and dt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: usize,
    pub seed: u64,
    pub load_scale: f64,
    pub fault_bus: usize,
    pub fault_duration: f64,
    pub label: u8,
    pub collapsed: bool,
    pub redraws: usize,
}

/// Windows + labels + provenance. Window tensor layout: (count, 1, m, n).
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub windows: Array4<f64>,
    pub labels: Vec<u8>,
    pub samples: Vec<SampleMeta>,
    pub spec: DatasetSpec,
    pub topology_id: String,
    pub content_hash: String,
    /// Set when rejection balancing could not reach the 10% minority floor.
    pub balance_warning: bool,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let unstable = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - unstable, unstable)
    }

    pub fn window_dims(&self) -> (usize, usize) {
        let d = self.windows.dim();
        (d.2, d.3)
    }
}

/// One generated case with the full feature matrix kept (used by the
/// window-length ablation, which re-windows identical trajectories).
pub struct CaseRecord {
    pub features: DMatrix<f64>,
    pub fault_on_step: usize,
    pub meta: SampleMeta,
}

pub struct CaseSet {
    pub cases: Vec<CaseRecord>,
    pub spec: DatasetSpec,
    pub topology_id: String,
    /// Hash over features + labels; equal hashes mean identical trajectories.
    pub cache_hash: String,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn sample_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ (index as u64).wrapping_mul(0x2545f4914f6cdd1d))
}

/// Derive a child seed for a named purpose (noise stream, per-scenario
/// datasets) from a parent seed.
pub fn derive_seed(parent: u64, salt: u64) -> u64 {
    splitmix64(parent ^ salt)
}

const NOISE_SALT: u64 = 0x6e6f697365; // "noise"

fn run_case(
    grid: &GridModel,
    spec: &DatasetSpec,
    index: usize,
) -> Result<CaseRecord, HarnessError> {
    let seed = sample_seed(spec.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let part = grid.susceptance_partition();
    let load_buses = grid.load_buses();

    let mut redraws = 0usize;
    let (op, fault) = loop {
        let load_scale = rng.random_range(spec.load_range.0..spec.load_range.1);
        let duration = rng.random_range(spec.duration_range.0..spec.duration_range.1);
        let fault_bus = load_buses[rng.random_range(0..load_buses.len())];
        match solve_power_flow(grid, load_scale) {
            Ok(op) => break (op, FaultSpec::new(fault_bus, spec.t_on, duration)),
            Err(_) if redraws < 20 => {
                redraws += 1;
                continue;
            }
            Err(e) => return Err(HarnessError::CaseGeneration { index, cause: e.to_string() }),
        }
    };

    let horizon = spec.t_on + fault.duration + spec.post_fault_horizon;
    let traj = simulate_with(grid, &op, &fault, horizon, spec.dt, SimOptions::default())
        .map_err(|e| HarnessError::CaseGeneration { index, cause: e.to_string() })?;
    let label = label_trajectory(&traj, LABEL_V_THRESH, LABEL_DWELL_S)
        .map_err(|e| HarnessError::CaseGeneration { index, cause: e.to_string() })?;

    let measured = match &spec.noise {
        Some(n) => inject_pmu_noise(&traj, n.sigma_mag, n.sigma_ang_deg, derive_seed(seed, NOISE_SALT)),
        None => traj.clone(),
    };

    let v_gen = op.v_gen_vector();
    let lm = load_matrix(&part, &v_gen)
        .map_err(|e| HarnessError::CaseGeneration { index, cause: e.to_string() })?;
    let mut features = build_features(&measured, &lm, &part, &v_gen)
        .map_err(|e| HarnessError::CaseGeneration { index, cause: e.to_string() })?;

    // a collapsed (truncated) run keeps its last column as the persistent state
    let n_window = (spec.window_s / spec.dt).round() as usize;
    let needed = traj.meta.fault_on_step + n_window;
    if features.ncols() < needed {
        let last = features.column(features.ncols() - 1).into_owned();
        let mut padded = DMatrix::zeros(features.nrows(), needed);
        padded.view_mut((0, 0), (features.nrows(), features.ncols())).copy_from(&features);
        for c in features.ncols()..needed {
            padded.set_column(c, &last);
        }
        features = padded;
    }

    Ok(CaseRecord {
        features,
        fault_on_step: traj.meta.fault_on_step,
        meta: SampleMeta {
            index,
            seed,
            load_scale: op.load_scale,
            fault_bus: fault.bus,
            fault_duration: traj.meta.fault.duration,
            label: u8::from(label.stability == Stability::Unstable),
            collapsed: traj.meta.collapsed,
            redraws,
        },
    })
}

fn window_of(case: &CaseRecord, spec: &DatasetSpec) -> DMatrix<f64> {
    extract_window(
        &case.features,
        case.fault_on_step as f64 * spec.dt,
        spec.window_s,
        spec.dt,
    )
    .expect("window fits by construction")
    .values
}

/// Generate the windowed dataset. Runs in fixed chunks (parallel when the
/// `parallel` feature is on); output is ordered by index and identical for
/// any worker count.
pub fn generate_dataset(base: &GridModel, spec: &DatasetSpec) -> Result<LabeledDataset, HarnessError> {
    spec.validate()?;
    let grid = if spec.disconnect.is_empty() {
        base.clone()
    } else {
        base.disconnect_lines(&spec.disconnect)?
    };
    let n_window = (spec.window_s / spec.dt).round() as usize;
    let m = grid.load_buses().len();

    let results = exec::map_indexed(spec.count, |i| {
        run_case(&grid, spec, i).map(|c| {
            let w = window_of(&c, spec);
            (w, c.meta)
        })
    });
    let mut windows: Vec<DMatrix<f64>> = Vec::with_capacity(spec.count);
    let mut metas: Vec<SampleMeta> = Vec::with_capacity(spec.count);
    for r in results {
        let (w, meta) = r?;
        windows.push(w);
        metas.push(meta);
    }

    // rejection balancing: top up the minority class if it is under 10%
    let mut balance_warning = false;
    let minority_floor = spec.count / 10;
    let count_class =
        |metas: &[SampleMeta], c: u8| metas.iter().filter(|m| m.label == c).count();
    let minority_class = if count_class(&metas, 1) * 2 <= spec.count { 1u8 } else { 0u8 };
    if count_class(&metas, minority_class) < minority_floor {
        let budget = 2 * spec.count;
        let mut extra_index = spec.count;
        while count_class(&metas, minority_class) < minority_floor && extra_index < spec.count + budget
        {
            if let Ok(c) = run_case(&grid, spec, extra_index) {
                if c.meta.label == minority_class {
                    // replace the highest-index majority sample
                    if let Some(pos) = metas.iter().rposition(|m| m.label != minority_class) {
                        windows[pos] = window_of(&c, spec);
                        metas[pos] = c.meta;
                    }
                }
            }
            extra_index += 1;
        }
        if count_class(&metas, minority_class) < minority_floor {
            balance_warning = true;
        }
    }

    let mut tensor = Array4::zeros((spec.count, 1, m, n_window));
    for (s, w) in windows.iter().enumerate() {
        let mut slab = tensor.index_axis_mut(Axis(0), s);
        let mut plane = slab.index_axis_mut(Axis(0), 0);
        for r in 0..m {
            for c in 0..n_window {
                plane[(r, c)] = w[(r, c)];
            }
        }
    }
    let labels: Vec<u8> = metas.iter().map(|m| m.label).collect();
    let content_hash = dataset_hash(&tensor, &labels, &metas);
    Ok(LabeledDataset {
        windows: tensor,
        labels,
        samples: metas,
        spec: spec.clone(),
        topology_id: grid.topology_id(),
        content_hash,
        balance_warning,
    })
}

/// Generate cases keeping full feature matrices (window ablation input).
pub fn generate_cases(base: &GridModel, spec: &DatasetSpec) -> Result<CaseSet, HarnessError> {
    spec.validate()?;
    let grid = if spec.disconnect.is_empty() {
        base.clone()
    } else {
        base.disconnect_lines(&spec.disconnect)?
    };
    let results = exec::map_indexed(spec.count, |i| run_case(&grid, spec, i));
    let mut cases = Vec::with_capacity(spec.count);
    for r in results {
        cases.push(r?);
    }
    let mut hasher = Sha256::new();
    for c in &cases {
        for v in c.features.iter() {
            hasher.update((*v as f32).to_le_bytes());
        }
        hasher.update([c.meta.label]);
    }
    let cache_hash = hex_digest(&hasher.finalize());
    Ok(CaseSet { cases, spec: spec.clone(), topology_id: grid.topology_id(), cache_hash })
}

/// Window a case set at one window length, producing a dataset.
pub fn window_cases(set: &CaseSet, window_s: f64) -> LabeledDataset {
    let spec = DatasetSpec { window_s, ..set.spec.clone() };
    let n_window = (window_s / spec.dt).round() as usize;
    let m = set.cases.first().map_or(0, |c| c.features.nrows());
    let mut tensor = Array4::zeros((set.cases.len(), 1, m, n_window));
    let mut labels = Vec::with_capacity(set.cases.len());
    let mut metas = Vec::with_capacity(set.cases.len());
    for (s, case) in set.cases.iter().enumerate() {
        let w = window_of(case, &spec);
        let mut slab = tensor.index_axis_mut(Axis(0), s);
        let mut plane = slab.index_axis_mut(Axis(0), 0);
        for r in 0..m {
            for c in 0..n_window {
                plane[(r, c)] = w[(r, c)];
            }
        }
        labels.push(case.meta.label);
        metas.push(case.meta.clone());
    }
    let content_hash = dataset_hash(&tensor, &labels, &metas);
    LabeledDataset {
        windows: tensor,
        labels,
        samples: metas,
        spec,
        topology_id: set.topology_id.clone(),
        content_hash,
        balance_warning: false,
    }
}

fn dataset_hash(windows: &Array4<f64>, labels: &[u8], metas: &[SampleMeta]) -> String {
    let mut hasher = Sha256::new();
    for v in windows.iter() {
        hasher.update((*v as f32).to_le_bytes());
    }
    hasher.update(labels);
    for m in metas {
        hasher.update(m.seed.to_le_bytes());
        hasher.update(m.load_scale.to_le_bytes());
        hasher.update((m.fault_bus as u64).to_le_bytes());
        hasher.update(m.fault_duration.to_le_bytes());
    }
    hex_digest(&hasher.finalize())
}

const DS_MAGIC: &[u8; 8] = b"STVSDS01";

/// Write `manifest.json` + `windows.bin` into a directory.
pub fn save_dataset(ds: &LabeledDataset, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
    let (count, _, m, n) = ds.windows.dim();
    let mut bytes = Vec::with_capacity(16 + 4 * count * m * n + count);
    bytes.extend_from_slice(DS_MAGIC);
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&(count as u32).to_le_bytes());
    bytes.extend_from_slice(&(m as u32).to_le_bytes());
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    for v in ds.windows.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    bytes.extend_from_slice(&ds.labels);
    atomic_write(&dir.join("windows.bin"), &bytes).map_err(|e| HarnessError::Io(e.to_string()))?;

    let (stable, unstable) = ds.class_counts();
    let manifest = serde_json::json!({
        "format_version": 1,
        "spec": ds.spec,
        "topology_id": ds.topology_id,
        "content_hash": ds.content_hash,
        "count": count,
        "window_rows": m,
        "window_cols": n,
        "class_counts": {"stable": stable, "unstable": unstable},
        "balance_warning": ds.balance_warning,
        "samples": ds.samples,
    });
    atomic_write(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap().as_bytes(),
    )
    .map_err(|e| HarnessError::Io(e.to_string()))
}

/// Read a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<LabeledDataset, HarnessError> {
    let manifest_text = std::fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    let manifest: serde_json::Value =
        serde_json::from_str(&manifest_text).map_err(|e| HarnessError::Io(e.to_string()))?;
    let spec: DatasetSpec = serde_json::from_value(manifest["spec"].clone())
        .map_err(|e| HarnessError::Io(format!("bad manifest: {e}")))?;
    let samples: Vec<SampleMeta> = serde_json::from_value(manifest["samples"].clone())
        .map_err(|e| HarnessError::Io(format!("bad manifest: {e}")))?;

    let bytes = std::fs::read(dir.join("windows.bin")).map_err(|e| HarnessError::Io(e.to_string()))?;
    let fail = |m: &str| HarnessError::Io(m.to_string());
    if bytes.len() < 24 || &bytes[..8] != DS_MAGIC {
        return Err(fail("not a dataset blob"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (count, m, n) = (u32_at(12), u32_at(16), u32_at(20));
    let need = 24 + 4 * count * m * n + count;
    if bytes.len() < need {
        return Err(fail("truncated dataset blob"));
    }
    let mut windows = Array4::zeros((count, 1, m, n));
    {
        let flat = windows.as_slice_mut().unwrap();
        for (k, item) in flat.iter_mut().enumerate() {
            *item = f32::from_le_bytes(bytes[24 + 4 * k..28 + 4 * k].try_into().unwrap()) as f64;
        }
    }
    let labels = bytes[24 + 4 * count * m * n..need].to_vec();
    let content_hash = dataset_hash(&windows, &labels, &samples);
    Ok(LabeledDataset {
        windows,
        labels,
        samples,
        spec,
        topology_id: manifest["topology_id"].as_str().unwrap_or_default().to_string(),
        content_hash,
        balance_warning: manifest["balance_warning"].as_bool().unwrap_or(false),
        })
}
