//! Post-disturbance voltage trajectories and their on-disk formats.

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::FaultSpec;
use crate::io::atomic_write;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub topology_id: String,
    pub load_scale: f64,
    pub fault: FaultSpec,
    /// Present when the trajectory came from a seeded dataset draw.
    pub seed: Option<u64>,
    /// True when the network solve diverged mid-run and the series was
    /// truncated; downstream labeling treats this as unstable.
    pub collapsed: bool,
    /// Sample index of fault inception (window anchor).
    pub fault_on_step: usize,
    /// Sample index of fault clearing.
    pub fault_clear_step: usize,
}

/// Per-bus voltage magnitude and angle series at a fixed step.
///
/// Sample-major layout: sample `k`, bus position `b` lives at
/// `k * bus_count + b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoltageTrajectory {
    pub dt: f64,
    pub bus_ids: Vec<usize>,
    magnitudes: Vec<f64>,
    angles: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl VoltageTrajectory {
    pub fn new(dt: f64, bus_ids: Vec<usize>, meta: TrajectoryMeta) -> Self {
        VoltageTrajectory { dt, bus_ids, magnitudes: Vec::new(), angles: Vec::new(), meta }
    }

    pub fn push_sample(&mut self, mags: &[f64], angs: &[f64]) {
        debug_assert_eq!(mags.len(), self.bus_ids.len());
        debug_assert_eq!(angs.len(), self.bus_ids.len());
        self.magnitudes.extend_from_slice(mags);
        self.angles.extend_from_slice(angs);
    }

    pub fn bus_count(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn sample_count(&self) -> usize {
        if self.bus_ids.is_empty() {
            0
        } else {
            self.magnitudes.len() / self.bus_ids.len()
        }
    }

    /// Covered time span `(samples - 1) * dt`.
    pub fn horizon(&self) -> f64 {
        self.sample_count().saturating_sub(1) as f64 * self.dt
    }

    pub fn magnitude(&self, sample: usize, bus_pos: usize) -> f64 {
        self.magnitudes[sample * self.bus_count() + bus_pos]
    }

    pub fn angle(&self, sample: usize, bus_pos: usize) -> f64 {
        self.angles[sample * self.bus_count() + bus_pos]
    }

    pub fn magnitudes_at(&self, sample: usize) -> &[f64] {
        let n = self.bus_count();
        &self.magnitudes[sample * n..(sample + 1) * n]
    }

    pub fn angles_at(&self, sample: usize) -> &[f64] {
        let n = self.bus_count();
        &self.angles[sample * n..(sample + 1) * n]
    }

    pub fn magnitudes_mut(&mut self) -> &mut [f64] {
        &mut self.magnitudes
    }

    pub fn angles_mut(&mut self) -> &mut [f64] {
        &mut self.angles
    }

    /// Total bus-seconds spent below `v_thresh` — a scalar severity
    /// indicator that grows with disturbance impact.
    pub fn below_threshold_bus_seconds(&self, v_thresh: f64) -> f64 {
        let below = self.magnitudes.iter().filter(|&&v| v < v_thresh).count();
        below as f64 * self.dt
    }

    /// Columnar binary export: header (magic, version, bus count, sample
    /// count, dt) then magnitudes and angles as little-endian f32, plus a
    /// JSON metadata sidecar at `<path>.json`.
    pub fn write_binary(&self, path: &Path) -> std::io::Result<()> {
        let mut bytes = Vec::with_capacity(32 + 8 * self.magnitudes.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(self.bus_count() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.sample_count() as u32).to_le_bytes());
        bytes.extend_from_slice(&self.dt.to_le_bytes());
        for &m in &self.magnitudes {
            bytes.extend_from_slice(&(m as f32).to_le_bytes());
        }
        for &a in &self.angles {
            bytes.extend_from_slice(&(a as f32).to_le_bytes());
        }
        atomic_write(path, &bytes)?;
        let sidecar = serde_json::json!({
            "bus_ids": self.bus_ids,
            "dt": self.dt,
            "samples": self.sample_count(),
            "meta": self.meta,
        });
        atomic_write(
            &path.with_extension(format!(
                "{}json",
                path.extension().map(|e| format!("{}.", e.to_string_lossy())).unwrap_or_default()
            )),
            serde_json::to_string_pretty(&sidecar).unwrap().as_bytes(),
        )
    }

    /// CSV debug export: one row per sample, `t` then per-bus magnitude
    /// then per-bus angle columns.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        out.push('t');
        for id in &self.bus_ids {
            out.push_str(&format!(",vm_{id}"));
        }
        for id in &self.bus_ids {
            out.push_str(&format!(",va_{id}"));
        }
        out.push('\n');
        for k in 0..self.sample_count() {
            out.push_str(&format!("{:.6}", k as f64 * self.dt));
            for b in 0..self.bus_count() {
                out.push_str(&format!(",{:.9}", self.magnitude(k, b)));
            }
            for b in 0..self.bus_count() {
                out.push_str(&format!(",{:.9}", self.angle(k, b)));
            }
            out.push('\n');
        }
        atomic_write(path, out.as_bytes())
    }
}

const MAGIC: &[u8; 8] = b"STVSTRJ1";

/// Read back a binary trajectory (f32 precision; metadata from sidecar when
/// present).
pub fn read_binary(path: &Path) -> std::io::Result<VoltageTrajectory> {
    let bytes = std::fs::read(path)?;
    let fail = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    if bytes.len() < 28 || &bytes[..8] != MAGIC {
        return Err(fail("not a trajectory file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u32_at(8);
    if version != 1 {
        return Err(fail("unsupported trajectory version"));
    }
    let nb = u32_at(12);
    let ns = u32_at(16);
    let dt = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let need = 28 + 2 * 4 * nb * ns;
    if bytes.len() < need {
        return Err(fail("truncated trajectory file"));
    }
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    let mut mags = Vec::with_capacity(nb * ns);
    let mut angs = Vec::with_capacity(nb * ns);
    for i in 0..nb * ns {
        mags.push(f32_at(28 + 4 * i));
    }
    for i in 0..nb * ns {
        angs.push(f32_at(28 + 4 * nb * ns + 4 * i));
    }
    let sidecar = path.with_extension(format!(
        "{}json",
        path.extension().map(|e| format!("{}.", e.to_string_lossy())).unwrap_or_default()
    ));
    let meta: TrajectoryMeta = match std::fs::read_to_string(&sidecar) {
        Ok(text) => {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| fail(&e.to_string()))?;
            serde_json::from_value(v["meta"].clone()).map_err(|e| fail(&e.to_string()))?
        }
        Err(_) => TrajectoryMeta {
            topology_id: String::new(),
            load_scale: f64::NAN,
            fault: FaultSpec { bus: 0, t_on: 0.0, duration: 0.0, admittance: 0.0 },
            seed: None,
            collapsed: false,
            fault_on_step: 0,
            fault_clear_step: 0,
        },
    };
    let bus_ids = (1..=nb).collect();
    let mut traj = VoltageTrajectory::new(dt, bus_ids, meta);
    traj.magnitudes = mags;
    traj.angles = angs;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_traj() -> VoltageTrajectory {
        let meta = TrajectoryMeta {
            topology_id: "t".into(),
            load_scale: 1.0,
            fault: FaultSpec { bus: 2, t_on: 0.1, duration: 0.2, admittance: 1e4 },
            seed: Some(7),
            collapsed: false,
            fault_on_step: 10,
            fault_clear_step: 30,
        };
        let mut t = VoltageTrajectory::new(0.01, vec![1, 2], meta);
        for k in 0..5 {
            t.push_sample(&[1.0 + k as f64 * 0.001, 0.9], &[0.0, -0.1]);
        }
        t
    }

    #[test]
    fn binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.bin");
        let t = sample_traj();
        t.write_binary(&p).unwrap();
        let back = read_binary(&p).unwrap();
        assert_eq!(back.sample_count(), 5);
        assert_eq!(back.bus_count(), 2);
        assert!((back.magnitude(3, 0) - 1.003).abs() < 1e-6);
        assert_eq!(back.meta.fault_on_step, 10);
    }

    #[test]
    fn bus_seconds_indicator() {
        let t = sample_traj();
        // bus 2 sits at 0.9 for 5 samples of 0.01 s
        let bs = t.below_threshold_bus_seconds(0.95);
        assert!((bs - 0.05).abs() < 1e-12);
    }
}
