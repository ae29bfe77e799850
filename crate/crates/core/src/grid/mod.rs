//! Power-network model: buses, branches, generators, composite loads.
//!
//! A [`GridModel`] is immutable after construction and validated against the
//! structural invariants (unique ids, resolvable references, connectivity,
//! positive reactances). Topology-change scenarios are produced with
//! [`GridModel::disconnect_lines`], which returns a new model and re-checks
//! connectivity.

mod format;
mod ne39;
mod susceptance;

pub use format::GridDocument;
pub use ne39::{ne39, scenario_lines, SCENARIO_COUNT};
pub use susceptance::SusceptancePartition;

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid file parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("grid file i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("{kind} references unknown bus {bus}")]
    UnknownBus { kind: &'static str, bus: usize },
    #[error("branch {from}-{to}: reactance must be strictly positive (got {value})")]
    NonPositiveReactance { from: usize, to: usize, value: f64 },
    #[error("generator at bus {bus}: inertia must be strictly positive (got {value})")]
    NonPositiveInertia { bus: usize, value: f64 },
    #[error("load at bus {bus}: motor fraction {value} outside [0, 1]")]
    MotorFractionRange { bus: usize, value: f64 },
    #[error("load at bus {bus}: unknown motor parameter set '{id}'")]
    UnknownMotorParams { bus: usize, id: String },
    #[error("bus {bus}: {kind} record on a bus of kind {actual}")]
    KindMismatch { bus: usize, kind: &'static str, actual: BusKind },
    #[error("bus {bus}: more than one {kind} record")]
    DuplicateRecord { bus: usize, kind: &'static str },
    #[error("generator bus {bus} has no generator record")]
    MissingGenerator { bus: usize },
    #[error("grid islanded: connected branches do not span all buses ({reachable} of {total} reachable)")]
    Islanded { reachable: usize, total: usize },
    #[error("unknown line {0}-{1}")]
    UnknownLine(usize, usize),
    #[error("line {0}-{1} is already disconnected")]
    AlreadyDisconnected(usize, usize),
    #[error("unknown builtin grid '{0}'")]
    UnknownBuiltin(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
}

impl std::fmt::Display for BusKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BusKind::Generator => write!(f, "generator"),
            BusKind::Load => write!(f, "load"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BranchStatus {
    #[default]
    Connected,
    Disconnected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Nominal voltage in p.u.; for generator buses this is the regulated
    /// (PV) set point used by the power flow.
    pub base_voltage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series reactance, p.u. on system base. Strictly positive.
    pub reactance: f64,
    /// Series resistance, p.u. Ignored by the susceptance partition; used
    /// only by the dynamic simulator's network solve.
    #[serde(default)]
    pub resistance: f64,
    #[serde(default)]
    pub status: BranchStatus,
}

impl Branch {
    pub fn is_connected(&self) -> bool {
        self.status == BranchStatus::Connected
    }

    /// Unordered endpoint pair, smaller id first.
    pub fn key(&self) -> (usize, usize) {
        if self.from <= self.to {
            (self.from, self.to)
        } else {
            (self.to, self.from)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// Scheduled active output, p.u. For the slack machine this is the
    /// dispatch target; the solved value absorbs the system imbalance.
    pub mech_power: f64,
    /// Inertia constant H, seconds on system base.
    pub inertia: f64,
    /// Damping coefficient, p.u. torque per p.u. speed deviation.
    pub damping: f64,
    /// Transient reactance x'_d, p.u. on system base.
    pub transient_reactance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    /// Active demand, p.u.
    pub active: f64,
    /// Reactive demand, p.u.
    pub reactive: f64,
    /// Share of active demand served by an induction motor, in [0, 1].
    #[serde(default = "default_motor_fraction")]
    pub motor_fraction: f64,
    /// Motor parameter-set id; see `dynamics::MotorParams::by_id`.
    #[serde(default = "default_motor_params")]
    pub motor_params: String,
}

fn default_motor_fraction() -> f64 {
    0.5
}

fn default_motor_params() -> String {
    "default".to_string()
}

/// Validated, immutable network model. Buses are kept sorted by id; all
/// per-bus vectors elsewhere in the crate follow that ordering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridModel {
    pub name: String,
    pub base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
    #[serde(skip)]
    bus_pos: HashMap<usize, usize>,
}

impl GridModel {
    pub(crate) fn from_parts(
        name: String,
        base_mva: f64,
        mut buses: Vec<Bus>,
        branches: Vec<Branch>,
        mut generators: Vec<Generator>,
        mut loads: Vec<Load>,
    ) -> Result<Self, GridError> {
        buses.sort_by_key(|b| b.id);
        generators.sort_by_key(|g| g.bus);
        loads.sort_by_key(|l| l.bus);
        let mut grid = GridModel {
            name,
            base_mva,
            buses,
            branches,
            generators,
            loads,
            bus_pos: HashMap::new(),
        };
        grid.rebuild_index()?;
        grid.validate()?;
        Ok(grid)
    }

    fn rebuild_index(&mut self) -> Result<(), GridError> {
        self.bus_pos.clear();
        for (pos, bus) in self.buses.iter().enumerate() {
            if self.bus_pos.insert(bus.id, pos).is_some() {
                return Err(GridError::DuplicateBus(bus.id));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), GridError> {
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !self.bus_pos.contains_key(&end) {
                    return Err(GridError::UnknownBus { kind: "branch", bus: end });
                }
            }
            if br.reactance <= 0.0 {
                return Err(GridError::NonPositiveReactance {
                    from: br.from,
                    to: br.to,
                    value: br.reactance,
                });
            }
        }
        let mut gen_buses = HashSet::new();
        for g in &self.generators {
            let Some(&pos) = self.bus_pos.get(&g.bus) else {
                return Err(GridError::UnknownBus { kind: "generator", bus: g.bus });
            };
            if self.buses[pos].kind != BusKind::Generator {
                return Err(GridError::KindMismatch {
                    bus: g.bus,
                    kind: "generator",
                    actual: self.buses[pos].kind,
                });
            }
            if g.inertia <= 0.0 {
                return Err(GridError::NonPositiveInertia { bus: g.bus, value: g.inertia });
            }
            if !gen_buses.insert(g.bus) {
                return Err(GridError::DuplicateRecord { bus: g.bus, kind: "generator" });
            }
        }
        for bus in &self.buses {
            if bus.kind == BusKind::Generator && !gen_buses.contains(&bus.id) {
                return Err(GridError::MissingGenerator { bus: bus.id });
            }
        }
        let mut load_buses = HashSet::new();
        for l in &self.loads {
            let Some(&pos) = self.bus_pos.get(&l.bus) else {
                return Err(GridError::UnknownBus { kind: "load", bus: l.bus });
            };
            if self.buses[pos].kind != BusKind::Load {
                return Err(GridError::KindMismatch {
                    bus: l.bus,
                    kind: "load",
                    actual: self.buses[pos].kind,
                });
            }
            if !(0.0..=1.0).contains(&l.motor_fraction) {
                return Err(GridError::MotorFractionRange { bus: l.bus, value: l.motor_fraction });
            }
            if !crate::dynamics::MotorParams::is_known_id(&l.motor_params) {
                return Err(GridError::UnknownMotorParams { bus: l.bus, id: l.motor_params.clone() });
            }
            if !load_buses.insert(l.bus) {
                return Err(GridError::DuplicateRecord { bus: l.bus, kind: "load" });
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let n = self.buses.len();
        if n == 0 {
            return Ok(());
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.is_connected()) {
            let f = self.bus_pos[&br.from];
            let t = self.bus_pos[&br.to];
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut reachable = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    reachable += 1;
                    stack.push(v);
                }
            }
        }
        if reachable != n {
            return Err(GridError::Islanded { reachable, total: n });
        }
        Ok(())
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Position of `bus_id` in the sorted bus ordering.
    pub fn bus_position(&self, bus_id: usize) -> Option<usize> {
        self.bus_pos.get(&bus_id).copied()
    }

    pub fn bus(&self, bus_id: usize) -> Option<&Bus> {
        self.bus_position(bus_id).map(|p| &self.buses[p])
    }

    /// Generator bus ids, ascending.
    pub fn generator_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Generator)
            .map(|b| b.id)
            .collect()
    }

    /// Load-kind bus ids, ascending (includes buses without a demand record).
    pub fn load_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Load)
            .map(|b| b.id)
            .collect()
    }

    /// The slack machine: highest-numbered generator bus.
    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Generator)
            .map(|b| b.id)
            .max()
            .expect("grid has no generator bus")
    }

    pub fn load_record(&self, bus_id: usize) -> Option<&Load> {
        self.loads.iter().find(|l| l.bus == bus_id)
    }

    /// Stable identity string for this topology: name plus the sorted list
    /// of disconnected lines, e.g. `ne39[2-3,5-8]`.
    pub fn topology_id(&self) -> String {
        let mut off: Vec<(usize, usize)> = self
            .branches
            .iter()
            .filter(|b| !b.is_connected())
            .map(|b| b.key())
            .collect();
        off.sort_unstable();
        if off.is_empty() {
            self.name.clone()
        } else {
            let parts: Vec<String> = off.iter().map(|(f, t)| format!("{f}-{t}")).collect();
            format!("{}[{}]", self.name, parts.join(","))
        }
    }

    /// Return a copy with the named lines disconnected. Lines are identified
    /// by their unordered bus pair and must currently be connected.
    /// Connectivity is re-validated; islanding the network is an error.
    pub fn disconnect_lines(&self, lines: &[(usize, usize)]) -> Result<GridModel, GridError> {
        let mut next = self.clone();
        for &(f, t) in lines {
            let key = if f <= t { (f, t) } else { (t, f) };
            let Some(branch) = next.branches.iter_mut().find(|b| b.key() == key) else {
                return Err(GridError::UnknownLine(f, t));
            };
            if !branch.is_connected() {
                return Err(GridError::AlreadyDisconnected(f, t));
            }
            branch.status = BranchStatus::Disconnected;
        }
        next.check_connected()?;
        Ok(next)
    }

    /// Assemble the susceptance partition for the current topology.
    pub fn susceptance_partition(&self) -> SusceptancePartition {
        SusceptancePartition::build(self)
    }

    /// Parse and validate a grid document from JSON text.
    pub fn from_json_str(text: &str) -> Result<GridModel, GridError> {
        let doc: GridDocument = serde_json::from_str(text)?;
        doc.into_model()
    }

    /// Load a grid from a file path.
    pub fn from_path(path: &std::path::Path) -> Result<GridModel, GridError> {
        let text = std::fs::read_to_string(path)?;
        GridModel::from_json_str(&text)
    }

    /// Resolve a builtin grid name (`ne39`).
    pub fn builtin(name: &str) -> Result<GridModel, GridError> {
        match name {
            "ne39" => Ok(ne39()),
            other => Err(GridError::UnknownBuiltin(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = r#"{
        "name": "toy2",
        "base_mva": 100.0,
        "buses": [
            {"id": 1, "kind": "generator", "base_voltage": 1.0},
            {"id": 2, "kind": "load", "base_voltage": 1.0}
        ],
        "branches": [{"from": 1, "to": 2, "reactance": 0.2}],
        "generators": [{"bus": 1, "mech_power": 0.5, "inertia": 5.0, "damping": 2.0, "transient_reactance": 0.1}],
        "loads": [{"bus": 2, "active": 0.5, "reactive": 0.1}]
    }"#;

    #[test]
    fn two_bus_file_is_valid() {
        let g = GridModel::from_json_str(TWO_BUS).unwrap();
        assert_eq!(g.bus_count(), 2);
        assert_eq!(g.generator_buses(), vec![1]);
        assert_eq!(g.load_buses(), vec![2]);
        assert_eq!(g.slack_bus(), 1);
        assert_eq!(g.topology_id(), "toy2");
    }

    #[test]
    fn embedded_ne39_counts() {
        let g = ne39();
        assert_eq!(g.bus_count(), 39);
        assert_eq!(g.generators().len(), 10);
        assert_eq!(g.loads().len(), 19);
        assert_eq!(g.generator_buses(), (30..=39).collect::<Vec<_>>());
        assert_eq!(g.load_buses().len(), 29);
        assert_eq!(g.slack_bus(), 39);
    }

    #[test]
    fn dangling_branch_reference_rejected() {
        let text = TWO_BUS.replace(r#"{"from": 1, "to": 2, "reactance": 0.2}"#,
            r#"{"from": 1, "to": 2, "reactance": 0.2}, {"from": 1, "to": 99, "reactance": 0.1}"#);
        let err = GridModel::from_json_str(&text).unwrap_err();
        assert!(matches!(err, GridError::UnknownBus { kind: "branch", bus: 99 }), "{err}");
    }

    #[test]
    fn non_positive_reactance_rejected() {
        let text = TWO_BUS.replace("\"reactance\": 0.2", "\"reactance\": 0.0");
        let err = GridModel::from_json_str(&text).unwrap_err();
        assert!(matches!(err, GridError::NonPositiveReactance { .. }), "{err}");
    }

    #[test]
    fn disconnect_known_line() {
        let g = ne39();
        let g1 = g.disconnect_lines(&[(2, 3)]).unwrap();
        assert_eq!(g1.topology_id(), "ne39[2-3]");
        // original untouched
        assert_eq!(g.topology_id(), "ne39");
        let g7 = g.disconnect_lines(&[(2, 3), (5, 8)]).unwrap();
        assert_eq!(g7.topology_id(), "ne39[2-3,5-8]");
    }

    #[test]
    fn disconnect_unknown_line_errors() {
        let err = ne39().disconnect_lines(&[(1, 99)]).unwrap_err();
        assert!(matches!(err, GridError::UnknownLine(1, 99)), "{err}");
    }

    #[test]
    fn islanding_disconnect_rejected() {
        // removing 19-20 leaves {20, 34} hanging off the rest
        let err = ne39().disconnect_lines(&[(19, 20)]).unwrap_err();
        assert!(matches!(err, GridError::Islanded { .. }), "{err}");
    }

    #[test]
    fn disconnect_composes() {
        let g = ne39();
        let ab = g.disconnect_lines(&[(2, 3), (5, 8)]).unwrap();
        let a_then_b = g
            .disconnect_lines(&[(2, 3)])
            .unwrap()
            .disconnect_lines(&[(5, 8)])
            .unwrap();
        assert_eq!(ab.topology_id(), a_then_b.topology_id());
        let pa = ab.susceptance_partition();
        let pb = a_then_b.susceptance_partition();
        assert_eq!(pa.b_ll, pb.b_ll);
        assert_eq!(pa.b_lg, pb.b_lg);
    }

    #[test]
    fn empty_disconnect_is_identity() {
        let g = ne39().disconnect_lines(&[(2, 3)]).unwrap();
        let same = g.disconnect_lines(&[]).unwrap();
        assert_eq!(g.topology_id(), same.topology_id());
        assert_eq!(
            g.susceptance_partition().b_ll,
            same.susceptance_partition().b_ll
        );
    }

    #[test]
    fn all_scenario_topologies_stay_connected() {
        let g = ne39();
        for s in 0..SCENARIO_COUNT {
            let lines = scenario_lines(s);
            let t = g.disconnect_lines(lines).unwrap();
            assert_eq!(t.bus_count(), 39);
        }
    }

    #[test]
    fn two_loads_bit_identical() {
        let a = ne39();
        let b = ne39();
        let pa = a.susceptance_partition();
        let pb = b.susceptance_partition();
        assert_eq!(pa.b_ll, pb.b_ll);
        assert_eq!(pa.b_lg, pb.b_lg);
        assert_eq!(pa.b_gg, pb.b_gg);
    }
}
