//! Network data model: buses, branches, devices, JSON interchange and
//! validation.
//!
//! Admittances are stored in per-unit internally. The JSON interchange
//! format carries them either in siemens (the default, converted on load
//! using the declared bases) or directly in per-unit when the file says
//! `"admittance_unit": "per_unit"`.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// One conductor phase of a three-phase system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Ordered, duplicate-free subset of {a, b, c}, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn empty() -> Self {
        PhaseSet(0)
    }

    pub fn single(p: Phase) -> Self {
        PhaseSet(1 << p.index())
    }

    /// Builds a set from a list; rejects duplicates so sloppy input files
    /// do not silently collapse.
    pub fn from_phases(phases: &[Phase]) -> Result<Self, NetModelError> {
        let mut mask = 0u8;
        for &p in phases {
            let bit = 1 << p.index();
            if mask & bit != 0 {
                return Err(NetModelError::DuplicatePhase(p));
            }
            mask |= bit;
        }
        Ok(PhaseSet(mask))
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Iterates in canonical a, b, c order.
    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Position of `p` within the ordered set, used to index phase matrices.
    pub fn local_index(self, p: Phase) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        Some((self.0 & ((1 << p.index()) - 1)).count_ones() as usize)
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Phase> = self.iter().collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<Phase>::deserialize(d)?;
        PhaseSet::from_phases(&v).map_err(D::Error::custom)
    }
}

/// Square complex matrix indexed by the local phase order of its owner.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl PhaseMatrix {
    pub fn zeros(dim: usize) -> Self {
        PhaseMatrix {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self, NetModelError> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(NetModelError::RaggedMatrix);
            }
            data.extend_from_slice(row);
        }
        Ok(PhaseMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.dim + c] = v;
    }

    pub fn scaled(&self, k: f64) -> PhaseMatrix {
        PhaseMatrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z * k).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PhaseMatrixFile {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for PhaseMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let re = (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c).re).collect())
            .collect();
        let im = (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c).im).collect())
            .collect();
        PhaseMatrixFile { re, im }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PhaseMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = PhaseMatrixFile::deserialize(d)?;
        let dim = f.re.len();
        if f.im.len() != dim {
            return Err(D::Error::custom("re and im differ in row count"));
        }
        let mut rows = Vec::with_capacity(dim);
        for (rr, ri) in f.re.iter().zip(&f.im) {
            if rr.len() != ri.len() {
                return Err(D::Error::custom("re and im differ in column count"));
            }
            rows.push(
                rr.iter()
                    .zip(ri)
                    .map(|(&a, &b)| Complex64::new(a, b))
                    .collect(),
            );
        }
        PhaseMatrix::from_rows(rows).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Reference,
    Ordinary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    #[serde(default = "default_bus_kind")]
    pub kind: BusKind,
    /// Phase-to-neutral voltage base in volts.
    pub base_voltage_v: f64,
}

fn default_bus_kind() -> BusKind {
    BusKind::Ordinary
}

/// Pi-model branch. Matrices are sized by the phase count shared by both
/// endpoint buses and stored in per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub y_series: PhaseMatrix,
    #[serde(default)]
    pub y_shunt_from: Option<PhaseMatrix>,
    #[serde(default)]
    pub y_shunt_to: Option<PhaseMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Load,
    Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connection {
    Wye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: String,
    pub bus: String,
    pub phases: PhaseSet,
    pub kind: DeviceKind,
    #[serde(default = "default_connection")]
    pub connection: Connection,
}

fn default_connection() -> Connection {
    Connection::Wye
}

#[derive(Debug, Error)]
pub enum NetModelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate phase {0} in phase list")]
    DuplicatePhase(Phase),
    #[error("matrix rows have unequal lengths")]
    RaggedMatrix,
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("branch {branch} references unknown bus {bus}")]
    UnknownBusInBranch { branch: String, bus: String },
    #[error("device {device} references unknown bus {bus}")]
    UnknownBusInDevice { device: String, bus: String },
    #[error("network validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("network has no reference bus")]
    NoReferenceBus,
    #[error("more than one reference bus: {0:?}")]
    MultipleReferenceBuses(Vec<String>),
    #[error("bus {0} is not reachable from the reference bus")]
    Unreachable(String),
    #[error("bus {0} has an empty phase set")]
    EmptyBusPhases(String),
    #[error("device {0} has an empty phase set")]
    EmptyDevicePhases(String),
    #[error("device {device} uses phase {phase} missing from bus {bus}")]
    DevicePhaseNotOnBus {
        device: String,
        phase: Phase,
        bus: String,
    },
    #[error("branch {branch} matrix {which} is {got}x{got}, expected {expected}x{expected}")]
    BranchDimensionMismatch {
        branch: String,
        which: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("branch {0} connects a bus to itself")]
    SelfLoop(String),
    #[error("bus {0} has a non-positive voltage base")]
    NonPositiveVoltageBase(String),
    #[error("power base is not positive")]
    NonPositivePowerBase,
}

/// Immutable network with id and phase index maps built up front.
#[derive(Debug, Clone)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub devices: Vec<Device>,
    /// Per-phase power base in VA.
    pub s_base_va: f64,
    bus_index: HashMap<String, usize>,
    device_index: HashMap<String, usize>,
    branch_ends: Vec<(usize, usize)>,
    bus_phases: Vec<(usize, Phase)>,
    bus_phase_lookup: HashMap<(usize, Phase), usize>,
    device_phases: Vec<(usize, Phase)>,
    device_phase_lookup: HashMap<(usize, Phase), usize>,
    reference_bus: Option<usize>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.buses == other.buses
            && self.branches == other.branches
            && self.devices == other.devices
            && self.s_base_va == other.s_base_va
    }
}

impl Network {
    /// Builds index maps. Fails only where indexing is impossible
    /// (duplicate ids, dangling bus references); semantic checks live in
    /// [`Network::validate`].
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        devices: Vec<Device>,
        s_base_va: f64,
    ) -> Result<Self, NetModelError> {
        let mut bus_index = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id.clone(), i).is_some() {
                return Err(NetModelError::DuplicateId {
                    kind: "bus",
                    id: b.id.clone(),
                });
            }
        }
        let mut seen_branch = HashMap::new();
        let mut branch_ends = Vec::with_capacity(branches.len());
        for br in &branches {
            if seen_branch.insert(br.id.clone(), ()).is_some() {
                return Err(NetModelError::DuplicateId {
                    kind: "branch",
                    id: br.id.clone(),
                });
            }
            let f = *bus_index
                .get(&br.from_bus)
                .ok_or_else(|| NetModelError::UnknownBusInBranch {
                    branch: br.id.clone(),
                    bus: br.from_bus.clone(),
                })?;
            let t = *bus_index
                .get(&br.to_bus)
                .ok_or_else(|| NetModelError::UnknownBusInBranch {
                    branch: br.id.clone(),
                    bus: br.to_bus.clone(),
                })?;
            branch_ends.push((f, t));
        }
        let mut device_index = HashMap::new();
        for (i, d) in devices.iter().enumerate() {
            if device_index.insert(d.id.clone(), i).is_some() {
                return Err(NetModelError::DuplicateId {
                    kind: "device",
                    id: d.id.clone(),
                });
            }
            if !bus_index.contains_key(&d.bus) {
                return Err(NetModelError::UnknownBusInDevice {
                    device: d.id.clone(),
                    bus: d.bus.clone(),
                });
            }
        }

        let mut bus_phases = Vec::new();
        let mut bus_phase_lookup = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            for p in b.phases.iter() {
                bus_phase_lookup.insert((i, p), bus_phases.len());
                bus_phases.push((i, p));
            }
        }
        let mut device_phases = Vec::new();
        let mut device_phase_lookup = HashMap::new();
        for (i, d) in devices.iter().enumerate() {
            for p in d.phases.iter() {
                device_phase_lookup.insert((i, p), device_phases.len());
                device_phases.push((i, p));
            }
        }
        let reference_bus = buses.iter().position(|b| b.kind == BusKind::Reference);

        Ok(Network {
            buses,
            branches,
            devices,
            s_base_va,
            bus_index,
            device_index,
            branch_ends,
            bus_phases,
            bus_phase_lookup,
            device_phases,
            device_phase_lookup,
            reference_bus,
        })
    }

    pub fn bus_idx(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    pub fn device_idx(&self, id: &str) -> Option<usize> {
        self.device_index.get(id).copied()
    }

    pub fn branch_end_indices(&self, branch: usize) -> (usize, usize) {
        self.branch_ends[branch]
    }

    pub fn reference_bus(&self) -> Option<usize> {
        self.reference_bus
    }

    /// Enumeration of (bus index, phase) pairs in bus then phase order.
    pub fn bus_phases(&self) -> &[(usize, Phase)] {
        &self.bus_phases
    }

    pub fn bus_phase_idx(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.bus_phase_lookup.get(&(bus, phase)).copied()
    }

    pub fn device_phases(&self) -> &[(usize, Phase)] {
        &self.device_phases
    }

    pub fn device_phase_idx(&self, device: usize, phase: Phase) -> Option<usize> {
        self.device_phase_lookup.get(&(device, phase)).copied()
    }

    /// Phases a branch actually couples: the intersection of its endpoint
    /// phase sets.
    pub fn branch_phases(&self, branch: usize) -> PhaseSet {
        let (f, t) = self.branch_ends[branch];
        self.buses[f].phases.intersection(self.buses[t].phases)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.s_base_va <= 0.0 {
            out.push(Violation::NonPositivePowerBase);
        }
        let refs: Vec<&Bus> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Reference)
            .collect();
        match refs.len() {
            0 => out.push(Violation::NoReferenceBus),
            1 => {}
            _ => out.push(Violation::MultipleReferenceBuses(
                refs.iter().map(|b| b.id.clone()).collect(),
            )),
        }
        for b in &self.buses {
            if b.phases.is_empty() {
                out.push(Violation::EmptyBusPhases(b.id.clone()));
            }
            if b.base_voltage_v <= 0.0 {
                out.push(Violation::NonPositiveVoltageBase(b.id.clone()));
            }
        }
        for d in &self.devices {
            if d.phases.is_empty() {
                out.push(Violation::EmptyDevicePhases(d.id.clone()));
            }
            let bus = &self.buses[self.bus_index[&d.bus]];
            for p in d.phases.iter() {
                if !bus.phases.contains(p) {
                    out.push(Violation::DevicePhaseNotOnBus {
                        device: d.id.clone(),
                        phase: p,
                        bus: bus.id.clone(),
                    });
                }
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            let (f, t) = self.branch_ends[k];
            if f == t {
                out.push(Violation::SelfLoop(br.id.clone()));
            }
            let expected = self.branch_phases(k).len();
            let mats: [(&'static str, Option<&PhaseMatrix>); 3] = [
                ("y_series", Some(&br.y_series)),
                ("y_shunt_from", br.y_shunt_from.as_ref()),
                ("y_shunt_to", br.y_shunt_to.as_ref()),
            ];
            for (which, m) in mats {
                if let Some(m) = m {
                    if m.dim() != expected {
                        out.push(Violation::BranchDimensionMismatch {
                            branch: br.id.clone(),
                            which,
                            expected,
                            got: m.dim(),
                        });
                    }
                }
            }
        }
        // Connectivity from the reference bus over branches.
        if let Some(r) = self.reference_bus {
            let n = self.buses.len();
            let mut adj = vec![Vec::new(); n];
            for &(f, t) in &self.branch_ends {
                if f != t {
                    adj[f].push(t);
                    adj[t].push(f);
                }
            }
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([r]);
            seen[r] = true;
            while let Some(i) = queue.pop_front() {
                for &j in &adj[i] {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            for (i, b) in self.buses.iter().enumerate() {
                if !seen[i] {
                    out.push(Violation::Unreachable(b.id.clone()));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum AdmittanceUnit {
    #[default]
    Siemens,
    PerUnit,
}

#[derive(Serialize, Deserialize)]
struct BasesFile {
    s_base_va: f64,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    bases: BasesFile,
    #[serde(default)]
    admittance_unit: AdmittanceUnit,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    devices: Vec<Device>,
}

/// Parses, converts to per-unit, and validates a network from JSON text.
pub fn parse_network(text: &str) -> Result<Network, NetModelError> {
    let file: NetworkFile = serde_json::from_str(text)?;
    let NetworkFile {
        bases,
        admittance_unit,
        buses,
        mut branches,
        devices,
    } = file;
    if admittance_unit == AdmittanceUnit::Siemens {
        let bus_base: HashMap<&str, f64> = buses
            .iter()
            .map(|b| (b.id.as_str(), b.base_voltage_v))
            .collect();
        for br in &mut branches {
            let vb = *bus_base.get(br.from_bus.as_str()).ok_or_else(|| {
                NetModelError::UnknownBusInBranch {
                    branch: br.id.clone(),
                    bus: br.from_bus.clone(),
                }
            })?;
            let z_base = vb * vb / bases.s_base_va;
            br.y_series = br.y_series.scaled(z_base);
            br.y_shunt_from = br.y_shunt_from.as_ref().map(|m| m.scaled(z_base));
            br.y_shunt_to = br.y_shunt_to.as_ref().map(|m| m.scaled(z_base));
        }
    }
    let network = Network::new(buses, branches, devices, bases.s_base_va)?;
    let violations = network.validate();
    if !violations.is_empty() {
        return Err(NetModelError::Validation(violations));
    }
    Ok(network)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network, NetModelError> {
    parse_network(&std::fs::read_to_string(path)?)
}

/// Serializes in the interchange format with per-unit admittances, so a
/// serialize/parse round trip reproduces the network exactly.
pub fn serialize_network(network: &Network) -> Result<String, NetModelError> {
    let file = NetworkFile {
        bases: BasesFile {
            s_base_va: network.s_base_va,
        },
        admittance_unit: AdmittanceUnit::PerUnit,
        buses: network.buses.clone(),
        branches: network.branches.clone(),
        devices: network.devices.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}
