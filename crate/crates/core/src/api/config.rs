//! JSON coupling configuration and its cross-reference validation.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acceleration::{Variant, DEFAULT_FILTER_EPS, DEFAULT_OMEGA};
use crate::error::{Error, Result};
use crate::mapping::MappingKind;

/// Waveform degrees accepted by the configuration.
pub const SUPPORTED_DEGREES: [usize; 5] = [0, 1, 2, 3, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub data: Vec<DataConfig>,
    pub meshes: Vec<MeshConfig>,
    pub participants: Vec<ParticipantConfig>,
    #[serde(default)]
    pub m2n: M2nConfig,
    pub coupling_scheme: SchemeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rank {
    Scalar,
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub name: String,
    #[serde(default = "default_rank")]
    pub rank: Rank,
    #[serde(default = "default_degree")]
    pub waveform_degree: usize,
}

fn default_rank() -> Rank {
    Rank::Scalar
}

fn default_degree() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub name: String,
    pub dimensions: usize,
    #[serde(default)]
    pub use_data: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantConfig {
    pub name: String,
    #[serde(default)]
    pub provide_meshes: Vec<String>,
    #[serde(default)]
    pub receive_meshes: Vec<ReceiveMesh>,
    #[serde(default)]
    pub write_data: Vec<DataRef>,
    #[serde(default)]
    pub read_data: Vec<DataRef>,
    #[serde(default)]
    pub mappings: Vec<MappingConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiveMesh {
    pub name: String,
    pub from: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataRef {
    pub name: String,
    pub mesh: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingMethod {
    NearestNeighbor,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    Consistent,
    Conservative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    pub kind: MappingMethod,
    pub direction: Direction,
    pub from: String,
    pub to: String,
    #[serde(default = "default_constraint")]
    pub constraint: Constraint,
}

fn default_constraint() -> Constraint {
    Constraint::Consistent
}

impl MappingConfig {
    pub fn mapping_kind(&self) -> MappingKind {
        match (self.kind, self.constraint) {
            (MappingMethod::Identity, _) => MappingKind::Identity,
            (MappingMethod::NearestNeighbor, Constraint::Consistent) => {
                MappingKind::NearestNeighborConsistent
            }
            (MappingMethod::NearestNeighbor, Constraint::Conservative) => {
                MappingKind::NearestNeighborConservative
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommMode {
    Tcp,
    #[default]
    Inprocess,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct M2nConfig {
    #[serde(default)]
    pub mode: CommMode,
    #[serde(default)]
    pub acceptor: Option<String>,
    #[serde(default)]
    pub connector: Option<String>,
    #[serde(default)]
    pub address: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    SerialExplicit,
    SerialImplicit,
    ParallelExplicit,
    ParallelImplicit,
}

impl SchemeKind {
    pub fn is_implicit(self) -> bool {
        matches!(self, SchemeKind::SerialImplicit | SchemeKind::ParallelImplicit)
    }

    pub fn is_serial(self) -> bool {
        matches!(self, SchemeKind::SerialExplicit | SchemeKind::SerialImplicit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub first: String,
    pub second: String,
    pub max_time_windows: usize,
    pub time_window_size: f64,
    /// Optional end time; the last window is shortened to end there.
    #[serde(default)]
    pub max_time: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    pub exchanges: Vec<ExchangeConfig>,
    #[serde(default)]
    pub convergence_measures: Vec<MeasureConfig>,
    #[serde(default)]
    pub acceleration: Option<AccelerationConfig>,
}

fn default_max_iterations() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeConfig {
    pub data: String,
    pub mesh: String,
    pub from: String,
    pub to: String,
    #[serde(default = "default_true")]
    pub substeps: bool,
    #[serde(default)]
    pub initialize: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub data: String,
    pub mesh: String,
    pub relative_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccelerationConfig {
    pub variant: Variant,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_filter_eps")]
    pub filter_eps: f64,
    pub data: Vec<DataRef>,
}

fn default_omega() -> f64 {
    DEFAULT_OMEGA
}

fn default_filter_eps() -> f64 {
    DEFAULT_FILTER_EPS
}

/// Parses and validates a configuration document.
pub fn parse_config(document: &str) -> Result<CouplingConfig> {
    let config: CouplingConfig = serde_json::from_str(document)
        .map_err(|e| Error::Validation(format!("malformed configuration: {e}")))?;
    config.validate()?;
    Ok(config)
}

impl CouplingConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        parse_config(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn data(&self, name: &str) -> Option<&DataConfig> {
        self.data.iter().find(|d| d.name == name)
    }

    pub fn mesh(&self, name: &str) -> Option<&MeshConfig> {
        self.meshes.iter().find(|m| m.name == name)
    }

    pub fn participant(&self, name: &str) -> Option<&ParticipantConfig> {
        self.participants.iter().find(|p| p.name == name)
    }

    /// Values per vertex of `data` on `mesh`.
    pub fn components(&self, data: &str, mesh: &str) -> usize {
        match (self.data(data), self.mesh(mesh)) {
            (Some(d), Some(m)) if d.rank == Rank::Vector => m.dimensions,
            _ => 1,
        }
    }

    /// Index of the exchange of `data` on `mesh`.
    pub fn exchange_index(&self, data: &str, mesh: &str) -> Option<usize> {
        self.coupling_scheme
            .exchanges
            .iter()
            .position(|e| e.data == data && e.mesh == mesh)
    }

    /// Checks every cross-reference and value range.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));

        let mut names = HashSet::new();
        for d in &self.data {
            if !names.insert(d.name.as_str()) {
                return fail(format!("data {} is defined twice", d.name));
            }
            if !SUPPORTED_DEGREES.contains(&d.waveform_degree) {
                return fail(format!(
                    "data {}: waveform_degree {} is not one of {SUPPORTED_DEGREES:?}",
                    d.name, d.waveform_degree
                ));
            }
        }

        let mut names = HashSet::new();
        for m in &self.meshes {
            if !names.insert(m.name.as_str()) {
                return fail(format!("mesh {} is defined twice", m.name));
            }
            if !(1..=3).contains(&m.dimensions) {
                return fail(format!(
                    "mesh {}: dimensions must be 1, 2 or 3, got {}",
                    m.name, m.dimensions
                ));
            }
            for d in &m.use_data {
                if self.data(d).is_none() {
                    return fail(format!("mesh {} uses undefined data {d}", m.name));
                }
            }
        }

        let mut names = HashSet::new();
        for p in &self.participants {
            if !names.insert(p.name.as_str()) {
                return fail(format!("participant {} is defined twice", p.name));
            }
            self.validate_participant(p)?;
        }

        self.validate_m2n()?;
        self.validate_scheme()
    }

    fn provider_of(&self, mesh: &str) -> Option<&ParticipantConfig> {
        self.participants
            .iter()
            .find(|p| p.provide_meshes.iter().any(|m| m == mesh))
    }

    fn validate_participant(&self, p: &ParticipantConfig) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        for m in &p.provide_meshes {
            if self.mesh(m).is_none() {
                return fail(format!("participant {} provides undefined mesh {m}", p.name));
            }
            let providers = self
                .participants
                .iter()
                .filter(|q| q.provide_meshes.contains(m))
                .count();
            if providers > 1 {
                return fail(format!("mesh {m} is provided by more than one participant"));
            }
        }
        for r in &p.receive_meshes {
            if self.mesh(&r.name).is_none() {
                return fail(format!("participant {} receives undefined mesh {}", p.name, r.name));
            }
            match self.provider_of(&r.name) {
                Some(q) if q.name == r.from && q.name != p.name => {}
                _ => {
                    return fail(format!(
                        "participant {} receives mesh {} from {}, which does not provide it",
                        p.name, r.name, r.from
                    ))
                }
            }
        }
        let provides = |mesh: &str| p.provide_meshes.iter().any(|m| m == mesh);
        let receives = |mesh: &str| p.receive_meshes.iter().any(|m| m.name == mesh);
        for (kind, list) in [("writes", &p.write_data), ("reads", &p.read_data)] {
            for d in list.iter() {
                if self.data(&d.name).is_none() {
                    return fail(format!("participant {} {kind} undefined data {}", p.name, d.name));
                }
                let Some(mesh) = self.mesh(&d.mesh) else {
                    return fail(format!(
                        "participant {} {kind} data {} on undefined mesh {}",
                        p.name, d.name, d.mesh
                    ));
                };
                if !provides(&d.mesh) {
                    return fail(format!(
                        "participant {} {kind} data {} on mesh {} it does not provide",
                        p.name, d.name, d.mesh
                    ));
                }
                if !mesh.use_data.contains(&d.name) {
                    return fail(format!("mesh {} does not use data {}", d.mesh, d.name));
                }
            }
        }
        let mut seen = HashSet::new();
        for d in p.write_data.iter().chain(&p.read_data) {
            if !seen.insert(d) {
                return fail(format!(
                    "participant {} accesses data {} on mesh {} twice",
                    p.name, d.name, d.mesh
                ));
            }
        }
        for m in &p.mappings {
            for mesh in [&m.from, &m.to] {
                if self.mesh(mesh).is_none() {
                    return fail(format!("participant {} maps undefined mesh {mesh}", p.name));
                }
            }
            let ok = match m.direction {
                Direction::Write => provides(&m.from) && receives(&m.to),
                Direction::Read => receives(&m.from) && provides(&m.to),
            };
            if !ok {
                return fail(format!(
                    "participant {}: {:?} mapping {} -> {} must map between a provided and a received mesh",
                    p.name, m.direction, m.from, m.to
                ));
            }
            if self.mesh(&m.from).map(|x| x.dimensions) != self.mesh(&m.to).map(|x| x.dimensions) {
                return fail(format!(
                    "participant {}: mapping {} -> {} joins meshes of different dimensions",
                    p.name, m.from, m.to
                ));
            }
        }
        Ok(())
    }

    fn validate_m2n(&self) -> Result<()> {
        if self.m2n.mode != CommMode::Tcp {
            return Ok(());
        }
        let s = &self.coupling_scheme;
        let (Some(acc), Some(con)) = (&self.m2n.acceptor, &self.m2n.connector) else {
            return Err(Error::Validation(
                "tcp communication needs both acceptor and connector".into(),
            ));
        };
        let pair = [s.first.as_str(), s.second.as_str()];
        if acc == con || !pair.contains(&acc.as_str()) || !pair.contains(&con.as_str()) {
            return Err(Error::Validation(format!(
                "acceptor {acc} and connector {con} must be the two coupled participants"
            )));
        }
        if self.m2n.address.as_deref().unwrap_or("").is_empty() {
            return Err(Error::Validation("tcp communication needs an address".into()));
        }
        Ok(())
    }

    /// The mesh a participant writes `data` on for an exchange on `mesh`.
    pub fn write_source(&self, p: &ParticipantConfig, data: &str, mesh: &str) -> Option<String> {
        p.write_data
            .iter()
            .filter(|d| d.name == data)
            .find(|d| {
                d.mesh == mesh
                    || p.mappings.iter().any(|m| {
                        m.direction == Direction::Write && m.from == d.mesh && m.to == mesh
                    })
            })
            .map(|d| d.mesh.clone())
    }

    /// The mesh a participant reads exchanged `data` on, given the exchange mesh.
    pub fn read_target(&self, p: &ParticipantConfig, data: &str, mesh: &str) -> Option<String> {
        p.read_data
            .iter()
            .filter(|d| d.name == data)
            .find(|d| {
                d.mesh == mesh
                    || p.mappings.iter().any(|m| {
                        m.direction == Direction::Read && m.from == mesh && m.to == d.mesh
                    })
            })
            .map(|d| d.mesh.clone())
    }

    fn validate_scheme(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        let s = &self.coupling_scheme;
        if s.first == s.second {
            return fail(format!("first and second participant are both {}", s.first));
        }
        let (Some(first), Some(second)) = (self.participant(&s.first), self.participant(&s.second))
        else {
            return fail(format!(
                "coupling scheme references undefined participant {} or {}",
                s.first, s.second
            ));
        };
        if !(s.time_window_size.is_finite() && s.time_window_size > 0.0) {
            return fail(format!("time_window_size must be positive, got {}", s.time_window_size));
        }
        if s.max_time_windows == 0 {
            return fail("max_time_windows must be at least 1".into());
        }
        if let Some(t) = s.max_time {
            if !(t.is_finite() && t > 0.0) {
                return fail(format!("max_time must be positive, got {t}"));
            }
        }
        if s.kind.is_implicit() {
            if s.max_iterations == 0 {
                return fail("implicit coupling needs max_iterations >= 1".into());
            }
            if s.convergence_measures.is_empty() {
                return fail("implicit coupling needs at least one convergence measure".into());
            }
        } else if !s.convergence_measures.is_empty() || s.acceleration.is_some() {
            return fail("explicit coupling takes no convergence measures or acceleration".into());
        }
        if s.exchanges.is_empty() {
            return fail("coupling scheme exchanges no data".into());
        }

        let mut seen = HashSet::new();
        for e in &s.exchanges {
            if !seen.insert((e.data.as_str(), e.mesh.as_str())) {
                return fail(format!("data {} on mesh {} is exchanged twice", e.data, e.mesh));
            }
            if self.data(&e.data).is_none() {
                return fail(format!("exchange references undefined data {}", e.data));
            }
            let Some(mesh) = self.mesh(&e.mesh) else {
                return fail(format!("exchange references undefined mesh {}", e.mesh));
            };
            if !mesh.use_data.contains(&e.data) {
                return fail(format!("exchange: mesh {} does not use data {}", e.mesh, e.data));
            }
            let (from, to) = match (e.from.as_str(), e.to.as_str()) {
                (f, t) if f == first.name && t == second.name => (first, second),
                (f, t) if f == second.name && t == first.name => (second, first),
                (f, t) => {
                    return fail(format!(
                        "exchange of {} must go between {} and {}, not {f} -> {t}",
                        e.data, first.name, second.name
                    ))
                }
            };
            let has_mesh = |p: &ParticipantConfig| {
                p.provide_meshes.contains(&e.mesh) || p.receive_meshes.iter().any(|r| r.name == e.mesh)
            };
            if !has_mesh(from) || !has_mesh(to) {
                return fail(format!(
                    "exchange mesh {} must be known to both {} and {}",
                    e.mesh, from.name, to.name
                ));
            }
            if self.write_source(from, &e.data, &e.mesh).is_none() {
                return fail(format!(
                    "participant {} does not write data {} for mesh {}",
                    from.name, e.data, e.mesh
                ));
            }
            if self.read_target(to, &e.data, &e.mesh).is_none() {
                return fail(format!(
                    "participant {} does not read data {} from mesh {}",
                    to.name, e.data, e.mesh
                ));
            }
        }

        for p in [first, second] {
            for d in &p.read_data {
                let covered = s.exchanges.iter().any(|e| {
                    e.to == p.name
                        && e.data == d.name
                        && self.read_target(p, &e.data, &e.mesh).as_deref() == Some(d.mesh.as_str())
                });
                if !covered {
                    return fail(format!(
                        "participant {} reads data {} on mesh {} but no exchange provides it",
                        p.name, d.name, d.mesh
                    ));
                }
            }
        }

        for m in &s.convergence_measures {
            if self.exchange_index(&m.data, &m.mesh).is_none() {
                return fail(format!(
                    "convergence measure on {} / {} does not match an exchange",
                    m.data, m.mesh
                ));
            }
            if !(m.relative_limit.is_finite() && m.relative_limit > 0.0) {
                return fail(format!(
                    "convergence limit for {} must be positive, got {}",
                    m.data, m.relative_limit
                ));
            }
        }

        if let Some(a) = &s.acceleration {
            if !(a.omega > 0.0 && a.omega <= 1.0) {
                return fail(format!("acceleration omega must lie in (0, 1], got {}", a.omega));
            }
            if !(a.filter_eps.is_finite() && a.filter_eps >= 0.0) {
                return fail(format!("acceleration filter_eps must be non-negative, got {}", a.filter_eps));
            }
            if a.data.is_empty() {
                return fail("acceleration lists no data".into());
            }
            for d in &a.data {
                let Some(i) = self.exchange_index(&d.name, &d.mesh) else {
                    return fail(format!(
                        "accelerated data {} / {} does not match an exchange",
                        d.name, d.mesh
                    ));
                };
                if s.kind.is_serial() && s.exchanges[i].from != s.second {
                    return fail(format!(
                        "serial coupling can only accelerate data sent by {}, not {}",
                        s.second, d.name
                    ));
                }
            }
        }
        Ok(())
    }
}
