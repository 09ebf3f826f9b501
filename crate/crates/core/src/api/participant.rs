use std::collections::HashMap;

use crate::api::config::{CommMode, CouplingConfig, Direction, ParticipantConfig};
use crate::comm::{self, Channel, Message, Tag, TcpChannel, PROTOCOL_VERSION};
use crate::cplscheme::{
    AccelerationSpec, CouplingScheme, ExchangeSpec, MeasureSpec, Role, SchemeParams, Stats,
    WINDOW_EPS,
};
use crate::error::{config, state, validation, Error, Result};
use crate::mapping::{MappingKind, MappingPlan, Mesh};
use crate::storage::{same_time, Sample, Storage};
use crate::waveform::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lifecycle {
    Constructed,
    Initialized,
    Finalized,
}

struct WriteSlot {
    data: String,
    mesh: String,
    components: usize,
    degree: usize,
    initialize: bool,
    storage: Storage,
    /// Values written during the step in flight.
    pending: Option<Vec<f64>>,
}

struct ReadSlot {
    data: String,
    mesh: String,
    components: usize,
    storage: Storage,
    waveform: Option<Waveform>,
}

impl ReadSlot {
    fn waveform(&mut self) -> Result<&Waveform> {
        if self.waveform.is_none() {
            self.waveform = Some(Waveform::build(&self.storage, self.storage.degree())?);
        }
        Ok(self.waveform.as_ref().expect("just built"))
    }
}

struct OutLink {
    exchange: usize,
    slot: usize,
    plan: MappingPlan,
}

struct InLink {
    exchange: usize,
    slot: usize,
    plan: MappingPlan,
}

/// One coupled solver's handle on the coupling.
///
/// Call order: [`set_mesh_vertices`](Self::set_mesh_vertices), optional
/// initial [`write_data`](Self::write_data), [`initialize`](Self::initialize),
/// then read, write and [`advance`](Self::advance) until
/// [`is_coupling_ongoing`](Self::is_coupling_ongoing) turns false, then
/// [`finalize`](Self::finalize).
pub struct Participant {
    name: String,
    peer: String,
    config: CouplingConfig,
    me: ParticipantConfig,
    role: Role,
    channel: Option<Box<dyn Channel>>,
    meshes: HashMap<String, Mesh>,
    write_slots: Vec<WriteSlot>,
    read_slots: Vec<ReadSlot>,
    out_links: Vec<OutLink>,
    in_links: Vec<InLink>,
    scheme: Option<CouplingScheme>,
    time: f64,
    lifecycle: Lifecycle,
    pending_write_checkpoint: bool,
    pending_read_checkpoint: bool,
    window_complete: bool,
}

impl Participant {
    /// A participant that opens its TCP channel from the `m2n` block during
    /// [`initialize`](Self::initialize).
    pub fn new(name: &str, config: CouplingConfig) -> Result<Self> {
        Self::build(name, config, None)
    }

    /// A participant talking over an existing channel.
    pub fn with_channel(name: &str, config: CouplingConfig, channel: Box<dyn Channel>) -> Result<Self> {
        Self::build(name, config, Some(channel))
    }

    fn build(name: &str, config: CouplingConfig, channel: Option<Box<dyn Channel>>) -> Result<Self> {
        config.validate()?;
        let s = &config.coupling_scheme;
        let (role, peer) = if s.first == name {
            (Role::First, s.second.clone())
        } else if s.second == name {
            (Role::Second, s.first.clone())
        } else {
            return Err(config_error(format!(
                "participant {name} is not part of the coupling scheme"
            )));
        };
        let me = config
            .participant(name)
            .cloned()
            .ok_or_else(|| config_error(format!("participant {name} is not configured")))?;
        let write_slots = me
            .write_data
            .iter()
            .map(|d| {
                let degree = config.data(&d.name).map_or(1, |c| c.waveform_degree);
                let initialize = s.exchanges.iter().any(|e| {
                    e.from == name
                        && e.data == d.name
                        && e.initialize
                        && config.write_source(&me, &e.data, &e.mesh).as_deref() == Some(d.mesh.as_str())
                });
                WriteSlot {
                    data: d.name.clone(),
                    mesh: d.mesh.clone(),
                    components: config.components(&d.name, &d.mesh),
                    degree,
                    initialize,
                    storage: Storage::new(degree),
                    pending: None,
                }
            })
            .collect();
        let read_slots = me
            .read_data
            .iter()
            .map(|d| ReadSlot {
                data: d.name.clone(),
                mesh: d.mesh.clone(),
                components: config.components(&d.name, &d.mesh),
                storage: Storage::new(config.data(&d.name).map_or(1, |c| c.waveform_degree)),
                waveform: None,
            })
            .collect();
        Ok(Self {
            name: name.to_owned(),
            peer,
            me,
            config,
            role,
            channel,
            meshes: HashMap::new(),
            write_slots,
            read_slots,
            out_links: Vec::new(),
            in_links: Vec::new(),
            scheme: None,
            time: 0.0,
            lifecycle: Lifecycle::Constructed,
            pending_write_checkpoint: false,
            pending_read_checkpoint: false,
            window_complete: false,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Registers the vertices of a provided mesh; `coords` is row-major.
    pub fn set_mesh_vertices(&mut self, mesh: &str, coords: &[f64]) -> Result<Vec<usize>> {
        if self.lifecycle != Lifecycle::Constructed {
            return Err(state(format!("cannot set vertices of {mesh} after initialize")));
        }
        if !self.me.provide_meshes.iter().any(|m| m == mesh) {
            return Err(state(format!("participant {} does not provide mesh {mesh}", self.name)));
        }
        if self.meshes.contains_key(mesh) {
            return Err(state(format!("vertices of mesh {mesh} are already set")));
        }
        let dims = self.config.mesh(mesh).map_or(1, |m| m.dimensions);
        let m = Mesh::new(mesh, dims, coords.to_vec())?;
        let n = m.vertex_count();
        self.meshes.insert(mesh.to_owned(), m);
        Ok((0..n).collect())
    }

    /// True iff some written field must provide data before `initialize`.
    pub fn requires_initial_data(&self) -> bool {
        self.write_slots.iter().any(|w| w.initialize)
    }

    /// Buffers values for the step in flight. The last write before
    /// [`advance`](Self::advance) wins.
    pub fn write_data(&mut self, mesh: &str, data: &str, vertex_ids: &[usize], values: &[f64]) -> Result<()> {
        if self.lifecycle == Lifecycle::Finalized {
            return Err(state("participant is finalized"));
        }
        let Some(idx) = self.write_slots.iter().position(|w| w.mesh == mesh && w.data == data) else {
            if self.read_slots.iter().any(|r| r.mesh == mesh && r.data == data) {
                return Err(config_error(format!(
                    "data {data} on mesh {mesh} is read-only for {}",
                    self.name
                )));
            }
            return Err(config_error(format!("{} does not write data {data} on mesh {mesh}", self.name)));
        };
        let vertex_count = self
            .meshes
            .get(mesh)
            .map(Mesh::vertex_count)
            .ok_or_else(|| state(format!("mesh {mesh} has no vertices yet")))?;
        let slot = &mut self.write_slots[idx];
        if self.lifecycle == Lifecycle::Constructed && !slot.initialize {
            return Err(state(format!(
                "data {data} is not initialized, write it after initialize"
            )));
        }
        let c = slot.components;
        if values.len() != vertex_ids.len() * c {
            return Err(validation(format!(
                "{} values for {} vertices of {c}-component data {data}",
                values.len(),
                vertex_ids.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(validation(format!("non-finite value {v} written to {data}")));
        }
        if let Some(id) = vertex_ids.iter().find(|&&id| id >= vertex_count) {
            return Err(validation(format!("vertex id {id} out of range for mesh {mesh}")));
        }
        let buf = slot.pending.get_or_insert_with(|| match slot.storage.last() {
            Some(st) => st.sample.values().to_vec(),
            None => vec![0.0; vertex_count * c],
        });
        for (k, &id) in vertex_ids.iter().enumerate() {
            buf[id * c..(id + 1) * c].copy_from_slice(&values[k * c..(k + 1) * c]);
        }
        Ok(())
    }

    /// Evaluates the read waveform at `relative_t` past the current time.
    pub fn read_data(&mut self, mesh: &str, data: &str, vertex_ids: &[usize], relative_t: f64) -> Result<Vec<f64>> {
        self.require_initialized()?;
        let remaining = self.get_max_time_step_size()?;
        let tol = WINDOW_EPS * self.window_size();
        if !relative_t.is_finite() || relative_t < -tol || relative_t > remaining + tol {
            return Err(Error::Domain {
                t: relative_t,
                start: 0.0,
                end: remaining,
            });
        }
        let t = self.time + relative_t.clamp(0.0, remaining);
        let slot = self
            .read_slots
            .iter_mut()
            .find(|r| r.mesh == mesh && r.data == data)
            .ok_or_else(|| config_error(format!("{} does not read data {data} on mesh {mesh}", self.name)))?;
        let c = slot.components;
        let n = slot.storage.sample_len().unwrap_or(0) / c.max(1);
        if let Some(id) = vertex_ids.iter().find(|&&id| id >= n) {
            return Err(validation(format!("vertex id {id} out of range for mesh {mesh}")));
        }
        let full = slot.waveform()?.evaluate(t)?;
        let values = full.values();
        let mut out = Vec::with_capacity(vertex_ids.len() * c);
        for &id in vertex_ids {
            out.extend_from_slice(&values[id * c..(id + 1) * c]);
        }
        Ok(out)
    }

    /// Connects to the peer, exchanges meshes and initial data.
    pub fn initialize(&mut self) -> Result<()> {
        if self.lifecycle != Lifecycle::Constructed {
            return Err(state("initialize called twice"));
        }
        for m in &self.me.provide_meshes {
            if !self.meshes.contains_key(m) {
                return Err(config_error(format!("mesh {m} has no vertices")));
            }
        }
        for w in &self.write_slots {
            if w.initialize && w.pending.is_none() {
                return Err(config_error(format!(
                    "data {} is initialized but no initial data was written",
                    w.data
                )));
            }
        }
        let mut channel = match self.channel.take() {
            Some(ch) => ch,
            None => self.open_channel()?,
        };
        let peer = comm::handshake(channel.as_mut(), &self.name, PROTOCOL_VERSION)?;
        if peer != self.peer {
            return Err(Error::Handshake(format!(
                "expected peer {}, connected to {peer}",
                self.peer
            )));
        }
        self.exchange_meshes(channel.as_mut())?;
        self.link()?;

        let mut scheme = CouplingScheme::new(self.scheme_params()?)?;
        for w in &mut self.write_slots {
            let n = self.meshes[&w.mesh].vertex_count() * w.components;
            let initial = w.pending.take().unwrap_or_else(|| vec![0.0; n]);
            w.storage = Storage::with_initial(0.0, Sample::new(initial)?, w.degree)?;
        }
        for l in &self.out_links {
            let w = &self.write_slots[l.slot];
            l.plan
                .map_storage(&w.storage, scheme.storage_mut(l.exchange), false, w.components)?;
        }
        let (in_links, read_slots) = (&self.in_links, &mut self.read_slots);
        scheme.initialize(channel.as_mut(), &mut |e, st| {
            deliver(in_links, read_slots, e, st)
        })?;
        if let Some(r) = self.read_slots.iter().find(|r| r.storage.is_empty()) {
            return Err(state(format!("no initial values for read data {}", r.data)));
        }
        self.pending_write_checkpoint = scheme.kind().is_implicit();
        self.scheme = Some(scheme);
        self.channel = Some(channel);
        self.time = 0.0;
        self.lifecycle = Lifecycle::Initialized;
        Ok(())
    }

    fn open_channel(&self) -> Result<Box<dyn Channel>> {
        let m2n = &self.config.m2n;
        if m2n.mode != CommMode::Tcp {
            return Err(config_error(
                "in-process communication needs a channel, use Participant::with_channel",
            ));
        }
        let address = m2n.address.clone().unwrap_or_default();
        if m2n.acceptor.as_deref() == Some(self.name.as_str()) {
            Ok(Box::new(TcpChannel::accept(&address)?))
        } else {
            Ok(Box::new(TcpChannel::connect(&address)?))
        }
    }

    fn exchange_meshes(&mut self, channel: &mut dyn Channel) -> Result<()> {
        let peer_cfg = self
            .config
            .participant(&self.peer)
            .cloned()
            .ok_or_else(|| config_error(format!("participant {} is not configured", self.peer)))?;
        let to_send: Vec<String> = peer_cfg
            .receive_meshes
            .iter()
            .filter(|r| r.from == self.name)
            .map(|r| r.name.clone())
            .collect();
        let to_receive: Vec<String> = self
            .me
            .receive_meshes
            .iter()
            .filter(|r| r.from == self.peer)
            .map(|r| r.name.clone())
            .collect();
        let send = |meshes: &HashMap<String, Mesh>, ch: &mut dyn Channel| -> Result<()> {
            for name in &to_send {
                ch.send(&Message::mesh(&meshes[name]))?;
            }
            Ok(())
        };
        if self.role == Role::First {
            send(&self.meshes, channel)?;
        }
        for name in &to_receive {
            let msg = channel.expect(Tag::Mesh)?;
            let mesh = comm::wire::decode_mesh(&msg.payload)?;
            let dims = self.config.mesh(name).map(|m| m.dimensions);
            if mesh.name() != name || Some(mesh.dimensions()) != dims {
                return Err(Error::Protocol(format!(
                    "expected mesh {name}, received {} ({}D)",
                    mesh.name(),
                    mesh.dimensions()
                )));
            }
            self.meshes.insert(name.clone(), mesh);
        }
        if self.role == Role::Second {
            send(&self.meshes, channel)?;
        }
        Ok(())
    }

    fn plan(&self, direction: Direction, from: &str, to: &str) -> Result<MappingPlan> {
        let kind = if from == to {
            MappingKind::Identity
        } else {
            self.me
                .mappings
                .iter()
                .find(|m| m.direction == direction && m.from == from && m.to == to)
                .map(|m| m.mapping_kind())
                .ok_or_else(|| config_error(format!("no {direction:?} mapping from {from} to {to}")))?
        };
        MappingPlan::build(kind, &self.meshes[from], &self.meshes[to])
    }

    fn link(&mut self) -> Result<()> {
        let exchanges = self.config.coupling_scheme.exchanges.clone();
        for (i, e) in exchanges.iter().enumerate() {
            if e.from == self.name {
                let src = self
                    .config
                    .write_source(&self.me, &e.data, &e.mesh)
                    .ok_or_else(|| config_error(format!("{} does not write {}", self.name, e.data)))?;
                let slot = self
                    .write_slots
                    .iter()
                    .position(|w| w.data == e.data && w.mesh == src)
                    .expect("validated write slot");
                let plan = self.plan(Direction::Write, &src, &e.mesh)?;
                self.out_links.push(OutLink { exchange: i, slot, plan });
            } else if e.to == self.name {
                let dst = self
                    .config
                    .read_target(&self.me, &e.data, &e.mesh)
                    .ok_or_else(|| config_error(format!("{} does not read {}", self.name, e.data)))?;
                let slot = self
                    .read_slots
                    .iter()
                    .position(|r| r.data == e.data && r.mesh == dst)
                    .expect("validated read slot");
                let plan = self.plan(Direction::Read, &e.mesh, &dst)?;
                self.in_links.push(InLink { exchange: i, slot, plan });
            }
        }
        Ok(())
    }

    fn scheme_params(&self) -> Result<SchemeParams> {
        let s = &self.config.coupling_scheme;
        let exchanges = s
            .exchanges
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let n = self
                    .meshes
                    .get(&e.mesh)
                    .map(Mesh::vertex_count)
                    .ok_or_else(|| state(format!("mesh {} is unknown to {}", e.mesh, self.name)))?;
                Ok(ExchangeSpec {
                    data_id: i as u32,
                    outgoing: e.from == self.name,
                    substeps: e.substeps,
                    initialize: e.initialize,
                    degree: self.config.data(&e.data).map_or(1, |d| d.waveform_degree),
                    sample_len: n * self.config.components(&e.data, &e.mesh),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let index = |data: &str, mesh: &str| {
            self.config
                .exchange_index(data, mesh)
                .ok_or_else(|| config_error(format!("no exchange of {data} on {mesh}")))
        };
        let measures = s
            .convergence_measures
            .iter()
            .map(|m| {
                Ok(MeasureSpec {
                    exchange: index(&m.data, &m.mesh)?,
                    limit: m.relative_limit,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let acceleration = match &s.acceleration {
            Some(a) => Some(AccelerationSpec {
                variant: a.variant,
                omega: a.omega,
                filter_eps: a.filter_eps,
                exchanges: a
                    .data
                    .iter()
                    .map(|d| index(&d.name, &d.mesh))
                    .collect::<Result<Vec<_>>>()?,
            }),
            None => None,
        };
        Ok(SchemeParams {
            kind: s.kind,
            role: self.role,
            time_window_size: s.time_window_size,
            max_time_windows: s.max_time_windows,
            max_time: s.max_time,
            max_iterations: s.max_iterations,
            exchanges,
            measures,
            acceleration,
        })
    }

    fn require_initialized(&self) -> Result<&CouplingScheme> {
        match (&self.lifecycle, &self.scheme) {
            (Lifecycle::Initialized, Some(s)) => Ok(s),
            (Lifecycle::Constructed, _) => Err(state("participant is not initialized")),
            _ => Err(state("participant is finalized")),
        }
    }

    fn window_size(&self) -> f64 {
        self.config.coupling_scheme.time_window_size
    }

    pub fn get_max_time_step_size(&self) -> Result<f64> {
        let s = self.require_initialized()?;
        Ok(s.window_end() - self.time)
    }

    pub fn is_coupling_ongoing(&self) -> Result<bool> {
        Ok(self.require_initialized()?.is_ongoing())
    }

    /// True right after an advance that completed and accepted a window.
    pub fn is_time_window_complete(&self) -> Result<bool> {
        self.require_initialized()?;
        Ok(self.window_complete)
    }

    /// Acknowledges a required checkpoint write.
    pub fn requires_writing_checkpoint(&mut self) -> Result<bool> {
        self.require_initialized()?;
        Ok(std::mem::take(&mut self.pending_write_checkpoint))
    }

    /// Acknowledges a required checkpoint restore.
    pub fn requires_reading_checkpoint(&mut self) -> Result<bool> {
        self.require_initialized()?;
        Ok(std::mem::take(&mut self.pending_read_checkpoint))
    }

    pub fn current_time(&self) -> f64 {
        self.time
    }

    pub fn stats(&self) -> Stats {
        self.scheme.as_ref().map(CouplingScheme::stats).unwrap_or_default()
    }

    pub fn window_index(&self) -> usize {
        self.scheme.as_ref().map_or(0, CouplingScheme::window_index)
    }

    /// Degree of the waveform a read of `data` currently evaluates.
    pub fn effective_read_degree(&mut self, mesh: &str, data: &str) -> Result<usize> {
        self.require_initialized()?;
        let slot = self
            .read_slots
            .iter_mut()
            .find(|r| r.mesh == mesh && r.data == data)
            .ok_or_else(|| config_error(format!("{} does not read data {data} on mesh {mesh}", self.name)))?;
        Ok(slot.waveform()?.effective_degree())
    }

    /// Completes a solver step of size `dt`.
    pub fn advance(&mut self, dt: f64) -> Result<()> {
        let scheme = self.require_initialized()?;
        if !scheme.is_ongoing() {
            return Err(state("coupling has finished"));
        }
        if self.pending_write_checkpoint {
            return Err(state("a checkpoint must be written before advancing"));
        }
        if self.pending_read_checkpoint {
            return Err(state("a checkpoint must be read before advancing"));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(validation(format!("time step size must be positive, got {dt}")));
        }
        let end = scheme.window_end();
        let remaining = end - self.time;
        let tol = WINDOW_EPS * self.window_size();
        if dt > remaining + tol {
            return Err(state(format!(
                "step {dt} overruns the window, at most {remaining} remains"
            )));
        }
        let mut t = self.time + dt;
        if end - t <= tol {
            t = end;
        }
        for w in &mut self.write_slots {
            match w.pending.take() {
                Some(values) => w.storage.set_sample_at_time(t, Sample::new(values)?)?,
                None => log::warn!("{}: no data written to {} in step ending at {t}", self.name, w.data),
            }
        }
        self.time = t;
        self.window_complete = false;
        if t == end {
            self.complete_window()?;
        }
        Ok(())
    }

    fn complete_window(&mut self) -> Result<()> {
        let scheme = self.scheme.as_mut().expect("initialized");
        let start = scheme.window_start();
        let end = scheme.window_end();
        for w in &mut self.write_slots {
            let last = w.storage.last().expect("window-start stample");
            if !same_time(last.time, end) {
                let sample = last.sample.clone();
                w.storage.set_sample_at_time(end, sample)?;
            }
        }
        for l in &self.out_links {
            let w = &self.write_slots[l.slot];
            l.plan
                .map_storage(&w.storage, scheme.storage_mut(l.exchange), true, w.components)?;
        }
        let channel = self.channel.as_mut().expect("initialized");
        let (in_links, read_slots) = (&self.in_links, &mut self.read_slots);
        let accepted = scheme.end_window(channel.as_mut(), &mut |e, st| {
            deliver(in_links, read_slots, e, st)
        })?;
        if accepted {
            for w in &mut self.write_slots {
                w.storage.trim_before(end);
            }
            for r in &mut self.read_slots {
                r.storage.trim_before(end);
                r.waveform = None;
            }
            self.window_complete = true;
            self.pending_write_checkpoint = scheme.kind().is_implicit() && scheme.is_ongoing();
        } else {
            for w in &mut self.write_slots {
                w.storage.trim_after(start);
            }
            self.time = start;
            self.pending_read_checkpoint = true;
        }
        Ok(())
    }

    /// Says goodbye to the peer. Further calls are state errors.
    pub fn finalize(&mut self) -> Result<()> {
        match self.lifecycle {
            Lifecycle::Finalized => return Err(state("finalize called twice")),
            Lifecycle::Constructed => {}
            Lifecycle::Initialized => {
                let ch = self.channel.as_mut().expect("initialized");
                ch.send(&Message::bye())?;
                ch.expect(Tag::Bye)?;
            }
        }
        self.lifecycle = Lifecycle::Finalized;
        self.channel = None;
        Ok(())
    }
}

fn deliver(in_links: &[InLink], read_slots: &mut [ReadSlot], exchange: usize, st: &Storage) -> Result<()> {
    for l in in_links.iter().filter(|l| l.exchange == exchange) {
        let r = &mut read_slots[l.slot];
        l.plan.map_storage(st, &mut r.storage, true, r.components)?;
        r.waveform = None;
    }
    Ok(())
}

fn config_error(msg: impl Into<String>) -> Error {
    config(msg)
}
