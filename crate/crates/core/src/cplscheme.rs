//! Per-window coupling state machine: exchange order, convergence checks,
//! acceleration and window bookkeeping.
//!
//! The scheme owns the coupling storages on the exchange meshes. The
//! participant fills outgoing storages before [`CouplingScheme::end_window`]
//! and receives incoming storages through the delivery callback.

use crate::acceleration::{self, AccelerationState, AuxiliaryGrid, Variant};
use crate::api::config::SchemeKind;
use crate::comm::{Channel, Message, Tag};
use crate::error::{config, Error, Result};
use crate::storage::{same_time, Sample, Storage};

/// Relative tolerance on window boundaries.
pub const WINDOW_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    First,
    Second,
}

/// Relative convergence test on window-end samples.
pub fn check_convergence(limit: f64, previous: &[f64], current: &[f64]) -> bool {
    let diff = previous
        .iter()
        .zip(current)
        .map(|(p, c)| (c - p) * (c - p))
        .sum::<f64>()
        .sqrt();
    let norm = current.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff <= limit
    } else {
        diff <= limit * norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeSpec {
    pub data_id: u32,
    /// Sent by this participant.
    pub outgoing: bool,
    pub substeps: bool,
    pub initialize: bool,
    pub degree: usize,
    pub sample_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureSpec {
    pub exchange: usize,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccelerationSpec {
    pub variant: Variant,
    pub omega: f64,
    pub filter_eps: f64,
    pub exchanges: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams {
    pub kind: SchemeKind,
    pub role: Role,
    pub time_window_size: f64,
    pub max_time_windows: usize,
    pub max_time: Option<f64>,
    pub max_iterations: usize,
    pub exchanges: Vec<ExchangeSpec>,
    pub measures: Vec<MeasureSpec>,
    pub acceleration: Option<AccelerationSpec>,
}

/// Iteration statistics over accepted windows.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub windows: usize,
    pub iterations: usize,
    /// Windows accepted at the iteration limit without converging.
    pub unconverged: usize,
}

impl Stats {
    pub fn average_iterations(&self) -> f64 {
        if self.windows == 0 {
            0.0
        } else {
            self.iterations as f64 / self.windows as f64
        }
    }
}

/// One step of the window-end protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    SendData,
    ReceiveData,
    Measure,
    Accelerate,
    SendVerdict,
    ReceiveVerdict,
    Finish,
    /// Receive the peer's data of the next iteration if coupling continues.
    ReceiveNextData,
}

/// Ordered window-end actions of a participant.
pub fn window_end_actions(kind: SchemeKind, role: Role) -> &'static [Action] {
    use Action::*;
    match (kind.is_serial(), role) {
        (_, Role::First) => &[SendData, ReceiveVerdict, ReceiveData, Finish],
        (true, Role::Second) => &[Measure, Accelerate, SendVerdict, SendData, Finish, ReceiveNextData],
        (false, Role::Second) => &[ReceiveData, Measure, Accelerate, SendVerdict, SendData, Finish],
    }
}

/// Delivery of a received storage: exchange index and its storage.
pub type Deliver<'a> = dyn FnMut(usize, &Storage) -> Result<()> + 'a;

struct ExchangeState {
    spec: ExchangeSpec,
    storage: Storage,
    /// End value of the previous iteration, `None` at window start.
    prev_end: Option<Vec<f64>>,
}

struct Accelerator {
    state: AccelerationState,
    exchanges: Vec<usize>,
    grid: Option<AuxiliaryGrid>,
    x_old: Option<Vec<f64>>,
}

pub struct CouplingScheme {
    kind: SchemeKind,
    role: Role,
    dt: f64,
    n_windows: usize,
    max_time: Option<f64>,
    max_iterations: usize,
    exchanges: Vec<ExchangeState>,
    measures: Vec<MeasureSpec>,
    accelerator: Option<Accelerator>,
    window: usize,
    iteration: usize,
    stats: Stats,
    last_converged: bool,
}

impl CouplingScheme {
    pub fn new(params: SchemeParams) -> Result<Self> {
        let dt = params.time_window_size;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(config(format!("time window size must be positive, got {dt}")));
        }
        let mut n_windows = params.max_time_windows;
        if let Some(t) = params.max_time {
            n_windows = n_windows.min(((t / dt) - WINDOW_EPS).ceil().max(1.0) as usize);
        }
        let implicit = params.kind.is_implicit();
        let max_iterations = if implicit { params.max_iterations } else { 1 };
        if max_iterations == 0 {
            return Err(config("max_iterations must be at least 1"));
        }
        for m in &params.measures {
            if m.exchange >= params.exchanges.len() {
                return Err(config("convergence measure references unknown exchange"));
            }
        }
        let accelerator = match params.acceleration {
            Some(a) if implicit && params.role == Role::Second => {
                let mut exchanges = a.exchanges.clone();
                exchanges.sort_unstable();
                exchanges.dedup();
                if exchanges.iter().any(|&i| i >= params.exchanges.len()) {
                    return Err(config("accelerated data references unknown exchange"));
                }
                Some(Accelerator {
                    state: AccelerationState::new(a.variant, a.omega, a.filter_eps)?,
                    exchanges,
                    grid: None,
                    x_old: None,
                })
            }
            _ => None,
        };
        let exchanges = params
            .exchanges
            .into_iter()
            .map(|spec| ExchangeState {
                storage: Storage::new(spec.degree),
                spec,
                prev_end: None,
            })
            .collect();
        Ok(Self {
            kind: params.kind,
            role: params.role,
            dt,
            n_windows,
            max_time: params.max_time,
            max_iterations,
            exchanges,
            measures: if implicit { params.measures } else { Vec::new() },
            accelerator,
            window: 0,
            iteration: 0,
            stats: Stats::default(),
            last_converged: true,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn time_window_size(&self) -> f64 {
        self.dt
    }

    pub fn num_windows(&self) -> usize {
        self.n_windows
    }

    /// Index of the current window; equals [`num_windows`](Self::num_windows)
    /// after the last accepted window.
    pub fn window_index(&self) -> usize {
        self.window
    }

    /// Completed iterations of the current window.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    /// Whether the most recently finished iteration converged.
    pub fn last_converged(&self) -> bool {
        self.last_converged
    }

    pub fn is_ongoing(&self) -> bool {
        self.window < self.n_windows
    }

    fn boundary(&self, k: usize) -> f64 {
        let t = k as f64 * self.dt;
        match self.max_time {
            Some(max) if t > max => max,
            _ => t,
        }
    }

    pub fn window_start(&self) -> f64 {
        self.boundary(self.window.min(self.n_windows))
    }

    pub fn window_end(&self) -> f64 {
        if self.is_ongoing() {
            self.boundary(self.window + 1)
        } else {
            self.window_start()
        }
    }

    pub fn storage(&self, exchange: usize) -> &Storage {
        &self.exchanges[exchange].storage
    }

    /// Outgoing coupling storage, filled by the participant's write mapping.
    pub fn storage_mut(&mut self, exchange: usize) -> &mut Storage {
        &mut self.exchanges[exchange].storage
    }

    pub fn exchange(&self, exchange: usize) -> &ExchangeSpec {
        &self.exchanges[exchange].spec
    }

    fn zero_storage(spec: &ExchangeSpec) -> Storage {
        let mut st = Storage::new(spec.degree);
        st.set_sample_at_time(0.0, Sample::zeros(spec.sample_len))
            .expect("empty storage accepts a first stample");
        st
    }

    /// Exchanges initial data. Outgoing storages must already hold the
    /// window-start stample.
    pub fn initialize(&mut self, channel: &mut dyn Channel, deliver: &mut Deliver) -> Result<()> {
        for e in &self.exchanges {
            if e.spec.outgoing && e.storage.is_empty() {
                return Err(Error::State(format!(
                    "outgoing data {} has no initial stample",
                    e.spec.data_id
                )));
            }
        }
        let serial = self.kind.is_serial();
        // Incoming data that arrives with dedicated initial messages. In
        // serial coupling data sent by the first participant usually arrives
        // with the first storage unless only window ends are exchanged.
        let peer_sends_initial = |s: &ExchangeSpec| {
            s.initialize && !(serial && s.substeps && self.role == Role::Second)
        };
        let sends_initial = |s: &ExchangeSpec| {
            s.initialize && !(serial && s.substeps && self.role == Role::First)
        };
        let incoming_initial: Vec<usize> = (0..self.exchanges.len())
            .filter(|&i| !self.exchanges[i].spec.outgoing && peer_sends_initial(&self.exchanges[i].spec))
            .collect();
        let outgoing_initial: Vec<usize> = (0..self.exchanges.len())
            .filter(|&i| self.exchanges[i].spec.outgoing && sends_initial(&self.exchanges[i].spec))
            .collect();

        let send = |this: &Self, ch: &mut dyn Channel| -> Result<()> {
            for &i in &outgoing_initial {
                let e = &this.exchanges[i];
                ch.send(&Message::storage(Tag::InitialData, e.spec.data_id, &e.storage))?;
            }
            Ok(())
        };
        if self.role == Role::First {
            send(self, channel)?;
        }
        for i in 0..self.exchanges.len() {
            if self.exchanges[i].spec.outgoing {
                continue;
            }
            if incoming_initial.contains(&i) {
                self.receive(channel, i, Tag::InitialData)?;
                deliver(i, &self.exchanges[i].storage)?;
            } else if !(serial && self.role == Role::Second && self.exchanges[i].spec.substeps) {
                self.exchanges[i].storage = Self::zero_storage(&self.exchanges[i].spec);
                deliver(i, &self.exchanges[i].storage)?;
            }
        }
        if self.role == Role::Second {
            send(self, channel)?;
            if serial {
                self.receive_all(channel, deliver)?;
            }
        }
        Ok(())
    }

    fn receive(&mut self, channel: &mut dyn Channel, i: usize, tag: Tag) -> Result<()> {
        let msg = channel.expect(tag)?;
        let start = self.window_start();
        let e = &mut self.exchanges[i];
        let (id, received) = crate::comm::wire::deserialize_storage(&msg.payload, e.spec.degree)?;
        if id != e.spec.data_id {
            return Err(Error::Protocol(format!(
                "expected data id {}, received {id}",
                e.spec.data_id
            )));
        }
        if received.sample_len() != Some(e.spec.sample_len) {
            return Err(Error::Protocol(format!(
                "data {id}: expected samples of length {}, received {:?}",
                e.spec.sample_len,
                received.sample_len()
            )));
        }
        let first = received.first().expect("non-empty storage").time;
        match tag {
            Tag::Storage if !e.spec.substeps => {
                if received.len() != 1 {
                    return Err(Error::Protocol(format!(
                        "data {id} without substeps carries {} stamples",
                        received.len()
                    )));
                }
                if e.storage.is_empty() {
                    return Err(Error::State(format!("data {id} has no window-start stample")));
                }
                let last = received.last().expect("one stample").clone();
                e.storage.trim_after(start);
                e.storage.set_sample_at_time(last.time, last.sample)?;
            }
            _ => {
                if !same_time(first, start) {
                    return Err(Error::Protocol(format!(
                        "data {id} starts at {first}, window starts at {start}"
                    )));
                }
                e.storage = received;
            }
        }
        Ok(())
    }

    fn receive_all(&mut self, channel: &mut dyn Channel, deliver: &mut Deliver) -> Result<()> {
        for i in 0..self.exchanges.len() {
            if !self.exchanges[i].spec.outgoing {
                self.receive(channel, i, Tag::Storage)?;
                deliver(i, &self.exchanges[i].storage)?;
            }
        }
        Ok(())
    }

    fn send_all(&self, channel: &mut dyn Channel) -> Result<()> {
        let end = self.window_end();
        for e in self.exchanges.iter().filter(|e| e.spec.outgoing) {
            let last = e
                .storage
                .last()
                .ok_or_else(|| Error::State(format!("data {} is empty", e.spec.data_id)))?;
            if !same_time(last.time, end) {
                return Err(Error::State(format!(
                    "data {} ends at {}, window ends at {end}",
                    e.spec.data_id, last.time
                )));
            }
            let msg = if e.spec.substeps {
                Message::storage(Tag::Storage, e.spec.data_id, &e.storage)
            } else {
                let st = Storage::with_initial(last.time, last.sample.clone(), e.spec.degree)?;
                Message::storage(Tag::Storage, e.spec.data_id, &st)
            };
            channel.send(&msg)?;
        }
        Ok(())
    }

    fn measure(&self) -> bool {
        self.measures.iter().all(|m| {
            let e = &self.exchanges[m.exchange];
            let (Some(first), Some(last)) = (e.storage.first(), e.storage.last()) else {
                return false;
            };
            let prev = e.prev_end.as_deref().unwrap_or(first.sample.values());
            check_convergence(m.limit, prev, last.sample.values())
        })
    }

    fn accelerate(&mut self, accepted: bool) -> Result<()> {
        let start = self.window_start();
        if let Some(acc) = &mut self.accelerator {
            if accepted {
                acc.state.reset();
                acc.grid = None;
                acc.x_old = None;
            } else {
                let variant = acc.state.variant();
                let fields: Vec<&Storage> =
                    acc.exchanges.iter().map(|&i| &self.exchanges[i].storage).collect();
                let grid = acc
                    .grid
                    .get_or_insert_with(|| AuxiliaryGrid::from_storages(&fields, start))
                    .clone();
                let x_tilde = acceleration::flatten(&fields, &grid, variant)?;
                let x_old = match acc.x_old.take() {
                    Some(x) => x,
                    None => acceleration::flatten_constant(&fields, &grid, variant)?,
                };
                let x = acc.state.accelerate(&x_old, &x_tilde)?;
                let mut targets: Vec<&mut Storage> = self
                    .exchanges
                    .iter_mut()
                    .enumerate()
                    .filter(|(i, _)| acc.exchanges.contains(i))
                    .map(|(_, e)| &mut e.storage)
                    .collect();
                acceleration::resample_to_storage(&x, &grid, variant, &mut targets)?;
                acc.x_old = Some(x);
            }
        }
        for m in &self.measures {
            let e = &mut self.exchanges[m.exchange];
            e.prev_end = e.storage.last().map(|s| s.sample.values().to_vec());
        }
        Ok(())
    }

    fn finish(&mut self, accepted: bool) {
        let start = self.window_start();
        let end = self.window_end();
        for e in &mut self.exchanges {
            if accepted {
                e.storage.trim_before(end);
                e.prev_end = None;
            } else if e.spec.outgoing {
                e.storage.trim_after(start);
            }
        }
        if accepted {
            self.stats.windows += 1;
            self.stats.iterations += self.iteration;
            if !self.last_converged {
                self.stats.unconverged += 1;
            }
            self.window += 1;
            self.iteration = 0;
        }
    }

    /// Runs the window-end protocol. Returns whether the window was accepted.
    pub fn end_window(&mut self, channel: &mut dyn Channel, deliver: &mut Deliver) -> Result<bool> {
        if !self.is_ongoing() {
            return Err(Error::State("coupling has already finished".into()));
        }
        self.iteration += 1;
        let mut accepted = true;
        for action in window_end_actions(self.kind, self.role) {
            match action {
                Action::SendData => self.send_all(channel)?,
                Action::ReceiveData => {
                    if self.role == Role::Second {
                        // Delivered after acceleration.
                        for i in 0..self.exchanges.len() {
                            if !self.exchanges[i].spec.outgoing {
                                self.receive(channel, i, Tag::Storage)?;
                            }
                        }
                    } else {
                        self.receive_all(channel, deliver)?;
                    }
                }
                Action::Measure => {
                    let converged = self.measure();
                    self.last_converged = converged;
                    accepted = converged || self.iteration >= self.max_iterations;
                    if !converged && accepted && self.kind.is_implicit() {
                        log::warn!(
                            "window {} accepted after {} iterations without convergence",
                            self.window,
                            self.iteration
                        );
                    }
                }
                Action::Accelerate => {
                    self.accelerate(accepted)?;
                    if !self.kind.is_serial() {
                        for i in 0..self.exchanges.len() {
                            if !self.exchanges[i].spec.outgoing {
                                deliver(i, &self.exchanges[i].storage)?;
                            }
                        }
                    }
                }
                Action::SendVerdict => channel.send(&Message::convergence(accepted))?,
                Action::ReceiveVerdict => {
                    accepted = channel.expect(Tag::Convergence)?.decode_convergence()?;
                    self.last_converged = accepted;
                    if !accepted && self.iteration >= self.max_iterations {
                        return Err(Error::Protocol("peer exceeded the iteration limit".into()));
                    }
                }
                Action::Finish => self.finish(accepted),
                Action::ReceiveNextData => {
                    if self.is_ongoing() {
                        self.receive_all(channel, deliver)?;
                    }
                }
            }
        }
        Ok(accepted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::pair;
    use std::thread;

    #[test]
    fn convergence_examples() {
        assert!(check_convergence(1e-10, &[1.0], &[1.0]));
        assert!(!check_convergence(0.05, &[1.0], &[1.1]));
        assert!(check_convergence(1e-3, &[0.0], &[0.0]));
        assert!(check_convergence(0.1, &[1.0], &[1.1]));
    }

    #[test]
    fn action_orders() {
        use Action::*;
        assert_eq!(
            window_end_actions(SchemeKind::SerialImplicit, Role::First),
            &[SendData, ReceiveVerdict, ReceiveData, Finish]
        );
        assert_eq!(
            window_end_actions(SchemeKind::ParallelImplicit, Role::Second)[0],
            ReceiveData
        );
    }

    fn params(kind: SchemeKind, role: Role, max_iterations: usize) -> SchemeParams {
        let out = role == Role::First;
        SchemeParams {
            kind,
            role,
            time_window_size: 0.5,
            max_time_windows: 2,
            max_time: None,
            max_iterations,
            exchanges: vec![
                ExchangeSpec {
                    data_id: 0,
                    outgoing: out,
                    substeps: true,
                    initialize: false,
                    degree: 1,
                    sample_len: 1,
                },
                ExchangeSpec {
                    data_id: 1,
                    outgoing: !out,
                    substeps: true,
                    initialize: false,
                    degree: 1,
                    sample_len: 1,
                },
            ],
            measures: vec![MeasureSpec {
                exchange: 1,
                limit: 1e-12,
            }],
            acceleration: None,
        }
    }

    fn fill(s: &mut CouplingScheme, i: usize, value: f64) {
        let end = s.window_end();
        s.storage_mut(i)
            .set_sample_at_time(end, Sample::new(vec![value]).unwrap())
            .unwrap();
    }

    /// Both sides write a new value every iteration, so the window never
    /// converges and is accepted at the iteration limit.
    #[test]
    fn forced_advance_at_iteration_limit() {
        let (mut a, mut b) = pair();
        let run = |role: Role, ch: &mut dyn Channel| {
            let mut s = CouplingScheme::new(params(SchemeKind::SerialImplicit, role, 2)).unwrap();
            let mine = if role == Role::First { 0 } else { 1 };
            s.storage_mut(mine)
                .set_sample_at_time(0.0, Sample::new(vec![0.0]).unwrap())
                .unwrap();
            s.initialize(ch, &mut |_, _| Ok(())).unwrap();
            let mut verdicts = Vec::new();
            let mut k = 1.0;
            while s.is_ongoing() {
                fill(&mut s, mine, k);
                k += 1.0;
                verdicts.push(s.end_window(ch, &mut |_, _| Ok(())).unwrap());
            }
            (verdicts, s.stats())
        };
        let t = thread::spawn(move || run(Role::Second, &mut b));
        let (va, sa) = run(Role::First, &mut a);
        let (vb, sb) = t.join().unwrap();
        assert_eq!(va, vec![false, true, false, true]);
        assert_eq!(va, vb);
        assert_eq!(sa.iterations, 4);
        assert_eq!(sb.windows, 2);
        assert_eq!(sb.unconverged, 2);
    }

    #[test]
    fn window_bounds_with_max_time() {
        let mut p = params(SchemeKind::SerialExplicit, Role::First, 1);
        p.time_window_size = 0.3;
        p.max_time_windows = 100;
        p.max_time = Some(1.0);
        let s = CouplingScheme::new(p).unwrap();
        assert_eq!(s.num_windows(), 4);
        assert_eq!(s.boundary(4), 1.0);
    }
}
