//! Event-driven simulation of the N-server FCFS queue with abandonment.
//!
//! The state is the descriptor `(α_E, X, ν, η)`: time since the last arrival,
//! number in system, the age measure of customers in service and the
//! potential-queue measure of every customer whose elapsed time in system has
//! not yet reached its patience, whether or not that customer is still
//! waiting. Atoms are stored as creation times, so ages are `clock − created`
//! and advancing time touches nothing.
//!
//! Simultaneous events are resolved service completion, then patience expiry,
//! then arrival, then by customer id.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::dist::Distribution;
use crate::measure::PointMeasure;
use crate::rng::StreamSet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("a system needs at least one server")]
    NoServers,
    #[error("invalid initial condition: {0}")]
    InvalidInitial(String),
    #[error("event cap of {cap} events reached at t = {clock}")]
    EventCap { cap: u64, clock: f64 },
    #[error("no pending events")]
    NoPendingEvents,
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
}

/// Primitives of one N-server system.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub n_servers: usize,
    pub interarrival: Distribution,
    pub service: Distribution,
    /// `None` means customers never abandon.
    pub patience: Option<Distribution>,
}

/// How the renewal arrival clock is started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalStart {
    /// An arrival has just happened: `α_E(0) = 0`.
    Fresh,
    /// `α_E(0)` is given; the first arrival comes after the conditional residual.
    Aged(f64),
    /// `α_E(0)` drawn from the stationary-excess law `F₀`.
    Stationary,
}

/// Customers present at time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    /// Ages of customers in service.
    pub service_ages: Vec<f64>,
    /// Waiting times of customers in queue.
    pub queue_waits: Vec<f64>,
    /// Potential waiting times of customers that are no longer waiting but
    /// whose patience has not run out (extra atoms of `η₀`).
    pub potential_waits: Vec<f64>,
    pub arrivals: ArrivalStart,
}

impl InitialCondition {
    pub fn empty() -> Self {
        Self {
            service_ages: Vec::new(),
            queue_waits: Vec::new(),
            potential_waits: Vec::new(),
            arrivals: ArrivalStart::Fresh,
        }
    }

    pub fn stationary_empty() -> Self {
        Self {
            arrivals: ArrivalStart::Stationary,
            ..Self::empty()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Status {
    Waiting,
    InService { start: f64 },
    Departed,
    Reneged,
    /// Departed, and the potential waiting time has since reached the patience.
    ExpiredPotential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Customer {
    pub id: i64,
    pub arrival_time: f64,
    /// Patience `r`; infinite without abandonment.
    pub patience: f64,
    /// Service requirement `v`.
    pub service: f64,
    pub status: Status,
    eta_alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pending {
    ServiceCompletion(i64),
    PatienceExpiry(i64),
    Arrival(i64),
}

impl Pending {
    fn rank(self) -> u8 {
        match self {
            Pending::ServiceCompletion(_) => 0,
            Pending::PatienceExpiry(_) => 1,
            Pending::Arrival(_) => 2,
        }
    }

    fn id(self) -> i64 {
        match self {
            Pending::ServiceCompletion(id) | Pending::PatienceExpiry(id) | Pending::Arrival(id) => id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scheduled {
    time: f64,
    what: Pending,
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.what.rank().cmp(&other.what.rank()))
            .then(self.what.id().cmp(&other.what.id()))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sorted `(creation time, customer id)` pairs.
#[derive(Debug, Clone, Default)]
struct AgeBook {
    entries: Vec<(f64, i64)>,
}

fn key_cmp(a: &(f64, i64), b: &(f64, i64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl AgeBook {
    fn insert(&mut self, created: f64, id: i64) {
        let key = (created, id);
        let i = self.entries.partition_point(|e| key_cmp(e, &key) == Ordering::Less);
        self.entries.insert(i, key);
    }

    fn remove(&mut self, created: f64, id: i64) -> bool {
        match self.entries.binary_search_by(|e| key_cmp(e, &(created, id))) {
            Ok(i) => {
                self.entries.remove(i);
                true
            }
            Err(_) => false,
        }
    }

    fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Cumulative counts since time zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// `E`: arrivals.
    pub arrivals: i64,
    /// `K`: entries into service.
    pub entered: i64,
    /// `D`: service completions.
    pub departed: i64,
    /// `R`: abandonments from the queue.
    pub reneged: i64,
    /// `S`: potential waiting times that reached their patience.
    pub potential_reneged: i64,
}

/// Values at time zero used by the balance identities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InitialCounts {
    pub x: i64,
    pub queue: i64,
    pub nu: i64,
    pub eta: i64,
    /// `𝓔₀`: customers present at time zero (including η-only ones).
    pub customers: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Arrival { id: i64 },
    ServiceCompletion { id: i64 },
    PatienceExpiry {
        id: i64,
        was_in_queue: bool,
        arrival_time: f64,
        patience: f64,
    },
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Arrival { .. } => "arrival",
            EventKind::ServiceCompletion { .. } => "service_completion",
            EventKind::PatienceExpiry { .. } => "patience_expiry",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    /// Customer that entered service as a consequence of this event.
    pub entered_service: Option<i64>,
}

/// Residuals `lhs − rhs` of the bookkeeping identities; all zero in a
/// consistent state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    /// `Q(0) + E − (Q + R + K)`.
    pub mass_balance: i64,
    /// `(N − ⟨1,ν⟩) − [N − X]⁺`.
    pub non_idling: i64,
    /// `X − ⟨1,ν⟩ − Q`.
    pub x_decomposition: i64,
    /// `Q − η[0, χ]`.
    pub queue_eta: i64,
    /// `X(0) + E − (X + D + R)`.
    pub system_balance: i64,
    /// `⟨1,η₀⟩ + E − (⟨1,η⟩ + S)`.
    pub eta_balance: i64,
    /// `⟨1,ν₀⟩ + K − (⟨1,ν⟩ + D)`.
    pub service_balance: i64,
    /// `[⟨1,ν⟩ − N]⁺`.
    pub capacity: i64,
    /// Nonzero when the longest-waiting queued customer does not sit at `χ`
    /// or the waiting index disagrees with `Q`.
    pub head_of_line: i64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        *self == AuditReport::default()
    }
}

/// The full state of one simulated system.
#[derive(Debug, Clone)]
pub struct SystemState {
    model: Model,
    clock: f64,
    last_arrival: f64,
    x: i64,
    queue: i64,
    nu: AgeBook,
    eta: AgeBook,
    waiting: VecDeque<i64>,
    customers: HashMap<i64, Customer>,
    events: BinaryHeap<Reverse<Scheduled>>,
    counters: Counters,
    initial: InitialCounts,
    streams: StreamSet,
}

fn check_ages(name: &str, xs: &[f64], end: f64) -> Result<(), EngineError> {
    for &x in xs {
        if !(x.is_finite() && x >= 0.0 && x < end) {
            return Err(EngineError::InvalidInitial(format!(
                "{name} entry {x} must lie in [0, {end})"
            )));
        }
    }
    Ok(())
}

/// Builds the state at time zero. Residual clocks of customers already
/// present are drawn from the conditional laws given their ages.
pub fn init_state(model: Model, initial: &InitialCondition, seed: u64) -> Result<SystemState, EngineError> {
    let n = model.n_servers;
    if n == 0 {
        return Err(EngineError::NoServers);
    }
    if initial.service_ages.len() > n {
        return Err(EngineError::InvalidInitial(format!(
            "{} customers in service but only {n} servers",
            initial.service_ages.len()
        )));
    }
    if !initial.queue_waits.is_empty() && initial.service_ages.len() < n {
        return Err(EngineError::InvalidInitial(
            "customers are queued while servers idle (non-idling violated)".into(),
        ));
    }
    check_ages("service age", &initial.service_ages, model.service.support_end())?;
    let patience_end = model.patience.as_ref().map_or(f64::INFINITY, |p| p.support_end());
    check_ages("queue wait", &initial.queue_waits, patience_end)?;
    check_ages("potential wait", &initial.potential_waits, patience_end)?;
    let oldest_queued = initial.queue_waits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if initial.potential_waits.iter().any(|&w| w < oldest_queued) {
        return Err(EngineError::InvalidInitial(
            "a customer that already left the queue arrived after a waiting one (FCFS)".into(),
        ));
    }
    if let ArrivalStart::Aged(a) = initial.arrivals {
        if !(a.is_finite() && a >= 0.0 && a < model.interarrival.support_end()) {
            return Err(EngineError::InvalidInitial(format!("arrival age {a} outside support")));
        }
    }

    let mut streams = StreamSet::new(seed);
    let mut state = SystemState {
        clock: 0.0,
        last_arrival: 0.0,
        x: 0,
        queue: 0,
        nu: AgeBook::default(),
        eta: AgeBook::default(),
        waiting: VecDeque::new(),
        customers: HashMap::new(),
        events: BinaryHeap::new(),
        counters: Counters::default(),
        initial: InitialCounts::default(),
        streams: StreamSet::new(seed),
        model,
    };

    // (arrival time, role) of everyone present, oldest first; ids −𝓔₀+1..0
    #[derive(Clone, Copy)]
    enum Role {
        Serving(f64),
        Queued,
        Potential,
    }
    let mut present: Vec<(f64, Role)> = Vec::new();
    present.extend(initial.service_ages.iter().map(|&a| (-a, Role::Serving(a))));
    present.extend(initial.queue_waits.iter().map(|&w| (-w, Role::Queued)));
    present.extend(initial.potential_waits.iter().map(|&w| (-w, Role::Potential)));
    present.sort_by(|a, b| a.0.total_cmp(&b.0));
    let count = present.len() as i64;
    for (k, (arrived, role)) in present.into_iter().enumerate() {
        let id = k as i64 - count + 1;
        let wait = -arrived;
        let rng = &mut streams.initial;
        match role {
            Role::Serving(age) => {
                let residual = state.model.service.sample_residual(age, rng);
                state.customers.insert(
                    id,
                    Customer {
                        id,
                        arrival_time: arrived,
                        patience: f64::INFINITY,
                        service: age + residual,
                        status: Status::InService { start: -age },
                        eta_alive: false,
                    },
                );
                state.nu.insert(-age, id);
                state.schedule(residual, Pending::ServiceCompletion(id));
                state.x += 1;
            }
            Role::Queued | Role::Potential => {
                let patience = match &state.model.patience {
                    Some(p) => {
                        let residual = p.sample_residual(wait, rng);
                        state.schedule(residual, Pending::PatienceExpiry(id));
                        wait + residual
                    }
                    None => f64::INFINITY,
                };
                state.eta.insert(arrived, id);
                let queued = matches!(role, Role::Queued);
                let service = if queued { state.model.service.sample(rng) } else { 0.0 };
                state.customers.insert(
                    id,
                    Customer {
                        id,
                        arrival_time: arrived,
                        patience,
                        service,
                        status: if queued { Status::Waiting } else { Status::Departed },
                        eta_alive: true,
                    },
                );
                if queued {
                    state.waiting.push_back(id);
                    state.queue += 1;
                    state.x += 1;
                }
            }
        }
    }
    state.initial = InitialCounts {
        x: state.x,
        queue: state.queue,
        nu: state.nu.len() as i64,
        eta: state.eta.len() as i64,
        customers: count,
    };

    let f = &state.model.interarrival;
    let first = match initial.arrivals {
        ArrivalStart::Fresh => f.sample(&mut streams.arrivals),
        ArrivalStart::Aged(a) => {
            state.last_arrival = -a;
            f.sample_residual(a, &mut streams.arrivals)
        }
        ArrivalStart::Stationary => {
            let f0 = f
                .equilibrium_interarrival()
                .map_err(|e| EngineError::InvalidInitial(e.to_string()))?;
            let a = f0.sample(&mut streams.arrivals);
            state.last_arrival = -a;
            f.sample_residual(a, &mut streams.arrivals)
        }
    };
    state.schedule(first, Pending::Arrival(1));
    state.streams = streams;
    Ok(state)
}

impl SystemState {
    fn schedule(&mut self, delay: f64, what: Pending) {
        self.events.push(Reverse(Scheduled {
            time: self.clock + delay,
            what,
        }));
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn n_servers(&self) -> usize {
        self.model.n_servers
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Backward recurrence time of the arrival process.
    pub fn alpha_e(&self) -> f64 {
        self.clock - self.last_arrival
    }

    /// `X`: customers in system.
    pub fn x(&self) -> i64 {
        self.x
    }

    /// `Q`: customers waiting.
    pub fn queue(&self) -> i64 {
        self.queue
    }

    /// `⟨1, ν⟩`.
    pub fn nu_mass(&self) -> usize {
        self.nu.len()
    }

    /// `⟨1, η⟩`.
    pub fn eta_mass(&self) -> usize {
        self.eta.len()
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn initial_counts(&self) -> InitialCounts {
        self.initial
    }

    pub fn customer(&self, id: i64) -> Option<&Customer> {
        self.customers.get(&id)
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.events.peek().map(|e| e.0.time)
    }

    /// Ages of customers in service as seen at time `t ≥ clock`.
    pub fn nu_ages_at(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        self.nu.entries.iter().map(move |e| t - e.0)
    }

    /// Potential waiting times as seen at time `t ≥ clock`.
    pub fn eta_ages_at(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        self.eta.entries.iter().map(move |e| t - e.0)
    }

    /// `ν[c, ∞)` seen at time `t ≥ clock`.
    pub fn nu_tail_count(&self, t: f64, c: f64) -> usize {
        self.nu.entries.partition_point(|e| e.0 <= t - c)
    }

    /// `η[c, ∞)` seen at time `t ≥ clock`.
    pub fn eta_tail_count(&self, t: f64, c: f64) -> usize {
        self.eta.entries.partition_point(|e| e.0 <= t - c)
    }

    /// `ν` as a point measure of ages.
    pub fn nu_measure(&self) -> PointMeasure {
        PointMeasure::from_atoms(self.nu_ages_at(self.clock)).expect("ages are nonnegative")
    }

    /// `η` as a point measure of potential waiting times.
    pub fn eta_measure(&self) -> PointMeasure {
        PointMeasure::from_atoms(self.eta_ages_at(self.clock)).expect("ages are nonnegative")
    }

    /// Creation time of the η-atom at level `Q`, i.e. `clock − χ`.
    fn chi_creation(&self) -> Option<f64> {
        let q = self.queue as usize;
        if q == 0 || q > self.eta.len() {
            return None;
        }
        Some(self.eta.entries[self.eta.len() - q].0)
    }

    /// `χ = (F^η)^{-1}(Q)`: waiting time of the head-of-line customer; zero
    /// when nobody waits.
    pub fn head_of_line_wait(&self) -> f64 {
        self.chi_creation().map_or(0.0, |c| self.clock - c)
    }

    /// Evaluates every bookkeeping identity at the current instant.
    pub fn audit(&self) -> AuditReport {
        let n = self.model.n_servers as i64;
        let nu = self.nu.len() as i64;
        let eta = self.eta.len() as i64;
        let c = self.counters;
        let q = self.queue;
        // η[0, χ] counts atoms no older than the head of line; with an empty
        // queue χ = 0 and atoms of age exactly zero are not queued customers.
        let queue_eta = match self.chi_creation() {
            Some(created) => {
                let younger = self.eta.len() - self.eta.entries.partition_point(|e| e.0 < created);
                q - younger as i64
            }
            None => {
                if q == 0 {
                    0
                } else {
                    q
                }
            }
        };
        let head_of_line = {
            let mut bad = i64::from(self.waiting.len() as i64 != q);
            if let (Some(front), Some(created)) = (self.waiting.front(), self.chi_creation()) {
                let hol = &self.customers[front];
                bad += i64::from(hol.arrival_time != created);
            }
            bad
        };
        AuditReport {
            mass_balance: self.initial.queue + c.arrivals - (q + c.reneged + c.entered),
            non_idling: (n - nu) - (n - self.x).max(0),
            x_decomposition: self.x - nu - q,
            queue_eta,
            system_balance: self.initial.x + c.arrivals - (self.x + c.departed + c.reneged),
            eta_balance: self.initial.eta + c.arrivals - (eta + c.potential_reneged),
            service_balance: self.initial.nu + c.entered - (nu + c.departed),
            capacity: (nu - n).max(0),
            head_of_line,
        }
    }

    fn start_service(&mut self, id: i64) {
        let now = self.clock;
        let cust = self.customers.get_mut(&id).expect("customer record");
        cust.status = Status::InService { start: now };
        let service = cust.service;
        self.nu.insert(now, id);
        self.counters.entered += 1;
        self.schedule(service, Pending::ServiceCompletion(id));
    }

    /// Advances to the next event and applies it.
    pub fn step(&mut self) -> Result<EventRecord, EngineError> {
        let Reverse(ev) = self.events.pop().ok_or(EngineError::NoPendingEvents)?;
        debug_assert!(ev.time >= self.clock);
        self.clock = ev.time;
        let now = self.clock;
        let mut entered_service = None;
        let kind = match ev.what {
            Pending::Arrival(id) => {
                self.counters.arrivals += 1;
                self.x += 1;
                self.last_arrival = now;
                let service = self.model.service.sample(&mut self.streams.services);
                let patience = match &self.model.patience {
                    Some(p) => p.sample(&mut self.streams.patience),
                    None => f64::INFINITY,
                };
                self.eta.insert(now, id);
                if patience.is_finite() {
                    self.schedule(patience, Pending::PatienceExpiry(id));
                }
                self.customers.insert(
                    id,
                    Customer {
                        id,
                        arrival_time: now,
                        patience,
                        service,
                        status: Status::Waiting,
                        eta_alive: true,
                    },
                );
                if self.nu.len() < self.model.n_servers {
                    self.start_service(id);
                    entered_service = Some(id);
                } else {
                    self.waiting.push_back(id);
                    self.queue += 1;
                }
                let gap = self.model.interarrival.sample(&mut self.streams.arrivals);
                self.schedule(gap, Pending::Arrival(id + 1));
                EventKind::Arrival { id }
            }
            Pending::ServiceCompletion(id) => {
                self.counters.departed += 1;
                self.x -= 1;
                let cust = self.customers.get_mut(&id).expect("customer in service");
                let Status::InService { start } = cust.status else {
                    unreachable!("completion for a customer not in service");
                };
                cust.status = Status::Departed;
                let drop_record = !cust.eta_alive;
                let removed = self.nu.remove(start, id);
                debug_assert!(removed);
                if drop_record {
                    self.customers.remove(&id);
                }
                if let Some(next) = self.waiting.pop_front() {
                    self.queue -= 1;
                    self.start_service(next);
                    entered_service = Some(next);
                }
                EventKind::ServiceCompletion { id }
            }
            Pending::PatienceExpiry(id) => {
                self.counters.potential_reneged += 1;
                let cust = self.customers.get_mut(&id).expect("customer with live η-atom");
                let (arrival_time, patience) = (cust.arrival_time, cust.patience);
                cust.eta_alive = false;
                let removed = self.eta.remove(arrival_time, id);
                debug_assert!(removed);
                let was_in_queue = cust.status == Status::Waiting;
                match cust.status {
                    Status::Waiting => {
                        self.counters.reneged += 1;
                        self.x -= 1;
                        self.queue -= 1;
                        // ids increase along the waiting line
                        let pos = self
                            .waiting
                            .binary_search(&id)
                            .expect("waiting customer is indexed");
                        self.waiting.remove(pos);
                        self.customers.remove(&id);
                    }
                    Status::InService { .. } => {}
                    _ => {
                        self.customers.remove(&id);
                    }
                }
                EventKind::PatienceExpiry {
                    id,
                    was_in_queue,
                    arrival_time,
                    patience,
                }
            }
        };
        Ok(EventRecord {
            time: now,
            kind,
            entered_service,
        })
    }
}

/// Hooks called while a trajectory is generated.
pub trait Observer {
    /// The state stays as `state` on `[from, to)`; ages grow linearly.
    fn hold(&mut self, _state: &SystemState, _from: f64, _to: f64) {}
    /// Called right after an event has been applied.
    fn event(&mut self, _state: &SystemState, _record: &EventRecord) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunControl {
    pub horizon: f64,
    /// Runaway guard on the number of events in this call.
    pub max_events: u64,
    pub audit: bool,
}

impl RunControl {
    pub fn new(horizon: f64) -> Self {
        Self {
            horizon,
            max_events: 500_000_000,
            audit: false,
        }
    }

    pub fn audited(mut self) -> Self {
        self.audit = true;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunReport {
    pub events: u64,
    pub audited: u64,
    pub violations: u64,
    pub first_violation: Option<(u64, AuditReport)>,
    pub final_time: f64,
}

/// Steps until the next event would fall after `control.horizon`, then
/// leaves the clock at the horizon.
pub fn run(
    state: &mut SystemState,
    control: &RunControl,
    observers: &mut [&mut dyn Observer],
) -> Result<RunReport, EngineError> {
    if !(control.horizon.is_finite() && control.horizon > 0.0) {
        return Err(EngineError::InvalidHorizon(control.horizon));
    }
    let mut report = RunReport::default();
    loop {
        let next = state.next_event_time().unwrap_or(f64::INFINITY);
        if next > control.horizon {
            if control.horizon > state.clock {
                for obs in observers.iter_mut() {
                    obs.hold(state, state.clock, control.horizon);
                }
                state.clock = control.horizon;
            }
            break;
        }
        if report.events >= control.max_events {
            return Err(EngineError::EventCap {
                cap: control.max_events,
                clock: state.clock,
            });
        }
        for obs in observers.iter_mut() {
            obs.hold(state, state.clock, next);
        }
        let record = state.step()?;
        report.events += 1;
        if control.audit {
            report.audited += 1;
            let a = state.audit();
            if !a.is_clean() {
                report.violations += 1;
                report.first_violation.get_or_insert((report.events, a));
            }
        }
        for obs in observers.iter_mut() {
            obs.event(state, &record);
        }
    }
    report.final_time = state.clock;
    Ok(report)
}

/// Records one row per event: the trajectory CSV.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecorder {
    pub rows: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub time: f64,
    pub event: &'static str,
    pub x: i64,
    pub nu_mass: usize,
    pub eta_mass: usize,
    pub queue: i64,
    pub counters: Counters,
    pub chi: f64,
}

pub const TRAJECTORY_HEADER: &str = "time,event_kind,X,nu_mass,eta_mass,Q,R,S,D,K,chi";

impl TrajectoryRow {
    pub fn csv(&self) -> String {
        let c = &self.counters;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.time,
            self.event,
            self.x,
            self.nu_mass,
            self.eta_mass,
            self.queue,
            c.reneged,
            c.potential_reneged,
            c.departed,
            c.entered,
            self.chi
        )
    }
}

impl TrajectoryRecorder {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(TRAJECTORY_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv());
            s.push('\n');
        }
        s
    }

    /// SHA-256 of the CSV rendering.
    pub fn digest(&self) -> String {
        crate::hash_hex(self.to_csv().as_bytes())
    }
}

impl Observer for TrajectoryRecorder {
    fn event(&mut self, state: &SystemState, record: &EventRecord) {
        self.rows.push(TrajectoryRow {
            time: record.time,
            event: record.kind.label(),
            x: state.x(),
            nu_mass: state.nu_mass(),
            eta_mass: state.eta_mass(),
            queue: state.queue(),
            counters: state.counters(),
            chi: state.head_of_line_wait(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(rate: f64) -> Distribution {
        Distribution::exponential(rate).unwrap()
    }

    fn mm(n: usize, lambda: f64, patience: Option<f64>) -> Model {
        Model {
            n_servers: n,
            interarrival: exp(lambda),
            service: exp(1.0),
            patience: patience.map(exp),
        }
    }

    #[test]
    fn empty_start_has_one_pending_arrival() {
        let s = init_state(mm(2, 1.0, Some(1.0)), &InitialCondition::empty(), 1).unwrap();
        assert_eq!(s.events.len(), 1);
        assert!(matches!(s.events.peek().unwrap().0.what, Pending::Arrival(1)));
        assert_eq!((s.x(), s.queue(), s.nu_mass(), s.eta_mass()), (0, 0, 0, 0));
        assert!(s.audit().is_clean());
    }

    #[test]
    fn too_many_in_service_is_rejected() {
        let init = InitialCondition {
            service_ages: vec![0.1, 0.2, 0.3],
            ..InitialCondition::empty()
        };
        assert!(matches!(init_state(mm(2, 1.0, None), &init, 1), Err(EngineError::InvalidInitial(_))));
        assert_eq!(init_state(Model { n_servers: 0, ..mm(1, 1.0, None) }, &InitialCondition::empty(), 1).unwrap_err(), EngineError::NoServers);
    }

    #[test]
    fn idle_server_with_queue_is_rejected() {
        let init = InitialCondition {
            service_ages: vec![0.1],
            queue_waits: vec![0.5],
            ..InitialCondition::empty()
        };
        assert!(init_state(mm(2, 1.0, Some(1.0)), &init, 1).is_err());
    }

    #[test]
    fn initial_queue_gives_head_of_line_wait() {
        let init = InitialCondition {
            service_ages: vec![1.0, 2.0],
            queue_waits: vec![0.1, 0.2, 0.3],
            ..InitialCondition::empty()
        };
        let s = init_state(mm(2, 1.0, Some(1.0)), &init, 3).unwrap();
        assert_eq!(s.x(), 5);
        assert_eq!(s.queue(), 3);
        // oracle: direct quantile of η at level Q
        let chi = s.eta_measure().quantile(3.0).unwrap();
        assert_eq!(chi, 0.3);
        assert_eq!(s.head_of_line_wait(), 0.3);
        assert!(s.audit().is_clean());
        // ids −𝓔₀+1..0, oldest first
        assert_eq!(s.initial_counts().customers, 5);
        assert_eq!(s.customer(-4).unwrap().arrival_time, -2.0);
        assert_eq!(s.customer(0).unwrap().arrival_time, -0.1);
    }

    #[test]
    fn head_of_line_examples() {
        let s = init_state(mm(1, 1.0, Some(1.0)), &InitialCondition::empty(), 3).unwrap();
        assert_eq!(s.head_of_line_wait(), 0.0);
        let init = InitialCondition {
            service_ages: vec![3.0],
            queue_waits: vec![0.1, 0.5],
            potential_waits: vec![2.0],
            arrivals: ArrivalStart::Fresh,
        };
        let s = init_state(mm(1, 1.0, Some(1.0)), &init, 3).unwrap();
        assert_eq!(s.eta_measure().atoms(), &[0.1, 0.5, 2.0]);
        assert_eq!(s.head_of_line_wait(), 0.5);
        let init = InitialCondition {
            service_ages: vec![3.0],
            queue_waits: vec![0.1],
            ..InitialCondition::empty()
        };
        let s = init_state(mm(1, 1.0, Some(1.0)), &init, 3).unwrap();
        assert_eq!(s.head_of_line_wait(), 0.1);
    }

    #[test]
    fn potential_wait_younger_than_queue_is_rejected() {
        let init = InitialCondition {
            service_ages: vec![3.0],
            queue_waits: vec![0.5],
            potential_waits: vec![0.2],
            arrivals: ArrivalStart::Fresh,
        };
        assert!(init_state(mm(1, 1.0, Some(1.0)), &init, 3).is_err());
    }

    #[test]
    fn arrival_to_idle_server_enters_service() {
        let mut s = init_state(mm(1, 1.0, Some(1.0)), &InitialCondition::empty(), 9).unwrap();
        let rec = s.step().unwrap();
        assert!(matches!(rec.kind, EventKind::Arrival { id: 1 }));
        assert_eq!(rec.entered_service, Some(1));
        assert_eq!((s.x(), s.queue(), s.nu_mass()), (1, 0, 1));
        assert_eq!(s.counters().entered, 1);
        assert_eq!(s.nu_measure().atoms(), &[0.0]);
    }

    /// Hand-built schedule: N = 1, customer 1 in service, customer 2 waiting.
    fn three_customer_state() -> SystemState {
        let model = Model {
            n_servers: 1,
            interarrival: exp(1e-9), // next arrival far away
            service: exp(1.0),
            patience: Some(exp(1.0)),
        };
        let mut s = init_state(model, &InitialCondition::empty(), 0).unwrap();
        s.events.clear();
        let mk = |id, arrival_time, patience, service, status| Customer {
            id,
            arrival_time,
            patience,
            service,
            status,
            eta_alive: true,
        };
        s.customers.insert(1, mk(1, 0.0, 10.0, 1.0, Status::InService { start: 0.0 }));
        s.customers.insert(2, mk(2, 0.2, 2.0, 5.0, Status::Waiting));
        s.customers.insert(3, mk(3, 0.4, 0.3, 5.0, Status::Waiting));
        s.nu.insert(0.0, 1);
        for (t, id) in [(0.0, 1), (0.2, 2), (0.4, 3)] {
            s.eta.insert(t, id);
        }
        s.waiting.extend([2, 3]);
        s.x = 3;
        s.queue = 2;
        s.counters.arrivals = 3;
        s.counters.entered = 1;
        s.clock = 0.4;
        s.events.push(Reverse(Scheduled { time: 1.0, what: Pending::ServiceCompletion(1) }));
        s.events.push(Reverse(Scheduled { time: 10.0, what: Pending::PatienceExpiry(1) }));
        s.events.push(Reverse(Scheduled { time: 2.2, what: Pending::PatienceExpiry(2) }));
        s.events.push(Reverse(Scheduled { time: 0.7, what: Pending::PatienceExpiry(3) }));
        s
    }

    #[test]
    fn hand_traced_schedule() {
        let mut s = three_customer_state();
        assert!(s.audit().is_clean());
        // t = 0.7: customer 3 reneges from the queue
        let r = s.step().unwrap();
        assert_eq!(r.time, 0.7);
        assert!(matches!(r.kind, EventKind::PatienceExpiry { id: 3, was_in_queue: true, .. }));
        assert_eq!((s.counters().reneged, s.counters().potential_reneged), (1, 1));
        assert_eq!((s.x(), s.queue()), (2, 1));
        assert!(s.audit().is_clean());
        // t = 1.0: customer 1 done, customer 2 enters service; its η-atom stays
        let r = s.step().unwrap();
        assert_eq!(r.entered_service, Some(2));
        assert_eq!((s.counters().departed, s.counters().entered), (1, 2));
        assert_eq!((s.x(), s.queue(), s.nu_mass(), s.eta_mass()), (1, 0, 1, 2));
        assert!(s.audit().is_clean());
        // t = 2.2: customer 2's patience ends while in service: S only
        let r = s.step().unwrap();
        assert!(matches!(r.kind, EventKind::PatienceExpiry { id: 2, was_in_queue: false, .. }));
        assert_eq!((s.counters().reneged, s.counters().potential_reneged), (1, 2));
        assert_eq!((s.x(), s.nu_mass(), s.eta_mass()), (1, 1, 1));
        assert!(s.audit().is_clean());
    }

    #[test]
    fn completion_precedes_expiry_at_equal_times() {
        let mut s = three_customer_state();
        s.events.clear();
        s.events.push(Reverse(Scheduled { time: 1.0, what: Pending::PatienceExpiry(2) }));
        s.events.push(Reverse(Scheduled { time: 1.0, what: Pending::ServiceCompletion(1) }));
        let first = s.step().unwrap();
        assert!(matches!(first.kind, EventKind::ServiceCompletion { id: 1 }));
        let second = s.step().unwrap();
        assert!(matches!(second.kind, EventKind::PatienceExpiry { id: 2, was_in_queue: false, .. }));
    }

    #[test]
    fn run_is_deterministic() {
        let go = || {
            let mut s = init_state(mm(2, 1.0, None), &InitialCondition::empty(), 77).unwrap();
            let mut rec = TrajectoryRecorder::default();
            run(&mut s, &RunControl::new(1e4).audited(), &mut [&mut rec]).unwrap();
            rec.digest()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn no_abandonment_never_reneges() {
        let mut s = init_state(mm(2, 1.8, None), &InitialCondition::empty(), 5).unwrap();
        let report = run(&mut s, &RunControl::new(2000.0).audited(), &mut []).unwrap();
        assert_eq!(report.violations, 0);
        assert_eq!(s.counters().reneged, 0);
        assert_eq!(s.counters().potential_reneged, 0);
    }

    #[test]
    fn event_cap_is_enforced() {
        let mut s = init_state(mm(2, 1.0, None), &InitialCondition::empty(), 5).unwrap();
        let control = RunControl { horizon: 1e6, max_events: 100, audit: false };
        assert!(matches!(run(&mut s, &control, &mut []), Err(EngineError::EventCap { cap: 100, .. })));
        assert!(matches!(run(&mut s, &RunControl::new(-1.0), &mut []), Err(EngineError::InvalidHorizon(_))));
    }

    #[test]
    fn clock_ends_at_horizon() {
        let mut s = init_state(mm(3, 2.0, Some(1.0)), &InitialCondition::empty(), 5).unwrap();
        run(&mut s, &RunControl::new(12.5), &mut []).unwrap();
        assert_eq!(s.clock(), 12.5);
        assert!(s.next_event_time().unwrap() > 12.5);
    }

    struct Log(Vec<EventRecord>);
    impl Observer for Log {
        fn event(&mut self, _s: &SystemState, r: &EventRecord) {
            self.0.push(*r);
        }
    }

    #[test]
    fn fcfs_and_eta_lifetimes_hold_on_event_log() {
        let model = Model {
            n_servers: 3,
            interarrival: Distribution::uniform(0.0, 0.6).unwrap(),
            service: Distribution::erlang(2, 2.0).unwrap(),
            patience: Some(Distribution::uniform(0.2, 2.0).unwrap()),
        };
        let mut s = init_state(model, &InitialCondition::empty(), 21).unwrap();
        let mut log = Log(Vec::new());
        let report = run(&mut s, &RunControl::new(5000.0).audited(), &mut [&mut log]).unwrap();
        assert_eq!(report.violations, 0);
        let mut last_entered = i64::MIN;
        let mut prev_time = 0.0;
        for r in &log.0 {
            assert!(r.time >= prev_time);
            prev_time = r.time;
            if let Some(id) = r.entered_service {
                assert!(id > last_entered, "FCFS order broken at t={}", r.time);
                last_entered = id;
            }
            if let EventKind::PatienceExpiry { arrival_time, patience, .. } = r.kind {
                assert_eq!(r.time, arrival_time + patience);
            }
        }
    }
}
