//! Discrete-event simulation of calls, dispatch, service and return.
//!
//! Each call moves through `NewCall -> CallEnroute -> CallArriveScene ->
//! CallDepartScene -> CallArriveHospital -> AmbulanceAvailable`. Dispatch
//! picks the closest free ambulance by grid time from its home cell; calls
//! that find none wait in a FIFO queue and are picked up by the next
//! ambulance to finish at a hospital, which drives from there.

mod batches;
mod event;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::CalibrationModel;
use crate::dispatchflow::{nearest_available, Deployment};
use crate::geogrid::Grid;
use crate::ingest::{CallRecord, SNAP_CELLS};

pub use batches::{batch_slices, compare_policies, run_batches, BatchRun, PolicyComparison};
use event::EventQueue;
pub use event::{event_log_csv, Event, EventKind};

pub const DEFAULT_SHORTFALL_THRESHOLD_S: f64 = 600.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("stationing places no ambulances")]
    EmptyFleet,
    #[error("stationing has {found} entries, grid has {expected} stations")]
    Dimension { expected: usize, found: usize },
    #[error("calls must be sorted by time (call {0} is out of order)")]
    UnsortedCalls(usize),
    #[error("call {call} refers to cell {cell} outside the grid")]
    BadCell { call: usize, cell: usize },
    #[error("invalid simulation parameters: {0}")]
    BadParams(String),
    #[error("need {needed} calls for the requested batches, have {available}")]
    InsufficientCalls { needed: usize, available: usize },
    #[error("at least one policy is required")]
    NoPolicies,
}

/// On-scene duration model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceTimeModel {
    /// `exp(N(mu, sigma^2))` minutes.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Fixed {
        seconds: f64,
    },
}

impl Default for ServiceTimeModel {
    fn default() -> Self {
        ServiceTimeModel::LogNormal { mu: 3.65, sigma: 0.3 }
    }
}

/// One on-scene duration in seconds.
pub fn draw_service_time<R: Rng + ?Sized>(model: &ServiceTimeModel, rng: &mut R) -> f64 {
    match *model {
        ServiceTimeModel::LogNormal { mu, sigma } => {
            let z: f64 = rng.sample(StandardNormal);
            (mu + sigma * z).exp() * 60.0
        }
        ServiceTimeModel::Fixed { seconds } => seconds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub service: ServiceTimeModel,
    pub shortfall_threshold_s: f64,
    /// Applied to every grid travel leg.
    pub travel_model: CalibrationModel,
    /// Record ambulance status counts after every event.
    pub record_census: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            service: ServiceTimeModel::default(),
            shortfall_threshold_s: DEFAULT_SHORTFALL_THRESHOLD_S,
            travel_model: CalibrationModel::identity(),
            record_census: false,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        match self.service {
            ServiceTimeModel::LogNormal { mu, sigma } if !(mu.is_finite() && sigma.is_finite() && sigma >= 0.0) => {
                return Err(SimError::BadParams(format!("lognormal mu {mu}, sigma {sigma}")));
            }
            ServiceTimeModel::Fixed { seconds } if !(seconds.is_finite() && seconds >= 0.0) => {
                return Err(SimError::BadParams(format!("fixed service time {seconds}")));
            }
            _ => {}
        }
        if !(self.shortfall_threshold_s >= 0.0) {
            return Err(SimError::BadParams(format!("threshold {}", self.shortfall_threshold_s)));
        }
        Ok(())
    }
}

/// A call reduced to what the simulator needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimCall {
    /// Seconds since the Unix epoch.
    pub time_s: f64,
    pub cell: usize,
}

/// Maps records to grid cells; returns the calls and the number dropped
/// for lying outside the grid.
pub fn sim_calls(records: &[CallRecord], grid: &Grid) -> (Vec<SimCall>, usize) {
    let mut out = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for r in records {
        match grid.assign_cell_snapped(r.lat, r.lon, SNAP_CELLS) {
            Ok(cell) => {
                let t = r.timestamp.timestamp() as f64 + r.timestamp.timestamp_subsec_nanos() as f64 * 1e-9;
                out.push(SimCall { time_s: t, cell });
            }
            Err(_) => dropped += 1,
        }
    }
    out.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    (out, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmbulanceStatus {
    AtStation,
    Enroute,
    OnScene,
    ToHospital,
    Returning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbulanceState {
    pub id: usize,
    pub home_station: usize,
    pub home_cell: usize,
    pub status: AmbulanceStatus,
    /// Time the current job ends; `None` while idle.
    pub available_at: Option<f64>,
    pub location_cell: usize,
    returns_at: f64,
}

impl AmbulanceState {
    fn is_free(&self) -> bool {
        matches!(self.status, AmbulanceStatus::AtStation | AmbulanceStatus::Returning)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallOutcome {
    pub call_id: usize,
    pub ambulance_id: usize,
    pub dispatch_time_s: f64,
    pub dispatch_wait_s: f64,
    pub travel_s: f64,
    pub response_s: f64,
    pub shortfall: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCensus {
    pub at_station: usize,
    pub enroute: usize,
    pub on_scene: usize,
    pub to_hospital: usize,
    pub returning: usize,
}

impl StatusCensus {
    pub fn total(&self) -> usize {
        self.at_station + self.enroute + self.on_scene + self.to_hospital + self.returning
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub records: Vec<CallOutcome>,
    pub mean_response_s: f64,
    pub shortfall_rate: f64,
    pub event_log: Vec<Event>,
    /// `(time, counts)` after each event, when requested.
    pub census: Vec<(f64, StatusCensus)>,
    /// No hospitals were configured, so hospital legs took zero time.
    pub hospital_leg_skipped: bool,
    pub n_ambulances: usize,
}

struct Sim<'a> {
    grid: &'a Grid,
    calls: &'a [SimCall],
    params: &'a SimParams,
    service_s: &'a [f64],
    ambulances: Vec<AmbulanceState>,
    queue: EventQueue,
    waiting: VecDeque<usize>,
    dispatched: Vec<Option<(usize, f64)>>,
    travel: Vec<f64>,
}

impl Sim<'_> {
    fn leg(&self, from: usize, to: usize) -> f64 {
        self.params.travel_model.apply(self.grid.travel(from, to))
    }

    fn settle_returns(&mut self, t: f64) {
        for a in &mut self.ambulances {
            if a.status == AmbulanceStatus::Returning && a.returns_at <= t {
                a.status = AmbulanceStatus::AtStation;
            }
        }
    }

    /// Closest free ambulance, judged from home cells.
    fn choose(&self, cell: usize) -> Option<usize> {
        let mut free = vec![0u32; self.grid.station_cells.len()];
        for a in self.ambulances.iter().filter(|a| a.is_free()) {
            free[a.home_station] += 1;
        }
        let station = nearest_available(&free, cell, self.grid, None)?;
        self.ambulances.iter().find(|a| a.home_station == station && a.is_free()).map(|a| a.id)
    }

    fn dispatch(&mut self, amb: usize, call: usize, t: f64) {
        let a = &mut self.ambulances[amb];
        if a.is_free() {
            // Free ambulances are treated as being at their home cell.
            a.location_cell = a.home_cell;
        }
        a.status = AmbulanceStatus::Enroute;
        self.dispatched[call] = Some((amb, t));
        let cell = a.location_cell;
        self.queue.push(Event {
            time_s: t,
            kind: EventKind::CallEnroute,
            call_id: call,
            ambulance_id: Some(amb),
            cell,
        });
    }

    fn nearest_hospital(&self, cell: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &h in &self.grid.hospital_cells {
            let t = self.grid.travel(cell, h);
            if best.is_none_or(|(_, bt)| t < bt) {
                best = Some((h, t));
            }
        }
        best.map(|(h, _)| h)
    }

    fn handle(&mut self, ev: &Event) {
        let t = ev.time_s;
        let c = ev.call_id;
        match ev.kind {
            EventKind::NewCall => match self.choose(ev.cell) {
                Some(a) => self.dispatch(a, c, t),
                None => self.waiting.push_back(c),
            },
            EventKind::CallEnroute => {
                let a = ev.ambulance_id.expect("bound");
                let travel = self.leg(self.ambulances[a].location_cell, self.calls[c].cell);
                self.travel[c] = travel;
                self.ambulances[a].available_at = Some(t + travel);
                self.queue.push(Event {
                    time_s: t + travel,
                    kind: EventKind::CallArriveScene,
                    call_id: c,
                    ambulance_id: Some(a),
                    cell: self.calls[c].cell,
                });
            }
            EventKind::CallArriveScene => {
                let a = ev.ambulance_id.expect("bound");
                let amb = &mut self.ambulances[a];
                amb.status = AmbulanceStatus::OnScene;
                amb.location_cell = ev.cell;
                let end = t + self.service_s[c];
                amb.available_at = Some(end);
                self.queue.push(Event {
                    time_s: end,
                    kind: EventKind::CallDepartScene,
                    call_id: c,
                    ambulance_id: Some(a),
                    cell: ev.cell,
                });
            }
            EventKind::CallDepartScene => {
                let a = ev.ambulance_id.expect("bound");
                let (dest, leg) = match self.nearest_hospital(ev.cell) {
                    Some(h) => (h, self.leg(ev.cell, h)),
                    None => (ev.cell, 0.0),
                };
                let amb = &mut self.ambulances[a];
                amb.status = AmbulanceStatus::ToHospital;
                amb.available_at = Some(t + leg);
                self.queue.push(Event {
                    time_s: t + leg,
                    kind: EventKind::CallArriveHospital,
                    call_id: c,
                    ambulance_id: Some(a),
                    cell: dest,
                });
            }
            EventKind::CallArriveHospital => {
                let a = ev.ambulance_id.expect("bound");
                self.ambulances[a].location_cell = ev.cell;
                self.queue.push(Event {
                    time_s: t,
                    kind: EventKind::AmbulanceAvailable,
                    call_id: c,
                    ambulance_id: Some(a),
                    cell: ev.cell,
                });
            }
            EventKind::AmbulanceAvailable => {
                let a = ev.ambulance_id.expect("bound");
                if let Some(next) = self.waiting.pop_front() {
                    // Serve the queue straight from the hospital.
                    self.dispatch(a, next, t);
                } else {
                    let (loc, home) = (self.ambulances[a].location_cell, self.ambulances[a].home_cell);
                    let back = self.leg(loc, home);
                    let amb = &mut self.ambulances[a];
                    amb.available_at = None;
                    amb.returns_at = t + back;
                    amb.status = if back > 0.0 { AmbulanceStatus::Returning } else { AmbulanceStatus::AtStation };
                }
            }
        }
    }

    fn census(&self) -> StatusCensus {
        let mut c = StatusCensus { at_station: 0, enroute: 0, on_scene: 0, to_hospital: 0, returning: 0 };
        for a in &self.ambulances {
            match a.status {
                AmbulanceStatus::AtStation => c.at_station += 1,
                AmbulanceStatus::Enroute => c.enroute += 1,
                AmbulanceStatus::OnScene => c.on_scene += 1,
                AmbulanceStatus::ToHospital => c.to_hospital += 1,
                AmbulanceStatus::Returning => c.returning += 1,
            }
        }
        c
    }
}

fn check_inputs(x: &Deployment, calls: &[SimCall], grid: &Grid, params: &SimParams) -> Result<(), SimError> {
    params.validate()?;
    if x.x.len() != grid.station_cells.len() {
        return Err(SimError::Dimension { expected: grid.station_cells.len(), found: x.x.len() });
    }
    if x.total() == 0 {
        return Err(SimError::EmptyFleet);
    }
    for (i, c) in calls.iter().enumerate() {
        if c.cell >= grid.n_cells() {
            return Err(SimError::BadCell { call: i, cell: c.cell });
        }
        if i > 0 && !(c.time_s >= calls[i - 1].time_s) {
            return Err(SimError::UnsortedCalls(i));
        }
    }
    Ok(())
}

/// Runs one simulation; service times are drawn in call order from `seed`.
pub fn simulate(
    x: &Deployment,
    calls: &[SimCall],
    grid: &Grid,
    params: &SimParams,
    seed: u64,
) -> Result<SimOutcome, SimError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let service: Vec<f64> = calls.iter().map(|_| draw_service_time(&params.service, &mut rng)).collect();
    simulate_with_service(x, calls, grid, params, &service)
}

/// Runs one simulation with given on-scene durations (one per call).
pub fn simulate_with_service(
    x: &Deployment,
    calls: &[SimCall],
    grid: &Grid,
    params: &SimParams,
    service_s: &[f64],
) -> Result<SimOutcome, SimError> {
    check_inputs(x, calls, grid, params)?;
    if service_s.len() != calls.len() {
        return Err(SimError::BadParams(format!("{} service times for {} calls", service_s.len(), calls.len())));
    }
    let mut ambulances = Vec::new();
    for (station, &count) in x.x.iter().enumerate() {
        let home = grid.station_cells[station];
        for _ in 0..count {
            ambulances.push(AmbulanceState {
                id: ambulances.len(),
                home_station: station,
                home_cell: home,
                status: AmbulanceStatus::AtStation,
                available_at: None,
                location_cell: home,
                returns_at: f64::NEG_INFINITY,
            });
        }
    }
    let mut sim = Sim {
        grid,
        calls,
        params,
        service_s,
        ambulances,
        queue: EventQueue::default(),
        waiting: VecDeque::new(),
        dispatched: vec![None; calls.len()],
        travel: vec![0.0; calls.len()],
    };
    for (i, c) in calls.iter().enumerate() {
        sim.queue.push(Event {
            time_s: c.time_s,
            kind: EventKind::NewCall,
            call_id: i,
            ambulance_id: None,
            cell: c.cell,
        });
    }
    let mut log = Vec::with_capacity(calls.len() * 6);
    let mut census = Vec::new();
    while let Some(ev) = sim.queue.pop() {
        sim.settle_returns(ev.time_s);
        sim.handle(&ev);
        if params.record_census {
            census.push((ev.time_s, sim.census()));
        }
        log.push(ev);
    }

    let records: Vec<CallOutcome> = (0..calls.len())
        .map(|c| {
            let (amb, t) = sim.dispatched[c].expect("every call is dispatched once the queue drains");
            let wait = t - calls[c].time_s;
            let response = wait + sim.travel[c];
            CallOutcome {
                call_id: c,
                ambulance_id: amb,
                dispatch_time_s: t,
                dispatch_wait_s: wait,
                travel_s: sim.travel[c],
                response_s: response,
                shortfall: response > params.shortfall_threshold_s,
            }
        })
        .collect();
    let n = records.len();
    let (mean_response_s, shortfall_rate) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            records.iter().map(|r| r.response_s).sum::<f64>() / n as f64,
            records.iter().filter(|r| r.shortfall).count() as f64 / n as f64,
        )
    };
    Ok(SimOutcome {
        records,
        mean_response_s,
        shortfall_rate,
        event_log: log,
        census,
        hospital_leg_skipped: grid.hospital_cells.is_empty(),
        n_ambulances: sim.ambulances.len(),
    })
}
