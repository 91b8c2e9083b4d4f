//! Fixed-step (1 s) mesoscopic simulation.
//!
//! Vehicles traverse a link at free-flow speed, then join the FIFO queue of
//! their next movement at the downstream end. Queues discharge during green at
//! a per-lane saturation rate, and a discharge is blocked whenever the
//! receiving link is at its storage capacity (spillback). Every link entry and
//! exit is logged.
//!
//! Each step runs, in order: inject departures, move free-flow arrivals into
//! queues, discharge green movements, advance the clock.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::Trip;
use crate::signal::{Phase, SignalPlan};
use crate::topology::{
    IntersectionId, LinkId, LinkKind, Movement, NetworkTopology, Route, TazId, TopologyError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("routing failed: {0}")]
    Routing(#[from] TopologyError),
    #[error("cannot run backwards: now {now}, requested {requested}")]
    TimeInPast { now: u32, requested: u32 },
    #[error("expected {expected} signal controls, got {got}")]
    ControlCount { expected: usize, got: usize },
    #[error("intersection {0} does not exist")]
    UnknownIntersection(usize),
    #[error("invalid simulation config: {0}")]
    BadConfig(&'static str),
    #[error("trajectory export failed: {0}")]
    Export(#[from] csv::Error),
    #[error("trajectory export failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Queue discharge rate while green, vehicles per second per lane.
    pub saturation_flow_per_lane: f64,
    /// Space one stopped vehicle occupies, metres.
    pub jam_spacing_m: f64,
    /// Lanes counted towards link storage.
    pub storage_lanes: u32,
}

impl SimConfig {
    /// Per-lane rate at which a two-lane straight approach discharges 50
    /// vehicles during the 26 s east-west through green of a split-50 cycle.
    pub const CALIBRATED_SATURATION_FLOW: f64 = 25.0 / 26.0;

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.saturation_flow_per_lane > 0.0) {
            return Err(SimError::BadConfig("saturation_flow_per_lane must be positive"));
        }
        if !(self.jam_spacing_m > 0.0) {
            return Err(SimError::BadConfig("jam_spacing_m must be positive"));
        }
        if self.storage_lanes == 0 {
            return Err(SimError::BadConfig("storage_lanes must be positive"));
        }
        Ok(())
    }

    pub fn storage_capacity(&self, length_m: f64) -> usize {
        (length_m * self.storage_lanes as f64 / self.jam_spacing_m).floor() as usize
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            saturation_flow_per_lane: Self::CALIBRATED_SATURATION_FLOW,
            jam_spacing_m: 7.5,
            storage_lanes: 3,
        }
    }
}

/// What an intersection's signal is doing. The fixed overrides exist for
/// scripted scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalControl {
    Plan(SignalPlan),
    AllRed,
    AllGreen,
}

impl SignalControl {
    pub fn is_green(&self, phase: Phase, time: u32) -> bool {
        match self {
            SignalControl::Plan(p) => p.is_green(phase, time),
            SignalControl::AllRed => false,
            SignalControl::AllGreen => true,
        }
    }

    pub fn split_s(&self) -> Option<u32> {
        match self {
            SignalControl::Plan(p) => Some(p.split_s()),
            _ => None,
        }
    }
}

/// Per-intersection record of signal control segments, each in force from its
/// start time until the next one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalHistory {
    segments: Vec<Vec<(u32, SignalControl)>>,
}

impl SignalHistory {
    pub fn new(initial: Vec<SignalControl>) -> Self {
        SignalHistory {
            segments: initial.into_iter().map(|c| vec![(0, c)]).collect(),
        }
    }

    pub fn intersection_count(&self) -> usize {
        self.segments.len()
    }

    /// Records a control taking effect at `from`, replacing anything recorded
    /// at or after that time.
    pub fn set(&mut self, intersection: IntersectionId, from: u32, control: SignalControl) {
        let segs = &mut self.segments[intersection.0];
        segs.retain(|&(t, _)| t < from);
        segs.push((from, control));
    }

    pub fn control_at(&self, intersection: IntersectionId, time: u32) -> &SignalControl {
        let segs = &self.segments[intersection.0];
        let idx = segs.partition_point(|&(t, _)| t <= time);
        &segs[idx.saturating_sub(1)].1
    }

    pub fn is_green(&self, intersection: IntersectionId, phase: Phase, time: u32) -> bool {
        self.control_at(intersection, time).is_green(phase, time)
    }

    fn is_start(&self, intersection: IntersectionId, phase: Phase, time: u32) -> bool {
        self.is_green(intersection, phase, time)
            && (time == 0 || !self.is_green(intersection, phase, time - 1))
    }

    /// Latest instant `<= t` at which the phase turned green.
    pub fn latest_green_start(
        &self,
        intersection: IntersectionId,
        phase: Phase,
        t: u32,
    ) -> Option<u32> {
        (0..=t).rev().find(|&tau| self.is_start(intersection, phase, tau))
    }

    /// Earliest green start in `(after, until]`.
    pub fn first_green_start_between(
        &self,
        intersection: IntersectionId,
        phase: Phase,
        after: u32,
        until: u32,
    ) -> Option<u32> {
        (after.saturating_add(1)..=until).find(|&tau| self.is_start(intersection, phase, tau))
    }

    /// Copy holding only segments that started at or before `t`.
    pub fn truncated(&self, t: u32) -> SignalHistory {
        SignalHistory {
            segments: self
                .segments
                .iter()
                .map(|segs| segs.iter().filter(|&&(s, _)| s <= t).copied().collect())
                .collect(),
        }
    }
}

/// One vehicle's stay on one link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkVisit {
    pub vehicle: usize,
    pub entry_s: u32,
    pub exit_s: Option<u32>,
    /// Movement at the downstream end; `None` on the final (exit) link.
    pub movement: Option<Movement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleStatus {
    Pending,
    OnNetwork,
    Arrived,
}

#[derive(Debug, Clone)]
pub struct VehicleRecord {
    pub id: String,
    pub origin: TazId,
    pub destination: TazId,
    pub departure_s: u32,
    pub route: Arc<Route>,
    pub status: VehicleStatus,
    /// Index of the current link within the route.
    position: usize,
    /// Index into each visited link's log, per route position.
    visits: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleCounts {
    pub pending: usize,
    pub on_network: usize,
    pub arrived: usize,
}

impl VehicleCounts {
    pub fn total(&self) -> usize {
        self.pending + self.on_network + self.arrived
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub vehicle_id: String,
    pub link_id: String,
    pub entry_time_s: u32,
    pub exit_time_s: Option<u32>,
    pub movement: String,
}

#[derive(Debug, Clone, Default)]
struct LinkState {
    /// (first whole second at which the vehicle reaches the queue, vehicle)
    traveling: VecDeque<(u32, usize)>,
    queues: [VecDeque<usize>; 3],
    occupancy: usize,
    capacity: usize,
    free_flow_s: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Discharge {
    credit: f64,
    was_green: bool,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    topology: Arc<NetworkTopology>,
    config: SimConfig,
    now: u32,
    vehicles: Vec<VehicleRecord>,
    /// Vehicle indices in departure order.
    departures: Vec<usize>,
    next_departure: usize,
    waiting: Vec<VecDeque<usize>>,
    links: Vec<LinkState>,
    discharge: Vec<[Discharge; 3]>,
    logs: Vec<Vec<LinkVisit>>,
    history: SignalHistory,
    counts: VehicleCounts,
    vehicle_seconds: u64,
}

impl Simulation {
    pub fn new(
        topology: Arc<NetworkTopology>,
        config: SimConfig,
        controls: Vec<SignalControl>,
        trips: &[Trip],
    ) -> Result<Self, SimError> {
        config.validate()?;
        let m = topology.intersection_count();
        if controls.len() != m {
            return Err(SimError::ControlCount {
                expected: m,
                got: controls.len(),
            });
        }

        let mut routes: HashMap<(TazId, TazId), Arc<Route>> = HashMap::new();
        let mut vehicles = Vec::with_capacity(trips.len());
        for trip in trips {
            let route = match routes.get(&(trip.origin, trip.destination)) {
                Some(r) => r.clone(),
                None => {
                    let r = Arc::new(topology.shortest_route(trip.origin, trip.destination)?);
                    routes.insert((trip.origin, trip.destination), r.clone());
                    r
                }
            };
            vehicles.push(VehicleRecord {
                id: trip.id.clone(),
                origin: trip.origin,
                destination: trip.destination,
                departure_s: trip.departure_s,
                route,
                status: VehicleStatus::Pending,
                position: 0,
                visits: Vec::new(),
            });
        }
        let mut departures: Vec<usize> = (0..vehicles.len()).collect();
        departures.sort_by(|&a, &b| {
            (vehicles[a].departure_s, &vehicles[a].id).cmp(&(vehicles[b].departure_s, &vehicles[b].id))
        });

        let links = topology
            .links
            .iter()
            .map(|l| LinkState {
                capacity: config.storage_capacity(l.length_m),
                free_flow_s: l.free_flow_time_s(),
                ..LinkState::default()
            })
            .collect();
        let n_links = topology.links.len();
        let counts = VehicleCounts {
            pending: vehicles.len(),
            on_network: 0,
            arrived: 0,
        };

        Ok(Simulation {
            topology,
            config,
            now: 0,
            vehicles,
            departures,
            next_departure: 0,
            waiting: vec![VecDeque::new(); n_links],
            links,
            discharge: vec![[Discharge::default(); 3]; n_links],
            logs: vec![Vec::new(); n_links],
            history: SignalHistory::new(controls),
            counts,
            vehicle_seconds: 0,
        })
    }

    pub fn now(&self) -> u32 {
        self.now
    }

    pub fn topology(&self) -> &Arc<NetworkTopology> {
        &self.topology
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn history(&self) -> &SignalHistory {
        &self.history
    }

    pub fn vehicles(&self) -> &[VehicleRecord] {
        &self.vehicles
    }

    pub fn snapshot_counts(&self) -> VehicleCounts {
        self.counts
    }

    /// Recount statuses from the vehicle table.
    pub fn audit_counts(&self) -> VehicleCounts {
        let mut c = VehicleCounts {
            pending: 0,
            on_network: 0,
            arrived: 0,
        };
        for v in &self.vehicles {
            match v.status {
                VehicleStatus::Pending => c.pending += 1,
                VehicleStatus::OnNetwork => c.on_network += 1,
                VehicleStatus::Arrived => c.arrived += 1,
            }
        }
        c
    }

    /// Cumulative vehicle-seconds spent on the network since time 0.
    pub fn vehicle_seconds_on_network(&self) -> u64 {
        self.vehicle_seconds
    }

    pub fn link_log(&self, link: LinkId) -> &[LinkVisit] {
        &self.logs[link.0]
    }

    pub fn link_occupancy(&self, link: LinkId) -> usize {
        self.links[link.0].occupancy
    }

    pub fn link_capacity(&self, link: LinkId) -> usize {
        self.links[link.0].capacity
    }

    /// Vehicles stopped in a movement queue at the downstream end of a link.
    pub fn queue_len(&self, link: LinkId, movement: Movement) -> usize {
        self.links[link.0].queues[movement.index()].len()
    }

    /// Sets the control of an intersection from `from` onward.
    pub fn set_control(
        &mut self,
        intersection: IntersectionId,
        from: u32,
        control: SignalControl,
    ) -> Result<(), SimError> {
        if intersection.0 >= self.topology.intersection_count() {
            return Err(SimError::UnknownIntersection(intersection.0));
        }
        if from < self.now {
            return Err(SimError::TimeInPast {
                now: self.now,
                requested: from,
            });
        }
        self.history.set(intersection, from, control);
        Ok(())
    }

    /// Installs a new plan at the first cycle boundary at or after now.
    /// Returns the activation time.
    pub fn schedule_plan(
        &mut self,
        intersection: IntersectionId,
        plan: SignalPlan,
    ) -> Result<u32, SimError> {
        let at = plan.next_cycle_start(self.now);
        self.set_control(intersection, at, SignalControl::Plan(plan))?;
        Ok(at)
    }

    pub fn run_until(&mut self, t: u32) -> Result<(), SimError> {
        if t < self.now {
            return Err(SimError::TimeInPast {
                now: self.now,
                requested: t,
            });
        }
        while self.now < t {
            self.step();
        }
        Ok(())
    }

    /// Advance one second.
    pub fn step(&mut self) {
        let now = self.now;
        self.inject(now);
        self.arrive_at_queues(now);
        self.discharge_green(now);
        self.vehicle_seconds += self.counts.on_network as u64;
        self.now += 1;
    }

    fn inject(&mut self, now: u32) {
        while let Some(&v) = self.departures.get(self.next_departure) {
            if self.vehicles[v].departure_s > now {
                break;
            }
            let first = self.vehicles[v].route.links[0];
            self.waiting[first.0].push_back(v);
            self.next_departure += 1;
        }
        for link in 0..self.waiting.len() {
            while let Some(&v) = self.waiting[link].front() {
                if self.links[link].occupancy >= self.links[link].capacity {
                    break;
                }
                self.waiting[link].pop_front();
                self.enter_link(v, LinkId(link), now);
                self.vehicles[v].status = VehicleStatus::OnNetwork;
                self.counts.pending -= 1;
                self.counts.on_network += 1;
            }
        }
    }

    fn enter_link(&mut self, v: usize, link: LinkId, now: u32) {
        let position = self.vehicles[v].position;
        let movement = self.vehicles[v].route.movement_after(position);
        self.logs[link.0].push(LinkVisit {
            vehicle: v,
            entry_s: now,
            exit_s: None,
            movement,
        });
        self.vehicles[v].visits.push(self.logs[link.0].len() - 1);
        let state = &mut self.links[link.0];
        let ready = (now as f64 + state.free_flow_s - 1e-9).ceil() as u32;
        state.traveling.push_back((ready, v));
        state.occupancy += 1;
    }

    fn exit_link(&mut self, v: usize, link: LinkId, now: u32) {
        let visit = *self.vehicles[v].visits.last().expect("vehicle is on a link");
        self.logs[link.0][visit].exit_s = Some(now);
        self.links[link.0].occupancy -= 1;
    }

    fn arrive_at_queues(&mut self, now: u32) {
        for link in 0..self.links.len() {
            while let Some(&(ready, v)) = self.links[link].traveling.front() {
                if ready > now {
                    break;
                }
                self.links[link].traveling.pop_front();
                let position = self.vehicles[v].position;
                match self.vehicles[v].route.movement_after(position) {
                    Some(m) => self.links[link].queues[m.index()].push_back(v),
                    None => {
                        // End of the exit link: the trip is complete.
                        self.exit_link(v, LinkId(link), now);
                        self.vehicles[v].status = VehicleStatus::Arrived;
                        self.counts.on_network -= 1;
                        self.counts.arrived += 1;
                    }
                }
            }
        }
    }

    fn discharge_green(&mut self, now: u32) {
        let topology = self.topology.clone();
        let rate = self.config.saturation_flow_per_lane;
        for i in 0..topology.intersection_count() {
            let node = IntersectionId(i);
            let control = *self.history.control_at(node, now);
            for &link_id in topology.incoming(node) {
                let spec = topology.link(link_id);
                if let LinkKind::Exit(_) = spec.kind {
                    continue;
                }
                for movement in Movement::ALL {
                    let phase = Phase::serving(spec.orientation.axis(), movement);
                    let slot = &mut self.discharge[link_id.0][movement.index()];
                    if !control.is_green(phase, now) {
                        slot.was_green = false;
                        slot.credit = 0.0;
                        continue;
                    }
                    if !slot.was_green {
                        slot.was_green = true;
                        slot.credit = 0.0;
                    }
                    slot.credit += rate * spec.lanes.for_movement(movement) as f64;
                    self.serve_queue(link_id, movement, now);
                }
            }
        }
    }

    fn serve_queue(&mut self, link_id: LinkId, movement: Movement, now: u32) {
        let mi = movement.index();
        loop {
            if self.discharge[link_id.0][mi].credit < 1.0 - 1e-9 {
                return;
            }
            let Some(&v) = self.links[link_id.0].queues[mi].front() else {
                break;
            };
            let position = self.vehicles[v].position;
            let next = self.vehicles[v].route.links[position + 1];
            let receiving = &self.links[next.0];
            if receiving.occupancy >= receiving.capacity {
                break;
            }
            self.links[link_id.0].queues[mi].pop_front();
            self.exit_link(v, link_id, now);
            self.vehicles[v].position += 1;
            self.enter_link(v, next, now);
            self.discharge[link_id.0][mi].credit -= 1.0;
        }
        // Idle or blocked service does not bank more than one vehicle.
        let slot = &mut self.discharge[link_id.0][mi];
        slot.credit = slot.credit.min(1.0);
    }

    /// Per-link visits of one vehicle, in route order: (link, entry, exit).
    pub fn vehicle_visits(&self, v: usize) -> Vec<(LinkId, u32, Option<u32>)> {
        let rec = &self.vehicles[v];
        rec.visits
            .iter()
            .enumerate()
            .map(|(k, &idx)| {
                let link = rec.route.links[k];
                let visit = &self.logs[link.0][idx];
                (link, visit.entry_s, visit.exit_s)
            })
            .collect()
    }

    /// Trajectory rows ordered by link id, then entry order.
    pub fn trajectory_rows(&self) -> Vec<TrajectoryRow> {
        let mut rows = Vec::new();
        for (link, log) in self.logs.iter().enumerate() {
            let label = self.topology.link_label(LinkId(link));
            for visit in log {
                rows.push(TrajectoryRow {
                    vehicle_id: self.vehicles[visit.vehicle].id.clone(),
                    link_id: label.clone(),
                    entry_time_s: visit.entry_s,
                    exit_time_s: visit.exit_s,
                    movement: visit.movement.map_or("exit", Movement::as_str).to_string(),
                });
            }
        }
        rows
    }

    /// Writes the trajectory log as CSV, preceded by a `# format_version` line.
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> Result<(), SimError> {
        writeln!(out, "# format_version: 1")?;
        let mut w = csv::Writer::from_writer(out);
        for row in self.trajectory_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
