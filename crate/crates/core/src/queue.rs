//! Link queue length from trajectory records.
//!
//! At control time `t`, the queue on a link between two signalized
//! intersections counts straight-bound vehicles (straight at the downstream
//! node) that entered before `t_u`, the latest start `<= t` of the upstream
//! green feeding the link's through movement, and that either
//!
//! * exited in `(t_d, t]`, where `t_d` is the first downstream through-green
//!   start strictly after `t_u`, or
//! * are still on the link at `t`.
//!
//! Only events observed up to `t` are read: an entry after `t` is ignored and
//! an exit after `t` counts as still on the link.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::splitmix64;
use crate::signal::Phase;
use crate::sim::{LinkVisit, SignalHistory, Simulation, VehicleRecord};
use crate::topology::{IntersectionId, LinkId, Movement, NetworkTopology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("link {0} does not join two signalized intersections")]
    NotInternal(String),
    #[error("probe penetration must lie in (0, 1], got {0}")]
    BadPenetration(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueRecord {
    pub link: LinkId,
    pub control_time_s: u32,
    pub q: u32,
    /// No upstream or downstream green has been observed yet.
    pub insufficient_history: bool,
}

/// Raw (unclamped) two-group count plus the anchors it used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueCount {
    pub upstream_green_start: Option<u32>,
    pub downstream_green_start: Option<u32>,
    pub remaining: usize,
    pub passed: usize,
}

impl QueueCount {
    pub fn total(&self) -> usize {
        self.remaining + self.passed
    }
}

fn through_phase(topology: &NetworkTopology, link: LinkId) -> Phase {
    Phase::serving(topology.link(link).orientation.axis(), Movement::Straight)
}

/// Two-group vehicle count for one link at time `t`, before clamping. The
/// observation sees events up to second `t - 1`, as a simulation clock at `t` does.
pub fn count_queue(
    topology: &NetworkTopology,
    link: LinkId,
    t: u32,
    visits: &[LinkVisit],
    history: &SignalHistory,
    include: impl Fn(&LinkVisit) -> bool,
) -> Result<QueueCount, QueueError> {
    let spec = topology.link(link);
    if !spec.is_internal() {
        return Err(QueueError::NotInternal(topology.link_label(link)));
    }
    let phase = through_phase(topology, link);
    let upstream = IntersectionId(spec.from.0);
    let downstream = IntersectionId(spec.to.0);

    let Some(t_u) = history.latest_green_start(upstream, phase, t) else {
        return Ok(QueueCount {
            upstream_green_start: None,
            downstream_green_start: None,
            remaining: 0,
            passed: 0,
        });
    };
    let t_d = history.first_green_start_between(downstream, phase, t_u, t);

    let mut remaining = 0;
    let mut passed = 0;
    for v in visits {
        if v.movement != Some(Movement::Straight) || v.entry_s >= t_u || v.entry_s > t {
            continue;
        }
        if !include(v) {
            continue;
        }
        match v.exit_s.filter(|&e| e < t) {
            None => remaining += 1,
            Some(exit) => {
                if t_d.map_or(false, |d| exit > d) {
                    passed += 1;
                }
            }
        }
    }
    Ok(QueueCount {
        upstream_green_start: Some(t_u),
        downstream_green_start: t_d,
        remaining,
        passed,
    })
}

/// Queue length on `link` at control time `t`, clamped to `q_ub`.
pub fn estimate_queue(
    topology: &NetworkTopology,
    link: LinkId,
    t: u32,
    visits: &[LinkVisit],
    history: &SignalHistory,
    q_ub: u32,
) -> Result<QueueRecord, QueueError> {
    let count = count_queue(topology, link, t, visits, history, |_| true)?;
    Ok(QueueRecord {
        link,
        control_time_s: t,
        q: (count.total() as u32).min(q_ub),
        insufficient_history: count.upstream_green_start.is_none(),
    })
}

/// Convenience wrapper reading trajectories straight from a simulation.
pub fn estimate_from_sim(sim: &Simulation, link: LinkId, q_ub: u32) -> Result<QueueRecord, QueueError> {
    estimate_queue(
        sim.topology(),
        link,
        sim.now(),
        sim.link_log(link),
        sim.history(),
        q_ub,
    )
}

/// Ground truth: vehicles currently stopped in the link's straight queue.
pub fn oracle_queue(sim: &Simulation, link: LinkId) -> usize {
    sim.queue_len(link, Movement::Straight)
}

/// Keeps a deterministic pseudo-random subset of vehicles as probes and scales
/// their count back up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeFilter {
    penetration: f64,
    pub seed: u64,
}

impl ProbeFilter {
    pub fn new(penetration: f64, seed: u64) -> Result<Self, QueueError> {
        if !(penetration > 0.0 && penetration <= 1.0) {
            return Err(QueueError::BadPenetration(penetration));
        }
        Ok(ProbeFilter { penetration, seed })
    }

    pub fn penetration(&self) -> f64 {
        self.penetration
    }

    pub fn is_probe(&self, vehicle_id: &str) -> bool {
        let mut h = self.seed;
        for b in vehicle_id.bytes() {
            h = splitmix64(h ^ b as u64);
        }
        ((h >> 11) as f64 / (1u64 << 53) as f64) < self.penetration
    }

    pub fn estimate(
        &self,
        topology: &NetworkTopology,
        link: LinkId,
        t: u32,
        visits: &[LinkVisit],
        history: &SignalHistory,
        vehicles: &[VehicleRecord],
        q_ub: u32,
    ) -> Result<QueueRecord, QueueError> {
        let count = count_queue(topology, link, t, visits, history, |v| {
            self.is_probe(&vehicles[v.vehicle].id)
        })?;
        let scaled = (count.total() as f64 / self.penetration).round() as u32;
        Ok(QueueRecord {
            link,
            control_time_s: t,
            q: scaled.min(q_ub),
            insufficient_history: count.upstream_green_start.is_none(),
        })
    }
}
