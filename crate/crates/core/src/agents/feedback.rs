use std::sync::Arc;

use super::{Agent, AgentError};
use crate::env::{ActionCode, StateMatrix};
use crate::signal::{PhaseTiming, SplitDelta};
use crate::topology::{Axis, IntersectionId, LinkId, NetworkTopology};

/// Relieves the most congested link by starving its inflow or feeding its
/// outflow, one split step at a time.
///
/// East-west links are fed by the upstream EW green and drained by the
/// downstream EW green, so `+split` upstream or `-split` downstream helps.
/// North-south links invert both signs.
#[derive(Debug, Clone)]
pub struct FeedbackAgent {
    topology: Arc<NetworkTopology>,
    timing: PhaseTiming,
    q_lc: f64,
    q_ub: u32,
}

impl FeedbackAgent {
    pub fn new(topology: Arc<NetworkTopology>, timing: PhaseTiming, q_lc: f64, q_ub: u32) -> Self {
        FeedbackAgent {
            topology,
            timing,
            q_lc,
            q_ub,
        }
    }

    fn split_of(&self, state: &StateMatrix, i: usize) -> u32 {
        let range = (self.timing.split_max_s - self.timing.split_min_s) as f64;
        self.timing.split_min_s + (state.get(i, i) * range).round() as u32
    }

    fn queue_of(&self, state: &StateMatrix, link: LinkId) -> u32 {
        let spec = self.topology.link(link);
        (state.get(spec.from.0, spec.to.0) * self.q_ub as f64).round() as u32
    }

    /// Seconds of travel left before `delta` would hit its bound.
    fn headroom(&self, split: u32, delta: SplitDelta) -> u32 {
        match delta {
            SplitDelta::Increase => self.timing.split_max_s.saturating_sub(split),
            SplitDelta::Decrease => split.saturating_sub(self.timing.split_min_s),
            SplitDelta::Hold => 0,
        }
    }

    pub fn decide(&self, state: &StateMatrix) -> ActionCode {
        let mut worst: Option<(LinkId, u32)> = None;
        for &link in self.topology.internal_links() {
            let q = self.queue_of(state, link);
            if worst.map_or(true, |(_, best)| q > best) {
                worst = Some((link, q));
            }
        }
        let Some((link, q)) = worst else {
            return ActionCode::noop();
        };
        if (q as f64) < self.q_lc {
            return ActionCode::noop();
        }
        let spec = self.topology.link(link);
        let (up_delta, down_delta) = match spec.orientation.axis() {
            Axis::EastWest => (SplitDelta::Increase, SplitDelta::Decrease),
            Axis::NorthSouth => (SplitDelta::Decrease, SplitDelta::Increase),
        };
        let up = spec.from.0;
        let down = spec.to.0;
        let up_room = self.headroom(self.split_of(state, up), up_delta);
        let down_room = self.headroom(self.split_of(state, down), down_delta);
        if up_room == 0 && down_room == 0 {
            ActionCode::noop()
        } else if up_room >= down_room {
            ActionCode::encode(IntersectionId(up), up_delta)
        } else {
            ActionCode::encode(IntersectionId(down), down_delta)
        }
    }
}

impl Agent for FeedbackAgent {
    fn act(&mut self, state: &StateMatrix) -> Result<ActionCode, AgentError> {
        Ok(self.decide(state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::encode_state;
    use crate::topology::build_grid;
    use std::collections::BTreeMap;

    fn agent() -> FeedbackAgent {
        let t = Arc::new(build_grid(3, 3, 300.0, 13.89).unwrap());
        FeedbackAgent::new(t, PhaseTiming::default(), 10.0, 50)
    }

    fn state(a: &FeedbackAgent, splits: &[u32], queues: &[(usize, usize, u32)]) -> StateMatrix {
        let q: BTreeMap<LinkId, u32> = queues
            .iter()
            .map(|&(i, j, q)| (a.topology.link_at_cell(i, j).unwrap(), q))
            .collect();
        encode_state(&a.topology, splits, &q, &a.timing, 50)
    }

    #[test]
    fn calm_network_does_nothing() {
        let a = agent();
        assert_eq!(a.decide(&state(&a, &[50; 9], &[])), ActionCode(1));
        assert_eq!(a.decide(&state(&a, &[50; 9], &[(0, 1, 9)])), ActionCode(1));
    }

    #[test]
    fn eastbound_congestion_raises_upstream_split() {
        let a = agent();
        let s = state(&a, &[50; 9], &[(0, 1, 30)]);
        assert_eq!(a.decide(&s), ActionCode::encode(IntersectionId(0), SplitDelta::Increase));
    }

    #[test]
    fn pinned_upstream_switches_to_downstream() {
        let a = agent();
        let mut splits = [50; 9];
        splits[0] = 70;
        let s = state(&a, &splits, &[(0, 1, 30)]);
        assert_eq!(a.decide(&s), ActionCode::encode(IntersectionId(1), SplitDelta::Decrease));
        splits[1] = 30;
        let s = state(&a, &splits, &[(0, 1, 30)]);
        assert_eq!(a.decide(&s), ActionCode(1));
    }

    #[test]
    fn southbound_congestion_inverts_deltas() {
        let a = agent();
        let s = state(&a, &[50; 9], &[(1, 4, 20), (0, 1, 12)]);
        assert_eq!(a.decide(&s), ActionCode::encode(IntersectionId(1), SplitDelta::Decrease));
        let mut splits = [50; 9];
        splits[1] = 36;
        let s = state(&a, &splits, &[(1, 4, 20)]);
        assert_eq!(a.decide(&s), ActionCode::encode(IntersectionId(4), SplitDelta::Increase));
    }

    #[test]
    fn ties_go_to_smallest_link_id() {
        let a = agent();
        let s = state(&a, &[50; 9], &[(4, 5, 20), (0, 1, 20)]);
        let first = a
            .topology
            .internal_links()
            .iter()
            .copied()
            .filter(|&l| {
                let sp = a.topology.link(l);
                (sp.from.0, sp.to.0) == (0, 1) || (sp.from.0, sp.to.0) == (4, 5)
            })
            .min()
            .unwrap();
        let up = a.topology.link(first).from.0;
        assert_eq!(a.decide(&s), ActionCode::encode(IntersectionId(up), SplitDelta::Increase));
    }
}
