//! Fixed-sequence four-phase signal plans with a single adjustable split.
//!
//! The cycle runs P1 (north-south straight/right), P2 (north-south left),
//! P3 (east-west straight/right), P4 (east-west left); every phase is followed by
//! yellow plus all-red clearance. The split is the north-south green time,
//! `green(P1) + green(P2)`, clearances excluded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Axis, Movement};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("split {split}s outside [{min}, {max}]")]
    SplitOutOfBounds { split: u32, min: u32, max: u32 },
    #[error("phase timing leaves a non-positive green for {0:?}")]
    NonPositiveGreen(Phase),
    #[error("invalid phase timing: {0}")]
    BadTiming(&'static str),
    #[error("empty window [{0}, {1})")]
    EmptyWindow(u32, u32),
}

/// Cycle constants shared by every intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub cycle_s: u32,
    pub left_phase_s: u32,
    pub yellow_s: u32,
    pub all_red_s: u32,
    pub split_min_s: u32,
    pub split_max_s: u32,
    pub split_step_s: u32,
}

impl Default for PhaseTiming {
    fn default() -> Self {
        PhaseTiming {
            cycle_s: 100,
            left_phase_s: 8,
            yellow_s: 2,
            all_red_s: 2,
            split_min_s: 30,
            split_max_s: 70,
            split_step_s: 2,
        }
    }
}

impl PhaseTiming {
    pub fn clearance_s(&self) -> u32 {
        self.yellow_s + self.all_red_s
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.cycle_s == 0 {
            return Err(SignalError::BadTiming("cycle must be positive"));
        }
        if self.split_min_s > self.split_max_s {
            return Err(SignalError::BadTiming("split_min_s exceeds split_max_s"));
        }
        if self.split_step_s == 0 {
            return Err(SignalError::BadTiming("split step must be positive"));
        }
        // Both bounds must leave every phase a positive green.
        for split in [self.split_min_s, self.split_max_s] {
            self.greens(split)?;
        }
        Ok(())
    }

    /// Green durations `[P1, P2, P3, P4]` for a split.
    fn greens(&self, split: u32) -> Result<[u32; 4], SignalError> {
        let p1 = split as i64 - self.left_phase_s as i64;
        let p3 = self.cycle_s as i64 - 4 * self.clearance_s() as i64 - split as i64
            - self.left_phase_s as i64;
        if self.left_phase_s == 0 {
            return Err(SignalError::NonPositiveGreen(Phase::NsLeft));
        }
        if p1 <= 0 {
            return Err(SignalError::NonPositiveGreen(Phase::NsThrough));
        }
        if p3 <= 0 {
            return Err(SignalError::NonPositiveGreen(Phase::EwThrough));
        }
        Ok([p1 as u32, self.left_phase_s, p3 as u32, self.left_phase_s])
    }

    /// Normalized split in `[0, 1]`.
    pub fn normalize_split(&self, split: u32) -> f64 {
        let span = (self.split_max_s - self.split_min_s) as f64;
        if span == 0.0 {
            0.0
        } else {
            (split.clamp(self.split_min_s, self.split_max_s) - self.split_min_s) as f64 / span
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// P1
    NsThrough,
    /// P2
    NsLeft,
    /// P3
    EwThrough,
    /// P4
    EwLeft,
}

impl Phase {
    pub const ORDER: [Phase; 4] = [Phase::NsThrough, Phase::NsLeft, Phase::EwThrough, Phase::EwLeft];

    /// Phase that serves a movement arriving on an approach of the given axis.
    /// Right turns run with the straight movement.
    pub fn serving(axis: Axis, movement: Movement) -> Phase {
        match (axis, movement) {
            (Axis::NorthSouth, Movement::Left) => Phase::NsLeft,
            (Axis::NorthSouth, _) => Phase::NsThrough,
            (Axis::EastWest, Movement::Left) => Phase::EwLeft,
            (Axis::EastWest, _) => Phase::EwThrough,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Phase::NsThrough => 0,
            Phase::NsLeft => 1,
            Phase::EwThrough => 2,
            Phase::EwLeft => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u32,
    pub end: u32,
}

impl Window {
    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, t: u32) -> bool {
        self.start <= t && t < self.end
    }
}

/// Green and clearance windows within one cycle, offsets relative to the cycle
/// start. `green[k]` is immediately followed by `clearance[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub cycle_s: u32,
    pub green: [Window; 4],
    pub clearance: [Window; 4],
}

impl PhaseSchedule {
    pub fn green_of(&self, phase: Phase) -> Window {
        self.green[phase.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitDelta {
    Decrease,
    Hold,
    Increase,
}

impl SplitDelta {
    pub const ALL: [SplitDelta; 3] = [SplitDelta::Decrease, SplitDelta::Hold, SplitDelta::Increase];

    pub fn signed(self, step: u32) -> i64 {
        match self {
            SplitDelta::Decrease => -(step as i64),
            SplitDelta::Hold => 0,
            SplitDelta::Increase => step as i64,
        }
    }

    pub fn index(self) -> usize {
        match self {
            SplitDelta::Decrease => 0,
            SplitDelta::Hold => 1,
            SplitDelta::Increase => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub timing: PhaseTiming,
    pub offset_s: u32,
    split_s: u32,
}

impl SignalPlan {
    pub fn new(timing: PhaseTiming, offset_s: u32, split_s: u32) -> Result<Self, SignalError> {
        timing.validate()?;
        if split_s < timing.split_min_s || split_s > timing.split_max_s {
            return Err(SignalError::SplitOutOfBounds {
                split: split_s,
                min: timing.split_min_s,
                max: timing.split_max_s,
            });
        }
        Ok(SignalPlan {
            timing,
            offset_s,
            split_s,
        })
    }

    pub fn split_s(&self) -> u32 {
        self.split_s
    }

    /// Returns the plan with its split moved by one step, clamped to the bounds.
    /// Every other parameter is unchanged.
    pub fn apply_delta(&self, delta: SplitDelta) -> SignalPlan {
        let t = &self.timing;
        let moved = self.split_s as i64 + delta.signed(t.split_step_s);
        let split_s = moved.clamp(t.split_min_s as i64, t.split_max_s as i64) as u32;
        SignalPlan { split_s, ..*self }
    }

    pub fn derive_schedule(&self) -> Result<PhaseSchedule, SignalError> {
        let t = &self.timing;
        if self.split_s < t.split_min_s || self.split_s > t.split_max_s {
            return Err(SignalError::SplitOutOfBounds {
                split: self.split_s,
                min: t.split_min_s,
                max: t.split_max_s,
            });
        }
        let greens = t.greens(self.split_s)?;
        let clear = t.clearance_s();
        let mut cursor = 0;
        let mut green = [Window { start: 0, end: 0 }; 4];
        let mut clearance = green;
        for k in 0..4 {
            green[k] = Window {
                start: cursor,
                end: cursor + greens[k],
            };
            cursor += greens[k];
            clearance[k] = Window {
                start: cursor,
                end: cursor + clear,
            };
            cursor += clear;
        }
        debug_assert_eq!(cursor, t.cycle_s);
        Ok(PhaseSchedule {
            cycle_s: t.cycle_s,
            green,
            clearance,
        })
    }

    /// Position of `time` within its cycle, offset applied.
    pub fn cycle_position(&self, time: u32) -> u32 {
        ((time as i64 - self.offset_s as i64).rem_euclid(self.timing.cycle_s as i64)) as u32
    }

    pub fn is_green(&self, phase: Phase, time: u32) -> bool {
        match self.derive_schedule() {
            Ok(s) => s.green_of(phase).contains(self.cycle_position(time)),
            Err(_) => false,
        }
    }

    /// First cycle boundary at or after `time`.
    pub fn next_cycle_start(&self, time: u32) -> u32 {
        let pos = self.cycle_position(time);
        if pos == 0 {
            time
        } else {
            time + (self.timing.cycle_s - pos)
        }
    }

    /// Absolute times in `[t0, t1)` at which the phase's green begins.
    pub fn green_starts(&self, phase: Phase, t0: u32, t1: u32) -> Result<Vec<u32>, SignalError> {
        if t1 <= t0 {
            return Err(SignalError::EmptyWindow(t0, t1));
        }
        let schedule = self.derive_schedule()?;
        let cycle = self.timing.cycle_s as i64;
        let first = self.offset_s as i64 + schedule.green_of(phase).start as i64;
        // Smallest k with first + k*cycle >= t0.
        let k0 = (t0 as i64 - first).div_euclid(cycle)
            + if (t0 as i64 - first).rem_euclid(cycle) == 0 { 0 } else { 1 };
        let mut out = Vec::new();
        let mut tau = first + k0 * cycle;
        while tau < t1 as i64 {
            out.push(tau as u32);
            tau += cycle;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(split: u32) -> SignalPlan {
        SignalPlan::new(PhaseTiming::default(), 0, split).unwrap()
    }

    #[test]
    fn schedule_at_default_split() {
        let s = plan(50).derive_schedule().unwrap();
        let lens: Vec<u32> = s.green.iter().map(|w| w.len()).collect();
        assert_eq!(lens, [42, 8, 26, 8]);
    }

    #[test]
    fn schedule_at_bounds() {
        let lo = plan(30).derive_schedule().unwrap();
        assert_eq!(lo.green_of(Phase::NsThrough).len(), 22);
        assert_eq!(lo.green_of(Phase::EwThrough).len(), 46);
        let hi = plan(70).derive_schedule().unwrap();
        assert_eq!(hi.green_of(Phase::NsThrough).len(), 62);
        assert_eq!(hi.green_of(Phase::EwThrough).len(), 6);
        assert!(hi.green.iter().all(|w| w.len() > 0));
    }

    #[test]
    fn windows_tile_the_cycle_for_every_even_split() {
        for split in (30..=70).step_by(2) {
            let s = plan(split).derive_schedule().unwrap();
            let mut cursor = 0;
            for k in 0..4 {
                assert_eq!(s.green[k].start, cursor);
                cursor = s.green[k].end;
                assert_eq!(s.clearance[k].start, cursor);
                assert_eq!(s.clearance[k].len(), 4);
                cursor = s.clearance[k].end;
            }
            assert_eq!(cursor, 100);
            let greens: u32 = s.green.iter().map(|w| w.len()).sum();
            assert_eq!(greens + 16, 100);
            assert_eq!(s.green[0].len() + s.green[1].len(), split);
        }
    }

    #[test]
    fn out_of_bounds_split_rejected() {
        assert!(matches!(
            SignalPlan::new(PhaseTiming::default(), 0, 72),
            Err(SignalError::SplitOutOfBounds { .. })
        ));
        assert!(SignalPlan::new(PhaseTiming::default(), 0, 28).is_err());
    }

    #[test]
    fn delta_steps_and_clamps() {
        assert_eq!(plan(50).apply_delta(SplitDelta::Increase).split_s(), 52);
        assert_eq!(plan(50).apply_delta(SplitDelta::Hold).split_s(), 50);
        assert_eq!(plan(70).apply_delta(SplitDelta::Increase).split_s(), 70);
        assert_eq!(plan(30).apply_delta(SplitDelta::Decrease).split_s(), 30);
        let p = SignalPlan::new(PhaseTiming::default(), 17, 50).unwrap();
        let q = p.apply_delta(SplitDelta::Decrease);
        assert_eq!(q.offset_s, 17);
        assert_eq!(q.timing, p.timing);
    }

    #[test]
    fn green_starts_each_cycle() {
        assert_eq!(
            plan(50).green_starts(Phase::NsThrough, 0, 300).unwrap(),
            [0, 100, 200]
        );
    }

    #[test]
    fn ew_through_starts_after_ns_phases_and_clearances() {
        let s = plan(50).derive_schedule().unwrap();
        // P1 42 + clr 4 + P2 8 + clr 4
        assert_eq!(s.green_of(Phase::EwThrough).start, 58);
        assert_eq!(plan(50).green_starts(Phase::EwThrough, 0, 100).unwrap(), [58]);
    }

    #[test]
    fn offset_shifts_starts() {
        let p = SignalPlan::new(PhaseTiming::default(), 30, 50).unwrap();
        assert_eq!(p.green_starts(Phase::NsThrough, 0, 300).unwrap(), [30, 130, 230]);
        assert_eq!(p.green_starts(Phase::EwThrough, 0, 100).unwrap(), [88]);
        assert_eq!(p.green_starts(Phase::NsLeft, 0, 100).unwrap(), [76]);
    }

    #[test]
    fn empty_window_rejected() {
        assert!(plan(50).green_starts(Phase::NsThrough, 10, 10).is_err());
    }

    #[test]
    fn is_green_agrees_with_schedule() {
        let p = plan(40);
        let s = p.derive_schedule().unwrap();
        for t in 0..300 {
            for phase in Phase::ORDER {
                assert_eq!(p.is_green(phase, t), s.green_of(phase).contains(t % 100));
            }
        }
    }

    #[test]
    fn next_cycle_start_rounds_up() {
        let p = SignalPlan::new(PhaseTiming::default(), 30, 50).unwrap();
        assert_eq!(p.next_cycle_start(30), 30);
        assert_eq!(p.next_cycle_start(31), 130);
        assert_eq!(p.next_cycle_start(0), 30);
    }

    #[test]
    fn serving_phase_per_movement() {
        assert_eq!(Phase::serving(Axis::EastWest, Movement::Straight), Phase::EwThrough);
        assert_eq!(Phase::serving(Axis::EastWest, Movement::Right), Phase::EwThrough);
        assert_eq!(Phase::serving(Axis::EastWest, Movement::Left), Phase::EwLeft);
        assert_eq!(Phase::serving(Axis::NorthSouth, Movement::Straight), Phase::NsThrough);
        assert_eq!(Phase::serving(Axis::NorthSouth, Movement::Left), Phase::NsLeft);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn delta() -> impl Strategy<Value = SplitDelta> {
            prop_oneof![
                Just(SplitDelta::Decrease),
                Just(SplitDelta::Hold),
                Just(SplitDelta::Increase)
            ]
        }

        proptest! {
            #[test]
            fn deltas_stay_in_bounds_and_even(seq in proptest::collection::vec(delta(), 0..200)) {
                let mut p = plan(50);
                for d in seq {
                    p = p.apply_delta(d);
                    prop_assert!((30..=70).contains(&p.split_s()));
                    prop_assert_eq!(p.split_s() % 2, 0);
                }
            }

            #[test]
            fn one_start_per_cycle_window(split in 15u32..=35, offset in 0u32..100, t in 0u32..10_000, phase_idx in 0usize..4) {
                let p = SignalPlan::new(PhaseTiming::default(), offset, split * 2).unwrap();
                let phase = Phase::ORDER[phase_idx];
                let starts = p.green_starts(phase, t, t + 100).unwrap();
                prop_assert_eq!(starts.len(), 1);
                prop_assert!(p.is_green(phase, starts[0]));
                prop_assert!(starts[0] == 0 || !p.is_green(phase, starts[0] - 1));
            }
        }
    }
}
