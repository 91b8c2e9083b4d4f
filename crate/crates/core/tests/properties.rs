use std::sync::Arc;

use proptest::prelude::*;
use tsc_core::agents::{run_episode, FixedTimeAgent};
use tsc_core::demand::{generate, OdEntry, OdMatrix};
use tsc_core::env::{link_reward, ActionCode, EnvConfig, RewardParams, TscEnv};
use tsc_core::queue::{estimate_from_sim, estimate_queue};
use tsc_core::signal::{PhaseTiming, SignalPlan, SplitDelta};
use tsc_core::sim::{SignalControl, SimConfig, Simulation};
use tsc_core::topology::{IntersectionId, NetworkConfig, NetworkTopology, TazId};

fn network(rows: usize, cols: usize) -> NetworkConfig {
    NetworkConfig {
        grid_rows: rows,
        grid_cols: cols,
        ..NetworkConfig::default()
    }
}

fn random_od(topo: &NetworkTopology, counts: &[u32]) -> OdMatrix {
    let n = topo.tazs.len();
    let mut entries = Vec::new();
    let mut k = 0;
    for o in 0..n {
        for d in 0..n {
            if o == d {
                continue;
            }
            let count = counts[k % counts.len()];
            k += 1;
            if count > 0 {
                entries.push(OdEntry {
                    origin: TazId(o),
                    destination: TazId(d),
                    count,
                    window_start_s: 0,
                    window_end_s: 16200,
                });
            }
        }
    }
    OdMatrix { entries }
}

fn adjacent(cols: usize, i: usize, j: usize) -> bool {
    (i / cols).abs_diff(j / cols) + (i % cols).abs_diff(j % cols) == 1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn state_bounded_and_zero_off_adjacency(
        rows in 1usize..=3,
        cols in 1usize..=3,
        counts in prop::collection::vec(0u32..600, 8),
        actions in prop::collection::vec(0usize..27, 30),
        seed in any::<u64>(),
    ) {
        let cfg = network(rows, cols);
        let topo = cfg.build().unwrap();
        let m = rows * cols;
        let mut env = TscEnv::new(EnvConfig {
            network: cfg,
            demand: random_od(&topo, &counts),
            ..EnvConfig::default()
        })
        .unwrap();
        let mut state = env.reset(seed).unwrap();
        for a in actions {
            for i in 0..m {
                for j in 0..m {
                    let v = state.get(i, j);
                    prop_assert!((0.0..=1.0).contains(&v));
                    if i != j && !adjacent(cols, i, j) {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
            let before = env.splits();
            let r = env.step(ActionCode(a % (3 * m))).unwrap();
            let changed = before.iter().zip(&r.info.splits).filter(|(a, b)| a != b).count();
            prop_assert!(changed <= 1);
            state = r.state;
        }
    }

    #[test]
    fn counts_conserved_every_second(
        counts in prop::collection::vec(0u32..300, 6),
        split in 15u32..=35,
        seed in any::<u64>(),
    ) {
        let topo = Arc::new(network(2, 2).build().unwrap());
        let trips = generate(&random_od(&topo, &counts), &topo, seed).unwrap();
        let plan = SignalPlan::new(PhaseTiming::default(), 0, split * 2).unwrap();
        let mut sim = Simulation::new(topo.clone(), SimConfig::default(), vec![SignalControl::Plan(plan); 4], &trips).unwrap();
        for _ in 0..4000 {
            sim.step();
            let c = sim.snapshot_counts();
            prop_assert_eq!(c, sim.audit_counts());
            prop_assert_eq!(c.total(), trips.len());
        }
    }

    #[test]
    fn estimates_ignore_the_future_and_respect_the_bound(
        counts in prop::collection::vec(0u32..500, 10),
        seed in any::<u64>(),
        k in 1u32..40,
        later in 1u32..1000,
        ub_low in 0u32..60,
        ub_extra in 0u32..60,
    ) {
        let topo = Arc::new(network(3, 3).build().unwrap());
        let trips = generate(&random_od(&topo, &counts), &topo, seed).unwrap();
        let plan = SignalPlan::new(PhaseTiming::default(), 0, 50).unwrap();
        let mut sim = Simulation::new(topo.clone(), SimConfig::default(), vec![SignalControl::Plan(plan); 9], &trips).unwrap();
        let t = 100 * k;
        sim.run_until(t).unwrap();
        let now: Vec<u32> = topo.internal_links().iter().map(|&l| estimate_from_sim(&sim, l, 1000).unwrap().q).collect();
        let low: Vec<u32> = topo.internal_links().iter().map(|&l| estimate_from_sim(&sim, l, ub_low).unwrap().q).collect();
        let high: Vec<u32> = topo.internal_links().iter().map(|&l| estimate_from_sim(&sim, l, ub_low + ub_extra).unwrap().q).collect();
        for (a, b) in low.iter().zip(&high) {
            prop_assert!(a <= b);
            prop_assert!(*a <= ub_low);
        }
        sim.run_until(t + later).unwrap();
        for (i, &l) in topo.internal_links().iter().enumerate() {
            let replay = estimate_queue(&topo, l, t, sim.link_log(l), &sim.history().truncated(t), 1000).unwrap();
            prop_assert_eq!(replay.q, now[i]);
        }
    }

    #[test]
    fn link_reward_non_increasing(w in 0.0f64..3.0, q in 0.0f64..200.0, dq in 0.0f64..50.0) {
        let p = RewardParams::default();
        prop_assert!(link_reward(q + dq, w, &p) <= link_reward(q, w, &p));
    }

    #[test]
    fn action_codes_round_trip(m in 1usize..=16, i in 0usize..16, d in 0usize..3) {
        let i = i % m;
        let delta = [SplitDelta::Decrease, SplitDelta::Hold, SplitDelta::Increase][d];
        let code = ActionCode::encode(IntersectionId(i), delta);
        prop_assert!(code.0 < 3 * m);
        prop_assert_eq!(code.decode(m).unwrap(), (IntersectionId(i), delta));
    }
}

fn congested_env() -> TscEnv {
    let cfg = network(2, 2);
    let topo = cfg.build().unwrap();
    TscEnv::new(EnvConfig {
        network: cfg,
        demand: random_od(&topo, &[400, 0, 250, 900, 0, 120]),
        fluctuation_ratio: Some(0.2),
        ..EnvConfig::default()
    })
    .unwrap()
}

#[test]
fn null_policy_leaves_splits_alone() {
    let mut env = congested_env();
    let trace = run_episode(&mut env, &mut FixedTimeAgent, 9, false).unwrap();
    assert_eq!(trace.rewards.len(), 144);
    assert_eq!(trace.final_splits, vec![50; 4]);
}

#[test]
fn episodes_replay_identically() {
    let mut a = congested_env();
    let mut b = congested_env();
    let ta = run_episode(&mut a, &mut FixedTimeAgent, 31, false).unwrap();
    let tb = run_episode(&mut b, &mut FixedTimeAgent, 31, false).unwrap();
    assert_eq!(ta, tb);
    let tc = run_episode(&mut a, &mut FixedTimeAgent, 32, false).unwrap();
    assert_ne!(ta.queues, tc.queues);
}

#[test]
fn split_walks_stay_inside_bounds() {
    let mut env = congested_env();
    env.reset(4).unwrap();
    let mut last = Vec::new();
    for step in 0..144 {
        let r = env.step(ActionCode(if step % 2 == 0 { 2 } else { 5 })).unwrap();
        last = r.info.splits;
    }
    assert_eq!(last[0], 70);
    assert_eq!(last[1], 70);
    assert_eq!(&last[2..], &[50, 50]);
}
