//! Single-agent environment over the whole grid.
//!
//! Observation: `M x M` matrix, splits normalized to `[0, 1]` on the diagonal,
//! link queues over `q_ub` at `(upstream, downstream)`, zero elsewhere.
//! Action: `a in [0, 3M)` picks intersection `a / 3` and split change
//! `[-step, 0, +step][a % 3]`. Reward: piecewise queue penalty summed over the
//! inter-intersection links.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{fluctuate, generate, DemandError, FluctuationSpec, OdMatrix};
use crate::queue::{estimate_queue, QueueError};
use crate::rng::{derive_seed, streams};
use crate::signal::{PhaseTiming, SignalError, SignalPlan, SplitDelta};
use crate::sim::{SignalControl, SimConfig, SimError, Simulation};
use crate::topology::{
    IntersectionId, LinkId, NetworkConfig, NetworkTopology, Orientation, TopologyError,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action {action} out of range [0, {count})")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("step called before reset")]
    NotReset,
    #[error("episode already truncated after {0} steps")]
    EpisodeFinished(usize),
    #[error("no queue for link {0}")]
    MissingQueue(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Light-congestion threshold, vehicles.
    pub q_lc: f64,
    /// Heavy-congestion threshold, vehicles.
    pub q_hc: f64,
    /// Multiplier applied under heavy congestion.
    pub w_cp: f64,
    /// Weight on interval vehicle-hours; 0 disables the travel-time term.
    pub w_t: f64,
    /// Queue upper bound used for clamping and normalization.
    pub q_ub: u32,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            q_lc: 10.0,
            q_hc: 25.0,
            w_cp: 10.0,
            w_t: 0.0,
            q_ub: 50,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0 < self.q_lc && self.q_lc < self.q_hc && self.q_hc < self.q_ub as f64) {
            return Err(EnvError::Config("reward thresholds need 0 < q_lc < q_hc < q_ub".into()));
        }
        if !(self.w_cp >= 1.0) {
            return Err(EnvError::Config("w_cp must be at least 1".into()));
        }
        if !(self.w_t >= 0.0) {
            return Err(EnvError::Config("w_t must be non-negative".into()));
        }
        Ok(())
    }
}

/// Reward of a single link. Bands are `[0, q_lc)` free, `[q_lc, q_hc)` light,
/// `[q_hc, inf)` heavy.
pub fn link_reward(q: f64, weight: f64, params: &RewardParams) -> f64 {
    if q < params.q_lc {
        0.0
    } else if q < params.q_hc {
        -(weight * q)
    } else {
        -(params.w_cp * weight * q)
    }
}

/// Sum of link rewards minus `w_t * travel_time_veh_h`. Returns the total and
/// the per-link terms in `weighted_links` order.
pub fn regional_reward(
    weighted_links: &[(LinkId, f64)],
    queues: &BTreeMap<LinkId, u32>,
    params: &RewardParams,
    travel_time_veh_h: f64,
) -> Result<(f64, Vec<f64>), EnvError> {
    let mut per_link = Vec::with_capacity(weighted_links.len());
    for &(link, weight) in weighted_links {
        let q = queues
            .get(&link)
            .ok_or_else(|| EnvError::MissingQueue(link.to_string()))?;
        per_link.push(link_reward(*q as f64, weight, params));
    }
    let total = per_link.iter().sum::<f64>() - params.w_t * travel_time_veh_h;
    Ok((total, per_link))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkWeighting {
    /// Every inter-intersection link weighs 1.
    Uniform,
    /// Links opposing the main flow weigh 0, all others 1.
    MainFlow(Orientation),
    /// Weights by link label (`0>1`); unlisted links weigh 1.
    Explicit(BTreeMap<String, f64>),
}

impl LinkWeighting {
    pub fn weight(&self, topology: &NetworkTopology, link: LinkId) -> f64 {
        match self {
            LinkWeighting::Uniform => 1.0,
            LinkWeighting::MainFlow(main) => {
                if topology.link(link).orientation == main.opposite() {
                    0.0
                } else {
                    1.0
                }
            }
            LinkWeighting::Explicit(map) => *map.get(&topology.link_label(link)).unwrap_or(&1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMatrix {
    size: usize,
    values: Vec<f64>,
}

impl StateMatrix {
    pub fn zeros(size: usize) -> Self {
        StateMatrix {
            size,
            values: vec![0.0; size * size],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let size = rows.len();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>();
        assert_eq!(values.len(), size * size, "state matrix must be square");
        StateMatrix { size, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.size + col] = value;
    }

    /// Row-major values, length `M^2`.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.size.max(1)).map(|r| r.to_vec()).collect()
    }
}

/// Builds the observation from splits and per-link queues.
pub fn encode_state(
    topology: &NetworkTopology,
    splits: &[u32],
    queues: &BTreeMap<LinkId, u32>,
    timing: &PhaseTiming,
    q_ub: u32,
) -> StateMatrix {
    let m = topology.intersection_count();
    let mut state = StateMatrix::zeros(m);
    for (i, &s) in splits.iter().enumerate().take(m) {
        state.set(i, i, timing.normalize_split(s));
    }
    for &link in topology.internal_links() {
        let spec = topology.link(link);
        let q = queues.get(&link).copied().unwrap_or(0).min(q_ub);
        state.set(spec.from.0, spec.to.0, q as f64 / q_ub as f64);
    }
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionCode(pub usize);

impl ActionCode {
    pub fn encode(intersection: IntersectionId, delta: SplitDelta) -> Self {
        ActionCode(intersection.0 * 3 + delta.index())
    }

    /// The no-op: hold intersection 0.
    pub fn noop() -> Self {
        ActionCode(1)
    }

    pub fn decode(self, intersections: usize) -> Result<(IntersectionId, SplitDelta), EnvError> {
        let count = 3 * intersections;
        if self.0 >= count {
            return Err(EnvError::ActionOutOfRange {
                action: self.0,
                count,
            });
        }
        Ok((IntersectionId(self.0 / 3), SplitDelta::ALL[self.0 % 3]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spaces {
    pub state_shape: [usize; 2],
    pub action_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step_index: usize,
    pub sim_time_s: u32,
    /// Raw queue per in-scope link label, vehicles.
    pub queues: BTreeMap<String, u32>,
    pub link_rewards: BTreeMap<String, f64>,
    pub splits: Vec<u32>,
    pub interval_travel_time_veh_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub state: StateMatrix,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub network: NetworkConfig,
    pub timing: PhaseTiming,
    pub initial_split_s: u32,
    /// Per-intersection offsets; empty means all zero.
    pub offsets_s: Vec<u32>,
    pub sim: SimConfig,
    pub reward: RewardParams,
    pub link_weighting: LinkWeighting,
    pub demand: OdMatrix,
    /// Inference-time demand fluctuation; `None` or 0 leaves demand unchanged.
    pub fluctuation_ratio: Option<f64>,
    pub warmup_s: u32,
    pub control_interval_s: u32,
    pub steps_per_episode: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            network: NetworkConfig::default(),
            timing: PhaseTiming::default(),
            initial_split_s: 50,
            offsets_s: Vec::new(),
            sim: SimConfig::default(),
            reward: RewardParams::default(),
            link_weighting: LinkWeighting::Uniform,
            demand: OdMatrix::default(),
            fluctuation_ratio: None,
            warmup_s: 1800,
            control_interval_s: 100,
            steps_per_episode: 144,
        }
    }
}

impl EnvConfig {
    pub fn horizon_s(&self) -> u32 {
        self.warmup_s + self.control_interval_s * self.steps_per_episode as u32
    }
}

pub struct TscEnv {
    config: EnvConfig,
    topology: Arc<NetworkTopology>,
    weighted_links: Vec<(LinkId, f64)>,
    sim: Option<Simulation>,
    plans: Vec<SignalPlan>,
    step_index: usize,
}

impl TscEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        let topology = Arc::new(config.network.build()?);
        config.timing.validate()?;
        config.reward.validate()?;
        config.sim.validate()?;
        let m = topology.intersection_count();
        if !config.offsets_s.is_empty() && config.offsets_s.len() != m {
            return Err(EnvError::Config(format!(
                "{} offsets for {m} intersections",
                config.offsets_s.len()
            )));
        }
        SignalPlan::new(config.timing, 0, config.initial_split_s)?;
        if config.control_interval_s == 0 || config.steps_per_episode == 0 {
            return Err(EnvError::Config("control interval and episode length must be positive".into()));
        }
        if let Some(r) = config.fluctuation_ratio {
            if r != 0.0 {
                FluctuationSpec::new(r, 0)?;
            }
        }
        config.demand.validate(&topology, config.horizon_s())?;
        let weighted_links = topology
            .internal_links()
            .iter()
            .map(|&l| (l, config.link_weighting.weight(&topology, l)))
            .collect();
        Ok(TscEnv {
            config,
            topology,
            weighted_links,
            sim: None,
            plans: Vec::new(),
            step_index: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn topology(&self) -> &Arc<NetworkTopology> {
        &self.topology
    }

    pub fn spaces(&self) -> Spaces {
        let m = self.topology.intersection_count();
        Spaces {
            state_shape: [m, m],
            action_count: 3 * m,
        }
    }

    /// In-scope links with their reward weights.
    pub fn weighted_links(&self) -> &[(LinkId, f64)] {
        &self.weighted_links
    }

    pub fn simulation(&self) -> Option<&Simulation> {
        self.sim.as_ref()
    }

    pub fn splits(&self) -> Vec<u32> {
        self.plans.iter().map(|p| p.split_s()).collect()
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_truncated(&self) -> bool {
        self.sim.is_some() && self.step_index >= self.config.steps_per_episode
    }

    pub fn set_fluctuation(&mut self, ratio: Option<f64>) -> Result<(), EnvError> {
        if let Some(r) = ratio {
            if r != 0.0 {
                FluctuationSpec::new(r, 0)?;
            }
        }
        self.config.fluctuation_ratio = ratio;
        Ok(())
    }

    /// Fresh episode: demand drawn (and fluctuated, if configured) from
    /// `seed`, warm-up run with every split at its initial value.
    pub fn reset(&mut self, seed: u64) -> Result<StateMatrix, EnvError> {
        let cfg = &self.config;
        let mut trips = generate(&cfg.demand, &self.topology, derive_seed(seed, streams::DEMAND, 0))?;
        if let Some(ratio) = cfg.fluctuation_ratio.filter(|&r| r > 0.0) {
            let spec = FluctuationSpec::new(ratio, derive_seed(seed, streams::FLUCTUATION, 0))?;
            trips = fluctuate(&trips, &cfg.demand, &spec).0;
        }
        let m = self.topology.intersection_count();
        self.plans = (0..m)
            .map(|i| {
                let offset = cfg.offsets_s.get(i).copied().unwrap_or(0);
                SignalPlan::new(cfg.timing, offset, cfg.initial_split_s)
            })
            .collect::<Result<_, _>>()?;
        let controls = self.plans.iter().map(|&p| SignalControl::Plan(p)).collect();
        let mut sim = Simulation::new(self.topology.clone(), cfg.sim, controls, &trips)?;
        sim.run_until(cfg.warmup_s)?;
        self.sim = Some(sim);
        self.step_index = 0;
        let queues = self.current_queues()?;
        Ok(encode_state(
            &self.topology,
            &self.splits(),
            &queues,
            &self.config.timing,
            self.config.reward.q_ub,
        ))
    }

    fn current_queues(&self) -> Result<BTreeMap<LinkId, u32>, EnvError> {
        let sim = self.sim.as_ref().ok_or(EnvError::NotReset)?;
        let mut out = BTreeMap::new();
        for &(link, _) in &self.weighted_links {
            let rec = estimate_queue(
                &self.topology,
                link,
                sim.now(),
                sim.link_log(link),
                sim.history(),
                self.config.reward.q_ub,
            )?;
            out.insert(link, rec.q);
        }
        Ok(out)
    }

    pub fn step(&mut self, action: ActionCode) -> Result<StepResult, EnvError> {
        if self.sim.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.step_index >= self.config.steps_per_episode {
            return Err(EnvError::EpisodeFinished(self.step_index));
        }
        let m = self.topology.intersection_count();
        let (intersection, delta) = action.decode(m)?;

        let plan = self.plans[intersection.0].apply_delta(delta);
        self.plans[intersection.0] = plan;
        let interval = self.config.control_interval_s;
        let sim = self.sim.as_mut().expect("checked above");
        sim.schedule_plan(intersection, plan)?;
        let before = sim.vehicle_seconds_on_network();
        let target = sim.now() + interval;
        sim.run_until(target)?;
        let travel_time_veh_h = (sim.vehicle_seconds_on_network() - before) as f64 / 3600.0;

        let queues = self.current_queues()?;
        let (reward, per_link) =
            regional_reward(&self.weighted_links, &queues, &self.config.reward, travel_time_veh_h)?;
        self.step_index += 1;
        let splits = self.splits();
        let state = encode_state(
            &self.topology,
            &splits,
            &queues,
            &self.config.timing,
            self.config.reward.q_ub,
        );
        let info = StepInfo {
            step_index: self.step_index,
            sim_time_s: target,
            queues: queues
                .iter()
                .map(|(&l, &q)| (self.topology.link_label(l), q))
                .collect(),
            link_rewards: self
                .weighted_links
                .iter()
                .zip(per_link)
                .map(|(&(l, _), r)| (self.topology.link_label(l), r))
                .collect(),
            splits,
            interval_travel_time_veh_h: travel_time_veh_h,
        };
        Ok(StepResult {
            state,
            reward,
            terminated: false,
            truncated: self.step_index == self.config.steps_per_episode,
            info,
        })
    }
}
