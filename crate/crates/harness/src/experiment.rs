//! Training runs, fluctuation sweeps and histogram emission.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tsc_core::agents::{
    run_episode, Agent, FeedbackAgent, FixedTimeAgent, GreedyPolicy, TdAgent, TdCheckpoint,
};
use tsc_core::env::TscEnv;
use tsc_core::rng::{derive_seed, streams};

use crate::bridge::{RemoteAgent, RemoteDescriptor};
use crate::config::{AgentKind, LoadedExperiment, FORMAT_VERSION};
use crate::error::{HarnessError, Result};

pub const HISTOGRAM_BIN_WIDTH: u32 = 5;
pub const HISTOGRAM_BINS: usize = 10;

pub const CURVE_FILE: &str = "learning_curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const QUEUE_FILE: &str = "queues.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARISON_FILE: &str = "comparison.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| HarnessError::io(path, e))
}

fn version_line(w: &mut impl Write, path: &Path) -> Result<()> {
    writeln!(w, "# format_version: {FORMAT_VERSION}").map_err(|e| HarnessError::io(path, e))
}

/// Seed of the `index`-th training episode.
pub fn train_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, streams::TRAIN_EPISODE, index as u64)
}

/// Seed of evaluation repeat `repeat`; shared across ratios and agents so
/// comparisons use common random numbers.
pub fn eval_seed(master: u64, repeat: usize) -> u64 {
    derive_seed(master, streams::EVAL_REPEAT, repeat as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub seed: u64,
    pub total_reward: f64,
    pub mean_loss: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<CurveRow>,
    pub curve_path: PathBuf,
    pub checkpoint_path: Option<PathBuf>,
}

/// Builds a non-learning agent for evaluation.
pub fn build_eval_agent(
    kind: AgentKind,
    env: &TscEnv,
    checkpoint: Option<&Path>,
) -> Result<Box<dyn Agent + Send>> {
    let cfg = env.config();
    Ok(match kind {
        AgentKind::Fixed => Box::new(FixedTimeAgent),
        AgentKind::Feedback => Box::new(FeedbackAgent::new(
            env.topology().clone(),
            cfg.timing,
            cfg.reward.q_lc,
            cfg.reward.q_ub,
        )),
        AgentKind::Td => {
            let path = checkpoint.ok_or(HarnessError::MissingCheckpoint("td"))?;
            let ck = TdCheckpoint::load(path)?;
            let net = ck.network()?;
            let spaces = env.spaces();
            if net.input_len() != spaces.state_shape[0] * spaces.state_shape[1]
                || net.output_len() != spaces.action_count
            {
                return Err(HarnessError::Config(format!(
                    "checkpoint layers {:?} do not fit a {}x{} grid",
                    net.sizes(),
                    spaces.state_shape[0],
                    spaces.state_shape[1]
                )));
            }
            Box::new(GreedyPolicy::new(net))
        }
        AgentKind::Remote => {
            let path = checkpoint.ok_or(HarnessError::MissingCheckpoint("remote"))?;
            let desc = RemoteDescriptor::load(path)?;
            Box::new(RemoteAgent::connect(&desc.address)?)
        }
    })
}

/// Trains the configured agent on the unfluctuated demand.
pub fn train(exp: &LoadedExperiment, out_dir: &Path) -> Result<TrainOutcome> {
    let cfg = &exp.config;
    create_dir(out_dir)?;
    let mut env = TscEnv::new(exp.env_config(None)?)?;
    let m = env.topology().intersection_count();
    let mut td = None;
    let mut other: Option<Box<dyn Agent + Send>> = None;
    match cfg.agent {
        AgentKind::Td => {
            td = Some(TdAgent::new(
                m,
                cfg.td.clone(),
                derive_seed(cfg.master_seed, streams::AGENT, 0),
            )?)
        }
        AgentKind::Remote => return Err(HarnessError::NotLearnable("remote")),
        kind => other = Some(build_eval_agent(kind, &env, None)?),
    }

    let mut curve = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let seed = train_seed(cfg.master_seed, episode);
        let (trace, epsilon) = match td.as_mut() {
            Some(agent) => {
                let eps = agent.epsilon();
                (run_episode(&mut env, agent, seed, true), Some(eps))
            }
            None => (run_episode(&mut env, other.as_deref_mut().unwrap(), seed, true), None),
        };
        let trace = trace.map_err(|e| HarnessError::from(e).context(format!("training episode {episode}")))?;
        let mean_loss = if trace.losses.is_empty() {
            None
        } else {
            Some(trace.losses.iter().sum::<f64>() / trace.losses.len() as f64)
        };
        curve.push(CurveRow {
            episode,
            seed,
            total_reward: trace.total_reward(),
            mean_loss,
            epsilon,
        });
    }

    let curve_path = out_dir.join(CURVE_FILE);
    let mut file = create_file(&curve_path)?;
    version_line(&mut file, &curve_path)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["episode", "seed", "total_reward", "mean_loss", "epsilon"])?;
    for row in &curve {
        w.write_record([
            row.episode.to_string(),
            row.seed.to_string(),
            row.total_reward.to_string(),
            row.mean_loss.map(|v| v.to_string()).unwrap_or_default(),
            row.epsilon.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(&curve_path, e))?;

    let checkpoint_path = match td {
        Some(agent) if cfg.episodes > 0 => {
            let path = out_dir.join(CHECKPOINT_FILE);
            agent.checkpoint().save(&path)?;
            Some(path)
        }
        _ => None,
    };
    Ok(TrainOutcome {
        curve,
        curve_path,
        checkpoint_path,
    })
}

/// One evaluation episode's per-step queues.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub agent: AgentKind,
    pub ratio: f64,
    pub repeat: usize,
    pub seed: u64,
    pub links: Vec<String>,
    /// `queues[step][link]`.
    pub queues: Vec<Vec<u32>>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    pub observations: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    /// Share of observations with `q >= q_hc`.
    pub heavy_share: f64,
}

impl QueueStats {
    pub fn from_values(values: &[u32], q_hc: f64) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let mean = if n == 0 {
            0.0
        } else {
            sorted.iter().map(|&q| q as f64).sum::<f64>() / n as f64
        };
        QueueStats {
            observations: n,
            mean,
            median: percentile(&sorted, 0.5),
            p95: percentile(&sorted, 0.95),
            heavy_share: if n == 0 {
                0.0
            } else {
                sorted.iter().filter(|&&q| q as f64 >= q_hc).count() as f64 / n as f64
            },
        }
    }
}

/// Linear interpolation between closest ranks.
fn percentile(sorted: &[u32], p: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0] as f64,
        n => {
            let pos = p * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub agent: AgentKind,
    pub ratio: f64,
    pub repeat: usize,
    pub seed: u64,
    pub total_reward: f64,
    pub mean_queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub agent: AgentKind,
    pub ratio: f64,
    pub repeats: usize,
    pub stats: QueueStats,
    pub histogram: Vec<usize>,
    pub episode_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub master_seed: u64,
    pub agents: Vec<AgentKind>,
    pub ratios: Vec<f64>,
    pub repeats: usize,
    pub links_in_scope: Vec<String>,
    pub steps_per_episode: usize,
    pub histogram_bin_width: u32,
    pub groups: Vec<GroupSummary>,
    pub episodes: Vec<EpisodeSummary>,
}

impl RunSummary {
    pub fn group(&self, agent: AgentKind, ratio: f64) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.agent == agent && g.ratio == ratio)
    }
}

/// Histogram over `[0,5), [5,10), ..., [45,50]`; values above 50 land in the
/// last bin.
pub fn histogram(values: impl IntoIterator<Item = u32>) -> Vec<usize> {
    let mut bins = vec![0; HISTOGRAM_BINS];
    for q in values {
        let idx = ((q / HISTOGRAM_BIN_WIDTH) as usize).min(HISTOGRAM_BINS - 1);
        bins[idx] += 1;
    }
    bins
}

fn bin_bounds(i: usize) -> (u32, u32) {
    let lo = i as u32 * HISTOGRAM_BIN_WIDTH;
    (lo, lo + HISTOGRAM_BIN_WIDTH)
}

fn run_job(
    exp: &LoadedExperiment,
    agent: AgentKind,
    ratio: f64,
    repeat: usize,
    checkpoint: Option<&Path>,
) -> Result<EpisodeRecord> {
    let seed = eval_seed(exp.config.master_seed, repeat);
    let mut env = TscEnv::new(exp.env_config(Some(ratio))?)?;
    let mut policy = build_eval_agent(agent, &env, checkpoint)?;
    let trace = run_episode(&mut env, policy.as_mut(), seed, false).map_err(|e| {
        HarnessError::from(e).context(format!("{} ratio {ratio} repeat {repeat}", agent.as_str()))
    })?;
    let links = env
        .weighted_links()
        .iter()
        .map(|&(l, _)| env.topology().link_label(l))
        .collect();
    Ok(EpisodeRecord {
        agent,
        ratio,
        repeat,
        seed,
        links,
        queues: trace.queues,
        rewards: trace.rewards,
    })
}

/// Runs every (agent, ratio, repeat) episode. The baseline runs alongside the
/// configured agent unless they coincide.
pub fn run_sweep(exp: &LoadedExperiment, checkpoint: Option<&Path>) -> Result<Vec<EpisodeRecord>> {
    let cfg = &exp.config;
    if cfg.agent.needs_checkpoint() && checkpoint.is_none() {
        return Err(HarnessError::MissingCheckpoint(cfg.agent.as_str()));
    }
    let mut agents = vec![cfg.baseline];
    if cfg.agent != cfg.baseline {
        agents.push(cfg.agent);
    }
    let jobs: Vec<(AgentKind, f64, usize)> = agents
        .iter()
        .flat_map(|&a| {
            cfg.fluctuation_ratios
                .iter()
                .flat_map(move |&r| (0..cfg.repeats).map(move |k| (a, r, k)))
        })
        .collect();
    let mut records = if cfg.agent == AgentKind::Remote {
        jobs.iter()
            .map(|&(a, r, k)| run_job(exp, a, r, k, checkpoint))
            .collect::<Result<Vec<_>>>()?
    } else {
        jobs.par_iter()
            .map(|&(a, r, k)| run_job(exp, a, r, k, checkpoint))
            .collect::<Result<Vec<_>>>()?
    };
    records.sort_by(|a, b| {
        a.agent
            .cmp(&b.agent)
            .then(a.ratio.total_cmp(&b.ratio))
            .then(a.repeat.cmp(&b.repeat))
    });
    Ok(records)
}

pub fn summarize(exp: &LoadedExperiment, records: &[EpisodeRecord]) -> RunSummary {
    let cfg = &exp.config;
    let mut grouped: BTreeMap<(AgentKind, u64), Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.agent, r.ratio.to_bits())).or_default().push(r);
    }
    let mut groups: Vec<GroupSummary> = grouped
        .into_values()
        .map(|recs| {
            let values: Vec<u32> = recs.iter().flat_map(|r| r.queues.iter().flatten().copied()).collect();
            GroupSummary {
                agent: recs[0].agent,
                ratio: recs[0].ratio,
                repeats: recs.len(),
                stats: QueueStats::from_values(&values, cfg.reward.q_hc),
                histogram: histogram(values.iter().copied()),
                episode_rewards: recs.iter().map(|r| r.rewards.iter().sum()).collect(),
            }
        })
        .collect();
    groups.sort_by(|a, b| a.agent.cmp(&b.agent).then(a.ratio.total_cmp(&b.ratio)));
    let episodes = records
        .iter()
        .map(|r| {
            let n = r.queues.iter().map(Vec::len).sum::<usize>().max(1);
            EpisodeSummary {
                agent: r.agent,
                ratio: r.ratio,
                repeat: r.repeat,
                seed: r.seed,
                total_reward: r.rewards.iter().sum(),
                mean_queue: r.queues.iter().flatten().map(|&q| q as f64).sum::<f64>() / n as f64,
            }
        })
        .collect();
    let mut agents: Vec<AgentKind> = records.iter().map(|r| r.agent).collect();
    agents.dedup();
    RunSummary {
        format_version: FORMAT_VERSION,
        master_seed: cfg.master_seed,
        agents,
        ratios: cfg.fluctuation_ratios.clone(),
        repeats: cfg.repeats,
        links_in_scope: records.first().map(|r| r.links.clone()).unwrap_or_default(),
        steps_per_episode: cfg.steps_per_episode,
        histogram_bin_width: HISTOGRAM_BIN_WIDTH,
        groups,
        episodes,
    }
}

fn write_queue_table(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut file = create_file(path)?;
    version_line(&mut file, path)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["agent", "ratio", "repeat", "seed", "step", "link", "q"])?;
    for r in records {
        for (step, row) in r.queues.iter().enumerate() {
            for (link, q) in r.links.iter().zip(row) {
                w.write_record([
                    r.agent.as_str().to_string(),
                    r.ratio.to_string(),
                    r.repeat.to_string(),
                    r.seed.to_string(),
                    (step + 1).to_string(),
                    link.clone(),
                    q.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn write_histogram_rows(path: &Path, groups: &[(String, String, Vec<usize>)]) -> Result<()> {
    let mut file = create_file(path)?;
    version_line(&mut file, path)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["agent", "ratio", "bin_lo", "bin_hi", "count"])?;
    for (agent, ratio, bins) in groups {
        for (i, count) in bins.iter().enumerate() {
            let (lo, hi) = bin_bounds(i);
            w.write_record([agent.clone(), ratio.clone(), lo.to_string(), hi.to_string(), count.to_string()])?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn write_comparison(path: &Path, summary: &RunSummary, baseline: AgentKind, agent: AgentKind) -> Result<()> {
    let mut file = create_file(path)?;
    version_line(&mut file, path)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "ratio",
        "baseline",
        "agent",
        "baseline_mean",
        "agent_mean",
        "relative_reduction",
        "baseline_heavy_share",
        "agent_heavy_share",
        "baseline_mean_reward",
        "agent_mean_reward",
    ])?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    for &ratio in &summary.ratios {
        let (Some(b), Some(a)) = (summary.group(baseline, ratio), summary.group(agent, ratio)) else {
            continue;
        };
        let reduction = if b.stats.mean > 0.0 {
            (b.stats.mean - a.stats.mean) / b.stats.mean
        } else {
            0.0
        };
        w.write_record([
            ratio.to_string(),
            baseline.as_str().to_string(),
            agent.as_str().to_string(),
            b.stats.mean.to_string(),
            a.stats.mean.to_string(),
            reduction.to_string(),
            b.stats.heavy_share.to_string(),
            a.stats.heavy_share.to_string(),
            mean(&b.episode_rewards).to_string(),
            mean(&a.episode_rewards).to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Full evaluation sweep plus every output file.
pub fn evaluate(exp: &LoadedExperiment, checkpoint: Option<&Path>, out_dir: &Path) -> Result<RunSummary> {
    let records = run_sweep(exp, checkpoint)?;
    create_dir(out_dir)?;
    let summary = summarize(exp, &records);
    write_queue_table(&out_dir.join(QUEUE_FILE), &records)?;
    let hist_rows: Vec<(String, String, Vec<usize>)> = summary
        .groups
        .iter()
        .map(|g| (g.agent.as_str().to_string(), g.ratio.to_string(), g.histogram.clone()))
        .collect();
    write_histogram_rows(&out_dir.join(HISTOGRAM_FILE), &hist_rows)?;
    let summary_path = out_dir.join(SUMMARY_FILE);
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(&summary_path, json).map_err(|e| HarnessError::io(&summary_path, e))?;
    write_comparison(
        &out_dir.join(COMPARISON_FILE),
        &summary,
        exp.config.baseline,
        exp.config.agent,
    )?;
    Ok(summary)
}

#[derive(Debug, Deserialize)]
struct QueueRow {
    agent: String,
    ratio: String,
    q: u32,
}

/// Re-bins a queue table per (agent, ratio).
pub fn histogram_from_table(input: &Path, output: &Path) -> Result<Vec<(String, String, Vec<usize>)>> {
    let file = fs::File::open(input).map_err(|e| HarnessError::io(input, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    // Groups keep the order in which they first appear in the table.
    let mut groups: Vec<(String, String, Vec<u32>)> = Vec::new();
    for row in rdr.deserialize::<QueueRow>() {
        let row = row.map_err(|e| HarnessError::from(e).context(input.display().to_string()))?;
        match groups.iter_mut().find(|(a, r, _)| *a == row.agent && *r == row.ratio) {
            Some(g) => g.2.push(row.q),
            None => groups.push((row.agent, row.ratio, vec![row.q])),
        }
    }
    if groups.is_empty() {
        return Err(HarnessError::EmptyTable(input.to_path_buf()));
    }
    let rows: Vec<(String, String, Vec<usize>)> = groups
        .into_iter()
        .map(|(a, r, v)| (a, r, histogram(v)))
        .collect();
    write_histogram_rows(output, &rows)?;
    Ok(rows)
}
