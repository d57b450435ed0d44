//! Agent variants, episode traces, suite evaluation and paired comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::expert::expert_act;
use crate::backbone::features::FeatureExtractor;
use crate::backbone::policy::{act, ActMode, BackboneParams};
use crate::backbone::resolve::resolve_action;
use crate::error::{Error, Result};
use crate::gate::{gate_forward, heuristic_gate, GateMode, GateParams, DEFAULT_TAU};
use crate::memory::{kept_percentage, Context, ContextBudget, MemoryEntry, MemoryStore};
use crate::memworld::action::ActionSpace;
use crate::memworld::env::Env;
use crate::memworld::task::{generate_task_with, GenParams};
use crate::memworld::types::{EpisodeConfig, Subset};
use crate::nn::rng::{derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    None,
    Simple,
    OfflineSupervised,
    OnlineRl,
    Complete,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::None,
        Variant::Simple,
        Variant::OfflineSupervised,
        Variant::OnlineRl,
        Variant::Complete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Simple => "simple",
            Variant::OfflineSupervised => "offline_supervised",
            Variant::OnlineRl => "online_rl",
            Variant::Complete => "complete",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s || v.name().replace('_', "-") == s)
    }

    pub fn needs_gate_checkpoint(self) -> bool {
        matches!(self, Variant::OfflineSupervised | Variant::OnlineRl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decode {
    #[default]
    ById,
    ByName,
}

/// Who picks actions: the learned head or the full-state expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Learned,
    Expert,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub variant: Variant,
    pub h: ContextBudget,
    pub decode: Decode,
    pub policy: PolicyKind,
    /// Novelty threshold of the heuristic gate.
    pub tau: f64,
    /// Penalty subtracted from the recorded reward on invalid actions.
    pub invalid_penalty: f64,
}

impl AgentConfig {
    pub fn new(variant: Variant) -> Self {
        AgentConfig {
            variant,
            h: ContextBudget::default(),
            decode: Decode::ById,
            policy: PolicyKind::Learned,
            tau: DEFAULT_TAU,
            invalid_penalty: 0.0,
        }
    }

    pub fn with_h(mut self, h: usize) -> Self {
        self.h = ContextBudget(h);
        self
    }
}

/// A configured agent with its parameters.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub backbone: BackboneParams,
    pub gate: Option<GateParams>,
}

impl Agent {
    pub fn new(config: AgentConfig, backbone: BackboneParams, gate: Option<GateParams>) -> Result<Self> {
        if config.variant.needs_gate_checkpoint() && gate.is_none() {
            return Err(Error::Usage(format!("variant {} needs a gate checkpoint", config.variant.name())));
        }
        if backbone.head.input_dim() != crate::backbone::FEATURE_DIM {
            return Err(Error::Checkpoint(format!(
                "backbone expects {} features, extractor produces {}",
                backbone.head.input_dim(),
                crate::backbone::FEATURE_DIM
            )));
        }
        if let Some(g) = &gate {
            if g.mlp.input_dim() != crate::backbone::FEATURE_DIM || g.mlp.output_dim() != 1 {
                return Err(Error::Checkpoint("gate dimensions do not match the feature extractor".into()));
            }
        }
        Ok(Agent { config, backbone, gate })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u32,
    pub obs_summary: String,
    pub action_id: usize,
    pub action_name: String,
    pub action_valid: bool,
    pub gate_p: f64,
    pub gate_b: bool,
    pub reward: f64,
    pub context_size: usize,
    pub store_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode_id: u64,
    pub subset: Subset,
    pub variant: Variant,
    pub success: bool,
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn total_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn kept(&self) -> usize {
        self.steps.iter().filter(|s| s.gate_b).count()
    }

    pub fn invalid_actions(&self) -> usize {
        self.steps.iter().filter(|s| !s.action_valid).count()
    }

    /// Kept percentage; `None` for the memoryless variant.
    pub fn kept_fraction(&self) -> Option<f64> {
        if self.variant == Variant::None || self.steps.is_empty() {
            return None;
        }
        kept_percentage(self.kept(), self.steps.len()).ok()
    }
}

fn choose_action(agent: &Agent, env: &Env, cfg: &EpisodeConfig, features: &crate::backbone::FeatureVector, rng: &mut Rng) -> Result<(usize, String)> {
    let space = ActionSpace::standard();
    match agent.config.policy {
        PolicyKind::Expert => {
            let id = expert_act(env.state(), &cfg.instruction)?;
            Ok((id, space.name(id).unwrap_or_default().to_string()))
        }
        PolicyKind::Learned => {
            let d = act(features, &agent.backbone, space, ActMode::Greedy, rng)?;
            let id = match agent.config.decode {
                Decode::ById => d.action_id,
                Decode::ByName => resolve_action(&d.action_name, space)?,
            };
            Ok((id, d.action_name))
        }
    }
}

/// Test-time loop: retrieve, embed, act (greedy), gate (threshold), insert, step.
pub fn run_episode(agent: &Agent, cfg: &EpisodeConfig, episode_id: u64, rng: &mut Rng) -> Result<EpisodeTrace> {
    let (mut env, mut obs) = Env::reset(cfg);
    let fx = FeatureExtractor::new(&cfg.instruction.text);
    let mut store = MemoryStore::new();
    let mut steps = Vec::with_capacity(cfg.max_steps as usize);
    while !env.is_over() {
        let ctx = match agent.config.variant {
            Variant::None => Context::empty(),
            _ => store.retrieve(fx.instruction_feature(), agent.config.h),
        };
        let context_size = ctx.len();
        let features = fx.embed(&obs, &ctx);
        drop(ctx);
        let (action_id, action_name) = choose_action(agent, &env, cfg, &features, rng)?;
        let (gate_p, gate_b) = match agent.config.variant {
            Variant::None => (0.0, false),
            Variant::Complete => (1.0, true),
            Variant::Simple => {
                let d = heuristic_gate(&features, &store, agent.config.tau);
                (d.p_hat, d.b)
            }
            Variant::OfflineSupervised | Variant::OnlineRl => {
                let gate = agent.gate.as_ref().expect("checked in Agent::new");
                let d = gate_forward(gate, &features, GateMode::Threshold, rng)?;
                (d.p_hat, d.b)
            }
        };
        let obs_summary = obs.state_summary.clone();
        let step = obs.step_index;
        store.maybe_insert(
            MemoryEntry {
                step_index: step,
                obs_summary: obs_summary.clone(),
                observation: obs,
                feature: features,
                action_id,
                action_name: action_name.clone(),
            },
            gate_b,
        )?;
        let res = env.step(action_id)?;
        let reward = shaped_reward(res.reward, res.action_valid, agent.config.invalid_penalty);
        steps.push(TraceStep {
            step,
            obs_summary,
            action_id,
            action_name,
            action_valid: res.action_valid,
            gate_p,
            gate_b,
            reward,
            context_size,
            store_size: store.len(),
        });
        obs = res.observation;
    }
    Ok(EpisodeTrace {
        episode_id,
        subset: cfg.instruction.subset,
        variant: agent.config.variant,
        success: env.succeeded(),
        steps,
    })
}

/// Sparse task reward plus the dense validity term, minus the optional penalty.
pub fn shaped_reward(sparse: f64, valid: bool, penalty: f64) -> f64 {
    if valid {
        sparse + 1.0
    } else {
        sparse - penalty
    }
}

/// A deterministic, paired task list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteTask {
    pub episode_id: u64,
    pub config: EpisodeConfig,
}

pub fn task_seed(seed: u64, subset: Subset, index: usize) -> u64 {
    derive_seed(derive_seed(seed, 0x5u64 << 32 | subset as u64), index as u64)
}

pub fn build_suite(subsets: &[Subset], episodes_per_subset: usize, seed: u64, params: &GenParams) -> Result<Vec<SuiteTask>> {
    let jobs: Vec<(u64, Subset, usize)> = subsets
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..episodes_per_subset).map(move |i| ((si * episodes_per_subset + i) as u64, *s, i)))
        .collect();
    jobs.par_iter()
        .map(|(id, s, i)| {
            Ok(SuiteTask {
                episode_id: *id,
                config: generate_task_with(*s, task_seed(seed, *s, *i), params)?,
            })
        })
        .collect()
}

pub fn run_suite(agent: &Agent, suite: &[SuiteTask], seed: u64) -> Result<Vec<EpisodeTrace>> {
    suite
        .par_iter()
        .map(|t| {
            let mut rng = Rng::new(derive_seed(seed, t.episode_id));
            run_episode(agent, &t.config, t.episode_id, &mut rng)
        })
        .collect()
}

/// 𝓦 = success · (1 − kept / 100), both in percent.
pub fn weighted_efficiency(success: f64, kept: f64) -> Result<f64> {
    for (name, v) in [("success", success), ("kept", kept)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} {v} outside [0, 100]")));
        }
    }
    Ok(success * (1.0 - kept / 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub subset: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub kept_fraction: Option<f64>,
    pub invalid_actions: f64,
    pub weighted_efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub seed: u64,
    pub subsets: Vec<SubsetMetrics>,
    /// Mean of the per-subset rows.
    pub average: SubsetMetrics,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn subset_metrics(name: &str, traces: &[&EpisodeTrace]) -> Result<SubsetMetrics> {
    let n = traces.len();
    let success = 100.0 * traces.iter().filter(|t| t.success).count() as f64 / n.max(1) as f64;
    let kept: Option<Vec<f64>> = traces.iter().map(|t| t.kept_fraction()).collect();
    let kept = kept.filter(|k| !k.is_empty()).map(|k| mean(&k));
    let invalid = mean(&traces.iter().map(|t| t.invalid_actions() as f64).collect::<Vec<_>>());
    Ok(SubsetMetrics {
        subset: name.into(),
        episodes: n,
        success_rate: success,
        kept_fraction: kept,
        invalid_actions: invalid,
        weighted_efficiency: kept.map(|k| weighted_efficiency(success, k)).transpose()?,
    })
}

/// Aggregate traces per subset (in first-appearance order) plus the average row.
pub fn metrics_from_traces(variant: Variant, seed: u64, traces: &[EpisodeTrace]) -> Result<MetricsReport> {
    let mut order: Vec<Subset> = Vec::new();
    for t in traces {
        if !order.contains(&t.subset) {
            order.push(t.subset);
        }
    }
    let mut rows = Vec::new();
    for s in &order {
        let group: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.subset == *s).collect();
        rows.push(subset_metrics(s.name(), &group)?);
    }
    let avg_opt = |f: &dyn Fn(&SubsetMetrics) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = rows.iter().map(f).collect();
        v.filter(|v| !v.is_empty()).map(|v| mean(&v))
    };
    let average = SubsetMetrics {
        subset: "average".into(),
        episodes: rows.iter().map(|r| r.episodes).sum(),
        success_rate: mean(&rows.iter().map(|r| r.success_rate).collect::<Vec<_>>()),
        kept_fraction: avg_opt(&|r| r.kept_fraction),
        invalid_actions: mean(&rows.iter().map(|r| r.invalid_actions).collect::<Vec<_>>()),
        weighted_efficiency: avg_opt(&|r| r.weighted_efficiency),
    };
    Ok(MetricsReport {
        variant,
        seed,
        subsets: rows,
        average,
    })
}

pub fn evaluate(
    agent: &Agent,
    subsets: &[Subset],
    episodes_per_subset: usize,
    seed: u64,
    params: &GenParams,
) -> Result<(MetricsReport, Vec<EpisodeTrace>)> {
    if episodes_per_subset == 0 {
        return Err(Error::InvalidArgument("episodes_per_subset must be at least 1".into()));
    }
    let suite = build_suite(subsets, episodes_per_subset, seed, params)?;
    let traces = run_suite(agent, &suite, seed)?;
    Ok((metrics_from_traces(agent.config.variant, seed, &traces)?, traces))
}

/// Exact two-sided sign test on `wins` vs `losses` discordant pairs.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    // Sum C(n, i) / 2^n in log space to stay finite for large n.
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_c = 0.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_c + ln_half_n).exp();
    }
    (2.0 * tail).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub subset: String,
    pub success_diff: f64,
    pub a_only: usize,
    pub b_only: usize,
    pub p_value: f64,
}

/// Paired per-subset success comparison of agent `a` against agent `b`.
pub fn compare_traces(a_name: &str, a: &[EpisodeTrace], b_name: &str, b: &[EpisodeTrace]) -> Result<Vec<PairComparison>> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.episode_id != y.episode_id) {
        return Err(Error::InvalidArgument("trace sets are not paired".into()));
    }
    let mut order: Vec<Subset> = Vec::new();
    for t in a {
        if !order.contains(&t.subset) {
            order.push(t.subset);
        }
    }
    let mut out = Vec::new();
    let mut row = |label: &str, pairs: Vec<(&EpisodeTrace, &EpisodeTrace)>| {
        let n = pairs.len().max(1) as f64;
        let a_only = pairs.iter().filter(|(x, y)| x.success && !y.success).count();
        let b_only = pairs.iter().filter(|(x, y)| !x.success && y.success).count();
        out.push(PairComparison {
            a: a_name.into(),
            b: b_name.into(),
            subset: label.into(),
            success_diff: 100.0 * (a_only as f64 - b_only as f64) / n,
            a_only,
            b_only,
            p_value: sign_test(a_only, b_only),
        });
    };
    for s in &order {
        row(s.name(), a.iter().zip(b).filter(|(x, _)| x.subset == *s).collect());
    }
    row("all", a.iter().zip(b).collect());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seed: u64,
    pub agents: Vec<String>,
    pub reports: Vec<MetricsReport>,
    pub pairs: Vec<PairComparison>,
}

/// Evaluate every agent on the same suite and compare each pair.
pub fn compare(
    agents: &[(String, Agent)],
    subsets: &[Subset],
    episodes_per_subset: usize,
    seed: u64,
    params: &GenParams,
) -> Result<ComparisonTable> {
    if agents.len() < 2 {
        return Err(Error::InvalidArgument("compare needs at least two agents".into()));
    }
    let suite = build_suite(subsets, episodes_per_subset, seed, params)?;
    let mut traces = Vec::new();
    let mut reports = Vec::new();
    for (_, agent) in agents {
        let t = run_suite(agent, &suite, seed)?;
        reports.push(metrics_from_traces(agent.config.variant, seed, &t)?);
        traces.push(t);
    }
    let mut pairs = Vec::new();
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            pairs.extend(compare_traces(&agents[i].0, &traces[i], &agents[j].0, &traces[j])?);
        }
    }
    Ok(ComparisonTable {
        seed,
        agents: agents.iter().map(|(n, _)| n.clone()).collect(),
        reports,
        pairs,
    })
}
