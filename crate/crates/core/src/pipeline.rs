//! Run configuration, the artifact-producing commands, and manifest replay.
//!
//! Every command writes its artifacts under `RunConfig::out` plus a
//! `manifest-<command>.jsonl` holding the resolved config, the command with
//! all input paths made explicit, and SHA-256 digests of inputs and
//! outputs. [`replay`] re-executes a manifest and checks the digests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::policy::BackboneParams;
use crate::backbone::FEATURE_DIM;
use crate::error::{Error, Result};
use crate::eval::{
    build_suite, metrics_from_traces, run_suite, Agent, AgentConfig, Decode, EpisodeTrace,
    MetricsReport, PairComparison, SubsetMetrics, TraceStep, Variant,
};
use crate::io::{self, kind};
use crate::memory::ContextBudget;
use crate::memworld::action::ActionSpace;
use crate::memworld::task::{GenParams, SuitePreset};
use crate::memworld::types::{EpisodeConfig, Subset};
use crate::nn::rng::{derive_seed, Rng};
use crate::train::bc::{collect_bc_dataset, train_backbone, BcConfig};
use crate::train::offline::{
    balance_dataset, collect_expert_dataset, gate_accuracy, train_offline_with, CollectConfig, LabeledSample, OfflineConfig,
};
use crate::train::online::{train_online, CurvePoint, OnlineConfig, RolloutConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub episodes_per_subset: usize,
    pub h_choices: Vec<usize>,
    pub corruption_fraction: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        let b = BcConfig::default();
        BackboneSection {
            episodes_per_subset: b.episodes_per_subset,
            h_choices: b.h_choices,
            corruption_fraction: b.corruption_fraction,
            epsilon: b.epsilon,
            epochs: b.epochs,
            lr: b.lr,
            batch_size: b.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub episodes_per_subset: usize,
    pub corruption_fraction: f64,
    pub epsilon: f64,
}

impl Default for CollectSection {
    fn default() -> Self {
        let c = CollectConfig::default();
        CollectSection {
            episodes_per_subset: c.episodes_per_subset,
            corruption_fraction: c.corruption_fraction,
            epsilon: c.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub target_accuracy: f64,
    /// Fraction of the balanced dataset held out for accuracy reporting.
    pub holdout: f64,
}

impl Default for OfflineSection {
    fn default() -> Self {
        let o = OfflineConfig::default();
        OfflineSection {
            epochs: o.epochs,
            lr: o.lr,
            batch_size: o.batch_size,
            target_accuracy: o.target_accuracy,
            holdout: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineSection {
    pub episodes: usize,
    pub lr: f64,
    pub clip: f64,
    pub baseline_decay: f64,
    pub batch_episodes: usize,
    pub group_size: usize,
    pub gamma: f64,
    pub invalid_penalty: f64,
    pub absorbing_success: bool,
    pub finetune_action_head: bool,
    /// Start the action head from random weights instead of the cloned one.
    pub action_head_from_scratch: bool,
}

impl Default for OnlineSection {
    fn default() -> Self {
        let o = OnlineConfig::default();
        OnlineSection {
            episodes: o.episodes,
            lr: o.lr,
            clip: o.clip,
            baseline_decay: o.baseline_decay,
            batch_episodes: o.batch_episodes,
            group_size: o.group_size,
            gamma: o.rollout.gamma,
            invalid_penalty: o.rollout.invalid_penalty,
            absorbing_success: o.rollout.absorbing_success,
            finetune_action_head: o.finetune_action_head,
            action_head_from_scratch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: SuitePreset,
    pub width: Option<i32>,
    pub height: Option<i32>,
    pub view_radius: Option<i32>,
    pub max_steps: Option<u32>,
    /// Feature dimension; must match the extractor.
    pub d: usize,
    pub h: usize,
    pub variant: Variant,
    pub decode: Decode,
    pub subsets: Vec<Subset>,
    /// Evaluation episodes per subset.
    pub episodes: usize,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core. Never changes results.
    pub jobs: usize,
    pub backbone: BackboneSection,
    pub collect: CollectSection,
    pub offline: OfflineSection,
    pub online: OnlineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            preset: SuitePreset::Standard,
            width: None,
            height: None,
            view_radius: None,
            max_steps: None,
            d: FEATURE_DIM,
            h: ContextBudget::default().0,
            variant: Variant::OfflineSupervised,
            decode: Decode::ById,
            subsets: Subset::ALL.to_vec(),
            episodes: 50,
            out: PathBuf::from("runs/default"),
            jobs: 0,
            backbone: BackboneSection::default(),
            collect: CollectSection::default(),
            offline: OfflineSection::default(),
            online: OnlineSection::default(),
        }
    }
}

/// Seed labels for the independent streams derived from the master seed.
mod stream {
    pub const BACKBONE: u64 = 1;
    pub const COLLECT: u64 = 2;
    pub const OFFLINE: u64 = 3;
    pub const ONLINE: u64 = 4;
    pub const EVAL: u64 = 5;
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != FEATURE_DIM {
            return Err(Error::Config(format!("d = {} but the feature extractor produces {FEATURE_DIM}", self.d)));
        }
        if self.subsets.is_empty() {
            return Err(Error::Config("subsets must not be empty".into()));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.offline.holdout) {
            return Err(Error::Config("offline.holdout must lie in [0, 1)".into()));
        }
        let p = self.gen_params();
        if p.width < 3 || p.height < 3 || p.view_radius < 0 || p.max_steps == 0 {
            return Err(Error::Config("grid must be at least 3x3 with max_steps ≥ 1".into()));
        }
        Ok(())
    }

    pub fn gen_params(&self) -> GenParams {
        let mut p = self.preset.params();
        if let Some(w) = self.width {
            p.width = w;
        }
        if let Some(h) = self.height {
            p.height = h;
        }
        if let Some(r) = self.view_radius {
            p.view_radius = r;
        }
        if let Some(m) = self.max_steps {
            p.max_steps = m;
        }
        p
    }

    pub fn stream_seed(&self, label: u64) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn bc_config(&self) -> BcConfig {
        let b = &self.backbone;
        BcConfig {
            episodes_per_subset: b.episodes_per_subset,
            subsets: self.subsets.clone(),
            seed: self.stream_seed(stream::BACKBONE),
            h_choices: b.h_choices.clone(),
            corruption_fraction: b.corruption_fraction,
            epsilon: b.epsilon,
            epochs: b.epochs,
            lr: b.lr,
            batch_size: b.batch_size,
        }
    }

    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            episodes_per_subset: self.collect.episodes_per_subset,
            subsets: self.subsets.clone(),
            seed: self.stream_seed(stream::COLLECT),
            h: self.h,
            corruption_fraction: self.collect.corruption_fraction,
            epsilon: self.collect.epsilon,
        }
    }

    pub fn offline_config(&self) -> OfflineConfig {
        OfflineConfig {
            epochs: self.offline.epochs,
            seed: self.stream_seed(stream::OFFLINE),
            lr: self.offline.lr,
            batch_size: self.offline.batch_size,
            target_accuracy: self.offline.target_accuracy,
        }
    }

    pub fn online_config(&self) -> OnlineConfig {
        let o = &self.online;
        OnlineConfig {
            episodes: o.episodes,
            subsets: self.subsets.clone(),
            seed: self.stream_seed(stream::ONLINE),
            lr: o.lr,
            clip: o.clip,
            baseline_decay: o.baseline_decay,
            batch_episodes: o.batch_episodes,
            finetune_action_head: o.finetune_action_head,
            group_size: o.group_size,
            rollout: RolloutConfig {
                h: self.h,
                gamma: o.gamma,
                invalid_penalty: o.invalid_penalty,
                absorbing_success: o.absorbing_success,
                sample_actions: false,
            },
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.stream_seed(stream::EVAL)
    }

    pub fn agent_config(&self, variant: Variant) -> AgentConfig {
        AgentConfig {
            decode: self.decode,
            invalid_penalty: self.online.invalid_penalty,
            ..AgentConfig::new(variant).with_h(self.h)
        }
    }
}

/// Default artifact names inside the output directory.
pub mod artifact {
    pub const TASKS: &str = "tasks.jsonl";
    pub const GATE_DATASET: &str = "gate-dataset.jsonl";
    pub const BACKBONE: &str = "backbone.ckpt";
    pub const BACKBONE_STATS: &str = "backbone-stats.jsonl";
    pub const OFFLINE_GATE: &str = "gate-offline.ckpt";
    pub const OFFLINE_STATS: &str = "offline-stats.jsonl";
    pub const ONLINE_GATE: &str = "gate-online.ckpt";
    pub const ONLINE_BACKBONE: &str = "backbone-online.ckpt";
    pub const CURVE: &str = "curve.jsonl";
    pub const COMPARISON: &str = "comparison.jsonl";
    pub const COMPARISON_TABLE: &str = "comparison.txt";

    pub fn report(variant: &str) -> String {
        format!("report-{variant}.jsonl")
    }

    pub fn traces(variant: &str) -> String {
        format!("traces-{variant}.jsonl")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Write the evaluation suite, `count` tasks per subset.
    GenTasks { subsets: Option<Vec<Subset>>, count: usize },
    /// Labelled expert rollouts for the offline gate.
    Collect,
    /// Behaviour-clone the action head.
    TrainBackbone,
    TrainOffline { dataset: Option<PathBuf> },
    TrainOnline { backbone: Option<PathBuf> },
    Eval {
        variant: Option<Variant>,
        backbone: Option<PathBuf>,
        gate: Option<PathBuf>,
    },
    Compare {
        variants: Vec<Variant>,
        backbone: Option<PathBuf>,
        offline_gate: Option<PathBuf>,
        online_gate: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenTasks { .. } => "gen-tasks",
            Command::Collect => "collect",
            Command::TrainBackbone => "train-backbone",
            Command::TrainOffline { .. } => "train-offline",
            Command::TrainOnline { .. } => "train-online",
            Command::Eval { .. } => "eval",
            Command::Compare { .. } => "compare",
        }
    }

    /// Fill every defaulted path and option so the command no longer
    /// depends on where it is run from.
    pub fn resolve(&self, cfg: &RunConfig) -> Result<Command> {
        let out = absolute(&cfg.out)?;
        let pick = |p: &Option<PathBuf>, default: &str| -> Result<Option<PathBuf>> {
            Ok(Some(match p {
                Some(p) => absolute(p)?,
                None => out.join(default),
            }))
        };
        Ok(match self {
            Command::GenTasks { subsets, count } => Command::GenTasks {
                subsets: Some(subsets.clone().unwrap_or_else(|| cfg.subsets.clone())),
                count: *count,
            },
            Command::Collect => Command::Collect,
            Command::TrainBackbone => Command::TrainBackbone,
            Command::TrainOffline { dataset } => Command::TrainOffline {
                dataset: pick(dataset, artifact::GATE_DATASET)?,
            },
            Command::TrainOnline { backbone } => Command::TrainOnline {
                backbone: pick(backbone, artifact::BACKBONE)?,
            },
            Command::Eval { variant, backbone, gate } => {
                let v = variant.unwrap_or(cfg.variant);
                let gate = match (v, gate) {
                    (Variant::OfflineSupervised, g) => pick(g, artifact::OFFLINE_GATE)?,
                    (Variant::OnlineRl, g) => pick(g, artifact::ONLINE_GATE)?,
                    (_, Some(_)) => return Err(Error::Usage(format!("variant {} takes no gate checkpoint", v.name()))),
                    (_, None) => None,
                };
                Command::Eval {
                    variant: Some(v),
                    backbone: pick(backbone, artifact::BACKBONE)?,
                    gate,
                }
            }
            Command::Compare {
                variants,
                backbone,
                offline_gate,
                online_gate,
            } => {
                if variants.len() < 2 {
                    return Err(Error::Usage("compare needs at least two variants".into()));
                }
                let needs = |v: Variant| variants.contains(&v);
                Command::Compare {
                    variants: variants.clone(),
                    backbone: pick(backbone, artifact::BACKBONE)?,
                    offline_gate: if needs(Variant::OfflineSupervised) {
                        pick(offline_gate, artifact::OFFLINE_GATE)?
                    } else {
                        None
                    },
                    online_gate: if needs(Variant::OnlineRl) {
                        pick(online_gate, artifact::ONLINE_GATE)?
                    } else {
                        None
                    },
                }
            }
        })
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = Vec::new();
        let mut add = |p: &Option<PathBuf>| v.extend(p.iter().cloned());
        match self {
            Command::GenTasks { .. } | Command::Collect | Command::TrainBackbone => {}
            Command::TrainOffline { dataset } => add(dataset),
            Command::TrainOnline { backbone } => add(backbone),
            Command::Eval { backbone, gate, .. } => {
                add(backbone);
                add(gate);
            }
            Command::Compare {
                backbone,
                offline_gate,
                online_gate,
                ..
            } => {
                add(backbone);
                add(offline_gate);
                add(online_gate);
            }
        }
        v
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
        Ok(cwd.join(p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn digest_file(path: &Path, label: String) -> Result<FileDigest> {
    Ok(FileDigest {
        path: label,
        sha256: sha256_hex(&io::read_bytes(path)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Command,
    pub config: RunConfig,
    /// Absolute input paths with digests.
    pub inputs: Vec<FileDigest>,
    /// Output names relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

pub fn manifest_name(command: &str) -> String {
    format!("manifest-{command}.jsonl")
}

/// Per-step trace record: the step fields plus the episode they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode_id: u64,
    pub subset: Subset,
    pub variant: Variant,
    pub episode_success: bool,
    #[serde(flatten)]
    pub step: TraceStep,
}

pub fn trace_records(traces: &[EpisodeTrace]) -> Vec<TraceRecord> {
    traces
        .iter()
        .flat_map(|t| {
            t.steps.iter().map(|s| TraceRecord {
                episode_id: t.episode_id,
                subset: t.subset,
                variant: t.variant,
                episode_success: t.success,
                step: s.clone(),
            })
        })
        .collect()
}

/// Regroup per-step records into episodes, in first-appearance order.
pub fn traces_from_records(records: &[TraceRecord]) -> Result<Vec<EpisodeTrace>> {
    let mut out: Vec<EpisodeTrace> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some(t) if t.episode_id == r.episode_id => {
                if t.subset != r.subset || t.variant != r.variant || t.success != r.episode_success {
                    return Err(Error::Dataset(format!("inconsistent records for episode {}", r.episode_id)));
                }
                t.steps.push(r.step.clone());
            }
            _ => {
                if out.iter().any(|t| t.episode_id == r.episode_id) {
                    return Err(Error::Dataset(format!("episode {} is not contiguous", r.episode_id)));
                }
                out.push(EpisodeTrace {
                    episode_id: r.episode_id,
                    subset: r.subset,
                    variant: r.variant,
                    success: r.episode_success,
                    steps: vec![r.step.clone()],
                });
            }
        }
    }
    Ok(out)
}

/// One row per agent × subset (plus the average row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub agent: String,
    pub variant: Variant,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: SubsetMetrics,
}

pub fn report_rows(agent: &str, r: &MetricsReport) -> Vec<ReportRow> {
    r.subsets
        .iter()
        .chain(std::iter::once(&r.average))
        .map(|m| ReportRow {
            agent: agent.into(),
            variant: r.variant,
            seed: r.seed,
            metrics: m.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComparisonRecord {
    Metrics(ReportRow),
    Pair(PairComparison),
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

/// Fixed-width text table of one or more reports.
pub fn format_table(reports: &[(String, MetricsReport)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:<8} {:>5} {:>8} {:>8} {:>8} {:>8}", "agent", "subset", "n", "succ%", "kept%", "invalid", "W");
    for (name, r) in reports {
        for m in r.subsets.iter().chain(std::iter::once(&r.average)) {
            let _ = writeln!(
                s,
                "{:<20} {:<8} {:>5} {:>8.2} {:>8} {:>8.2} {:>8}",
                name,
                m.subset,
                m.episodes,
                m.success_rate,
                fmt_opt(m.kept_fraction),
                m.invalid_actions,
                fmt_opt(m.weighted_efficiency)
            );
        }
    }
    s
}

pub fn format_pairs(pairs: &[PairComparison]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:<20} {:<8} {:>8} {:>5} {:>5} {:>8}", "a", "b", "subset", "diff%", "a+", "b+", "p");
    for p in pairs {
        let _ = writeln!(
            s,
            "{:<20} {:<20} {:<8} {:>8.2} {:>5} {:>5} {:>8.4}",
            p.a, p.b, p.subset, p.success_diff, p.a_only, p.b_only, p.p_value
        );
    }
    s
}

/// Result of executing one command.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Human-readable summary for the terminal.
    pub summary: String,
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<FileDigest>,
}

impl Outputs<'_> {
    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        io::write_bytes(&self.dir.join(name), bytes)?;
        self.written.push(FileDigest {
            path: name.into(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, format: &str, records: &[T]) -> Result<()> {
        self.bytes(name, io::jsonl_to_string(format, records)?.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneStats {
    pub samples: usize,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub raw_samples: usize,
    pub raw_negatives: usize,
    pub balanced_samples: usize,
    pub train_samples: usize,
    pub holdout_samples: usize,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
}

/// Balance, shuffle and split a labelled dataset into train and held-out parts.
pub fn split_dataset(samples: &[LabeledSample], holdout: f64, seed: u64) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let mut balanced = balance_dataset(samples, seed)?;
    let mut rng = Rng::new(derive_seed(seed, 0x5b17));
    rng.shuffle(&mut balanced);
    let n_hold = (balanced.len() as f64 * holdout).round() as usize;
    let train = balanced.split_off(n_hold);
    Ok((train, balanced))
}

fn load_agent(cfg: &RunConfig, variant: Variant, backbone: &Option<PathBuf>, gate: &Option<PathBuf>) -> Result<Agent> {
    let bb = io::load_backbone(backbone.as_ref().expect("resolved"))?;
    if bb.head.output_dim() != ActionSpace::standard().len() {
        return Err(Error::Checkpoint(format!(
            "backbone has {} outputs, action space has {}",
            bb.head.output_dim(),
            ActionSpace::standard().len()
        )));
    }
    let g = gate.as_ref().map(|p| io::load_gate(p)).transpose()?;
    Agent::new(cfg.agent_config(variant), bb, g)
}

/// Execute a command and write its artifacts and manifest under `cfg.out`.
pub fn run(command: &Command, cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let command = command.resolve(cfg)?;
    let out_dir = absolute(&cfg.out)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let inputs = command
        .inputs()
        .iter()
        .map(|p| digest_file(p, p.display().to_string()))
        .collect::<Result<Vec<_>>>()?;
    let mut outs = Outputs {
        dir: &out_dir,
        written: Vec::new(),
    };
    let params = cfg.gen_params();
    let summary = match &command {
        Command::GenTasks { subsets, count } => {
            let subsets = subsets.as_deref().expect("resolved");
            let tasks: Vec<EpisodeConfig> = if *count == 0 {
                Vec::new()
            } else {
                build_suite(subsets, *count, cfg.eval_seed(), &params)?
                    .into_iter()
                    .map(|t| t.config)
                    .collect()
            };
            outs.jsonl(artifact::TASKS, kind::TASKS, &tasks)?;
            format!("wrote {} tasks", tasks.len())
        }
        Command::Collect => {
            let samples = collect_expert_dataset(&cfg.collect_config(), &params)?;
            let neg = samples.iter().filter(|s| s.label == 0).count();
            outs.jsonl(artifact::GATE_DATASET, kind::GATE_DATASET, &samples)?;
            format!("collected {} samples ({} negative)", samples.len(), neg)
        }
        Command::TrainBackbone => {
            let bc = cfg.bc_config();
            let samples = collect_bc_dataset(&bc, &params)?;
            let (bb, acc) = train_backbone(&samples, &bc)?;
            outs.bytes(artifact::BACKBONE, &io::backbone_to_bytes(&bb))?;
            let stats = BackboneStats {
                samples: samples.len(),
                train_accuracy: acc,
            };
            outs.jsonl(artifact::BACKBONE_STATS, kind::REPORT, &[&stats])?;
            format!("action head trained on {} samples, accuracy {:.4}", stats.samples, acc)
        }
        Command::TrainOffline { dataset } => {
            let path = dataset.as_ref().expect("resolved");
            let raw: Vec<LabeledSample> = io::read_jsonl(path, kind::GATE_DATASET)?;
            if let Some(bad) = raw.iter().find(|s| s.feature.len() != cfg.d) {
                return Err(Error::Shape {
                    expected: cfg.d,
                    actual: bad.feature.len(),
                });
            }
            let oc = cfg.offline_config();
            let (train, hold) = split_dataset(&raw, cfg.offline.holdout, oc.seed)?;
            let (gate, st) = train_offline_with(&train, &oc)?;
            let report = OfflineReport {
                raw_samples: raw.len(),
                raw_negatives: raw.iter().filter(|s| s.label == 0).count(),
                balanced_samples: train.len() + hold.len(),
                train_samples: train.len(),
                holdout_samples: hold.len(),
                epochs_run: st.epochs_run,
                final_loss: st.final_loss,
                train_accuracy: st.train_accuracy,
                holdout_accuracy: if hold.is_empty() { None } else { Some(gate_accuracy(&gate, &hold)?) },
            };
            outs.bytes(artifact::OFFLINE_GATE, &io::gate_to_bytes(&gate))?;
            outs.jsonl(artifact::OFFLINE_STATS, kind::REPORT, &[&report])?;
            format!(
                "offline gate: train accuracy {:.4}, held-out accuracy {}",
                report.train_accuracy,
                report.holdout_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
            )
        }
        Command::TrainOnline { backbone } => {
            let mut bb = io::load_backbone(backbone.as_ref().expect("resolved"))?;
            let oc = cfg.online_config();
            if cfg.online.action_head_from_scratch {
                let mut rng = Rng::new(derive_seed(oc.seed, 0xb0));
                bb = BackboneParams::init(ActionSpace::standard().len(), &mut rng);
            }
            let res = train_online(&oc, &params, bb, None)?;
            outs.bytes(artifact::ONLINE_GATE, &io::gate_to_bytes(&res.gate))?;
            if cfg.online.finetune_action_head {
                outs.bytes(artifact::ONLINE_BACKBONE, &io::backbone_to_bytes(&res.backbone))?;
            }
            outs.jsonl(artifact::CURVE, kind::CURVE, &res.curve)?;
            curve_summary(&res.curve)
        }
        Command::Eval { variant, backbone, gate } => {
            let v = variant.expect("resolved");
            let agent = load_agent(cfg, v, backbone, gate)?;
            let suite = build_suite(&cfg.subsets, cfg.episodes, cfg.eval_seed(), &params)?;
            let traces = run_suite(&agent, &suite, cfg.eval_seed())?;
            let report = metrics_from_traces(v, cfg.eval_seed(), &traces)?;
            outs.jsonl(&artifact::report(v.name()), kind::REPORT, &report_rows(v.name(), &report))?;
            outs.jsonl(&artifact::traces(v.name()), kind::TRACES, &trace_records(&traces))?;
            format_table(&[(v.name().to_string(), report)])
        }
        Command::Compare {
            variants,
            backbone,
            offline_gate,
            online_gate,
        } => {
            let agents = variants
                .iter()
                .map(|v| {
                    let gate = match v {
                        Variant::OfflineSupervised => offline_gate,
                        Variant::OnlineRl => online_gate,
                        _ => &None,
                    };
                    Ok((v.name().to_string(), load_agent(cfg, *v, backbone, gate)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = crate::eval::compare(&agents, &cfg.subsets, cfg.episodes, cfg.eval_seed(), &params)?;
            let mut records = Vec::new();
            for (name, r) in table.agents.iter().zip(&table.reports) {
                records.extend(report_rows(name, r).into_iter().map(ComparisonRecord::Metrics));
            }
            records.extend(table.pairs.iter().cloned().map(ComparisonRecord::Pair));
            outs.jsonl(artifact::COMPARISON, kind::COMPARISON, &records)?;
            let named: Vec<(String, MetricsReport)> = table.agents.iter().cloned().zip(table.reports.iter().cloned()).collect();
            let text = format!("{}\n{}", format_table(&named), format_pairs(&table.pairs));
            outs.bytes(artifact::COMPARISON_TABLE, text.as_bytes())?;
            text
        }
    };
    let manifest = Manifest {
        command,
        config: RunConfig {
            out: out_dir.clone(),
            ..cfg.clone()
        },
        inputs,
        outputs: outs.written,
    };
    let manifest_path = out_dir.join(manifest_name(manifest.command.name()));
    io::write_jsonl(&manifest_path, kind::MANIFEST, &[&manifest])?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
        summary,
    })
}

fn curve_summary(curve: &[CurvePoint]) -> String {
    let tail = &curve[curve.len().saturating_sub(200)..];
    let n = tail.len().max(1) as f64;
    format!(
        "online training: {} episodes; last {} success {:.3}, kept {:.1}%",
        curve.len(),
        tail.len(),
        tail.iter().filter(|c| c.success).count() as f64 / n,
        tail.iter().map(|c| c.kept_fraction).sum::<f64>() / n
    )
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mut v: Vec<Manifest> = io::read_jsonl(path, kind::MANIFEST)?;
    if v.len() != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected one manifest record, found {}", v.len()),
        });
    }
    Ok(v.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub out_dir: PathBuf,
    pub matched: Vec<String>,
    /// (name, expected digest, actual digest)
    pub mismatched: Vec<(String, String, String)>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-run a manifest (optionally into another directory) and compare every
/// output digest. Inputs must still hash to their recorded values.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<ReplayOutcome> {
    let m = read_manifest(manifest_path)?;
    for inp in &m.inputs {
        let now = digest_file(Path::new(&inp.path), inp.path.clone())?;
        if now.sha256 != inp.sha256 {
            return Err(Error::Dataset(format!("input {} changed since the manifest was written", inp.path)));
        }
    }
    let mut cfg = m.config.clone();
    if let Some(o) = out {
        cfg.out = o.to_path_buf();
    }
    let res = run(&m.command, &cfg)?;
    let mut matched = Vec::new();
    let mut mismatched = Vec::new();
    for want in &m.outputs {
        match res.manifest.outputs.iter().find(|o| o.path == want.path) {
            Some(got) if got.sha256 == want.sha256 => matched.push(want.path.clone()),
            Some(got) => mismatched.push((want.path.clone(), want.sha256.clone(), got.sha256.clone())),
            None => mismatched.push((want.path.clone(), want.sha256.clone(), String::new())),
        }
    }
    Ok(ReplayOutcome {
        out_dir: absolute(&cfg.out)?,
        matched,
        mismatched,
    })
}
