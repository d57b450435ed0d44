//! Supervised gate training from labelled expert rollouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::expert::RecallExpert;
use crate::backbone::features::{FeatureExtractor, FeatureVector, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::eval::{build_suite, SuiteTask};
use crate::gate::{GateKind, GateParams};
use crate::memory::{ContextBudget, MemoryEntry, MemoryStore};
use crate::memworld::action::ActionSpace;
use crate::memworld::env::Env;
use crate::memworld::task::GenParams;
use crate::memworld::types::Subset;
use crate::nn::adam::AdamState;
use crate::nn::loss::{bce_with_logit, sigmoid};
use crate::nn::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub episode_id: u64,
    pub step: u32,
    pub label: u8,
    pub feature: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    pub episodes_per_subset: usize,
    pub subsets: Vec<Subset>,
    pub seed: u64,
    pub h: usize,
    pub corruption_fraction: f64,
    pub epsilon: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            episodes_per_subset: 600,
            subsets: Subset::ALL.to_vec(),
            seed: 0,
            h: 6,
            corruption_fraction: 0.3,
            epsilon: 0.25,
        }
    }
}

/// One expert episode under complete memory. A step's label is the
/// validity feedback carried by its observation, or 1 if the episode
/// succeeded.
pub fn label_episode(task: &SuiteTask, h: ContextBudget, epsilon: f64, rng: &mut Rng) -> Result<Vec<LabeledSample>> {
    let cfg = &task.config;
    let space = ActionSpace::standard();
    let (mut env, mut obs) = Env::reset(cfg);
    let fx = FeatureExtractor::new(&cfg.instruction.text);
    let mut store = MemoryStore::new();
    let mut expert = RecallExpert::new(&cfg.instruction.text);
    let mut pending: Vec<(u32, bool, FeatureVector)> = Vec::new();
    while !env.is_over() {
        let ctx = store.retrieve(fx.instruction_feature(), h);
        let feature = fx.embed(&obs, &ctx);
        drop(ctx);
        let planned = expert.act(&obs);
        let action = if epsilon > 0.0 && rng.bernoulli(epsilon) {
            rng.below(space.len())
        } else {
            planned
        };
        pending.push((obs.step_index, obs.last_action_valid, feature.clone()));
        store.maybe_insert(
            MemoryEntry {
                step_index: obs.step_index,
                obs_summary: obs.state_summary.clone(),
                observation: obs,
                feature,
                action_id: action,
                action_name: space.name(action).unwrap_or_default().to_string(),
            },
            true,
        )?;
        obs = env.step(action)?.observation;
    }
    let success = env.succeeded();
    Ok(pending
        .into_iter()
        .map(|(step, valid, feature)| LabeledSample {
            episode_id: task.episode_id,
            step,
            label: (valid || success) as u8,
            feature,
        })
        .collect())
}

pub fn collect_expert_dataset(cfg: &CollectConfig, params: &GenParams) -> Result<Vec<LabeledSample>> {
    let suite = build_suite(&cfg.subsets, cfg.episodes_per_subset, derive_seed(cfg.seed, 0xc011), params)?;
    let per_episode: Vec<Vec<LabeledSample>> = suite
        .par_iter()
        .map(|t| {
            let mut rng = Rng::new(derive_seed(cfg.seed, 0xc0110000 + t.episode_id));
            let eps = if rng.bernoulli(cfg.corruption_fraction) { cfg.epsilon } else { 0.0 };
            label_episode(t, ContextBudget(cfg.h), eps, &mut rng)
        })
        .collect::<Result<_>>()?;
    let samples: Vec<LabeledSample> = per_episode.into_iter().flatten().collect();
    if !samples.is_empty() && samples.iter().all(|s| s.label == 1) {
        return Err(Error::Dataset("no negative labels collected; raise the corruption fraction".into()));
    }
    Ok(samples)
}

/// Downsample the majority class to the minority count, then shuffle.
pub fn balance_dataset(samples: &[LabeledSample], seed: u64) -> Result<Vec<LabeledSample>> {
    let mut rng = Rng::new(derive_seed(seed, 0xba1));
    let mut pos: Vec<&LabeledSample> = samples.iter().filter(|s| s.label == 1).collect();
    let mut neg: Vec<&LabeledSample> = samples.iter().filter(|s| s.label == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Dataset("balancing needs both classes".into()));
    }
    let n = pos.len().min(neg.len());
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let mut out: Vec<LabeledSample> = pos[..n].iter().chain(&neg[..n]).map(|s| (*s).clone()).collect();
    rng.shuffle(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineConfig {
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    /// Stop once training accuracy reaches this value.
    pub target_accuracy: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            epochs: 50,
            seed: 0,
            lr: 1e-3,
            batch_size: 32,
            target_accuracy: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineStats {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

pub fn train_offline(samples: &[LabeledSample], epochs: usize, seed: u64) -> Result<GateParams> {
    let cfg = OfflineConfig {
        epochs,
        seed,
        ..OfflineConfig::default()
    };
    Ok(train_offline_with(samples, &cfg)?.0)
}

/// Minibatch BCE with Adam. Only gate parameters are touched.
pub fn train_offline_with(samples: &[LabeledSample], cfg: &OfflineConfig) -> Result<(GateParams, OfflineStats)> {
    if samples.is_empty() {
        return Err(Error::Dataset("empty gate dataset".into()));
    }
    let mut rng = Rng::new(derive_seed(cfg.seed, 0x0ff1));
    let mut gate = GateParams::init(GateKind::OfflineSupervised, &mut rng);
    let mut adam = AdamState::new(gate.mlp.len(), cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = vec![0.0; gate.mlp.len()];
    let mut stats = OfflineStats {
        epochs_run: 0,
        final_loss: f64::NAN,
        train_accuracy: gate_accuracy(&gate, samples)?,
    };
    for epoch in 0..cfg.epochs {
        if stats.train_accuracy >= cfg.target_accuracy && epoch > 0 {
            break;
        }
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let s = &samples[i];
                if s.feature.len() != FEATURE_DIM {
                    return Err(Error::Shape {
                        expected: FEATURE_DIM,
                        actual: s.feature.len(),
                    });
                }
                let cache = gate.mlp.forward(s.feature.as_slice())?;
                let (loss, d) = bce_with_logit(s.label as f64, cache.output[0])?;
                if !loss.is_finite() {
                    return Err(Error::Numeric("gate loss diverged".into()));
                }
                total += loss;
                gate.mlp.backward(&cache, &[d], &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut gate.mlp.data, &grads)?;
        }
        stats.epochs_run = epoch + 1;
        stats.final_loss = total / samples.len() as f64;
        if !stats.final_loss.is_finite() {
            return Err(Error::Numeric("gate loss diverged".into()));
        }
        stats.train_accuracy = gate_accuracy(&gate, samples)?;
    }
    Ok((gate, stats))
}

/// Fraction of samples where `[p̂ ≥ threshold]` equals the label.
pub fn gate_accuracy(gate: &GateParams, samples: &[LabeledSample]) -> Result<f64> {
    let mut hits = 0;
    for s in samples {
        let p = sigmoid(gate.logit(&s.feature)?);
        hits += ((p >= gate.threshold) == (s.label == 1)) as usize;
    }
    Ok(hits as f64 / samples.len().max(1) as f64)
}
