//! Behaviour cloning of the action head from expert rollouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::expert::RecallExpert;
use crate::backbone::features::{FeatureExtractor, FeatureVector, FEATURE_DIM};
use crate::backbone::policy::BackboneParams;
use crate::error::{Error, Result};
use crate::eval::{build_suite, SuiteTask};
use crate::memory::{Context, ContextBudget, MemoryEntry, MemoryStore};
use crate::memworld::action::ActionSpace;
use crate::memworld::env::Env;
use crate::memworld::task::GenParams;
use crate::memworld::types::Subset;
use crate::nn::adam::AdamState;
use crate::nn::loss::cross_entropy;
use crate::nn::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcSample {
    pub feature: FeatureVector,
    pub action: usize,
}

/// Memory condition an episode is collected under, so the head sees the
/// digest in every regime it will meet at test time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MemoryRegime {
    None,
    Complete,
    RandomKeep(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcConfig {
    pub episodes_per_subset: usize,
    pub subsets: Vec<Subset>,
    pub seed: u64,
    /// Context budgets drawn per episode, so the head learns to read the
    /// digest at any memory size rather than one fixed one.
    pub h_choices: Vec<usize>,
    /// Fraction of episodes whose executed actions are perturbed.
    pub corruption_fraction: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            episodes_per_subset: 300,
            subsets: Subset::ALL.to_vec(),
            seed: 0,
            h_choices: vec![2, 4, 6, 9, 12, 24],
            corruption_fraction: 0.5,
            epsilon: 0.25,
            epochs: 30,
            lr: 1e-3,
            batch_size: 32,
        }
    }
}

/// Roll out the expert (with optional random perturbation of the executed
/// action) and record `(features, expert action)` at every step.
pub fn demonstrate(task: &SuiteTask, regime: MemoryRegime, h: ContextBudget, epsilon: f64, rng: &mut Rng) -> Result<Vec<BcSample>> {
    let cfg = &task.config;
    let space = ActionSpace::standard();
    let (mut env, mut obs) = Env::reset(cfg);
    let fx = FeatureExtractor::new(&cfg.instruction.text);
    let mut store = MemoryStore::new();
    let mut demonstrator = RecallExpert::new(&cfg.instruction.text);
    let mut out = Vec::new();
    while !env.is_over() {
        let ctx = match regime {
            MemoryRegime::None => Context::empty(),
            _ => store.retrieve(fx.instruction_feature(), h),
        };
        let feature = fx.embed(&obs, &ctx);
        drop(ctx);
        let expert = demonstrator.act(&obs);
        let executed = if epsilon > 0.0 && rng.bernoulli(epsilon) {
            rng.below(space.len())
        } else {
            expert
        };
        out.push(BcSample {
            feature: feature.clone(),
            action: expert,
        });
        let keep = match regime {
            MemoryRegime::None => false,
            MemoryRegime::Complete => true,
            MemoryRegime::RandomKeep(p) => rng.bernoulli(p),
        };
        store.maybe_insert(
            MemoryEntry {
                step_index: obs.step_index,
                obs_summary: obs.state_summary.clone(),
                observation: obs,
                feature,
                action_id: executed,
                action_name: space.name(executed).unwrap_or_default().to_string(),
            },
            keep,
        )?;
        obs = env.step(executed)?.observation;
    }
    Ok(out)
}

pub fn collect_bc_dataset(cfg: &BcConfig, params: &GenParams) -> Result<Vec<BcSample>> {
    let suite = build_suite(&cfg.subsets, cfg.episodes_per_subset, derive_seed(cfg.seed, 0xbc), params)?;
    let per_episode: Vec<Vec<BcSample>> = suite
        .par_iter()
        .map(|t| {
            let mut rng = Rng::new(derive_seed(cfg.seed, 0xbc00_0000 + t.episode_id));
            let regime = match t.episode_id % 4 {
                0 => MemoryRegime::None,
                1 => MemoryRegime::Complete,
                _ => MemoryRegime::RandomKeep(rng.range(0.2, 0.8)),
            };
            let h = rng.choose(&cfg.h_choices).copied().unwrap_or(6);
            let eps = if rng.bernoulli(cfg.corruption_fraction) { cfg.epsilon } else { 0.0 };
            demonstrate(t, regime, ContextBudget(h), eps, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(per_episode.into_iter().flatten().collect())
}

/// Minibatch cross-entropy with Adam; returns the head and final training accuracy.
pub fn train_backbone(samples: &[BcSample], cfg: &BcConfig) -> Result<(BackboneParams, f64)> {
    if samples.is_empty() {
        return Err(Error::Dataset("no behaviour-cloning samples".into()));
    }
    let space = ActionSpace::standard();
    let mut rng = Rng::new(derive_seed(cfg.seed, 0xbc1));
    let mut params = BackboneParams::init(space.len(), &mut rng);
    let mut adam = AdamState::new(params.head.len(), cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = vec![0.0; params.head.len()];
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
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
                let cache = params.head.forward(s.feature.as_slice())?;
                let (loss, d) = cross_entropy(&cache.output, s.action);
                if !loss.is_finite() {
                    return Err(Error::Numeric("behaviour-cloning loss diverged".into()));
                }
                params.head.backward(&cache, &d, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params.head.data, &grads)?;
        }
    }
    let acc = bc_accuracy(&params, samples)?;
    Ok((params, acc))
}

pub fn bc_accuracy(params: &BackboneParams, samples: &[BcSample]) -> Result<f64> {
    let mut hits = 0;
    for s in samples {
        let logits = params.logits(&s.feature)?;
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        hits += (best == s.action) as usize;
    }
    Ok(hits as f64 / samples.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BcConfig {
        BcConfig {
            episodes_per_subset: 4,
            subsets: vec![Subset::Base, Subset::Spatial],
            seed: 9,
            epochs: 3,
            ..BcConfig::default()
        }
    }

    #[test]
    fn dataset_and_training_are_deterministic() {
        let cfg = small();
        let a = collect_bc_dataset(&cfg, &GenParams::default()).unwrap();
        assert_eq!(a, collect_bc_dataset(&cfg, &GenParams::default()).unwrap());
        assert!(!a.is_empty());
        let n = ActionSpace::standard().len();
        assert!(a.iter().all(|s| s.action < n && s.feature.len() == FEATURE_DIM));
        let (p1, acc1) = train_backbone(&a, &cfg).unwrap();
        let (p2, acc2) = train_backbone(&a, &cfg).unwrap();
        assert_eq!(p1.head.data, p2.head.data);
        assert_eq!(acc1, acc2);
        assert!((0.0..=1.0).contains(&acc1));
    }

    #[test]
    fn clean_demonstration_records_the_expert() {
        let suite = build_suite(&[Subset::Base], 1, 2, &GenParams::default()).unwrap();
        let s = demonstrate(&suite[0], MemoryRegime::None, ContextBudget(6), 0.0, &mut Rng::new(0)).unwrap();
        let last = ActionSpace::standard().name(s.last().unwrap().action).unwrap().to_string();
        assert!(last.starts_with("place") || last == "done", "{last}");
        assert!(s.iter().all(|x| x.feature.block(crate::backbone::features::DIGEST).iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(train_backbone(&[], &small()), Err(Error::Dataset(_))));
    }
}
