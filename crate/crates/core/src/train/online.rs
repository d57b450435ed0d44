//! Online REINFORCE over the gate and (optionally) the action head.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::features::{FeatureExtractor, FeatureVector};
use crate::backbone::policy::{act, ActMode, BackboneParams};
use crate::error::{Error, Result};
use crate::eval::{shaped_reward, task_seed};
use crate::gate::{gate_forward, GateKind, GateMode, GateParams};
use crate::memory::{kept_percentage, ContextBudget, MemoryEntry, MemoryStore};
use crate::memworld::action::ActionSpace;
use crate::memworld::env::Env;
use crate::memworld::task::{generate_task_with, GenParams};
use crate::memworld::types::{EpisodeConfig, Subset};
use crate::nn::adam::AdamState;
use crate::nn::loss::{bernoulli_log_prob_grad, discounted_returns_bootstrapped, log_softmax, reinforce_grad, sigmoid, softmax};
use crate::nn::mlp::MlpParams;
use crate::nn::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajStep {
    pub feature: FeatureVector,
    pub action_id: usize,
    pub action_log_prob: f64,
    pub gate_log_prob: f64,
    pub gate_b: bool,
    pub gate_p: f64,
    pub action_valid: bool,
    /// Sparse task reward r_t.
    pub sparse: f64,
    /// Dense term: +1 if valid, −penalty otherwise.
    pub dense: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    pub returns: Vec<f64>,
    pub success: bool,
    pub invalid_penalty: f64,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn kept_fraction(&self) -> Option<f64> {
        kept_percentage(self.steps.iter().filter(|s| s.gate_b).count(), self.steps.len()).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub h: usize,
    pub gamma: f64,
    pub invalid_penalty: f64,
    /// Treat success as an absorbing state that keeps paying the dense
    /// reward until the step limit. Only affects returns, not rewards.
    pub absorbing_success: bool,
    /// Sample actions from the head instead of taking the argmax. Only
    /// useful when the head itself is being trained.
    pub sample_actions: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            h: 6,
            gamma: 0.99,
            invalid_penalty: 0.0,
            absorbing_success: true,
            sample_actions: false,
        }
    }
}

/// Sample-mode rollout: sampled gate bits and softmax-sampled actions.
pub fn rollout_online(
    cfg: &EpisodeConfig,
    backbone: &BackboneParams,
    gate: &GateParams,
    rc: &RolloutConfig,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let space = ActionSpace::standard();
    let (mut env, mut obs) = Env::reset(cfg);
    let fx = FeatureExtractor::new(&cfg.instruction.text);
    let mut store = MemoryStore::new();
    let mut steps = Vec::new();
    while !env.is_over() {
        let ctx = store.retrieve(fx.instruction_feature(), ContextBudget(rc.h));
        let feature = fx.embed(&obs, &ctx);
        drop(ctx);
        let mode = if rc.sample_actions { ActMode::Sample } else { ActMode::Greedy };
        let a = act(&feature, backbone, space, mode, rng)?;
        let g = gate_forward(gate, &feature, GateMode::Sample, rng)?;
        store.maybe_insert(
            MemoryEntry {
                step_index: obs.step_index,
                obs_summary: obs.state_summary.clone(),
                observation: obs,
                feature: feature.clone(),
                action_id: a.action_id,
                action_name: a.action_name.clone(),
            },
            g.b,
        )?;
        let res = env.step(a.action_id)?;
        let dense = shaped_reward(0.0, res.action_valid, rc.invalid_penalty);
        steps.push(TrajStep {
            feature,
            action_id: a.action_id,
            action_log_prob: a.log_prob,
            gate_log_prob: g.log_prob.expect("sample mode"),
            gate_b: g.b,
            gate_p: g.p_hat,
            action_valid: res.action_valid,
            sparse: res.reward,
            dense,
            reward: shaped_reward(res.reward, res.action_valid, rc.invalid_penalty),
        });
        obs = res.observation;
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let terminal = if rc.absorbing_success && env.succeeded() {
        let remaining = cfg.max_steps.saturating_sub(steps.len() as u32) as i32;
        absorbing_value(rc.gamma, remaining)
    } else {
        0.0
    };
    Ok(Trajectory {
        returns: discounted_returns_bootstrapped(&rewards, rc.gamma, terminal),
        steps,
        success: env.succeeded(),
        invalid_penalty: rc.invalid_penalty,
    })
}

/// Value of `remaining` further steps of +1 each, discounted from the first.
pub fn absorbing_value(gamma: f64, remaining: i32) -> f64 {
    (0..remaining).map(|k| gamma.powi(k)).sum()
}

/// One scored decision for the policy-gradient estimator.
#[derive(Debug, Clone, Copy)]
pub struct PolicyStep<'a> {
    pub feature: &'a [f64],
    pub gate_bit: Option<bool>,
    pub action: Option<usize>,
    pub advantage: f64,
}

/// Accumulate the gradient of `−Σ_t advantage_t · (log π_gate + log π_action)`
/// into the given buffers; returns the surrogate value.
pub fn reinforce_gradients(
    gate: Option<&MlpParams>,
    head: Option<&MlpParams>,
    steps: &[PolicyStep<'_>],
    gate_grad: &mut [f64],
    head_grad: &mut [f64],
) -> Result<f64> {
    let mut surrogate = 0.0;
    for s in steps {
        if let (Some(g), Some(b)) = (gate, s.gate_bit) {
            let cache = g.forward(s.feature)?;
            let z = cache.output[0];
            surrogate -= s.advantage * crate::nn::loss::bernoulli_log_prob(z, b);
            g.backward(&cache, &[-s.advantage * bernoulli_log_prob_grad(z, b)], gate_grad)?;
        }
        if let (Some(h), Some(a)) = (head, s.action) {
            let cache = h.forward(s.feature)?;
            surrogate -= s.advantage * log_softmax(&cache.output)[a];
            let p = softmax(&cache.output);
            let d: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(i, pi)| -s.advantage * ((i == a) as u8 as f64 - pi))
                .collect();
            h.backward(&cache, &d, head_grad)?;
        }
    }
    if !surrogate.is_finite() {
        return Err(Error::Numeric("non-finite policy-gradient surrogate".into()));
    }
    Ok(surrogate)
}

fn clip_joint(a: &mut [f64], b: &mut [f64], max_norm: f64) -> f64 {
    let norm = a.iter().chain(b.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        a.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    pub episodes: usize,
    pub subsets: Vec<Subset>,
    pub seed: u64,
    pub lr: f64,
    pub clip: f64,
    pub baseline_decay: f64,
    pub batch_episodes: usize,
    pub finetune_action_head: bool,
    /// Rollouts per task. With 2 or more, each rollout is baselined by the
    /// mean return of its siblings on the same task instead of the moving
    /// average.
    pub group_size: usize,
    pub rollout: RolloutConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            episodes: 2000,
            subsets: Subset::ALL.to_vec(),
            seed: 0,
            lr: 1e-3,
            clip: 5.0,
            baseline_decay: 0.95,
            batch_episodes: 8,
            finetune_action_head: false,
            group_size: 1,
            rollout: RolloutConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    #[serde(rename = "return")]
    pub return_: f64,
    pub success: bool,
    pub kept_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineResult {
    pub gate: GateParams,
    pub backbone: BackboneParams,
    pub curve: Vec<CurvePoint>,
}

/// Exponential moving average of episode returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaBaseline {
    pub value: Option<f64>,
    pub decay: f64,
}

impl EmaBaseline {
    pub fn new(decay: f64) -> Self {
        EmaBaseline { value: None, decay }
    }

    pub fn get(&self) -> f64 {
        self.value.unwrap_or(0.0)
    }

    pub fn update(&mut self, x: f64) {
        self.value = Some(match self.value {
            None => x,
            Some(v) => self.decay * v + (1.0 - self.decay) * x,
        });
    }
}

/// One moving average per time step, so early and late returns are not
/// compared against the same number.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBaseline {
    pub decay: f64,
    pub values: Vec<EmaBaseline>,
}

impl StepBaseline {
    pub fn new(decay: f64) -> Self {
        StepBaseline { decay, values: Vec::new() }
    }

    pub fn get(&self, t: usize) -> f64 {
        self.values.get(t).map_or(0.0, |b| b.get())
    }

    pub fn update(&mut self, returns: &[f64]) {
        if self.values.len() < returns.len() {
            self.values.resize(returns.len(), EmaBaseline::new(self.decay));
        }
        for (b, g) in self.values.iter_mut().zip(returns) {
            b.update(*g);
        }
    }
}

/// Batched REINFORCE: roll out `batch_episodes` on a parameter snapshot,
/// average the gradient, clip, take one Adam step, then fold the batch's
/// returns into the baseline.
pub fn train_online(
    cfg: &OnlineConfig,
    params: &GenParams,
    backbone: BackboneParams,
    gate: Option<GateParams>,
) -> Result<OnlineResult> {
    if cfg.subsets.is_empty() {
        return Err(Error::InvalidArgument("no subsets to train on".into()));
    }
    let mut init_rng = Rng::new(derive_seed(cfg.seed, 0x0a11));
    let mut gate = gate.unwrap_or_else(|| GateParams::init(GateKind::OnlineRl, &mut init_rng));
    gate.kind = GateKind::OnlineRl;
    let mut backbone = backbone;
    let mut gate_adam = AdamState::new(gate.mlp.len(), cfg.lr);
    let mut head_adam = AdamState::new(backbone.head.len(), cfg.lr);
    let mut baseline = StepBaseline::new(cfg.baseline_decay);
    let mut curve = Vec::with_capacity(cfg.episodes);
    let n_sub = cfg.subsets.len();
    let batch = cfg.batch_episodes.max(1);

    let group = cfg.group_size.max(1);
    let batch = batch.div_ceil(group) * group;
    let mut rollout = cfg.rollout;
    rollout.sample_actions |= cfg.finetune_action_head;

    let mut start = 0;
    while start < cfg.episodes {
        let end = (start + batch).min(cfg.episodes);
        let runs: Vec<(u32, Trajectory)> = (start..end)
            .into_par_iter()
            .map(|e| {
                let task_index = e / group;
                let subset = cfg.subsets[task_index % n_sub];
                let task = generate_task_with(subset, task_seed(derive_seed(cfg.seed, 0x7a5c), subset, task_index / n_sub), params)?;
                let mut rng = Rng::new(derive_seed(cfg.seed, 0x0e00_0000 + e as u64));
                Ok((task.max_steps, rollout_online(&task, &backbone, &gate, &rollout, &mut rng)?))
            })
            .collect::<Result<_>>()?;
        if group == 1 && baseline.values.is_empty() {
            for (_, t) in &runs {
                baseline.update(&t.returns);
            }
        }
        let tail = |(max_steps, t): &(u32, Trajectory), i: usize| -> f64 {
            match t.returns.get(i) {
                Some(g) => *g,
                None if t.success && rollout.absorbing_success => absorbing_value(rollout.gamma, *max_steps as i32 - i as i32),
                None => 0.0,
            }
        };
        let baselines: Vec<Vec<f64>> = runs
            .iter()
            .enumerate()
            .map(|(k, (_, t))| {
                let g0 = k - k % group;
                let siblings: Vec<&(u32, Trajectory)> =
                    (g0..(g0 + group).min(runs.len())).filter(|j| *j != k).map(|j| &runs[j]).collect();
                (0..t.steps.len())
                    .map(|i| {
                        if siblings.is_empty() {
                            baseline.get(i)
                        } else {
                            siblings.iter().map(|r| tail(r, i)).sum::<f64>() / siblings.len() as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let trajs: Vec<Trajectory> = runs.into_iter().map(|(_, t)| t).collect();
        let mut g_grad = vec![0.0; gate.mlp.len()];
        let mut h_grad = vec![0.0; backbone.head.len()];
        for (t, b) in trajs.iter().zip(&baselines) {
            let lps: Vec<f64> = t.steps.iter().map(|s| s.gate_log_prob + s.action_log_prob).collect();
            let mut adv = reinforce_grad(&lps, &t.returns, 0.0)?;
            adv.iter_mut().zip(b).for_each(|(a, b)| *a -= b);
            let steps: Vec<PolicyStep<'_>> = t
                .steps
                .iter()
                .zip(&adv)
                .map(|(s, a)| PolicyStep {
                    feature: s.feature.as_slice(),
                    gate_bit: Some(s.gate_b),
                    action: Some(s.action_id),
                    advantage: *a,
                })
                .collect();
            let head = cfg.finetune_action_head.then_some(&backbone.head);
            reinforce_gradients(Some(&gate.mlp), head, &steps, &mut g_grad, &mut h_grad)?;
        }
        let scale = 1.0 / trajs.len() as f64;
        g_grad.iter_mut().chain(h_grad.iter_mut()).for_each(|g| *g *= scale);
        clip_joint(&mut g_grad, &mut h_grad, cfg.clip);
        gate_adam.step(&mut gate.mlp.data, &g_grad)?;
        if cfg.finetune_action_head {
            head_adam.step(&mut backbone.head.data, &h_grad)?;
        }
        for (i, t) in trajs.iter().enumerate() {
            baseline.update(&t.returns);
            curve.push(CurvePoint {
                episode: start + i,
                return_: t.total_reward(),
                success: t.success,
                kept_fraction: t.kept_fraction().unwrap_or(0.0),
            });
        }
        start = end;
    }
    Ok(OnlineResult { gate, backbone, curve })
}

/// Which policy form the bandit harness trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BanditHead {
    /// Bernoulli gate; reward 1 for keep.
    Gate,
    /// Two-action softmax; reward 1 for action 0.
    Softmax2,
}

/// Degenerate keep-rewarded environment: one decision per episode on a fixed
/// observation. Returns the keep probability after each episode.
pub fn bandit_run(head: BanditHead, episodes: usize, seed: u64, lr: f64, clip: f64, decay: f64) -> Result<Vec<f64>> {
    let mut rng = Rng::new(derive_seed(seed, 0xba2d));
    let d = crate::backbone::FEATURE_DIM;
    let feature: Vec<f64> = (0..d).map(|_| rng.range(-1.0, 1.0)).collect();
    let out_dim = match head {
        BanditHead::Gate => 1,
        BanditHead::Softmax2 => 2,
    };
    let mut mlp = MlpParams::init(d, out_dim, &mut rng);
    let mut adam = AdamState::new(mlp.len(), lr);
    let mut baseline = EmaBaseline::new(decay);
    let mut curve = Vec::with_capacity(episodes);
    let keep_prob = |m: &MlpParams| -> Result<f64> {
        let o = m.predict(&feature)?;
        Ok(match head {
            BanditHead::Gate => sigmoid(o[0]),
            BanditHead::Softmax2 => softmax(&o)[0],
        })
    };
    for _ in 0..episodes {
        let p = keep_prob(&mlp)?;
        let keep = rng.uniform() < p;
        let reward = keep as u8 as f64;
        let adv = reward - baseline.get();
        let step = match head {
            BanditHead::Gate => PolicyStep {
                feature: &feature,
                gate_bit: Some(keep),
                action: None,
                advantage: adv,
            },
            BanditHead::Softmax2 => PolicyStep {
                feature: &feature,
                gate_bit: None,
                action: Some(if keep { 0 } else { 1 }),
                advantage: adv,
            },
        };
        let mut grad = vec![0.0; mlp.len()];
        let mut unused = vec![0.0; mlp.len()];
        match head {
            BanditHead::Gate => reinforce_gradients(Some(&mlp), None, &[step], &mut grad, &mut unused)?,
            BanditHead::Softmax2 => reinforce_gradients(None, Some(&mlp), &[step], &mut unused, &mut grad)?,
        };
        crate::nn::adam::clip_grad_norm(&mut grad, clip);
        adam.step(&mut mlp.data, &grad)?;
        baseline.update(reward);
        curve.push(keep_prob(&mlp)?);
    }
    Ok(curve)
}
