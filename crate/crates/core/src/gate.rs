//! The memory head: keep-probability over backbone features, plus the
//! untrained novelty heuristic.

use serde::{Deserialize, Serialize};

use crate::backbone::features::{FeatureVector, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::memory::{cosine, MemoryStore};
use crate::nn::loss::{bernoulli_log_prob, sigmoid};
use crate::nn::mlp::MlpParams;
use crate::nn::rng::Rng;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.3;

/// How a gate was produced; stored in the checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Simple,
    OfflineSupervised,
    OnlineRl,
}

impl GateKind {
    pub fn tag(self) -> u16 {
        match self {
            GateKind::Simple => 1,
            GateKind::OfflineSupervised => 2,
            GateKind::OnlineRl => 3,
        }
    }

    pub fn from_tag(tag: u16) -> Option<GateKind> {
        match tag {
            1 => Some(GateKind::Simple),
            2 => Some(GateKind::OfflineSupervised),
            3 => Some(GateKind::OnlineRl),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Simple => "simple",
            GateKind::OfflineSupervised => "offline_supervised",
            GateKind::OnlineRl => "online_rl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateMode {
    #[default]
    Threshold,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub mlp: MlpParams,
    pub kind: GateKind,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub p_hat: f64,
    pub b: bool,
    /// ln p̂ or ln(1 − p̂) for the drawn bit; set in sample mode.
    pub log_prob: Option<f64>,
    pub logit: f64,
}

impl GateParams {
    pub fn init(kind: GateKind, rng: &mut Rng) -> Self {
        GateParams {
            mlp: MlpParams::init(FEATURE_DIM, 1, rng),
            kind,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn zeros(kind: GateKind) -> Self {
        GateParams {
            mlp: MlpParams::zeros(FEATURE_DIM, 1),
            kind,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn logit(&self, features: &FeatureVector) -> Result<f64> {
        if self.mlp.output_dim() != 1 {
            return Err(Error::Shape {
                expected: 1,
                actual: self.mlp.output_dim(),
            });
        }
        let z = self.mlp.predict(features.as_slice())?[0];
        if !z.is_finite() {
            return Err(Error::Numeric("non-finite gate logit".into()));
        }
        Ok(z)
    }

    pub fn p_hat(&self, features: &FeatureVector) -> Result<f64> {
        Ok(sigmoid(self.logit(features)?))
    }
}

pub fn gate_forward(params: &GateParams, features: &FeatureVector, mode: GateMode, rng: &mut Rng) -> Result<GateDecision> {
    let logit = params.logit(features)?;
    let p_hat = sigmoid(logit);
    Ok(match mode {
        GateMode::Threshold => GateDecision {
            p_hat,
            b: p_hat >= params.threshold,
            log_prob: None,
            logit,
        },
        GateMode::Sample => {
            let b = rng.uniform() < p_hat;
            GateDecision {
                p_hat,
                b,
                log_prob: Some(bernoulli_log_prob(logit, b)),
                logit,
            }
        }
    })
}

/// Keep when the features are far enough from everything already stored:
/// novelty = 1 − max cosine to any stored feature, clamped to [0, 1]; an
/// empty store always keeps.
pub fn heuristic_gate(features: &FeatureVector, store: &MemoryStore, tau: f64) -> GateDecision {
    let novelty = if store.is_empty() {
        1.0
    } else {
        let max_sim = store
            .entries()
            .iter()
            .map(|e| cosine(features.as_slice(), e.feature.as_slice()))
            .fold(f64::NEG_INFINITY, f64::max);
        (1.0 - max_sim).clamp(0.0, 1.0)
    };
    GateDecision {
        p_hat: novelty,
        b: store.is_empty() || novelty >= tau,
        log_prob: None,
        logit: f64::NAN,
    }
}
