//! Action head over backbone features.

use crate::backbone::features::{FeatureVector, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::memworld::action::ActionSpace;
use crate::nn::loss::log_softmax;
use crate::nn::mlp::MlpParams;
use crate::nn::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActMode {
    #[default]
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActDecision {
    pub action_id: usize,
    pub action_name: String,
    pub log_prob: f64,
}

/// Action-head parameters: an MLP from features to one logit per action.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub head: MlpParams,
}

impl BackboneParams {
    pub fn init(n_actions: usize, rng: &mut Rng) -> Self {
        BackboneParams {
            head: MlpParams::init(FEATURE_DIM, n_actions, rng),
        }
    }

    pub fn zeros(n_actions: usize) -> Self {
        BackboneParams {
            head: MlpParams::zeros(FEATURE_DIM, n_actions),
        }
    }

    pub fn logits(&self, features: &FeatureVector) -> Result<Vec<f64>> {
        let logits = self.head.predict(features.as_slice())?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite action logits".into()));
        }
        Ok(logits)
    }
}

/// Choose an action: arg-max (lowest id on ties) or a categorical sample.
pub fn act(
    features: &FeatureVector,
    params: &BackboneParams,
    space: &ActionSpace,
    mode: ActMode,
    rng: &mut Rng,
) -> Result<ActDecision> {
    if params.head.output_dim() != space.len() {
        return Err(Error::Shape {
            expected: space.len(),
            actual: params.head.output_dim(),
        });
    }
    let logits = params.logits(features)?;
    let lp = log_softmax(&logits);
    let id = match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for (i, v) in logits.iter().enumerate() {
                if *v > logits[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
            rng.categorical(&probs)
        }
    };
    Ok(ActDecision {
        action_id: id,
        action_name: space.name(id).unwrap_or_default().to_string(),
        log_prob: lp[id],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_is_uniform_and_greedy_picks_first() {
        let space = ActionSpace::standard();
        let p = BackboneParams::zeros(space.len());
        let d = act(&FeatureVector::zeros(), &p, space, ActMode::Greedy, &mut Rng::new(0)).unwrap();
        assert_eq!(d.action_id, 0);
        assert!((d.log_prob + (space.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn nan_features_error() {
        let space = ActionSpace::standard();
        let p = BackboneParams::init(space.len(), &mut Rng::new(1));
        let mut f = FeatureVector::zeros();
        f.0[3] = f64::NAN;
        let r = act(&f, &p, space, ActMode::Sample, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let p = BackboneParams::zeros(5);
        let r = act(&FeatureVector::zeros(), &p, ActionSpace::standard(), ActMode::Greedy, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
