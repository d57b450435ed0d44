//! Losses and policy-gradient helpers.

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a probability derived from a logit.
///
/// Returns `(loss, d loss / d logit)`; the gradient is `p_hat - y`.
pub fn bce_loss(y: f64, p_hat: f64) -> Result<(f64, f64)> {
    if y != 0.0 && y != 1.0 {
        return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {y}")));
    }
    if !p_hat.is_finite() {
        return Err(Error::Numeric("non-finite probability".into()));
    }
    let p = p_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    Ok((loss, p_hat - y))
}

/// BCE from a raw logit.
pub fn bce_with_logit(y: f64, logit: f64) -> Result<(f64, f64)> {
    bce_loss(y, sigmoid(logit))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Cross-entropy of `target` under `logits`; returns `(loss, d loss / d logits)`.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut probs = softmax(logits);
    let loss = -log_softmax(logits)[target];
    probs[target] -= 1.0;
    (loss, probs)
}

/// log pi(b) for a Bernoulli gate with keep-probability `sigmoid(logit)`.
pub fn bernoulli_log_prob(logit: f64, keep: bool) -> f64 {
    // log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
    if keep {
        -softplus(-logit)
    } else {
        -softplus(logit)
    }
}

/// d log pi(b) / d logit = b - p_hat.
pub fn bernoulli_log_prob_grad(logit: f64, keep: bool) -> f64 {
    (keep as u8 as f64) - sigmoid(logit)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `G_t = sum_{t' >= t} gamma^(t'-t) R_t'`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Discounted returns where the state after the last reward is worth
/// `terminal` (already discounted to that state).
pub fn discounted_returns_bootstrapped(rewards: &[f64], gamma: f64, terminal: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = terminal;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Per-step REINFORCE weights `G_t - baseline`.
///
/// The surrogate loss to minimize is `-sum_t log_prob_t * weight_t`, so the
/// gradient of that loss w.r.t. `log_prob_t` is `-weight_t`.
pub fn reinforce_grad(log_probs: &[f64], returns: &[f64], baseline: f64) -> Result<Vec<f64>> {
    if log_probs.len() != returns.len() {
        return Err(Error::Shape {
            expected: log_probs.len(),
            actual: returns.len(),
        });
    }
    if !baseline.is_finite()
        || log_probs.iter().chain(returns).any(|v| !v.is_finite())
    {
        return Err(Error::Numeric("non-finite REINFORCE input".into()));
    }
    Ok(returns.iter().map(|g| g - baseline).collect())
}

/// `-sum_t log_prob_t * (G_t - baseline)`.
pub fn reinforce_surrogate(log_probs: &[f64], returns: &[f64], baseline: f64) -> Result<f64> {
    let w = reinforce_grad(log_probs, returns, baseline)?;
    Ok(-log_probs.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_reference_values() {
        let (l, g) = bce_loss(1.0, 0.5).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g + 0.5).abs() < 1e-12);
        let (l, _) = bce_loss(0.0, 0.9).unwrap();
        assert!((l - std::f64::consts::LN_10).abs() < 1e-9);
        let (l, _) = bce_loss(1.0, 1.0 - 1e-12).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn bce_rejects_soft_labels() {
        assert!(bce_loss(0.3, 0.5).is_err());
    }

    #[test]
    fn bce_never_negative() {
        for y in [0.0, 1.0] {
            for i in 0..=100 {
                let (l, _) = bce_loss(y, i as f64 / 100.0).unwrap();
                assert!(l >= 0.0);
            }
        }
    }

    #[test]
    fn returns_equal_baseline_give_zero_weights() {
        let w = reinforce_grad(&[-0.1, -2.0], &[3.0, 3.0], 3.0).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
    }

    #[test]
    fn single_step_weight_is_return() {
        let g = discounted_returns(&[2.0], 0.5);
        let w = reinforce_grad(&[-0.7], &g, 0.0).unwrap();
        assert_eq!(w, vec![2.0]);
    }

    #[test]
    fn bernoulli_score_at_half() {
        assert!((bernoulli_log_prob_grad(0.0, true) - 0.5).abs() < 1e-15);
        assert!((bernoulli_log_prob(0.0, true) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn returns_reverse_scan() {
        let g = discounted_returns(&[1.0, 0.0, 2.0], 0.9);
        assert!((g[2] - 2.0).abs() < 1e-15);
        assert!((g[1] - 1.8).abs() < 1e-15);
        assert!((g[0] - (1.0 + 0.9 * 1.8)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(reinforce_grad(&[f64::NAN], &[1.0], 0.0).is_err());
        assert!(reinforce_grad(&[0.0], &[1.0, 2.0], 0.0).is_err());
    }
}
