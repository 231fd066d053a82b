//! Gradient-variance diagnostics: single-episode policy-gradient estimates
//! at a frozen policy, weighted by the greedy-baseline advantage or by the
//! raw reward.

use serde::{Deserialize, Serialize};

use super::env::TaskEnv;
use super::loss::{episode_score_grad, CremaxConfig};
use super::rollout::{rollout_greedy, rollout_stochastic, Episode};
use crate::error::{Error, Result};
use crate::rewards::total_reward;
use crate::scalar::Real;
use crate::seed::rng_from_seed;
use crate::tinylm::{FeatureMap, TinyPolicy};

/// Per-coordinate statistics of `n` single-episode gradient estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSummary {
    /// Mean over coordinates of the per-coordinate empirical variance.
    pub mean_coordinate_variance: f64,
    pub mean_gradient: Vec<f64>,
    pub per_coordinate_variance: Vec<f64>,
    pub n_estimates: usize,
}

/// Score gradients `sum_t grad log pi(a_t|s_t)` for each episode, flattened
/// to `f64`.
pub(crate) fn per_episode_gradients<T: Real>(
    policy: &TinyPolicy<T>,
    fmap: &FeatureMap,
    episodes: &[Episode<T>],
) -> Result<Vec<Vec<f64>>> {
    episodes
        .iter()
        .map(|ep| Ok(episode_score_grad(policy, fmap, ep)?.flatten_f64()))
        .collect()
}

/// Draws `n_estimates` fresh prompts, samples one stochastic episode per
/// prompt at the frozen policy, and forms the gradient estimate
/// `(sum_t grad log pi) * w` with `w` either the greedy-baseline advantage
/// (`use_baseline`) or the raw episode reward. The probe consumes its own
/// seeded stream, so two calls with the same `probe_seed` and environment
/// state see identical episodes.
pub fn gradient_variance_probe<T: Real>(
    policy: &TinyPolicy<T>,
    env: &mut TaskEnv,
    cfg: &CremaxConfig<T>,
    n_estimates: usize,
    use_baseline: bool,
    probe_seed: u64,
) -> Result<ProbeSummary> {
    if n_estimates < 2 {
        return Err(Error::invalid("the probe needs at least two estimates"));
    }
    let fmap = policy.feature_map();
    let vocab = env.vocab().clone();
    let mut rng = rng_from_seed(probe_seed);
    let dim = (policy.feature_dim() + policy.vocab_size()) * policy.rank();
    let mut sum = vec![0.0f64; dim];
    let mut sum_sq = vec![0.0f64; dim];

    for _ in 0..n_estimates {
        let (prompt, truth) = env.sample();
        let episode = rollout_stochastic(
            policy,
            &fmap,
            &prompt,
            vocab.eos_id(),
            &mut rng,
            cfg.max_steps,
        )?;
        let reward = total_reward(&vocab.decode_answer(&episode.actions), &truth, &cfg.reward)?
            .total
            .to_f64()
            .expect("reward converts");
        let weight = if use_baseline {
            let greedy = rollout_greedy(policy, &fmap, &prompt, vocab.eos_id(), cfg.max_steps)?;
            let greedy_reward =
                total_reward(&vocab.decode_answer(&greedy.actions), &truth, &cfg.reward)?
                    .total
                    .to_f64()
                    .expect("reward converts");
            reward - greedy_reward
        } else {
            reward
        };
        let score = episode_score_grad(policy, &fmap, &episode)?.flatten_f64();
        for (j, &s) in score.iter().enumerate() {
            let g = s * weight;
            sum[j] += g;
            sum_sq[j] += g * g;
        }
    }

    let n = n_estimates as f64;
    let mean_gradient: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let per_coordinate_variance: Vec<f64> = sum_sq
        .iter()
        .zip(&mean_gradient)
        .map(|(&ss, &m)| ((ss / n - m * m).max(0.0)) * n / (n - 1.0))
        .collect();
    let mean_coordinate_variance =
        per_coordinate_variance.iter().sum::<f64>() / per_coordinate_variance.len() as f64;
    Ok(ProbeSummary {
        mean_coordinate_variance,
        mean_gradient,
        per_coordinate_variance,
        n_estimates,
    })
}
