//! Stochastic and greedy rollouts. The state at step `t` is the prompt
//! concatenated with the tokens generated so far; sampling the end-of-sequence
//! token terminates the episode without recording it.

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tinylm::{FeatureMap, TinyPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

/// One finished rollout: the recorded actions exclude the terminating EOS, and
/// `per_step_logprobs[t]` is the exact log-probability of `actions[t]` at the
/// state it was sampled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T: Real> {
    pub prompt: Vec<usize>,
    pub actions: Vec<usize>,
    pub per_step_logprobs: Vec<T>,
    pub terminated_by: Termination,
}

impl<T: Real> Episode<T> {
    pub fn logprob_sum(&self) -> T {
        self.per_step_logprobs.iter().copied().sum()
    }

    /// The states visited while recording actions: one prefix per action.
    pub fn states(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.actions.len()).map(move |t| &self.actions[..t])
    }
}

fn sample_index<T: Real>(probs: &Array1<T>, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.to_f64().expect("probability converts to f64");
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax_lowest_index<T: Real>(values: &Array1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Samples `a_t ~ softmax(logits(s_t))` autoregressively until EOS or
/// `max_steps` tokens.
pub fn rollout_stochastic<T: Real>(
    policy: &TinyPolicy<T>,
    fmap: &FeatureMap,
    prompt: &[usize],
    eos_id: usize,
    rng: &mut impl Rng,
    max_steps: usize,
) -> Result<Episode<T>> {
    if max_steps == 0 {
        return Err(Error::invalid("max_steps must be at least 1"));
    }
    let mut actions = Vec::new();
    let mut logprobs = Vec::new();
    let mut terminated_by = Termination::MaxLen;
    for _ in 0..max_steps {
        let features = fmap.features::<T>(prompt, &actions);
        let logp = policy.log_softmax_at(&features)?;
        let probs = logp.mapv(T::exp);
        let action = sample_index(&probs, rng);
        if action == eos_id {
            terminated_by = Termination::Eos;
            break;
        }
        actions.push(action);
        logprobs.push(logp[action]);
    }
    Ok(Episode {
        prompt: prompt.to_vec(),
        actions,
        per_step_logprobs: logprobs,
        terminated_by,
    })
}

/// Deterministic rollout taking the argmax token at every step, ties broken
/// toward the lowest vocabulary index. Consumes no randomness.
pub fn rollout_greedy<T: Real>(
    policy: &TinyPolicy<T>,
    fmap: &FeatureMap,
    prompt: &[usize],
    eos_id: usize,
    max_steps: usize,
) -> Result<Episode<T>> {
    if max_steps == 0 {
        return Err(Error::invalid("max_steps must be at least 1"));
    }
    let mut actions = Vec::new();
    let mut logprobs = Vec::new();
    let mut terminated_by = Termination::MaxLen;
    for _ in 0..max_steps {
        let features = fmap.features::<T>(prompt, &actions);
        let logp = policy.log_softmax_at(&features)?;
        let action = argmax_lowest_index(&logp);
        if action == eos_id {
            terminated_by = Termination::Eos;
            break;
        }
        actions.push(action);
        logprobs.push(logp[action]);
    }
    Ok(Episode {
        prompt: prompt.to_vec(),
        actions,
        per_step_logprobs: logprobs,
        terminated_by,
    })
}
