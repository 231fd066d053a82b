//! Deterministic state featurization for the linear-softmax policy.
//!
//! The state of an autoregressive rollout is the prompt concatenated with the
//! tokens generated so far. Its feature vector stacks:
//!
//! * a constant bias entry,
//! * one-hot blocks for the last `window` tokens of the state,
//! * one-hot summaries of the prompt token aligned with the current step in
//!   forward, mirrored, and sorted order (enough for a linear policy to
//!   represent the copy, reverse, and sort transforms),
//! * a prompt-exhausted flag and a normalized-progress entry.

use ndarray::Array1;

use crate::scalar::{real, real_from_usize, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMap {
    vocab_size: usize,
    window: usize,
}

impl FeatureMap {
    pub fn new(vocab_size: usize, window: usize) -> Self {
        FeatureMap { vocab_size, window }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Feature dimension: `1 + window*k + 3k + 2`.
    pub fn dim(&self) -> usize {
        1 + self.window * self.vocab_size + 3 * self.vocab_size + 2
    }

    /// Features of the state `prompt ++ generated`. Pure: identical inputs
    /// yield identical vectors.
    pub fn features<T: Real>(&self, prompt: &[usize], generated: &[usize]) -> Array1<T> {
        let k = self.vocab_size;
        let t = generated.len();
        let mut x = Array1::zeros(self.dim());
        x[0] = T::one();

        // Last `window` tokens of the full state, most recent first.
        let state_len = prompt.len() + t;
        for j in 0..self.window {
            if j >= state_len {
                break;
            }
            let idx = state_len - 1 - j;
            let token = if idx < prompt.len() {
                prompt[idx]
            } else {
                generated[idx - prompt.len()]
            };
            debug_assert!(token < k);
            x[1 + j * k + token] = T::one();
        }

        let fwd = 1 + self.window * k;
        let bwd = fwd + k;
        let srt = bwd + k;
        if t < prompt.len() {
            x[fwd + prompt[t]] = T::one();
            x[bwd + prompt[prompt.len() - 1 - t]] = T::one();
            let mut sorted = prompt.to_vec();
            sorted.sort_unstable();
            x[srt + sorted[t]] = T::one();
        }

        let flags = srt + k;
        if t >= prompt.len() {
            x[flags] = T::one();
        }
        let denom = prompt.len().max(1);
        let progress = real_from_usize::<T>(t) / real_from_usize::<T>(denom);
        x[flags + 1] = progress.min(real(2.0));
        x
    }
}
