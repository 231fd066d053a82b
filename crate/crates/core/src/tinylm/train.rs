//! Supervised fine-tuning: token-level cross-entropy over the adapter with
//! analytic gradients and a decoupled-weight-decay optimizer.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use super::policy::TinyPolicy;
use super::vocab::Vocab;
use crate::distill::SftSample;
use crate::error::{Error, Result};
use crate::scalar::{real, real_from_usize, Real};
use crate::seed::substream_rng;

/// Gradients over the adapter matrices only; `W0` has no gradient by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads<T: Real> {
    pub a: Array2<T>,
    pub b: Array2<T>,
}

impl<T: Real> AdapterGrads<T> {
    pub fn zeros_like(policy: &TinyPolicy<T>) -> Self {
        AdapterGrads {
            a: Array2::zeros((policy.feature_dim(), policy.rank())),
            b: Array2::zeros((policy.vocab_size(), policy.rank())),
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.a.mapv_inplace(|v| v * factor);
        self.b.mapv_inplace(|v| v * factor);
    }

    pub fn add(&mut self, other: &AdapterGrads<T>) {
        self.a += &other.a;
        self.b += &other.b;
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }

    /// All entries as `f64`, `A` rows first then `B` rows.
    pub fn flatten_f64(&self) -> Vec<f64> {
        self.a
            .iter()
            .chain(self.b.iter())
            .map(|v| v.to_f64().expect("gradient converts to f64"))
            .collect()
    }
}

/// Accumulates the chain rule from a per-logit error vector into the adapter
/// gradients: `dA += x (e^T B)`, `dB += e (x^T A)`.
pub(crate) fn accumulate_adapter_grads<T: Real>(
    policy: &TinyPolicy<T>,
    features: &Array1<T>,
    logit_error: &Array1<T>,
    grads: &mut AdapterGrads<T>,
) {
    let (a, b) = policy.adapter();
    let u = logit_error.dot(b); // r
    let v = features.dot(a); // r
    for (i, &xi) in features.iter().enumerate() {
        if xi != T::zero() {
            grads.a.row_mut(i).scaled_add(xi, &u);
        }
    }
    for (j, &ej) in logit_error.iter().enumerate() {
        if ej != T::zero() {
            grads.b.row_mut(j).scaled_add(ej, &v);
        }
    }
}

/// The SFT target token sequence: reasoning, then formulation, then the label
/// token, closed by the end-of-sequence token.
pub fn sample_target_tokens(sample: &SftSample, vocab: &Vocab) -> Vec<usize> {
    let mut tokens = vocab.encode(&sample.reasoning);
    tokens.extend(vocab.encode(&sample.formulation));
    tokens.push(vocab.label_id(sample.label));
    tokens.push(vocab.eos_id());
    tokens
}

/// Mean token-level negative log-likelihood of the batch targets under
/// teacher forcing, with analytic adapter gradients.
pub fn sft_loss<T: Real>(
    policy: &TinyPolicy<T>,
    batch: &[SftSample],
    vocab: &Vocab,
    fmap: &FeatureMap,
) -> Result<(T, AdapterGrads<T>)> {
    if batch.is_empty() {
        return Err(Error::invalid("sft batch must be non-empty"));
    }
    if !policy.adapter_enabled() {
        return Err(Error::invalid(
            "sft training requires the adapter to be enabled",
        ));
    }
    let mut loss = T::zero();
    let mut grads = AdapterGrads::zeros_like(policy);
    let mut token_count = 0usize;
    for sample in batch {
        let prompt = vocab.encode(&sample.description);
        let targets = sample_target_tokens(sample, vocab);
        for t in 0..targets.len() {
            let features = fmap.features::<T>(&prompt, &targets[..t]);
            let logp = policy.log_softmax_at(&features)?;
            loss -= logp[targets[t]];
            let mut error = logp.mapv(T::exp);
            error[targets[t]] -= T::one();
            accumulate_adapter_grads(policy, &features, &error, &mut grads);
            token_count += 1;
        }
    }
    let scale = T::one() / real_from_usize::<T>(token_count);
    grads.scale(scale);
    Ok((loss * scale, grads))
}

/// Optimizer and schedule settings for SFT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default)]
pub struct SftConfig<T: Real> {
    pub learning_rate: T,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    /// Scale the learning rate linearly to zero across the run.
    pub linear_decay: bool,
}

impl<T: Real> Default for SftConfig<T> {
    fn default() -> Self {
        SftConfig {
            learning_rate: real(0.05),
            epochs: 50,
            batch_size: 8,
            seed: 0,
            weight_decay: real(0.01),
            beta1: real(0.9),
            beta2: real(0.999),
            epsilon: real(1e-8),
            linear_decay: true,
        }
    }
}

/// First-order optimizer with decoupled weight decay over the adapter pair.
#[derive(Debug, Clone)]
pub struct AdamW<T: Real> {
    m_a: Array2<T>,
    v_a: Array2<T>,
    m_b: Array2<T>,
    v_b: Array2<T>,
    step: usize,
    beta1: T,
    beta2: T,
    epsilon: T,
    weight_decay: T,
}

impl<T: Real> AdamW<T> {
    pub fn new(policy: &TinyPolicy<T>, beta1: T, beta2: T, epsilon: T, weight_decay: T) -> Self {
        AdamW {
            m_a: Array2::zeros((policy.feature_dim(), policy.rank())),
            v_a: Array2::zeros((policy.feature_dim(), policy.rank())),
            m_b: Array2::zeros((policy.vocab_size(), policy.rank())),
            v_b: Array2::zeros((policy.vocab_size(), policy.rank())),
            step: 0,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        }
    }

    pub fn for_config(policy: &TinyPolicy<T>, cfg: &SftConfig<T>) -> Self {
        AdamW::new(policy, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay)
    }

    /// One update of `A` and `B` at the scheduled learning rate. With
    /// `lr = 0` the parameters are untouched bit-for-bit.
    pub fn update(&mut self, policy: &mut TinyPolicy<T>, grads: &AdapterGrads<T>, lr: T) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (beta1, beta2, eps, wd) = (self.beta1, self.beta2, self.epsilon, self.weight_decay);
        let (a, b) = policy.adapter_mut();
        for (param, grad, m, v) in [
            (a, &grads.a, &mut self.m_a, &mut self.v_a),
            (b, &grads.b, &mut self.m_b, &mut self.v_b),
        ] {
            ndarray::Zip::from(param)
                .and(grad)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (T::one() - beta1) * g;
                    *v = beta2 * *v + (T::one() - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p = *p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
                });
        }
    }
}

/// Per-epoch mean losses plus the exact full-dataset loss before and after.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SftReport<T: Real> {
    pub initial_loss: T,
    pub final_loss: T,
    pub epoch_losses: Vec<T>,
}

/// Mini-batch SFT with a seeded shuffle. `W0` is never written; divergence
/// (a non-finite loss) aborts with a diagnostic.
pub fn sft_train<T: Real>(
    policy: &mut TinyPolicy<T>,
    dataset: &[SftSample],
    vocab: &Vocab,
    cfg: &SftConfig<T>,
) -> Result<SftReport<T>> {
    if dataset.is_empty() {
        return Err(Error::invalid("sft dataset must be non-empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let fmap = policy.feature_map();
    let (initial_loss, _) = sft_loss(policy, dataset, vocab, &fmap)?;
    let mut optimizer = AdamW::for_config(policy, cfg);
    let mut rng = substream_rng(cfg.seed, "sft-shuffle");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batches_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch).max(1);
    let mut step = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<SftSample> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (loss, grads) = sft_loss(policy, &batch, vocab, &fmap)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    step,
                    message: format!("non-finite sft loss {loss}"),
                });
            }
            let lr = if cfg.linear_decay {
                cfg.learning_rate
                    * (T::one() - real_from_usize::<T>(step) / real_from_usize::<T>(total_steps))
            } else {
                cfg.learning_rate
            };
            optimizer.update(policy, &grads, lr);
            epoch_loss += loss;
            step += 1;
        }
        epoch_losses.push(epoch_loss / real_from_usize::<T>(batches_per_epoch));
    }

    let (final_loss, _) = sft_loss(policy, dataset, vocab, &fmap)?;
    Ok(SftReport {
        initial_loss,
        final_loss,
        epoch_losses,
    })
}
