//! Linear-softmax autoregressive policy with a low-rank adapter.
//!
//! Effective logits are `x^T (W0 + A B^T)` when the adapter is enabled and
//! `x^T W0` otherwise. Training touches only `A` and `B`; `W0` stays frozen
//! bit-for-bit.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyPolicy<T: Real> {
    w0: Array2<T>,
    a: Array2<T>,
    b: Array2<T>,
    adapter_enabled: bool,
    context_window: usize,
    init_seed: u64,
}

impl<T: Real> TinyPolicy<T> {
    /// Seeded initialization: `W0` is a small Gaussian stand-in for
    /// pretrained weights, `A` is Gaussian scaled by `1/sqrt(r)`, and `B` is
    /// zero so the adapted policy starts exactly equal to the base policy.
    pub fn new(
        feature_dim: usize,
        vocab_size: usize,
        rank: usize,
        context_window: usize,
        seed: u64,
        w0_scale: T,
    ) -> Result<Self> {
        if feature_dim == 0 || vocab_size == 0 || rank == 0 {
            return Err(Error::invalid("policy dimensions must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let mut gauss = |scale: T| -> T {
            let z: f64 = StandardNormal.sample(&mut rng);
            real::<T>(z) * scale
        };
        let w0 = Array2::from_shape_simple_fn((feature_dim, vocab_size), || gauss(w0_scale));
        let a_scale = T::one() / real::<T>((rank as f64).sqrt());
        let a = Array2::from_shape_simple_fn((feature_dim, rank), || gauss(a_scale));
        let b = Array2::zeros((vocab_size, rank));
        Ok(TinyPolicy {
            w0,
            a,
            b,
            adapter_enabled: true,
            context_window,
            init_seed: seed,
        })
    }

    pub(crate) fn from_parts(
        w0: Array2<T>,
        a: Array2<T>,
        b: Array2<T>,
        adapter_enabled: bool,
        context_window: usize,
        init_seed: u64,
    ) -> Result<Self> {
        let (d, k) = w0.dim();
        if a.dim().0 != d || b.dim().0 != k || a.dim().1 != b.dim().1 {
            return Err(Error::invalid("inconsistent policy matrix shapes"));
        }
        Ok(TinyPolicy {
            w0,
            a,
            b,
            adapter_enabled,
            context_window,
            init_seed,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.w0.dim().0
    }

    pub fn vocab_size(&self) -> usize {
        self.w0.dim().1
    }

    pub fn rank(&self) -> usize {
        self.a.dim().1
    }

    pub fn context_window(&self) -> usize {
        self.context_window
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn adapter_enabled(&self) -> bool {
        self.adapter_enabled
    }

    pub fn set_adapter_enabled(&mut self, enabled: bool) {
        self.adapter_enabled = enabled;
    }

    pub fn feature_map(&self) -> FeatureMap {
        FeatureMap::new(self.vocab_size(), self.context_window)
    }

    pub fn w0(&self) -> &Array2<T> {
        &self.w0
    }

    pub fn adapter(&self) -> (&Array2<T>, &Array2<T>) {
        (&self.a, &self.b)
    }

    pub(crate) fn adapter_mut(&mut self) -> (&mut Array2<T>, &mut Array2<T>) {
        (&mut self.a, &mut self.b)
    }

    pub(crate) fn set_adapter(&mut self, a: Array2<T>, b: Array2<T>) {
        self.a = a;
        self.b = b;
    }

    /// The exact bit patterns of `W0`, for freeze checks.
    pub fn w0_bits(&self) -> Vec<u64> {
        self.w0
            .iter()
            .map(|v| {
                v.to_f64()
                    .expect("scalar converts to f64 losslessly for bit capture")
                    .to_bits()
            })
            .collect()
    }

    /// Logits `x^T (W0 + [adapter] A B^T)`, computed without materializing
    /// the effective weight matrix.
    pub fn logits(&self, features: &Array1<T>) -> Result<Array1<T>> {
        if features.len() != self.feature_dim() {
            return Err(Error::invalid(format!(
                "feature dimension mismatch: policy expects {}, got {}",
                self.feature_dim(),
                features.len()
            )));
        }
        let mut z = self.w0.t().dot(features);
        if self.adapter_enabled {
            let u = self.a.t().dot(features);
            z = z + self.b.dot(&u);
        }
        Ok(z)
    }

    pub fn log_softmax_at(&self, features: &Array1<T>) -> Result<Array1<T>> {
        Ok(log_softmax(&self.logits(features)?))
    }

    pub fn probabilities_at(&self, features: &Array1<T>) -> Result<Array1<T>> {
        Ok(softmax(&self.logits(features)?))
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &Array1<T>) -> Array1<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps = logits.mapv(|z| (z - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Numerically stable log-softmax.
pub fn log_softmax<T: Real>(logits: &Array1<T>) -> Array1<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = logits.mapv(|z| (z - max).exp()).sum().ln();
    logits.mapv(|z| z - max - log_sum)
}

/// Parameter counts `(full, adapter)` for a `d x k` weight with a rank-`r`
/// decomposition: `d*k` against `r*(d + k)`. The adapter only wins when
/// `r < d*k/(d+k)`; configurations past that point are permitted but logged.
pub fn lora_param_count(d: usize, k: usize, r: usize) -> Result<(u64, u64)> {
    if d == 0 || k == 0 || r == 0 {
        return Err(Error::invalid("dimensions must be positive"));
    }
    let full = d as u64 * k as u64;
    let adapter = r as u64 * (d as u64 + k as u64);
    if adapter >= full {
        log::warn!(
            "rank {r} gives {adapter} adapter parameters, not fewer than the {full} full parameters"
        );
    }
    Ok((full, adapter))
}

/// Serializable checkpoint payload; bit-exact for `f32`/`f64` because JSON
/// floats are written in shortest round-trip form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Checkpoint<T: Real> {
    pub version: u32,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub rank: usize,
    pub context_window: usize,
    pub adapter_enabled: bool,
    pub vocab_hash: u64,
    pub seed: u64,
    /// Stream position of the training RNG, for resumable RL runs.
    pub rng_word_pos: Option<u64>,
    pub w0: Vec<Vec<T>>,
    pub a: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
}

fn to_rows<T: Real>(m: &Array2<T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows<T: Real>(rows: &[Vec<T>], what: &str) -> Result<Array2<T>> {
    let nrows = rows.len();
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::CheckpointMismatch(format!("ragged {what} matrix")));
    }
    let flat: Vec<T> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| Error::CheckpointMismatch(format!("bad {what} shape: {e}")))
}

/// Writes a checkpoint, binding it to the vocabulary via its hash.
pub fn save_checkpoint<T: Real>(
    policy: &TinyPolicy<T>,
    vocab: &super::Vocab,
    path: &std::path::Path,
    rng_word_pos: Option<u64>,
) -> Result<()> {
    let checkpoint = Checkpoint {
        version: 1,
        feature_dim: policy.feature_dim(),
        vocab_size: policy.vocab_size(),
        rank: policy.rank(),
        context_window: policy.context_window(),
        adapter_enabled: policy.adapter_enabled(),
        vocab_hash: vocab.hash(),
        seed: policy.init_seed(),
        rng_word_pos,
        w0: to_rows(&policy.w0),
        a: to_rows(&policy.a),
        b: to_rows(&policy.b),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &checkpoint)?;
    Ok(())
}

/// Loads a checkpoint, verifying the vocabulary hash and shapes.
pub fn load_checkpoint<T: Real>(
    path: &std::path::Path,
    vocab: &super::Vocab,
) -> Result<(TinyPolicy<T>, Option<u64>)> {
    let file = std::fs::File::open(path)?;
    let checkpoint: Checkpoint<T> = serde_json::from_reader(std::io::BufReader::new(file))?;
    if checkpoint.vocab_hash != vocab.hash() {
        return Err(Error::CheckpointMismatch(format!(
            "vocabulary hash {:#x} does not match the checkpoint's {:#x}",
            vocab.hash(),
            checkpoint.vocab_hash
        )));
    }
    if checkpoint.vocab_size != vocab.size() {
        return Err(Error::CheckpointMismatch(
            "vocabulary size does not match checkpoint".into(),
        ));
    }
    let w0 = from_rows(&checkpoint.w0, "w0")?;
    let a = from_rows(&checkpoint.a, "a")?;
    let b = from_rows(&checkpoint.b, "b")?;
    if w0.dim() != (checkpoint.feature_dim, checkpoint.vocab_size)
        || a.dim() != (checkpoint.feature_dim, checkpoint.rank)
        || b.dim() != (checkpoint.vocab_size, checkpoint.rank)
    {
        return Err(Error::CheckpointMismatch(
            "matrix shapes disagree with header".into(),
        ));
    }
    let policy = TinyPolicy::from_parts(
        w0,
        a,
        b,
        checkpoint.adapter_enabled,
        checkpoint.context_window,
        checkpoint.seed,
    )?;
    Ok((policy, checkpoint.rng_word_pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylm::Vocab;
    use ndarray::array;

    fn small_policy() -> TinyPolicy<f64> {
        TinyPolicy::new(4, 3, 2, 1, 7, 0.1).unwrap()
    }

    #[test]
    fn zero_adapter_matches_base_logits() {
        let mut p = small_policy();
        // B starts at zero, so the adapter contributes nothing either way.
        let x = array![1.0, 0.5, -0.25, 0.0];
        let on = p.logits(&x).unwrap();
        p.set_adapter_enabled(false);
        let off = p.logits(&x).unwrap();
        assert_eq!(on, off);
    }

    #[test]
    fn explicit_zero_a_matrix_is_inert() {
        let w0 = array![[0.5, -0.5], [1.0, 0.25]];
        let a = Array2::zeros((2, 2));
        let b = array![[0.3, 0.4], [0.1, 0.2]];
        let mut p = TinyPolicy::from_parts(w0, a, b, true, 1, 0).unwrap();
        let x = array![1.0, 2.0];
        let on = p.logits(&x).unwrap();
        p.set_adapter_enabled(false);
        let off = p.logits(&x).unwrap();
        assert_eq!(on, off);
    }

    #[test]
    fn zero_features_give_uniform_distribution() {
        let p = small_policy();
        let x = Array1::zeros(4);
        let probs = p.probabilities_at(&x).unwrap();
        for &v in probs.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = small_policy();
        let x = array![0.3, -1.2, 2.0, 0.7];
        let probs = p.probabilities_at(&x).unwrap();
        assert!((probs.sum() - 1.0).abs() < 1e-12);
        let logp = p.log_softmax_at(&x).unwrap();
        let from_log: f64 = logp.mapv(f64::exp).sum();
        assert!((from_log - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = small_policy();
        assert!(p.logits(&Array1::zeros(3)).is_err());
    }

    #[test]
    fn adapter_starts_as_identity_update() {
        // B = 0 at init, so freshly created policies equal their base.
        let p = small_policy();
        let (_, b) = p.adapter();
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_counts_match_formulas() {
        assert_eq!(lora_param_count(16, 16, 4).unwrap(), (256, 128));
        assert_eq!(lora_param_count(8, 8, 8).unwrap(), (64, 128));
        assert_eq!(
            lora_param_count(4096, 32000, 256).unwrap(),
            (131_072_000, 9_240_576)
        );
        assert!(lora_param_count(0, 4, 1).is_err());
    }

    #[test]
    fn adapter_beats_full_below_the_algebraic_bound() {
        for (d, k, r) in [(32, 16, 4), (64, 64, 16), (100, 10, 5)] {
            let (full, adapter) = lora_param_count(d, k, r).unwrap();
            let bound = (d * k) as f64 / (d + k) as f64;
            if (r as f64) < bound {
                assert!(adapter < full, "({d},{k},{r})");
            } else {
                assert!(adapter >= full, "({d},{k},{r})");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let vocab = Vocab::letters(3).unwrap();
        let p = TinyPolicy::<f64>::new(5, vocab.size(), 2, 1, 11, 0.05).unwrap();
        save_checkpoint(&p, &vocab, &path, Some(42)).unwrap();
        let (q, pos) = load_checkpoint::<f64>(&path, &vocab).unwrap();
        assert_eq!(pos, Some(42));
        assert_eq!(p, q);
        assert_eq!(p.w0_bits(), q.w0_bits());
    }

    #[test]
    fn checkpoint_vocab_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let vocab = Vocab::letters(3).unwrap();
        let p = TinyPolicy::<f64>::new(5, vocab.size(), 2, 1, 11, 0.05).unwrap();
        save_checkpoint(&p, &vocab, &path, None).unwrap();
        let other = Vocab::letters(4).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path, &other),
            Err(Error::CheckpointMismatch(_))
        ));
    }
}
