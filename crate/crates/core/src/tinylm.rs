//! A desk-scale autoregressive policy: vocabulary, deterministic state
//! features, a linear-softmax model with a low-rank adapter, supervised
//! fine-tuning, and bit-exact checkpoints.

mod features;
mod policy;
mod train;
mod vocab;

pub use features::FeatureMap;
pub use policy::{
    load_checkpoint, log_softmax, lora_param_count, save_checkpoint, softmax, Checkpoint,
    TinyPolicy,
};
pub use train::{
    sample_target_tokens, sft_loss, sft_train, AdamW, AdapterGrads, SftConfig, SftReport,
};
pub use vocab::{Vocab, BOS, EOS, LABEL_GENERATED, LABEL_GIVEN_ANSWER, UNK};

pub(crate) use train::accumulate_adapter_grads;
