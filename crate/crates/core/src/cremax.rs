//! Rule-reward reinforcement learning: token-sequence rollouts, the
//! greedy-baseline advantage, exact KL regularization, the combined
//! objective, the training loop, and variance diagnostics.

mod env;
mod loss;
mod probe;
mod rollout;
mod train;

pub use env::{TaskEnv, TaskKind};
pub use loss::{
    baseline_advantage, collect_rollouts, cremax_loss, cremax_loss_given, episode_score_grad,
    kl_divergence, kl_term, BatchRollouts, CremaxConfig,
};
pub use probe::{gradient_variance_probe, ProbeSummary};
pub use rollout::{rollout_greedy, rollout_stochastic, Episode, Termination};
pub use train::{greedy_accuracy, train_rl, IterationMetrics, RlReport};
