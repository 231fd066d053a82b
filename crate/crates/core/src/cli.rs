//! The `formrl` binary surface: argument parsing, config resolution, and
//! exit-code mapping.
//!
//! Exit codes: 0 on success, 1 on operational failure, 2 on configuration
//! errors (including argument errors reported by the parser itself).

mod commands;
mod config;

pub use commands::{ClientMode, RewardCase};
pub use config::{snapshot_path, EvalSection, ModelSection, RlSection, RunConfig, SftSection};

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::cremax::TaskKind;
use crate::distill::MockProfile;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "formrl",
    version,
    about = "Formulation extraction, dataset distillation, and rule-reward RL at desk scale"
)]
pub struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; every stage derives its own substream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract description→formulation pairs from a markdown corpus.
    Extract {
        /// Directory of .md files.
        #[arg(long)]
        corpus: PathBuf,
        /// Output JSON Lines file of pairs.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated heading patterns (default: "system model,modeling framework").
        #[arg(long, value_delimiter = ',')]
        patterns: Option<Vec<String>>,
    },
    /// Distill a labeled SFT dataset from extracted pairs.
    Distill {
        /// Pairs file produced by `extract`.
        #[arg(long)]
        pairs: PathBuf,
        /// Output JSON Lines dataset.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        client: ClientMode,
        /// Behavior of the offline mock client.
        #[arg(long, value_enum, default_value = "accept-first")]
        mock_profile: MockProfile,
        #[arg(long)]
        t_max: Option<usize>,
        #[arg(long)]
        theta_fallback: Option<f64>,
        #[arg(long)]
        theta_discard: Option<f64>,
        #[arg(long)]
        l_max: Option<usize>,
        #[arg(long)]
        max_in_flight: Option<usize>,
        /// Also emit a DPO preference dataset here.
        #[arg(long)]
        emit_dpo: Option<PathBuf>,
        /// Also emit a KTO binary-label dataset here.
        #[arg(long)]
        emit_kto: Option<PathBuf>,
    },
    /// Train the policy (stage one SFT, stage two RL).
    Train {
        #[command(subcommand)]
        stage: TrainStage,
    },
    /// Greedy-decode held-out episodes and report accuracy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vocabulary sidecar for dataset-trained checkpoints; defaults to
        /// the letter vocabulary of the eval section.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Comma-separated task list.
        #[arg(long, value_enum, value_delimiter = ',')]
        tasks: Option<Vec<TaskKind>>,
        /// Also write the summary JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score (answer, truth) pairs from JSON Lines with the rule rewards.
    RewardCheck {
        #[arg(long)]
        input: PathBuf,
        /// Write breakdowns here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainStage {
    /// Stage one: supervised fine-tuning of the adapter.
    Sft {
        /// SFT dataset (JSON Lines) produced by `distill`.
        #[arg(long, conflicts_with = "env")]
        dataset: Option<PathBuf>,
        /// Train on demonstrations of a synthetic task instead.
        #[arg(long, value_enum)]
        env: Option<TaskKind>,
        /// Demonstration count for --env mode.
        #[arg(long)]
        demos: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Stage two: rule-reward RL from a post-SFT checkpoint.
    Rl {
        /// Post-SFT checkpoint used as the starting point and frozen KL
        /// reference.
        #[arg(long)]
        init_checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_enum)]
        task: Option<TaskKind>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        lambda_kl: Option<f64>,
        #[arg(long)]
        stop_at_accuracy: Option<f64>,
    },
}

/// Runs a parsed invocation. The caller maps the error to an exit code.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.set_master_seed(seed);
    }

    match cli.command {
        Command::Extract {
            corpus,
            out,
            patterns,
        } => {
            if let Some(p) = patterns {
                cfg.extract.patterns = p;
            }
            commands::cmd_extract(&cfg, &corpus, &out)
        }
        Command::Distill {
            pairs,
            out,
            client,
            mock_profile,
            t_max,
            theta_fallback,
            theta_discard,
            l_max,
            max_in_flight,
            emit_dpo,
            emit_kto,
        } => {
            apply(&mut cfg.distill.t_max, t_max);
            apply(&mut cfg.distill.theta_fallback, theta_fallback);
            apply(&mut cfg.distill.theta_discard, theta_discard);
            apply(&mut cfg.distill.l_max, l_max);
            apply(&mut cfg.distill.max_in_flight, max_in_flight);
            cfg.distill.validate()?;
            commands::cmd_distill(
                &cfg,
                &pairs,
                &out,
                client,
                mock_profile,
                emit_dpo.as_deref(),
                emit_kto.as_deref(),
            )
        }
        Command::Train { stage } => match stage {
            TrainStage::Sft {
                dataset,
                env,
                demos,
                out_dir,
                epochs,
                learning_rate,
                batch_size,
            } => {
                apply(&mut cfg.sft.demos, demos);
                apply(&mut cfg.sft.epochs, epochs);
                apply(&mut cfg.sft.learning_rate, learning_rate);
                apply(&mut cfg.sft.batch_size, batch_size);
                commands::cmd_train_sft(&cfg, dataset.as_deref(), env, &out_dir)
            }
            TrainStage::Rl {
                init_checkpoint,
                out_dir,
                iterations,
                task,
                batch_size,
                learning_rate,
                lambda_kl,
                stop_at_accuracy,
            } => {
                apply(&mut cfg.rl.iterations, iterations);
                apply(&mut cfg.rl.task, task);
                apply(&mut cfg.rl.batch_size, batch_size);
                apply(&mut cfg.rl.learning_rate, learning_rate);
                apply(&mut cfg.rl.lambda_kl, lambda_kl);
                if stop_at_accuracy.is_some() {
                    cfg.rl.stop_at_accuracy = stop_at_accuracy;
                }
                commands::cmd_train_rl(&cfg, &init_checkpoint, &out_dir)
            }
        },
        Command::Eval {
            checkpoint,
            vocab,
            episodes,
            tasks,
            out,
        } => {
            apply(&mut cfg.eval.episodes, episodes);
            if let Some(t) = tasks {
                cfg.eval.tasks = t;
            }
            commands::cmd_eval(&cfg, &checkpoint, vocab.as_deref(), out.as_deref())
        }
        Command::RewardCheck { input, output } => {
            commands::cmd_reward_check(&cfg, &input, output.as_deref())
        }
    }
}

fn apply<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Exit code for a failed run, per the documented convention.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) => 2,
        _ => 1,
    }
}
