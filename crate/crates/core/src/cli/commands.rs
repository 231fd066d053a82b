//! Subcommand implementations. Each command with file outputs writes a
//! resolved-config snapshot next to them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{snapshot_path, RunConfig};
use crate::corpus;
use crate::cremax::{self, TaskEnv, TaskKind};
use crate::distill::{self, HttpLlm, LlmClient, MockLlm, MockProfile};
use crate::error::{Error, Result};
use crate::rewards::{self, RewardSpec};
use crate::seed::substream_seed;
use crate::tinylm::{self, TinyPolicy, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ClientMode {
    Mock,
    Http,
}

#[derive(Debug, Serialize)]
struct ExtractSummary {
    pairs: usize,
    files_ok: usize,
    files_failed: usize,
}

#[derive(Debug, Serialize)]
struct FileError {
    file: String,
    error: String,
}

/// Extracts pairs from every `.md` file in the corpus directory, in
/// lexicographic path order. Unreadable files are skipped with an error
/// record on stderr; the command fails only when no file succeeds.
pub fn cmd_extract(cfg: &RunConfig, corpus_dir: &Path, out: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(corpus_dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "md"))
        .collect();
    paths.sort();

    let mut records = Vec::new();
    let mut files_ok = 0usize;
    let mut files_failed = 0usize;
    for path in &paths {
        match corpus::load_document(path)
            .and_then(|doc| corpus::extract_from_document(&doc, &cfg.extract.patterns))
        {
            Ok(mut pairs) => {
                files_ok += 1;
                records.append(&mut pairs);
            }
            Err(e) => {
                files_failed += 1;
                let record = FileError {
                    file: path.display().to_string(),
                    error: e.to_string(),
                };
                eprintln!("{}", serde_json::to_string(&record)?);
            }
        }
    }

    write_jsonl(&records, out)?;
    cfg.write_snapshot(&snapshot_path(out))?;
    let summary = ExtractSummary {
        pairs: records.len(),
        files_ok,
        files_failed,
    };
    println!("{}", serde_json::to_string(&summary)?);
    if !paths.is_empty() && files_ok == 0 {
        return Err(Error::Operational(
            "every corpus file failed to parse".into(),
        ));
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    for record in records {
        writeln!(writer, "{}", serde_json::to_string(record)?)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_pairs(path: &Path) -> Result<Vec<corpus::PairRecord>> {
    let raw = std::fs::read_to_string(path)?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Distills the SFT dataset (and optional DPO/KTO views) from extracted
/// pairs through the selected client.
pub fn cmd_distill(
    cfg: &RunConfig,
    pairs_path: &Path,
    out: &Path,
    client_mode: ClientMode,
    mock_profile: MockProfile,
    emit_dpo: Option<&Path>,
    emit_kto: Option<&Path>,
) -> Result<()> {
    let pairs = read_pairs(pairs_path)?;
    let client: Box<dyn LlmClient> = match client_mode {
        ClientMode::Mock => Box::new(MockLlm::with_answer_key(
            cfg.distill.seed,
            mock_profile,
            pairs
                .iter()
                .map(|p| (p.description.clone(), p.formulation.clone())),
        )),
        ClientMode::Http => {
            if cfg.distill.endpoint.is_empty() {
                return Err(Error::config("http client needs distill.endpoint"));
            }
            Box::new(HttpLlm::from_env(&cfg.distill.endpoint, &cfg.distill.model)?)
        }
    };

    let outcomes = distill::distill_pairs(&pairs, client.as_ref(), &cfg.distill)?;
    let samples: Vec<distill::SftSample> = outcomes
        .iter()
        .filter_map(|o| o.sample.clone())
        .collect();
    distill::emit_sft_dataset(&samples, out)?;
    if let Some(path) = emit_dpo {
        let triples = distill::dpo_triples(&outcomes);
        distill::emit_dpo_dataset(&triples, path)?;
    }
    if let Some(path) = emit_kto {
        let items = distill::kto_items(&outcomes);
        distill::emit_kto_dataset(&items, path)?;
    }
    cfg.write_snapshot(&snapshot_path(out))?;
    let summary = distill::summarize(&outcomes);
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct SftSummary {
    samples: usize,
    initial_loss: f64,
    final_loss: f64,
    checkpoint: String,
}

/// Stage one: SFT either on a dataset file or on demonstrations of a
/// synthetic task. Writes checkpoint, vocabulary, report, and snapshot into
/// the output directory.
pub fn cmd_train_sft(
    cfg: &RunConfig,
    dataset: Option<&Path>,
    env_task: Option<TaskKind>,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let (samples, vocab) = match (dataset, env_task) {
        (Some(path), None) => {
            let samples = distill::read_sft_dataset(path)?;
            let texts: Vec<String> = samples
                .iter()
                .flat_map(|s| {
                    [
                        s.description.clone(),
                        s.reasoning.clone(),
                        s.formulation.clone(),
                    ]
                })
                .collect();
            let vocab = Vocab::from_texts(texts.iter().map(String::as_str))?;
            (samples, vocab)
        }
        (None, Some(task)) => {
            let vocab = Vocab::letters(cfg.rl.n_symbols)?;
            let mut env = TaskEnv::new(
                task,
                &vocab,
                cfg.rl.prompt_len,
                substream_seed(cfg.sft.seed, "demos"),
            )?;
            (env.demonstrations(cfg.sft.demos), vocab)
        }
        _ => {
            return Err(Error::config(
                "train sft needs exactly one of --dataset or --env",
            ))
        }
    };
    if samples.is_empty() {
        return Err(Error::config("the sft dataset is empty"));
    }

    let fmap = tinylm::FeatureMap::new(vocab.size(), cfg.model.context_window);
    let mut policy = TinyPolicy::<f64>::new(
        fmap.dim(),
        vocab.size(),
        cfg.model.rank,
        cfg.model.context_window,
        substream_seed(cfg.seed, "model-init"),
        cfg.model.w0_scale,
    )?;
    let report = tinylm::sft_train(&mut policy, &samples, &vocab, &cfg.sft_config())?;

    let checkpoint = out_dir.join("checkpoint.json");
    tinylm::save_checkpoint(&policy, &vocab, &checkpoint, None)?;
    std::fs::write(out_dir.join("vocab.json"), serde_json::to_string(&vocab)?)?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string(&report)?,
    )?;
    cfg.write_snapshot(&out_dir.join("config.toml"))?;
    let summary = SftSummary {
        samples: samples.len(),
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
        checkpoint: checkpoint.display().to_string(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct RlSummary {
    iterations_run: usize,
    final_eval_accuracy: f64,
    reached_target_at: Option<usize>,
    checkpoint: String,
}

/// Stage two: RL from a post-SFT checkpoint, which also serves as the frozen
/// KL reference. Writes checkpoint, metrics log, report, and snapshot.
pub fn cmd_train_rl(cfg: &RunConfig, init_checkpoint: &Path, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let vocab = Vocab::letters(cfg.rl.n_symbols)?;
    let (mut policy, _) = tinylm::load_checkpoint::<f64>(init_checkpoint, &vocab)?;
    let reference = policy.clone();
    let mut env = TaskEnv::new(
        cfg.rl.task,
        &vocab,
        cfg.rl.prompt_len,
        substream_seed(cfg.rl.seed, "env"),
    )?;
    let report = cremax::train_rl(&mut policy, &reference, &mut env, &cfg.cremax_config())?;

    let checkpoint = out_dir.join("checkpoint.json");
    tinylm::save_checkpoint(&policy, &vocab, &checkpoint, Some(report.rng_word_pos))?;
    write_jsonl(&report.iterations, &out_dir.join("metrics.jsonl"))?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string(&report)?,
    )?;
    cfg.write_snapshot(&out_dir.join("config.toml"))?;
    let summary = RlSummary {
        iterations_run: report.iterations.len(),
        final_eval_accuracy: report.final_eval_accuracy,
        reached_target_at: report.reached_target_at,
        checkpoint: checkpoint.display().to_string(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    mean_accuracy: f64,
    episodes_per_task: usize,
    per_task: BTreeMap<String, f64>,
}

/// Greedy-decodes held-out episodes and reports exact-match accuracy per
/// task.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    vocab_file: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    if cfg.eval.episodes == 0 {
        return Err(Error::config("eval needs at least one episode"));
    }
    let vocab = match vocab_file {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => Vocab::letters(cfg.eval.n_symbols)?,
    };
    let (policy, _) = tinylm::load_checkpoint::<f64>(checkpoint, &vocab)?;
    let mut per_task = BTreeMap::new();
    for task in &cfg.eval.tasks {
        let mut env = TaskEnv::new(
            *task,
            &vocab,
            cfg.eval.prompt_len,
            substream_seed(cfg.eval.seed, task.name()),
        )?;
        let accuracy =
            cremax::greedy_accuracy(&policy, &mut env, cfg.eval.episodes, cfg.eval.max_steps)?;
        per_task.insert(task.name().to_owned(), accuracy);
    }
    let mean_accuracy = per_task.values().sum::<f64>() / per_task.len() as f64;
    let summary = EvalSummary {
        mean_accuracy,
        episodes_per_task: cfg.eval.episodes,
        per_task,
    };
    let rendered = serde_json::to_string(&summary)?;
    if let Some(path) = out {
        std::fs::write(path, &rendered)?;
        cfg.write_snapshot(&snapshot_path(path))?;
    }
    println!("{rendered}");
    Ok(())
}

/// One `reward-check` input line: the pair to score plus optional overrides
/// of the base reward spec.
#[derive(Debug, Clone, Deserialize)]
pub struct RewardCase {
    pub answer: String,
    pub truth: String,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub lambda_rep: Option<f64>,
    #[serde(default)]
    pub n_min: Option<usize>,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub penalty_mode: Option<rewards::PenaltyMode>,
    #[serde(default)]
    pub use_format_reward: Option<bool>,
    #[serde(default)]
    pub format_open: Option<String>,
    #[serde(default)]
    pub format_close: Option<String>,
}

impl RewardCase {
    pub fn spec(&self, base: &RewardSpec<f64>) -> RewardSpec<f64> {
        let mut spec = base.clone();
        if let Some(v) = self.beta {
            spec.beta = v;
        }
        if let Some(v) = self.lambda_rep {
            spec.lambda_rep = v;
        }
        if let Some(v) = self.n_min {
            spec.n_min = v;
        }
        if let Some(v) = self.n_max {
            spec.n_max = v;
        }
        if let Some(v) = self.penalty_mode {
            spec.penalty_mode = v;
        }
        if let Some(v) = self.use_format_reward {
            spec.use_format_reward = v;
        }
        if let Some(v) = &self.format_open {
            spec.format_pattern.open = v.clone();
        }
        if let Some(v) = &self.format_close {
            spec.format_pattern.close = v.clone();
        }
        spec
    }
}

/// Scores each input line with the rule reward engine and emits one
/// breakdown per line.
pub fn cmd_reward_check(cfg: &RunConfig, input: &Path, output: Option<&Path>) -> Result<()> {
    let raw = std::fs::read_to_string(input)?;
    let mut lines = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let case: RewardCase = serde_json::from_str(line)?;
        let spec = case.spec(&cfg.reward);
        let breakdown = rewards::total_reward::<f64>(&case.answer, &case.truth, &spec)?;
        lines.push(serde_json::to_string(&breakdown)?);
    }
    let rendered = lines.join("\n") + if lines.is_empty() { "" } else { "\n" };
    match output {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}
