//! Labeled chain-of-thought dataset construction: compression, rejection
//! sampling, fallback correction, and the dataset emitters.

mod client;
mod emit;

pub use client::{
    ClientError, ClientResult, Generation, HttpLlm, LlmClient, MockLlm, MockProfile, API_KEY_ENV,
};
pub use emit::{
    emit_dpo_dataset, emit_kto_dataset, emit_sft_dataset, read_sft_dataset, split_by_difficulty,
    DpoEmit, DpoTriple, KtoItem,
};

use serde::{Deserialize, Serialize};

use crate::corpus::PairRecord;
use crate::error::{Error, Result};
use crate::textmetrics::levenshtein_similarity;

/// Provenance of a sample's reasoning path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleLabel {
    /// The judge accepted a sampled reasoning path.
    #[serde(rename = "generated")]
    Generated,
    /// The reasoning path was reconstructed from the known answer.
    #[serde(rename = "given-answer")]
    GivenAnswer,
}

/// One supervised fine-tuning sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub description: String,
    pub reasoning: String,
    pub formulation: String,
    pub label: SampleLabel,
    pub attempts_used: usize,
    pub best_similarity: f64,
}

/// Distillation pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    /// Maximum candidate generations per question.
    pub t_max: usize,
    /// Similarity at or above which a failed question falls back to
    /// given-answer completion.
    pub theta_fallback: f64,
    /// Similarity below which a failed question is discarded outright.
    /// Similarities in `[theta_discard, theta_fallback)` are also discarded.
    pub theta_discard: f64,
    /// Token budget for compressed descriptions (whitespace tokens).
    pub l_max: usize,
    pub seed: u64,
    /// Bound on concurrently processed questions.
    pub max_in_flight: usize,
    pub endpoint: String,
    pub model: String,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            t_max: 4,
            theta_fallback: 0.8,
            theta_discard: 0.3,
            l_max: 4096,
            seed: 0,
            max_in_flight: 4,
            endpoint: String::new(),
            model: String::new(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        for (name, v) in [
            ("theta_fallback", self.theta_fallback),
            ("theta_discard", self.theta_discard),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.theta_discard > self.theta_fallback {
            return Err(Error::invalid(
                "theta_discard must not exceed theta_fallback",
            ));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight must be at least 1"));
        }
        Ok(())
    }
}

/// Whitespace token count; the reproducible stand-in for a model tokenizer.
pub fn token_estimate(text: &str) -> usize {
    text.split_whitespace().count()
}

const COMPRESSION_CALLS: usize = 3;
const TRANSPORT_RETRIES: u32 = 3;

fn with_retries<T>(mut call: impl FnMut() -> ClientResult<T>) -> Result<T> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match call() {
            Ok(v) => return Ok(v),
            Err(ClientError::Transport(message)) => {
                if attempts > TRANSPORT_RETRIES {
                    return Err(Error::ClientTransport { attempts, message });
                }
                std::thread::sleep(std::time::Duration::from_millis(
                    25 * (1 << (attempts - 1)),
                ));
            }
            Err(ClientError::Protocol(message)) => {
                return Err(Error::ClientTransport { attempts, message })
            }
        }
    }
}

/// Compresses a description until its token estimate fits the budget.
///
/// Descriptions already inside the budget (and empty ones) return unchanged
/// with no client calls. Otherwise the client is invoked up to three times;
/// if the estimate still exceeds the budget the text is truncated at a token
/// boundary.
pub fn compress_description(
    pair: &PairRecord,
    client: &dyn LlmClient,
    cfg: &DistillConfig,
) -> Result<String> {
    let mut text = pair.description.clone();
    if token_estimate(&text) <= cfg.l_max {
        return Ok(text);
    }
    for _ in 0..COMPRESSION_CALLS {
        text = with_retries(|| client.compress(&text, cfg.l_max)).map_err(|e| {
            Error::PairFailed {
                pair_id: pair_id(pair),
                message: e.to_string(),
            }
        })?;
        if token_estimate(&text) <= cfg.l_max {
            return Ok(text);
        }
    }
    let truncated: Vec<&str> = text.split_whitespace().take(cfg.l_max).collect();
    Ok(truncated.join(" "))
}

fn pair_id(pair: &PairRecord) -> String {
    format!("{}#{}", pair.doc_id, pair.formulation_pos)
}

/// Generates candidates sequentially, stopping at the first judge-accepted
/// one or after `t_max` attempts. Returns every generated candidate and the
/// index of the accepted one, if any.
pub fn generate_candidates(
    question: &str,
    truth: &str,
    client: &dyn LlmClient,
    cfg: &DistillConfig,
) -> Result<(Vec<Generation>, Option<usize>)> {
    cfg.validate()?;
    let mut candidates = Vec::new();
    for k in 0..cfg.t_max {
        let generation = with_retries(|| client.generate(question))?;
        let accepted = with_retries(|| client.judge(&generation.answer, truth))?;
        candidates.push(generation);
        if accepted {
            return Ok((candidates, Some(k)));
        }
    }
    Ok((candidates, None))
}

/// Applies the fallback-correction rule to a question whose candidates were
/// all rejected: at or above `theta_fallback` the reasoning is reconstructed
/// from the known answer; everything below (including the gap between the two
/// thresholds) is discarded.
pub fn fallback_or_discard(
    question: &str,
    truth: &str,
    candidates: &[Generation],
    client: &dyn LlmClient,
    cfg: &DistillConfig,
) -> Result<Option<SftSample>> {
    if candidates.is_empty() {
        return Err(Error::invalid("fallback requires at least one candidate"));
    }
    let best_similarity = best_answer_similarity(candidates, truth);
    if best_similarity < cfg.theta_fallback {
        return Ok(None);
    }
    let reasoning = with_retries(|| client.complete_reasoning(question, truth))?;
    Ok(Some(SftSample {
        description: question.to_owned(),
        reasoning,
        formulation: truth.to_owned(),
        label: SampleLabel::GivenAnswer,
        attempts_used: candidates.len(),
        best_similarity,
    }))
}

fn best_answer_similarity(candidates: &[Generation], truth: &str) -> f64 {
    candidates
        .iter()
        .map(|c| levenshtein_similarity::<f64>(&c.answer, truth))
        .fold(0.0, f64::max)
}

/// Everything the pipeline learned about one question.
#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub question: String,
    pub truth: String,
    pub sample: Option<SftSample>,
    pub candidates: Vec<Generation>,
    pub accepted_index: Option<usize>,
}

/// Counters reported alongside an emitted dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub generated_count: usize,
    pub given_answer_count: usize,
    pub discarded_count: usize,
}

/// Runs the full distillation for one pair.
pub fn distill_pair(
    pair: &PairRecord,
    client: &dyn LlmClient,
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    let question = compress_description(pair, client, cfg)?;
    let truth = pair.formulation.clone();
    let (candidates, accepted_index) = generate_candidates(&question, &truth, client, cfg)?;
    let sample = match accepted_index {
        Some(idx) => Some(SftSample {
            description: question.clone(),
            reasoning: candidates[idx].reasoning.clone(),
            formulation: truth.clone(),
            label: SampleLabel::Generated,
            attempts_used: idx + 1,
            best_similarity: best_answer_similarity(&candidates, &truth),
        }),
        None => fallback_or_discard(&question, &truth, &candidates, client, cfg)?,
    };
    Ok(DistillOutcome {
        question,
        truth,
        sample,
        candidates,
        accepted_index,
    })
}

/// Distills every pair, fanning out across questions up to `max_in_flight`
/// while keeping outcomes in input order.
pub fn distill_pairs(
    pairs: &[PairRecord],
    client: &dyn LlmClient,
    cfg: &DistillConfig,
) -> Result<Vec<DistillOutcome>> {
    cfg.validate()?;
    let workers = cfg.max_in_flight.min(pairs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<DistillOutcome>>> = Vec::new();
    slots.resize_with(pairs.len(), || None);
    let slots = std::sync::Mutex::new(slots);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= pairs.len() {
                    break;
                }
                let outcome = distill_pair(&pairs[i], client, cfg);
                slots.lock().expect("worker panicked")[i] = Some(outcome);
            });
        }
    });

    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|slot| slot.expect("every index visited"))
        .collect()
}

/// Tallies outcomes into the emitted-dataset summary.
pub fn summarize(outcomes: &[DistillOutcome]) -> DistillSummary {
    let mut summary = DistillSummary {
        generated_count: 0,
        given_answer_count: 0,
        discarded_count: 0,
    };
    for outcome in outcomes {
        match outcome.sample.as_ref().map(|s| s.label) {
            Some(SampleLabel::Generated) => summary.generated_count += 1,
            Some(SampleLabel::GivenAnswer) => summary.given_answer_count += 1,
            None => summary.discarded_count += 1,
        }
    }
    summary
}

/// Preference triples for DPO emission: the kept reasoning path against the
/// first rejected candidate.
pub fn dpo_triples(outcomes: &[DistillOutcome]) -> Vec<DpoTriple> {
    outcomes
        .iter()
        .filter_map(|o| {
            let sample = o.sample.as_ref()?;
            let rejected = o
                .candidates
                .iter()
                .enumerate()
                .find(|(i, _)| o.accepted_index != Some(*i))
                .map(|(_, c)| c.reasoning.clone())?;
            Some(DpoTriple {
                description: o.question.clone(),
                chosen: sample.reasoning.clone(),
                rejected,
            })
        })
        .collect()
}

/// Binary-labeled single paths for KTO emission: one item per candidate.
pub fn kto_items(outcomes: &[DistillOutcome]) -> Vec<KtoItem> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.candidates.iter().enumerate().map(|(i, c)| KtoItem {
                description: o.question.clone(),
                reasoning: c.reasoning.clone(),
                acceptable: u8::from(o.accepted_index == Some(i)),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn record(description: &str, formulation: &str) -> PairRecord {
        PairRecord {
            doc_id: "doc".into(),
            description: description.into(),
            formulation: formulation.into(),
            where_clause: None,
            section_title: "System Model".into(),
            description_end_pos: 1,
            formulation_pos: 2,
        }
    }

    /// Halves the whitespace token count on every compress call.
    struct HalvingClient {
        calls: AtomicUsize,
    }

    impl LlmClient for HalvingClient {
        fn compress(&self, text: &str, _max_tokens: usize) -> ClientResult<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let tokens: Vec<&str> = text.split_whitespace().collect();
            Ok(tokens[..tokens.len() / 2].join(" "))
        }
        fn generate(&self, _prompt: &str) -> ClientResult<Generation> {
            unreachable!("compression-only client")
        }
        fn judge(&self, _candidate: &str, _truth: &str) -> ClientResult<bool> {
            unreachable!()
        }
        fn complete_reasoning(&self, _q: &str, _t: &str) -> ClientResult<String> {
            unreachable!()
        }
    }

    /// Accepts on a fixed attempt number (1-based); candidates are distinct.
    struct AcceptOnAttempt {
        accept_on: usize,
        calls: AtomicUsize,
    }

    impl AcceptOnAttempt {
        fn new(accept_on: usize) -> Self {
            AcceptOnAttempt {
                accept_on,
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl LlmClient for AcceptOnAttempt {
        fn compress(&self, text: &str, _max_tokens: usize) -> ClientResult<String> {
            Ok(text.to_owned())
        }
        fn generate(&self, _prompt: &str) -> ClientResult<Generation> {
            let k = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            Ok(Generation {
                reasoning: format!("attempt {k}"),
                answer: format!("candidate {k}"),
            })
        }
        fn judge(&self, candidate: &str, _truth: &str) -> ClientResult<bool> {
            Ok(candidate == format!("candidate {}", self.accept_on))
        }
        fn complete_reasoning(&self, _q: &str, truth: &str) -> ClientResult<String> {
            Ok(format!("completed toward {truth}"))
        }
    }

    fn cfg() -> DistillConfig {
        DistillConfig {
            t_max: 4,
            max_in_flight: 1,
            ..DistillConfig::default()
        }
    }

    #[test]
    fn small_description_skips_the_client() {
        let client = HalvingClient {
            calls: AtomicUsize::new(0),
        };
        let pair = record("short description", "f");
        let out = compress_description(&pair, &client, &cfg()).unwrap();
        assert_eq!(out, "short description");
        assert_eq!(client.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn empty_description_short_circuits() {
        let client = HalvingClient {
            calls: AtomicUsize::new(0),
        };
        let pair = record("", "f");
        assert_eq!(compress_description(&pair, &client, &cfg()).unwrap(), "");
        assert_eq!(client.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn halving_client_converges_within_two_calls() {
        let client = HalvingClient {
            calls: AtomicUsize::new(0),
        };
        let words: Vec<String> = (0..10_000).map(|i| format!("w{i}")).collect();
        let pair = record(&words.join(" "), "f");
        let out = compress_description(&pair, &client, &cfg()).unwrap();
        assert!(token_estimate(&out) <= 4096);
        assert!(client.calls.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn stubborn_text_is_truncated_at_token_boundary() {
        struct Identity;
        impl LlmClient for Identity {
            fn compress(&self, text: &str, _m: usize) -> ClientResult<String> {
                Ok(text.to_owned())
            }
            fn generate(&self, _p: &str) -> ClientResult<Generation> {
                unreachable!()
            }
            fn judge(&self, _c: &str, _t: &str) -> ClientResult<bool> {
                unreachable!()
            }
            fn complete_reasoning(&self, _q: &str, _t: &str) -> ClientResult<String> {
                unreachable!()
            }
        }
        let mut config = cfg();
        config.l_max = 5;
        let pair = record("a b c d e f g h", "f");
        let out = compress_description(&pair, &Identity, &config).unwrap();
        assert_eq!(out, "a b c d e");
    }

    #[test]
    fn acceptance_on_second_attempt_stops_the_loop() {
        let client = AcceptOnAttempt::new(2);
        let (candidates, accepted) = generate_candidates("q", "t", &client, &cfg()).unwrap();
        assert_eq!(candidates.len(), 2);
        assert_eq!(accepted, Some(1));
    }

    #[test]
    fn never_accepting_judge_exhausts_t_max() {
        let client = AcceptOnAttempt::new(usize::MAX);
        let (candidates, accepted) = generate_candidates("q", "t", &client, &cfg()).unwrap();
        assert_eq!(candidates.len(), 4);
        assert_eq!(accepted, None);
    }

    #[test]
    fn t_max_one_with_accepting_judge() {
        let client = AcceptOnAttempt::new(1);
        let mut config = cfg();
        config.t_max = 1;
        let (candidates, accepted) = generate_candidates("q", "t", &client, &config).unwrap();
        assert_eq!(candidates.len(), 1);
        assert_eq!(accepted, Some(0));
    }

    #[test]
    fn high_similarity_falls_back_to_given_answer() {
        let client = AcceptOnAttempt::new(usize::MAX);
        let candidates = vec![Generation {
            reasoning: "r".into(),
            answer: "x = y + z1".into(),
        }];
        let sample = fallback_or_discard("q", "x = y + z0", &candidates, &client, &cfg())
            .unwrap()
            .unwrap();
        assert_eq!(sample.label, SampleLabel::GivenAnswer);
        assert!(sample.best_similarity >= 0.8);
        assert_eq!(sample.formulation, "x = y + z0");
    }

    #[test]
    fn low_similarity_is_discarded() {
        let client = AcceptOnAttempt::new(usize::MAX);
        let candidates = vec![Generation {
            reasoning: "r".into(),
            answer: "%%%%%%%%".into(),
        }];
        let out = fallback_or_discard("q", "x = y + z", &candidates, &client, &cfg()).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn similarity_exactly_at_threshold_is_emitted() {
        let client = AcceptOnAttempt::new(usize::MAX);
        // Distance 1 over max length 4 -> similarity exactly 0.75, which is
        // representable and equals the threshold below.
        let mut config = cfg();
        config.theta_fallback = 0.75;
        let candidates = vec![Generation {
            reasoning: "r".into(),
            answer: "abc~".into(),
        }];
        let sample = fallback_or_discard("q", "abcd", &candidates, &client, &config)
            .unwrap()
            .unwrap();
        assert_eq!(sample.best_similarity, 0.75);
        assert_eq!(sample.label, SampleLabel::GivenAnswer);
    }

    #[test]
    fn gray_zone_between_thresholds_is_discarded() {
        let client = AcceptOnAttempt::new(usize::MAX);
        // Similarity 0.5: between theta_discard (0.3) and theta_fallback (0.8).
        let candidates = vec![Generation {
            reasoning: "r".into(),
            answer: "ab~~".into(),
        }];
        let out = fallback_or_discard("q", "abcd", &candidates, &client, &cfg()).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn generate_call_count_never_exceeds_t_max() {
        for accept_on in [1, 3, usize::MAX] {
            let client = AcceptOnAttempt::new(accept_on);
            let _ = generate_candidates("q", "t", &client, &cfg()).unwrap();
            assert!(client.calls.load(Ordering::SeqCst) <= 4);
        }
    }

    #[test]
    fn pipeline_outcomes_keep_input_order_across_workers() {
        let pairs: Vec<PairRecord> = (0..12)
            .map(|i| record(&format!("description {i}"), &format!("f_{i} = {i}")))
            .collect();
        let key = pairs
            .iter()
            .map(|p| (p.description.clone(), p.formulation.clone()));
        let client = MockLlm::with_answer_key(3, MockProfile::AcceptFirst, key);
        let mut config = cfg();
        config.max_in_flight = 4;
        let outcomes = distill_pairs(&pairs, &client, &config).unwrap();
        assert_eq!(outcomes.len(), 12);
        for (i, o) in outcomes.iter().enumerate() {
            assert_eq!(o.question, format!("description {i}"));
            let sample = o.sample.as_ref().unwrap();
            assert_eq!(sample.label, SampleLabel::Generated);
            assert_eq!(sample.attempts_used, 1);
        }
        let summary = summarize(&outcomes);
        assert_eq!(summary.generated_count, 12);
        assert_eq!(summary.discarded_count, 0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = cfg();
        c.t_max = 0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.theta_discard = 0.9;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.theta_fallback = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn transport_errors_are_retried_then_surface() {
        struct Flaky {
            calls: AtomicUsize,
        }
        impl LlmClient for Flaky {
            fn compress(&self, _t: &str, _m: usize) -> ClientResult<String> {
                unreachable!()
            }
            fn generate(&self, _p: &str) -> ClientResult<Generation> {
                self.calls.fetch_add(1, Ordering::SeqCst);
                Err(ClientError::Transport("connection reset".into()))
            }
            fn judge(&self, _c: &str, _t: &str) -> ClientResult<bool> {
                Ok(false)
            }
            fn complete_reasoning(&self, _q: &str, _t: &str) -> ClientResult<String> {
                unreachable!()
            }
        }
        let client = Flaky {
            calls: AtomicUsize::new(0),
        };
        let err = generate_candidates("q", "t", &client, &cfg()).unwrap_err();
        assert!(matches!(err, Error::ClientTransport { attempts: 4, .. }));
        assert_eq!(client.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn dpo_and_kto_views_follow_acceptance() {
        let client = AcceptOnAttempt::new(2);
        let pair = record("question text", "candidate 2");
        let outcome = distill_pair(&pair, &client, &cfg()).unwrap();
        assert_eq!(outcome.accepted_index, Some(1));

        let triples = dpo_triples(std::slice::from_ref(&outcome));
        assert_eq!(triples.len(), 1);
        assert_eq!(triples[0].chosen, "attempt 2");
        assert_eq!(triples[0].rejected, "attempt 1");

        let items = kto_items(std::slice::from_ref(&outcome));
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].acceptable, 0);
        assert_eq!(items[1].acceptable, 1);
    }
}
