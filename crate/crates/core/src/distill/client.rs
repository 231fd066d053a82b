//! The LLM-client boundary: an abstract trait, a deterministic mock for
//! offline runs, and a chat-completion HTTP client.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::normalize_formula;
use crate::seed::fnv1a64;

/// A reasoning trace plus the final answer drawn from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub reasoning: String,
    pub answer: String,
}

#[derive(Debug, Error)]
pub enum ClientError {
    /// Network-level failure; eligible for retry.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The endpoint answered but the response was unusable.
    #[error("protocol failure: {0}")]
    Protocol(String),
}

pub type ClientResult<T> = std::result::Result<T, ClientError>;

/// Boundary to the annotation model. Mock implementations must be
/// deterministic given their construction inputs and seed.
pub trait LlmClient: Send + Sync {
    /// Semantic compression of a description toward `max_tokens`.
    fn compress(&self, text: &str, max_tokens: usize) -> ClientResult<String>;

    /// Samples one reasoning path and final answer for the prompt.
    fn generate(&self, prompt: &str) -> ClientResult<Generation>;

    /// Judges whether a candidate answer matches the reference.
    fn judge(&self, candidate: &str, truth: &str) -> ClientResult<bool>;

    /// Reconstructs a reasoning path conditioned on the known answer.
    fn complete_reasoning(&self, question: &str, truth: &str) -> ClientResult<String>;
}

/// Behavior profiles for the deterministic mock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MockProfile {
    /// Candidates reproduce the reference answer; the judge accepts on the
    /// first attempt.
    AcceptFirst,
    /// Candidates stay close to the reference (one character perturbed) but
    /// the judge never accepts, steering samples into fallback correction.
    NeverAcceptSimilar,
    /// Candidates share nothing with the reference and the judge never
    /// accepts, steering samples into the discard path.
    NeverAcceptGarbage,
}

/// Offline stand-in for the annotation model. It is constructed with the
/// question→answer key of the pairs being distilled so each profile can shape
/// candidates relative to the reference; all outputs are pure functions of
/// (seed, inputs).
pub struct MockLlm {
    seed: u64,
    profile: MockProfile,
    answers: HashMap<String, String>,
}

impl MockLlm {
    pub fn new(seed: u64, profile: MockProfile) -> Self {
        MockLlm {
            seed,
            profile,
            answers: HashMap::new(),
        }
    }

    pub fn with_answer_key(
        seed: u64,
        profile: MockProfile,
        pairs: impl IntoIterator<Item = (String, String)>,
    ) -> Self {
        MockLlm {
            seed,
            profile,
            answers: pairs.into_iter().collect(),
        }
    }

    fn truth_for(&self, prompt: &str) -> Option<&str> {
        self.answers.get(prompt).map(String::as_str)
    }

    fn stamp(&self, parts: &[&str]) -> u64 {
        let mut bytes = self.seed.to_le_bytes().to_vec();
        for p in parts {
            bytes.extend_from_slice(p.as_bytes());
            bytes.push(0x1f);
        }
        fnv1a64(&bytes)
    }
}

impl LlmClient for MockLlm {
    fn compress(&self, text: &str, _max_tokens: usize) -> ClientResult<String> {
        Ok(text.to_owned())
    }

    fn generate(&self, prompt: &str) -> ClientResult<Generation> {
        let stamp = self.stamp(&["generate", prompt]);
        let reasoning = format!(
            "Consider the stated quantities and derive the target expression (trace {stamp:016x})."
        );
        let answer = match (self.profile, self.truth_for(prompt)) {
            (MockProfile::AcceptFirst, Some(truth)) => truth.to_owned(),
            (MockProfile::NeverAcceptSimilar, Some(truth)) => perturb_one_char(truth),
            _ => format!("#{stamp:016x}#"),
        };
        Ok(Generation { reasoning, answer })
    }

    fn judge(&self, candidate: &str, truth: &str) -> ClientResult<bool> {
        Ok(match self.profile {
            MockProfile::AcceptFirst => {
                normalize_formula(candidate) == normalize_formula(truth)
            }
            MockProfile::NeverAcceptSimilar | MockProfile::NeverAcceptGarbage => false,
        })
    }

    fn complete_reasoning(&self, question: &str, truth: &str) -> ClientResult<String> {
        let stamp = self.stamp(&["complete", question, truth]);
        Ok(format!(
            "Starting from the given setup, combining the stated definitions yields {truth} (trace {stamp:016x})."
        ))
    }
}

/// Swaps the first character for a tilde so similarity stays high while
/// strict equality fails.
fn perturb_one_char(truth: &str) -> String {
    let mut chars = truth.chars();
    match chars.next() {
        Some(_) => format!("~{}", chars.as_str()),
        None => "~".to_owned(),
    }
}

/// Chat-completion HTTP client. The API key is read from the named
/// environment variable at construction time.
pub struct HttpLlm {
    endpoint: String,
    model: String,
    api_key: String,
    http: reqwest::blocking::Client,
}

/// Environment variable holding the API key for `--client http`.
pub const API_KEY_ENV: &str = "FORMRL_API_KEY";

impl HttpLlm {
    pub fn from_env(endpoint: &str, model: &str) -> crate::Result<Self> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| crate::Error::config(format!("{API_KEY_ENV} is not set")))?;
        Ok(HttpLlm {
            endpoint: endpoint.to_owned(),
            model: model.to_owned(),
            api_key,
            http: reqwest::blocking::Client::new(),
        })
    }

    fn chat(&self, prompt: &str) -> ClientResult<String> {
        #[derive(Serialize)]
        struct Message<'a> {
            role: &'a str,
            content: &'a str,
        }
        #[derive(Serialize)]
        struct Request<'a> {
            model: &'a str,
            messages: Vec<Message<'a>>,
        }
        #[derive(Deserialize)]
        struct Choice {
            message: ChoiceMessage,
        }
        #[derive(Deserialize)]
        struct ChoiceMessage {
            content: String,
        }
        #[derive(Deserialize)]
        struct Response {
            choices: Vec<Choice>,
        }

        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&Request {
                model: &self.model,
                messages: vec![Message {
                    role: "user",
                    content: prompt,
                }],
            })
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let parsed: Response = response
            .json()
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ClientError::Protocol("empty choices".to_owned()))
    }
}

impl LlmClient for HttpLlm {
    fn compress(&self, text: &str, max_tokens: usize) -> ClientResult<String> {
        self.chat(&format!(
            "Compress the following description to at most {max_tokens} tokens while keeping every quantity and constraint. Reply with the compressed text only.\n\n{text}"
        ))
    }

    fn generate(&self, prompt: &str) -> ClientResult<Generation> {
        let content = self.chat(&format!(
            "Derive the mathematical formulation for the following description. Think step by step, then put the final formula alone inside <answer></answer>.\n\n{prompt}"
        ))?;
        let pattern = crate::rewards::FormatPattern::default();
        match crate::rewards::extract_format_payload(&content, &pattern) {
            Some(answer) => {
                let reasoning = content[..content.find(&pattern.open).unwrap_or(0)]
                    .trim()
                    .to_owned();
                Ok(Generation {
                    reasoning,
                    answer: answer.trim().to_owned(),
                })
            }
            None => Ok(Generation {
                reasoning: String::new(),
                answer: content.trim().to_owned(),
            }),
        }
    }

    fn judge(&self, candidate: &str, truth: &str) -> ClientResult<bool> {
        let content = self.chat(&format!(
            "Are these two formulations mathematically equivalent? Answer yes or no only.\n\nA: {candidate}\n\nB: {truth}"
        ))?;
        Ok(content.trim().to_lowercase().starts_with("yes"))
    }

    fn complete_reasoning(&self, question: &str, truth: &str) -> ClientResult<String> {
        self.chat(&format!(
            "Write the step-by-step reasoning that leads from this description to the known correct formulation.\n\nDescription: {question}\n\nFormulation: {truth}"
        ))
    }
}
