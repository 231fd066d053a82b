//! Rule-based reward engine: accuracy by normalization-equality, a bounded
//! repetition penalty, an optional format reward, and their composition.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::{real, Real};
use crate::textmetrics::{repetition_score, TokenSeq};

/// Reward handed out when the answer is wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// Wrong answers score 0.
    ZeroOnWrong,
    /// Wrong answers score -1.
    MinusOneOnWrong,
}

/// Open/close markers delimiting the final-answer block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatPattern {
    pub open: String,
    pub close: String,
}

impl Default for FormatPattern {
    fn default() -> Self {
        FormatPattern {
            open: "<answer>".to_owned(),
            close: "</answer>".to_owned(),
        }
    }
}

/// Configuration of the reward components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RewardSpec<T: Real> {
    /// Upper limit of the repetition penalty.
    pub beta: T,
    /// Repetition penalty coefficient; strictly positive.
    pub lambda_rep: T,
    pub n_min: usize,
    pub n_max: usize,
    pub penalty_mode: PenaltyMode,
    pub use_format_reward: bool,
    pub format_pattern: FormatPattern,
}

impl<T: Real> Default for RewardSpec<T> {
    fn default() -> Self {
        RewardSpec {
            beta: T::one(),
            lambda_rep: T::one(),
            n_min: 2,
            n_max: 4,
            penalty_mode: PenaltyMode::ZeroOnWrong,
            use_format_reward: false,
            format_pattern: FormatPattern::default(),
        }
    }
}

impl<T: Real> RewardSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.beta < T::zero() {
            return Err(crate::Error::invalid("beta must be non-negative"));
        }
        if self.lambda_rep <= T::zero() {
            return Err(crate::Error::invalid("lambda_rep must be positive"));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(crate::Error::invalid(
                "n-gram range must satisfy 1 <= n_min <= n_max",
            ));
        }
        Ok(())
    }
}

/// Per-component reward values for one scored answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RewardBreakdown<T: Real> {
    pub accuracy: T,
    pub repetition: T,
    pub format: T,
    pub total: T,
}

/// Deterministic canonical form used by the equivalence check: drops
/// `\left`/`\right`, rewrites `\cdot` and `\times` to `*`, strips all
/// whitespace, and collapses doubled braces, iterating the whole pass until
/// nothing changes so the result is a fixpoint. Input that is not valid
/// LaTeX is normalized textually, never rejected.
pub fn normalize_formula(latex: &str) -> String {
    let mut text = latex.to_owned();
    loop {
        // Command rewrites run before whitespace removal: token boundaries
        // are only meaningful while spacing is intact.
        let mut next = remove_command(&text, "\\left");
        next = remove_command(&next, "\\right");
        next = replace_command(&next, "\\cdot", "*");
        next = replace_command(&next, "\\times", "*");
        next = next.chars().filter(|c| !c.is_whitespace()).collect();
        next = next.replace("{{", "{").replace("}}", "}");
        if next == text {
            return text;
        }
        text = next;
    }
}

fn remove_command(text: &str, command: &str) -> String {
    replace_command(text, command, "")
}

/// Replaces `command` wherever it is not followed by another ASCII letter, so
/// longer commands sharing the prefix (`\lefteqn`, `\cdots`) survive.
fn replace_command(text: &str, command: &str, replacement: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(idx) = rest.find(command) {
        let after = &rest[idx + command.len()..];
        let boundary = !after.chars().next().is_some_and(|c| c.is_ascii_alphabetic());
        out.push_str(&rest[..idx]);
        if boundary {
            out.push_str(replacement);
        } else {
            out.push_str(command);
        }
        rest = after;
    }
    out.push_str(rest);
    out
}

/// 1 if the normalized forms agree, otherwise 0 or -1 per `mode`.
pub fn accuracy_reward<T: Real>(answer: &str, truth: &str, mode: PenaltyMode) -> T {
    if normalize_formula(answer) == normalize_formula(truth) {
        T::one()
    } else {
        match mode {
            PenaltyMode::ZeroOnWrong => T::zero(),
            PenaltyMode::MinusOneOnWrong => -T::one(),
        }
    }
}

/// `beta * (1 - 1 / (1 + P))`: monotone in the repetition score and strictly
/// below `beta`.
pub fn repetition_reward<T: Real>(seq: &TokenSeq, spec: &RewardSpec<T>) -> Result<T> {
    spec.validate()?;
    let p = repetition_score(seq, spec.n_min, spec.n_max, spec.lambda_rep)?;
    Ok(spec.beta * (T::one() - T::one() / (T::one() + p)))
}

/// 1 when the answer contains exactly one complete, non-empty block wrapped
/// in the configured markers; -0.1 otherwise.
pub fn format_reward<T: Real>(answer: &str, spec: &RewardSpec<T>) -> T {
    match extract_format_payload(answer, &spec.format_pattern) {
        Some(_) => T::one(),
        None => real(-0.1),
    }
}

/// The payload of the answer's format block, when the answer contains exactly
/// one complete block with a non-empty payload.
pub fn extract_format_payload<'a>(answer: &'a str, pattern: &FormatPattern) -> Option<&'a str> {
    let mut rest = answer;
    let mut payload: Option<&str> = None;
    let mut complete = 0usize;
    while let Some(open_idx) = rest.find(&pattern.open) {
        let after_open = &rest[open_idx + pattern.open.len()..];
        match after_open.find(&pattern.close) {
            Some(close_idx) => {
                complete += 1;
                if complete > 1 {
                    return None;
                }
                payload = Some(&after_open[..close_idx]);
                rest = &after_open[close_idx + pattern.close.len()..];
            }
            None => break,
        }
    }
    match payload {
        Some(p) if complete == 1 && !p.trim().is_empty() => Some(p),
        _ => None,
    }
}

/// Scores an answer against the reference formulation.
///
/// When the format reward is enabled and the answer carries a well-formed
/// block, accuracy is checked on the extracted payload; the repetition
/// penalty always sees the full answer.
pub fn total_reward<T: Real>(
    answer: &str,
    truth: &str,
    spec: &RewardSpec<T>,
) -> Result<RewardBreakdown<T>> {
    spec.validate()?;
    let payload = if spec.use_format_reward {
        extract_format_payload(answer, &spec.format_pattern)
    } else {
        None
    };
    let accuracy = accuracy_reward(payload.unwrap_or(answer), truth, spec.penalty_mode);
    let repetition = repetition_reward(&TokenSeq::whitespace(answer), spec)?;
    let format = if spec.use_format_reward {
        format_reward(answer, spec)
    } else {
        T::zero()
    };
    Ok(RewardBreakdown {
        accuracy,
        repetition,
        format,
        total: accuracy - repetition + format,
    })
}
