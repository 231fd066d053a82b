//! Exact string and token statistics: Levenshtein similarity, n-gram
//! occurrence tables, and the length-normalized repetition score.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::{real_from_usize, Real};

/// How a [`TokenSeq`] was produced from raw text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenOrigin {
    WhitespaceSplit,
    CharacterSplit,
}

/// An ordered token sequence. Tokens are never empty strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    tokens: Vec<String>,
    origin: TokenOrigin,
}

impl TokenSeq {
    /// Splits on Unicode whitespace.
    pub fn whitespace(text: &str) -> Self {
        TokenSeq {
            tokens: text.split_whitespace().map(str::to_owned).collect(),
            origin: TokenOrigin::WhitespaceSplit,
        }
    }

    /// One token per non-whitespace Unicode scalar value, for corpora where
    /// whitespace does not delimit words.
    pub fn characters(text: &str) -> Self {
        TokenSeq {
            tokens: text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
            origin: TokenOrigin::CharacterSplit,
        }
    }

    /// Wraps pre-split tokens; rejects empty tokens.
    pub fn from_tokens(tokens: Vec<String>, origin: TokenOrigin) -> Result<Self> {
        if tokens.iter().any(String::is_empty) {
            return Err(Error::invalid("token sequence contains an empty token"));
        }
        Ok(TokenSeq { tokens, origin })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn origin(&self) -> TokenOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Occurrence counts of every contiguous n-gram of one fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramTable {
    n: usize,
    counts: BTreeMap<Vec<String>, usize>,
}

impl NGramTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn counts(&self) -> &BTreeMap<Vec<String>, usize> {
        &self.counts
    }

    pub fn count(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// Total windows counted; equals `max(0, len - n + 1)` for the source
    /// sequence.
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Unit-cost edit distance over Unicode scalar values (two-row dynamic
/// program).
pub fn levenshtein_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - dist(a, b) / max(|a|, |b|)`; two empty strings are fully similar.
pub fn levenshtein_similarity<T: Real>(a: &str, b: &str) -> T {
    let la = a.chars().count();
    let lb = b.chars().count();
    let max_len = la.max(lb);
    if max_len == 0 {
        return T::one();
    }
    let dist = levenshtein_distance(a, b);
    T::one() - real_from_usize::<T>(dist) / real_from_usize::<T>(max_len)
}

/// Counts every contiguous n-gram of length `n`; a sequence shorter than `n`
/// yields an empty table.
pub fn ngram_table(seq: &TokenSeq, n: usize) -> Result<NGramTable> {
    if n == 0 {
        return Err(Error::invalid("n-gram length must be at least 1"));
    }
    let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    let tokens = seq.tokens();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    Ok(NGramTable { n, counts })
}

/// Length-normalized repetition score
/// `P(a) = (1 / (lambda * |a|)) * sum_n sum_g 1[c(g) > 1] * c(g)^2`
/// over n-gram lengths in `[n_min, n_max]`. An empty sequence scores 0.
pub fn repetition_score<T: Real>(
    seq: &TokenSeq,
    n_min: usize,
    n_max: usize,
    lambda_rep: T,
) -> Result<T> {
    if n_min == 0 || n_min > n_max {
        return Err(Error::invalid(format!(
            "n-gram range must satisfy 1 <= n_min <= n_max, got [{n_min}, {n_max}]"
        )));
    }
    if lambda_rep <= T::zero() {
        return Err(Error::invalid("lambda_rep must be positive"));
    }
    if seq.is_empty() {
        return Ok(T::zero());
    }
    let mut repeated_sq_sum: u64 = 0;
    for n in n_min..=n_max {
        let table = ngram_table(seq, n)?;
        for &c in table.counts().values() {
            if c > 1 {
                repeated_sq_sum += (c as u64) * (c as u64);
            }
        }
    }
    let num = T::from_u64(repeated_sq_sum).expect("count fits scalar");
    Ok(num / (lambda_rep * real_from_usize::<T>(seq.len())))
}
