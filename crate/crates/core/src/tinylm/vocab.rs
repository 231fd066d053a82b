//! Token vocabulary with reserved control entries.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::distill::SampleLabel;
use crate::error::{Error, Result};
use crate::seed::fnv1a64;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const LABEL_GENERATED: &str = "<label:generated>";
pub const LABEL_GIVEN_ANSWER: &str = "<label:given-answer>";

const RESERVED: [&str; 5] = [BOS, EOS, UNK, LABEL_GENERATED, LABEL_GIVEN_ANSWER];

/// An ordered vocabulary: the five reserved tokens first, then the symbol
/// tokens. Indices are stable for the life of the vocabulary.
#[derive(Debug, Clone, Serialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Eq for Vocab {}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Shadow {
            tokens: Vec<String>,
        }
        let shadow = Shadow::deserialize(deserializer)?;
        let index = shadow
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocab {
            tokens: shadow.tokens,
            index,
        })
    }
}

impl Vocab {
    /// Builds a vocabulary from symbol tokens (reserved entries are added in
    /// front). Symbols must be distinct, non-empty, and must not collide with
    /// the reserved strings.
    pub fn new(symbols: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
        for symbol in symbols {
            if symbol.is_empty() {
                return Err(Error::invalid("vocabulary symbols must be non-empty"));
            }
            if !seen.insert(symbol.clone()) {
                return Err(Error::invalid(format!(
                    "duplicate or reserved vocabulary symbol '{symbol}'"
                )));
            }
            tokens.push(symbol);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocab { tokens, index })
    }

    /// Vocabulary over the whitespace tokens of the given texts, sorted for
    /// determinism.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut symbols: BTreeSet<String> = BTreeSet::new();
        for text in texts {
            for token in text.split_whitespace() {
                if !RESERVED.contains(&token) {
                    symbols.insert(token.to_owned());
                }
            }
        }
        Vocab::new(symbols)
    }

    /// Vocabulary of `n` single-letter symbols `a`, `b`, ... (n <= 26); the
    /// alphabet used by the synthetic task environments.
    pub fn letters(n: usize) -> Result<Self> {
        if n == 0 || n > 26 {
            return Err(Error::invalid("letter vocabulary size must be in 1..=26"));
        }
        Vocab::new((0..n).map(|i| ((b'a' + i as u8) as char).to_string()))
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn bos_id(&self) -> usize {
        0
    }

    pub fn eos_id(&self) -> usize {
        1
    }

    pub fn unk_id(&self) -> usize {
        2
    }

    pub fn label_id(&self, label: SampleLabel) -> usize {
        match label {
            SampleLabel::Generated => 3,
            SampleLabel::GivenAnswer => 4,
        }
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id < RESERVED.len()
    }

    /// Ids of the non-reserved symbols, in vocabulary order.
    pub fn symbol_ids(&self) -> Vec<usize> {
        (RESERVED.len()..self.size()).collect()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or_else(|| self.unk_id())
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Whitespace tokenization; unknown tokens map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.id_or_unk(t)).collect()
    }

    /// Renders generated tokens as an answer string: reserved tokens are
    /// dropped, the rest joined with single spaces.
    pub fn decode_answer(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| !self.is_reserved(id))
            .map(|&id| self.token(id))
            .collect::<Vec<&str>>()
            .join(" ")
    }

    /// Stable hash of the full token list; stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for t in &self.tokens {
            bytes.extend_from_slice(t.as_bytes());
            bytes.push(0x1f);
        }
        fnv1a64(&bytes)
    }
}
