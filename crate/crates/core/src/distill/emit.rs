//! JSON Lines dataset emitters and the difficulty split.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SampleLabel, SftSample};
use crate::error::{Error, Result};

/// One DPO preference line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoTriple {
    pub description: String,
    pub chosen: String,
    pub rejected: String,
}

/// One KTO line; `acceptable` is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KtoItem {
    pub description: String,
    pub reasoning: String,
    pub acceptable: u8,
}

/// Emission report for DPO: degenerate triples are skipped with a warning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpoEmit {
    pub written: usize,
    pub skipped: usize,
}

fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<usize> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    for (written, record) in records.iter().enumerate() {
        let line = serde_json::to_string(record)?;
        writeln!(writer, "{line}").map_err(|source| Error::PartialWrite {
            written,
            total: records.len(),
            source,
        })?;
    }
    writer.flush().map_err(|source| Error::PartialWrite {
        written: records.len(),
        total: records.len(),
        source,
    })?;
    Ok(records.len())
}

/// Writes SFT samples in input order, one JSON object per line.
pub fn emit_sft_dataset(samples: &[SftSample], path: &Path) -> Result<usize> {
    write_jsonl(samples, path)
}

/// Writes DPO triples, skipping triples whose chosen and rejected paths are
/// identical.
pub fn emit_dpo_dataset(triples: &[DpoTriple], path: &Path) -> Result<DpoEmit> {
    let (keep, skip): (Vec<&DpoTriple>, Vec<&DpoTriple>) =
        triples.iter().partition(|t| t.chosen != t.rejected);
    for t in &skip {
        log::warn!(
            "skipping degenerate preference pair for description '{}'",
            t.description
        );
    }
    let kept: Vec<DpoTriple> = keep.into_iter().cloned().collect();
    let written = write_jsonl(&kept, path)?;
    Ok(DpoEmit {
        written,
        skipped: skip.len(),
    })
}

/// Writes KTO items in input order.
pub fn emit_kto_dataset(items: &[KtoItem], path: &Path) -> Result<usize> {
    write_jsonl(items, path)
}

/// Splits samples into an easy set (generated within the attempt threshold)
/// and a hard remainder. The two halves partition the input.
pub fn split_by_difficulty(
    samples: Vec<SftSample>,
    threshold_attempts: usize,
) -> (Vec<SftSample>, Vec<SftSample>) {
    samples.into_iter().partition(|s| {
        s.label == SampleLabel::Generated && s.attempts_used <= threshold_attempts
    })
}

/// Parses a JSON Lines file of SFT samples.
pub fn read_sft_dataset(path: &Path) -> Result<Vec<SftSample>> {
    let raw = std::fs::read_to_string(path)?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
