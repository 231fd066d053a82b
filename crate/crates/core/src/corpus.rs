//! Markdown ingestion: segment LaTeX-bearing markdown into ordered elements,
//! locate model sections by heading title, and extract description→formulation
//! pairs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One segmented markdown element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    /// 0-based source-order index; equals the element's position in
    /// `Document::elements`.
    pub position: usize,
    #[serde(flatten)]
    pub kind: ElementKind,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementKind {
    Heading { level: u8 },
    Text,
    Equation,
}

impl Element {
    pub fn is_equation(&self) -> bool {
        matches!(self.kind, ElementKind::Equation)
    }

    pub fn is_text(&self) -> bool {
        matches!(self.kind, ElementKind::Text)
    }

    pub fn heading_level(&self) -> Option<u8> {
        match self.kind {
            ElementKind::Heading { level } => Some(level),
            _ => None,
        }
    }
}

/// A parsed markdown document with equation blocks kept intact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub elements: Vec<Element>,
    pub source_path: PathBuf,
}

impl Document {
    /// Reconstructs markdown that re-parses to an identical document.
    /// Display math is always emitted with `$$` delimiters.
    pub fn to_markdown(&self) -> String {
        let blocks: Vec<String> = self
            .elements
            .iter()
            .map(|e| match e.kind {
                ElementKind::Heading { level } => {
                    format!("{} {}", "#".repeat(level as usize), e.content)
                }
                ElementKind::Text => e.content.clone(),
                ElementKind::Equation => format!("$${}$$", e.content),
            })
            .collect();
        blocks.join("\n\n")
    }
}

/// A half-open element range `[start, end)` beginning at a matched heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionRange {
    pub start: usize,
    pub end: usize,
}

/// One description→formulation pair drawn from a model section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulationPair {
    pub description: String,
    pub formulation: String,
    pub where_clause: Option<String>,
    pub section_title: String,
    /// Position of the last element contributing to the description (the
    /// section heading when no text precedes the equation). Always strictly
    /// less than `formulation_pos`.
    pub description_end_pos: usize,
    pub formulation_pos: usize,
}

/// The JSON Lines record emitted for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub doc_id: String,
    pub description: String,
    pub formulation: String,
    pub where_clause: Option<String>,
    pub section_title: String,
    pub description_end_pos: usize,
    pub formulation_pos: usize,
}

impl PairRecord {
    pub fn new(doc_id: &str, pair: FormulationPair) -> Self {
        PairRecord {
            doc_id: doc_id.to_owned(),
            description: pair.description,
            formulation: pair.formulation,
            where_clause: pair.where_clause,
            section_title: pair.section_title,
            description_end_pos: pair.description_end_pos,
            formulation_pos: pair.formulation_pos,
        }
    }
}

/// Default heading patterns for model-section discovery.
pub const DEFAULT_SECTION_PATTERNS: [&str; 2] = ["system model", "modeling framework"];

const MATH_DELIMITERS: [(&str, &str); 3] = [
    ("$$", "$$"),
    ("\\[", "\\]"),
    ("\\begin{equation}", "\\end{equation}"),
];

/// Segments markdown into heading/text/equation elements in source order.
///
/// Display math opens with `$$`, `\[`, or `\begin{equation}` at the start of a
/// line; the payload between the delimiters is kept byte-for-byte and nested
/// math inside it is not re-split. Inline `$...$` stays inside text. An
/// opening delimiter with no closer is a parse error carrying its byte
/// offset. Equation blocks whose payload is entirely whitespace are dropped.
pub fn parse_markdown(raw: &str, doc_id: &str) -> Result<Document> {
    let mut elements = Vec::new();
    let mut paragraph: Vec<&str> = Vec::new();
    let mut cursor = 0usize;

    let flush_paragraph = |paragraph: &mut Vec<&str>, elements: &mut Vec<Element>| {
        if paragraph.is_empty() {
            return;
        }
        let content = paragraph.join("\n").trim().to_owned();
        paragraph.clear();
        if !content.is_empty() {
            elements.push(Element {
                position: elements.len(),
                kind: ElementKind::Text,
                content,
            });
        }
    };

    while cursor < raw.len() {
        let line_end = raw[cursor..]
            .find('\n')
            .map(|i| cursor + i)
            .unwrap_or(raw.len());
        let line = &raw[cursor..line_end];
        let trimmed = line.trim_start();

        if let Some((open, close)) = MATH_DELIMITERS
            .iter()
            .find(|(open, _)| trimmed.starts_with(open))
        {
            flush_paragraph(&mut paragraph, &mut elements);
            let open_offset = cursor + (line.len() - trimmed.len());
            let payload_start = open_offset + open.len();
            let close_offset = raw[payload_start..]
                .find(close)
                .map(|i| payload_start + i)
                .ok_or(Error::UnterminatedMath {
                    doc_id: doc_id.to_owned(),
                    delimiter: open,
                    offset: open_offset,
                })?;
            let content = &raw[payload_start..close_offset];
            if !content.trim().is_empty() {
                elements.push(Element {
                    position: elements.len(),
                    kind: ElementKind::Equation,
                    content: content.to_owned(),
                });
            }
            cursor = close_offset + close.len();
            continue;
        }

        if let Some(level) = heading_level(trimmed) {
            flush_paragraph(&mut paragraph, &mut elements);
            let title = trimmed[level as usize..].trim().to_owned();
            elements.push(Element {
                position: elements.len(),
                kind: ElementKind::Heading { level },
                content: title,
            });
        } else if trimmed.is_empty() {
            flush_paragraph(&mut paragraph, &mut elements);
        } else {
            paragraph.push(line);
        }
        cursor = line_end + 1;
    }
    flush_paragraph(&mut paragraph, &mut elements);

    Ok(Document {
        doc_id: doc_id.to_owned(),
        elements,
        source_path: PathBuf::new(),
    })
}

fn heading_level(line: &str) -> Option<u8> {
    let hashes = line.bytes().take_while(|&b| b == b'#').count();
    if (1..=6).contains(&hashes) && line[hashes..].starts_with(' ') {
        Some(hashes as u8)
    } else {
        None
    }
}

/// Reads and parses one `.md` file; the document id is the file stem.
pub fn load_document(path: &Path) -> Result<Document> {
    let raw = std::fs::read_to_string(path)?;
    let doc_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut doc = parse_markdown(&raw, &doc_id)?;
    doc.source_path = path.to_owned();
    Ok(doc)
}

/// Finds sections whose heading title contains one of the patterns
/// (case-insensitive). Each range runs from its heading to the next heading
/// of equal or shallower level, so a matching subsection nested inside a
/// matching section produces a range strictly contained in the outer one.
pub fn find_model_sections(doc: &Document, patterns: &[String]) -> Result<Vec<SectionRange>> {
    if patterns.is_empty() {
        return Err(Error::invalid("section patterns must be non-empty"));
    }
    let lowered: Vec<String> = patterns.iter().map(|p| p.to_lowercase()).collect();
    let mut ranges = Vec::new();
    for (i, element) in doc.elements.iter().enumerate() {
        let Some(level) = element.heading_level() else {
            continue;
        };
        let title = element.content.to_lowercase();
        if !lowered.iter().any(|p| title.contains(p.as_str())) {
            continue;
        }
        let end = doc.elements[i + 1..]
            .iter()
            .position(|e| e.heading_level().is_some_and(|l| l <= level))
            .map(|offset| i + 1 + offset)
            .unwrap_or(doc.elements.len());
        ranges.push(SectionRange { start: i, end });
    }
    Ok(ranges)
}

/// Extracts one pair per equation element per range. The description is the
/// concatenation of every text element in the range strictly before the
/// equation; when the element immediately after the equation is a text
/// element starting with "where" (case-insensitive), it is stored as the
/// where-clause and appended to the description.
pub fn extract_pairs(doc: &Document, ranges: &[SectionRange]) -> Vec<FormulationPair> {
    let mut pairs = Vec::new();
    for range in ranges {
        let heading = &doc.elements[range.start];
        let section_title = heading.content.clone();
        let mut seen_texts: Vec<(usize, &str)> = Vec::new();
        for element in &doc.elements[range.start..range.end] {
            match element.kind {
                ElementKind::Text => seen_texts.push((element.position, element.content.as_str())),
                ElementKind::Equation => {
                    let where_clause = doc.elements[element.position + 1..range.end]
                        .first()
                        .filter(|next| {
                            next.is_text()
                                && next.content.trim().to_lowercase().starts_with("where")
                        })
                        .map(|next| next.content.clone());
                    let mut parts: Vec<&str> =
                        seen_texts.iter().map(|(_, text)| *text).collect();
                    if let Some(clause) = where_clause.as_deref() {
                        parts.push(clause);
                    }
                    let description_end_pos = seen_texts
                        .last()
                        .map(|(pos, _)| *pos)
                        .unwrap_or(heading.position);
                    pairs.push(FormulationPair {
                        description: parts.join(" "),
                        formulation: element.content.clone(),
                        where_clause,
                        section_title: section_title.clone(),
                        description_end_pos,
                        formulation_pos: element.position,
                    });
                }
                ElementKind::Heading { .. } => {}
            }
        }
    }
    pairs
}

/// Convenience composition used by the CLI: parse, locate sections, extract.
pub fn extract_from_document(doc: &Document, patterns: &[String]) -> Result<Vec<PairRecord>> {
    let ranges = find_model_sections(doc, patterns)?;
    Ok(extract_pairs(doc, &ranges)
        .into_iter()
        .map(|p| PairRecord::new(&doc.doc_id, p))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patterns() -> Vec<String> {
        DEFAULT_SECTION_PATTERNS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn segments_heading_text_equation() {
        let doc = parse_markdown("## System Model\nThe channel gain.\n$$h = g$$", "d").unwrap();
        assert_eq!(doc.elements.len(), 3);
        assert_eq!(doc.elements[0].kind, ElementKind::Heading { level: 2 });
        assert_eq!(doc.elements[0].content, "System Model");
        assert_eq!(doc.elements[1].kind, ElementKind::Text);
        assert_eq!(doc.elements[1].content, "The channel gain.");
        assert_eq!(doc.elements[2].kind, ElementKind::Equation);
        assert_eq!(doc.elements[2].content, "h = g");
    }

    #[test]
    fn empty_input_yields_empty_document() {
        let doc = parse_markdown("", "d").unwrap();
        assert!(doc.elements.is_empty());
    }

    #[test]
    fn mixed_delimiters_segment_in_order() {
        let raw = "$$a$$\n\nsome text\n\n\\begin{equation}b\\end{equation}\n";
        let doc = parse_markdown(raw, "d").unwrap();
        let eqs: Vec<&Element> = doc.elements.iter().filter(|e| e.is_equation()).collect();
        assert_eq!(eqs.len(), 2);
        assert_eq!(eqs[0].content, "a");
        assert_eq!(eqs[1].content, "b");
        assert!(eqs[0].position < eqs[1].position);
    }

    #[test]
    fn bracket_display_math_is_recognized() {
        let doc = parse_markdown("\\[x + y\\]", "d").unwrap();
        assert_eq!(doc.elements.len(), 1);
        assert_eq!(doc.elements[0].content, "x + y");
    }

    #[test]
    fn multiline_equation_payload_is_byte_exact() {
        let doc = parse_markdown("$$\n  a + b\n$$", "d").unwrap();
        assert_eq!(doc.elements[0].content, "\n  a + b\n");
    }

    #[test]
    fn unterminated_math_reports_byte_offset() {
        let err = parse_markdown("text\n$$a + b", "d").unwrap_err();
        match err {
            Error::UnterminatedMath { offset, delimiter, .. } => {
                assert_eq!(offset, 5);
                assert_eq!(delimiter, "$$");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn inline_math_stays_in_text() {
        let doc = parse_markdown("the gain $h$ is small", "d").unwrap();
        assert_eq!(doc.elements.len(), 1);
        assert!(doc.elements[0].is_text());
    }

    #[test]
    fn positions_are_strictly_increasing() {
        let doc =
            parse_markdown("# A\n\ntext one\n\n$$e$$\n\ntext two", "d").unwrap();
        for (i, e) in doc.elements.iter().enumerate() {
            assert_eq!(e.position, i);
        }
    }

    #[test]
    fn single_section_range_covers_following_elements() {
        let raw = "## System Model\nt1\n\n$$e1$$\n\nt2\n\n$$e2$$\n\n## Results\nr";
        let doc = parse_markdown(raw, "d").unwrap();
        let ranges = find_model_sections(&doc, &patterns()).unwrap();
        assert_eq!(ranges.len(), 1);
        assert_eq!(ranges[0].start, 0);
        assert_eq!(ranges[0].end, 5); // heading + 4 elements, stops at "## Results"
    }

    #[test]
    fn no_match_yields_empty_list() {
        let doc = parse_markdown("## Introduction\nx", "d").unwrap();
        assert!(find_model_sections(&doc, &patterns()).unwrap().is_empty());
    }

    #[test]
    fn nested_matching_subsection_is_contained_in_outer_range() {
        let raw = "## System Model\nouter text\n\n### Modeling Framework\ninner text\n\n$$e$$";
        let doc = parse_markdown(raw, "d").unwrap();
        let ranges = find_model_sections(&doc, &patterns()).unwrap();
        assert_eq!(ranges.len(), 2);
        let (outer, inner) = (ranges[0], ranges[1]);
        assert!(outer.start < inner.start);
        assert!(inner.end <= outer.end);
        assert_eq!(outer.start, 0);
        assert_eq!(outer.end, doc.elements.len());
        assert_eq!(inner.start, 2);
    }

    #[test]
    fn empty_patterns_are_rejected() {
        let doc = parse_markdown("## System Model", "d").unwrap();
        assert!(find_model_sections(&doc, &[]).is_err());
    }

    #[test]
    fn pair_description_is_preceding_text() {
        let raw = "## System Model\nLet h be gain.\n\n$$C = \\log_2(1+h)$$";
        let doc = parse_markdown(raw, "d").unwrap();
        let ranges = find_model_sections(&doc, &patterns()).unwrap();
        let pairs = extract_pairs(&doc, &ranges);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].description, "Let h be gain.");
        assert_eq!(pairs[0].formulation, "C = \\log_2(1+h)");
        assert!(pairs[0].where_clause.is_none());
        assert!(pairs[0].description_end_pos < pairs[0].formulation_pos);
    }

    #[test]
    fn where_clause_is_captured_and_appended() {
        let raw = "## System Model\n$$x=y$$\n\nwhere y is noise.";
        let doc = parse_markdown(raw, "d").unwrap();
        let ranges = find_model_sections(&doc, &patterns()).unwrap();
        let pairs = extract_pairs(&doc, &ranges);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].where_clause.as_deref(), Some("where y is noise."));
        assert!(pairs[0].description.ends_with("where y is noise."));
    }

    #[test]
    fn later_equations_accumulate_preceding_text() {
        let raw = "## System Model\nbefore one\n\n$$e1$$\n\nbetween\n\n$$e2$$";
        let doc = parse_markdown(raw, "d").unwrap();
        let ranges = find_model_sections(&doc, &patterns()).unwrap();
        let pairs = extract_pairs(&doc, &ranges);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].description, "before one");
        assert_eq!(pairs[1].description, "before one between");
    }

    #[test]
    fn pair_count_equals_equations_in_ranges() {
        let raw = "## System Model\nt\n\n$$a$$\n\n$$b$$\n\n## Other\n$$c$$";
        let doc = parse_markdown(raw, "d").unwrap();
        let ranges = find_model_sections(&doc, &patterns()).unwrap();
        let pairs = extract_pairs(&doc, &ranges);
        let in_range: usize = ranges
            .iter()
            .map(|r| {
                doc.elements[r.start..r.end]
                    .iter()
                    .filter(|e| e.is_equation())
                    .count()
            })
            .sum();
        assert_eq!(pairs.len(), in_range);
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn formulation_matches_source_equation_exactly() {
        let raw = "## System Model\nt\n\n$$ \\frac{a}{b} $$";
        let doc = parse_markdown(raw, "d").unwrap();
        let ranges = find_model_sections(&doc, &patterns()).unwrap();
        let pairs = extract_pairs(&doc, &ranges);
        assert_eq!(pairs[0].formulation, " \\frac{a}{b} ");
        let eq = doc.elements.iter().find(|e| e.is_equation()).unwrap();
        assert_eq!(pairs[0].formulation, eq.content);
    }

    #[test]
    fn markdown_round_trip_reproduces_document() {
        let raw = "# Title\n\nintro text\nspanning lines\n\n## System Model\nLet h be gain.\n\n$$h = g$$\n\nwhere g is fixed.\n\n\\[x^2\\]\n\n### Modeling Framework\ndeep text\n\n\\begin{equation}y = h x\\end{equation}\n";
        let doc = parse_markdown(raw, "d").unwrap();
        let reparsed = parse_markdown(&doc.to_markdown(), "d").unwrap();
        assert_eq!(doc, reparsed);
    }

    proptest! {
        #[test]
        fn serde_round_trip_is_identity(
            titles in proptest::collection::vec("[A-Za-z ]{1,12}", 1..5),
        ) {
            let mut raw = String::new();
            for (i, t) in titles.iter().enumerate() {
                raw.push_str(&format!("## {}\nbody {}\n\n$$e_{}$$\n\n", t.trim(), i, i));
            }
            let doc = parse_markdown(&raw, "prop").unwrap();
            let json = serde_json::to_string(&doc).unwrap();
            let back: Document = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(doc, back);
        }

        #[test]
        fn reconstructed_markdown_reparses_identically(
            bodies in proptest::collection::vec("[a-z][a-z ]{0,16}", 1..6),
        ) {
            let mut raw = String::from("## System Model\n");
            for (i, b) in bodies.iter().enumerate() {
                raw.push_str(&format!("\n{}\n\n$$q_{} = {}$$\n", b.trim(), i, i));
            }
            let doc = parse_markdown(&raw, "prop").unwrap();
            let reparsed = parse_markdown(&doc.to_markdown(), "prop").unwrap();
            prop_assert_eq!(doc, reparsed);
        }
    }
}
