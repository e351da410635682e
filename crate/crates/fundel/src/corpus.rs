//! Annotated documents and IOB conversion.
//!
//! All span arithmetic in this crate uses **character offsets** — indices
//! into the sequence of Unicode scalar values of the document text, never
//! byte offsets. A span `start..end` is half-open: `start` is the first
//! character of the mention, `end` is one past the last. Tokenization is an
//! implementation detail of the models; datasets stay portable across
//! tokenizers because they only speak character offsets.
//!
//! # File format
//!
//! One document per line:
//!
//! ```json
//! {"doc_id": "d1", "text": "Funded by NSF.", "annotations": [{"start": 10, "end": 13, "mention": "NSF", "entity_id": "100000001"}]}
//! ```
//!
//! `entity_id` is `null` for mentions of organizations outside the registry
//! (NIL mentions). In memory that becomes [`EntityLabel::Nil`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::tokenizer::SubwordTokenizer;

/// A half-open character-offset range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    /// Number of characters covered.
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Whether `offset` lies inside the span.
    pub fn contains(&self, offset: usize) -> bool {
        self.start <= offset && offset < self.end
    }
}

/// Gold label of a mention: a registry entity or NIL (the organization is
/// real but absent from the registry).
///
/// Serialized as `"entity_id": <string>` / `"entity_id": null`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Option<String>", into = "Option<String>")]
pub enum EntityLabel {
    #[default]
    Nil,
    Id(String),
}

impl EntityLabel {
    pub fn is_nil(&self) -> bool {
        matches!(self, EntityLabel::Nil)
    }

    pub fn id(&self) -> Option<&str> {
        match self {
            EntityLabel::Nil => None,
            EntityLabel::Id(id) => Some(id),
        }
    }
}

impl From<Option<String>> for EntityLabel {
    fn from(v: Option<String>) -> Self {
        match v {
            None => EntityLabel::Nil,
            Some(id) => EntityLabel::Id(id),
        }
    }
}

impl From<EntityLabel> for Option<String> {
    fn from(v: EntityLabel) -> Self {
        match v {
            EntityLabel::Nil => None,
            EntityLabel::Id(id) => Some(id),
        }
    }
}

/// One gold mention: a character span, the surface string it covers, and the
/// entity (or NIL) it refers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "mention")]
    pub surface: String,
    #[serde(rename = "entity_id", default)]
    pub label: EntityLabel,
}

impl GoldAnnotation {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

/// A document with validated gold annotations.
///
/// Invariants (enforced by [`Document::new`] and the loader):
/// annotations are sorted by start offset, pairwise non-overlapping, inside
/// the text bounds, and each `surface` equals the text slice it points at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub annotations: Vec<GoldAnnotation>,
}

/// Subword tokens of a document paired with IOB tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLabelSequence {
    /// Subword token strings (WordPiece continuation pieces keep their
    /// `##` prefix).
    pub tokens: Vec<String>,
    /// One tag per token.
    pub labels: Vec<IobTag>,
    /// Per-token `(start, end)` character offsets into the document text.
    pub alignment: Vec<(usize, usize)>,
}

/// IOB tag for sequence labeling: `B` opens a mention, `I` continues one,
/// `O` is outside any mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IobTag {
    B,
    I,
    O,
}

impl std::fmt::Display for IobTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IobTag::B => "B",
            IobTag::I => "I",
            IobTag::O => "O",
        })
    }
}

/// A gold span whose boundaries do not coincide with token boundaries, so
/// the IOB round trip cannot reproduce it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Misalignment {
    pub gold: Span,
    pub surface: String,
    /// Span recovered by decoding the IOB tags, or `None` when no token
    /// starts inside the gold span at all.
    pub recovered: Option<Span>,
}

/// Result of loading a corpus file.
#[derive(Debug, Clone)]
pub struct CorpusLoad {
    pub documents: Vec<Document>,
    /// Annotations whose entity id did not resolve in the registry. These
    /// are kept (the id may belong to a newer registry snapshot) but callers
    /// usually want to surface the count.
    pub unknown_entity_refs: usize,
}

impl Document {
    /// Validate and normalize a document: annotations are sorted by start
    /// offset, then checked for bounds, surface agreement, and overlap.
    pub fn new(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        mut annotations: Vec<GoldAnnotation>,
    ) -> Result<Self> {
        let doc_id = doc_id.into();
        let text = text.into();
        let chars: Vec<char> = text.chars().collect();
        annotations.sort_by_key(|a| (a.start, a.end));
        for ann in &annotations {
            if ann.start >= ann.end || ann.end > chars.len() {
                return Err(Error::SpanOutOfBounds {
                    doc_id,
                    start: ann.start,
                    end: ann.end,
                    len: chars.len(),
                });
            }
            let found: String = chars[ann.start..ann.end].iter().collect();
            if found != ann.surface {
                return Err(Error::SurfaceMismatch {
                    doc_id,
                    start: ann.start,
                    end: ann.end,
                    expected: ann.surface.clone(),
                    found,
                });
            }
        }
        for pair in annotations.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::OverlappingSpans {
                    doc_id,
                    a_start: pair[0].start,
                    a_end: pair[0].end,
                    b_start: pair[1].start,
                    b_end: pair[1].end,
                });
            }
        }
        Ok(Document {
            doc_id,
            text,
            annotations,
        })
    }

    /// Character length of the text.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Slice the text by character offsets. Panics if out of bounds, which
    /// validated annotations never are.
    pub fn char_slice(&self, span: Span) -> String {
        char_slice(&self.text, span)
    }

    /// Tokenize the text and label every token with an IOB tag.
    ///
    /// A token belongs to a gold span iff the token's **start** offset lies
    /// inside the span; the first such token gets `B`, the rest `I`. A token
    /// straddling a boundary is therefore resolved by where it starts —
    /// never an error. Misaligned spans are reported through
    /// [`Document::to_iob_with_report`]; this method logs them.
    pub fn to_iob(&self, tokenizer: &dyn SubwordTokenizer) -> TokenLabelSequence {
        let (seq, report) = self.to_iob_with_report(tokenizer);
        for m in &report {
            log::warn!(
                "document {:?}: gold span {}..{} ({:?}) does not align with token boundaries (recovered {:?})",
                self.doc_id,
                m.gold.start,
                m.gold.end,
                m.surface,
                m.recovered,
            );
        }
        seq
    }

    /// Like [`Document::to_iob`], but also returns the list of gold spans
    /// that the tag sequence cannot represent exactly.
    pub fn to_iob_with_report(
        &self,
        tokenizer: &dyn SubwordTokenizer,
    ) -> (TokenLabelSequence, Vec<Misalignment>) {
        let tokens = tokenizer.tokenize(&self.text);
        let mut labels = vec![IobTag::O; tokens.len()];
        // Tokens are sorted by start offset, so each annotation covers a
        // contiguous run found by binary search.
        for ann in &self.annotations {
            let lo = tokens.partition_point(|t| t.start < ann.start);
            let hi = tokens.partition_point(|t| t.start < ann.end);
            for (i, slot) in labels[lo..hi].iter_mut().enumerate() {
                *slot = if i == 0 { IobTag::B } else { IobTag::I };
            }
        }
        let alignment: Vec<(usize, usize)> = tokens.iter().map(|t| (t.start, t.end)).collect();
        let seq = TokenLabelSequence {
            tokens: tokens.into_iter().map(|t| t.piece).collect(),
            labels,
            alignment,
        };

        let recovered = decode_iob(&seq.labels, &seq.alignment);
        let mut report = Vec::new();
        for ann in &self.annotations {
            let gold = ann.span();
            if recovered.binary_search(&gold).is_err() {
                // The decoded span that replaced this one, if any: the one
                // starting inside the gold range.
                let replacement = recovered
                    .iter()
                    .find(|s| gold.contains(s.start))
                    .copied();
                report.push(Misalignment {
                    gold,
                    surface: ann.surface.clone(),
                    recovered: replacement,
                });
            }
        }
        (seq, report)
    }
}

/// Decode an IOB tag sequence back into character spans.
///
/// `B` opens a span; `I` extends the current one. An `I` with no open span
/// (at position 0 or right after an `O`) is repaired by treating it as `B` —
/// taggers sometimes emit such sequences and dropping the mention entirely
/// would be worse. A span's range runs from its first token's start to its
/// last token's end. The result is sorted by start offset.
pub fn decode_iob(labels: &[IobTag], alignment: &[(usize, usize)]) -> Vec<Span> {
    assert_eq!(
        labels.len(),
        alignment.len(),
        "label/alignment length mismatch"
    );
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, tag) in labels.iter().enumerate() {
        match tag {
            IobTag::B => {
                if let Some((first, last)) = open.take() {
                    spans.push(Span::new(alignment[first].0, alignment[last].1));
                }
                open = Some((i, i));
            }
            IobTag::I => match open {
                Some((_, ref mut last)) => *last = i,
                None => open = Some((i, i)),
            },
            IobTag::O => {
                if let Some((first, last)) = open.take() {
                    spans.push(Span::new(alignment[first].0, alignment[last].1));
                }
            }
        }
    }
    if let Some((first, last)) = open {
        spans.push(Span::new(alignment[first].0, alignment[last].1));
    }
    spans
}

/// Slice `text` by character offsets.
pub fn char_slice(text: &str, span: Span) -> String {
    text.chars().skip(span.start).take(span.len()).collect()
}

/// Load a corpus file, enforcing all [`Document`] invariants.
///
/// When a registry is given, annotations whose entity id does not resolve
/// are counted (and logged) but kept — see [`CorpusLoad`].
pub fn load_corpus(path: impl AsRef<Path>, registry: Option<&crate::kb::Registry>) -> Result<CorpusLoad> {
    let path = path.as_ref();
    #[derive(Deserialize)]
    struct DocumentRecord {
        doc_id: String,
        text: String,
        #[serde(default)]
        annotations: Vec<GoldAnnotation>,
    }

    let mut documents = Vec::new();
    let mut unknown = 0usize;
    jsonl::for_each_record::<DocumentRecord, _>(path, |_line, record| {
        let doc = Document::new(record.doc_id, record.text, record.annotations)?;
        if let Some(reg) = registry {
            for ann in &doc.annotations {
                if let EntityLabel::Id(id) = &ann.label {
                    if !reg.contains(id) {
                        unknown += 1;
                        log::warn!(
                            "document {:?}: annotation {}..{} references unknown entity {:?}",
                            doc.doc_id,
                            ann.start,
                            ann.end,
                            id
                        );
                    }
                }
            }
        }
        documents.push(doc);
        Ok(())
    })?;
    Ok(CorpusLoad {
        documents,
        unknown_entity_refs: unknown,
    })
}

/// Write documents as JSONL, one per line.
pub fn save_corpus(path: impl AsRef<Path>, documents: &[Document]) -> Result<()> {
    jsonl::write_records(path.as_ref(), documents)
}
