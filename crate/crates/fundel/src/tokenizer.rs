//! WordPiece-style subword tokenization with exact character alignment.
//!
//! The encoders never see raw text: they see subword ids produced here. Two
//! properties matter to the rest of the crate:
//!
//! * **Alignment** — every token records the half-open character span it was
//!   cut from, so tag sequences and attention outputs can be mapped back to
//!   document offsets losslessly.
//! * **Determinism** — building a vocabulary from the same corpus always
//!   yields the same id assignment (ties broken lexicographically).
//!
//! Tokenization is case-preserving. Pre-tokenization splits on whitespace
//! and isolates every non-alphanumeric character as its own word, then each
//! word is segmented greedily (longest vocabulary match first), with `##`
//! marking continuation pieces. A word with no possible segmentation becomes
//! a single `[UNK]` token covering the whole word.
//!
//! The vocabulary always contains the five classic BERT specials plus four
//! task markers: `[E_A]`/`[E_B]` fence entity names and wrap the country in
//! entity inputs, `[M_s]`/`[M_e]` bracket the mention in mention inputs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Special token strings, in id order. `[PAD]` is always id 0.
pub const SPECIAL_TOKENS: [&str; 9] = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[E_A]", "[E_B]", "[M_s]", "[M_e]",
];

/// A subword token cut from a specific character range of the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// The vocabulary piece (`##`-prefixed for continuations, `[UNK]` for
    /// unsegmentable words).
    pub piece: String,
    /// Vocabulary id of `piece`.
    pub id: u32,
    /// First character of the range this token covers.
    pub start: usize,
    /// One past the last character.
    pub end: usize,
}

/// Anything that can cut text into aligned subword tokens.
pub trait SubwordTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token>;
}

/// An id-indexed vocabulary. Ids 0..9 are always [`SPECIAL_TOKENS`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl From<VocabFile> for Vocab {
    fn from(f: VocabFile) -> Self {
        Vocab::from_tokens(f.tokens)
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl Vocab {
    /// Wrap an explicit token list (first entries must be the specials; this
    /// is checked so a corrupt vocabulary file fails fast).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert!(
                tokens.get(i).map(String::as_str) == Some(*s),
                "vocabulary must start with the special tokens; slot {i} should be {s}"
            );
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    /// Build a vocabulary from a corpus.
    ///
    /// Layout: specials, then every character seen in the corpus (plus its
    /// `##` continuation form) in code-point order, then whole words by
    /// descending frequency (ties lexicographic) up to `max_size` entries.
    /// Character coverage is unconditional so segmentation only falls back
    /// to `[UNK]` on characters never seen at build time.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut chars: BTreeSet<char> = BTreeSet::new();
        for text in texts {
            for word in pre_tokenize(text) {
                chars.extend(word.text.chars());
                *word_counts.entry(word.text).or_default() += 1;
            }
        }

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
        for c in &chars {
            for form in [c.to_string(), format!("##{c}")] {
                if seen.insert(form.clone()) {
                    tokens.push(form);
                }
            }
        }

        let mut words: Vec<(&String, &usize)> = word_counts.iter().collect();
        words.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        for (word, _) in words {
            if tokens.len() >= max_size.max(SPECIAL_TOKENS.len()) {
                break;
            }
            if seen.insert(word.clone()) {
                tokens.push(word.clone());
            }
        }
        Vocab::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    /// Id of an exact piece, if present.
    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    /// Piece string for an id.
    pub fn piece(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn pad_id(&self) -> u32 {
        0
    }
    pub fn unk_id(&self) -> u32 {
        1
    }
    pub fn cls_id(&self) -> u32 {
        2
    }
    pub fn sep_id(&self) -> u32 {
        3
    }
    pub fn mask_id(&self) -> u32 {
        4
    }
    /// `[E_A]` — fences entity names.
    pub fn e_a_id(&self) -> u32 {
        5
    }
    /// `[E_B]` — introduces the entity country.
    pub fn e_b_id(&self) -> u32 {
        6
    }
    /// `[M_s]` — opens the mention.
    pub fn m_s_id(&self) -> u32 {
        7
    }
    /// `[M_e]` — closes the mention.
    pub fn m_e_id(&self) -> u32 {
        8
    }

    /// Whether `id` is one of the reserved special tokens.
    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// Ids eligible as random replacements in masked-language-model
    /// corruption: everything except the specials.
    pub fn non_special_range(&self) -> std::ops::Range<u32> {
        SPECIAL_TOKENS.len() as u32..self.len() as u32
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let vocab: Vocab = serde_json::from_slice(&bytes)?;
        Ok(vocab)
    }
}

/// A pre-token: a whitespace-free word with its character span.
struct PreToken {
    text: String,
    start: usize,
    end: usize,
}

/// Split text into words: maximal alphanumeric runs, and every other
/// non-whitespace character alone.
fn pre_tokenize(text: &str) -> Vec<PreToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut words = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            words.push(PreToken {
                text: chars[start..i].iter().collect(),
                start,
                end: i,
            });
        } else {
            words.push(PreToken {
                text: c.to_string(),
                start: i,
                end: i + 1,
            });
            i += 1;
        }
    }
    words
}

/// Greedy longest-match WordPiece segmenter over a [`Vocab`].
#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    vocab: Vocab,
}

impl WordPieceTokenizer {
    pub fn new(vocab: Vocab) -> Self {
        WordPieceTokenizer { vocab }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Segment one word (already whitespace-free) into pieces. Returns
    /// `None` when some position has no vocabulary match, in which case the
    /// caller emits `[UNK]` for the whole word.
    fn segment_word(&self, word: &[char], word_start: usize) -> Option<Vec<Token>> {
        let mut pieces = Vec::new();
        let mut i = 0;
        while i < word.len() {
            let mut matched = None;
            // Longest match first.
            for j in (i + 1..=word.len()).rev() {
                let mut candidate: String = if i > 0 { "##".to_string() } else { String::new() };
                candidate.extend(&word[i..j]);
                if let Some(id) = self.vocab.id(&candidate) {
                    matched = Some((candidate, id, j));
                    break;
                }
            }
            let (piece, id, j) = matched?;
            pieces.push(Token {
                piece,
                id,
                start: word_start + i,
                end: word_start + j,
            });
            i = j;
        }
        Some(pieces)
    }
}

impl SubwordTokenizer for WordPieceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut tokens = Vec::new();
        for word in pre_tokenize(text) {
            let chars: Vec<char> = word.text.chars().collect();
            match self.segment_word(&chars, word.start) {
                Some(pieces) => tokens.extend(pieces),
                None => tokens.push(Token {
                    piece: "[UNK]".to_string(),
                    id: self.vocab.unk_id(),
                    start: word.start,
                    end: word.end,
                }),
            }
        }
        tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_vocab() -> Vocab {
        Vocab::build(
            ["funding funded fund the NSF grant café grants (a)."],
            10_000,
        )
    }

    #[test]
    fn specials_occupy_fixed_ids() {
        let v = small_vocab();
        assert_eq!(v.piece(0), Some("[PAD]"));
        assert_eq!(v.piece(1), Some("[UNK]"));
        assert_eq!(v.piece(2), Some("[CLS]"));
        assert_eq!(v.piece(3), Some("[SEP]"));
        assert_eq!(v.piece(4), Some("[MASK]"));
        assert_eq!(v.piece(5), Some("[E_A]"));
        assert_eq!(v.piece(6), Some("[E_B]"));
        assert_eq!(v.piece(7), Some("[M_s]"));
        assert_eq!(v.piece(8), Some("[M_e]"));
        assert_eq!(v.e_a_id(), 5);
        assert_eq!(v.m_e_id(), 8);
    }

    #[test]
    fn build_is_deterministic() {
        let a = Vocab::build(["grants for science", "science grants"], 64);
        let b = Vocab::build(["grants for science", "science grants"], 64);
        assert_eq!(a, b);
    }

    #[test]
    fn greedy_prefers_longest_match() {
        let tok = WordPieceTokenizer::new(small_vocab());
        // "funding" is a whole vocabulary word: one token, not fund + pieces.
        let tokens = tok.tokenize("funding");
        assert_eq!(tokens.len(), 1);
        assert_eq!(tokens[0].piece, "funding");
        assert_eq!((tokens[0].start, tokens[0].end), (0, 7));
    }

    #[test]
    fn falls_back_to_char_pieces() {
        let tok = WordPieceTokenizer::new(small_vocab());
        // "funds" is not a vocabulary word, but all its characters are.
        let tokens = tok.tokenize("funds");
        assert_eq!(tokens[0].piece, "fund");
        assert_eq!(tokens[1].piece, "##s");
        assert_eq!((tokens[1].start, tokens[1].end), (4, 5));
    }

    #[test]
    fn unknown_character_becomes_unk_covering_the_word() {
        let tok = WordPieceTokenizer::new(small_vocab());
        let tokens = tok.tokenize("grant Ωmega fund");
        let unk: Vec<&Token> = tokens.iter().filter(|t| t.piece == "[UNK]").collect();
        assert_eq!(unk.len(), 1);
        assert_eq!((unk[0].start, unk[0].end), (6, 11));
        assert_eq!(unk[0].id, 1);
    }

    #[test]
    fn punctuation_is_isolated() {
        let tok = WordPieceTokenizer::new(small_vocab());
        let tokens = tok.tokenize("fund(NSF).");
        let pieces: Vec<&str> = tokens.iter().map(|t| t.piece.as_str()).collect();
        assert_eq!(pieces, ["fund", "(", "NSF", ")", "."]);
    }

    #[test]
    fn multibyte_alignment_is_char_based() {
        let tok = WordPieceTokenizer::new(small_vocab());
        let text = "café fund";
        let tokens = tok.tokenize(text);
        assert_eq!(tokens[0].piece, "café");
        assert_eq!((tokens[0].start, tokens[0].end), (0, 4));
        assert_eq!(tokens[1].piece, "fund");
        assert_eq!((tokens[1].start, tokens[1].end), (5, 9));
    }

    #[test]
    fn case_is_preserved() {
        let tok = WordPieceTokenizer::new(small_vocab());
        let tokens = tok.tokenize("NSF nsf");
        assert_eq!(tokens[0].piece, "NSF");
        // lowercase "nsf" is not in the vocabulary as a word; it segments
        // into character pieces rather than matching "NSF".
        assert_ne!(tokens[1].piece, "NSF");
    }

    #[test]
    fn vocab_round_trips_through_file() {
        let v = small_vocab();
        let f = tempfile::NamedTempFile::new().unwrap();
        v.save(f.path()).unwrap();
        assert_eq!(Vocab::load(f.path()).unwrap(), v);
    }

    proptest! {
        /// Tokens tile the non-whitespace characters in order: spans are
        /// strictly ascending, never overlap, and every piece matches the
        /// slice it claims (modulo the ## marker and [UNK]).
        #[test]
        fn alignment_tiles_text(text in "[a-zA-Z0-9 .,()\\-]{0,80}") {
            let tok = WordPieceTokenizer::new(Vocab::build([text.as_str()], 4096));
            let chars: Vec<char> = text.chars().collect();
            let tokens = tok.tokenize(&text);
            let mut cursor = 0usize;
            for t in &tokens {
                prop_assert!(t.start >= cursor);
                prop_assert!(t.start < t.end);
                prop_assert!(t.end <= chars.len());
                // Gap characters are whitespace only.
                for c in &chars[cursor..t.start] {
                    prop_assert!(c.is_whitespace());
                }
                let slice: String = chars[t.start..t.end].iter().collect();
                if t.piece != "[UNK]" {
                    let stripped = t.piece.strip_prefix("##").unwrap_or(&t.piece);
                    prop_assert_eq!(stripped, slice);
                }
                cursor = t.end;
            }
            for c in &chars[cursor..] {
                prop_assert!(c.is_whitespace());
            }
        }

        /// The vocabulary is built from the text itself, so segmentation
        /// never needs [UNK] in this property.
        #[test]
        fn self_vocab_never_unks(text in "[a-zA-Z0-9 ]{0,60}") {
            let tok = WordPieceTokenizer::new(Vocab::build([text.as_str()], 4096));
            for t in tok.tokenize(&text) {
                prop_assert_ne!(t.piece, "[UNK]");
            }
        }
    }
}
