//! Levenshtein edit distance and normalized string similarity.
//!
//! The selector consumes one string feature: the best normalized Levenshtein
//! similarity between a mention and any of a candidate entity's names. The
//! comparison is case-insensitive and normalizes by the longer string, so
//! the result always lands in [0, 1] with 1 meaning equality.

use crate::kb::FunderEntity;

/// Unit-cost Levenshtein edit distance (insert/delete/substitute) over
/// Unicode scalar values, computed with the classic two-row dynamic program.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur: Vec<usize> = vec![0; b.len() + 1];
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

/// Case-insensitive similarity in [0, 1]:
/// `1 − levenshtein(a, b) / max(|a|, |b|)` after lowercasing.
///
/// Two empty strings are identical, hence similarity 1.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    let a = fold_case(a);
    let b = fold_case(b);
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / max_len as f64
}

/// Highest [`normalized_similarity`] between the mention surface and any of
/// the entity's names (primary name and aliases alike).
pub fn max_label_similarity(mention: &str, entity: &FunderEntity) -> f64 {
    entity
        .names
        .iter()
        .map(|name| normalized_similarity(mention, name))
        .fold(0.0, f64::max)
}

fn fold_case(s: &str) -> String {
    s.chars().flat_map(char::to_lowercase).collect()
}
