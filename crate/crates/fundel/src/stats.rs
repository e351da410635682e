//! Surface-form statistics: link probability and commonness.
//!
//! For a mention surface `m` the table tracks three counts over a corpus:
//!
//! * `n_m` — occurrences of `m` as a term in document text,
//! * `n_link` — occurrences annotated as a mention (entity or NIL),
//! * `n_me` — occurrences annotated as a link to a specific entity `e`.
//!
//! From these, `link_probability(m) = n_link / n_m` estimates how often the
//! surface is a mention at all, and `commonness(m, e) = n_me / Σ_e' n_me'`
//! estimates which entity the surface usually refers to. Only surfaces that
//! occur at least once as a gold annotation are tracked: the formulas never
//! consult `n_m` for anything else.
//!
//! Term counting is case-sensitive exact matching on word boundaries (funder
//! acronyms are case-significant). A position counts when the characters
//! adjacent to the match are not alphanumeric. Annotated occurrences count
//! unconditionally — even when an annotation starts or ends mid-word — so
//! `n_link ≤ n_m` holds by construction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntityLabel};
use crate::error::{Error, Result};

/// Per-surface counters. See the module docs for definitions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceFormTable {
    surfaces: BTreeMap<String, SurfaceEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct SurfaceEntry {
    /// Total occurrences of the surface as a term in the corpus.
    n_m: usize,
    /// Occurrences annotated as a mention (linked to an entity or to NIL).
    n_link: usize,
    /// Occurrences linked to each entity. NIL links have no row here.
    entities: BTreeMap<String, usize>,
}

impl SurfaceFormTable {
    /// Count surface statistics over a validated corpus.
    pub fn build(corpus: &[Document]) -> Self {
        // Pass 1: the universe of trackable surfaces, with link counts.
        let mut surfaces: BTreeMap<String, SurfaceEntry> = BTreeMap::new();
        for doc in corpus {
            for ann in &doc.annotations {
                let entry = surfaces.entry(ann.surface.clone()).or_default();
                entry.n_link += 1;
                if let EntityLabel::Id(id) = &ann.label {
                    *entry.entities.entry(id.clone()).or_default() += 1;
                }
            }
        }

        // Pass 2: term occurrences of each tracked surface. Annotated spans
        // are unioned in so every link is also an occurrence.
        for doc in corpus {
            let chars: Vec<char> = doc.text.chars().collect();
            let mut positions: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
            for (surface, _) in surfaces.iter() {
                let found = word_boundary_matches(&chars, surface);
                if !found.is_empty() {
                    positions.insert(surface.as_str(), found);
                }
            }
            for ann in &doc.annotations {
                positions
                    .entry(ann.surface.as_str())
                    .or_default()
                    .insert(ann.start);
            }
            let counts: Vec<(String, usize)> = positions
                .into_iter()
                .map(|(s, set)| (s.to_string(), set.len()))
                .collect();
            for (surface, count) in counts {
                surfaces.get_mut(&surface).expect("tracked surface").n_m += count;
            }
        }

        SurfaceFormTable { surfaces }
    }

    /// `P(link | m) = n_link(m) / n(m)`; 0 for unseen surfaces.
    pub fn link_probability(&self, mention: &str) -> f64 {
        match self.surfaces.get(mention) {
            Some(e) if e.n_m > 0 => e.n_link as f64 / e.n_m as f64,
            _ => 0.0,
        }
    }

    /// `P(e | m) = n(m, e) / Σ_e' n(m, e')`; 0 when the surface was never
    /// linked to any entity.
    pub fn commonness(&self, mention: &str, entity: &str) -> f64 {
        let Some(e) = self.surfaces.get(mention) else {
            return 0.0;
        };
        let total: usize = e.entities.values().sum();
        if total == 0 {
            return 0.0;
        }
        *e.entities.get(entity).unwrap_or(&0) as f64 / total as f64
    }

    /// The entity with the highest commonness if that maximum is positive,
    /// else NIL. Ties break to the lexicographically smallest entity id.
    pub fn commonness_baseline(&self, mention: &str) -> EntityLabel {
        let Some(e) = self.surfaces.get(mention) else {
            return EntityLabel::Nil;
        };
        // Iteration is in ascending id order, so strict `>` keeps the
        // smallest id among tied counts.
        let mut best: Option<(&String, usize)> = None;
        for (id, &count) in &e.entities {
            if count > 0 && best.map_or(true, |(_, c)| count > c) {
                best = Some((id, count));
            }
        }
        match best {
            Some((id, _)) => EntityLabel::Id(id.clone()),
            None => EntityLabel::Nil,
        }
    }

    /// Raw counters for a surface: `(n_m, n_link)`. Zero for unseen.
    pub fn counts(&self, mention: &str) -> (usize, usize) {
        self.surfaces
            .get(mention)
            .map_or((0, 0), |e| (e.n_m, e.n_link))
    }

    /// Times `mention` was linked to `entity`.
    pub fn entity_count(&self, mention: &str, entity: &str) -> usize {
        self.surfaces
            .get(mention)
            .and_then(|e| e.entities.get(entity))
            .copied()
            .unwrap_or(0)
    }

    /// Tracked surfaces in lexicographic order.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.surfaces.keys().map(String::as_str)
    }

    /// Number of tracked surfaces.
    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// Verify the structural invariants. Cheap; called from tests and after
    /// deserialization.
    pub fn check_invariants(&self) -> Result<()> {
        for (s, e) in &self.surfaces {
            if e.n_link > e.n_m {
                return Err(Error::InvalidConfig(format!(
                    "surface {s:?}: n_link {} exceeds n_m {}",
                    e.n_link, e.n_m
                )));
            }
            let entity_total: usize = e.entities.values().sum();
            if entity_total > e.n_link {
                return Err(Error::InvalidConfig(format!(
                    "surface {s:?}: entity links {entity_total} exceed n_link {}",
                    e.n_link
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let table: SurfaceFormTable = serde_json::from_slice(&bytes)?;
        table.check_invariants()?;
        Ok(table)
    }
}

/// Start offsets of case-sensitive exact occurrences of `surface` in `text`
/// whose neighbors are not alphanumeric.
fn word_boundary_matches(text: &[char], surface: &str) -> BTreeSet<usize> {
    let pattern: Vec<char> = surface.chars().collect();
    let mut out = BTreeSet::new();
    if pattern.is_empty() || pattern.len() > text.len() {
        return out;
    }
    for start in 0..=text.len() - pattern.len() {
        let end = start + pattern.len();
        if text[start..end] != pattern[..] {
            continue;
        }
        let left_ok = start == 0 || !text[start - 1].is_alphanumeric();
        let right_ok = end == text.len() || !text[end].is_alphanumeric();
        if left_ok && right_ok {
            out.insert(start);
        }
    }
    out
}
