//! Entity-or-NIL selection and the assembled linking pipeline.
//!
//! The bi-encoder proposes ranked candidates; this module makes the final
//! call. Each (mention, candidate) pair is summarized by a handful of
//! lightweight features — the bi-encoder probability, the best normalized
//! Levenshtein similarity against the candidate's names, and the mention's
//! link probability and commonness from corpus statistics — and a
//! gradient-boosted selector maps the features to a score in [0, 1]. The
//! mention links to the highest-scoring candidate when that score clears a
//! threshold τ, and to NIL otherwise. τ is fixed at training time by a grid
//! search maximizing micro-accuracy over all validation mentions.
//!
//! [`Linker`] bundles every trained artifact (mention detector, bi-encoder,
//! entity embeddings, registry, surface statistics, selector) behind two
//! entry points: [`Linker::link_document`] runs end-to-end from raw text,
//! [`Linker::link_gold_spans`] disambiguates given mention boundaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::biencoder::{BiEncoder, CandidateScore, EntityEmbeddings};
use crate::corpus::{Document, EntityLabel, Span};
use crate::error::{Error, Result};
use crate::gbm::{Gbm, GbmConfig};
use crate::jsonl;
use crate::kb::Registry;
use crate::mention::{MdModel, MentionSpan};
use crate::similarity::max_label_similarity;
use crate::stats::SurfaceFormTable;

/// Names of the built-in features, in the order they feed the selector.
pub const FEATURE_ORDER: [&str; 4] = [
    "biencoder_score",
    "max_label_similarity",
    "link_probability",
    "commonness",
];

/// Per-candidate feature values, all in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Bi-encoder pair probability.
    pub biencoder_score: f64,
    /// Best normalized Levenshtein similarity against the candidate's names.
    pub max_label_similarity: f64,
    /// `P(link | surface)` from corpus statistics; 0 for unseen surfaces.
    pub link_prob: f64,
    /// `P(entity | surface)` from corpus statistics; 0 for unseen pairs.
    pub commonness: f64,
    /// Extra feature values, aligned with the selector's configured extras.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<f64>,
}

impl FeatureVector {
    /// Flatten to the selector's input layout: [`FEATURE_ORDER`] then extras.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.biencoder_score,
            self.max_label_similarity,
            self.link_prob,
            self.commonness,
        ];
        v.extend(&self.extra);
        v
    }
}

/// Features for one candidate of a mention with surface text `surface`.
///
/// The candidate id must resolve in the registry; statistics absent from the
/// table contribute zeros.
pub fn extract_features(
    surface: &str,
    candidate: &CandidateScore,
    registry: &Registry,
    table: &SurfaceFormTable,
) -> Result<FeatureVector> {
    let entity = registry
        .get(&candidate.entity_id)
        .ok_or_else(|| Error::UnknownEntity {
            id: candidate.entity_id.clone(),
            context: "candidate not in the registry".into(),
        })?;
    Ok(FeatureVector {
        biencoder_score: candidate.probability,
        max_label_similarity: max_label_similarity(surface, entity),
        link_prob: table.link_probability(surface),
        commonness: table.commonness(surface, &candidate.entity_id),
        extra: Vec::new(),
    })
}

/// Selector training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    /// Candidates ranked per mention.
    pub n_candidates: usize,
    /// Thresholds tried during the τ grid search.
    pub tau_grid: Vec<f64>,
    pub gbm: GbmConfig,
    /// Names of extra features beyond the built-in four. The built-ins cover
    /// everything this crate computes; the slot exists so downstream callers
    /// can widen the vector without forking the selector.
    pub extra_features: Vec<String>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            n_candidates: 12,
            tau_grid: default_tau_grid(),
            gbm: GbmConfig::default(),
            extra_features: Vec::new(),
        }
    }
}

/// The default τ search grid: fine steps of 0.002 up to 0.2 (where the
/// operating point lives), then coarse steps of 0.05 up to 1.0. Includes the
/// reference threshold 0.042 exactly.
pub fn default_tau_grid() -> Vec<f64> {
    let fine = (0..=100).map(|i| (2 * i) as f64 / 1000.0);
    let coarse = (5..=20).map(|i| (50 * i) as f64 / 1000.0);
    fine.chain(coarse).collect()
}

impl SelectorConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 {
            return Err(Error::InvalidConfig(
                "selector.n_candidates must be ≥ 1".into(),
            ));
        }
        if self.tau_grid.is_empty() {
            return Err(Error::InvalidConfig("selector.tau_grid is empty".into()));
        }
        if self.tau_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidConfig(
                "selector.tau_grid values must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// A trained selector: tree ensemble, feature-order manifest, and threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectorModel {
    gbm: Gbm,
    tau: f64,
    feature_order: Vec<String>,
    n_candidates: usize,
}

impl SelectorModel {
    /// Assemble a selector from an already-trained ensemble and a fixed
    /// threshold, bypassing the validation sweep.
    pub fn new(
        gbm: Gbm,
        tau: f64,
        feature_order: Vec<String>,
        n_candidates: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidConfig(format!(
                "selector threshold must lie in [0, 1], got {tau}"
            )));
        }
        if gbm.n_features() != feature_order.len() {
            return Err(Error::InvalidConfig(format!(
                "ensemble expects {} features but the manifest lists {}",
                gbm.n_features(),
                feature_order.len()
            )));
        }
        if n_candidates == 0 {
            return Err(Error::InvalidConfig(
                "selector.n_candidates must be ≥ 1".into(),
            ));
        }
        Ok(Self {
            gbm,
            tau,
            feature_order,
            n_candidates,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn feature_order(&self) -> &[String] {
        &self.feature_order
    }

    pub fn n_candidates(&self) -> usize {
        self.n_candidates
    }

    /// Selector score for one candidate's features, in [0, 1].
    pub fn score(&self, features: &FeatureVector) -> f64 {
        self.gbm.predict(&features.to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: SelectorModel = serde_json::from_slice(&bytes)?;
        if model.gbm.n_features() != model.feature_order.len() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!(
                    "ensemble expects {} features but the manifest lists {}",
                    model.gbm.n_features(),
                    model.feature_order.len()
                ),
            });
        }
        Ok(model)
    }
}

/// The final verdict for one mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDecision {
    pub span: MentionSpan,
    /// The linked entity, or NIL when no candidate's score clears τ.
    pub outcome: EntityLabel,
    /// The winning candidate's selector score; 0 when there were no
    /// candidates at all.
    pub selector_score: f64,
}

/// Pick the highest-scoring candidate if it clears τ, else NIL. Ties break
/// to the smaller entity id; the result does not depend on candidate order.
pub fn decide(
    selector: &SelectorModel,
    span: MentionSpan,
    candidates: &[(CandidateScore, FeatureVector)],
) -> LinkDecision {
    let mut best: Option<(&str, f64)> = None;
    for (candidate, features) in candidates {
        let score = selector.score(features);
        let better = match best {
            None => true,
            Some((id, s)) => score > s || (score == s && candidate.entity_id.as_str() < id),
        };
        if better {
            best = Some((candidate.entity_id.as_str(), score));
        }
    }
    match best {
        Some((id, score)) if score > selector.tau => LinkDecision {
            span,
            outcome: EntityLabel::Id(id.to_string()),
            selector_score: score,
        },
        Some((_, score)) => LinkDecision {
            span,
            outcome: EntityLabel::Nil,
            selector_score: score,
        },
        None => LinkDecision {
            span,
            outcome: EntityLabel::Nil,
            selector_score: 0.0,
        },
    }
}

/// One mention's precomputed candidate scores, reused across the τ sweep.
struct ScoredMention {
    gold: EntityLabel,
    /// Winning candidate and its selector score; `None` for no candidates.
    best: Option<(String, f64)>,
}

fn score_mention(
    doc: &Document,
    start: usize,
    end: usize,
    surface: &str,
    gold: &EntityLabel,
    biencoder: &BiEncoder,
    embeddings: &EntityEmbeddings,
    registry: &Registry,
    table: &SurfaceFormTable,
    gbm: &Gbm,
    n_candidates: usize,
) -> Result<ScoredMention> {
    let input = biencoder.mention_input(&doc.text, Span::new(start, end));
    let ranked = biencoder.rank_candidates(&input, embeddings, n_candidates)?;
    let mut best: Option<(String, f64)> = None;
    for candidate in &ranked {
        let features = extract_features(surface, candidate, registry, table)?;
        let score = gbm.predict(&features.to_vec());
        let better = match &best {
            None => true,
            Some((id, s)) => score > *s || (score == *s && candidate.entity_id < *id),
        };
        if better {
            best = Some((candidate.entity_id.clone(), score));
        }
    }
    let gold = match gold {
        EntityLabel::Id(id) if !registry.contains(id) => {
            log::warn!(
                "document {:?}: gold entity {id:?} not in the registry; scoring the mention \
                 as NIL",
                doc.doc_id
            );
            EntityLabel::Nil
        }
        other => other.clone(),
    };
    Ok(ScoredMention { gold, best })
}

/// Train the gradient-boosted selector and fix its threshold.
///
/// Every gold mention in `train` contributes one (features, label) pair per
/// top-`n_candidates` candidate, labeled 1 only for the gold entity — NIL
/// mentions contribute all-zero labels. τ is then chosen from the grid to
/// maximize micro-accuracy over all `val` mentions, smallest τ on ties.
pub fn train_selector(
    train: &[Document],
    val: &[Document],
    biencoder: &BiEncoder,
    embeddings: &EntityEmbeddings,
    registry: &Registry,
    table: &SurfaceFormTable,
    config: &SelectorConfig,
) -> Result<SelectorModel> {
    config.validate()?;

    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut positives = 0usize;
    for doc in train {
        for ann in &doc.annotations {
            let input = biencoder.mention_input(&doc.text, ann.span());
            let ranked = biencoder.rank_candidates(&input, embeddings, config.n_candidates)?;
            for candidate in &ranked {
                let fv = extract_features(&ann.surface, candidate, registry, table)?;
                let positive = ann.label.id() == Some(candidate.entity_id.as_str());
                positives += usize::from(positive);
                features.push(fv.to_vec());
                labels.push(f64::from(u8::from(positive)));
            }
        }
    }
    if positives == 0 {
        return Err(Error::EmptyInput(
            "selector training produced no positive pairs".into(),
        ));
    }
    let gbm = Gbm::train(&features, &labels, &config.gbm)?;

    // Score every validation mention once, then sweep τ over the cached
    // scores.
    let mut scored: Vec<ScoredMention> = Vec::new();
    for doc in val {
        for ann in &doc.annotations {
            scored.push(score_mention(
                doc,
                ann.start,
                ann.end,
                &ann.surface,
                &ann.label,
                biencoder,
                embeddings,
                registry,
                table,
                &gbm,
                config.n_candidates,
            )?);
        }
    }
    if scored.is_empty() {
        return Err(Error::EmptyInput(
            "selector validation split has no mentions".into(),
        ));
    }

    let mut grid = config.tau_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut best_tau = grid[0];
    let mut best_correct = 0usize;
    for &tau in &grid {
        let correct = scored
            .iter()
            .filter(|m| {
                let predicted = match &m.best {
                    Some((id, score)) if *score > tau => EntityLabel::Id(id.clone()),
                    _ => EntityLabel::Nil,
                };
                predicted == m.gold
            })
            .count();
        if correct > best_correct {
            best_correct = correct;
            best_tau = tau;
        }
    }
    log::info!(
        "selector: τ = {best_tau} at validation micro-accuracy {:.4} ({best_correct}/{})",
        best_correct as f64 / scored.len() as f64,
        scored.len()
    );

    let mut feature_order: Vec<String> = FEATURE_ORDER.iter().map(|s| s.to_string()).collect();
    feature_order.extend(config.extra_features.iter().cloned());
    Ok(SelectorModel {
        gbm,
        tau: best_tau,
        feature_order,
        n_candidates: config.n_candidates,
    })
}

/// The assembled pipeline: every trained artifact needed to link raw text.
pub struct Linker {
    md: MdModel,
    biencoder: BiEncoder,
    embeddings: EntityEmbeddings,
    registry: Registry,
    table: SurfaceFormTable,
    selector: SelectorModel,
}

impl Linker {
    /// Bundle trained artifacts, verifying they belong together: the entity
    /// embeddings must carry the bi-encoder's version hash and cover exactly
    /// the registry.
    pub fn new(
        md: MdModel,
        biencoder: BiEncoder,
        embeddings: EntityEmbeddings,
        registry: Registry,
        table: SurfaceFormTable,
        selector: SelectorModel,
    ) -> Result<Self> {
        let current = biencoder.version_hash()?;
        if embeddings.model_hash() != current {
            return Err(Error::InvalidConfig(format!(
                "entity embeddings are stale: built with model {} but the bi-encoder is {}",
                &embeddings.model_hash()[..12.min(embeddings.model_hash().len())],
                &current[..12]
            )));
        }
        if embeddings.len() != registry.len()
            || !embeddings.ids().iter().map(String::as_str).eq(registry.ids())
        {
            return Err(Error::InvalidConfig(
                "entity embeddings do not cover the registry".into(),
            ));
        }
        Ok(Linker {
            md,
            biencoder,
            embeddings,
            registry,
            table,
            selector,
        })
    }

    pub fn selector(&self) -> &SelectorModel {
        &self.selector
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Detection only: the mention spans linking would start from.
    pub fn detect(&self, text: &str) -> Result<Vec<MentionSpan>> {
        self.md.detect_mentions(text)
    }

    fn decide_span(&self, text: &str, span: MentionSpan) -> Result<LinkDecision> {
        let input = self.biencoder.mention_input(text, span.span());
        let ranked =
            self.biencoder
                .rank_candidates(&input, &self.embeddings, self.selector.n_candidates)?;
        let mut candidates = Vec::with_capacity(ranked.len());
        for candidate in ranked {
            let features =
                extract_features(&span.surface, &candidate, &self.registry, &self.table)?;
            candidates.push((candidate, features));
        }
        Ok(decide(&self.selector, span, &candidates))
    }

    /// End-to-end linking: detect mentions, rank candidates, decide. The
    /// decisions come back sorted by span start.
    pub fn link_document(&self, text: &str) -> Result<Vec<LinkDecision>> {
        let mut decisions = Vec::new();
        for span in self.md.detect_mentions(text)? {
            decisions.push(self.decide_span(text, span)?);
        }
        decisions.sort_by_key(|d| (d.span.start, d.span.end));
        Ok(decisions)
    }

    /// Disambiguation only: link the document's gold mention spans, skipping
    /// detection.
    pub fn link_gold_spans(&self, doc: &Document) -> Result<Vec<LinkDecision>> {
        let mut decisions = Vec::new();
        for ann in &doc.annotations {
            let span = MentionSpan {
                start: ann.start,
                end: ann.end,
                surface: ann.surface.clone(),
            };
            decisions.push(self.decide_span(&doc.text, span)?);
        }
        decisions.sort_by_key(|d| (d.span.start, d.span.end));
        Ok(decisions)
    }
}

/// One line of a linking output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedMention {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub mention: String,
    /// `null` encodes NIL.
    pub entity_id: Option<String>,
    pub score: f64,
}

impl LinkedMention {
    pub fn from_decision(doc_id: &str, decision: &LinkDecision) -> Self {
        LinkedMention {
            doc_id: doc_id.to_string(),
            start: decision.span.start,
            end: decision.span.end,
            mention: decision.span.surface.clone(),
            entity_id: decision.outcome.id().map(str::to_string),
            score: decision.selector_score,
        }
    }
}

/// Write linking decisions as JSONL, one mention per line.
pub fn save_links(path: impl AsRef<Path>, links: &[LinkedMention]) -> Result<()> {
    jsonl::write_records(path.as_ref(), links)
}

/// Read a linking output file.
pub fn load_links(path: impl AsRef<Path>) -> Result<Vec<LinkedMention>> {
    let mut links = Vec::new();
    jsonl::for_each_record::<LinkedMention, _>(path.as_ref(), |_, record| {
        links.push(record);
        Ok(())
    })?;
    Ok(links)
}
