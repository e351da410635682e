//! Strong-match evaluation for mention detection (MD), entity
//! disambiguation (ED), and end-to-end entity linking (EL), plus a small
//! wall-clock timing harness.
//!
//! Three evaluation settings:
//!
//! * **All** — every mention; for ED this is plain accuracy (the mention set
//!   is given), for EL it is precision/recall over predicted vs gold
//!   mentions.
//! * **EE** (emerging entities) — the NIL side: predictions that say NIL,
//!   gold mentions whose referent is outside the KB.
//! * **In-KB** — the linked side: predictions that name an entity, gold
//!   mentions with a KB referent.
//!
//! Matching is always *strong*: a predicted span counts only when its
//! character boundaries equal a gold span's exactly.
//!
//! Micro scores pool counts over the whole corpus; macro scores average
//! per-document values, skipping documents with nothing in the setting
//! (neither gold nor predicted items) so no document contributes a 0/0.
//! Undefined precision or recall inside an included document is reported
//! as 0; the support counts make that visible.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntityLabel, GoldAnnotation, Span};
use crate::error::{Error, Result};

/// Evaluation setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    All,
    #[serde(rename = "EE")]
    Ee,
    #[serde(rename = "In-KB")]
    InKb,
    #[serde(rename = "MD")]
    Md,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::All => "All",
            Setting::Ee => "EE",
            Setting::InKb => "In-KB",
            Setting::Md => "MD",
        })
    }
}

/// Precision / recall / F1 triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrF1 {
    /// Build from raw counts; empty denominators yield 0 components.
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted > 0 {
            correct as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if gold > 0 {
            correct as f64 / gold as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PrF1 {
            precision,
            recall,
            f1,
        }
    }
}

/// Micro or macro values for one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValues {
    PrF1(PrF1),
    Accuracy { accuracy: f64 },
}

impl MetricValues {
    /// The headline number: F1 for P/R settings, accuracy otherwise.
    pub fn headline(&self) -> f64 {
        match self {
            MetricValues::PrF1(v) => v.f1,
            MetricValues::Accuracy { accuracy } => *accuracy,
        }
    }

    pub fn as_prf1(&self) -> Option<PrF1> {
        match self {
            MetricValues::PrF1(v) => Some(*v),
            MetricValues::Accuracy { .. } => None,
        }
    }

    pub fn as_accuracy(&self) -> Option<f64> {
        match self {
            MetricValues::Accuracy { accuracy } => Some(*accuracy),
            MetricValues::PrF1(_) => None,
        }
    }
}

/// How much data backed a setting's scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    /// Gold items in the setting.
    pub gold: usize,
    /// Predicted items in the setting.
    pub predicted: usize,
    /// Documents included in the macro average.
    pub documents: usize,
}

/// Scores for one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub setting: Setting,
    pub micro: MetricValues,
    #[serde(rename = "macro")]
    pub macro_avg: MetricValues,
    pub support: Support,
}

/// A full evaluation report: one block per setting, stable order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Which evaluation produced this: "md", "ed", or "el".
    pub task: String,
    pub settings: Vec<SettingReport>,
}

impl MetricsReport {
    pub fn setting(&self, s: Setting) -> Option<&SettingReport> {
        self.settings.iter().find(|r| r.setting == s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// A span with its linking outcome — the common shape of gold annotations
/// and system decisions once document text is out of the picture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub span: Span,
    pub label: EntityLabel,
}

impl From<&GoldAnnotation> for LabeledSpan {
    fn from(a: &GoldAnnotation) -> Self {
        LabeledSpan {
            span: a.span(),
            label: a.label.clone(),
        }
    }
}

/// Gold mention spans per document, for [`md_metrics`].
pub fn gold_spans(docs: &[Document]) -> BTreeMap<String, Vec<Span>> {
    docs.iter()
        .map(|d| {
            (
                d.doc_id.clone(),
                d.annotations.iter().map(|a| a.span()).collect(),
            )
        })
        .collect()
}

/// Gold labeled spans per document, for [`ed_metrics`] / [`el_metrics`].
pub fn gold_labeled(docs: &[Document]) -> BTreeMap<String, Vec<LabeledSpan>> {
    docs.iter()
        .map(|d| {
            (
                d.doc_id.clone(),
                d.annotations.iter().map(LabeledSpan::from).collect(),
            )
        })
        .collect()
}

fn check_same_docs<A, B>(
    gold: &BTreeMap<String, A>,
    pred: &BTreeMap<String, B>,
) -> Result<()> {
    if gold.len() != pred.len() || gold.keys().zip(pred.keys()).any(|(a, b)| a != b) {
        let missing = gold.keys().filter(|k| !pred.contains_key(*k)).count();
        let extra = pred.keys().filter(|k| !gold.contains_key(*k)).count();
        return Err(Error::MentionSetMismatch {
            missing_in_pred: missing,
            extra_in_pred: extra,
        });
    }
    Ok(())
}

/// Mention detection: strong span matching, micro and macro P/R/F1.
pub fn md_metrics(
    gold: &BTreeMap<String, Vec<Span>>,
    pred: &BTreeMap<String, Vec<Span>>,
) -> Result<MetricsReport> {
    check_same_docs(gold, pred)?;

    let mut correct = 0usize;
    let mut n_gold = 0usize;
    let mut n_pred = 0usize;
    let mut per_doc = Vec::new();
    for (doc_id, gold_spans) in gold {
        let pred_spans = &pred[doc_id];
        let gold_set: std::collections::BTreeSet<Span> = gold_spans.iter().copied().collect();
        let doc_correct = pred_spans.iter().filter(|s| gold_set.contains(s)).count();
        correct += doc_correct;
        n_gold += gold_spans.len();
        n_pred += pred_spans.len();
        if !gold_spans.is_empty() || !pred_spans.is_empty() {
            per_doc.push(PrF1::from_counts(
                doc_correct,
                pred_spans.len(),
                gold_spans.len(),
            ));
        }
    }

    Ok(MetricsReport {
        task: "md".into(),
        settings: vec![SettingReport {
            setting: Setting::Md,
            micro: MetricValues::PrF1(PrF1::from_counts(correct, n_pred, n_gold)),
            macro_avg: MetricValues::PrF1(mean_prf1(&per_doc)),
            support: Support {
                gold: n_gold,
                predicted: n_pred,
                documents: per_doc.len(),
            },
        }],
    })
}

fn mean_prf1(values: &[PrF1]) -> PrF1 {
    if values.is_empty() {
        return PrF1 {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let n = values.len() as f64;
    PrF1 {
        precision: values.iter().map(|v| v.precision).sum::<f64>() / n,
        recall: values.iter().map(|v| v.recall).sum::<f64>() / n,
        f1: values.iter().map(|v| v.f1).sum::<f64>() / n,
    }
}

/// Per-setting correct/predicted/gold counts for one document's aligned
/// mention list (ED case: spans already agree).
#[derive(Default, Clone, Copy)]
struct EdDocCounts {
    total: usize,
    correct: usize,
    // EE: predicted NIL / gold NIL.
    ee_pred: usize,
    ee_gold: usize,
    ee_correct: usize,
    // In-KB: predicted entity / gold entity.
    kb_pred: usize,
    kb_gold: usize,
    kb_correct: usize,
}

impl EdDocCounts {
    fn add(&mut self, gold: &EntityLabel, pred: &EntityLabel) {
        self.total += 1;
        let correct = gold == pred;
        self.correct += usize::from(correct);
        match pred {
            EntityLabel::Nil => {
                self.ee_pred += 1;
                self.ee_correct += usize::from(gold.is_nil());
            }
            EntityLabel::Id(_) => {
                self.kb_pred += 1;
                self.kb_correct += usize::from(correct);
            }
        }
        match gold {
            EntityLabel::Nil => self.ee_gold += 1,
            EntityLabel::Id(_) => self.kb_gold += 1,
        }
    }
}

/// Entity disambiguation: gold mention spans are given, so predictions must
/// cover exactly the gold mention set; outcomes are compared per mention.
///
/// Returns settings in the order All (accuracy), EE, In-KB.
pub fn ed_metrics(
    gold: &BTreeMap<String, Vec<LabeledSpan>>,
    pred: &BTreeMap<String, Vec<LabeledSpan>>,
) -> Result<MetricsReport> {
    check_same_docs(gold, pred)?;

    let mut docs = Vec::new();
    for (doc_id, gold_spans) in gold {
        let pred_spans = &pred[doc_id];
        let gold_by_span: BTreeMap<Span, &EntityLabel> =
            gold_spans.iter().map(|g| (g.span, &g.label)).collect();
        let pred_by_span: BTreeMap<Span, &EntityLabel> =
            pred_spans.iter().map(|p| (p.span, &p.label)).collect();
        if gold_by_span.len() != gold_spans.len()
            || pred_by_span.len() != pred_spans.len()
            || gold_by_span.keys().ne(pred_by_span.keys())
        {
            let missing = gold_by_span
                .keys()
                .filter(|s| !pred_by_span.contains_key(s))
                .count();
            let extra = pred_by_span
                .keys()
                .filter(|s| !gold_by_span.contains_key(s))
                .count();
            return Err(Error::MentionSetMismatch {
                missing_in_pred: missing.max(1),
                extra_in_pred: extra,
            });
        }
        let mut counts = EdDocCounts::default();
        for (span, gold_label) in &gold_by_span {
            counts.add(gold_label, pred_by_span[span]);
        }
        docs.push(counts);
    }

    let total: usize = docs.iter().map(|d| d.total).sum();
    let correct: usize = docs.iter().map(|d| d.correct).sum();
    let ee_correct: usize = docs.iter().map(|d| d.ee_correct).sum();
    let kb_correct: usize = docs.iter().map(|d| d.kb_correct).sum();
    // Every mention is gold-NIL or gold-entity, so overall correctness must
    // decompose into the EE-correct and In-KB-correct counts exactly.
    assert_eq!(
        correct,
        ee_correct + kb_correct,
        "accuracy decomposition identity violated"
    );

    let micro_acc = if total > 0 {
        correct as f64 / total as f64
    } else {
        0.0
    };
    let acc_docs: Vec<f64> = docs
        .iter()
        .filter(|d| d.total > 0)
        .map(|d| d.correct as f64 / d.total as f64)
        .collect();
    let macro_acc = if acc_docs.is_empty() {
        0.0
    } else {
        acc_docs.iter().sum::<f64>() / acc_docs.len() as f64
    };

    let all = SettingReport {
        setting: Setting::All,
        micro: MetricValues::Accuracy {
            accuracy: micro_acc,
        },
        macro_avg: MetricValues::Accuracy {
            accuracy: macro_acc,
        },
        support: Support {
            gold: total,
            predicted: total,
            documents: acc_docs.len(),
        },
    };

    let ee = prf1_setting(
        Setting::Ee,
        docs.iter()
            .map(|d| (d.ee_correct, d.ee_pred, d.ee_gold))
            .collect(),
    );
    let kb = prf1_setting(
        Setting::InKb,
        docs.iter()
            .map(|d| (d.kb_correct, d.kb_pred, d.kb_gold))
            .collect(),
    );

    Ok(MetricsReport {
        task: "ed".into(),
        settings: vec![all, ee, kb],
    })
}

/// Micro + macro P/R/F1 from per-document (correct, predicted, gold) counts.
fn prf1_setting(setting: Setting, docs: Vec<(usize, usize, usize)>) -> SettingReport {
    let correct: usize = docs.iter().map(|d| d.0).sum();
    let predicted: usize = docs.iter().map(|d| d.1).sum();
    let gold: usize = docs.iter().map(|d| d.2).sum();
    let included: Vec<PrF1> = docs
        .iter()
        .filter(|(_, p, g)| p + g > 0)
        .map(|&(c, p, g)| PrF1::from_counts(c, p, g))
        .collect();
    SettingReport {
        setting,
        micro: MetricValues::PrF1(PrF1::from_counts(correct, predicted, gold)),
        macro_avg: MetricValues::PrF1(mean_prf1(&included)),
        support: Support {
            gold,
            predicted,
            documents: included.len(),
        },
    }
}

/// End-to-end entity linking: predictions carry their own spans. A
/// prediction is correct iff its span strong-matches a gold span *and* its
/// outcome equals that gold span's. Documents present on only one side are
/// treated as empty on the other.
///
/// Returns settings in the order All, EE, In-KB (all P/R/F1).
pub fn el_metrics(
    gold: &BTreeMap<String, Vec<LabeledSpan>>,
    pred: &BTreeMap<String, Vec<LabeledSpan>>,
) -> Result<MetricsReport> {
    let mut doc_ids: Vec<&String> = gold.keys().chain(pred.keys()).collect();
    doc_ids.sort();
    doc_ids.dedup();

    let empty: Vec<LabeledSpan> = Vec::new();
    // Per document, per setting: (correct, predicted, gold).
    let mut all_docs = Vec::new();
    let mut ee_docs = Vec::new();
    let mut kb_docs = Vec::new();
    for doc_id in doc_ids {
        let gold_spans = gold.get(doc_id).unwrap_or(&empty);
        let pred_spans = pred.get(doc_id).unwrap_or(&empty);
        let gold_by_span: BTreeMap<Span, &EntityLabel> =
            gold_spans.iter().map(|g| (g.span, &g.label)).collect();

        let is_correct = |p: &LabeledSpan| gold_by_span.get(&p.span) == Some(&&p.label);

        let all_correct = pred_spans.iter().filter(|p| is_correct(p)).count();
        all_docs.push((all_correct, pred_spans.len(), gold_spans.len()));

        let ee_pred: Vec<&LabeledSpan> =
            pred_spans.iter().filter(|p| p.label.is_nil()).collect();
        let ee_correct = ee_pred.iter().filter(|p| is_correct(p)).count();
        let ee_gold = gold_spans.iter().filter(|g| g.label.is_nil()).count();
        ee_docs.push((ee_correct, ee_pred.len(), ee_gold));

        let kb_pred: Vec<&LabeledSpan> =
            pred_spans.iter().filter(|p| !p.label.is_nil()).collect();
        let kb_correct = kb_pred.iter().filter(|p| is_correct(p)).count();
        let kb_gold = gold_spans.iter().filter(|g| !g.label.is_nil()).count();
        kb_docs.push((kb_correct, kb_pred.len(), kb_gold));
    }

    Ok(MetricsReport {
        task: "el".into(),
        settings: vec![
            prf1_setting(Setting::All, all_docs),
            prf1_setting(Setting::Ee, ee_docs),
            prf1_setting(Setting::InKb, kb_docs),
        ],
    })
}

/// Wall-clock timing of repeated passes over a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Sentences per pass.
    pub sample_size: usize,
    /// Timed passes (an additional warm-up pass is excluded).
    pub repeats: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub per_repeat_seconds: Vec<f64>,
}

/// Time `pass` over `sample`: one untimed warm-up pass, then `repeats`
/// timed passes. Mean and sample standard deviation are over the passes.
///
/// Callers decide what a pass does — the convention in this crate is to time
/// disambiguation of already-detected mentions, excluding model loading and
/// entity-embedding precomputation.
pub fn benchmark<S, F>(mut pass: F, sample: &[S], repeats: usize) -> Result<TimingReport>
where
    F: FnMut(&S),
{
    if sample.is_empty() {
        return Err(Error::EmptyInput("benchmark sample".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidConfig("benchmark repeats must be ≥ 1".into()));
    }
    for item in sample {
        pass(item); // warm-up, untimed
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for item in sample {
            pass(item);
        }
        times.push(start.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / repeats as f64;
    let std = if repeats > 1 {
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(TimingReport {
        sample_size: sample.len(),
        repeats,
        mean_seconds: mean,
        std_seconds: std,
        per_repeat_seconds: times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(v: &[(usize, usize)]) -> Vec<Span> {
        v.iter().map(|&(s, e)| Span::new(s, e)).collect()
    }

    fn labeled(v: &[((usize, usize), Option<&str>)]) -> Vec<LabeledSpan> {
        v.iter()
            .map(|&((s, e), id)| LabeledSpan {
                span: Span::new(s, e),
                label: match id {
                    None => EntityLabel::Nil,
                    Some(id) => EntityLabel::Id(id.to_string()),
                },
            })
            .collect()
    }

    fn one_doc<T: Clone>(items: T) -> BTreeMap<String, T> {
        [("d1".to_string(), items)].into_iter().collect()
    }

    #[test]
    fn md_perfect_predictions() {
        let gold = one_doc(spans(&[(0, 3), (10, 20)]));
        let report = md_metrics(&gold, &gold.clone()).unwrap();
        let s = report.setting(Setting::Md).unwrap();
        assert_eq!(s.micro.as_prf1().unwrap().f1, 1.0);
        assert_eq!(s.macro_avg.as_prf1().unwrap().f1, 1.0);
        assert_eq!(s.support.gold, 2);
    }

    #[test]
    fn md_boundary_off_by_one_is_wrong() {
        let gold = one_doc(spans(&[(10, 20)]));
        let pred = one_doc(spans(&[(10, 21)]));
        let report = md_metrics(&gold, &pred).unwrap();
        let m = report.setting(Setting::Md).unwrap().micro.as_prf1().unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn md_partial_recall() {
        let gold = one_doc(spans(&[(0, 3), (10, 20)]));
        let pred = one_doc(spans(&[(0, 3)]));
        let report = md_metrics(&gold, &pred).unwrap();
        let m = report.setting(Setting::Md).unwrap().micro.as_prf1().unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn md_doc_set_mismatch_is_an_error() {
        let gold = one_doc(spans(&[(0, 3)]));
        let pred: BTreeMap<String, Vec<Span>> =
            [("other".to_string(), spans(&[(0, 3)]))].into_iter().collect();
        assert!(matches!(
            md_metrics(&gold, &pred),
            Err(Error::MentionSetMismatch { .. })
        ));
    }

    #[test]
    fn ed_hand_worked_example() {
        // gold (e1, e2, NIL, NIL) vs pred (e1, NIL, NIL, e3).
        let gold = one_doc(labeled(&[
            ((0, 1), Some("e1")),
            ((2, 3), Some("e2")),
            ((4, 5), None),
            ((6, 7), None),
        ]));
        let pred = one_doc(labeled(&[
            ((0, 1), Some("e1")),
            ((2, 3), None),
            ((4, 5), None),
            ((6, 7), Some("e3")),
        ]));
        let report = ed_metrics(&gold, &pred).unwrap();

        let all = report.setting(Setting::All).unwrap();
        assert_eq!(all.micro.as_accuracy().unwrap(), 0.5);

        let ee = report.setting(Setting::Ee).unwrap().micro.as_prf1().unwrap();
        assert_eq!((ee.precision, ee.recall), (0.5, 0.5));

        let kb = report
            .setting(Setting::InKb)
            .unwrap()
            .micro
            .as_prf1()
            .unwrap();
        assert_eq!((kb.precision, kb.recall), (0.5, 0.5));
    }

    #[test]
    fn ed_all_nil_world() {
        let gold = one_doc(labeled(&[((0, 1), None), ((2, 3), None)]));
        let report = ed_metrics(&gold, &gold.clone()).unwrap();
        let ee = report.setting(Setting::Ee).unwrap().micro.as_prf1().unwrap();
        assert_eq!((ee.precision, ee.recall, ee.f1), (1.0, 1.0, 1.0));
        // No In-KB predictions and no In-KB gold: reported as 0 with
        // support 0, not NaN.
        let kb = report.setting(Setting::InKb).unwrap();
        assert_eq!(kb.micro.as_prf1().unwrap().precision, 0.0);
        assert_eq!(kb.support.predicted, 0);
        assert_eq!(kb.support.gold, 0);
        assert_eq!(kb.support.documents, 0);
    }

    #[test]
    fn ed_mention_set_mismatch_is_an_error() {
        let gold = one_doc(labeled(&[((0, 1), Some("e1"))]));
        let pred = one_doc(labeled(&[((0, 2), Some("e1"))]));
        assert!(matches!(
            ed_metrics(&gold, &pred),
            Err(Error::MentionSetMismatch { .. })
        ));
    }

    #[test]
    fn ed_macro_is_per_document() {
        // d1 fully correct (acc 1), d2 half correct (acc 0.5):
        // micro 3/4, macro 0.75 — equal here; distinguish with uneven sizes.
        let mut gold = BTreeMap::new();
        let mut pred = BTreeMap::new();
        gold.insert("d1".into(), labeled(&[((0, 1), Some("e1"))]));
        pred.insert("d1".into(), labeled(&[((0, 1), Some("e1"))]));
        gold.insert(
            "d2".into(),
            labeled(&[((0, 1), Some("e1")), ((2, 3), Some("e2")), ((4, 5), None)]),
        );
        pred.insert(
            "d2".into(),
            labeled(&[((0, 1), Some("e1")), ((2, 3), None), ((4, 5), Some("e9"))]),
        );
        let report = ed_metrics(&gold, &pred).unwrap();
        let all = report.setting(Setting::All).unwrap();
        assert!((all.micro.as_accuracy().unwrap() - 0.5).abs() < 1e-12);
        // macro = (1 + 1/3) / 2 = 2/3.
        assert!((all.macro_avg.as_accuracy().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn el_hand_worked_three_docs() {
        // d1: boundary error; d2: right span, wrong entity; d3: correct NIL.
        let mut gold = BTreeMap::new();
        let mut pred = BTreeMap::new();
        gold.insert("d1".into(), labeled(&[((0, 3), Some("e1"))]));
        pred.insert("d1".into(), labeled(&[((0, 4), Some("e1"))]));
        gold.insert("d2".into(), labeled(&[((5, 9), Some("e2"))]));
        pred.insert("d2".into(), labeled(&[((5, 9), Some("e7"))]));
        gold.insert("d3".into(), labeled(&[((1, 2), None)]));
        pred.insert("d3".into(), labeled(&[((1, 2), None)]));
        let report = el_metrics(&gold, &pred).unwrap();

        // All: 1 of 3 predictions correct, 1 of 3 gold recovered.
        let all = report.setting(Setting::All).unwrap().micro.as_prf1().unwrap();
        assert!((all.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((all.recall - 1.0 / 3.0).abs() < 1e-12);

        // In-KB: 2 entity predictions, 0 correct; 2 entity golds.
        let kb = report
            .setting(Setting::InKb)
            .unwrap()
            .micro
            .as_prf1()
            .unwrap();
        assert_eq!((kb.precision, kb.recall), (0.0, 0.0));

        // EE: 1 NIL prediction, correct; 1 NIL gold.
        let ee = report.setting(Setting::Ee).unwrap().micro.as_prf1().unwrap();
        assert_eq!((ee.precision, ee.recall, ee.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn el_nil_on_spurious_span_is_an_ee_false_positive() {
        let gold = one_doc(labeled(&[((0, 3), Some("e1"))]));
        let pred = one_doc(labeled(&[((0, 3), Some("e1")), ((7, 9), None)]));
        let report = el_metrics(&gold, &pred).unwrap();
        let ee = report.setting(Setting::Ee).unwrap();
        assert_eq!(ee.support.predicted, 1);
        assert_eq!(ee.micro.as_prf1().unwrap().precision, 0.0);
        // The spurious NIL also dents All precision.
        let all = report.setting(Setting::All).unwrap().micro.as_prf1().unwrap();
        assert_eq!(all.precision, 0.5);
        assert_eq!(all.recall, 1.0);
    }

    #[test]
    fn el_pipeline_equal_to_gold_is_perfect() {
        let gold = one_doc(labeled(&[((0, 3), Some("e1")), ((5, 8), None)]));
        let report = el_metrics(&gold, &gold.clone()).unwrap();
        for setting in [Setting::All, Setting::Ee, Setting::InKb] {
            let s = report.setting(setting).unwrap().micro.as_prf1().unwrap();
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn report_serialization_is_stable() {
        let gold = one_doc(labeled(&[((0, 1), Some("e1"))]));
        let report = ed_metrics(&gold, &gold.clone()).unwrap();
        let a = serde_json::to_string_pretty(&report).unwrap();
        let b = serde_json::to_string_pretty(&report).unwrap();
        assert_eq!(a, b);
        let back: MetricsReport = serde_json::from_str(&a).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn benchmark_reports_positive_times() {
        let sample: Vec<String> = vec!["a sentence".into()];
        let report = benchmark(
            |s: &String| {
                std::hint::black_box(s.len());
            },
            &sample,
            3,
        )
        .unwrap();
        assert_eq!(report.repeats, 3);
        assert_eq!(report.per_repeat_seconds.len(), 3);
        assert!(report.mean_seconds >= 0.0);
        assert!(report.std_seconds >= 0.0);
        assert!(report.mean_seconds.is_finite());
    }

    #[test]
    fn benchmark_rejects_empty_sample() {
        let sample: Vec<String> = vec![];
        assert!(benchmark(|_: &String| {}, &sample, 3).is_err());
    }
}
