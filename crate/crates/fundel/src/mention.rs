//! Domain adaptation and mention detection.
//!
//! Two training stages live here. `pretrain_tapt` continues masked-language
//!-model training of a base encoder on funding-acknowledgment sentences —
//! task-adaptive pretraining, cheap enough to run on a small in-domain
//! corpus. `finetune_md` then turns the adapted encoder into an IOB tagger:
//! a linear head over {B, I, O} per token, trained on annotated documents
//! and checkpoint-selected by validation strong-match F1 (the metric the
//! tagger is ultimately judged on, unlike token accuracy).
//!
//! Documents longer than the encoder's position budget are split into
//! non-overlapping token windows. Gold spans crossing a window boundary
//! cannot be represented in any single window, so they are dropped from
//! training (counted and warned about); at inference the tag sequences of
//! all windows are decoded jointly and a mention straddling a boundary is
//! flagged, since the encoder never attended across it.
//!
//! Everything is deterministic for a fixed seed: masking decisions, random
//! token replacements, shuffles and parameter init all flow from derived
//! [`SeededRng`] streams.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer as _};
use serde::{Deserialize, Serialize};

use crate::corpus::{decode_iob, Document, IobTag};
use crate::encoder::{EncoderCheckpoint, Provenance, TransformerEncoder};
use crate::error::{Error, Result};
use crate::eval::{self, Setting};
use crate::nn::{cross_entropy_sum, scalar_f64, Linear, ParamStore, SeededRng};
use crate::tokenizer::{SubwordTokenizer as _, Vocab, WordPieceTokenizer};

/// Masked-language-model pretraining hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaptConfig {
    /// Optimizer steps; each consumes `batch_size` sentences.
    pub steps: usize,
    /// Logical batch size, realized through gradient accumulation.
    pub batch_size: usize,
    /// Sentences per physical forward/backward pass.
    pub micro_batch: usize,
    /// Fraction of a sentence's tokens selected for prediction (at least one
    /// per sentence).
    pub mask_fraction: f64,
    pub lr: f64,
    /// Sentences are truncated to this many content tokens.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for TaptConfig {
    fn default() -> Self {
        TaptConfig {
            steps: 1000,
            batch_size: 2048,
            micro_batch: 8,
            mask_fraction: 0.15,
            lr: 1e-4,
            max_len: 128,
            seed: 13,
        }
    }
}

impl TaptConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("tapt.steps must be ≥ 1".into()));
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return Err(Error::InvalidConfig(
                "tapt.batch_size and tapt.micro_batch must be ≥ 1".into(),
            ));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tapt.mask_fraction must lie in (0, 1), got {}",
                self.mask_fraction
            )));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("tapt.lr must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("tapt.max_len must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Result of pretraining: the adapted checkpoint and the loss curve.
pub struct TaptOutcome {
    pub checkpoint: EncoderCheckpoint,
    /// Mean masked cross-entropy per optimizer step.
    pub step_losses: Vec<f64>,
}

const MLM_HEAD: &str = "mlm_head.proj";

/// Encoder plus masked-token prediction head.
struct MlmModel {
    encoder: TransformerEncoder,
    head_store: ParamStore,
    head: Linear,
    vocab: Vocab,
}

impl MlmModel {
    /// Instantiate from a checkpoint. A stored head rides along in the
    /// checkpoint's weight file and is loaded when present (so adaptation
    /// can resume); otherwise the head is freshly initialized from the
    /// checkpoint's own seed, keeping perplexity measurements reproducible
    /// for a given checkpoint.
    fn from_checkpoint(ckpt: &EncoderCheckpoint) -> Result<Self> {
        let encoder = ckpt.encoder()?;
        let mut head_store = ParamStore::new(Device::Cpu);
        let mut rng = SeededRng::new(SeededRng::derive(ckpt.provenance.seed, "mlm-head"));
        let head = Linear::new(
            &mut head_store,
            MLM_HEAD,
            ckpt.config.hidden_size,
            ckpt.config.vocab_size,
            ckpt.config.initializer_range as f32,
            &mut rng,
        )?;
        if ckpt.weights.contains_key(&format!("{MLM_HEAD}.weight")) {
            head_store.set_from_map(&ckpt.weights, Path::new("<checkpoint>"))?;
        }
        Ok(MlmModel {
            encoder,
            head_store,
            head,
            vocab: ckpt.vocab.clone(),
        })
    }

    fn logits(&self, ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let hidden = self.encoder.forward(ids, mask)?;
        self.head.forward(&hidden)
    }

    fn trainable_vars(&self) -> Vec<candle_core::Var> {
        let mut vars = self.encoder.trainable_vars();
        vars.extend(self.head_store.all_vars());
        vars
    }
}

/// One sentence prepared for masked-token prediction: corrupted input ids
/// (with `[CLS]`/`[SEP]`) and the positions whose original token must be
/// recovered.
struct MaskedSentence {
    ids: Vec<u32>,
    targets: Vec<(usize, u32)>,
}

/// BERT-style corruption: select `round(fraction · n)` positions (at least
/// one), then per position replace with `[MASK]` (80%), a random
/// non-special token (10%), or leave unchanged (10%). The original id is
/// always the prediction target.
fn corrupt(
    content: &[u32],
    vocab: &Vocab,
    mask_fraction: f64,
    rng: &mut SeededRng,
) -> MaskedSentence {
    let n = content.len();
    let k = ((mask_fraction * n as f64).round() as usize).clamp(1, n);
    let mut positions: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut positions);
    positions.truncate(k);
    positions.sort_unstable();

    let mut ids = Vec::with_capacity(n + 2);
    ids.push(vocab.cls_id());
    ids.extend_from_slice(content);
    ids.push(vocab.sep_id());

    let replacements = vocab.non_special_range();
    let n_replacements = (replacements.end - replacements.start) as usize;
    let mut targets = Vec::with_capacity(k);
    for p in positions {
        let input_pos = p + 1; // shift past [CLS]
        let original = ids[input_pos];
        let roll = rng.unit_f64();
        if roll < 0.8 {
            ids[input_pos] = vocab.mask_id();
        } else if roll < 0.9 && n_replacements > 0 {
            ids[input_pos] = replacements.start + rng.below(n_replacements) as u32;
        }
        targets.push((input_pos, original));
    }
    MaskedSentence { ids, targets }
}

/// Pad a micro-batch, forward it, and return the summed cross-entropy over
/// the masked positions (still on the graph) with the position count.
/// `None` when the batch contains no targets.
fn masked_ce_sum(model: &MlmModel, batch: &[&MaskedSentence]) -> Result<Option<(Tensor, usize)>> {
    let device = model.encoder.device().clone();
    let b = batch.len();
    let t = batch.iter().map(|s| s.ids.len()).max().unwrap_or(0);
    let mut ids = vec![0u32; b * t];
    let mut mask = vec![0f32; b * t];
    let mut positions: Vec<u32> = Vec::new();
    let mut targets: Vec<u32> = Vec::new();
    for (row, sent) in batch.iter().enumerate() {
        for (col, &id) in sent.ids.iter().enumerate() {
            ids[row * t + col] = id;
            mask[row * t + col] = 1.0;
        }
        for &(pos, original) in &sent.targets {
            positions.push((row * t + pos) as u32);
            targets.push(original);
        }
    }
    if positions.is_empty() {
        return Ok(None);
    }
    let n = targets.len();
    let ids = Tensor::from_vec(ids, (b, t), &device)?;
    let mask = Tensor::from_vec(mask, (b, t), &device)?;
    let logits = model.logits(&ids, &mask)?;
    let vocab_size = logits.dim(2)?;
    let flat = logits.reshape((b * t, vocab_size))?;
    let picked = flat.index_select(&Tensor::from_vec(positions, (n,), &device)?, 0)?;
    let target_t = Tensor::from_vec(targets, (n,), &device)?;
    let (sum, count) = cross_entropy_sum(&picked, &target_t)?;
    Ok(Some((sum, count)))
}

/// Endless deterministic pass over `0..n`, reshuffled per pass.
struct CycleSampler {
    order: Vec<usize>,
    cursor: usize,
    pass: usize,
    seed: u64,
}

impl CycleSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut sampler = CycleSampler {
            order: (0..n).collect(),
            cursor: 0,
            pass: 0,
            seed,
        };
        sampler.reshuffle();
        sampler
    }

    fn reshuffle(&mut self) {
        let tag = format!("tapt-order/{}", self.pass);
        SeededRng::new(SeededRng::derive(self.seed, &tag)).shuffle(&mut self.order);
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.pass += 1;
            self.cursor = 0;
            self.reshuffle();
        }
        let i = self.order[self.cursor];
        self.cursor += 1;
        i
    }
}

fn tokenize_sentences(
    sentences: &[String],
    vocab: &Vocab,
    max_len: usize,
    what: &str,
) -> Result<Vec<Vec<u32>>> {
    let tokenizer = WordPieceTokenizer::new(vocab.clone());
    let tokenized: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| {
            tokenizer
                .tokenize(s)
                .iter()
                .take(max_len)
                .map(|t| t.id)
                .collect::<Vec<u32>>()
        })
        .filter(|ids| !ids.is_empty())
        .collect();
    if tokenized.is_empty() {
        return Err(Error::EmptyInput(what.into()));
    }
    Ok(tokenized)
}

/// Continue masked-language-model training of `base` on in-domain sentences.
///
/// The logical batch is assembled sentence by sentence from a reshuffled
/// cycle over the corpus, corrupted up front, and processed in micro-batches
/// whose gradients accumulate into a single optimizer step — so the
/// effective batch size is `batch_size` regardless of `micro_batch`. Each
/// micro-batch's summed loss is scaled by the whole step's masked-position
/// count, making the accumulated gradient exactly the gradient of the step's
/// mean masked cross-entropy.
pub fn pretrain_tapt(
    sentences: &[String],
    base: &EncoderCheckpoint,
    config: &TaptConfig,
) -> Result<TaptOutcome> {
    config.validate()?;
    let budget = config
        .max_len
        .min(base.config.max_position_embeddings - 2);
    let tokenized = tokenize_sentences(sentences, &base.vocab, budget, "tapt sentence corpus")?;

    let model = MlmModel::from_checkpoint(base)?;
    let mut opt = AdamW::new_lr(model.trainable_vars(), config.lr)?;
    let mut mask_rng = SeededRng::new(SeededRng::derive(config.seed, "tapt-mask"));
    let mut sampler = CycleSampler::new(tokenized.len(), config.seed);

    let mut step_losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch: Vec<MaskedSentence> = (0..config.batch_size)
            .map(|_| {
                corrupt(
                    &tokenized[sampler.next_index()],
                    &model.vocab,
                    config.mask_fraction,
                    &mut mask_rng,
                )
            })
            .collect();
        let total_masked: usize = batch.iter().map(|s| s.targets.len()).sum();

        let mut grads: Option<GradStore> = None;
        let mut step_loss = 0.0;
        for chunk in batch.chunks(config.micro_batch) {
            let refs: Vec<&MaskedSentence> = chunk.iter().collect();
            let Some((ce_sum, _)) = masked_ce_sum(&model, &refs)? else {
                continue;
            };
            let scaled = (ce_sum * (1.0 / total_masked as f64))?;
            step_loss += scalar_f64(&scaled)?;
            let g = scaled.backward()?;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => acc.extend(g)?,
            }
        }
        if let Some(g) = grads {
            opt.step(&g)?;
        }
        log::debug!("tapt step {step}: masked cross-entropy {step_loss:.4}");
        step_losses.push(step_loss);
    }

    let mut weights = model.encoder.weights()?;
    weights.extend(model.head_store.to_map()?);
    Ok(TaptOutcome {
        checkpoint: EncoderCheckpoint {
            config: base.config.clone(),
            vocab: base.vocab.clone(),
            provenance: Provenance {
                base: base.provenance.base.clone(),
                tapt_steps: base.provenance.tapt_steps + config.steps,
                seed: config.seed,
            },
            weights,
        },
        step_losses,
    })
}

/// Masked-token perplexity of a checkpoint on held-out sentences.
///
/// The corruption pattern depends only on the sentences, the fraction, and
/// `seed` — never on the model — so two checkpoints sharing a vocabulary
/// are measured on identical prediction problems and their perplexities
/// compare apples to apples.
pub fn masked_perplexity(
    ckpt: &EncoderCheckpoint,
    sentences: &[String],
    mask_fraction: f64,
    seed: u64,
) -> Result<f64> {
    if !(mask_fraction > 0.0 && mask_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "mask_fraction must lie in (0, 1), got {mask_fraction}"
        )));
    }
    let budget = ckpt.config.max_position_embeddings - 2;
    let tokenized = tokenize_sentences(sentences, &ckpt.vocab, budget, "perplexity sentences")?;
    let model = MlmModel::from_checkpoint(ckpt)?;
    let mut rng = SeededRng::new(SeededRng::derive(seed, "mlm-eval-mask"));
    let masked: Vec<MaskedSentence> = tokenized
        .iter()
        .map(|ids| corrupt(ids, &model.vocab, mask_fraction, &mut rng))
        .collect();

    let mut total_ce = 0.0;
    let mut count = 0usize;
    for chunk in masked.chunks(8) {
        let refs: Vec<&MaskedSentence> = chunk.iter().collect();
        if let Some((sum, n)) = masked_ce_sum(&model, &refs)? {
            total_ce += scalar_f64(&sum)?;
            count += n;
        }
    }
    Ok((total_ce / count as f64).exp())
}

/// IOB fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MdConfig {
    fn default() -> Self {
        MdConfig {
            epochs: 3,
            batch_size: 8,
            lr: 5e-5,
            seed: 13,
        }
    }
}

impl MdConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "md.epochs and md.batch_size must be ≥ 1".into(),
            ));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("md.lr must be positive".into()));
        }
        Ok(())
    }
}

/// A detected mention: character span plus the exact text slice it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl MentionSpan {
    pub fn span(&self) -> crate::corpus::Span {
        crate::corpus::Span::new(self.start, self.end)
    }
}

/// One token's IOB decision with the class distribution behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedToken {
    pub start: usize,
    pub end: usize,
    pub tag: IobTag,
    /// Probabilities in tag order `[B, I, O]`; they sum to 1.
    pub probs: [f32; 3],
}

const MD_HEAD: &str = "md_head.proj";

fn class_to_tag(class: usize) -> IobTag {
    match class {
        0 => IobTag::B,
        1 => IobTag::I,
        _ => IobTag::O,
    }
}

/// A trained IOB mention detector: encoder plus a {B, I, O} tag head.
///
/// Immutable after training; safe for concurrent inference calls.
pub struct MdModel {
    encoder: TransformerEncoder,
    head_store: ParamStore,
    head: Linear,
    vocab: Vocab,
    tokenizer: WordPieceTokenizer,
    provenance: Provenance,
}

impl MdModel {
    fn from_parts(ckpt: &EncoderCheckpoint, load_head: bool, origin: &Path) -> Result<Self> {
        let encoder = ckpt.encoder()?;
        let mut head_store = ParamStore::new(Device::Cpu);
        let mut rng = SeededRng::new(SeededRng::derive(ckpt.provenance.seed, "md-head"));
        let head = Linear::new(
            &mut head_store,
            MD_HEAD,
            ckpt.config.hidden_size,
            3,
            ckpt.config.initializer_range as f32,
            &mut rng,
        )?;
        if load_head {
            head_store.set_from_map(&ckpt.weights, origin)?;
        }
        Ok(MdModel {
            encoder,
            head_store,
            head,
            vocab: ckpt.vocab.clone(),
            tokenizer: WordPieceTokenizer::new(ckpt.vocab.clone()),
            provenance: ckpt.provenance.clone(),
        })
    }

    /// Load a saved detector. Fails with a checkpoint error naming the
    /// missing tensor when the directory holds a bare encoder without the
    /// tag head.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ckpt = EncoderCheckpoint::load(dir)?;
        Self::from_parts(&ckpt, true, dir)
    }

    /// Save as a checkpoint directory (encoder weights plus the tag head in
    /// one weights file).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut weights = self.encoder.weights()?;
        weights.extend(self.head_store.to_map()?);
        EncoderCheckpoint {
            config: self.encoder.config().clone(),
            vocab: self.vocab.clone(),
            provenance: self.provenance.clone(),
            weights,
        }
        .save(dir)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Content tokens per window: the position budget minus `[CLS]`/`[SEP]`.
    fn window(&self) -> usize {
        self.encoder.config().max_position_embeddings - 2
    }

    /// Tag every token of `text`, window by window.
    pub fn tag_tokens(&self, text: &str) -> Result<Vec<TaggedToken>> {
        let tokens = self.tokenizer.tokenize(text);
        let mut out = Vec::with_capacity(tokens.len());
        let device = self.encoder.device().clone();
        for chunk in tokens.chunks(self.window()) {
            let mut ids = Vec::with_capacity(chunk.len() + 2);
            ids.push(self.vocab.cls_id());
            ids.extend(chunk.iter().map(|t| t.id));
            ids.push(self.vocab.sep_id());
            let len = ids.len();
            let ids = Tensor::from_vec(ids, (1, len), &device)?;
            let mask = Tensor::ones((1, len), DType::F32, &device)?;
            let hidden = self.encoder.forward(&ids, &mask)?;
            let logits = self.head.forward(&hidden)?;
            let probs = candle_nn::ops::softmax(&logits, 2)?.to_vec3::<f32>()?;
            for (i, token) in chunk.iter().enumerate() {
                let p = &probs[0][i + 1];
                let probs = [p[0], p[1], p[2]];
                let mut best = 0usize;
                for class in 1..3 {
                    if probs[class] > probs[best] {
                        best = class;
                    }
                }
                out.push(TaggedToken {
                    start: token.start,
                    end: token.end,
                    tag: class_to_tag(best),
                    probs,
                });
            }
        }
        Ok(out)
    }

    /// Detect mention spans in raw text.
    ///
    /// The IOB sequences of all windows are decoded jointly (an orphan `I`
    /// starts a new span), yielding sorted, non-overlapping spans mapped
    /// back to character offsets. A mention continuing across a window
    /// boundary is decoded as one span but flagged with a warning, because
    /// the encoder never attended across the boundary.
    pub fn detect_mentions(&self, text: &str) -> Result<Vec<MentionSpan>> {
        let tagged = self.tag_tokens(text)?;
        let window = self.window();
        for boundary in (window..tagged.len()).step_by(window) {
            if tagged[boundary].tag == IobTag::I && tagged[boundary - 1].tag != IobTag::O {
                log::warn!(
                    "mention crossing a tagging window boundary near character {}; \
                     boundary tokens were tagged without shared context",
                    tagged[boundary].start
                );
            }
        }
        let labels: Vec<IobTag> = tagged.iter().map(|t| t.tag).collect();
        let alignment: Vec<(usize, usize)> = tagged.iter().map(|t| (t.start, t.end)).collect();
        let chars: Vec<char> = text.chars().collect();
        Ok(decode_iob(&labels, &alignment)
            .into_iter()
            .map(|span| MentionSpan {
                start: span.start,
                end: span.end,
                surface: chars[span.start..span.end].iter().collect(),
            })
            .collect())
    }

    fn trainable_vars(&self) -> Vec<candle_core::Var> {
        let mut vars = self.encoder.trainable_vars();
        vars.extend(self.head_store.all_vars());
        vars
    }
}

/// One training window: input ids (with `[CLS]`/`[SEP]`) and a class per
/// content token (0 = B, 1 = I, 2 = O).
struct MdExample {
    ids: Vec<u32>,
    classes: Vec<u32>,
}

/// Cut a document into training windows. Returns the windows and the number
/// of gold spans dropped because they cross a window boundary.
fn doc_examples(
    doc: &Document,
    tokenizer: &WordPieceTokenizer,
    vocab: &Vocab,
    window: usize,
) -> (Vec<MdExample>, usize) {
    let tokens = tokenizer.tokenize(&doc.text);
    if tokens.is_empty() {
        return (Vec::new(), 0);
    }
    let mut classes = vec![2u32; tokens.len()];
    let mut dropped = 0usize;
    for ann in &doc.annotations {
        let lo = tokens.partition_point(|t| t.start < ann.start);
        let hi = tokens.partition_point(|t| t.start < ann.end);
        if lo == hi {
            log::warn!(
                "document {:?}: no token starts inside span {}..{}; span unused in training",
                doc.doc_id,
                ann.start,
                ann.end
            );
            continue;
        }
        if lo / window != (hi - 1) / window {
            dropped += 1;
            continue; // tokens stay O
        }
        classes[lo] = 0;
        for class in &mut classes[lo + 1..hi] {
            *class = 1;
        }
    }

    let examples = tokens
        .chunks(window)
        .enumerate()
        .map(|(w, chunk)| {
            let mut ids = Vec::with_capacity(chunk.len() + 2);
            ids.push(vocab.cls_id());
            ids.extend(chunk.iter().map(|t| t.id));
            ids.push(vocab.sep_id());
            MdExample {
                ids,
                classes: classes[w * window..w * window + chunk.len()].to_vec(),
            }
        })
        .collect();
    (examples, dropped)
}

/// Mean tag cross-entropy of a batch, on the graph. Loss is taken only at
/// content positions — `[CLS]`, `[SEP]` and padding carry no tag.
fn md_batch_ce(model: &MdModel, batch: &[&MdExample]) -> Result<Tensor> {
    let device = model.encoder.device().clone();
    let b = batch.len();
    let t = batch.iter().map(|e| e.ids.len()).max().unwrap_or(0);
    let mut ids = vec![0u32; b * t];
    let mut mask = vec![0f32; b * t];
    let mut positions: Vec<u32> = Vec::new();
    let mut targets: Vec<u32> = Vec::new();
    for (row, example) in batch.iter().enumerate() {
        for (col, &id) in example.ids.iter().enumerate() {
            ids[row * t + col] = id;
            mask[row * t + col] = 1.0;
        }
        for (i, &class) in example.classes.iter().enumerate() {
            positions.push((row * t + i + 1) as u32);
            targets.push(class);
        }
    }
    let n = targets.len();
    let ids = Tensor::from_vec(ids, (b, t), &device)?;
    let mask = Tensor::from_vec(mask, (b, t), &device)?;
    let hidden = model.encoder.forward(&ids, &mask)?;
    let logits = model.head.forward(&hidden)?;
    let flat = logits.reshape((b * t, 3))?;
    let picked = flat.index_select(&Tensor::from_vec(positions, (n,), &device)?, 0)?;
    let target_t = Tensor::from_vec(targets, (n,), &device)?;
    let (sum, count) = cross_entropy_sum(&picked, &target_t)?;
    Ok((sum * (1.0 / count as f64))?)
}

/// Result of fine-tuning: the selected model plus per-epoch diagnostics.
pub struct MdOutcome {
    pub model: MdModel,
    /// Validation strong-match micro F1 after each epoch (empty when no
    /// validation documents were given).
    pub epoch_val_f1: Vec<f64>,
    /// Epoch whose weights were kept (highest validation F1, earliest on
    /// ties); `None` when no validation was run and the last epoch stands.
    pub best_epoch: Option<usize>,
    /// Gold spans dropped from training for crossing window boundaries.
    pub dropped_spans: usize,
}

/// Validation strong-match micro F1 of the current model state.
fn validation_f1(model: &MdModel, val: &[Document]) -> Result<f64> {
    let gold = eval::gold_spans(val);
    let mut pred: BTreeMap<String, Vec<crate::corpus::Span>> = BTreeMap::new();
    for doc in val {
        let spans = model
            .detect_mentions(&doc.text)?
            .into_iter()
            .map(|m| m.span())
            .collect();
        pred.insert(doc.doc_id.clone(), spans);
    }
    let report = eval::md_metrics(&gold, &pred)?;
    Ok(report
        .setting(Setting::Md)
        .expect("md report always has the MD setting")
        .micro
        .as_prf1()
        .expect("MD micro metrics are P/R/F1")
        .f1)
}

/// Fine-tune an encoder checkpoint as an IOB tagger.
///
/// Trains for `epochs` epochs and returns the epoch checkpoint with the
/// highest validation strong-match F1 (earliest epoch on ties). With an
/// empty validation set the final epoch is returned as-is.
pub fn finetune_md(
    base: &EncoderCheckpoint,
    train: &[Document],
    val: &[Document],
    config: &MdConfig,
) -> Result<MdOutcome> {
    config.validate()?;

    let mut model = MdModel::from_parts(base, false, Path::new("<fresh>"))?;
    let window = model.window();
    let mut examples: Vec<MdExample> = Vec::new();
    let mut dropped = 0usize;
    for doc in train {
        let (mut windows, d) = doc_examples(doc, &model.tokenizer, &model.vocab, window);
        if windows.is_empty() {
            log::warn!("document {:?} has no tokens; skipped", doc.doc_id);
            continue;
        }
        dropped += d;
        examples.append(&mut windows);
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("mention-detector training documents".into()));
    }
    if dropped > 0 {
        log::warn!("{dropped} gold spans cross window boundaries; dropped from training");
    }

    let mut opt = AdamW::new_lr(model.trainable_vars(), config.lr)?;
    let mut epoch_val_f1 = Vec::new();
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>)> = None;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let tag = format!("md-epoch/{epoch}");
        SeededRng::new(SeededRng::derive(config.seed, &tag)).shuffle(&mut order);
        for batch_indices in order.chunks(config.batch_size) {
            let batch: Vec<&MdExample> = batch_indices.iter().map(|&i| &examples[i]).collect();
            let loss = md_batch_ce(&model, &batch)?;
            let grads = loss.backward()?;
            opt.step(&grads)?;
        }
        if !val.is_empty() {
            let f1 = validation_f1(&model, val)?;
            log::info!("md epoch {epoch}: validation strong-match F1 {f1:.4}");
            epoch_val_f1.push(f1);
            let improved = best.as_ref().is_none_or(|(best_f1, ..)| f1 > *best_f1);
            if improved {
                best = Some((f1, epoch, model.encoder.weights()?, model.head_store.to_map()?));
            }
        }
    }

    let mut best_epoch = None;
    if let Some((_, epoch, encoder_weights, head_weights)) = best {
        best_epoch = Some(epoch);
        model
            .encoder
            .set_weights(&encoder_weights, Path::new("<best-epoch>"))?;
        model
            .head_store
            .set_from_map(&head_weights, Path::new("<best-epoch>"))?;
    }
    Ok(MdOutcome {
        model,
        epoch_val_f1,
        best_epoch,
        dropped_spans: dropped,
    })
}
