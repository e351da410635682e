//! Dual-encoder candidate scoring with round-based hard-negative mining.
//!
//! A mention encoder and an entity encoder (both warm-started from the same
//! adapted checkpoint) each produce a `[CLS]` vector; a mention–entity pair
//! is scored by a two-logit head over the element-wise product,
//! `z = Wᵀ(x_m ⊙ x_e)` with `W ∈ R^{hidden×2}`, and the positive-class
//! softmax probability feeds a binary cross-entropy loss.
//!
//! Because the head is linear in `x_e` once the mention is fixed —
//! `z₁ − z₀ = ⟨x_e, x_m ⊙ (w₁ − w₀)⟩` — entity vectors can be precomputed
//! once per model version and ranking the whole registry reduces to one
//! matrix–vector product. [`EntityEmbeddings`] holds that cache, keyed by a
//! hash of the model weights so a stale cache is detectable.
//!
//! Training runs in rounds. Round 1 pairs every mention with uniform-random
//! negatives; each later round mines *hard* negatives — entities the current
//! model ranks strictly above the gold answer (or the top-K overall for NIL
//! mentions) — and tops them up with fresh random negatives, the same number
//! for every mention: the floor of the corpus-mean hard-negative count. The
//! model is not reinitialized between rounds; only the pair set changes.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer as _};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::corpus::{Document, EntityLabel, Span};
use crate::encoder::{
    prefix_weights, read_json, write_json, EncoderCheckpoint, EncoderConfig, TransformerEncoder,
};
use crate::error::{Error, Result};
use crate::kb::{FunderEntity, Registry};
use crate::nn::{cross_entropy_sum, scalar_f64, Init, ParamStore, SeededRng};
use crate::tokenizer::{SubwordTokenizer as _, Vocab, WordPieceTokenizer, SPECIAL_TOKENS};

/// Training and rendering hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiEncoderConfig {
    /// Negative-mining rounds.
    pub rounds: usize,
    /// Training epochs per round.
    pub epochs_per_round: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Uniform-random negatives per mention in round 1.
    pub round1_random: usize,
    /// Hard negatives taken for a NIL mention: the top-K ranked entities.
    pub k_nil: usize,
    /// Optional cap on hard negatives per mention (memory safety; no cap by
    /// default).
    pub max_hard: Option<usize>,
    /// Token budget for rendered mention inputs.
    pub mention_max_len: usize,
    /// Token budget for rendered entity inputs.
    pub entity_max_len: usize,
    pub seed: u64,
}

impl Default for BiEncoderConfig {
    fn default() -> Self {
        BiEncoderConfig {
            rounds: 4,
            epochs_per_round: 2,
            lr: 2e-5,
            batch_size: 16,
            round1_random: 3,
            k_nil: 10,
            max_hard: None,
            mention_max_len: 64,
            entity_max_len: 256,
            seed: 13,
        }
    }
}

impl BiEncoderConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.epochs_per_round == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "biencoder.rounds, epochs_per_round and batch_size must be ≥ 1".into(),
            ));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("biencoder.lr must be positive".into()));
        }
        // [CLS] [M_s] [M_e] [SEP] leave no room below 5 tokens.
        if self.mention_max_len < 5 || self.entity_max_len < 3 {
            return Err(Error::InvalidConfig(
                "biencoder token budgets are too small to render any input".into(),
            ));
        }
        Ok(())
    }
}

/// One registry entity's score for a mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub entity_id: String,
    /// Positive-class probability of the scoring head.
    pub probability: f64,
    /// 1-based; probabilities are non-increasing with rank.
    pub rank: usize,
}

/// Render an entity as token ids: names separated by `[E_A]`, then `[E_B]`
/// and the country. Truncation keeps the leading tokens and the final
/// `[SEP]`.
pub fn render_entity_input(
    entity: &FunderEntity,
    tokenizer: &WordPieceTokenizer,
    max_len: usize,
) -> Vec<u32> {
    let vocab = tokenizer.vocab();
    let mut ids = vec![vocab.cls_id()];
    for (i, name) in entity.names.iter().enumerate() {
        if i > 0 {
            ids.push(vocab.e_a_id());
        }
        ids.extend(tokenizer.tokenize(name).iter().map(|t| t.id));
    }
    ids.push(vocab.e_b_id());
    ids.extend(tokenizer.tokenize(&entity.country).iter().map(|t| t.id));
    ids.push(vocab.sep_id());
    if ids.len() > max_len {
        ids.truncate(max_len - 1);
        ids.push(vocab.sep_id());
    }
    ids
}

/// Render a mention in context as token ids:
/// `[CLS] left [M_s] mention [M_e] right [SEP]`, at most `max_len` long.
///
/// The budget left after the mention and the four frame tokens is split
/// equally between the two context sides, the odd token going left; a side
/// shorter than its half rolls its unused budget over to the other. A
/// mention longer than the whole budget is cut on the right and gets no
/// context at all.
pub fn render_mention_input(
    text: &str,
    span: Span,
    tokenizer: &WordPieceTokenizer,
    max_len: usize,
) -> Vec<u32> {
    let vocab = tokenizer.vocab();
    let tokens = tokenizer.tokenize(text);
    let lo = tokens.partition_point(|t| t.start < span.start);
    let hi = tokens.partition_point(|t| t.start < span.end);

    let budget = max_len - 4;
    let mut mention: Vec<u32> = tokens[lo..hi].iter().map(|t| t.id).collect();
    let (left_take, right_take) = if mention.len() > budget {
        mention.truncate(budget);
        (0, 0)
    } else {
        let rem = budget - mention.len();
        let left = tokens[..lo].len();
        let right = tokens[hi..].len();
        let left_take = left.min(rem - rem / 2);
        let right_take = right.min(rem - left_take);
        let left_take = left.min(rem - right_take);
        (left_take, right_take)
    };

    let mut ids = Vec::with_capacity(4 + mention.len() + left_take + right_take);
    ids.push(vocab.cls_id());
    ids.extend(tokens[lo - left_take..lo].iter().map(|t| t.id));
    ids.push(vocab.m_s_id());
    ids.extend(mention);
    ids.push(vocab.m_e_id());
    ids.extend(tokens[hi..hi + right_take].iter().map(|t| t.id));
    ids.push(vocab.sep_id());
    ids
}

/// Pair probability from explicit vectors: softmax over the two logits of
/// `Wᵀ(x_m ⊙ x_e)`, taken at the positive class. `w` is `(hidden, 2)`;
/// `x_m`, `x_e` are `(hidden,)` of any float dtype.
pub fn pair_probability(w: &Tensor, x_m: &Tensor, x_e: &Tensor) -> Result<f64> {
    let z = (x_m * x_e)?.unsqueeze(0)?.matmul(w)?; // (1, 2)
    let z = z.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(stable_sigmoid(z[1] - z[0]))
}

/// Binary cross-entropy of one pair against its label, kept on the graph
/// (equivalently: two-class cross-entropy over the pair logits). Usable
/// with `f64` tensors for finite-difference checks.
pub fn pair_bce_loss(w: &Tensor, x_m: &Tensor, x_e: &Tensor, positive: bool) -> Result<Tensor> {
    let z = (x_m * x_e)?.unsqueeze(0)?.matmul(w)?; // (1, 2)
    let target = Tensor::from_vec(vec![u32::from(positive)], (1,), z.device())?;
    let (sum, _) = cross_entropy_sum(&z, &target)?;
    Ok(sum)
}

fn stable_sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Number of random negatives per mention for a mining round: the floor of
/// the mean hard-negative count.
pub fn random_negative_count(hard_counts: &[usize]) -> Result<usize> {
    if hard_counts.is_empty() {
        return Err(Error::EmptyInput("hard-negative counts".into()));
    }
    Ok(hard_counts.iter().sum::<usize>() / hard_counts.len())
}

/// Where a bi-encoder came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiEncoderProvenance {
    /// Base the encoders were warm-started from.
    pub base: String,
    /// Mining rounds of training applied.
    pub rounds: usize,
    pub seed: u64,
}

const W_NAME: &str = "interaction.w";
const MENTION_PREFIX: &str = "mention.";
const ENTITY_PREFIX: &str = "entity.";

/// The dual-encoder scorer. Immutable after training; safe for concurrent
/// scoring calls.
pub struct BiEncoder {
    mention_encoder: TransformerEncoder,
    entity_encoder: TransformerEncoder,
    interaction: ParamStore,
    w: Var,
    vocab: Vocab,
    tokenizer: WordPieceTokenizer,
    mention_max_len: usize,
    entity_max_len: usize,
    provenance: BiEncoderProvenance,
}

#[derive(Serialize, Deserialize)]
struct BiConfigFile {
    encoder: EncoderConfig,
    special_tokens: Vec<String>,
    mention_max_len: usize,
    entity_max_len: usize,
}

impl BiEncoder {
    /// Warm-start both encoders from one checkpoint and initialize a fresh
    /// interaction head.
    pub fn init(base: &EncoderCheckpoint, config: &BiEncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut mention_encoder =
            TransformerEncoder::new(&base.config, MENTION_PREFIX, config.seed)?;
        mention_encoder.set_weights(
            &prefix_weights(&base.weights, MENTION_PREFIX),
            Path::new("<base>"),
        )?;
        let mut entity_encoder = TransformerEncoder::new(&base.config, ENTITY_PREFIX, config.seed)?;
        entity_encoder.set_weights(
            &prefix_weights(&base.weights, ENTITY_PREFIX),
            Path::new("<base>"),
        )?;

        let mut interaction = ParamStore::new(Device::Cpu);
        let mut rng = SeededRng::new(SeededRng::derive(config.seed, "interaction"));
        let w = interaction.var(
            W_NAME,
            &[base.config.hidden_size, 2],
            Init::Normal {
                std: base.config.initializer_range as f32,
            },
            &mut rng,
        )?;
        Ok(BiEncoder {
            mention_encoder,
            entity_encoder,
            interaction,
            w,
            vocab: base.vocab.clone(),
            tokenizer: WordPieceTokenizer::new(base.vocab.clone()),
            mention_max_len: config.mention_max_len,
            entity_max_len: config.entity_max_len,
            provenance: BiEncoderProvenance {
                base: base.provenance.base.clone(),
                rounds: 0,
                seed: config.seed,
            },
        })
    }

    pub fn tokenizer(&self) -> &WordPieceTokenizer {
        &self.tokenizer
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn provenance(&self) -> &BiEncoderProvenance {
        &self.provenance
    }

    /// Rendered mention input for a span of `text`.
    pub fn mention_input(&self, text: &str, span: Span) -> Vec<u32> {
        render_mention_input(text, span, &self.tokenizer, self.mention_max_len)
    }

    /// Rendered entity input.
    pub fn entity_input(&self, entity: &FunderEntity) -> Vec<u32> {
        render_entity_input(entity, &self.tokenizer, self.entity_max_len)
    }

    /// Batch-encode rendered inputs to `[CLS]` vectors: `(batch, hidden)`.
    fn encode(&self, encoder: &TransformerEncoder, inputs: &[&[u32]]) -> Result<Tensor> {
        let device = encoder.device().clone();
        let b = inputs.len();
        let t = inputs.iter().map(|ids| ids.len()).max().unwrap_or(1);
        let mut ids = vec![0u32; b * t];
        let mut mask = vec![0f32; b * t];
        for (row, input) in inputs.iter().enumerate() {
            for (col, &id) in input.iter().enumerate() {
                ids[row * t + col] = id;
                mask[row * t + col] = 1.0;
            }
        }
        let ids = Tensor::from_vec(ids, (b, t), &device)?;
        let mask = Tensor::from_vec(mask, (b, t), &device)?;
        let hidden = encoder.forward(&ids, &mask)?;
        encoder.cls(&hidden)
    }

    /// Pair logits for aligned mention/entity input batches: `(batch, 2)`.
    fn pair_logits(&self, mentions: &[&[u32]], entities: &[&[u32]]) -> Result<Tensor> {
        let x_m = self.encode(&self.mention_encoder, mentions)?;
        let x_e = self.encode(&self.entity_encoder, entities)?;
        Ok((x_m * x_e)?.matmul(self.w.as_tensor())?)
    }

    /// Probability that the rendered mention refers to the rendered entity.
    pub fn score_pair(&self, mention: &[u32], entity: &[u32]) -> Result<f64> {
        let z = self.pair_logits(&[mention], &[entity])?;
        let z = z.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Ok(stable_sigmoid(z[1] - z[0]))
    }

    /// Precompute entity `[CLS]` vectors for the whole registry, in entity-id
    /// order, tagged with this model's version hash.
    pub fn embed_registry(&self, registry: &Registry) -> Result<EntityEmbeddings> {
        if registry.len() == 0 {
            return Err(Error::EmptyInput("registry to embed".into()));
        }
        let entities: Vec<&FunderEntity> = registry.iter().collect();
        let rendered: Vec<Vec<u32>> = entities.iter().map(|e| self.entity_input(e)).collect();
        let mut chunks = Vec::new();
        for chunk in rendered.chunks(8) {
            let refs: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
            chunks.push(self.encode(&self.entity_encoder, &refs)?);
        }
        let vectors = Tensor::cat(&chunks, 0)?;
        Ok(EntityEmbeddings {
            ids: entities.iter().map(|e| e.id.clone()).collect(),
            vectors,
            model_hash: self.version_hash()?,
        })
    }

    /// Positive-class probability for every embedded entity, aligned with
    /// `embeddings.ids`. One matrix–vector product: the pair logit margin is
    /// `⟨x_e, x_m ⊙ (w₁ − w₀)⟩`.
    fn all_probabilities(&self, mention: &[u32], embeddings: &EntityEmbeddings) -> Result<Vec<f64>> {
        let x_m = self.encode(&self.mention_encoder, &[mention])?; // (1, H)
        let w = self.w.as_tensor();
        let diff = (w.narrow(1, 1, 1)? - w.narrow(1, 0, 1)?)?.reshape((1, ()))?; // (1, H)
        let query = (x_m * diff)?.reshape(((), 1))?; // (H, 1)
        let margins = embeddings
            .vectors
            .matmul(&query)?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        Ok(margins.into_iter().map(stable_sigmoid).collect())
    }

    /// Rank order over all embedded entities: by probability descending,
    /// ties by entity id ascending. Returns indices into `embeddings.ids`.
    fn ranked_indices(probabilities: &[f64], embeddings: &EntityEmbeddings) -> Vec<usize> {
        let mut order: Vec<usize> = (0..probabilities.len()).collect();
        order.sort_by(|&a, &b| {
            probabilities[b]
                .total_cmp(&probabilities[a])
                .then_with(|| embeddings.ids[a].cmp(&embeddings.ids[b]))
        });
        order
    }

    /// The top-`n` candidates for a rendered mention (all entities when `n`
    /// exceeds the registry).
    pub fn rank_candidates(
        &self,
        mention: &[u32],
        embeddings: &EntityEmbeddings,
        n: usize,
    ) -> Result<Vec<CandidateScore>> {
        let probabilities = self.all_probabilities(mention, embeddings)?;
        let order = Self::ranked_indices(&probabilities, embeddings);
        Ok(order
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(rank, i)| CandidateScore {
                entity_id: embeddings.ids[i].clone(),
                probability: probabilities[i],
                rank: rank + 1,
            })
            .collect())
    }

    /// Hard negatives for one mention: entities scored strictly above the
    /// gold entity, in rank order — or the top-`k` overall for a NIL mention
    /// (a gold id absent from the embedded registry is treated as NIL, with
    /// a warning).
    pub fn mine_hard_negatives(
        &self,
        mention: &[u32],
        gold: &EntityLabel,
        embeddings: &EntityEmbeddings,
        k: usize,
    ) -> Result<Vec<String>> {
        let probabilities = self.all_probabilities(mention, embeddings)?;
        let order = Self::ranked_indices(&probabilities, embeddings);
        let gold_index = match gold {
            EntityLabel::Nil => None,
            EntityLabel::Id(id) => match embeddings.ids.binary_search(id) {
                Ok(i) => Some(i),
                Err(_) => {
                    log::warn!("gold entity {id:?} not in the registry; mining as NIL");
                    None
                }
            },
        };
        Ok(match gold_index {
            Some(gold_i) => {
                let gold_p = probabilities[gold_i];
                order
                    .into_iter()
                    .filter(|&i| probabilities[i] > gold_p)
                    .map(|i| embeddings.ids[i].clone())
                    .collect()
            }
            None => order
                .into_iter()
                .take(k)
                .map(|i| embeddings.ids[i].clone())
                .collect(),
        })
    }

    /// Hash of the model's weights and rendering parameters, for keying the
    /// entity-embedding cache.
    pub fn version_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        let mut weights = self.mention_encoder.weights()?;
        weights.extend(self.entity_encoder.weights()?);
        weights.extend(self.interaction.to_map()?);
        for (name, tensor) in &weights {
            hasher.update(name.as_bytes());
            for dim in tensor.dims() {
                hasher.update(dim.to_le_bytes());
            }
            for value in tensor.flatten_all()?.to_vec1::<f32>()? {
                hasher.update(value.to_le_bytes());
            }
        }
        hasher.update(self.mention_max_len.to_le_bytes());
        hasher.update(self.entity_max_len.to_le_bytes());
        hasher.update(self.vocab.len().to_le_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }

    fn trainable_vars(&self) -> Vec<Var> {
        let mut vars = self.mention_encoder.trainable_vars();
        vars.extend(self.entity_encoder.trainable_vars());
        vars.extend(self.interaction.all_vars());
        vars
    }

    /// Save as a directory: config, vocabulary, provenance, and one weights
    /// file holding both encoders and the interaction head.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(
            &dir.join("config.json"),
            &BiConfigFile {
                encoder: self.mention_encoder.config().clone(),
                special_tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
                mention_max_len: self.mention_max_len,
                entity_max_len: self.entity_max_len,
            },
        )?;
        self.vocab.save(dir.join("vocab.json"))?;
        write_json(&dir.join("provenance.json"), &self.provenance)?;
        let mut weights = self.mention_encoder.weights()?;
        weights.extend(self.entity_encoder.weights()?);
        weights.extend(self.interaction.to_map()?);
        let map: std::collections::HashMap<String, Tensor> = weights.into_iter().collect();
        candle_core::safetensors::save(&map, dir.join("weights.safetensors"))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config_file: BiConfigFile = read_json(&dir.join("config.json"))?;
        let vocab = Vocab::load(dir.join("vocab.json"))?;
        let provenance: BiEncoderProvenance = read_json(&dir.join("provenance.json"))?;
        if config_file.encoder.vocab_size != vocab.len() {
            return Err(Error::Checkpoint {
                path: dir.to_path_buf(),
                message: format!(
                    "config vocab_size {} != vocabulary size {}",
                    config_file.encoder.vocab_size,
                    vocab.len()
                ),
            });
        }
        let weights: BTreeMap<String, Tensor> =
            candle_core::safetensors::load(dir.join("weights.safetensors"), &Device::Cpu)?
                .into_iter()
                .collect();

        let mut mention_encoder = TransformerEncoder::new(&config_file.encoder, MENTION_PREFIX, 0)?;
        mention_encoder.set_weights(&weights, dir)?;
        let mut entity_encoder = TransformerEncoder::new(&config_file.encoder, ENTITY_PREFIX, 0)?;
        entity_encoder.set_weights(&weights, dir)?;
        let mut interaction = ParamStore::new(Device::Cpu);
        let mut rng = SeededRng::new(0);
        let w = interaction.var(
            W_NAME,
            &[config_file.encoder.hidden_size, 2],
            Init::Zeros,
            &mut rng,
        )?;
        interaction.set_from_map(&weights, dir)?;

        Ok(BiEncoder {
            mention_encoder,
            entity_encoder,
            interaction,
            w,
            tokenizer: WordPieceTokenizer::new(vocab.clone()),
            vocab,
            mention_max_len: config_file.mention_max_len,
            entity_max_len: config_file.entity_max_len,
            provenance,
        })
    }
}

/// Precomputed entity `[CLS]` vectors in entity-id order, tagged with the
/// hash of the model that produced them.
pub struct EntityEmbeddings {
    ids: Vec<String>,
    vectors: Tensor,
    model_hash: String,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingsMeta {
    ids: Vec<String>,
    model_hash: String,
}

impl EntityEmbeddings {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Hash of the model version these vectors were computed with.
    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(
            &dir.join("embeddings.json"),
            &EmbeddingsMeta {
                ids: self.ids.clone(),
                model_hash: self.model_hash.clone(),
            },
        )?;
        let map: std::collections::HashMap<String, Tensor> =
            [("vectors".to_string(), self.vectors.clone())].into();
        candle_core::safetensors::save(&map, dir.join("embeddings.safetensors"))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: EmbeddingsMeta = read_json(&dir.join("embeddings.json"))?;
        let mut tensors =
            candle_core::safetensors::load(dir.join("embeddings.safetensors"), &Device::Cpu)?;
        let vectors = tensors.remove("vectors").ok_or_else(|| Error::Checkpoint {
            path: dir.to_path_buf(),
            message: "missing tensor \"vectors\"".into(),
        })?;
        if vectors.dims2()?.0 != meta.ids.len() {
            return Err(Error::Checkpoint {
                path: dir.to_path_buf(),
                message: format!(
                    "{} embedded vectors but {} entity ids",
                    vectors.dims2()?.0,
                    meta.ids.len()
                ),
            });
        }
        Ok(EntityEmbeddings {
            ids: meta.ids,
            vectors,
            model_hash: meta.model_hash,
        })
    }
}

/// Diagnostics for one training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    /// 1-based round number.
    pub round: usize,
    /// Hard negatives mined for this round (0 in round 1).
    pub hard_negatives: usize,
    /// Random negatives added per mention.
    pub random_per_mention: usize,
    /// Total (mention, entity, label) training pairs.
    pub pairs: usize,
    /// Mean pair cross-entropy over the round's batches.
    pub mean_loss: f64,
}

/// A trained bi-encoder with its per-round training diagnostics.
pub struct TrainedBiEncoder {
    pub model: BiEncoder,
    pub rounds: Vec<RoundSummary>,
}

/// One mention prepared for training.
struct TrainingMention {
    input: Vec<u32>,
    gold: EntityLabel,
}

/// Uniform sample of `n` distinct entity ids, excluding the gold id.
fn sample_random_negatives(
    ids: &[String],
    exclude: Option<&str>,
    n: usize,
    rng: &mut SeededRng,
) -> Vec<String> {
    let mut pool: Vec<&String> = ids
        .iter()
        .filter(|id| Some(id.as_str()) != exclude)
        .collect();
    let n = n.min(pool.len());
    for i in 0..n {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(n);
    pool.into_iter().cloned().collect()
}

/// Train the bi-encoder on annotated documents against a registry.
///
/// Round 1 uses `round1_random` uniform negatives per mention; every later
/// round mines hard negatives with the model as trained so far and adds
/// fresh random negatives per [`random_negative_count`]. In-KB mentions
/// contribute one positive pair per epoch; NIL mentions contribute only
/// negatives. The model warm-starts from `base` once — rounds continue
/// training, they never reinitialize.
pub fn train_biencoder(
    docs: &[Document],
    registry: &Registry,
    base: &EncoderCheckpoint,
    config: &BiEncoderConfig,
) -> Result<TrainedBiEncoder> {
    config.validate()?;
    let mut model = BiEncoder::init(base, config)?;

    let mut mentions = Vec::new();
    let mut in_kb = 0usize;
    for doc in docs {
        for ann in &doc.annotations {
            let gold = match &ann.label {
                EntityLabel::Id(id) if !registry.contains(id) => {
                    log::warn!(
                        "document {:?}: gold entity {id:?} not in the registry; training the \
                         mention as NIL",
                        doc.doc_id
                    );
                    EntityLabel::Nil
                }
                other => other.clone(),
            };
            in_kb += usize::from(!gold.is_nil());
            mentions.push(TrainingMention {
                input: model.mention_input(&doc.text, ann.span()),
                gold,
            });
        }
    }
    if in_kb == 0 {
        return Err(Error::EmptyInput(
            "bi-encoder training corpus has no in-KB mentions".into(),
        ));
    }

    let all_ids: Vec<String> = registry.ids().map(str::to_string).collect();
    let mut entity_inputs: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    fn render(
        cache: &mut BTreeMap<String, Vec<u32>>,
        registry: &Registry,
        id: &str,
        model: &BiEncoder,
    ) {
        if !cache.contains_key(id) {
            let entity = registry.get(id).expect("sampled ids come from the registry");
            cache.insert(id.to_string(), model.entity_input(entity));
        }
    }

    let mut opt = AdamW::new_lr(model.trainable_vars(), config.lr)?;
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        // Assemble this round's negative sets.
        let (negatives, hard_total, random_per_mention) = if round == 1 {
            let mut rng = SeededRng::new(SeededRng::derive(config.seed, "negatives/round-1"));
            let negatives: Vec<Vec<String>> = mentions
                .iter()
                .map(|m| {
                    sample_random_negatives(&all_ids, m.gold.id(), config.round1_random, &mut rng)
                })
                .collect();
            (negatives, 0, config.round1_random)
        } else {
            let embeddings = model.embed_registry(registry)?;
            let mut hard: Vec<Vec<String>> = Vec::with_capacity(mentions.len());
            for m in &mentions {
                let mut mined =
                    model.mine_hard_negatives(&m.input, &m.gold, &embeddings, config.k_nil)?;
                if let Some(cap) = config.max_hard {
                    mined.truncate(cap);
                }
                hard.push(mined);
            }
            let hard_counts: Vec<usize> = hard.iter().map(Vec::len).collect();
            let hard_total = hard_counts.iter().sum();
            let n_random = random_negative_count(&hard_counts)?;
            let tag = format!("negatives/round-{round}");
            let mut rng = SeededRng::new(SeededRng::derive(config.seed, &tag));
            let negatives: Vec<Vec<String>> = mentions
                .iter()
                .zip(hard)
                .map(|(m, mut negs)| {
                    negs.extend(sample_random_negatives(
                        &all_ids,
                        m.gold.id(),
                        n_random,
                        &mut rng,
                    ));
                    negs
                })
                .collect();
            (negatives, hard_total, n_random)
        };

        // Materialize (mention index, entity id, label) pairs.
        let mut pairs: Vec<(usize, &str, bool)> = Vec::new();
        for (i, (mention, negs)) in mentions.iter().zip(&negatives).enumerate() {
            if let Some(gold_id) = mention.gold.id() {
                debug_assert!(!negs.iter().any(|n| n == gold_id));
                render(&mut entity_inputs, registry, gold_id, &model);
                pairs.push((i, gold_id, true));
            }
            for neg in negs {
                render(&mut entity_inputs, registry, neg, &model);
                pairs.push((i, neg, false));
            }
        }

        // Train on the pair set.
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for epoch in 0..config.epochs_per_round {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            let tag = format!("biencoder-shuffle/round-{round}/epoch-{epoch}");
            SeededRng::new(SeededRng::derive(config.seed, &tag)).shuffle(&mut order);
            for batch_indices in order.chunks(config.batch_size) {
                let mention_refs: Vec<&[u32]> = batch_indices
                    .iter()
                    .map(|&p| mentions[pairs[p].0].input.as_slice())
                    .collect();
                let entity_refs: Vec<&[u32]> = batch_indices
                    .iter()
                    .map(|&p| entity_inputs[pairs[p].1].as_slice())
                    .collect();
                let targets: Vec<u32> = batch_indices
                    .iter()
                    .map(|&p| u32::from(pairs[p].2))
                    .collect();
                let logits = model.pair_logits(&mention_refs, &entity_refs)?;
                let target_t =
                    Tensor::from_vec(targets, (batch_indices.len(),), logits.device())?;
                let (sum, count) = cross_entropy_sum(&logits, &target_t)?;
                let loss = (sum * (1.0 / count as f64))?;
                loss_sum += scalar_f64(&loss)?;
                batches += 1;
                let grads = loss.backward()?;
                opt.step(&grads)?;
            }
        }

        let summary = RoundSummary {
            round,
            hard_negatives: hard_total,
            random_per_mention,
            pairs: pairs.len(),
            mean_loss: loss_sum / batches.max(1) as f64,
        };
        log::info!(
            "bi-encoder round {}: {} pairs ({} hard, {} random/mention), mean loss {:.4}",
            summary.round,
            summary.pairs,
            summary.hard_negatives,
            summary.random_per_mention,
            summary.mean_loss
        );
        rounds.push(summary);
    }

    model.provenance.rounds = config.rounds;
    Ok(TrainedBiEncoder { model, rounds })
}
