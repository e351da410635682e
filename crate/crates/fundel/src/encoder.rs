//! A compact BERT-style transformer encoder.
//!
//! Post-layer-norm architecture: learned word + position embeddings, then
//! `num_layers` blocks of multi-head self-attention and a GELU feed-forward,
//! each followed by a residual connection and layer norm. The `[CLS]` vector
//! (position 0) serves as the sequence representation for the bi-encoder;
//! per-token vectors feed the IOB tag head.
//!
//! Checkpoints are directories holding the architecture config, the
//! vocabulary, the weights (safetensors), and a provenance record (what the
//! encoder was initialized from, how many adaptation steps it received, and
//! under which seed). Auxiliary heads trained alongside the encoder (e.g.
//! the masked-language-model head) may ride along in the same weights file
//! under their own name prefixes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Embedding, LayerNorm, Linear, ParamStore, SeededRng};
use crate::tokenizer::{Vocab, SPECIAL_TOKENS};

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    pub layer_norm_eps: f64,
    /// Std-dev of the truncated-normal-style init for weights.
    pub initializer_range: f64,
}

impl EncoderConfig {
    /// The BERT-base geometry (the production configuration).
    pub fn bert_base(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden_size: 768,
            num_layers: 12,
            num_heads: 12,
            intermediate_size: 3072,
            max_position_embeddings: 512,
            layer_norm_eps: 1e-12,
            initializer_range: 0.02,
        }
    }

    /// A small geometry for tests and toy pipelines.
    pub fn tiny(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden_size: 32,
            num_layers: 2,
            num_heads: 2,
            intermediate_size: 64,
            max_position_embeddings: 128,
            layer_norm_eps: 1e-12,
            initializer_range: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_heads == 0 || self.hidden_size % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.vocab_size <= SPECIAL_TOKENS.len() {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} leaves no room beyond the {} special tokens",
                self.vocab_size,
                SPECIAL_TOKENS.len()
            )));
        }
        if self.num_layers == 0
            || self.intermediate_size == 0
            || self.max_position_embeddings < 4
        {
            return Err(Error::InvalidConfig(
                "layers, intermediate size and max positions must be positive (max positions ≥ 4)"
                    .into(),
            ));
        }
        Ok(())
    }
}

struct EncoderBlock {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    attn_ln: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    ff_ln: LayerNorm,
}

/// The encoder itself: owns its parameters through a [`ParamStore`].
pub struct TransformerEncoder {
    config: EncoderConfig,
    prefix: String,
    store: ParamStore,
    word_emb: Embedding,
    pos_emb: Embedding,
    emb_ln: LayerNorm,
    blocks: Vec<EncoderBlock>,
}

impl TransformerEncoder {
    /// Build with fresh random parameters. `prefix` namespaces parameter
    /// names (the bi-encoder holds two encoders in one artifact).
    pub fn new(config: &EncoderConfig, prefix: &str, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(SeededRng::derive(seed, &format!("encoder-init/{prefix}")));
        let mut store = ParamStore::new(Device::Cpu);
        let std = config.initializer_range as f32;
        let h = config.hidden_size;

        let word_emb = Embedding::new(
            &mut store,
            &format!("{prefix}embeddings.word"),
            config.vocab_size,
            h,
            std,
            &mut rng,
        )?;
        let pos_emb = Embedding::new(
            &mut store,
            &format!("{prefix}embeddings.position"),
            config.max_position_embeddings,
            h,
            std,
            &mut rng,
        )?;
        let emb_ln = LayerNorm::new(
            &mut store,
            &format!("{prefix}embeddings.ln"),
            h,
            config.layer_norm_eps,
            &mut rng,
        )?;

        let mut blocks = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let p = format!("{prefix}layer.{i}");
            blocks.push(EncoderBlock {
                q: Linear::new(&mut store, &format!("{p}.attn.q"), h, h, std, &mut rng)?,
                k: Linear::new(&mut store, &format!("{p}.attn.k"), h, h, std, &mut rng)?,
                v: Linear::new(&mut store, &format!("{p}.attn.v"), h, h, std, &mut rng)?,
                o: Linear::new(&mut store, &format!("{p}.attn.o"), h, h, std, &mut rng)?,
                attn_ln: LayerNorm::new(
                    &mut store,
                    &format!("{p}.attn_ln"),
                    h,
                    config.layer_norm_eps,
                    &mut rng,
                )?,
                ff_in: Linear::new(
                    &mut store,
                    &format!("{p}.ffn.in"),
                    h,
                    config.intermediate_size,
                    std,
                    &mut rng,
                )?,
                ff_out: Linear::new(
                    &mut store,
                    &format!("{p}.ffn.out"),
                    config.intermediate_size,
                    h,
                    std,
                    &mut rng,
                )?,
                ff_ln: LayerNorm::new(
                    &mut store,
                    &format!("{p}.ffn_ln"),
                    h,
                    config.layer_norm_eps,
                    &mut rng,
                )?,
            });
        }

        Ok(TransformerEncoder {
            config: config.clone(),
            prefix: prefix.to_string(),
            store,
            word_emb,
            pos_emb,
            emb_ln,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Encode `(batch, seq)` token ids with a `(batch, seq)` 1/0 attention
    /// mask into `(batch, seq, hidden)` states.
    pub fn forward(&self, ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (batch, seq) = ids.dims2()?;
        if seq > self.config.max_position_embeddings {
            return Err(Error::InvalidConfig(format!(
                "sequence length {seq} exceeds max positions {}",
                self.config.max_position_embeddings
            )));
        }
        let device = self.store.device();
        let heads = self.config.num_heads;
        let head_dim = self.config.hidden_size / heads;

        let positions = Tensor::arange(0u32, seq as u32, device)?.reshape((1, seq))?;
        let emb = self
            .word_emb
            .forward(ids)?
            .broadcast_add(&self.pos_emb.forward(&positions)?)?;
        let mut hidden = self.emb_ln.forward(&emb)?;

        // (batch, 1, 1, seq) additive bias: 0 for real tokens, -1e9 for pads.
        let bias = ((mask.to_dtype(candle_core::DType::F32)? * -1.0)? + 1.0)?;
        let bias = (bias * -1e9)?.reshape((batch, 1, 1, seq))?;

        let split = |t: &Tensor| -> Result<Tensor> {
            Ok(t.reshape((batch, seq, heads, head_dim))?
                .transpose(1, 2)?
                .contiguous()?)
        };

        for block in &self.blocks {
            let q = split(&block.q.forward(&hidden)?)?;
            let k = split(&block.k.forward(&hidden)?)?;
            let v = split(&block.v.forward(&hidden)?)?;
            let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)?
                * (1.0 / (head_dim as f64).sqrt()))?;
            let scores = scores.broadcast_add(&bias)?;
            let probs = candle_nn::ops::softmax(&scores, 3)?;
            let context = probs
                .matmul(&v)?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((batch, seq, self.config.hidden_size))?;
            let attn_out = block.o.forward(&context)?;
            hidden = block.attn_ln.forward(&(hidden + attn_out)?)?;

            let ff = block.ff_out.forward(&block.ff_in.forward(&hidden)?.gelu_erf()?)?;
            hidden = block.ff_ln.forward(&(hidden + ff)?)?;
        }
        Ok(hidden)
    }

    /// The `[CLS]` (position 0) vectors: `(batch, hidden)`.
    pub fn cls(&self, hidden: &Tensor) -> Result<Tensor> {
        Ok(hidden.narrow(1, 0, 1)?.squeeze(1)?)
    }

    /// Detached copies of all parameters, keyed by prefixed name.
    pub fn weights(&self) -> Result<BTreeMap<String, Tensor>> {
        self.store.to_map()
    }

    /// Load parameters from a name→tensor map (extra names ignored).
    pub fn set_weights(&mut self, map: &BTreeMap<String, Tensor>, origin: &Path) -> Result<()> {
        self.store.set_from_map(map, origin)
    }

    /// Vars for the optimizer.
    pub fn trainable_vars(&self) -> Vec<candle_core::Var> {
        self.store.all_vars()
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// What the parameters were initialized from (e.g. "random-init" or a
    /// parent checkpoint name).
    pub base: String,
    /// Masked-LM adaptation steps applied on top of `base`.
    pub tapt_steps: usize,
    /// Seed that drove initialization and training.
    pub seed: u64,
}

/// A serializable encoder snapshot: config, vocabulary, provenance, and all
/// tensors (possibly including auxiliary head weights).
pub struct EncoderCheckpoint {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub provenance: Provenance,
    pub weights: BTreeMap<String, Tensor>,
}

/// On-disk config descriptor: architecture plus the reserved special tokens.
#[derive(Serialize, Deserialize)]
struct ConfigFile {
    encoder: EncoderConfig,
    special_tokens: Vec<String>,
}

const WEIGHTS_FILE: &str = "weights.safetensors";
const CONFIG_FILE: &str = "config.json";
const VOCAB_FILE: &str = "vocab.json";
const PROVENANCE_FILE: &str = "provenance.json";

impl EncoderCheckpoint {
    /// Fresh randomly initialized checkpoint (the "base" encoder that TAPT
    /// adapts).
    pub fn init(config: &EncoderConfig, vocab: &Vocab, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "config vocab_size {} != vocabulary size {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        let encoder = TransformerEncoder::new(config, "", seed)?;
        Ok(EncoderCheckpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            provenance: Provenance {
                base: "random-init".into(),
                tapt_steps: 0,
                seed,
            },
            weights: encoder.weights()?,
        })
    }

    /// Instantiate a live encoder from this checkpoint (unprefixed names).
    pub fn encoder(&self) -> Result<TransformerEncoder> {
        let mut enc = TransformerEncoder::new(&self.config, "", 0)?;
        enc.set_weights(&self.weights, Path::new("<memory>"))?;
        Ok(enc)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let config_file = ConfigFile {
            encoder: self.config.clone(),
            special_tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
        };
        write_json(&dir.join(CONFIG_FILE), &config_file)?;
        self.vocab.save(dir.join(VOCAB_FILE))?;
        write_json(&dir.join(PROVENANCE_FILE), &self.provenance)?;
        let map: HashMap<String, Tensor> = self
            .weights
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        candle_core::safetensors::save(&map, dir.join(WEIGHTS_FILE))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config_file: ConfigFile = read_json(&dir.join(CONFIG_FILE))?;
        let vocab = Vocab::load(dir.join(VOCAB_FILE))?;
        let provenance: Provenance = read_json(&dir.join(PROVENANCE_FILE))?;
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
        let weights = candle_core::safetensors::load(dir.join(WEIGHTS_FILE), &Device::Cpu)?
            .into_iter()
            .collect();
        Ok(EncoderCheckpoint {
            config: config_file.encoder,
            vocab,
            provenance,
            weights,
        })
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Re-key a weight map under a new prefix (used when one artifact stores
/// several encoders).
pub(crate) fn prefix_weights(
    map: &BTreeMap<String, Tensor>,
    prefix: &str,
) -> BTreeMap<String, Tensor> {
    map.iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_vocab() -> Vocab {
        Vocab::build(["funding agency grant NSF DFG supports science ."], 512)
    }

    fn ids(v: &Vocab, pieces: &[&str], device: &Device) -> Tensor {
        let ids: Vec<u32> = pieces.iter().map(|p| v.id(p).unwrap()).collect();
        let len = ids.len();
        Tensor::from_vec(ids, (1, len), device).unwrap()
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let vocab = test_vocab();
        let config = EncoderConfig::tiny(vocab.len());
        let enc1 = TransformerEncoder::new(&config, "", 42).unwrap();
        let enc2 = TransformerEncoder::new(&config, "", 42).unwrap();
        let device = Device::Cpu;
        let x = ids(&vocab, &["[CLS]", "funding", "agency", "[SEP]"], &device);
        let mask = Tensor::ones((1, 4), candle_core::DType::F32, &device).unwrap();

        let h1 = enc1.forward(&x, &mask).unwrap();
        let h2 = enc2.forward(&x, &mask).unwrap();
        assert_eq!(h1.dims(), [1, 4, config.hidden_size]);
        assert_eq!(
            h1.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            h2.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );

        let seeded_differently = TransformerEncoder::new(&config, "", 43).unwrap();
        let h3 = seeded_differently.forward(&x, &mask).unwrap();
        assert_ne!(
            h1.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            h3.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn padding_does_not_leak_into_real_positions() {
        let vocab = test_vocab();
        let config = EncoderConfig::tiny(vocab.len());
        let enc = TransformerEncoder::new(&config, "", 7).unwrap();
        let device = Device::Cpu;

        let short = ids(&vocab, &["[CLS]", "NSF", "[SEP]"], &device);
        let short_mask = Tensor::ones((1, 3), candle_core::DType::F32, &device).unwrap();
        let h_short = enc.forward(&short, &short_mask).unwrap();

        let padded = ids(&vocab, &["[CLS]", "NSF", "[SEP]", "[PAD]", "[PAD]"], &device);
        let padded_mask =
            Tensor::from_vec(vec![1f32, 1.0, 1.0, 0.0, 0.0], (1, 5), &device).unwrap();
        let h_padded = enc.forward(&padded, &padded_mask).unwrap();

        let a = enc.cls(&h_short).unwrap().to_vec2::<f32>().unwrap();
        let b = enc.cls(&h_padded).unwrap().to_vec2::<f32>().unwrap();
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let vocab = test_vocab();
        let config = EncoderConfig::tiny(vocab.len());
        let ckpt = EncoderCheckpoint::init(&config, &vocab, 5).unwrap();
        let device = Device::Cpu;
        let x = ids(&vocab, &["[CLS]", "grant", "[SEP]"], &device);
        let mask = Tensor::ones((1, 3), candle_core::DType::F32, &device).unwrap();
        let before = ckpt
            .encoder()
            .unwrap()
            .forward(&x, &mask)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let loaded = EncoderCheckpoint::load(dir.path()).unwrap();
        assert_eq!(loaded.config, ckpt.config);
        assert_eq!(loaded.vocab, ckpt.vocab);
        assert_eq!(loaded.provenance, ckpt.provenance);
        let after = loaded
            .encoder()
            .unwrap()
            .forward(&x, &mask)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn config_validation_rejects_bad_geometry() {
        let mut c = EncoderConfig::tiny(64);
        c.num_heads = 5; // 32 % 5 != 0
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::tiny(64);
        c.vocab_size = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sequence_longer_than_positions_is_rejected() {
        let vocab = test_vocab();
        let mut config = EncoderConfig::tiny(vocab.len());
        config.max_position_embeddings = 4;
        let enc = TransformerEncoder::new(&config, "", 1).unwrap();
        let device = Device::Cpu;
        let x = ids(&vocab, &["[CLS]", "grant", "NSF", "science", "[SEP]"], &device);
        let mask = Tensor::ones((1, 5), candle_core::DType::F32, &device).unwrap();
        assert!(enc.forward(&x, &mask).is_err());
    }
}
