//! Transformer encoder with pluggable attention patterns.
//!
//! The encoder is a standard post-norm BERT-style stack (learned absolute
//! position embeddings, multi-head self-attention, GELU feed-forward) over
//! the in-crate autodiff tensors. Attention can be dense or sparsified as
//! a union of a local sliding window, global tokens (`[CLS]` always, query
//! positions optionally) that attend everywhere and are attended by all,
//! and a scattered component: either random key pairs (resampled per layer
//! from the model seed) or a dilated comb of offsets.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{TransformerLayer, INIT_STD, LN_EPS};
use crate::error::{Error, Result};
use crate::tensor::{Params, Tensor};

/// Whether a forward pass is part of training (dropout active) or
/// evaluation (dropout disabled).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train { dropout_seed: u64 },
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Dense,
    Sparse,
}

/// Which positions get global (bidirectional, unrestricted) attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalTokens {
    ClsOnly,
    ClsAndQuery,
}

/// The scattered component of a sparse pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scatter {
    None,
    /// Up to `k` random keys per query position; symmetrized.
    Random { k: usize, seed: u64 },
    /// Offsets `0, rate, 2*rate, ...` up to `(local_window-1)*rate`.
    Dilated { rate: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionPattern {
    pub kind: AttentionKind,
    pub local_window: usize,
    pub global_tokens: GlobalTokens,
    pub scatter: Scatter,
}

impl AttentionPattern {
    pub fn dense() -> AttentionPattern {
        AttentionPattern {
            kind: AttentionKind::Dense,
            local_window: 1,
            global_tokens: GlobalTokens::ClsOnly,
            scatter: Scatter::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AttentionKind::Sparse && self.local_window == 0 {
            return Err(Error::InvalidConfig(
                "sparse attention needs local_window >= 1".into(),
            ));
        }
        if let Scatter::Dilated { rate } = self.scatter {
            if rate == 0 {
                return Err(Error::InvalidConfig("dilation rate must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_seq: usize,
    pub attention: AttentionPattern,
    #[serde(default)]
    pub dropout_p: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.max_seq == 0 {
            return Err(Error::InvalidConfig("max_seq must be >= 1".into()));
        }
        if self.layers == 0 || self.ff_dim == 0 {
            return Err(Error::InvalidConfig(
                "layers and ff_dim must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "dropout_p must be in [0,1), got {}",
                self.dropout_p
            )));
        }
        self.attention.validate()
    }
}

/// Build the boolean attention-allow matrix (row-major `seq_len x seq_len`)
/// for one layer of a pattern. `allow[i][j]` is true iff position `i` may
/// attend to position `j` before padding is applied.
pub fn build_attention_allow_matrix(
    pattern: &AttentionPattern,
    seq_len: usize,
    query_len: usize,
) -> Vec<bool> {
    let mut allow = vec![false; seq_len * seq_len];
    if pattern.kind == AttentionKind::Dense {
        allow.fill(true);
        return allow;
    }

    let global_limit = match pattern.global_tokens {
        GlobalTokens::ClsOnly => 1,
        GlobalTokens::ClsAndQuery => (1 + query_len).min(seq_len),
    };
    let is_global = |p: usize| p < global_limit;

    for i in 0..seq_len {
        for j in 0..seq_len {
            let dist = i.abs_diff(j);
            let mut ok = dist < pattern.local_window || is_global(i) || is_global(j);
            if !ok {
                if let Scatter::Dilated { rate } = pattern.scatter {
                    ok = dist % rate == 0 && dist / rate < pattern.local_window;
                }
            }
            if ok {
                allow[i * seq_len + j] = true;
            }
        }
    }

    if let Scatter::Random { k, seed } = pattern.scatter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..seq_len {
            for _ in 0..k {
                let j = rng.random_range(0..seq_len);
                allow[i * seq_len + j] = true;
                allow[j * seq_len + i] = true;
            }
        }
    }

    allow
}

/// All encoder parameters, registered under a common name prefix.
pub struct EncoderParams {
    token_embedding: Tensor,
    position_embedding: Tensor,
    emb_gain: Tensor,
    emb_bias: Tensor,
    layers: Vec<TransformerLayer>,
}

impl EncoderParams {
    /// Create freshly initialized parameters and register them (in a fixed
    /// order) under `prefix` in `registry`.
    pub fn init(
        config: &EncoderConfig,
        vocab_size: usize,
        registry: &mut Params,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<EncoderParams> {
        config.validate()?;
        let d = config.model_dim;
        let token_embedding = registry.register(
            format!("{prefix}.token_embedding"),
            Tensor::randn(&[vocab_size, d], INIT_STD, rng),
        );
        let position_embedding = registry.register(
            format!("{prefix}.position_embedding"),
            Tensor::randn(&[config.max_seq, d], INIT_STD, rng),
        );
        let emb_gain = registry.register(
            format!("{prefix}.emb_gain"),
            Tensor::param(&[d], vec![1.0; d]),
        );
        let emb_bias = registry.register(
            format!("{prefix}.emb_bias"),
            Tensor::param(&[d], vec![0.0; d]),
        );
        let layers = (0..config.layers)
            .map(|l| {
                TransformerLayer::init(
                    d,
                    config.ff_dim,
                    registry,
                    &format!("{prefix}.layer{l}"),
                    rng,
                )
            })
            .collect();
        Ok(EncoderParams {
            token_embedding,
            position_embedding,
            emb_gain,
            emb_bias,
            layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Last-layer per-token vectors and the `[CLS]` summary (row 0).
pub struct EncodedChunk {
    pub token_vectors: Tensor,
    pub cls_vector: Tensor,
}

/// Encode one input sequence. PAD positions (mask false) are excluded as
/// attention keys; position embeddings are added before the first layer.
pub fn encode(
    config: &EncoderConfig,
    params: &EncoderParams,
    input_ids: &[u32],
    attention_mask: &[bool],
    query_len: usize,
    phase: Phase,
) -> Result<EncodedChunk> {
    let n = input_ids.len();
    if n > config.max_seq {
        return Err(Error::SequenceTooLong {
            len: n,
            max_seq: config.max_seq,
        });
    }
    if attention_mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "encode",
            detail: format!("mask length {} vs input length {n}", attention_mask.len()),
        });
    }
    let mut dropout_site = 0u64;
    let mut maybe_dropout = |x: Tensor| -> Result<Tensor> {
        match phase {
            Phase::Train { dropout_seed } if config.dropout_p > 0.0 => {
                dropout_site += 1;
                x.dropout(config.dropout_p, dropout_seed.wrapping_add(dropout_site))
            }
            _ => Ok(x),
        }
    };

    let tok = Tensor::embedding_lookup(&params.token_embedding, input_ids)?;
    let pos = params.position_embedding.slice_rows(0, n)?;
    let mut x = tok.add(&pos)?;
    x = x
        .layer_norm(1, LN_EPS)?
        .mul(&params.emb_gain)?
        .add(&params.emb_bias)?;
    x = maybe_dropout(x)?;

    for (layer_index, layer) in params.layers.iter().enumerate() {
        // Pattern for this layer combined with key padding. Random scatter
        // resamples per layer from the per-model seed.
        let base = match config.attention.scatter {
            Scatter::Random { k, seed } => {
                let layered = AttentionPattern {
                    scatter: Scatter::Random {
                        k,
                        seed: seed.wrapping_add(layer_index as u64),
                    },
                    ..config.attention
                };
                build_attention_allow_matrix(&layered, n, query_len)
            }
            _ => build_attention_allow_matrix(&config.attention, n, query_len),
        };
        let mut allow = base;
        for i in 0..n {
            for j in 0..n {
                if !attention_mask[j] {
                    allow[i * n + j] = false;
                }
            }
        }
        let allow = Rc::new(allow);
        x = layer.forward(&x, &allow, config.heads, &mut maybe_dropout)?;
    }

    let cls_vector = x.slice_rows(0, 1)?;
    Ok(EncodedChunk {
        token_vectors: x,
        cls_vector,
    })
}
