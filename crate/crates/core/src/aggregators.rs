//! Document scoring heads over per-chunk encoder outputs.
//!
//! All heads consume chunk `[CLS]` vectors (and, for the query-augmented
//! transformer aggregator and the KNRM head, contextualized token vectors)
//! and produce a one-element score tensor that participates in backward.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{TransformerLayer, INIT_STD, LN_EPS};
use crate::encoder::EncodedChunk;
use crate::error::{Error, Result};
use crate::tensor::{Params, Tensor, TensorData};

/// Per-document chunk summaries: the `m` chunk `[CLS]` vectors (stacked
/// `[m, d]`), plus optionally the contextualized query-token vectors from
/// chunk 0 (`[q, d]`, zero-width rows for `[PAD]` excluded via the mask).
pub struct ClsSet {
    pub cls_vectors: Tensor,
    pub query_vectors: Option<Tensor>,
    pub query_mask: Option<Vec<bool>>,
}

impl ClsSet {
    pub fn num_chunks(&self) -> usize {
        self.cls_vectors.shape()[0]
    }
}

/// Every scoring architecture in the zoo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    FirstP,
    AvgP,
    MaxP,
    SumP,
    ParadeAvg,
    ParadeMax,
    ParadeAttn,
    ParadeTransf,
    LongP,
    CedrKnrm,
}

impl AggregatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AggregatorKind::FirstP => "first_p",
            AggregatorKind::AvgP => "avg_p",
            AggregatorKind::MaxP => "max_p",
            AggregatorKind::SumP => "sum_p",
            AggregatorKind::ParadeAvg => "parade_avg",
            AggregatorKind::ParadeMax => "parade_max",
            AggregatorKind::ParadeAttn => "parade_attn",
            AggregatorKind::ParadeTransf => "parade_transf",
            AggregatorKind::LongP => "long_p",
            AggregatorKind::CedrKnrm => "cedr_knrm",
        }
    }
}

/// How the transformer aggregator's layers start out: fresh random weights,
/// or copied from a previously trained encoder checkpoint (its embedding
/// table discarded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggInit {
    #[default]
    Random,
    PretrainedReuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    /// Transformer-aggregator depth (parade_transf only), 2..=6.
    #[serde(default = "default_agg_layers")]
    pub aggregator_layers: usize,
    #[serde(default = "default_agg_heads")]
    pub aggregator_heads: usize,
    /// Aggregator width; `None` means the encoder width (no projection).
    #[serde(default)]
    pub aggregator_dim: Option<usize>,
    #[serde(default)]
    pub aggregator_ff_dim: Option<usize>,
    /// Feed contextualized query vectors into the aggregator (parade_transf).
    #[serde(default)]
    pub feed_query: bool,
    #[serde(default)]
    pub init: AggInit,
    /// Gaussian kernels `(mu, sigma)` for the KNRM head; `None` selects the
    /// standard 11-kernel bank.
    #[serde(default)]
    pub knrm_kernels: Option<Vec<(f64, f64)>>,
}

fn default_agg_layers() -> usize {
    2
}

fn default_agg_heads() -> usize {
    2
}

impl AggregatorConfig {
    pub fn plain(kind: AggregatorKind) -> AggregatorConfig {
        AggregatorConfig {
            kind,
            aggregator_layers: default_agg_layers(),
            aggregator_heads: default_agg_heads(),
            aggregator_dim: None,
            aggregator_ff_dim: None,
            feed_query: false,
            init: AggInit::Random,
            knrm_kernels: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feed_query && self.kind != AggregatorKind::ParadeTransf {
            return Err(Error::InvalidConfig(
                "feed_query is only valid for parade_transf".into(),
            ));
        }
        if self.kind == AggregatorKind::ParadeTransf
            && !(2..=6).contains(&self.aggregator_layers)
        {
            return Err(Error::InvalidConfig(format!(
                "aggregator_layers must be in 2..=6, got {}",
                self.aggregator_layers
            )));
        }
        if let Some(kernels) = &self.knrm_kernels {
            if kernels.is_empty() {
                return Err(Error::EmptyKernelList);
            }
            if let Some(&(_, sigma)) = kernels.iter().find(|&&(_, s)| s <= 0.0) {
                return Err(Error::NonPositiveSigma(sigma));
            }
        }
        Ok(())
    }
}

/// The standard KNRM kernel bank: one exact-match kernel plus ten soft
/// bins across [-1, 1].
pub fn default_knrm_kernels() -> Vec<(f64, f64)> {
    let mut kernels = vec![(1.0, 1e-3)];
    let mut mu = 0.9;
    for _ in 0..10 {
        kernels.push((mu, 0.1));
        mu -= 0.2;
    }
    kernels
}

/// A fully connected scalar prediction head.
pub struct LinearHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearHead {
    pub fn init(
        in_dim: usize,
        registry: &mut Params,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> LinearHead {
        LinearHead {
            weight: registry.register(
                format!("{prefix}.weight"),
                Tensor::randn(&[in_dim, 1], INIT_STD, rng),
            ),
            bias: registry.register(format!("{prefix}.bias"), Tensor::param(&[1], vec![0.0])),
        }
    }

    /// `[r, in_dim] -> [r, 1]`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

/// Vanilla single-chunk score: `F(cls)` of the first (only) chunk.
pub fn score_first_p(encoded: &EncodedChunk, head: &LinearHead) -> Result<Tensor> {
    head.apply(&encoded.cls_vector)?.reshape(&[1])
}

/// Whole-document score over a single long sparse-attention encode; the
/// prediction rule is identical to the vanilla ranker.
pub fn score_long_p(encoded: &EncodedChunk, head: &LinearHead) -> Result<Tensor> {
    score_first_p(encoded, head)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxSumMode {
    Max,
    Sum,
}

/// Per-chunk scores `F(cls_i)` reduced by max or sum.
pub fn score_max_sum(cls: &ClsSet, head: &LinearHead, mode: MaxSumMode) -> Result<Tensor> {
    let per_chunk = head.apply(&cls.cls_vectors)?; // [m, 1]
    match mode {
        MaxSumMode::Max => per_chunk.max_axis(0)?.reshape(&[1]),
        MaxSumMode::Sum => per_chunk.sum_axis(0)?.reshape(&[1]),
    }
}

/// `F` of the mean `[CLS]` vector.
pub fn score_avg_p(cls: &ClsSet, head: &LinearHead) -> Result<Tensor> {
    let d = cls.cls_vectors.shape()[1];
    let mean = cls.cls_vectors.mean_axis(0)?.reshape(&[1, d])?;
    head.apply(&mean)?.reshape(&[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParadeSimpleMode {
    Avg,
    Max,
    Attn,
}

/// Softmax attention weights over chunks from the learnable vector `C`:
/// `softmax(C . cls_1, ..., C . cls_m)`, shape `[m, 1]`.
pub fn parade_attention_weights(cls: &ClsSet, c_vector: &Tensor) -> Result<Tensor> {
    let logits = cls.cls_vectors.matmul(c_vector)?; // [m, 1]
    logits.softmax(0)
}

/// The simple PARADE poolers: mean, element-wise max, or attention-weighted
/// sum of the chunk `[CLS]` vectors, followed by `F`.
pub fn score_parade_simple(
    cls: &ClsSet,
    head: &LinearHead,
    mode: ParadeSimpleMode,
    c_vector: Option<&Tensor>,
) -> Result<Tensor> {
    let d = cls.cls_vectors.shape()[1];
    let pooled = match mode {
        ParadeSimpleMode::Avg => cls.cls_vectors.mean_axis(0)?.reshape(&[1, d])?,
        ParadeSimpleMode::Max => cls.cls_vectors.max_axis(0)?.reshape(&[1, d])?,
        ParadeSimpleMode::Attn => {
            let c = c_vector.ok_or(Error::InvalidConfig(
                "parade attention needs the C vector".into(),
            ))?;
            let weights = parade_attention_weights(cls, c)?; // [m, 1]
            weights.transpose2()?.matmul(&cls.cls_vectors)? // [1, d]
        }
    };
    head.apply(&pooled)?.reshape(&[1])
}

/// The transformer aggregator: its own layer stack and position embeddings,
/// but no token-embedding table. Consumes `[C, cls_1..cls_m]`, or
/// `[C, P(q_1), ..., P(q_q), cls_1..cls_m]` when queries are fed, and
/// scores the last-layer representation of row 0 through `F`.
pub struct AggregatorTransformer {
    pub heads: usize,
    c_vector: Tensor,
    position_embedding: Tensor,
    emb_gain: Tensor,
    emb_bias: Tensor,
    /// Projection applied to incoming cls vectors when widths differ.
    cls_proj: Option<Tensor>,
    /// Projection `P` applied to incoming query vectors when widths differ.
    query_proj: Option<Tensor>,
    layers: Vec<TransformerLayer>,
}

impl AggregatorTransformer {
    /// `encoder_dim` is the width of incoming vectors; `agg_dim` the
    /// aggregator's own width. Projections exist only when they differ.
    pub fn init(
        config: &AggregatorConfig,
        encoder_dim: usize,
        max_positions: usize,
        registry: &mut Params,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<AggregatorTransformer> {
        config.validate()?;
        let agg_dim = config.aggregator_dim.unwrap_or(encoder_dim);
        let ff_dim = config.aggregator_ff_dim.unwrap_or(agg_dim * 2);
        if agg_dim == 0 || !agg_dim.is_multiple_of(config.aggregator_heads) {
            return Err(Error::InvalidConfig(format!(
                "aggregator_dim {agg_dim} must be a positive multiple of heads {}",
                config.aggregator_heads
            )));
        }
        let project = agg_dim != encoder_dim;
        let c_vector = registry.register(
            format!("{prefix}.c_vector"),
            Tensor::randn(&[1, agg_dim], INIT_STD, rng),
        );
        let position_embedding = registry.register(
            format!("{prefix}.position_embedding"),
            Tensor::randn(&[max_positions, agg_dim], INIT_STD, rng),
        );
        let emb_gain = registry.register(
            format!("{prefix}.emb_gain"),
            Tensor::param(&[agg_dim], vec![1.0; agg_dim]),
        );
        let emb_bias = registry.register(
            format!("{prefix}.emb_bias"),
            Tensor::param(&[agg_dim], vec![0.0; agg_dim]),
        );
        let cls_proj = project.then(|| {
            registry.register(
                format!("{prefix}.cls_proj"),
                Tensor::randn(&[encoder_dim, agg_dim], INIT_STD, rng),
            )
        });
        let query_proj = (project && config.feed_query).then(|| {
            registry.register(
                format!("{prefix}.query_proj"),
                Tensor::randn(&[encoder_dim, agg_dim], INIT_STD, rng),
            )
        });
        let layers = (0..config.aggregator_layers)
            .map(|l| {
                TransformerLayer::init(agg_dim, ff_dim, registry, &format!("{prefix}.layer{l}"), rng)
            })
            .collect();
        Ok(AggregatorTransformer {
            heads: config.aggregator_heads,
            c_vector,
            position_embedding,
            emb_gain,
            emb_bias,
            cls_proj,
            query_proj,
            layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Copy transformer layers from an encoder snapshot (parameters named
    /// `{source_prefix}.layer{l}.{field}`), discarding everything else of
    /// the source (embedding tables in particular). Position embeddings,
    /// `C`, and projections stay as initialized.
    pub fn reuse_encoder_layers(
        &self,
        snapshot: &[TensorData],
        source_prefix: &str,
    ) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            for field in TransformerLayer::field_names() {
                let name = format!("{source_prefix}.layer{l}.{field}");
                let source = snapshot
                    .iter()
                    .find(|t| t.name == name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                let target = layer.field(field);
                if target.shape() != source.shape {
                    return Err(Error::Checkpoint(format!(
                        "cannot reuse {name}: shape {:?} vs {:?}",
                        source.shape,
                        target.shape()
                    )));
                }
                target.set_data(source.data.clone());
            }
        }
        Ok(())
    }
}

/// Eq.-style transformer aggregation of chunk `[CLS]` vectors, optionally
/// with contextualized query vectors prepended. The aggregator's PAD mask
/// excludes padded query rows from attention.
pub fn score_parade_transformer(
    cls: &ClsSet,
    aggregator: &AggregatorTransformer,
    head: &LinearHead,
    feed_query: bool,
) -> Result<Tensor> {
    let m = cls.num_chunks();
    let mut rows: Vec<Tensor> = vec![aggregator.c_vector.clone()];
    let mut mask: Vec<bool> = vec![true];

    if feed_query {
        let query = cls
            .query_vectors
            .as_ref()
            .ok_or(Error::MissingQueryVectors)?;
        let q = query.shape()[0];
        let projected = match &aggregator.query_proj {
            Some(p) => query.matmul(p)?,
            None => query.clone(),
        };
        rows.push(projected);
        match &cls.query_mask {
            Some(qm) => {
                if qm.len() != q {
                    return Err(Error::ShapeMismatch {
                        op: "score_parade_transformer",
                        detail: format!("query mask length {} vs {q}", qm.len()),
                    });
                }
                mask.extend(qm.iter().copied());
            }
            None => mask.extend(std::iter::repeat_n(true, q)),
        }
    }

    let cls_in = match &aggregator.cls_proj {
        Some(p) => cls.cls_vectors.matmul(p)?,
        None => cls.cls_vectors.clone(),
    };
    rows.push(cls_in);
    mask.extend(std::iter::repeat_n(true, m));

    let x = Tensor::concat(&rows, 0)?;
    let n = x.shape()[0];
    let pos = aggregator.position_embedding.slice_rows(0, n)?;
    let mut x = x
        .add(&pos)?
        .layer_norm(1, LN_EPS)?
        .mul(&aggregator.emb_gain)?
        .add(&aggregator.emb_bias)?;

    let mut allow = vec![true; n * n];
    for j in 0..n {
        if !mask[j] {
            for i in 0..n {
                allow[i * n + j] = false;
            }
        }
    }
    let allow = Rc::new(allow);
    for layer in &aggregator.layers {
        x = layer.forward(&x, &allow, aggregator.heads, Ok)?;
    }
    head.apply(&x.slice_rows(0, 1)?)?.reshape(&[1])
}

/// KNRM soft-match features: cosine similarities between query vectors
/// (`[q, d]`) and all document token vectors across chunks, pooled through
/// Gaussian kernels, with per-kernel log-sum features. Returns `[1, K]`.
pub fn knrm_features(
    doc_token_vectors: &[Tensor],
    query_vectors: &Tensor,
    kernels: &[(f64, f64)],
) -> Result<Tensor> {
    if kernels.is_empty() {
        return Err(Error::EmptyKernelList);
    }
    if let Some(&(_, sigma)) = kernels.iter().find(|&&(_, s)| s <= 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    if doc_token_vectors.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "knrm_features",
            detail: "no document token vectors".into(),
        });
    }
    let doc_all = if doc_token_vectors.len() == 1 {
        doc_token_vectors[0].clone()
    } else {
        Tensor::concat(doc_token_vectors, 0)?
    };
    let sims = Tensor::cosine_sim(query_vectors, &doc_all)?; // [q, n]
    let mut features = Vec::with_capacity(kernels.len());
    for &(mu, sigma) in kernels {
        let z = sims.add_scalar(-mu);
        let sq = z.mul(&z)?.scale(-1.0 / (2.0 * sigma * sigma));
        let pooled = sq.exp().sum_axis(1)?; // [q] soft term frequencies
        let feature = pooled.add_scalar(1e-10).ln()?.sum_all(); // [1]
        features.push(feature.reshape(&[1, 1])?);
    }
    Tensor::concat(&features, 1)
}

/// CEDR-style KNRM scoring: kernel features through a linear head.
pub fn score_cedr_knrm(
    doc_token_vectors: &[Tensor],
    query_vectors: &Tensor,
    kernels: &[(f64, f64)],
    head: &LinearHead,
) -> Result<Tensor> {
    let features = knrm_features(doc_token_vectors, query_vectors, kernels)?;
    head.apply(&features)?.reshape(&[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cls_set(rows: &[&[f64]]) -> ClsSet {
        let m = rows.len();
        let d = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ClsSet {
            cls_vectors: Tensor::param(&[m, d], data),
            query_vectors: None,
            query_mask: None,
        }
    }

    fn head_with(weight: Vec<f64>, bias: f64, registry: &mut Params) -> LinearHead {
        let d = weight.len();
        LinearHead {
            weight: registry.register("head.weight", Tensor::param(&[d, 1], weight)),
            bias: registry.register("head.bias", Tensor::param(&[1], vec![bias])),
        }
    }

    #[test]
    fn zero_head_scores_zero() {
        let mut reg = Params::new();
        let head = head_with(vec![0.0, 0.0], 0.0, &mut reg);
        let cls = cls_set(&[&[3.0, -1.0], &[5.0, 2.0]]);
        for mode in [MaxSumMode::Max, MaxSumMode::Sum] {
            assert_eq!(score_max_sum(&cls, &head, mode).unwrap().item().unwrap(), 0.0);
        }
        assert_eq!(score_avg_p(&cls, &head).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn max_and_sum_arithmetic() {
        // One-dimensional cls values with identity head: per-chunk scores
        // are the values themselves.
        let mut reg = Params::new();
        let head = head_with(vec![1.0], 0.0, &mut reg);
        let cls = cls_set(&[&[0.2], &[0.9], &[0.4]]);
        let max = score_max_sum(&cls, &head, MaxSumMode::Max).unwrap();
        let sum = score_max_sum(&cls, &head, MaxSumMode::Sum).unwrap();
        assert!((max.item().unwrap() - 0.9).abs() < 1e-15);
        assert!((sum.item().unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn single_chunk_max_equals_sum() {
        let mut reg = Params::new();
        let head = head_with(vec![0.3, -0.7], 0.1, &mut reg);
        let cls = cls_set(&[&[1.0, 2.0]]);
        let max = score_max_sum(&cls, &head, MaxSumMode::Max).unwrap().item().unwrap();
        let sum = score_max_sum(&cls, &head, MaxSumMode::Sum).unwrap().item().unwrap();
        assert_eq!(max, sum);
    }

    #[test]
    fn avg_of_identical_vectors_is_single_score() {
        let mut reg = Params::new();
        let head = head_with(vec![0.5, 1.5], -0.25, &mut reg);
        let v = [0.4, -1.2];
        let cls = cls_set(&[&v, &v, &v]);
        let avg = score_avg_p(&cls, &head).unwrap().item().unwrap();
        let single = score_avg_p(&cls_set(&[&v]), &head).unwrap().item().unwrap();
        assert!((avg - single).abs() < 1e-15);
    }

    #[test]
    fn avg_of_opposite_vectors_cancels() {
        let mut reg = Params::new();
        let head = head_with(vec![2.0, 3.0], 0.0, &mut reg);
        let cls = cls_set(&[&[1.0, -2.0], &[-1.0, 2.0]]);
        assert!(score_avg_p(&cls, &head).unwrap().item().unwrap().abs() < 1e-15);
    }

    #[test]
    fn parade_attention_weight_of_single_chunk_is_one() {
        let cls = cls_set(&[&[0.3, 0.4]]);
        let c = Tensor::param(&[2, 1], vec![1.0, -1.0]);
        let w = parade_attention_weights(&cls, &c).unwrap();
        assert_eq!(w.data(), vec![1.0]);
    }

    #[test]
    fn parade_attention_zero_c_is_uniform() {
        let cls = cls_set(&[&[1.0, 0.0], &[0.0, 1.0], &[5.0, 5.0], &[-1.0, 3.0]]);
        let c = Tensor::param(&[2, 1], vec![0.0, 0.0]);
        let w = parade_attention_weights(&cls, &c).unwrap();
        for v in w.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn parade_attention_weights_sum_to_one() {
        let cls = cls_set(&[&[1.5, -0.5], &[0.1, 0.9], &[2.0, 2.0]]);
        let c = Tensor::param(&[2, 1], vec![0.7, -1.3]);
        let w = parade_attention_weights(&cls, &c).unwrap();
        let data = w.data();
        assert!(data.iter().all(|&v| v >= 0.0));
        assert!((data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parade_max_pools_elementwise() {
        let mut reg = Params::new();
        let head = head_with(vec![1.0, 1.0], 0.0, &mut reg);
        let cls = cls_set(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let score = score_parade_simple(&cls, &head, ParadeSimpleMode::Max, None).unwrap();
        // pooled = [1, 2], identity-sum head -> 3
        assert!((score.item().unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn parade_transformer_input_length_is_one_plus_q_plus_m() {
        let d = 4;
        let (q, m) = (3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut reg = Params::new();
        let config = AggregatorConfig {
            feed_query: true,
            ..AggregatorConfig::plain(AggregatorKind::ParadeTransf)
        };
        let head = LinearHead::init(d, &mut reg, "head", &mut rng);

        let cls = ClsSet {
            cls_vectors: Tensor::param(&[m, d], vec![0.1; m * d]),
            query_vectors: Some(Tensor::param(&[q, d], vec![0.2; q * d])),
            query_mask: Some(vec![true, true, false]),
        };

        // Exactly 1 + q + m positions suffice...
        let mut reg_ok = Params::new();
        let agg =
            AggregatorTransformer::init(&config, d, 1 + q + m, &mut reg_ok, "agg", &mut rng)
                .unwrap();
        assert!(score_parade_transformer(&cls, &agg, &head, true).is_ok());

        // ...and one fewer is an error, pinning the input composition.
        let mut reg_short = Params::new();
        let short =
            AggregatorTransformer::init(&config, d, q + m, &mut reg_short, "agg", &mut rng)
                .unwrap();
        assert!(score_parade_transformer(&cls, &short, &head, true).is_err());
    }

    #[test]
    fn feed_query_without_vectors_is_an_error() {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut reg = Params::new();
        let config = AggregatorConfig {
            feed_query: true,
            ..AggregatorConfig::plain(AggregatorKind::ParadeTransf)
        };
        let agg = AggregatorTransformer::init(&config, d, 8, &mut reg, "agg", &mut rng).unwrap();
        let head = LinearHead::init(d, &mut reg, "head", &mut rng);
        let cls = ClsSet {
            cls_vectors: Tensor::param(&[2, d], vec![0.1; 2 * d]),
            query_vectors: None,
            query_mask: None,
        };
        assert!(matches!(
            score_parade_transformer(&cls, &agg, &head, true),
            Err(Error::MissingQueryVectors)
        ));
    }

    #[test]
    fn parade_transformer_is_deterministic() {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut reg = Params::new();
        let config = AggregatorConfig::plain(AggregatorKind::ParadeTransf);
        let agg = AggregatorTransformer::init(&config, d, 8, &mut reg, "agg", &mut rng).unwrap();
        let head = LinearHead::init(d, &mut reg, "head", &mut rng);
        let cls = ClsSet {
            cls_vectors: Tensor::param(&[3, d], vec![0.25; 3 * d]),
            query_vectors: None,
            query_mask: None,
        };
        let a = score_parade_transformer(&cls, &agg, &head, false).unwrap();
        let b = score_parade_transformer(&cls, &agg, &head, false).unwrap();
        assert_eq!(a.item().unwrap(), b.item().unwrap());
    }

    #[test]
    fn knrm_matching_kernel_dominates() {
        let query = Tensor::param(&[1, 2], vec![1.0, 0.0]);
        let doc = Tensor::param(&[1, 2], vec![2.0, 0.0]); // cosine 1 with query
        let kernels = [(1.0, 0.1), (0.0, 0.1)];
        let features = knrm_features(&[doc], &query, &kernels).unwrap();
        let d = features.data();
        assert!(d[0] > d[1] + 10.0, "match kernel {} vs off kernel {}", d[0], d[1]);
    }

    #[test]
    fn knrm_rejects_empty_kernels() {
        let query = Tensor::param(&[1, 2], vec![1.0, 0.0]);
        let doc = Tensor::param(&[1, 2], vec![0.0, 1.0]);
        assert!(matches!(
            knrm_features(&[doc], &query, &[]),
            Err(Error::EmptyKernelList)
        ));
    }

    #[test]
    fn knrm_orthogonal_vectors_have_zero_similarity() {
        // All-orthogonal query and doc: every similarity is 0, so every
        // kernel sees the same input and features depend only on mu.
        let query = Tensor::param(&[1, 2], vec![1.0, 0.0]);
        let doc = Tensor::param(&[2, 2], vec![0.0, 1.0, 0.0, 2.0]);
        let f_zero = knrm_features(&[doc.clone()], &query, &[(0.0, 0.5)]).unwrap();
        // At mu=0 every pooled value is exp(0)=1 per doc token: sum = 2.
        assert!((f_zero.data()[0] - (2.0f64 + 1e-10).ln()).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let mut bad_feed = AggregatorConfig::plain(AggregatorKind::MaxP);
        bad_feed.feed_query = true;
        assert!(bad_feed.validate().is_err());

        let mut bad_layers = AggregatorConfig::plain(AggregatorKind::ParadeTransf);
        bad_layers.aggregator_layers = 7;
        assert!(bad_layers.validate().is_err());

        let mut bad_sigma = AggregatorConfig::plain(AggregatorKind::CedrKnrm);
        bad_sigma.knrm_kernels = Some(vec![(1.0, 0.0)]);
        assert!(matches!(bad_sigma.validate(), Err(Error::NonPositiveSigma(_))));
    }

    #[test]
    fn reuse_copies_encoder_layers() {
        use crate::encoder::{AttentionPattern, EncoderConfig, EncoderParams};
        let cfg = EncoderConfig {
            layers: 2,
            heads: 2,
            model_dim: 4,
            ff_dim: 8,
            max_seq: 8,
            attention: AttentionPattern::dense(),
            dropout_p: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut enc_reg = Params::new();
        EncoderParams::init(&cfg, 10, &mut enc_reg, "encoder", &mut rng).unwrap();
        let snapshot = enc_reg.snapshot();

        let mut agg_reg = Params::new();
        let config = AggregatorConfig {
            aggregator_ff_dim: Some(8),
            ..AggregatorConfig::plain(AggregatorKind::ParadeTransf)
        };
        let agg =
            AggregatorTransformer::init(&config, 4, 8, &mut agg_reg, "aggregator", &mut rng)
                .unwrap();
        agg.reuse_encoder_layers(&snapshot, "encoder").unwrap();

        let source = snapshot
            .iter()
            .find(|t| t.name == "encoder.layer1.wq")
            .unwrap();
        let copied = agg_reg.get("aggregator.layer1.wq").unwrap();
        assert_eq!(copied.data(), source.data);
    }
}
