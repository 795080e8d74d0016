//! A complete ranking model: encoder plus scoring head, driven by the
//! chunking pipeline. Scores one query-document pair as a differentiable
//! one-element tensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregators::{
    default_knrm_kernels, score_avg_p, score_cedr_knrm, score_first_p, score_long_p,
    score_max_sum, score_parade_simple, score_parade_transformer, AggInit, AggregatorConfig,
    AggregatorKind, AggregatorTransformer, ClsSet, LinearHead, MaxSumMode, ParadeSimpleMode,
};
use crate::blocks::INIT_STD;
use crate::chunking::{assemble, assemble_long, ChunkScheme, ChunkedInput};
use crate::encoder::{encode, EncodedChunk, EncoderConfig, EncoderParams, Phase};
use crate::error::{Error, Result};
use crate::tensor::{Params, Tensor, TensorData};
use crate::tokenize::{TokenSeq, Vocab, PAD_ID};

/// Query padding and document chunking geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub scheme: ChunkScheme,
    pub max_chunks: usize,
    pub max_query: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            scheme: ChunkScheme::Greedy {
                chunk_cap: crate::chunking::DEFAULT_CHUNK_CAP,
            },
            max_chunks: crate::chunking::DEFAULT_MAX_CHUNKS,
            max_query: 32,
        }
    }
}

impl ChunkingConfig {
    /// Longest possible assembled sequence under this geometry.
    pub fn max_sequence_len(&self, long_input: bool) -> usize {
        let chunk = match self.scheme {
            ChunkScheme::Greedy { chunk_cap } => chunk_cap,
            ChunkScheme::Sliding { window, .. } => window,
        };
        let doc = if long_input {
            let cap = match self.scheme {
                ChunkScheme::Greedy { chunk_cap } => chunk_cap,
                ChunkScheme::Sliding { window, .. } => window,
            };
            cap * self.max_chunks
        } else {
            chunk
        };
        3 + self.max_query + doc
    }

    pub fn chunk_cap(&self) -> usize {
        match self.scheme {
            ChunkScheme::Greedy { chunk_cap } => chunk_cap,
            ChunkScheme::Sliding { window, .. } => window,
        }
    }
}

/// A ranking model instance: all parameters plus the wiring between the
/// chunker, the encoder, and the configured aggregation head.
pub struct Ranker {
    pub encoder_config: EncoderConfig,
    pub agg_config: AggregatorConfig,
    pub chunking: ChunkingConfig,
    pub params: Params,
    encoder: EncoderParams,
    head: LinearHead,
    parade_c: Option<Tensor>,
    aggregator: Option<AggregatorTransformer>,
    kernels: Vec<(f64, f64)>,
}

impl Ranker {
    /// Build a freshly initialized model. All randomness comes from `seed`.
    pub fn new(
        encoder_config: EncoderConfig,
        agg_config: AggregatorConfig,
        chunking: ChunkingConfig,
        vocab_size: usize,
        seed: u64,
    ) -> Result<Ranker> {
        encoder_config.validate()?;
        agg_config.validate()?;
        let long_input = agg_config.kind == AggregatorKind::LongP;
        let needed = chunking.max_sequence_len(long_input);
        if encoder_config.max_seq < needed {
            return Err(Error::InvalidConfig(format!(
                "encoder max_seq {} is below the assembled sequence length {needed}",
                encoder_config.max_seq
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let encoder =
            EncoderParams::init(&encoder_config, vocab_size, &mut params, "encoder", &mut rng)?;

        let d = encoder_config.model_dim;
        let kernels = agg_config
            .knrm_kernels
            .clone()
            .unwrap_or_else(default_knrm_kernels);

        let head_dim = match agg_config.kind {
            AggregatorKind::CedrKnrm => kernels.len(),
            AggregatorKind::ParadeTransf => agg_config.aggregator_dim.unwrap_or(d),
            _ => d,
        };

        let parade_c = match agg_config.kind {
            AggregatorKind::ParadeAttn => Some(params.register(
                "aggregator.c_vector",
                Tensor::randn(&[d, 1], INIT_STD, &mut rng),
            )),
            _ => None,
        };

        let aggregator = match agg_config.kind {
            AggregatorKind::ParadeTransf => {
                let positions = 1 + chunking.max_query + chunking.max_chunks;
                Some(AggregatorTransformer::init(
                    &agg_config,
                    d,
                    positions,
                    &mut params,
                    "aggregator",
                    &mut rng,
                )?)
            }
            _ => None,
        };

        let head = LinearHead::init(head_dim, &mut params, "head", &mut rng);

        Ok(Ranker {
            encoder_config,
            agg_config,
            chunking,
            params,
            encoder,
            head,
            parade_c,
            aggregator,
            kernels,
        })
    }

    /// For `pretrained_reuse` aggregators: copy encoder layers from a
    /// previously trained checkpoint into the aggregator transformer.
    pub fn reuse_aggregator_from(&self, snapshot: &[TensorData]) -> Result<()> {
        match &self.aggregator {
            Some(agg) => agg.reuse_encoder_layers(snapshot, "encoder"),
            None => Err(Error::InvalidConfig(
                "model has no transformer aggregator to initialize".into(),
            )),
        }
    }

    pub fn wants_pretrained_aggregator(&self) -> bool {
        self.agg_config.kind == AggregatorKind::ParadeTransf
            && self.agg_config.init == AggInit::PretrainedReuse
    }

    /// Parameter tensors split into the main-transformer group and the
    /// rest (heads, C, projections, aggregator).
    pub fn param_groups(&self) -> (Vec<Tensor>, Vec<Tensor>) {
        let mut main = Vec::new();
        let mut other = Vec::new();
        for (name, tensor) in self.params.iter() {
            if name.starts_with("encoder.") {
                main.push(tensor.clone());
            } else {
                other.push(tensor.clone());
            }
        }
        (main, other)
    }

    /// Assemble the per-chunk inputs for one document under this model's
    /// geometry. FirstP models read only the first chunk.
    pub fn build_input(
        &self,
        query: &TokenSeq,
        doc: &TokenSeq,
        vocab: &Vocab,
    ) -> Result<ChunkedInput> {
        let max_seq = self.encoder_config.max_seq;
        match self.agg_config.kind {
            AggregatorKind::LongP => assemble_long(
                query,
                doc,
                vocab,
                self.chunking.chunk_cap(),
                self.chunking.max_chunks,
                max_seq,
            ),
            AggregatorKind::FirstP => {
                let mut chunks = self.chunking.scheme.split(doc, self.chunking.max_chunks)?;
                chunks.truncate(1);
                assemble(query, doc, &chunks, vocab, max_seq)
            }
            _ => {
                let chunks = self.chunking.scheme.split(doc, self.chunking.max_chunks)?;
                assemble(query, doc, &chunks, vocab, max_seq)
            }
        }
    }

    /// Score one query-document pair. `query` must already be padded to
    /// `chunking.max_query` tokens.
    pub fn score(
        &self,
        query: &TokenSeq,
        doc: &TokenSeq,
        vocab: &Vocab,
        phase: Phase,
    ) -> Result<Tensor> {
        if query.len() != self.chunking.max_query {
            return Err(Error::InvalidConfig(format!(
                "query must be padded to {} tokens, got {}",
                self.chunking.max_query,
                query.len()
            )));
        }
        let input = self.build_input(query, doc, vocab)?;
        self.score_input(&input, phase)
    }

    /// Score from pre-assembled chunk inputs.
    pub fn score_input(&self, input: &ChunkedInput, phase: Phase) -> Result<Tensor> {
        let query_len = input.query_len;
        let encode_chunk = |i: usize| -> Result<EncodedChunk> {
            let chunk_phase = match phase {
                Phase::Train { dropout_seed } => Phase::Train {
                    dropout_seed: dropout_seed.wrapping_add((i as u64) << 32),
                },
                Phase::Eval => Phase::Eval,
            };
            encode(
                &self.encoder_config,
                &self.encoder,
                &input.sequences[i],
                &input.masks[i],
                query_len,
                chunk_phase,
            )
        };

        match self.agg_config.kind {
            AggregatorKind::FirstP => {
                let encoded = encode_chunk(0)?;
                score_first_p(&encoded, &self.head)
            }
            AggregatorKind::LongP => {
                let encoded = encode_chunk(0)?;
                score_long_p(&encoded, &self.head)
            }
            AggregatorKind::CedrKnrm => {
                let mut doc_vectors = Vec::with_capacity(input.num_chunks());
                let mut query_vectors = None;
                let doc_start = input.doc_segment_start();
                for i in 0..input.num_chunks() {
                    let encoded = encode_chunk(i)?;
                    if i == 0 {
                        // Contextualized non-PAD query rows of chunk 0.
                        let real_q = input.masks[0][1..1 + query_len]
                            .iter()
                            .filter(|&&m| m)
                            .count();
                        if real_q == 0 {
                            return Err(Error::InvalidConfig(
                                "query has no real tokens".into(),
                            ));
                        }
                        query_vectors =
                            Some(encoded.token_vectors.slice_rows(1, 1 + real_q)?);
                    }
                    let len = input.doc_segment_len(i);
                    if len > 0 {
                        doc_vectors.push(
                            encoded
                                .token_vectors
                                .slice_rows(doc_start, doc_start + len)?,
                        );
                    }
                }
                let query_vectors = query_vectors.expect("chunk 0 always encoded");
                score_cedr_knrm(&doc_vectors, &query_vectors, &self.kernels, &self.head)
            }
            kind => {
                let mut cls_rows = Vec::with_capacity(input.num_chunks());
                let mut query_vectors = None;
                let mut query_mask = None;
                for i in 0..input.num_chunks() {
                    let encoded = encode_chunk(i)?;
                    if i == 0 && self.agg_config.feed_query {
                        query_vectors =
                            Some(encoded.token_vectors.slice_rows(1, 1 + query_len)?);
                        query_mask = Some(input.masks[0][1..1 + query_len].to_vec());
                    }
                    cls_rows.push(encoded.cls_vector);
                }
                let cls_vectors = if cls_rows.len() == 1 {
                    cls_rows.pop().expect("one chunk")
                } else {
                    Tensor::concat(&cls_rows, 0)?
                };
                let cls = ClsSet {
                    cls_vectors,
                    query_vectors,
                    query_mask,
                };
                match kind {
                    AggregatorKind::MaxP => score_max_sum(&cls, &self.head, MaxSumMode::Max),
                    AggregatorKind::SumP => score_max_sum(&cls, &self.head, MaxSumMode::Sum),
                    AggregatorKind::AvgP => score_avg_p(&cls, &self.head),
                    AggregatorKind::ParadeAvg => {
                        score_parade_simple(&cls, &self.head, ParadeSimpleMode::Avg, None)
                    }
                    AggregatorKind::ParadeMax => {
                        score_parade_simple(&cls, &self.head, ParadeSimpleMode::Max, None)
                    }
                    AggregatorKind::ParadeAttn => score_parade_simple(
                        &cls,
                        &self.head,
                        ParadeSimpleMode::Attn,
                        self.parade_c.as_ref(),
                    ),
                    AggregatorKind::ParadeTransf => {
                        let agg = self.aggregator.as_ref().expect("built in new()");
                        score_parade_transformer(
                            &cls,
                            agg,
                            &self.head,
                            self.agg_config.feed_query,
                        )
                    }
                    _ => unreachable!("handled above"),
                }
            }
        }
    }
}

/// Pad or truncate a raw query token sequence to the model's query length.
pub fn pad_query(query: &TokenSeq, chunking: &ChunkingConfig) -> TokenSeq {
    let keep = query.len().min(chunking.max_query);
    let mut ids: Vec<u32> = query.ids[..keep].to_vec();
    let mut offsets: Vec<(usize, usize)> = query.offsets[..keep].to_vec();
    let tail = offsets.last().map(|&(_, e)| e).unwrap_or(0);
    while ids.len() < chunking.max_query {
        ids.push(PAD_ID);
        offsets.push((tail, tail));
    }
    TokenSeq { ids, offsets }
}
