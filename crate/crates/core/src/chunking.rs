//! Document partitioning into per-chunk model inputs.
//!
//! Two schemes: greedy partitioning into disjoint contiguous chunks, and a
//! sliding window with independent window/stride. Both cap the chunk count,
//! discarding trailing document tokens, and both feed [`assemble`], which
//! builds the `[CLS] query [SEP] chunk [SEP]` input sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::{TokenSeq, Vocab, CLS_ID, PAD_ID, SEP_ID};

/// Default document tokens per chunk: 512 minus a 32-token padded query
/// and three special tokens.
pub const DEFAULT_CHUNK_CAP: usize = 477;
/// Default chunk-count cap, truncating documents to 3 x 477 = 1431 tokens.
pub const DEFAULT_MAX_CHUNKS: usize = 3;
/// Default maximum model input length.
pub const DEFAULT_MAX_SEQ: usize = 512;

/// A half-open token range `[start, end)` into a document's [`TokenSeq`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    pub index: usize,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// How to split documents into chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChunkScheme {
    Greedy { chunk_cap: usize },
    Sliding { window: usize, stride: usize },
}

impl ChunkScheme {
    pub fn split(&self, doc: &TokenSeq, max_chunks: usize) -> Result<Vec<Chunk>> {
        match *self {
            ChunkScheme::Greedy { chunk_cap } => greedy_partition(doc, chunk_cap, max_chunks),
            ChunkScheme::Sliding { window, stride } => {
                sliding_window(doc, window, stride, max_chunks)
            }
        }
    }
}

/// Split a document into disjoint contiguous chunks of `chunk_cap` tokens
/// (the last may be shorter). Tokens beyond `chunk_cap * max_chunks` are
/// discarded.
pub fn greedy_partition(doc: &TokenSeq, chunk_cap: usize, max_chunks: usize) -> Result<Vec<Chunk>> {
    if chunk_cap == 0 || max_chunks == 0 {
        return Err(Error::InvalidConfig(
            "chunk_cap and max_chunks must be positive".into(),
        ));
    }
    let n = doc.len();
    if n == 0 {
        return Err(Error::EmptyDocument);
    }
    let limit = n.min(chunk_cap * max_chunks);
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < limit {
        let end = (start + chunk_cap).min(limit);
        chunks.push(Chunk {
            start,
            end,
            index: chunks.len(),
        });
        start = end;
    }
    Ok(chunks)
}

/// Split a document into possibly overlapping chunks: chunk `i` covers
/// `[i*stride, min(i*stride + window, n))`. Generation stops once a window
/// would start at or beyond the document end, or at `max_chunks`. Trailing
/// chunks may be shorter than the window; empty chunks are never emitted.
pub fn sliding_window(
    doc: &TokenSeq,
    window: usize,
    stride: usize,
    max_chunks: usize,
) -> Result<Vec<Chunk>> {
    if window == 0 {
        return Err(Error::ZeroWindow);
    }
    if stride == 0 {
        return Err(Error::ZeroStride);
    }
    if stride > window {
        return Err(Error::StrideExceedsWindow { stride, window });
    }
    let n = doc.len();
    if n == 0 {
        return Err(Error::EmptyDocument);
    }
    let mut chunks = Vec::new();
    let mut i = 0;
    while chunks.len() < max_chunks {
        let start = i * stride;
        if start >= n {
            break;
        }
        chunks.push(Chunk {
            start,
            end: (start + window).min(n),
            index: chunks.len(),
        });
        i += 1;
    }
    Ok(chunks)
}

/// The per-chunk model inputs for one query-document pair.
///
/// Every sequence is `[CLS] q [SEP] d_i [SEP]` with the query segment
/// identical across chunks; attention masks are false exactly on `[PAD]`
/// positions.
#[derive(Debug, Clone)]
pub struct ChunkedInput {
    pub sequences: Vec<Vec<u32>>,
    pub masks: Vec<Vec<bool>>,
    /// Padded query length (token count of the query segment).
    pub query_len: usize,
    /// Per-chunk document token ranges, matching the input chunks.
    pub doc_ranges: Vec<(usize, usize)>,
}

impl ChunkedInput {
    pub fn num_chunks(&self) -> usize {
        self.sequences.len()
    }

    /// Position of the first document token inside each sequence.
    pub fn doc_segment_start(&self) -> usize {
        1 + self.query_len + 1
    }

    /// Number of document tokens in chunk `i`.
    pub fn doc_segment_len(&self, i: usize) -> usize {
        self.sequences[i].len() - self.doc_segment_start() - 1
    }
}

/// Assemble per-chunk input sequences from an already-padded query and a
/// chunked document.
pub fn assemble(
    query: &TokenSeq,
    doc: &TokenSeq,
    chunks: &[Chunk],
    _vocab: &Vocab,
    max_seq: usize,
) -> Result<ChunkedInput> {
    if chunks.is_empty() {
        return Err(Error::EmptyChunkList);
    }
    let mut sequences = Vec::with_capacity(chunks.len());
    let mut masks = Vec::with_capacity(chunks.len());
    let mut doc_ranges = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let needed = 3 + query.len() + chunk.len();
        if needed > max_seq {
            return Err(Error::ChunkCapacity {
                chunk_index: chunk.index,
                needed,
                max_seq,
            });
        }
        let mut ids = Vec::with_capacity(needed);
        let mut mask = Vec::with_capacity(needed);
        ids.push(CLS_ID);
        mask.push(true);
        for &id in &query.ids {
            ids.push(id);
            mask.push(id != PAD_ID);
        }
        ids.push(SEP_ID);
        mask.push(true);
        for &id in &doc.ids[chunk.start..chunk.end] {
            ids.push(id);
            mask.push(id != PAD_ID);
        }
        ids.push(SEP_ID);
        mask.push(true);
        sequences.push(ids);
        masks.push(mask);
        doc_ranges.push((chunk.start, chunk.end));
    }
    Ok(ChunkedInput {
        sequences,
        masks,
        query_len: query.len(),
        doc_ranges,
    })
}

/// Assemble the single whole-document input used by long-input encoders:
/// `[CLS] q [SEP] d [SEP]` with the document truncated to
/// `chunk_cap * max_chunks` tokens.
pub fn assemble_long(
    query: &TokenSeq,
    doc: &TokenSeq,
    vocab: &Vocab,
    chunk_cap: usize,
    max_chunks: usize,
    max_seq: usize,
) -> Result<ChunkedInput> {
    let n = doc.len();
    if n == 0 {
        return Err(Error::EmptyDocument);
    }
    let limit = n.min(chunk_cap * max_chunks);
    let whole = Chunk {
        start: 0,
        end: limit,
        index: 0,
    };
    assemble(query, doc, &[whole], vocab, max_seq)
}
