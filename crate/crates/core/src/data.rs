//! Corpus, query, and candidate file handling.
//!
//! Documents and queries live in tab-separated files (`id <TAB> text`, one
//! per line); qrels and candidate/run files use the TREC formats handled
//! by [`crate::evaluation`]. Text is normalized once at load so the token
//! stream and passage matching agree.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::{read_run, Judgments};
use crate::ranker::{pad_query, ChunkingConfig};
use crate::tokenize::{normalize_text, tokenize, TokenSeq, Vocab};
use crate::training::CandidateList;

/// Parse an `id <TAB> text` file, preserving line order.
pub fn read_id_text(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            detail: "expected `id<TAB>text`".into(),
        })?;
        items.push((id.to_string(), body.to_string()));
    }
    Ok(items)
}

pub fn write_id_text(path: &Path, items: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (id, text) in items {
        out.push_str(id);
        out.push('\t');
        out.push_str(text);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Candidate lists from a TREC run file.
pub fn read_candidates(path: &Path) -> Result<Vec<CandidateList>> {
    read_run(path)?
        .into_iter()
        .map(|ranked| {
            let entries = ranked.entries().to_vec();
            CandidateList::new(ranked.query_id, entries)
        })
        .collect()
}

/// A fully loaded and tokenized dataset.
pub struct Collection {
    /// Tokenized documents over normalized text.
    pub docs: BTreeMap<String, TokenSeq>,
    /// Normalized document texts (for passage matching).
    pub doc_texts: BTreeMap<String, String>,
    /// Queries in file order, padded to the configured query length.
    pub queries: Vec<(String, TokenSeq)>,
    pub judgments: Judgments,
    pub candidates: Vec<CandidateList>,
}

impl Collection {
    pub fn load(
        vocab: &Vocab,
        chunking: &ChunkingConfig,
        corpus_path: &Path,
        queries_path: &Path,
        qrels_path: &Path,
        candidates_path: &Path,
    ) -> Result<Collection> {
        let mut docs = BTreeMap::new();
        let mut doc_texts = BTreeMap::new();
        for (id, text) in read_id_text(corpus_path)? {
            let normalized = normalize_text(&text);
            docs.insert(id.clone(), tokenize(vocab, &normalized));
            doc_texts.insert(id, normalized);
        }
        let queries = read_id_text(queries_path)?
            .into_iter()
            .map(|(id, text)| {
                let tokens = tokenize(vocab, &normalize_text(&text));
                (id, pad_query(&tokens, chunking))
            })
            .collect();
        let judgments = Judgments::read_qrels(qrels_path)?;
        let candidates = read_candidates(candidates_path)?;
        Ok(Collection {
            docs,
            doc_texts,
            queries,
            judgments,
            candidates,
        })
    }
}
