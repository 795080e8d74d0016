//! Synthetic ranking corpora with relevance planted at controlled
//! chunk positions.
//!
//! Each query is a small combination of words from a shared pattern pool;
//! its one relevant document embeds exactly those words (in order) as a
//! passage, placed so the passage's token span falls entirely inside a
//! chunk drawn from the configured position distribution. Negative
//! documents embed decoy passages built from disjoint pattern words at
//! positions drawn from the same distribution, so position itself carries
//! no label signal. Documents are plain space-separated words; a
//! vocabulary is trained on the generated lexicon first so that token
//! positions are exact by construction.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{write_run, Judgments, RankedList};
use crate::tokenize::{build_vocab, tokenize, Vocab};
use crate::training::CandidateList;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_queries: usize,
    /// Candidates per query (one relevant, the rest negatives).
    pub docs_per_query: usize,
    /// Words per query pattern.
    #[serde(default = "default_pattern_words")]
    pub pattern_words: usize,
    /// Shared pool of pattern words queries draw combinations from.
    #[serde(default = "default_pattern_pool")]
    pub pattern_pool: usize,
    /// Pool of filler words.
    #[serde(default = "default_noise_pool")]
    pub noise_pool: usize,
    /// Maximum filler word length in characters (lengths vary 1..=max).
    #[serde(default = "default_word_len")]
    pub max_word_len: usize,
    /// Document length bounds in tokens.
    pub doc_tokens_min: usize,
    pub doc_tokens_max: usize,
    /// Chunk size (tokens) that positions are planted against.
    pub chunk_size: usize,
    /// Probability mass per chunk ordinal 1..=K for the relevant passage
    /// position; must sum to 1.
    pub position_distribution: Vec<f64>,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    pub seed: u64,
}

fn default_pattern_words() -> usize {
    3
}
fn default_pattern_pool() -> usize {
    50
}
fn default_noise_pool() -> usize {
    300
}
fn default_word_len() -> usize {
    6
}
fn default_vocab_size() -> usize {
    500
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 || self.docs_per_query < 2 {
            return Err(Error::InvalidConfig(
                "need at least one query and two docs per query".into(),
            ));
        }
        let mass: f64 = self.position_distribution.iter().sum();
        if self.position_distribution.is_empty() || (mass - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "position distribution must sum to 1, got {mass}"
            )));
        }
        if self.position_distribution.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig(
                "position distribution must be non-negative".into(),
            ));
        }
        if self.doc_tokens_min > self.doc_tokens_max {
            return Err(Error::InvalidConfig(
                "doc_tokens_min exceeds doc_tokens_max".into(),
            ));
        }
        let deepest = self
            .position_distribution
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i + 1)
            .max()
            .unwrap_or(1);
        if self.doc_tokens_min < deepest * self.chunk_size {
            return Err(Error::InfeasiblePlacement(format!(
                "documents of {} tokens cannot host chunk {deepest} of size {}",
                self.doc_tokens_min, self.chunk_size
            )));
        }
        if self.pattern_words > self.pattern_pool {
            return Err(Error::InvalidConfig(
                "pattern_words exceeds pattern_pool".into(),
            ));
        }
        Ok(())
    }
}

/// A generated dataset, in memory.
pub struct SyntheticData {
    pub vocab: Vocab,
    pub corpus: Vec<(String, String)>,
    pub queries: Vec<(String, String)>,
    pub judgments: Judgments,
    pub candidates: Vec<CandidateList>,
}

impl SyntheticData {
    /// Write the bundle under `dir`: `corpus.tsv`, `queries.tsv`,
    /// `qrels.txt`, `candidates.run`, `vocab.txt`.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        crate::data::write_id_text(&dir.join("corpus.tsv"), &self.corpus)?;
        crate::data::write_id_text(&dir.join("queries.tsv"), &self.queries)?;
        self.judgments.write_qrels(&dir.join("qrels.txt"))?;
        let runs: Vec<RankedList> = self
            .candidates
            .iter()
            .map(|c| RankedList::new(c.query_id.clone(), c.entries.clone()))
            .collect::<Result<_>>()?;
        write_run(&dir.join("candidates.run"), &runs, "generator")?;
        self.vocab.write_to(&dir.join("vocab.txt"))
    }
}

/// Distinct random lowercase words with lengths `1..=max_len`.
fn make_lexicon(
    rng: &mut ChaCha8Rng,
    count: usize,
    max_len: usize,
    taken: &mut HashSet<String>,
) -> Vec<String> {
    let mut words = Vec::with_capacity(count);
    while words.len() < count {
        let len = rng.random_range(1..=max_len);
        let word: String = (0..len)
            .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
            .collect();
        if taken.insert(word.clone()) {
            words.push(word);
        }
    }
    words
}

struct WordBank {
    words: Vec<String>,
    token_lens: Vec<usize>,
    /// Indices of words with token length 1 (always available: the
    /// lexicon contains single characters).
    unit_words: Vec<usize>,
    max_increment: usize,
}

impl WordBank {
    fn new(words: Vec<String>, vocab: &Vocab) -> WordBank {
        let token_lens: Vec<usize> = words.iter().map(|w| tokenize(vocab, w).len()).collect();
        let unit_words: Vec<usize> = token_lens
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(i, _)| i)
            .collect();
        let max_increment = token_lens.iter().max().copied().unwrap_or(1) + 1;
        WordBank {
            words,
            token_lens,
            unit_words,
            max_increment,
        }
    }
}

/// Incrementally built document with exact token accounting. Words are
/// joined by single spaces; each space tokenizes to exactly one token and
/// no vocabulary entry crosses a space, so the token count is the sum of
/// per-word token lengths plus the joints.
struct DocBuilder {
    text: String,
    tokens: usize,
}

impl DocBuilder {
    fn new() -> DocBuilder {
        DocBuilder {
            text: String::new(),
            tokens: 0,
        }
    }

    /// Token position the next appended word will start at.
    fn next_start(&self) -> usize {
        if self.tokens == 0 {
            0
        } else {
            self.tokens + 1
        }
    }

    fn push(&mut self, word: &str, token_len: usize) {
        if !self.text.is_empty() {
            self.text.push(' ');
            self.tokens += 1;
        }
        self.text.push_str(word);
        self.tokens += token_len;
    }
}

fn sample_chunk(distribution: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in distribution.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i + 1;
        }
    }
    distribution.len()
}

/// Generate a corpus, qrels, and candidate lists per the spec. Fully
/// deterministic in the seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut taken = HashSet::new();
    // Guarantee single-character filler words so any gap parity is
    // reachable when positioning passages.
    let mut noise_words: Vec<String> = ('a'..='z').map(|c| c.to_string()).collect();
    for w in &noise_words {
        taken.insert(w.clone());
    }
    noise_words.extend(make_lexicon(
        &mut rng,
        spec.noise_pool.saturating_sub(noise_words.len()),
        spec.max_word_len,
        &mut taken,
    ));
    let pattern_words = make_lexicon(&mut rng, spec.pattern_pool, spec.max_word_len, &mut taken);

    // Vocabulary trained on the lexicon; pattern words weighted like the
    // noise words so merges cover both.
    let mut vocab_lines: Vec<String> = Vec::new();
    for _ in 0..4 {
        vocab_lines.push(noise_words.join(" "));
        vocab_lines.push(pattern_words.join(" "));
    }
    let vocab = build_vocab(&vocab_lines, spec.vocab_size)?;

    let noise = WordBank::new(noise_words, &vocab);
    let patterns = WordBank::new(pattern_words, &vocab);

    // Token length of a k-word passage, including internal joints.
    let passage_tokens = |idxs: &[usize]| -> usize {
        idxs.iter().map(|&i| patterns.token_lens[i]).sum::<usize>() + idxs.len() - 1
    };

    let worst_passage =
        spec.pattern_words * patterns.token_lens.iter().max().copied().unwrap_or(1)
            + spec.pattern_words
            - 1;
    if worst_passage + noise.max_increment + 1 > spec.chunk_size {
        return Err(Error::InfeasiblePlacement(format!(
            "a {worst_passage}-token passage cannot be guaranteed inside a chunk of {}",
            spec.chunk_size
        )));
    }

    // Distinct query combinations from the pattern pool.
    let mut combos: HashSet<Vec<usize>> = HashSet::new();
    let pool: Vec<usize> = (0..patterns.words.len()).collect();
    let mut queries = Vec::with_capacity(spec.num_queries);
    let mut judgments = Judgments::new();
    let mut corpus = Vec::new();
    let mut candidates = Vec::new();

    for qi in 0..spec.num_queries {
        let combo = loop {
            let mut c: Vec<usize> = pool
                .choose_multiple(&mut rng, spec.pattern_words)
                .copied()
                .collect();
            c.sort_unstable();
            if combos.insert(c.clone()) {
                break c;
            }
        };
        let qid = format!("q{qi:04}");
        let query_text = combo
            .iter()
            .map(|&i| patterns.words[i].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        queries.push((qid.clone(), query_text));

        let mut entries = Vec::with_capacity(spec.docs_per_query);
        for dj in 0..spec.docs_per_query {
            let did = format!("d{qi:04}_{dj}");
            let is_positive = dj == 0;
            let words: Vec<usize> = if is_positive {
                combo.clone()
            } else {
                // Decoy pattern disjoint from the query's words.
                let others: Vec<usize> = pool
                    .iter()
                    .copied()
                    .filter(|i| !combo.contains(i))
                    .collect();
                others
                    .choose_multiple(&mut rng, spec.pattern_words)
                    .copied()
                    .collect()
            };
            let text = build_document(spec, &noise, &patterns, &words, passage_tokens(&words), &mut rng)?;
            if is_positive {
                judgments.insert(&qid, &did, 1);
            }
            corpus.push((did.clone(), text));
            entries.push((did, rng.random::<f64>()));
        }
        candidates.push(CandidateList::new(qid, entries)?);
    }

    Ok(SyntheticData {
        vocab,
        corpus,
        queries,
        judgments,
        candidates,
    })
}

/// Assemble one document: noise words up to a jittered point inside the
/// target chunk, the passage words, then noise filler to the target
/// length. The passage token span is guaranteed to lie strictly inside
/// the sampled chunk.
fn build_document(
    spec: &SyntheticSpec,
    noise: &WordBank,
    patterns: &WordBank,
    passage: &[usize],
    passage_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    let chunk = sample_chunk(&spec.position_distribution, rng);
    let chunk_start = (chunk - 1) * spec.chunk_size;
    let slack = spec.chunk_size - passage_len - noise.max_increment;
    let threshold = chunk_start + rng.random_range(0..=slack);

    let length = rng.random_range(spec.doc_tokens_min..=spec.doc_tokens_max);
    let mut doc = DocBuilder::new();
    while doc.next_start() < threshold {
        // Close the final gap with single-token words so the landing
        // point never overshoots the window.
        let remaining = threshold - doc.next_start();
        let idx = if remaining <= noise.max_increment {
            *noise.unit_words.choose(rng).expect("single-char words exist")
        } else {
            rng.random_range(0..noise.words.len())
        };
        doc.push(&noise.words[idx], noise.token_lens[idx]);
    }
    let start = doc.next_start();
    debug_assert!(start >= chunk_start && start + passage_len <= chunk_start + spec.chunk_size);
    for &w in passage {
        doc.push(&patterns.words[w], patterns.token_lens[w]);
    }
    while doc.tokens < length {
        let idx = rng.random_range(0..noise.words.len());
        doc.push(&noise.words[idx], noise.token_lens[idx]);
    }
    Ok(doc.text)
}

/// Token span `[start, end)` of the first occurrence of the query pattern
/// inside a generated document, for verification.
pub fn locate_pattern(vocab: &Vocab, doc_text: &str, query_text: &str) -> Option<(usize, usize)> {
    let doc = tokenize(vocab, doc_text);
    let query = tokenize(vocab, query_text);
    if query.is_empty() || doc.len() < query.len() {
        return None;
    }
    for start in 0..=(doc.len() - query.len()) {
        if doc.ids[start..start + query.len()] == query.ids[..] {
            return Some((start, start + query.len()));
        }
    }
    None
}

/// Per-(query, doc) mapping of generated ids: each query's positive doc.
pub fn positives(data: &SyntheticData) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for (qid, _) in &data.queries {
        if let Some(doc) = data.judgments.positive_docs(qid).first() {
            map.insert(qid.clone(), doc.clone());
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_for_chunk(chunk: usize, seed: u64) -> SyntheticSpec {
        let mut dist = vec![0.0; 3];
        dist[chunk - 1] = 1.0;
        SyntheticSpec {
            num_queries: 6,
            docs_per_query: 4,
            pattern_words: 2,
            pattern_pool: 20,
            noise_pool: 60,
            max_word_len: 5,
            doc_tokens_min: 170,
            doc_tokens_max: 190,
            chunk_size: 56,
            position_distribution: dist,
            vocab_size: 400,
            seed,
        }
    }

    #[test]
    fn token_accounting_is_exact() {
        let data = generate_synthetic(&spec_for_chunk(2, 5)).unwrap();
        for (_, text) in &data.corpus {
            let expected = text.split(' ').count() - 1
                + text
                    .split(' ')
                    .map(|w| tokenize(&data.vocab, w).len())
                    .sum::<usize>();
            assert_eq!(tokenize(&data.vocab, text).len(), expected);
        }
    }

    #[test]
    fn passages_land_in_target_chunk() {
        for chunk in [1, 2, 3] {
            let spec = spec_for_chunk(chunk, 9);
            let data = generate_synthetic(&spec).unwrap();
            let positives = positives(&data);
            let docs: BTreeMap<&str, &str> = data
                .corpus
                .iter()
                .map(|(d, t)| (d.as_str(), t.as_str()))
                .collect();
            for (qid, qtext) in &data.queries {
                let did = &positives[qid];
                let (start, end) =
                    locate_pattern(&data.vocab, docs[did.as_str()], qtext).unwrap();
                let lo = (chunk - 1) * spec.chunk_size;
                let hi = chunk * spec.chunk_size;
                assert!(start >= lo && end <= hi, "span {start}..{end} chunk {chunk}");
            }
        }
    }

    #[test]
    fn negatives_do_not_contain_the_pattern() {
        let data = generate_synthetic(&spec_for_chunk(1, 11)).unwrap();
        let docs: BTreeMap<&str, &str> = data
            .corpus
            .iter()
            .map(|(d, t)| (d.as_str(), t.as_str()))
            .collect();
        for (qid, qtext) in &data.queries {
            for cand in data.candidates.iter().filter(|c| &c.query_id == qid) {
                for (did, _) in &cand.entries {
                    if data.judgments.grade(qid, did) == 0 {
                        assert!(
                            locate_pattern(&data.vocab, docs[did.as_str()], qtext).is_none(),
                            "negative {did} contains pattern of {qid}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let spec = spec_for_chunk(3, 21);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.queries, b.queries);

        let dir = tempfile::tempdir().unwrap();
        let (da, db) = (dir.path().join("a"), dir.path().join("b"));
        a.write_bundle(&da).unwrap();
        b.write_bundle(&db).unwrap();
        for file in ["corpus.tsv", "queries.tsv", "qrels.txt", "candidates.run", "vocab.txt"] {
            let ba = std::fs::read(da.join(file)).unwrap();
            let bb = std::fs::read(db.join(file)).unwrap();
            assert_eq!(ba, bb, "{file}");
        }
    }

    #[test]
    fn infeasible_placement_is_rejected() {
        let mut spec = spec_for_chunk(3, 2);
        spec.doc_tokens_min = 100; // cannot host chunk 3 of size 56
        spec.doc_tokens_max = 120;
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::InfeasiblePlacement(_))
        ));

        // A two-word passage needs at least three tokens; a 3-token chunk
        // can never also fit the placement slack.
        let mut tiny_chunks = spec_for_chunk(1, 2);
        tiny_chunks.chunk_size = 3;
        tiny_chunks.doc_tokens_min = 24;
        tiny_chunks.doc_tokens_max = 30;
        assert!(matches!(
            generate_synthetic(&tiny_chunks),
            Err(Error::InfeasiblePlacement(_))
        ));
    }

    #[test]
    fn distribution_must_sum_to_one() {
        let mut spec = spec_for_chunk(1, 2);
        spec.position_distribution = vec![0.5, 0.2];
        assert!(generate_synthetic(&spec).is_err());
    }
}
