//! Subword tokenization with special tokens.
//!
//! The vocabulary is trained from the experiment corpus itself: all single
//! characters seen plus frequency-based greedy merges, capped at a maximum
//! size. Tokenization is greedy longest-match-first and never fails: any
//! character that no vocabulary entry covers becomes `[UNK]` with a
//! one-character offset, so concatenating the offset spans of the output
//! always reconstructs the input exactly.
//!
//! Case folding and whitespace normalization are *not* applied inside
//! [`tokenize`]; callers normalize once with [`normalize_text`] before
//! tokenizing (and before passage matching, which must agree with the
//! token stream).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

/// Ids of the four special tokens, fixed by the vocabulary file layout.
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

const NUM_SPECIALS: usize = 4;

/// Minimum vocabulary budget: specials plus room for a byte-sized alphabet.
pub const MIN_VOCAB_SIZE: usize = 260;

/// Lowercase and collapse whitespace runs to single spaces.
///
/// Applied once, upstream of both tokenization and passage matching, so the
/// two see identical text.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            for lower in ch.to_lowercase() {
                out.push(lower);
            }
        }
    }
    out
}

/// An ordered subword vocabulary with fixed special tokens.
///
/// Token ids are dense in `[0, len)`; ids 0..4 are `[PAD]`, `[UNK]`,
/// `[CLS]`, `[SEP]` in that order. Regular entries are literal substrings
/// (no continuation-marker convention); the greedy matcher never matches
/// special-token strings inside running text.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    max_token_chars: usize,
}

impl Vocab {
    /// Build a vocabulary from explicit token strings (specials excluded).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            tokens: vec![
                PAD_TOKEN.to_string(),
                UNK_TOKEN.to_string(),
                CLS_TOKEN.to_string(),
                SEP_TOKEN.to_string(),
            ],
            ids: HashMap::new(),
            max_token_chars: 0,
        };
        for (i, t) in vocab.tokens.iter().enumerate() {
            vocab.ids.insert(t.clone(), i as u32);
        }
        for token in tokens {
            vocab.push_token(token.into())?;
        }
        Ok(vocab)
    }

    fn push_token(&mut self, token: String) -> Result<()> {
        if self.ids.contains_key(&token) {
            return Err(Error::InvalidConfig(format!(
                "duplicate vocabulary token {token:?}"
            )));
        }
        let id = self.tokens.len() as u32;
        self.max_token_chars = self.max_token_chars.max(token.chars().count());
        self.ids.insert(token.clone(), id);
        self.tokens.push(token);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Serialize as a line-oriented text file: one token per line, line
    /// number = id, first four lines fixed as the specials.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for token in &self.tokens {
            out.push_str(token);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines: Vec<&str> = text.split('\n').collect();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        let expected = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];
        if lines.len() < NUM_SPECIALS || lines[..NUM_SPECIALS] != expected {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: 1,
                detail: "vocabulary must start with [PAD],[UNK],[CLS],[SEP]".into(),
            });
        }
        Vocab::from_tokens(lines[NUM_SPECIALS..].iter().map(|s| s.to_string()))
    }
}

/// A tokenized text: vocabulary ids plus per-token character spans into the
/// source string. Spans are non-overlapping and non-decreasing; padding
/// tokens carry zero-width spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSeq {
    pub fn empty() -> TokenSeq {
        TokenSeq {
            ids: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Train a vocabulary on a corpus: every character seen, then greedy
/// highest-frequency pair merges (within whitespace-delimited words) until
/// `max_size` is reached or no pair occurs at least twice.
///
/// Lines are normalized with [`normalize_text`] before counting, matching
/// the convention used everywhere downstream.
pub fn build_vocab<I, S>(corpus: I, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size < MIN_VOCAB_SIZE {
        return Err(Error::InvalidConfig(format!(
            "max_size must be at least {MIN_VOCAB_SIZE}, got {max_size}"
        )));
    }

    let mut char_freq: HashMap<char, u64> = HashMap::new();
    let mut word_freq: HashMap<String, u64> = HashMap::new();
    for line in corpus {
        let normalized = normalize_text(line.as_ref());
        for ch in normalized.chars() {
            *char_freq.entry(ch).or_insert(0) += 1;
        }
        for word in normalized.split(' ').filter(|w| !w.is_empty()) {
            *word_freq.entry(word.to_string()).or_insert(0) += 1;
        }
    }
    if char_freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    // All characters seen, most frequent first if the budget is tight.
    let mut chars: Vec<(char, u64)> = char_freq.into_iter().collect();
    chars.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let char_budget = max_size - NUM_SPECIALS;
    chars.truncate(char_budget);
    chars.sort_by_key(|&(c, _)| c);

    let mut vocab = Vocab::from_tokens(chars.iter().map(|&(c, _)| c.to_string()))?;

    // Greedy pair merges over word-internal piece sequences.
    let mut words: Vec<(Vec<String>, u64)> = {
        let mut entries: Vec<(String, u64)> = word_freq.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries
            .into_iter()
            .map(|(w, f)| (w.chars().map(|c| c.to_string()).collect(), f))
            .collect()
    };

    while vocab.len() < max_size {
        let mut pair_freq: HashMap<(String, String), u64> = HashMap::new();
        for (pieces, freq) in &words {
            for pair in pieces.windows(2) {
                *pair_freq
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += freq;
            }
        }
        let best = pair_freq
            .into_iter()
            .filter(|&(_, f)| f >= 2)
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some(((left, right), _)) = best else {
            break;
        };
        let merged = format!("{left}{right}");
        if vocab.contains(&merged) {
            // Already a single character token; merging it changes nothing
            // for the matcher, but the pieces must still be fused so the
            // pair stops being counted.
        } else {
            vocab.push_token(merged.clone())?;
        }
        for (pieces, _) in &mut words {
            let mut fused = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && pieces[i] == left && pieces[i + 1] == right {
                    fused.push(merged.clone());
                    i += 2;
                } else {
                    fused.push(pieces[i].clone());
                    i += 1;
                }
            }
            *pieces = fused;
        }
    }

    Ok(vocab)
}

/// Greedy longest-match-first segmentation. Characters not covered by any
/// vocabulary entry map to `[UNK]` with a one-character span, so the output
/// spans always tile the input exactly.
pub fn tokenize(vocab: &Vocab, text: &str) -> TokenSeq {
    let chars: Vec<char> = text.chars().collect();
    let mut seq = TokenSeq::empty();
    let mut pos = 0;
    let mut probe = String::new();
    while pos < chars.len() {
        let max_len = vocab.max_token_chars.min(chars.len() - pos);
        let mut matched: Option<(u32, usize)> = None;
        for len in (1..=max_len).rev() {
            probe.clear();
            probe.extend(&chars[pos..pos + len]);
            if let Some(id) = vocab.id_of(&probe) {
                if id as usize >= NUM_SPECIALS {
                    matched = Some((id, len));
                    break;
                }
            }
        }
        let (id, len) = matched.unwrap_or((UNK_ID, 1));
        seq.ids.push(id);
        seq.offsets.push((pos, pos + len));
        pos += len;
    }
    seq
}

/// Truncate a query to `max_q` tokens, then pad with `[PAD]` to exactly
/// `max_q`. Padding tokens carry zero-width spans at the truncation point.
pub fn prepare_query(_vocab: &Vocab, query: &TokenSeq, max_q: usize) -> TokenSeq {
    let keep = query.len().min(max_q);
    let mut ids: Vec<u32> = query.ids[..keep].to_vec();
    let mut offsets: Vec<(usize, usize)> = query.offsets[..keep].to_vec();
    let tail = offsets.last().map(|&(_, end)| end).unwrap_or(0);
    while ids.len() < max_q {
        ids.push(PAD_ID);
        offsets.push((tail, tail));
    }
    TokenSeq { ids, offsets }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_lowercases_and_collapses_whitespace() {
        assert_eq!(normalize_text("  Hello\t\nWorld  "), "hello world");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text(" \t "), "");
    }

    #[test]
    fn build_vocab_merges_frequent_pairs() {
        let vocab = build_vocab(["aaab"], 300).unwrap();
        assert!(vocab.contains("a"));
        assert!(vocab.contains("b"));
        assert!(vocab.contains("aa"));
        // (aa,a) and (a,b) each occur once after the first merge: no more merges.
        assert!(!vocab.contains("aaa"));
        assert!(!vocab.contains("ab"));
    }

    #[test]
    fn build_vocab_rejects_empty_corpus() {
        assert!(matches!(
            build_vocab(Vec::<&str>::new(), 300),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(build_vocab(["   "], 300), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn build_vocab_single_char_corpus() {
        let vocab = build_vocab(["x"], 300).unwrap();
        assert!(vocab.contains("x"));
        assert_eq!(vocab.len(), 5);
    }

    #[test]
    fn tokenize_greedy_longest_match() {
        let vocab = build_vocab(["aaab"], 300).unwrap();
        let seq = tokenize(&vocab, "aaab");
        let tokens: Vec<&str> = seq.ids.iter().map(|&i| vocab.token(i).unwrap()).collect();
        assert_eq!(tokens, ["aa", "a", "b"]);
        assert_eq!(seq.offsets, vec![(0, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn tokenize_empty_string() {
        let vocab = build_vocab(["abc"], 300).unwrap();
        assert!(tokenize(&vocab, "").is_empty());
    }

    #[test]
    fn tokenize_unknown_char_maps_to_unk() {
        let vocab = build_vocab(["abc"], 300).unwrap();
        let seq = tokenize(&vocab, "aZb");
        assert_eq!(seq.ids[1], UNK_ID);
        assert_eq!(seq.offsets[1], (1, 2));
    }

    #[test]
    fn tokenize_round_trip_via_offsets() {
        let vocab = build_vocab(["the quick brown fox"], 300).unwrap();
        let text = "the quick fox Zk";
        let seq = tokenize(&vocab, text);
        let chars: Vec<char> = text.chars().collect();
        let rebuilt: String = seq
            .offsets
            .iter()
            .flat_map(|&(s, e)| chars[s..e].iter())
            .collect();
        assert_eq!(rebuilt, text);
    }

    #[test]
    fn prepare_query_pads_to_exact_length() {
        let vocab = build_vocab(["one two three four five six seven"], 300).unwrap();
        let query = tokenize(&vocab, "one two three");
        let padded = prepare_query(&vocab, &query, 32);
        assert_eq!(padded.len(), 32);
        let pads = padded.ids.iter().filter(|&&i| i == PAD_ID).count();
        assert_eq!(pads, 32 - query.len());
    }

    #[test]
    fn prepare_query_truncates() {
        let vocab = build_vocab(["a b c d"], 300).unwrap();
        let mut long = TokenSeq::empty();
        for i in 0..40 {
            long.ids.push(4);
            long.offsets.push((i, i + 1));
        }
        let padded = prepare_query(&vocab, &long, 32);
        assert_eq!(padded.len(), 32);
        assert!(padded.ids.iter().all(|&i| i != PAD_ID));
    }

    #[test]
    fn prepare_query_boundary_unchanged() {
        let vocab = build_vocab(["a b"], 300).unwrap();
        let mut q = TokenSeq::empty();
        for i in 0..32 {
            q.ids.push(4);
            q.offsets.push((i, i + 1));
        }
        let padded = prepare_query(&vocab, &q, 32);
        assert_eq!(padded, q);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = build_vocab(["hello world"], 300).unwrap();
        vocab.write_to(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.len(), vocab.len());
        for id in 0..vocab.len() as u32 {
            assert_eq!(loaded.token(id), vocab.token(id));
        }
        let text = fs::read_to_string(&path).unwrap();
        let first: Vec<&str> = text.lines().take(4).collect();
        assert_eq!(first, [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN]);
    }

    #[test]
    fn specials_never_match_in_running_text() {
        let vocab = build_vocab(["[cls] stuff"], 300).unwrap();
        let seq = tokenize(&vocab, "[cls]");
        assert!(seq.ids.iter().all(|&i| i != CLS_ID));
    }
}
