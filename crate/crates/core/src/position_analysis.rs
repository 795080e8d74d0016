//! Relevant-passage position analysis.
//!
//! Passages are located inside documents by approximate matching: the
//! longest common substring (score = length / passage length, threshold
//! 0.8) is the primary route; the fallback slides a window 20% longer
//! than the passage over the document and scores the longest common
//! subsequence per window (threshold 0.7), narrowing the best window to
//! its first/last matched characters. Matched character spans map to
//! token spans and then to 1-based chunk indices, feeding start/end
//! position histograms and the first-chunk ceiling estimate.
//!
//! Matching operates on the strings it is given; normalize inputs with
//! [`crate::tokenize::normalize_text`] first so spans agree with the
//! token stream.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tokenize::TokenSeq;

pub const SUBSTRING_THRESHOLD: f64 = 0.8;
pub const SUBSEQUENCE_THRESHOLD: f64 = 0.7;
/// Fallback window length as a multiple of the passage length.
pub const WINDOW_FACTOR: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Substring,
    Subsequence,
    None,
}

/// Outcome of matching one passage against one document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub matched: bool,
    pub method: MatchMethod,
    /// Best normalized overlap in [0, 1] (by passage length).
    pub score: f64,
    /// Character span in the document, when matched.
    pub char_span: Option<(usize, usize)>,
    /// Token span in the document, filled by [`resolve_token_span`].
    pub token_span: Option<(usize, usize)>,
}

/// Longest common substring of `a` and `b` over characters: returns
/// `(length, start_in_b)` with ties broken to the earliest `b` position.
pub fn longest_common_substring(a: &str, b: &str) -> (usize, usize) {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return (0, 0);
    }
    let mut prev = vec![0u32; b.len() + 1];
    let mut curr = vec![0u32; b.len() + 1];
    let mut best_len = 0usize;
    let mut best_start = 0usize;
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            curr[j] = if a[i - 1] == b[j - 1] {
                prev[j - 1] + 1
            } else {
                0
            };
            let len = curr[j] as usize;
            let start = j - len;
            if len > best_len || (len == best_len && len > 0 && start < best_start) {
                best_len = len;
                best_start = start;
            }
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    (best_len, best_start)
}

/// Longest common subsequence length of two character sequences.
pub fn longest_common_subsequence(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    lcs_table(&a, &b).1
}

/// Full LCS DP table (row-major `(|a|+1) x (|b|+1)`) plus the LCS length.
fn lcs_table(a: &[char], b: &[char]) -> (Vec<u32>, usize) {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    let mut dp = vec![0u32; (n + 1) * width];
    for i in 1..=n {
        for j in 1..=m {
            dp[i * width + j] = if a[i - 1] == b[j - 1] {
                dp[(i - 1) * width + (j - 1)] + 1
            } else {
                dp[(i - 1) * width + j].max(dp[i * width + (j - 1)])
            };
        }
    }
    let len = dp[n * width + m] as usize;
    (dp, len)
}

/// First and last matched `b` indices of one optimal LCS alignment
/// (deterministic traceback), or `None` when the LCS is empty.
fn lcs_matched_span(a: &[char], b: &[char]) -> Option<(usize, usize)> {
    let (dp, len) = lcs_table(a, b);
    if len == 0 {
        return None;
    }
    let width = b.len() + 1;
    let (mut i, mut j) = (a.len(), b.len());
    let mut first = usize::MAX;
    let mut last = 0usize;
    while i > 0 && j > 0 {
        if a[i - 1] == b[j - 1] {
            first = j - 1;
            last = last.max(j - 1);
            i -= 1;
            j -= 1;
        } else if dp[(i - 1) * width + j] >= dp[i * width + (j - 1)] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    Some((first, last))
}

/// Locate `passage` inside `document` by approximate matching.
pub fn match_passage(passage: &str, document: &str) -> Result<MatchResult> {
    let passage_chars: Vec<char> = passage.chars().collect();
    if passage_chars.is_empty() {
        return Err(Error::EmptyPassage);
    }
    let doc_chars: Vec<char> = document.chars().collect();
    let plen = passage_chars.len();

    // Primary: longest common substring.
    let (sub_len, sub_start) = longest_common_substring(passage, document);
    let sub_score = sub_len as f64 / plen as f64;
    if sub_score >= SUBSTRING_THRESHOLD {
        return Ok(MatchResult {
            matched: true,
            method: MatchMethod::Substring,
            score: sub_score,
            char_span: Some((sub_start, sub_start + sub_len)),
            token_span: None,
        });
    }

    // Fallback: windowed longest common subsequence. The window is 20%
    // longer than the passage; the stride is a quarter of the window.
    let window = ((plen as f64 * WINDOW_FACTOR).ceil() as usize).max(1);
    let stride = (window / 4).max(1);
    let mut best: Option<(f64, usize, usize, usize)> = None; // score, win_start, first, last
    let mut start = 0;
    while start < doc_chars.len() {
        let end = (start + window).min(doc_chars.len());
        let win = &doc_chars[start..end];
        let (_, len) = lcs_table(&passage_chars, win);
        let score = len as f64 / plen as f64;
        let better = match &best {
            Some((bs, ..)) => score > *bs,
            None => len > 0,
        };
        if better {
            let (first, last) =
                lcs_matched_span(&passage_chars, win).expect("len > 0 implies a span");
            best = Some((score, start, first, last));
        }
        if end == doc_chars.len() {
            break;
        }
        start += stride;
    }
    if let Some((score, win_start, first, last)) = best {
        if score >= SUBSEQUENCE_THRESHOLD {
            return Ok(MatchResult {
                matched: true,
                method: MatchMethod::Subsequence,
                score,
                char_span: Some((win_start + first, win_start + last + 1)),
                token_span: None,
            });
        }
        return Ok(MatchResult {
            matched: false,
            method: MatchMethod::None,
            score: score.max(sub_score),
            char_span: None,
            token_span: None,
        });
    }
    Ok(MatchResult {
        matched: false,
        method: MatchMethod::None,
        score: sub_score,
        char_span: None,
        token_span: None,
    })
}

/// Smallest token range whose offsets cover `char_span`; an empty span
/// yields an empty range at the insertion point.
pub fn char_span_to_token_span(doc: &TokenSeq, char_span: (usize, usize)) -> (usize, usize) {
    let (span_start, span_end) = char_span;
    if span_start >= span_end {
        let insert = doc
            .offsets
            .iter()
            .take_while(|&&(_, end)| end <= span_start)
            .count();
        return (insert, insert);
    }
    let mut first = None;
    let mut last = None;
    for (i, &(start, end)) in doc.offsets.iter().enumerate() {
        if start < span_end && end > span_start {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    match (first, last) {
        (Some(f), Some(l)) => (f, l + 1),
        _ => (0, 0),
    }
}

/// Fill in the token span of a match from the document's token sequence.
pub fn resolve_token_span(result: &mut MatchResult, doc: &TokenSeq) {
    if let Some(span) = result.char_span {
        result.token_span = Some(char_span_to_token_span(doc, span));
    }
}

/// 1-based chunk ordinal of a token position.
pub fn chunk_index(token_pos: usize, chunk_size: usize) -> usize {
    token_pos / chunk_size + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionBasis {
    Start,
    End,
}

/// Counts of passage positions per chunk ordinal `1..=K`, with an
/// overflow bucket for chunks beyond `K`.
#[derive(Debug, Clone, Serialize)]
pub struct PositionHistogram {
    pub basis: PositionBasis,
    pub chunk_size: usize,
    pub counts: Vec<f64>,
    pub overflow: f64,
}

impl PositionHistogram {
    pub fn new(basis: PositionBasis, chunk_size: usize, buckets: usize) -> PositionHistogram {
        PositionHistogram {
            basis,
            chunk_size,
            counts: vec![0.0; buckets],
            overflow: 0.0,
        }
    }

    /// Build directly from per-chunk percentages (or any weights), e.g.
    /// published distribution tables.
    pub fn from_weights(
        basis: PositionBasis,
        chunk_size: usize,
        counts: Vec<f64>,
        overflow: f64,
    ) -> PositionHistogram {
        PositionHistogram {
            basis,
            chunk_size,
            counts,
            overflow,
        }
    }

    pub fn add(&mut self, chunk: usize) {
        debug_assert!(chunk >= 1);
        if chunk <= self.counts.len() {
            self.counts[chunk - 1] += 1.0;
        } else {
            self.overflow += 1.0;
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum::<f64>() + self.overflow
    }

    /// Fraction of mass in 1-based chunk `chunk`.
    pub fn fraction(&self, chunk: usize) -> f64 {
        let total = self.total();
        if total == 0.0 || chunk == 0 || chunk > self.counts.len() {
            return 0.0;
        }
        self.counts[chunk - 1] / total
    }
}

/// Token-length histogram of relevant documents, binned and capped.
#[derive(Debug, Clone, Serialize)]
pub struct DocLengthHistogram {
    pub bin_width: usize,
    pub cap: usize,
    pub counts: Vec<u64>,
}

impl DocLengthHistogram {
    pub fn new(bin_width: usize, cap: usize) -> DocLengthHistogram {
        let bins = cap.div_ceil(bin_width);
        DocLengthHistogram {
            bin_width,
            cap,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, token_len: usize) {
        let capped = token_len.min(self.cap.saturating_sub(1));
        let bin = capped / self.bin_width;
        self.counts[bin] += 1;
    }
}

/// Match results for one relevant (query, document) pair.
#[derive(Debug, Clone)]
pub struct DocMatches {
    pub doc_token_len: usize,
    pub matches: Vec<MatchResult>,
}

/// Aggregate matched passages into start/end chunk-position histograms and
/// a document-length histogram. With `first_only`, only the
/// earliest-starting matched passage of each document counts.
pub fn build_histograms(
    docs: &[DocMatches],
    chunk_size: usize,
    buckets: usize,
    length_cap: usize,
    first_only: bool,
) -> (PositionHistogram, PositionHistogram, DocLengthHistogram) {
    let mut start_hist = PositionHistogram::new(PositionBasis::Start, chunk_size, buckets);
    let mut end_hist = PositionHistogram::new(PositionBasis::End, chunk_size, buckets);
    let mut length_hist = DocLengthHistogram::new(chunk_size, length_cap);
    for doc in docs {
        length_hist.add(doc.doc_token_len);
        let mut spans: Vec<(usize, usize)> = doc
            .matches
            .iter()
            .filter(|m| m.matched)
            .filter_map(|m| m.token_span)
            .filter(|&(s, e)| e > s)
            .collect();
        spans.sort_by_key(|&(s, e)| (s, e));
        let selected: &[(usize, usize)] = if first_only {
            match spans.first() {
                Some(first) => std::slice::from_ref(first),
                None => &[],
            }
        } else {
            &spans
        };
        for &(s, e) in selected {
            start_hist.add(chunk_index(s, chunk_size));
            end_hist.add(chunk_index(e - 1, chunk_size));
        }
    }
    (start_hist, end_hist, length_hist)
}

/// Relative score ceiling of a `max_chunks`-chunk model over a first-chunk
/// model: full credit accrues to passages ending in chunk 1; extra credit
/// to passages starting in chunks `2..max_chunks` (those are guaranteed to
/// end within the prefix). Returns `1 + extra / credit`.
pub fn estimate_ceiling(
    end_hist: &PositionHistogram,
    start_hist: &PositionHistogram,
    max_chunks: usize,
) -> Result<f64> {
    let credit = end_hist.fraction(1);
    if credit == 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    let extra: f64 = (2..max_chunks).map(|c| start_hist.fraction(c)).sum();
    Ok(1.0 + extra / credit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_containment_matches_via_substring() {
        let result = match_passage("needle text", "long haystack with needle text inside").unwrap();
        assert!(result.matched);
        assert_eq!(result.method, MatchMethod::Substring);
        assert_eq!(result.score, 1.0);
        let (s, e) = result.char_span.unwrap();
        assert_eq!(&"long haystack with needle text inside"[s..e], "needle text");
    }

    #[test]
    fn corrupted_containment_falls_back_to_subsequence() {
        // Insert a junk character every 3 passage characters: substring
        // runs are at most 3/10 < 0.8, subsequence recovers all 10.
        let passage = "abcdefghij";
        let mut corrupted = String::new();
        for (i, ch) in passage.chars().enumerate() {
            corrupted.push(ch);
            if i % 3 == 2 {
                corrupted.push('#');
            }
        }
        let document = format!("zzzz {corrupted} zzzz");
        // Whole-string ratios: substring below the 0.8 threshold, full
        // subsequence ratio exactly 1.0.
        let (sub_len, _) = longest_common_substring(passage, &document);
        assert!((sub_len as f64) < 0.8 * passage.len() as f64);
        assert_eq!(longest_common_subsequence(passage, &document), passage.len());

        let result = match_passage(passage, &document).unwrap();
        assert!(result.matched);
        assert_eq!(result.method, MatchMethod::Subsequence);
        assert!(result.score >= SUBSEQUENCE_THRESHOLD);
        // The narrowed span stays inside the corrupted region of the
        // document ("zzzz " prefix is 5 chars) and ends on its last
        // matched character.
        let (s, e) = result.char_span.unwrap();
        assert!(s >= 5 && e <= 5 + corrupted.chars().count());
        let span_text: String = document.chars().skip(s).take(e - s).collect();
        assert!(span_text.ends_with('j'));
    }

    #[test]
    fn disjoint_strings_do_not_match() {
        let result = match_passage("aaaa", "bbbbbbbb").unwrap();
        assert!(!result.matched);
        assert_eq!(result.method, MatchMethod::None);
        assert_eq!(result.char_span, None);
    }

    #[test]
    fn empty_passage_is_an_error() {
        assert!(matches!(
            match_passage("", "doc"),
            Err(Error::EmptyPassage)
        ));
    }

    #[test]
    fn subsequence_never_below_substring() {
        let pairs = [
            ("abcab", "xxabcab"),
            ("hello world", "help world"),
            ("aaa", "aba"),
        ];
        for (a, b) in pairs {
            let (sub, _) = longest_common_substring(a, b);
            let seq = longest_common_subsequence(a, b);
            assert!(seq >= sub, "{a} vs {b}");
        }
    }

    fn seq_with_offsets(spans: &[(usize, usize)]) -> TokenSeq {
        TokenSeq {
            ids: vec![9; spans.len()],
            offsets: spans.to_vec(),
        }
    }

    #[test]
    fn token_span_covering_rules() {
        // Ten 3-char tokens: token i covers [3i, 3i+3).
        let spans: Vec<(usize, usize)> = (0..10).map(|i| (3 * i, 3 * i + 3)).collect();
        let doc = seq_with_offsets(&spans);
        assert_eq!(char_span_to_token_span(&doc, (15, 30)), (5, 10));
        // A span splitting tokens includes them.
        assert_eq!(char_span_to_token_span(&doc, (16, 17)), (5, 6));
        assert_eq!(char_span_to_token_span(&doc, (2, 4)), (0, 2));
        // Empty span -> empty range.
        let (s, e) = char_span_to_token_span(&doc, (9, 9));
        assert_eq!(s, e);
    }

    #[test]
    fn chunk_index_boundaries() {
        assert_eq!(chunk_index(0, 477), 1);
        assert_eq!(chunk_index(476, 477), 1);
        assert_eq!(chunk_index(477, 477), 2);
        assert_eq!(chunk_index(480, 477), 2);
        assert_eq!(chunk_index(954, 477), 3);
    }

    fn matched(span: (usize, usize)) -> MatchResult {
        MatchResult {
            matched: true,
            method: MatchMethod::Substring,
            score: 1.0,
            char_span: Some((0, 1)),
            token_span: Some(span),
        }
    }

    #[test]
    fn histograms_count_first_passage_only() {
        let docs = vec![DocMatches {
            doc_token_len: 1500,
            matches: vec![matched((600, 1000)), matched((10, 50))],
        }];
        let (start, end, _) = build_histograms(&docs, 477, 6, 10_000, true);
        assert_eq!(start.counts[0], 1.0); // starts at token 10 -> chunk 1
        assert_eq!(end.counts[0], 1.0); // ends at token 49 -> chunk 1
        assert_eq!(start.total(), 1.0);
        assert_eq!(end.total(), 1.0);
    }

    #[test]
    fn histogram_spanning_chunks() {
        let docs = vec![DocMatches {
            doc_token_len: 1500,
            matches: vec![matched((500, 1000))],
        }];
        let (start, end, _) = build_histograms(&docs, 477, 6, 10_000, true);
        assert_eq!(start.counts[1], 1.0); // token 500 -> chunk 2
        assert_eq!(end.counts[2], 1.0); // token 999 -> chunk 3
    }

    #[test]
    fn histogram_conservation() {
        let docs: Vec<DocMatches> = (0..20)
            .map(|i| DocMatches {
                doc_token_len: 1000 + i,
                matches: if i % 3 == 0 {
                    vec![]
                } else {
                    vec![matched((i * 100, i * 100 + 50))]
                },
            })
            .collect();
        let matched_docs = docs.iter().filter(|d| !d.matches.is_empty()).count();
        let (start, end, lengths) = build_histograms(&docs, 477, 6, 10_000, true);
        assert_eq!(start.total(), matched_docs as f64);
        assert_eq!(end.total(), matched_docs as f64);
        assert_eq!(lengths.counts.iter().sum::<u64>(), docs.len() as u64);
    }

    #[test]
    fn ceiling_matches_published_distribution() {
        let start = PositionHistogram::from_weights(
            PositionBasis::Start,
            477,
            vec![85.9, 9.1, 2.6, 1.2, 0.6, 0.6],
            0.1,
        );
        let end = PositionHistogram::from_weights(
            PositionBasis::End,
            477,
            vec![71.0, 14.9, 6.1, 3.0, 1.4, 1.2],
            2.5,
        );
        let factor = estimate_ceiling(&end, &start, 3).unwrap();
        assert!((factor - 1.128).abs() < 0.001, "factor {factor}");
    }

    #[test]
    fn ceiling_without_headroom_is_one() {
        let start =
            PositionHistogram::from_weights(PositionBasis::Start, 477, vec![100.0, 0.0], 0.0);
        let end = PositionHistogram::from_weights(PositionBasis::End, 477, vec![100.0, 0.0], 0.0);
        assert_eq!(estimate_ceiling(&end, &start, 3).unwrap(), 1.0);
    }

    #[test]
    fn ceiling_degenerate_distribution_errors() {
        let start =
            PositionHistogram::from_weights(PositionBasis::Start, 477, vec![0.0, 100.0], 0.0);
        let end = PositionHistogram::from_weights(PositionBasis::End, 477, vec![0.0, 100.0], 0.0);
        assert!(matches!(
            estimate_ceiling(&end, &start, 3),
            Err(Error::DegenerateDistribution)
        ));
    }
}
