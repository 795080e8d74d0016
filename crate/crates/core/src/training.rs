//! End-to-end pairwise training.
//!
//! One epoch iterates all queries, sampling one positive (from the
//! judgments) and one negative (uniformly from the top-k candidates not
//! labeled relevant) per eligible query; ineligible queries are skipped
//! and counted. Batches sum a hinge loss over pairs and step AdamW with
//! decoupled weight decay, with the main transformer and everything else
//! (heads, C, projections, aggregator) on separate learning rates under a
//! shared warm-up schedule.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Phase;
use crate::error::{Error, Result};
use crate::evaluation::Judgments;
use crate::ranker::Ranker;
use crate::tensor::Tensor;
use crate::tokenize::{TokenSeq, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear warm-up to the base rate, then constant.
    ConstantWarmup,
    /// Linear warm-up, then linear decay to zero at the last step.
    OneCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of sequences per optimizer step (two per pair; must be even).
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Learning rate for the main transformer parameters.
    #[serde(default = "default_lr_main")]
    pub lr_main: f64,
    /// Learning rate for all other parameters (heads, C, P, aggregator).
    #[serde(default = "default_lr_other")]
    pub lr_other: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup_frac")]
    pub warmup_frac: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Candidate cut-off for negative sampling (100 MS MARCO-style,
    /// 1000 Robust04-style).
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_batch_size() -> usize {
    16
}
fn default_lr_main() -> f64 {
    1e-5
}
fn default_lr_other() -> f64 {
    1e-4
}
fn default_weight_decay() -> f64 {
    1e-7
}
fn default_warmup_frac() -> f64 {
    0.2
}
fn default_schedule() -> Schedule {
    Schedule::ConstantWarmup
}
fn default_margin() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    1
}
fn default_top_k() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch_size(),
            lr_main: default_lr_main(),
            lr_other: default_lr_other(),
            weight_decay: default_weight_decay(),
            warmup_frac: default_warmup_frac(),
            schedule: default_schedule(),
            margin: default_margin(),
            seed: 0,
            epochs: default_epochs(),
            top_k: default_top_k(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "batch_size must be even and at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "warmup_frac must be in (0,1), got {}",
                self.warmup_frac
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// A first-stage candidate list for one query: document ids with generator
/// scores, descending, no duplicates.
#[derive(Debug, Clone)]
pub struct CandidateList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl CandidateList {
    pub fn new(query_id: String, mut entries: Vec<(String, f64)>) -> Result<CandidateList> {
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidConfig(format!(
                    "duplicate candidate {} for query {query_id}",
                    pair[0].0
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some((dup, _)) = entries.iter().find(|(d, _)| !seen.insert(d.clone())) {
            return Err(Error::InvalidConfig(format!(
                "duplicate candidate {dup} for query {query_id}"
            )));
        }
        Ok(CandidateList {
            query_id,
            entries,
        })
    }

    pub fn top_k(&self, k: usize) -> &[(String, f64)] {
        &self.entries[..self.entries.len().min(k)]
    }
}

/// One training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub query_id: String,
    pub positive: String,
    pub negative: String,
}

/// Sample one (positive, negative) pair per eligible query. Queries with
/// no judged positive, or with no non-positive candidate inside `top_k`,
/// are skipped and counted.
pub fn sample_epoch(
    query_ids: &[String],
    judgments: &Judgments,
    candidates: &[CandidateList],
    top_k: usize,
    seed: u64,
) -> (Vec<Pair>, usize) {
    let by_query: std::collections::HashMap<&str, &CandidateList> = candidates
        .iter()
        .map(|c| (c.query_id.as_str(), c))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for qid in query_ids {
        let positives = judgments.positive_docs(qid);
        let negatives: Vec<&String> = by_query
            .get(qid.as_str())
            .map(|c| {
                c.top_k(top_k)
                    .iter()
                    .map(|(d, _)| d)
                    .filter(|d| judgments.grade(qid, d) == 0)
                    .collect()
            })
            .unwrap_or_default();
        if positives.is_empty() || negatives.is_empty() {
            skipped += 1;
            continue;
        }
        let positive = positives.choose(&mut rng).expect("non-empty").clone();
        let negative = (*negatives.choose(&mut rng).expect("non-empty")).clone();
        pairs.push(Pair {
            query_id: qid.clone(),
            positive,
            negative,
        });
    }
    (pairs, skipped)
}

/// Hinge loss `max(0, margin - score_pos + score_neg)`.
pub fn pairwise_margin_loss(
    score_pos: &Tensor,
    score_neg: &Tensor,
    margin: f64,
) -> Result<Tensor> {
    Ok(score_neg.sub(score_pos)?.add_scalar(margin).relu())
}

/// Learning-rate multiplier at step `t` of `total`.
pub fn lr_multiplier(schedule: Schedule, t: usize, total: usize, warmup_frac: f64) -> f64 {
    let total = total as f64;
    let t = t as f64;
    let warmup = warmup_frac * total;
    match schedule {
        Schedule::ConstantWarmup => {
            if t < warmup {
                t / warmup
            } else {
                1.0
            }
        }
        Schedule::OneCycle => {
            if t < warmup {
                t / warmup
            } else {
                1.0 - (t - warmup) / (total - warmup)
            }
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct GroupState {
    tensors: Vec<Tensor>,
    base_lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// AdamW with decoupled weight decay over two parameter groups.
pub struct AdamW {
    groups: Vec<GroupState>,
    weight_decay: f64,
    steps_taken: usize,
}

impl AdamW {
    pub fn new(main: Vec<Tensor>, other: Vec<Tensor>, config: &TrainConfig) -> AdamW {
        let make = |tensors: Vec<Tensor>, base_lr: f64| {
            let m = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
            let v = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
            GroupState {
                tensors,
                base_lr,
                m,
                v,
            }
        };
        AdamW {
            groups: vec![
                make(main, config.lr_main),
                make(other, config.lr_other),
            ],
            weight_decay: config.weight_decay,
            steps_taken: 0,
        }
    }

    /// Apply one update with the given schedule multiplier, consuming the
    /// gradients currently stored on the parameters.
    pub fn step(&mut self, multiplier: f64) {
        self.steps_taken += 1;
        let t = self.steps_taken as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for group in &mut self.groups {
            let lr = group.base_lr * multiplier;
            for (i, tensor) in group.tensors.iter().enumerate() {
                let Some(grad) = tensor.grad() else {
                    continue;
                };
                let mut data = tensor.data();
                let m = &mut group.m[i];
                let v = &mut group.v[i];
                for j in 0..data.len() {
                    let g = grad[j];
                    m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
                    v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = m[j] / bias1;
                    let v_hat = v[j] / bias2;
                    data[j] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS)
                        + self.weight_decay * data[j]);
                }
                tensor.set_data(data);
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr_main_mult: f64,
    pub lr_other_mult: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub skipped_queries_per_epoch: Vec<usize>,
    pub total_steps: usize,
}

impl TrainLog {
    /// Line-delimited text form: `step<TAB>loss<TAB>lr_main_mult<TAB>lr_other_mult`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\tloss\tlr_main_mult\tlr_other_mult\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{:.10}\t{:.10}\t{:.10}\n",
                r.step, r.loss, r.lr_main_mult, r.lr_other_mult
            ));
        }
        out
    }
}

/// Everything the trainer needs, tokenized up front.
pub struct TrainData<'a> {
    /// Queries in file order: id plus already-padded token sequence.
    pub queries: Vec<(String, TokenSeq)>,
    /// Tokenized documents by id.
    pub docs: &'a std::collections::BTreeMap<String, TokenSeq>,
    pub judgments: &'a Judgments,
    pub candidates: &'a [CandidateList],
}

/// Train `ranker` in place; fully deterministic given the config seed.
pub fn train(
    ranker: &Ranker,
    data: &TrainData,
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    let query_ids: Vec<String> = data.queries.iter().map(|(q, _)| q.clone()).collect();
    let query_tokens: std::collections::HashMap<&str, &TokenSeq> = data
        .queries
        .iter()
        .map(|(q, t)| (q.as_str(), t))
        .collect();

    let pairs_per_batch = config.batch_size / 2;
    // Eligibility does not depend on the sampler, so the per-epoch pair
    // count is constant and the total step count is known up front.
    let (probe, _) = sample_epoch(
        &query_ids,
        data.judgments,
        data.candidates,
        config.top_k,
        config.seed,
    );
    let steps_per_epoch = probe.len().div_ceil(pairs_per_batch);
    let total_steps = steps_per_epoch * config.epochs;
    if total_steps == 0 {
        return Err(Error::InvalidConfig(
            "no eligible training pairs".into(),
        ));
    }

    let (main, other) = ranker.param_groups();
    let mut optimizer = AdamW::new(main, other, config);
    let mut log = TrainLog::default();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let (pairs, skipped) = sample_epoch(
            &query_ids,
            data.judgments,
            data.candidates,
            config.top_k,
            config.seed.wrapping_add(epoch as u64),
        );
        log.skipped_queries_per_epoch.push(skipped);
        for batch in pairs.chunks(pairs_per_batch) {
            ranker.params.zero_grad();
            let mut batch_loss: Option<Tensor> = None;
            for (i, pair) in batch.iter().enumerate() {
                let query = query_tokens
                    .get(pair.query_id.as_str())
                    .ok_or_else(|| Error::InvalidConfig(format!(
                        "pair references unknown query {}",
                        pair.query_id
                    )))?;
                let fetch = |doc_id: &str| {
                    data.docs.get(doc_id).ok_or_else(|| {
                        Error::InvalidConfig(format!("pair references unknown document {doc_id}"))
                    })
                };
                let dropout_seed = config
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(((step as u64) << 16) | i as u64);
                let phase = Phase::Train { dropout_seed };
                let pos = ranker.score(query, fetch(&pair.positive)?, vocab, phase)?;
                let neg = ranker.score(query, fetch(&pair.negative)?, vocab, phase)?;
                let loss = pairwise_margin_loss(&pos, &neg, config.margin)?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => acc.add(&loss)?,
                    None => loss,
                });
            }
            let batch_loss = batch_loss.expect("chunks are non-empty");
            let loss_value = batch_loss.item()?;
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: loss_value,
                });
            }
            batch_loss.backward()?;
            let mult = lr_multiplier(config.schedule, step, total_steps, config.warmup_frac);
            optimizer.step(mult);
            log.records.push(StepRecord {
                step,
                loss: loss_value,
                lr_main_mult: mult,
                lr_other_mult: mult,
            });
            step += 1;
        }
    }
    log.total_steps = total_steps;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_loss_values() {
        let s = |v: f64| Tensor::constant(&[1], vec![v]);
        let cases = [
            (2.0, 0.5, 0.0),
            (0.5, 0.5, 1.0),
            (0.0, 0.7, 1.7),
        ];
        for (pos, neg, expected) in cases {
            let loss = pairwise_margin_loss(&s(pos), &s(neg), 1.0).unwrap();
            assert!((loss.item().unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn satisfied_margin_has_zero_gradient() {
        let pos = Tensor::param(&[1], vec![5.0]);
        let neg = Tensor::param(&[1], vec![0.0]);
        let loss = pairwise_margin_loss(&pos, &neg, 1.0).unwrap();
        loss.backward().unwrap();
        assert_eq!(pos.grad().unwrap(), vec![0.0]);
        assert_eq!(neg.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn schedule_closed_forms() {
        let total = 1000;
        let w = 0.2;
        let at = |s, t| lr_multiplier(s, t, total, w);
        assert_eq!(at(Schedule::ConstantWarmup, 0), 0.0);
        assert_eq!(at(Schedule::ConstantWarmup, 100), 0.5);
        assert_eq!(at(Schedule::ConstantWarmup, 200), 1.0);
        assert_eq!(at(Schedule::ConstantWarmup, 500), 1.0);
        assert_eq!(at(Schedule::ConstantWarmup, 1000), 1.0);
        assert_eq!(at(Schedule::OneCycle, 0), 0.0);
        assert_eq!(at(Schedule::OneCycle, 100), 0.5);
        assert_eq!(at(Schedule::OneCycle, 200), 1.0);
        assert_eq!(at(Schedule::OneCycle, 500), 0.625);
        assert_eq!(at(Schedule::OneCycle, 600), 0.5);
        assert_eq!(at(Schedule::OneCycle, 1000), 0.0);
    }

    #[test]
    fn adamw_zero_gradient_zero_decay_is_identity() {
        let p = Tensor::param(&[2], vec![1.0, -2.0]);
        let config = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(vec![p.clone()], vec![], &config);
        // No backward ran: grad is None, so the step skips the tensor.
        opt.step(1.0);
        assert_eq!(p.data(), vec![1.0, -2.0]);

        // Explicit zero gradient: update must still be exactly zero.
        let loss = p.mul(&Tensor::constant(&[2], vec![0.0, 0.0])).unwrap().sum_all();
        loss.backward().unwrap();
        opt.step(1.0);
        assert_eq!(p.data(), vec![1.0, -2.0]);
    }

    #[test]
    fn adamw_respects_group_rates() {
        let config = TrainConfig {
            lr_main: 0.1,
            lr_other: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let a = Tensor::param(&[1], vec![1.0]);
        let b = Tensor::param(&[1], vec![1.0]);
        let loss = a.add(&b).unwrap().sum_all();
        loss.backward().unwrap();
        let mut opt = AdamW::new(vec![a.clone()], vec![b.clone()], &config);
        opt.step(1.0);
        assert!(a.data()[0] < 1.0);
        assert_eq!(b.data(), vec![1.0]);
    }

    fn toy_judgments() -> Judgments {
        let mut j = Judgments::new();
        j.insert("q1", "dpos", 1);
        j.insert("q2", "other", 1); // q2 has no candidates -> skipped
        j
    }

    #[test]
    fn sampling_one_pair_per_eligible_query() {
        let judgments = toy_judgments();
        let negatives: Vec<(String, f64)> = (0..99)
            .map(|i| (format!("dneg{i:02}"), 99.0 - i as f64))
            .collect();
        let mut entries = negatives.clone();
        entries.push(("dpos".into(), 100.0));
        let candidates = vec![CandidateList::new("q1".into(), entries).unwrap()];
        let ids = vec!["q1".to_string(), "q2".to_string()];
        let (pairs, skipped) = sample_epoch(&ids, &judgments, &candidates, 100, 7);
        assert_eq!(pairs.len(), 1);
        assert_eq!(skipped, 1);
        assert_eq!(pairs[0].positive, "dpos");
        assert!(pairs[0].negative.starts_with("dneg"));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let judgments = toy_judgments();
        let entries: Vec<(String, f64)> = (0..50)
            .map(|i| (format!("d{i:02}"), 50.0 - i as f64))
            .chain([("dpos".to_string(), 99.0)])
            .collect();
        let candidates = vec![CandidateList::new("q1".into(), entries).unwrap()];
        let ids = vec!["q1".to_string()];
        let (a, _) = sample_epoch(&ids, &judgments, &candidates, 100, 3);
        let (b, _) = sample_epoch(&ids, &judgments, &candidates, 100, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn candidate_list_rejects_duplicates() {
        let entries = vec![("d1".to_string(), 2.0), ("d1".to_string(), 1.0)];
        assert!(CandidateList::new("q".into(), entries).is_err());
    }
}
