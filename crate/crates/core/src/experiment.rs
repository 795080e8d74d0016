//! Experiment orchestration: multi-seed training and evaluation over a
//! grid of models, report emission with significance markers, ablation
//! sweeps, and the position-analysis pipeline.
//!
//! Seeds and models run as independent jobs (in parallel when cores are
//! available); each job is internally deterministic, artifacts are
//! assembled in configuration order, and every emitted file is
//! byte-reproducible for a fixed config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelSpec};
use crate::data::{read_id_text, Collection};
use crate::encoder::Phase;
use crate::error::{Error, Result};
use crate::evaluation::{
    paired_significance, write_run, Metric, MetricReport, RankedList,
};
use crate::position_analysis::{
    build_histograms, estimate_ceiling, match_passage, resolve_token_span, DocMatches,
    MatchMethod, PositionHistogram,
};
use crate::ranker::Ranker;
use crate::tensor::{read_checkpoint, write_checkpoint, TensorData};
use crate::tokenize::{normalize_text, tokenize, Vocab};
use crate::training::{train, TrainData, TrainLog};

/// Ranked lists for every candidate query, scored by the model.
pub fn evaluate_model(ranker: &Ranker, vocab: &Vocab, eval: &Collection) -> Result<Vec<RankedList>> {
    let queries: BTreeMap<&str, &crate::tokenize::TokenSeq> = eval
        .queries
        .iter()
        .map(|(q, t)| (q.as_str(), t))
        .collect();
    let mut runs = Vec::with_capacity(eval.candidates.len());
    for candidate in &eval.candidates {
        let query = queries.get(candidate.query_id.as_str()).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "candidates reference unknown query {}",
                candidate.query_id
            ))
        })?;
        let mut scored = Vec::with_capacity(candidate.entries.len());
        for (doc_id, _) in &candidate.entries {
            let doc = eval.docs.get(doc_id).ok_or_else(|| {
                Error::InvalidConfig(format!("candidates reference unknown document {doc_id}"))
            })?;
            let score = ranker.score(query, doc, vocab, Phase::Eval)?.item()?;
            scored.push((doc_id.clone(), score));
        }
        runs.push(RankedList::new(candidate.query_id.clone(), scored)?);
    }
    Ok(runs)
}

/// Evaluation results for one model across all seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub name: String,
    pub reports: Vec<MetricReport>,
}

impl ModelEvaluation {
    pub fn report_for(&self, metric: Metric) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.metric == metric)
    }
}

struct JobOutput {
    model_index: usize,
    seed: u64,
    checkpoint: Vec<TensorData>,
    log: TrainLog,
    run: Vec<RankedList>,
}

fn build_ranker(config: &ExperimentConfig, model: &ModelSpec, vocab_size: usize, seed: u64) -> Result<Ranker> {
    Ranker::new(
        config.encoder.clone(),
        model.aggregator.clone(),
        config.chunking,
        vocab_size,
        seed,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_job(
    config: &ExperimentConfig,
    model_index: usize,
    seed: u64,
    vocab: &Vocab,
    train_data: &Collection,
    eval_data: &Collection,
    init_snapshot: Option<&[TensorData]>,
    aggregator_source: Option<&[TensorData]>,
) -> Result<JobOutput> {
    let model = &config.models[model_index];
    let ranker = build_ranker(config, model, vocab.len(), seed)?;
    if let Some(snapshot) = init_snapshot {
        ranker.params.restore(snapshot)?;
    }
    if ranker.wants_pretrained_aggregator() {
        let source = aggregator_source.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "model {} uses pretrained_reuse but data.aggregator_source is not set",
                model.name
            ))
        })?;
        ranker.reuse_aggregator_from(source)?;
    }
    let mut train_config = config.training.clone();
    train_config.seed = seed;
    let data = TrainData {
        queries: train_data.queries.clone(),
        docs: &train_data.docs,
        judgments: &train_data.judgments,
        candidates: &train_data.candidates,
    };
    let log = train(&ranker, &data, vocab, &train_config)?;
    let run = evaluate_model(&ranker, vocab, eval_data)?;
    Ok(JobOutput {
        model_index,
        seed,
        checkpoint: ranker.params.snapshot(),
        log,
        run,
    })
}

/// Everything `run_experiment` produces, in memory.
pub struct ExperimentSummary {
    pub evaluations: Vec<ModelEvaluation>,
    pub significance: Vec<SignificanceRow>,
    pub report_text: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SignificanceRow {
    pub model: String,
    pub baseline: String,
    pub metric: String,
    pub p_value: f64,
    pub significant: bool,
}

fn load_eval_collection(config: &ExperimentConfig, vocab: &Vocab) -> Result<Collection> {
    let d = &config.data;
    Collection::load(
        vocab,
        &config.chunking,
        d.eval_corpus.as_ref().unwrap_or(&d.corpus),
        d.eval_queries.as_ref().unwrap_or(&d.queries),
        d.eval_qrels.as_ref().unwrap_or(&d.qrels),
        d.eval_candidates.as_ref().unwrap_or(&d.candidates),
    )
}

/// Train and evaluate every configured model with every seed, writing all
/// artifacts (config snapshot, checkpoints, run files, logs, metric
/// tables, significance report) under `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    config.validate()?;
    config.validate_paths()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    for sub in ["checkpoints", "runs", "logs", "reports"] {
        fs::create_dir_all(out_dir.join(sub))
            .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    }
    config.save(&out_dir.join("config.toml"))?;

    let vocab = Vocab::load(&config.data.vocab)?;
    let train_data = Collection::load(
        &vocab,
        &config.chunking,
        &config.data.corpus,
        &config.data.queries,
        &config.data.qrels,
        &config.data.candidates,
    )?;
    let eval_data = load_eval_collection(config, &vocab)?;

    let init_snapshot = config
        .data
        .init_checkpoint
        .as_ref()
        .map(|p| read_checkpoint(p))
        .transpose()?;
    let aggregator_source = config
        .data
        .aggregator_source
        .as_ref()
        .map(|p| read_checkpoint(p))
        .transpose()?;

    let jobs: Vec<(usize, u64)> = (0..config.models.len())
        .flat_map(|m| config.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let outputs: Vec<JobOutput> = jobs
        .par_iter()
        .map(|&(model_index, seed)| {
            run_job(
                config,
                model_index,
                seed,
                &vocab,
                &train_data,
                &eval_data,
                init_snapshot.as_deref(),
                aggregator_source.as_deref(),
            )
        })
        .collect::<Result<_>>()?;

    // Persist per-job artifacts in configuration order.
    let mut by_model: Vec<Vec<&JobOutput>> = vec![Vec::new(); config.models.len()];
    for output in &outputs {
        by_model[output.model_index].push(output);
    }
    for model_outputs in &mut by_model {
        model_outputs.sort_by_key(|o| o.seed);
    }
    let metrics = config.parsed_metrics()?;
    let mut evaluations = Vec::with_capacity(config.models.len());
    for (model_index, model) in config.models.iter().enumerate() {
        let mut runs_per_seed = Vec::new();
        for output in &by_model[model_index] {
            let stem = format!("{}_seed{}", model.name, output.seed);
            write_checkpoint(
                &out_dir.join("checkpoints").join(format!("{stem}.ckpt")),
                &output.checkpoint,
            )?;
            write_run(
                &out_dir.join("runs").join(format!("{stem}.run")),
                &output.run,
                &config.evaluation.run_tag,
            )?;
            fs::write(
                out_dir.join("logs").join(format!("{stem}.tsv")),
                output.log.to_tsv(),
            )
            .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
            runs_per_seed.push(output.run.clone());
        }
        let reports = metrics
            .iter()
            .map(|&metric| MetricReport::compute(metric, &runs_per_seed, &eval_data.judgments))
            .collect::<Result<Vec<_>>>()?;
        let evaluation = ModelEvaluation {
            name: model.name.clone(),
            reports,
        };
        let json = serde_json::to_string_pretty(&evaluation)
            .map_err(|e| Error::InvalidConfig(format!("cannot serialize report: {e}")))?;
        fs::write(
            out_dir.join("reports").join(format!("{}.json", model.name)),
            json,
        )
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
        evaluations.push(evaluation);
    }

    let (report_text, significance) = emit_report(
        &evaluations,
        &config.report.baselines,
        config.evaluation.alpha,
    )?;
    fs::write(out_dir.join("report.txt"), &report_text)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut sig_tsv = String::from("model\tbaseline\tmetric\tp_value\tsignificant\n");
    for row in &significance {
        sig_tsv.push_str(&format!(
            "{}\t{}\t{}\t{:.6e}\t{}\n",
            row.model, row.baseline, row.metric, row.p_value, row.significant
        ));
    }
    fs::write(out_dir.join("significance.tsv"), sig_tsv)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut metrics_tsv = String::from("model\tmetric\taggregate\tskipped_queries\n");
    for evaluation in &evaluations {
        for report in &evaluation.reports {
            metrics_tsv.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\n",
                evaluation.name, report.metric, report.aggregate, report.skipped_queries
            ));
        }
    }
    fs::write(out_dir.join("metrics.tsv"), metrics_tsv)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    Ok(ExperimentSummary {
        evaluations,
        significance,
        report_text,
    })
}

/// Build the comparison table with per-baseline significance markers
/// (superscript letters in baseline order) plus the significance rows.
pub fn emit_report(
    evaluations: &[ModelEvaluation],
    baselines: &[String],
    alpha: f64,
) -> Result<(String, Vec<SignificanceRow>)> {
    let mut rows = Vec::new();
    let mut table = String::new();
    if evaluations.is_empty() {
        return Err(Error::InvalidConfig("no model results to report".into()));
    }
    let metrics: Vec<Metric> = evaluations[0].reports.iter().map(|r| r.metric).collect();

    table.push_str(&format!("{:<24}", "model"));
    for metric in &metrics {
        table.push_str(&format!("{:<18}", metric.to_string()));
    }
    table.push('\n');

    let marker_letters: Vec<char> = ('a'..='z').collect();
    for evaluation in evaluations {
        table.push_str(&format!("{:<24}", evaluation.name));
        for (mi, metric) in metrics.iter().enumerate() {
            let report = &evaluation.reports[mi];
            let mut markers = String::new();
            for (bi, baseline_name) in baselines.iter().enumerate() {
                if baseline_name == &evaluation.name {
                    continue;
                }
                let baseline = evaluations
                    .iter()
                    .find(|e| &e.name == baseline_name)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!("missing baseline results {baseline_name}"))
                    })?;
                let base_report = baseline.report_for(*metric).ok_or_else(|| {
                    Error::InvalidConfig(format!("baseline lacks metric {metric}"))
                })?;
                let (a, b) = report.aligned_values(base_report)?;
                let (p, significant) = paired_significance(&a, &b, alpha)?;
                rows.push(SignificanceRow {
                    model: evaluation.name.clone(),
                    baseline: baseline_name.clone(),
                    metric: metric.to_string(),
                    p_value: p,
                    significant,
                });
                if significant {
                    markers.push(marker_letters[bi % marker_letters.len()]);
                }
            }
            let cell = if markers.is_empty() {
                format!("{:.4}", report.aggregate)
            } else {
                format!("{:.4}^{}", report.aggregate, markers)
            };
            table.push_str(&format!("{cell:<18}"));
        }
        table.push('\n');
    }
    if !baselines.is_empty() {
        table.push('\n');
        for (bi, baseline) in baselines.iter().enumerate() {
            table.push_str(&format!(
                "superscript {}: significant difference (alpha={alpha}) vs {baseline}\n",
                marker_letters[bi % marker_letters.len()],
            ));
        }
    }
    Ok((table, rows))
}

/// One sweep cell result: the overridden chunking parameters and the
/// per-model aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub label: String,
    pub evaluations: Vec<ModelEvaluation>,
}

/// Run the configured ablation grid; each cell is a full multi-seed
/// experiment in its own subdirectory. Produces `sweep.tsv` rows of
/// seed-averaged aggregates per cell and model.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SweepCell>> {
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Error::InvalidConfig("config has no [sweep] section".into()))?;
    let mut cells: Vec<(String, ExperimentConfig)> = Vec::new();
    if let Some(chunk_counts) = &sweep.max_chunks {
        for &max_chunks in chunk_counts {
            let mut cell = config.clone();
            cell.chunking.max_chunks = max_chunks;
            cell.sweep = None;
            cells.push((format!("chunks{max_chunks}"), cell));
        }
    }
    if let Some(windows) = &sweep.windows {
        for &(window, stride) in windows {
            let mut cell = config.clone();
            cell.chunking.scheme = crate::chunking::ChunkScheme::Sliding { window, stride };
            cell.sweep = None;
            cells.push((format!("w{window}s{stride}"), cell));
        }
    }
    if cells.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut results = Vec::with_capacity(cells.len());
    let mut tsv = String::from("cell\tmodel\tmetric\taggregate\n");
    for (label, cell_config) in cells {
        let summary = run_experiment(&cell_config, &out_dir.join(&label))?;
        for evaluation in &summary.evaluations {
            for report in &evaluation.reports {
                tsv.push_str(&format!(
                    "{label}\t{}\t{}\t{:.6}\n",
                    evaluation.name, report.metric, report.aggregate
                ));
            }
        }
        results.push(SweepCell {
            label,
            evaluations: summary.evaluations,
        });
    }
    fs::write(out_dir.join("sweep.tsv"), tsv)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionOptions {
    pub chunk_size: usize,
    pub buckets: usize,
    pub max_chunks: usize,
    pub length_cap: usize,
    pub first_only: bool,
}

impl Default for PositionOptions {
    fn default() -> Self {
        PositionOptions {
            chunk_size: 477,
            buckets: 6,
            max_chunks: 3,
            length_cap: 10_000,
            first_only: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PositionSummary {
    pub total_passages: usize,
    pub matched: usize,
    pub matched_substring: usize,
    pub matched_subsequence: usize,
    pub match_rate: f64,
    pub ceiling: Option<f64>,
}

/// Match passages into documents, aggregate start/end chunk histograms and
/// the document-length histogram, estimate the first-chunk ceiling, and
/// write `positions.tsv` (chunk, start%, end%), `doc_lengths.tsv`,
/// `matches.tsv`, and `summary.txt` under `out_dir`.
///
/// `mapping_path` holds whitespace-delimited `query_id doc_id passage_id`
/// triples; passage texts come from `passages_path` (`id <TAB> text`).
pub fn analyze_positions(
    vocab: &Vocab,
    corpus_path: &Path,
    passages_path: &Path,
    mapping_path: &Path,
    options: &PositionOptions,
    out_dir: &Path,
) -> Result<PositionSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut docs = BTreeMap::new();
    for (id, text) in read_id_text(corpus_path)? {
        let normalized = normalize_text(&text);
        let tokens = tokenize(vocab, &normalized);
        docs.insert(id, (normalized, tokens));
    }
    let passages: BTreeMap<String, String> = read_id_text(passages_path)?
        .into_iter()
        .map(|(id, text)| (id, normalize_text(&text)))
        .collect();

    let mapping_text = fs::read_to_string(mapping_path)
        .map_err(|e| Error::io(mapping_path.display().to_string(), e))?;
    let mut groups: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for (i, line) in mapping_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                file: mapping_path.display().to_string(),
                line: i + 1,
                detail: format!("expected `qid docid passage_id`, got {} fields", fields.len()),
            });
        }
        groups
            .entry((fields[0].to_string(), fields[1].to_string()))
            .or_default()
            .push(fields[2].to_string());
    }

    let mut doc_matches = Vec::new();
    let mut matches_tsv =
        String::from("query\tdoc\tpassage\tmatched\tmethod\tscore\ttoken_start\ttoken_end\n");
    let mut summary = PositionSummary {
        total_passages: 0,
        matched: 0,
        matched_substring: 0,
        matched_subsequence: 0,
        match_rate: 0.0,
        ceiling: None,
    };
    for ((qid, did), passage_ids) in &groups {
        let (doc_text, doc_tokens) = docs.get(did).ok_or_else(|| {
            Error::InvalidConfig(format!("mapping references unknown document {did}"))
        })?;
        let mut results = Vec::new();
        for pid in passage_ids {
            let passage = passages.get(pid).ok_or_else(|| {
                Error::InvalidConfig(format!("mapping references unknown passage {pid}"))
            })?;
            let mut result = match_passage(passage, doc_text)?;
            resolve_token_span(&mut result, doc_tokens);
            summary.total_passages += 1;
            if result.matched {
                summary.matched += 1;
                match result.method {
                    MatchMethod::Substring => summary.matched_substring += 1,
                    MatchMethod::Subsequence => summary.matched_subsequence += 1,
                    MatchMethod::None => {}
                }
            }
            let (ts, te) = result.token_span.unwrap_or((0, 0));
            matches_tsv.push_str(&format!(
                "{qid}\t{did}\t{pid}\t{}\t{:?}\t{:.4}\t{ts}\t{te}\n",
                result.matched, result.method, result.score
            ));
            results.push(result);
        }
        doc_matches.push(DocMatches {
            doc_token_len: doc_tokens.len(),
            matches: results,
        });
    }
    summary.match_rate = if summary.total_passages > 0 {
        summary.matched as f64 / summary.total_passages as f64
    } else {
        0.0
    };

    let (start_hist, end_hist, length_hist) = build_histograms(
        &doc_matches,
        options.chunk_size,
        options.buckets,
        options.length_cap,
        options.first_only,
    );
    summary.ceiling = estimate_ceiling(&end_hist, &start_hist, options.max_chunks).ok();

    fs::write(
        out_dir.join("positions.tsv"),
        position_table(&start_hist, &end_hist),
    )
    .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut lengths_tsv = String::from("tokens_from\ttokens_to\tcount\n");
    for (bin, &count) in length_hist.counts.iter().enumerate() {
        lengths_tsv.push_str(&format!(
            "{}\t{}\t{}\n",
            bin * length_hist.bin_width,
            ((bin + 1) * length_hist.bin_width).min(length_hist.cap),
            count
        ));
    }
    fs::write(out_dir.join("doc_lengths.tsv"), lengths_tsv)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    fs::write(out_dir.join("matches.tsv"), matches_tsv)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let ceiling_line = match summary.ceiling {
        Some(c) => format!("{c:.4}"),
        None => "degenerate (no passages end in chunk 1)".to_string(),
    };
    let summary_text = format!(
        "passages\t{}\nmatched\t{}\nmatch_rate\t{:.4}\nby_substring\t{}\nby_subsequence\t{}\nceiling_factor\t{}\n",
        summary.total_passages,
        summary.matched,
        summary.match_rate,
        summary.matched_substring,
        summary.matched_subsequence,
        ceiling_line,
    );
    fs::write(out_dir.join("summary.txt"), summary_text)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    Ok(summary)
}

/// Table-5-style distribution of start/end chunk positions, percentages.
fn position_table(start: &PositionHistogram, end: &PositionHistogram) -> String {
    let mut out = String::from("chunk\tstart_pct\tend_pct\n");
    let (st, et) = (start.total().max(1.0), end.total().max(1.0));
    for i in 0..start.counts.len() {
        out.push_str(&format!(
            "{}\t{:.2}\t{:.2}\n",
            i + 1,
            100.0 * start.counts[i] / st,
            100.0 * end.counts[i] / et
        ));
    }
    out.push_str(&format!(
        "{}+\t{:.2}\t{:.2}\n",
        start.counts.len() + 1,
        100.0 * start.overflow / st,
        100.0 * end.overflow / et
    ));
    out
}

/// Load a model evaluation back from a run directory's `reports/` JSON.
pub fn load_model_evaluation(path: &Path) -> Result<ModelEvaluation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })
}

/// Gather every model evaluation stored under a run directory.
pub fn load_run_dir(run_dir: &Path) -> Result<Vec<ModelEvaluation>> {
    let reports_dir = run_dir.join("reports");
    let mut paths: Vec<PathBuf> = fs::read_dir(&reports_dir)
        .map_err(|e| Error::io(reports_dir.display().to_string(), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_model_evaluation(p)).collect()
}
