//! Command-line surface of the ranking laboratory.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use longrank::config::ExperimentConfig;
use longrank::data::Collection;
use longrank::evaluation::{read_run, Judgments, Metric, MetricReport};
use longrank::experiment::{
    analyze_positions, emit_report, evaluate_model, load_run_dir, run_experiment, run_sweep,
    PositionOptions,
};
use longrank::ranker::Ranker;
use longrank::tokenize::build_vocab;
use longrank::training::{train, TrainData};
use longrank::Vocab;

#[derive(Parser)]
#[command(
    name = "longrank",
    about = "Long-document neural ranking laboratory: chunking, passage aggregation, training, evaluation, and position-bias analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a subword vocabulary from corpus files.
    BuildVocab(BuildVocabArgs),
    /// Generate a synthetic corpus with planted relevance positions.
    GenSynthetic(GenSyntheticArgs),
    /// Train one model with one seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or score an existing run file against qrels.
    Evaluate(EvaluateArgs),
    /// Match passages into documents and analyze position distributions.
    AnalyzePositions(AnalyzeArgs),
    /// Run the configured experiment grid (all models x seeds, plus any
    /// [sweep] axes) and emit comparison tables.
    Sweep(SweepArgs),
    /// Build a comparison report from completed run directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Corpus files (`id<TAB>text`; lines without a tab are taken whole).
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 500)]
    max_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Experiment config with a [synthetic] section.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Model name from the config; defaults to the first model.
    #[arg(long)]
    model: Option<String>,
    /// Overrides the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Starting checkpoint (fine-tuning mode).
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Config + checkpoint mode.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Run-file mode: a TREC run to score directly.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Comma-separated metrics, e.g. "mrr@10,ndcg@10,map".
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Passage file (`id<TAB>text`).
    #[arg(long)]
    passages: PathBuf,
    /// Whitespace-delimited `qid docid passage_id` triples.
    #[arg(long)]
    mapping: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 477)]
    chunk_size: usize,
    #[arg(long, default_value_t = 6)]
    buckets: usize,
    #[arg(long, default_value_t = 3)]
    max_chunks: usize,
    #[arg(long, default_value_t = 10_000)]
    length_cap: usize,
    /// Count every matched passage instead of only the first per document.
    #[arg(long)]
    all_passages: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Completed run directories (each holding reports/*.json).
    #[arg(long, required = true, num_args = 1..)]
    run_dir: Vec<PathBuf>,
    /// Comma-separated baseline model names, in marker order.
    #[arg(long)]
    baselines: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Write the table here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::BuildVocab(args) => build_vocab_cmd(args),
        Command::GenSynthetic(args) => gen_synthetic_cmd(args),
        Command::Train(args) => train_cmd(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::AnalyzePositions(args) => analyze_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::Report(args) => report_cmd(args),
    }
}

fn build_vocab_cmd(args: BuildVocabArgs) -> Result<()> {
    let mut lines = Vec::new();
    for path in &args.corpus {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        for line in text.lines() {
            let body = line.split_once('\t').map(|(_, t)| t).unwrap_or(line);
            lines.push(body.to_string());
        }
    }
    let vocab = build_vocab(&lines, args.max_size)?;
    vocab.write_to(&args.out)?;
    println!("wrote {} tokens to {}", vocab.len(), args.out.display());
    Ok(())
}

fn gen_synthetic_cmd(args: GenSyntheticArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    let spec = config
        .synthetic
        .as_ref()
        .context("config has no [synthetic] section")?;
    let data = longrank::synthetic::generate_synthetic(spec)?;
    data.write_bundle(&args.out_dir)?;
    println!(
        "generated {} queries, {} documents, vocab {} -> {}",
        data.queries.len(),
        data.corpus.len(),
        data.vocab.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn pick_model<'a>(config: &'a ExperimentConfig, name: &Option<String>) -> Result<&'a longrank::config::ModelSpec> {
    match name {
        Some(n) => config
            .models
            .iter()
            .find(|m| &m.name == n)
            .with_context(|| format!("model {n} not found in config")),
        None => config.models.first().context("config has no models"),
    }
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    config.validate_paths()?;
    let model = pick_model(&config, &args.model)?;
    let seed = args.seed.unwrap_or(config.training.seed);

    let vocab = Vocab::load(&config.data.vocab)?;
    let collection = Collection::load(
        &vocab,
        &config.chunking,
        &config.data.corpus,
        &config.data.queries,
        &config.data.qrels,
        &config.data.candidates,
    )?;

    let ranker = Ranker::new(
        config.encoder.clone(),
        model.aggregator.clone(),
        config.chunking,
        vocab.len(),
        seed,
    )?;
    let init = args.init.as_ref().or(config.data.init_checkpoint.as_ref());
    if let Some(path) = init {
        ranker.params.load(path)?;
        println!("initialized from {}", path.display());
    }
    if ranker.wants_pretrained_aggregator() {
        let source = config
            .data
            .aggregator_source
            .as_ref()
            .context("pretrained_reuse aggregator needs data.aggregator_source")?;
        ranker.reuse_aggregator_from(&longrank::tensor::read_checkpoint(source)?)?;
    }

    let mut train_config = config.training.clone();
    train_config.seed = seed;
    let data = TrainData {
        queries: collection.queries.clone(),
        docs: &collection.docs,
        judgments: &collection.judgments,
        candidates: &collection.candidates,
    };
    let log = train(&ranker, &data, &vocab, &train_config)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let stem = format!("{}_seed{}", model.name, seed);
    let ckpt = args.out_dir.join(format!("{stem}.ckpt"));
    ranker.params.save(&ckpt)?;
    std::fs::write(args.out_dir.join(format!("{stem}.tsv")), log.to_tsv())?;
    let last_loss = log.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} for {} steps (final batch loss {:.4}); checkpoint at {}",
        model.name,
        log.total_steps,
        last_loss,
        ckpt.display()
    );
    Ok(())
}

fn parse_metric_list(spec: &Option<String>, fallback: &[String]) -> Result<Vec<Metric>> {
    let names: Vec<String> = match spec {
        Some(s) => s.split(',').map(|m| m.trim().to_string()).collect(),
        None => fallback.to_vec(),
    };
    Ok(names
        .iter()
        .map(|m| Metric::parse(m))
        .collect::<longrank::Result<Vec<_>>>()?)
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    if let Some(run_path) = &args.run {
        // Run-file mode.
        let qrels_path = args.qrels.as_ref().context("--run mode needs --qrels")?;
        let judgments = Judgments::read_qrels(qrels_path)?;
        let run = read_run(run_path)?;
        let metrics = parse_metric_list(&args.metrics, &["mrr@10".to_string()])?;
        for metric in metrics {
            let report = MetricReport::compute(metric, std::slice::from_ref(&run), &judgments)?;
            println!(
                "{}\t{:.6}\t({} queries, {} skipped)",
                metric,
                report.aggregate,
                report.seed_averaged.len(),
                report.skipped_queries
            );
        }
        return Ok(());
    }

    // Checkpoint mode.
    let config_path = args.config.as_ref().context("need --config or --run")?;
    let checkpoint = args
        .checkpoint
        .as_ref()
        .context("checkpoint mode needs --checkpoint")?;
    let config = ExperimentConfig::load(config_path)?;
    config.validate_paths()?;
    let model = pick_model(&config, &args.model)?;
    let vocab = Vocab::load(&config.data.vocab)?;
    let d = &config.data;
    let eval = Collection::load(
        &vocab,
        &config.chunking,
        d.eval_corpus.as_ref().unwrap_or(&d.corpus),
        d.eval_queries.as_ref().unwrap_or(&d.queries),
        d.eval_qrels.as_ref().unwrap_or(&d.qrels),
        d.eval_candidates.as_ref().unwrap_or(&d.candidates),
    )?;
    let ranker = Ranker::new(
        config.encoder.clone(),
        model.aggregator.clone(),
        config.chunking,
        vocab.len(),
        0,
    )?;
    ranker.params.load(checkpoint)?;
    let run = evaluate_model(&ranker, &vocab, &eval)?;

    let metrics = parse_metric_list(&args.metrics, &config.evaluation.metrics)?;
    let mut lines = String::new();
    for metric in metrics {
        let report = MetricReport::compute(metric, std::slice::from_ref(&run), &eval.judgments)?;
        let line = format!("{}\t{:.6}", metric, report.aggregate);
        println!("{line}\t({} skipped)", report.skipped_queries);
        lines.push_str(&line);
        lines.push('\n');
    }
    if let Some(out_dir) = &args.out_dir {
        std::fs::create_dir_all(out_dir)?;
        longrank::evaluation::write_run(
            &out_dir.join(format!("{}.run", model.name)),
            &run,
            &config.evaluation.run_tag,
        )?;
        std::fs::write(out_dir.join("metrics.tsv"), lines)?;
        println!("artifacts written to {}", out_dir.display());
    }
    Ok(())
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<()> {
    let vocab = Vocab::load(&args.vocab)?;
    let options = PositionOptions {
        chunk_size: args.chunk_size,
        buckets: args.buckets,
        max_chunks: args.max_chunks,
        length_cap: args.length_cap,
        first_only: !args.all_passages,
    };
    let summary = analyze_positions(
        &vocab,
        &args.corpus,
        &args.passages,
        &args.mapping,
        &options,
        &args.out_dir,
    )?;
    println!(
        "matched {}/{} passages ({:.1}%; {} substring, {} subsequence)",
        summary.matched,
        summary.total_passages,
        100.0 * summary.match_rate,
        summary.matched_substring,
        summary.matched_subsequence
    );
    match summary.ceiling {
        Some(c) => println!("first-chunk ceiling factor: {c:.4}"),
        None => println!("first-chunk ceiling factor: degenerate distribution"),
    }
    println!("tables written to {}", args.out_dir.display());
    Ok(())
}

fn sweep_cmd(args: SweepArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    if config.sweep.is_some() {
        let cells = run_sweep(&config, &args.out_dir)?;
        println!(
            "swept {} cells -> {}",
            cells.len(),
            args.out_dir.join("sweep.tsv").display()
        );
    } else {
        let summary = run_experiment(&config, &args.out_dir)?;
        println!("{}", summary.report_text);
        println!("artifacts written to {}", args.out_dir.display());
    }
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<()> {
    let mut evaluations = Vec::new();
    for dir in &args.run_dir {
        evaluations.extend(load_run_dir(dir)?);
    }
    if evaluations.is_empty() {
        bail!("no model reports found in the given run directories");
    }
    let mut seen = std::collections::HashSet::new();
    for e in &evaluations {
        if !seen.insert(e.name.clone()) {
            bail!("duplicate model name {} across run directories", e.name);
        }
    }
    let baselines: Vec<String> = args
        .baselines
        .map(|b| b.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    let (table, _) = emit_report(&evaluations, &baselines, args.alpha)?;
    println!("{table}");
    if let Some(out) = &args.out {
        std::fs::write(out, table)?;
    }
    Ok(())
}
