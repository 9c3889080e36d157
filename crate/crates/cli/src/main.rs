use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sumkit::corpus::{corpus_stats, filter_corpus, parse_records, write_jsonl, Cleaner, Record};
use sumkit::embedding::{load_store, onehot_provider, EmbeddingError, Provider, RemoteProvider, StoreProvider};
use sumkit::extractive::{summarize_extractive, SummaryTarget};
use sumkit::harness::{
    aggregate_human_eval, read_scores, run_extractive_eval, score_pairs, serve_annotation,
    stratified_sample, AnnotationConfig, EvalConfig, EvalOutput, SampleCandidate, SampleItem,
    ScorePair, DEFAULT_HUMAN_SAMPLE,
};
use sumkit::text::{load_vocab, SubwordVocab, TokenCounter, WordCounter};
use sumkit::truncation::{truncate_article, DEFAULT_BUDGET};
use sumkit::vocab_adapt::{
    count_frequencies, prune_embeddings, select_vocabulary, size_report, MatrixMeta,
    DEFAULT_TARGET_SIZE,
};

#[derive(Parser)]
#[command(name = "sumkit", version, about = "Summarization toolkit for low-resource news corpora")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and filter exported records into a corpus file.
    Ingest(IngestArgs),
    /// Token statistics of a corpus.
    Stats(StatsArgs),
    /// Fit articles into a token budget by dropping low-recall paragraphs.
    Truncate(TruncateArgs),
    /// Generate summaries.
    Summarize(SummarizeArgs),
    /// Score generated summaries against references.
    Score(ScoreArgs),
    /// Prune a vocabulary and its embedding matrix to the most frequent pieces.
    TrimVocab(TrimVocabArgs),
    /// Summarize and score a corpus in one run.
    Evaluate(EvaluateArgs),
    /// Serve the blind annotation interface.
    AnnotateServe(ServeArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Record files (one JSON object per line).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// Records above this compression ratio (percent) are removed.
    #[arg(long, default_value_t = 50.0)]
    max_ratio: f64,
    /// Where to write removed records.
    #[arg(long)]
    removed: Option<PathBuf>,
    /// Skip URL and caption cleaning.
    #[arg(long)]
    no_clean: bool,
    /// Extra caption-line prefix (repeatable).
    #[arg(long = "caption-marker")]
    caption_markers: Vec<String>,
}

#[derive(Args)]
struct StatsArgs {
    input: PathBuf,
    /// Print the machine-readable object instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TruncateArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Count subword tokens with this vocabulary instead of words.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Per-record removal log (JSON lines).
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Extractive,
}

#[derive(Args, Clone)]
struct ProviderArgs {
    /// `onehot`, `store:<file>` or `remote:<url>`.
    #[arg(long, default_value = "onehot")]
    provider: String,
    /// Subword vocabulary; required by the one-hot provider.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Embedding cache file for the remote provider.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TargetArgs {
    /// Summary length as a fraction of the article.
    #[arg(long, conflicts_with = "target_tokens")]
    target_ratio: Option<f64>,
    /// Summary length in tokens.
    #[arg(long)]
    target_tokens: Option<usize>,
}

impl TargetArgs {
    fn target(&self) -> Option<SummaryTarget> {
        match (self.target_ratio, self.target_tokens) {
            (Some(r), _) => Some(SummaryTarget::Ratio(r)),
            (_, Some(t)) => Some(SummaryTarget::Tokens(t)),
            _ => None,
        }
    }
}

#[derive(Args)]
struct SummarizeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "extractive")]
    mode: Mode,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    /// Pairs file: JSON lines with `reference`, `generated` and optional `id`.
    pairs: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long, default_value = "generated")]
    system: String,
    #[arg(long, default_value = "dataset")]
    dataset: String,
    /// Count punctuation tokens in ROUGE.
    #[arg(long)]
    include_punctuation: bool,
    /// Write the EvalRow here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    per_record: Option<PathBuf>,
}

#[derive(Args)]
struct TrimVocabArgs {
    /// Corpus files whose piece frequencies decide what is kept.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TARGET_SIZE)]
    target: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    input: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "extractive")]
    system: String,
    #[arg(long, default_value = "dataset")]
    dataset: String,
    #[arg(long)]
    include_punctuation: bool,
    /// Write the EvalRow here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    per_record: Option<PathBuf>,
    #[arg(long)]
    summaries: Option<PathBuf>,
    /// Human score log to join against the automatic scores.
    #[arg(long)]
    human_scores: Option<PathBuf>,
    /// Comparison matrix (CSV) when human scores are given.
    #[arg(long)]
    comparison: Option<PathBuf>,
    /// Write an annotation sample of summaries picked across the R-1 range.
    #[arg(long)]
    annotation_sample: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HUMAN_SAMPLE)]
    sample_size: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Session seed for blinding tokens and task shuffles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample file: JSON array or JSON lines of items with summary_id,
    /// reference and candidates [{system, text}].
    #[arg(long)]
    sample: PathBuf,
    #[arg(long, default_value = "scores.jsonl")]
    scores_file: PathBuf,
    /// Built UI assets.
    #[arg(long)]
    assets: Option<PathBuf>,
}

/// Failure that should exit with status 1 rather than 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for I/O and network failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if cause.is::<io::Error>() {
            return 2;
        }
        if let Some(EmbeddingError::Remote { .. } | EmbeddingError::Io(_)) = cause.downcast_ref() {
            return 2;
        }
    }
    1
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Stats(a) => stats(a),
        Command::Truncate(a) => truncate(a),
        Command::Summarize(a) => summarize(a),
        Command::Score(a) => score(a),
        Command::TrimVocab(a) => trim_vocab(a),
        Command::Evaluate(a) => evaluate(a),
        Command::AnnotateServe(a) => annotate_serve(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn read_corpus(path: &Path) -> Result<Vec<Record>> {
    parse_records(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_records<T: serde::Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    match path {
        Some(p) => write_jsonl(create(p)?, rows)?,
        None => write_jsonl(io::stdout().lock(), rows)?,
    }
    Ok(())
}

fn vocab(path: &Path) -> Result<Arc<SubwordVocab>> {
    Ok(Arc::new(
        load_vocab(path).with_context(|| format!("loading vocabulary {}", path.display()))?,
    ))
}

fn counter(vocab: Option<&Arc<SubwordVocab>>) -> Box<dyn TokenCounter + '_> {
    match vocab {
        Some(v) => Box::new(v.as_ref().clone()),
        None => Box::new(WordCounter),
    }
}

fn provider(args: &ProviderArgs, vocab: Option<&Arc<SubwordVocab>>) -> Result<Box<dyn Provider<f64>>> {
    let spec = args.provider.as_str();
    if spec == "onehot" {
        let v = vocab.ok_or_else(|| invalid("the onehot provider needs --vocab"))?;
        return Ok(Box::new(onehot_provider(v.clone())));
    }
    if let Some(path) = spec.strip_prefix("store:") {
        let store = load_store::<f64>(path).with_context(|| format!("loading store {path}"))?;
        return Ok(Box::new(StoreProvider::new(spec, store)));
    }
    if let Some(url) = spec.strip_prefix("remote:") {
        let mut p = RemoteProvider::new(url);
        if let Some(cache) = &args.cache {
            p = p.with_cache_file(cache)?;
        }
        return Ok(Box::new(p));
    }
    Err(invalid(format!(
        "unknown provider {spec:?}; expected onehot, store:<file> or remote:<url>"
    )))
}

fn ingest(a: IngestArgs) -> Result<()> {
    if a.max_ratio <= 0.0 {
        return Err(invalid("--max-ratio must be positive"));
    }
    let mut text = String::new();
    for path in &a.inputs {
        let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        text.push_str(&s);
        if !s.ends_with('\n') {
            text.push('\n');
        }
    }
    let mut records = parse_records(text.as_bytes())?;
    if !a.no_clean {
        let mut markers = Cleaner::default().caption_markers().to_vec();
        markers.extend(a.caption_markers);
        let cleaner = Cleaner::new(markers);
        for r in &mut records {
            r.article = cleaner.clean(&r.article);
            r.summary = cleaner.clean(&r.summary);
        }
    }
    let before = records.len();
    records.retain(|r| match r.validate() {
        Ok(()) => true,
        Err(e) => {
            log::warn!("dropping record: {e}");
            false
        }
    });
    let invalid_count = before - records.len();
    let part = filter_corpus(records, a.max_ratio, &WordCounter)?;
    write_records(Some(&a.output), &part.kept)?;
    if let Some(p) = &a.removed {
        write_records(Some(p), &part.removed)?;
    }
    eprintln!(
        "read {before}, dropped {invalid_count} empty, removed {} above {}%, kept {}",
        part.removed.len(),
        a.max_ratio,
        part.kept.len()
    );
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let records = read_corpus(&a.input)?;
    let s = corpus_stats(&records, &WordCounter)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", s.to_table());
    }
    Ok(())
}

fn truncate(a: TruncateArgs) -> Result<()> {
    let v = a.vocab.as_deref().map(vocab).transpose()?;
    let counter = counter(v.as_ref());
    let records = read_corpus(&a.input)?;
    let mut out = Vec::with_capacity(records.len());
    let mut audit = Vec::new();
    let mut changed = 0;
    for mut rec in records {
        let t = truncate_article(&rec.article, &rec.summary, a.budget, counter.as_ref())
            .map_err(|e| invalid(format!("record {}: {e}", rec.id)))?;
        if !t.is_unchanged() {
            changed += 1;
        }
        audit.push(json!({
            "id": rec.id,
            "tokens_before": t.tokens_before,
            "tokens_after": t.total_tokens,
            "removed": t.removed,
            "kept": t.paragraphs.iter().map(|p| p.index).collect::<Vec<_>>(),
            "scores": t.paragraphs.iter().map(|p| (p.index, p.score)).collect::<Vec<_>>(),
            "hard_cut": t.hard_cut,
        }));
        rec.article = t.text();
        out.push(rec);
    }
    write_records(Some(&a.output), &out)?;
    if let Some(p) = &a.audit {
        write_records(Some(p), &audit)?;
    }
    eprintln!("{changed} of {} articles truncated to {} tokens", out.len(), a.budget);
    Ok(())
}

fn summarize(a: SummarizeArgs) -> Result<()> {
    let Mode::Extractive = a.mode;
    let v = a.provider.vocab.as_deref().map(vocab).transpose()?;
    let p = provider(&a.provider, v.as_ref())?;
    let counter = counter(v.as_ref());
    let records = read_corpus(&a.input)?;
    let target = match a.target.target() {
        Some(t) => t,
        None => SummaryTarget::Ratio(sumkit::harness::default_ratio(&records)?),
    };
    let mut out = Vec::with_capacity(records.len());
    for rec in &records {
        let s = summarize_extractive(&rec.article, target, p.as_ref(), counter.as_ref(), a.seed)
            .with_context(|| format!("record {}", rec.id))?;
        out.push(json!({
            "id": rec.id,
            "summary": s.text,
            "selected_indices": s.selected,
            "k": s.k_used,
        }));
    }
    write_records(a.output.as_deref(), &out)
}

fn score(a: ScoreArgs) -> Result<()> {
    let v = a.provider.vocab.as_deref().map(vocab).transpose()?;
    let p = provider(&a.provider, v.as_ref())?;
    let mut pairs = Vec::new();
    for (i, line) in open(&a.pairs)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ScorePair = serde_json::from_str(&line)
            .map_err(|e| invalid(format!("{} line {}: {e}", a.pairs.display(), i + 1)))?;
        pairs.push(pair);
    }
    let config = EvalConfig {
        system: a.system,
        dataset: a.dataset,
        include_punctuation: a.include_punctuation,
        ..EvalConfig::default()
    };
    let out = score_pairs(&pairs, p.as_ref(), &config)?;
    write_eval(&out, a.output.as_deref(), a.per_record.as_deref(), None)
}

fn write_eval(
    out: &EvalOutput,
    output: Option<&Path>,
    per_record: Option<&Path>,
    summaries: Option<&Path>,
) -> Result<()> {
    write_text(output, &out.row.to_json())?;
    if output.is_some() {
        eprintln!("{}", sumkit::harness::EvalRow::table_header());
        eprintln!("{}", out.row.to_table_line());
    }
    if let Some(p) = per_record {
        write_records(Some(p), &out.per_record)?;
    }
    if let Some(p) = summaries {
        write_records(Some(p), &out.summaries)?;
    }
    Ok(())
}

fn trim_vocab(a: TrimVocabArgs) -> Result<()> {
    let source = load_vocab(&a.vocab).with_context(|| format!("loading {}", a.vocab.display()))?;
    let matrix = load_store::<f32>(&a.embeddings)
        .with_context(|| format!("loading {}", a.embeddings.display()))?;
    let mut records = Vec::new();
    for path in &a.corpus {
        records.extend(read_corpus(path)?);
    }
    let freqs = count_frequencies(&records, &source);
    let map = select_vocabulary(&freqs, &source, a.target)?;
    let pruned = prune_embeddings(&matrix, &map, source.len())?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_text(Some(&a.out_dir.join("vocab.txt")), &map.new_vocab.to_file_string())?;
    pruned.save(a.out_dir.join("embeddings.embv1"))?;
    let mut remap = create(&a.out_dir.join("remap.tsv"))?;
    map.write_remap(&mut remap)?;
    let report = size_report(MatrixMeta::of(&matrix), MatrixMeta::of(&pruned));
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_text(Some(&a.out_dir.join("size_report.json")), &json)?;
    print!("{json}");
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let v = a.provider.vocab.as_deref().map(vocab).transpose()?;
    let p = provider(&a.provider, v.as_ref())?;
    let counter = counter(v.as_ref());
    let records = read_corpus(&a.input)?;
    let config = EvalConfig {
        system: a.system.clone(),
        dataset: a.dataset,
        target: a.target.target(),
        seed: a.seed,
        include_punctuation: a.include_punctuation,
    };
    let out = run_extractive_eval(&records, p.as_ref(), counter.as_ref(), &config)?;
    write_eval(&out, a.output.as_deref(), a.per_record.as_deref(), a.summaries.as_deref())?;

    if let Some(path) = &a.human_scores {
        let scores = read_scores(open(path)?)?;
        let auto: Vec<_> = out
            .per_record
            .iter()
            .map(|r| (a.system.clone(), r.clone()))
            .collect();
        let report = aggregate_human_eval(&scores, &auto)?;
        eprint!("{}", report.to_table());
        if let Some(csv) = &a.comparison {
            write_text(Some(csv), &report.to_csv())?;
        }
    }
    if let Some(path) = &a.annotation_sample {
        let ids = stratified_sample(&out.per_record, a.sample_size);
        let items: Vec<SampleItem> = ids
            .iter()
            .map(|id| {
                let rec = records.iter().find(|r| &r.id == id).expect("sampled id exists");
                let gen = out.summaries.iter().find(|s| &s.id == id).expect("summary exists");
                SampleItem {
                    summary_id: id.clone(),
                    reference: rec.summary.clone(),
                    candidates: vec![SampleCandidate {
                        system: a.system.clone(),
                        text: gen.summary.clone(),
                    }],
                }
            })
            .collect();
        write_records(Some(path), &items)?;
    }
    Ok(())
}

fn read_sample(path: &Path) -> Result<Vec<SampleItem>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bad = |e: serde_json::Error| invalid(format!("{}: {e}", path.display()));
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(bad);
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(bad))
        .collect()
}

fn annotate_serve(a: ServeArgs) -> Result<()> {
    let sample = read_sample(&a.sample)?;
    if sample.is_empty() {
        return Err(invalid("annotation sample is empty"));
    }
    let config = AnnotationConfig {
        sample,
        session_seed: a.seed,
        scores_path: a.scores_file,
        assets_dir: a.assets,
    };
    serve_annotation(config, SocketAddr::new(a.host, a.port))?;
    Ok(())
}
