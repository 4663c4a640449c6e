use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use webcorpus::bpe::{train_bpe, BpeVocab, WordCounts};
use webcorpus::dedup::DedupState;
use webcorpus::filter::FilterConfig;
use webcorpus::html::ExtractConfig;
use webcorpus::jsonl::{read_jsonl, write_jsonl, AtomicFile};
use webcorpus::ngram::{train_on_text, NGramModel};
use webcorpus::pipeline::{
    render_table, run_pipeline, stages, CorpusManifest, PipelineConfig, PipelineError, StageStats,
};
use webcorpus::prep::{
    finetune_lr_at_step, lr_at_step, mask_epoch, pack_document, resample_imbalanced, write_example,
    LabelKind, LabeledDataset, MaskConfig, PretrainConfig, Sample, FINETUNE_PEAK_LR,
    FINETUNE_WARMUP_FRACTION,
};

/// Bad flags or settings. Maps to exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Parser)]
#[command(name = "webcorpus", version, about = "Build a cleaned, deduplicated text corpus from web crawls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage from a TOML config and write the manifest.
    Run(RunArgs),
    /// Select target-language HTML responses from WARC archives.
    Ingest(IngestArgs),
    /// Extract main content from raw documents.
    Extract(ExtractArgs),
    /// Apply the length, keyword and perplexity rules.
    Filter(FilterArgs),
    /// Drop exact duplicates across shards, first occurrence wins.
    Dedup(DedupArgs),
    /// Train an n-gram model on reference text and write it as ARPA.
    TrainLm(TrainLmArgs),
    /// Train a byte-level BPE vocabulary.
    TrainBpe(TrainBpeArgs),
    /// Encode text lines into space-separated token ids.
    Encode(CodecArgs),
    /// Decode lines of space-separated token ids into text.
    Decode(CodecArgs),
    /// Pack and mask a text corpus for one epoch.
    Mask(MaskArgs),
    /// Rebalance a binary labeled dataset.
    Resample(ResampleArgs),
    /// Print a learning-rate schedule as CSV.
    LrCurve(LrCurveArgs),
    /// Print a manifest as a table.
    Stats(StatsArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    target_language: Option<String>,
    #[arg(long)]
    min_chars: Option<usize>,
    #[arg(long)]
    keyword_min_chars: Option<usize>,
    #[arg(long)]
    ppl_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IngestArgs {
    /// WARC files, plain or gzip.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "pol")]
    lang: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_link_density: Option<f64>,
    #[arg(long)]
    min_block_chars: Option<usize>,
}

#[derive(Args)]
struct LmSource {
    /// ARPA model.
    #[arg(long, conflicts_with = "lm_reference")]
    lm_model: Option<PathBuf>,
    /// Reference text to train the model on.
    #[arg(long)]
    lm_reference: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    order: usize,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lm: LmSource,
    #[arg(long, default_value_t = 100)]
    min_chars: usize,
    #[arg(long, default_value_t = 500)]
    keyword_min_chars: usize,
    #[arg(long, default_value_t = 1000.0)]
    ppl_threshold: f64,
    /// Per-document decisions as JSONL.
    #[arg(long)]
    decisions: Option<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    /// Shards in order; earlier shards win.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Kept texts, one block per document, blank-line separated.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    max_digests: Option<usize>,
}

#[derive(Args)]
struct TrainLmArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainBpeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    vocab_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Defaults to stdin.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Text corpus, documents separated by blank lines.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    epoch: u32,
    #[arg(long, default_value_t = 512)]
    max_len: usize,
}

#[derive(Args)]
struct ResampleArgs {
    /// JSONL with `text` and `label` fields.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    minority_factor: f64,
    #[arg(long, default_value_t = 0.75)]
    majority_factor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LrCurveArgs {
    /// Pre-training preset: base or large.
    #[arg(long, conflicts_with = "finetune_steps")]
    preset: Option<String>,
    /// Fine-tuning schedule over this many steps.
    #[arg(long)]
    finetune_steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn input_or_stdin(path: &Option<PathBuf>) -> Result<Box<dyn BufRead>> {
    Ok(match path {
        Some(p) => Box::new(open(p)?),
        None => Box::new(BufReader::new(io::stdin())),
    })
}

fn output_or_stdout(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Writes through a temporary file so a failed stage leaves no partial output.
fn with_output<T>(path: &Path, f: impl FnOnce(&mut BufWriter<AtomicFile>) -> Result<T>) -> Result<T> {
    let file = AtomicFile::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let v = f(&mut w)?;
    w.into_inner().map_err(|e| e.into_error())?.finish()?;
    Ok(v)
}

fn print_stats(stats: &StageStats) -> Result<()> {
    println!("{}", serde_json::to_string(stats)?);
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(d) = args.output_dir {
        cfg.output_dir = d;
    }
    if let Some(l) = args.target_language {
        cfg.target_language = l;
    }
    if let Some(n) = args.min_chars {
        cfg.min_chars = n;
    }
    if let Some(n) = args.keyword_min_chars {
        cfg.keyword_min_chars = n;
    }
    if let Some(t) = args.ppl_threshold {
        cfg.ppl_threshold = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let manifest = run_pipeline(&cfg)?;
    print!("{}", render_table(&manifest));
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let stats = with_output(&args.out, |w| {
        let mut total = StageStats::new("ingest");
        for p in &args.input {
            total.absorb(&stages::ingest_archive(p, &args.lang, w)?);
        }
        Ok(total)
    })?;
    print_stats(&stats)
}

fn extract(args: ExtractArgs) -> Result<()> {
    let mut cfg = ExtractConfig::default();
    if let Some(d) = args.max_link_density {
        if !(d > 0.0 && d <= 1.0) {
            return usage("--max-link-density must be in (0, 1]");
        }
        cfg.max_link_density = d;
    }
    if let Some(n) = args.min_block_chars {
        cfg.min_block_chars = n;
    }
    let name = args.input.display().to_string();
    let input = open(&args.input)?;
    let stats = with_output(&args.out, |w| Ok(stages::extract_stream(input, &name, &cfg, w)?))?;
    print_stats(&stats)
}

fn load_lm(src: &LmSource) -> Result<NGramModel> {
    match (&src.lm_model, &src.lm_reference) {
        (Some(p), None) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(NGramModel::from_arpa_str(&text)?)
        }
        (None, Some(p)) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(train_on_text(&text, src.order)?)
        }
        _ => usage("one of --lm-model or --lm-reference is required"),
    }
}

fn filter(args: FilterArgs) -> Result<()> {
    if args.min_chars == 0 || args.keyword_min_chars == 0 || !(args.ppl_threshold > 0.0) {
        return usage("thresholds must be positive");
    }
    let model = load_lm(&args.lm)?;
    let cfg = FilterConfig {
        min_chars: args.min_chars,
        keyword_min_chars: args.keyword_min_chars,
        ppl_threshold: args.ppl_threshold,
        ..FilterConfig::default()
    };
    let name = args.input.display().to_string();
    let input = open(&args.input)?;
    let mut decisions = match &args.decisions {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let stats = with_output(&args.out, |w| {
        let d = decisions.as_mut().map(|d| d as &mut dyn Write);
        Ok(stages::filter_stream(input, &name, &model, &cfg, w, d)?)
    })?;
    if let Some(mut d) = decisions {
        d.flush()?;
    }
    print_stats(&stats)
}

fn dedup(args: DedupArgs) -> Result<()> {
    let mut shards = Vec::new();
    for p in &args.input {
        let (digests, _) = stages::local_digests(open(p)?, &p.display().to_string())?;
        shards.push(digests);
    }
    let mut state = match args.max_digests {
        Some(cap) => DedupState::with_cap(cap),
        None => DedupState::new(),
    };
    let kept = stages::merge_digests(&shards, &mut state)?;
    let mut corpus: Box<dyn Write> = match &args.corpus {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::sink()),
    };
    let stats = with_output(&args.out, |w| {
        let mut total = StageStats::new("dedup");
        for (p, k) in args.input.iter().zip(&kept) {
            if total.docs_out > 0 && !k.is_empty() {
                corpus.write_all(b"\n")?;
            }
            total.absorb(&stages::write_kept(open(p)?, &p.display().to_string(), k, w, &mut corpus)?);
        }
        Ok(total)
    })?;
    corpus.flush()?;
    print_stats(&stats)
}

fn train_lm(args: TrainLmArgs) -> Result<()> {
    if !(1..=webcorpus::ngram::MAX_ORDER).contains(&args.order) {
        return usage(format!("--order must be in 1..={}", webcorpus::ngram::MAX_ORDER));
    }
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let model = train_on_text(&text, args.order)?;
    with_output(&args.out, |w| Ok(model.write_arpa(w)?))?;
    let counts: Vec<String> = (1..=model.order()).map(|n| model.ngram_count(n).to_string()).collect();
    println!("order {} ngrams {}", model.order(), counts.join(" "));
    Ok(())
}

fn train_bpe_cmd(args: TrainBpeArgs) -> Result<()> {
    if args.vocab_size == 0 || args.vocab_size > webcorpus::bpe::MAX_VOCAB_SIZE {
        return usage(format!("--vocab-size must be in 1..={}", webcorpus::bpe::MAX_VOCAB_SIZE));
    }
    let words = WordCounts::from_reader(open(&args.input)?)?;
    let vocab = train_bpe(&words, args.vocab_size)?;
    vocab.save(&args.out)?;
    println!("vocab {} merges {}", vocab.len(), vocab.merges().len());
    Ok(())
}

fn encode(args: CodecArgs) -> Result<()> {
    let vocab = BpeVocab::load(&args.vocab)?;
    let mut out = output_or_stdout(&args.out)?;
    for line in input_or_stdin(&args.input)?.lines() {
        let ids: Vec<String> = vocab.encode(&line?).iter().map(u32::to_string).collect();
        writeln!(out, "{}", ids.join(" "))?;
    }
    Ok(out.flush()?)
}

fn decode(args: CodecArgs) -> Result<()> {
    let vocab = BpeVocab::load(&args.vocab)?;
    let mut out = output_or_stdout(&args.out)?;
    for (n, line) in input_or_stdin(&args.input)?.lines().enumerate() {
        let line = line?;
        let ids = line
            .split_whitespace()
            .map(str::parse::<u32>)
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("line {}: not a list of ids", n + 1))?;
        writeln!(out, "{}", vocab.decode(&ids)?)?;
    }
    Ok(out.flush()?)
}

/// Documents of a text corpus: blocks separated by blank lines.
fn corpus_documents(text: &str) -> Vec<String> {
    let mut docs = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                docs.push(cur.join("\n"));
                cur.clear();
            }
        } else {
            cur.push(line);
        }
    }
    if !cur.is_empty() {
        docs.push(cur.join("\n"));
    }
    docs
}

fn mask(args: MaskArgs) -> Result<()> {
    if args.max_len < 3 {
        return usage("--max-len must be at least 3");
    }
    let vocab = BpeVocab::load(&args.vocab)?;
    let mut text = String::new();
    open(&args.input)?.read_to_string(&mut text)?;
    let bases: Vec<Vec<u32>> = corpus_documents(&text)
        .iter()
        .flat_map(|d| pack_document(&vocab.encode(d), args.max_len))
        .collect();
    let examples = mask_epoch(&bases, &MaskConfig::new(vocab.len() as u32), args.seed, args.epoch);
    with_output(&args.out, |w| {
        for ex in &examples {
            write_example(w, ex)?;
        }
        Ok(())
    })?;
    let masked: usize = examples.iter().map(|e| e.mask_positions.len()).sum();
    println!("sequences {} masked {}", examples.len(), masked);
    Ok(())
}

fn resample(args: ResampleArgs) -> Result<()> {
    let samples: Vec<Sample> = read_jsonl(&args.input)?;
    let ds = LabeledDataset::new(samples, LabelKind::Binary);
    let out = resample_imbalanced(&ds, args.minority_factor, args.majority_factor, args.seed)?;
    write_jsonl(&args.out, &out.samples)?;
    let counts: Vec<String> = out.class_counts().iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("{}", counts.join(" "));
    Ok(())
}

fn lr_curve(args: LrCurveArgs) -> Result<()> {
    let mut out = output_or_stdout(&args.out)?;
    writeln!(out, "step,lr")?;
    match (args.preset.as_deref(), args.finetune_steps) {
        (Some(name), None) => {
            let Some(cfg) = PretrainConfig::preset(name) else {
                return usage(format!("unknown preset {name:?}, expected base or large"));
            };
            for step in 0..=cfg.total_steps {
                writeln!(out, "{step},{}", lr_at_step(&cfg, step)?)?;
            }
        }
        (None, Some(total)) => {
            if total == 0 {
                return usage("--finetune-steps must be positive");
            }
            for step in 0..=total {
                let lr = finetune_lr_at_step(total, step, FINETUNE_PEAK_LR, FINETUNE_WARMUP_FRACTION)?;
                writeln!(out, "{step},{lr}")?;
            }
        }
        _ => return usage("give --preset or --finetune-steps"),
    }
    Ok(out.flush()?)
}

fn stats(args: StatsArgs) -> Result<()> {
    let text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))?;
    let manifest = if text.trim().is_empty() || text.trim() == "{}" {
        CorpusManifest::new(String::new())
    } else {
        serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", args.manifest.display())))?
    };
    print!("{}", render_table(&manifest));
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Ingest(a) => ingest(a),
        Command::Extract(a) => extract(a),
        Command::Filter(a) => filter(a),
        Command::Dedup(a) => dedup(a),
        Command::TrainLm(a) => train_lm(a),
        Command::TrainBpe(a) => train_bpe_cmd(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Mask(a) => mask(a),
        Command::Resample(a) => resample(a),
        Command::LrCurve(a) => lr_curve(a),
        Command::Stats(a) => stats(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.downcast_ref::<UsageError>().is_some()
        || err.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_config);
    if config {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_lines_split_documents() {
        let docs = corpus_documents("a\nb\n\n\nc\n  \nd");
        assert_eq!(docs, ["a\nb", "c", "d"]);
        assert!(corpus_documents("\n\n").is_empty());
    }

    #[test]
    fn config_errors_map_to_one() {
        let e: anyhow::Error = PipelineError::Config("x".into()).into();
        assert_eq!(exit_code(&e), 1);
        let e: anyhow::Error = UsageError("x".into()).into();
        assert_eq!(exit_code(&e), 1);
        let e: anyhow::Error = PipelineError::SelfCheck("x".into()).into();
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn cli_definition_is_valid() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
