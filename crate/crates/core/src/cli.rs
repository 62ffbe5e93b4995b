//! Command-line front end.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::{
    ablate, compare_precompute, format_table, random_lexicon, random_regexes,
    sweep, synthetic_token_stream, synthetic_vocab, Axis, BenchOptions, Variant, Workload,
    SYNTH_ALPHABET,
};
use crate::decoder::{generate_batch, DecodeConfig, DecodeRule, Method};
use crate::error::{Error, Result};
use crate::files::{
    default_cache_path, load_lexicon, load_prompts, load_regexes, load_vocab, read_generations,
    read_text, write_jsonl, GenerationRecord, TableCache,
};
use crate::mask::{BuildOptions, ByteMatcher, CompiledConstraints, MaskMode};
use crate::regex::PartialDfa;
use crate::scorer::{AdversarialScorer, NgramOptions, NgramScorer, Scorer, UniformScorer};
use crate::tables::PrecomputeOptions;
use crate::validator::{scan, RunMetrics};
use crate::vocab::{train_toy_bpe, Vocabulary};

#[derive(Debug, Parser)]
#[command(name = "negdec", version, about = "Decoding with forbidden substrings and forbidden regexes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build token tables for a lexicon and/or regex list and print statistics.
    Compile(CompileArgs),
    /// Decode prompts and write a generations file.
    Generate(GenerateArgs),
    /// Throughput sweep over one workload axis.
    Bench(BenchArgs),
    /// Compare full masking against an ablated variant.
    Ablate(AblateArgs),
    /// Scan a generations file for violations and report metrics.
    Validate(ValidateArgs),
    /// Train a byte-level BPE vocabulary or emit a synthetic one.
    TrainVocab(TrainVocabArgs),
}

#[derive(Debug, Args)]
pub struct ConstraintArgs {
    /// Forbidden strings, one per line.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Forbidden regexes, one per line.
    #[arg(long)]
    pub regexes: Option<PathBuf>,
}

impl ConstraintArgs {
    fn load(&self) -> Result<(Vec<Vec<u8>>, Vec<PartialDfa>)> {
        let lexicon = self.lexicon.as_deref().map(load_lexicon).transpose()?.unwrap_or_default();
        let dfas = self.regexes.as_deref().map(load_regexes).transpose()?.unwrap_or_default();
        if lexicon.is_empty() && dfas.is_empty() {
            return Err(Error::NoConstraints);
        }
        Ok((lexicon, dfas))
    }
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[command(flatten)]
    pub constraints: ConstraintArgs,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Table cache to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also time per-token scanning and report both precompute times.
    #[arg(long)]
    pub compare_precompute: bool,
    /// Runs per construction when comparing (median reported).
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 1 << 31)]
    pub max_cells: usize,
    /// Build per-automaton tables in parallel.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub constraints: ConstraintArgs,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Table cache to read, or to write when missing or stale.
    #[arg(long)]
    pub tables: Option<PathBuf>,
    /// Always rebuild tables and never write a cache.
    #[arg(long)]
    pub no_cache: bool,
    /// `uniform`, `ngram:<order>:<corpus>` or `adversarial:<boost>[:<base>]`.
    #[arg(long, default_value = "uniform")]
    pub scorer: String,
    /// `greedy`, `top-k:<k>`, `top-p:<p>`, `temperature:<t>` or `beam:<width>`.
    #[arg(long, default_value = "greedy")]
    pub rule: String,
    /// `nco`, `rs` or `none`.
    #[arg(long, default_value = "nco")]
    pub method: String,
    /// `hard` or `soft`.
    #[arg(long, default_value = "hard")]
    pub mode: String,
    /// Logit penalty in soft mode.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f32,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: usize,
    #[arg(long, env = "NEGDEC_SEED", default_value_t = 0)]
    pub seed: u64,
    /// One prompt per line; synthetic prompts are used otherwise.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub num_prompts: usize,
    #[arg(long, default_value_t = 6)]
    pub prompt_len: usize,
    /// Run the constraint state over the prompt before decoding.
    #[arg(long)]
    pub scan_prompt: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WorkloadArgs {
    #[arg(long, default_value_t = 4000)]
    pub vocab_size: usize,
    /// Prompts per run (the batch).
    #[arg(long, default_value_t = 16)]
    pub prompts: usize,
    #[arg(long, default_value_t = 48)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, env = "NEGDEC_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Adversarial boost; 0 disables the adversary.
    #[arg(long, default_value_t = 6.0)]
    pub boost: f32,
    #[arg(long, default_value = "greedy")]
    pub rule: String,
    /// Machine-readable results, one JSON record per line.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

impl WorkloadArgs {
    fn options(&self) -> Result<BenchOptions> {
        Ok(BenchOptions {
            vocab_size: self.vocab_size,
            prompts: self.prompts,
            max_tokens: self.max_tokens,
            repeats: self.repeats,
            seed: self.seed,
            workers: self.workers,
            boost: self.boost,
            rule: parse_rule(&self.rule)?,
            ..Default::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// num-patterns, pattern-length, num-dfas, dfa-states, num-regexes or batch-size.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values; the axis defaults otherwise.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<usize>,
    #[command(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// no-failure-links, no-bpe-precompute, no-suffix-map or no-matmul.
    #[arg(long)]
    pub variant: String,
    #[arg(long, default_value_t = 32)]
    pub num_patterns: usize,
    #[arg(long, default_value_t = 8)]
    pub num_regexes: usize,
    #[command(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub generations: PathBuf,
    #[command(flatten)]
    pub constraints: ConstraintArgs,
    /// Include the prompt bytes in the scanned text.
    #[arg(long)]
    pub validate_with_prompt: bool,
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainVocabArgs {
    /// Training text; omit with --synthetic.
    #[arg(long, required_unless_present = "synthetic")]
    pub corpus: Option<PathBuf>,
    /// Emit a random merge tree over a small alphabet instead of training.
    #[arg(long, conflicts_with = "corpus")]
    pub synthetic: bool,
    #[arg(long)]
    pub size: usize,
    #[arg(long, env = "NEGDEC_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_rule(s: &str) -> Result<DecodeRule> {
    let bad = || Error::InvalidConfig(format!("bad decoding rule `{s}`"));
    let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
    let num = |a: Option<&str>| -> Result<f64> { a.and_then(|x| x.parse().ok()).ok_or_else(bad) };
    Ok(match name {
        "greedy" if arg.is_none() => DecodeRule::Greedy,
        "top-k" => DecodeRule::TopK(num(arg)? as usize),
        "top-p" => DecodeRule::TopP(num(arg)? as f32),
        "temperature" => DecodeRule::Temperature(num(arg)? as f32),
        "beam" => DecodeRule::Beam(num(arg)? as usize),
        _ => return Err(bad()),
    })
}

pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "nco" => Ok(Method::Nco),
        "rs" | "rejection" => Ok(Method::RejectionSampling),
        "none" | "unconstrained" => Ok(Method::Unconstrained),
        _ => Err(Error::InvalidConfig(format!("unknown method `{s}`"))),
    }
}

pub fn parse_mode(s: &str, lambda: f32) -> Result<MaskMode> {
    match s {
        "hard" => Ok(MaskMode::Hard),
        "soft" => Ok(MaskMode::Soft(lambda)),
        _ => Err(Error::InvalidConfig(format!("unknown mask mode `{s}`"))),
    }
}

/// Builds a scorer from its command-line form.
pub fn parse_scorer(
    form: &str,
    vocab: &Arc<Vocabulary>,
    constraints: &Arc<CompiledConstraints>,
) -> Result<Arc<dyn Scorer>> {
    let bad = || Error::InvalidConfig(format!("bad scorer `{form}`"));
    let mut parts = form.splitn(3, ':');
    match parts.next() {
        Some("uniform") if parts.next().is_none() => Ok(Arc::new(UniformScorer::new(vocab.len()))),
        Some("ngram") => {
            let order = parts.next().and_then(|o| o.parse().ok()).ok_or_else(bad)?;
            let path = parts.next().ok_or_else(bad)?;
            let corpus = read_text(Path::new(path))?;
            let opts = NgramOptions { order, ..Default::default() };
            Ok(Arc::new(NgramScorer::train(vocab, corpus.as_bytes(), opts)?))
        }
        Some("adversarial") => {
            let boost: f32 = parts.next().and_then(|b| b.parse().ok()).ok_or_else(bad)?;
            let base = match parts.next() {
                Some(rest) => parse_scorer(rest, vocab, constraints)?,
                None => Arc::new(UniformScorer::new(vocab.len())),
            };
            Ok(Arc::new(AdversarialScorer::new(base, boost, constraints.clone(), vocab.clone())))
        }
        _ => Err(bad()),
    }
}

fn load_or_build(
    vocab: &Vocabulary,
    args: &GenerateArgs,
    lexicon: &[Vec<u8>],
    dfas: &[PartialDfa],
) -> Result<CompiledConstraints> {
    let cache_path = if args.no_cache {
        None
    } else {
        args.tables.clone()
    };
    if let Some(path) = &cache_path {
        if path.exists() {
            let cache = TableCache::load(path)?;
            if cache.matches(vocab, lexicon, dfas) {
                eprintln!("using cached tables from {}", path.display());
                return cache.into_constraints(vocab, lexicon, dfas);
            }
            eprintln!("cache {} is stale; rebuilding", path.display());
        }
    }
    let c = CompiledConstraints::build(vocab, lexicon, dfas, &BuildOptions::default())?;
    if let Some(path) = &cache_path {
        TableCache::new(vocab, &c).save(path)?;
    }
    Ok(c)
}

fn cmd_compile(args: &CompileArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let (lexicon, dfas) = args.constraints.load()?;
    let opts = BuildOptions {
        precompute: PrecomputeOptions {
            max_cells: args.max_cells,
            parallel: args.parallel,
            ..Default::default()
        },
        ..Default::default()
    };
    let c = CompiledConstraints::build(&vocab, &lexicon, &dfas, &opts)?;
    println!("vocab tokens: {}", vocab.len());
    if let Some(ac) = c.automaton() {
        println!("trie states: {}", ac.num_states());
    }
    for (i, d) in dfas.iter().enumerate() {
        println!("regex #{i} `{}`: {} states", d.pattern(), d.num_states());
    }
    if let Some(g) = c.global() {
        println!("M: {}", g.total_states());
    }
    println!("table bytes: {}", c.table_bytes());
    if args.compare_precompute {
        let (bpe, naive) = compare_precompute(&vocab, &lexicon, &dfas, args.runs)?;
        println!("precompute bpe_s: {bpe:.4}");
        println!("precompute naive_s: {naive:.4}");
        println!("speedup: {:.2}x", naive / bpe.max(f64::MIN_POSITIVE));
    } else {
        println!("precompute bpe_s: {:.4}", c.precompute_secs());
    }
    let out = args
        .out
        .clone()
        .or_else(|| default_cache_path(args.constraints.lexicon.as_deref(), args.constraints.regexes.as_deref()));
    if let Some(path) = out {
        TableCache::new(&vocab, &c).save(&path)?;
        println!("tables written to {}", path.display());
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let vocab = Arc::new(load_vocab(&args.vocab)?);
    let (lexicon, dfas) = args.constraints.load()?;
    let config = DecodeConfig {
        rule: parse_rule(&args.rule)?,
        max_tokens: args.max_tokens,
        seed: args.seed,
        mode: parse_mode(&args.mode, args.lambda)?,
        method: parse_method(&args.method)?,
        scan_prompt: args.scan_prompt,
    };
    config.validate()?;
    let constraints = Arc::new(load_or_build(&vocab, args, &lexicon, &dfas)?);
    let scorer = parse_scorer(&args.scorer, &vocab, &constraints)?;
    let prompts = match &args.prompts {
        Some(p) => load_prompts(p, &vocab)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..args.num_prompts)
                .map(|_| synthetic_token_stream(&mut rng, &vocab, args.prompt_len))
                .collect()
        }
    };
    let eos = vocab.eos_id();
    let gens = match config.method {
        Method::RejectionSampling => {
            let checker = ByteMatcher::new(&vocab, &constraints);
            generate_batch(&*scorer, &checker, &config, &prompts, eos, args.workers)?
        }
        _ => generate_batch(&*scorer, &*constraints, &config, &prompts, eos, args.workers)?,
    };
    let records = gens
        .iter()
        .zip(&prompts)
        .enumerate()
        .map(|(i, (g, p))| {
            Ok(GenerationRecord {
                prompt_id: i,
                tokens: g.tokens.clone(),
                text_hex: hex::encode(vocab.decode_ids(&g.tokens)?),
                elapsed_s: g.report.elapsed_s,
                rejections: g.report.rejections,
                prompt_hex: hex::encode(vocab.decode_ids(p)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&args.out, &records)?;
    let tokens: usize = gens.iter().map(|g| g.tokens.len()).sum();
    eprintln!("wrote {} generations ({tokens} tokens) to {}", records.len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    #[serde(flatten)]
    metrics: &'a RunMetrics,
    violation_rate: f64,
    throughput: f64,
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let (lexicon, dfas) = args.constraints.load()?;
    let records = read_generations(&args.generations)?;
    let mut m = RunMetrics::default();
    for r in &records {
        let mut text = Vec::new();
        if args.validate_with_prompt {
            text = hex::decode(&r.prompt_hex).map_err(|e| Error::Record(e.to_string()))?;
        }
        text.extend(hex::decode(&r.text_hex).map_err(|e| Error::Record(e.to_string()))?);
        m.responses += 1;
        m.tokens += r.tokens.len();
        m.elapsed_s += r.elapsed_s;
        m.rejections += r.rejections;
        if scan(&text, &lexicon, &dfas).violated() {
            m.violated += 1;
        }
    }
    let rate = m.violation_rate()?;
    println!("{:<10} {:>8} {:>8} {:>8} {:>12} {:>10}", "responses", "violated", "viol%", "tokens", "tok/s", "rejections");
    println!(
        "{:<10} {:>8} {:>8.1} {:>8} {:>12.1} {:>10}",
        m.responses, m.violated, rate, m.tokens, m.throughput(), m.rejections
    );
    let line = MetricsLine {
        metrics: &m,
        violation_rate: rate,
        throughput: m.throughput(),
    };
    let json = serde_json::to_string(&line).map_err(|e| Error::Record(e.to_string()))?;
    println!("{json}");
    if let Some(path) = &args.jsonl {
        write_jsonl(path, &[line])?;
    }
    Ok(())
}

fn emit_results<T: Serialize>(table: &str, rows: &[T], jsonl: Option<&Path>) -> Result<()> {
    print!("{table}");
    for r in rows {
        println!("{}", serde_json::to_string(r).map_err(|e| Error::Record(e.to_string()))?);
    }
    if let Some(path) = jsonl {
        write_jsonl(path, rows)?;
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let axis: Axis = args.axis.parse()?;
    let values = if args.values.is_empty() {
        axis.default_values()
    } else {
        args.values.clone()
    };
    let rows = sweep(axis, &values, &args.workload.options()?)?;
    emit_results(&format_table(&rows), &rows, args.workload.jsonl.as_deref())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let variant: Variant = args.variant.parse()?;
    let opts = args.workload.options()?;
    let vocab = Arc::new(synthetic_vocab(opts.seed, opts.vocab_size, SYNTH_ALPHABET, 12)?);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lexicon = random_lexicon(&mut rng, args.num_patterns, 4, &SYNTH_ALPHABET[..8]);
    let dfas = random_regexes(&mut rng, args.num_regexes, 3..=5);
    let (lexicon, dfas) = match variant {
        Variant::NoFailureLinks => (lexicon, Vec::new()),
        Variant::NoBpePrecompute => (lexicon, dfas),
        Variant::NoSuffixMap | Variant::NoMatmul => (Vec::new(), dfas),
    };
    let w = Workload::synthetic(vocab, &lexicon, &dfas, &opts)?;
    let r = ablate(&w, variant, opts.repeats)?;
    let mut table = format_table(&[r.full.clone(), r.ablated.clone()]);
    table.push_str(&format!("identical outputs: {}\n", r.identical_outputs));
    if let Some(t) = r.identical_tables {
        table.push_str(&format!("identical tables: {t}\n"));
    }
    emit_results(&table, std::slice::from_ref(&r), args.workload.jsonl.as_deref())
}

fn cmd_train_vocab(args: &TrainVocabArgs) -> Result<()> {
    let started = Instant::now();
    let vocab = match &args.corpus {
        Some(path) => {
            let corpus = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            train_toy_bpe(&corpus, args.size)?
        }
        None => synthetic_vocab(args.seed, args.size, SYNTH_ALPHABET, 12)?,
    };
    std::fs::write(&args.out, vocab.to_file_string()).map_err(|e| Error::io(&args.out, e))?;
    println!(
        "{} tokens, mean length {:.2} bytes, {:.2}s -> {}",
        vocab.len(),
        vocab.mean_token_len(),
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Compile(a) => cmd_compile(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::TrainVocab(a) => cmd_train_vocab(a),
    }
}
