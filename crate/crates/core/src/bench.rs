//! Synthetic workloads, throughput measurement, sweeps and ablations.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitSet;
use crate::decoder::{generate_batch, DecodeConfig, DecodeRule, Method};
use crate::error::{Error, Result};
use crate::mask::{BuildOptions, ByteMatcher, CompiledConstraints, Enforcer, MaskPath, ReversedTrieMatcher};
use crate::regex::{compile_regex, PartialDfa};
use crate::scorer::{AdversarialScorer, NgramOptions, NgramScorer, Scorer};
use crate::tables::PrecomputeOptions;
use crate::validator::{scan, RunMetrics};
use crate::vocab::{TokenId, Vocabulary};

/// Bytes used by synthetic vocabularies, corpora and lexicons.
pub const SYNTH_ALPHABET: &[u8] = b"abcdefgh0123456789- ";

/// Sub-alphabet of the random regex generator.
pub const REGEX_ALPHABET: &[u8] = b"abcd";

/// Random merge tree over `alphabet` with `size` tokens in total and merged
/// tokens of at most `max_len` bytes, all distinct.
pub fn synthetic_vocab(seed: u64, size: usize, alphabet: &[u8], max_len: usize) -> Result<Vocabulary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab = Vocabulary::byte_level();
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut pool: Vec<TokenId> = alphabet.iter().map(|&b| b as TokenId).collect();
    let mut misses = 0;
    while vocab.len() < size {
        let l = *pool.choose(&mut rng).expect("non-empty alphabet");
        let r = *pool.choose(&mut rng).expect("non-empty alphabet");
        let len = vocab.token_bytes(l).len() + vocab.token_bytes(r).len();
        let mut bytes = vocab.token_bytes(l).to_vec();
        bytes.extend_from_slice(vocab.token_bytes(r));
        if len > max_len || !seen.insert(bytes) {
            misses += 1;
            if misses > 100 * size {
                return Err(Error::InvalidConfig(format!(
                    "cannot grow a vocabulary of {size} distinct tokens over {} bytes",
                    alphabet.len()
                )));
            }
            continue;
        }
        pool.push(vocab.push_merge(l, r)?);
    }
    Ok(vocab)
}

/// Random token stream drawn from the non-EOS tokens of `vocab`.
pub fn synthetic_token_stream(rng: &mut impl Rng, vocab: &Vocabulary, len: usize) -> Vec<TokenId> {
    let eos = vocab.eos_id();
    (0..len)
        .map(|_| loop {
            let w = rng.gen_range(0..vocab.len() as TokenId);
            if w != eos && !vocab.token_bytes(w).is_empty() && vocab.token_bytes(w).iter().all(|b| SYNTH_ALPHABET.contains(b)) {
                break w;
            }
        })
        .collect()
}

pub fn random_lexicon(rng: &mut impl Rng, count: usize, len: usize, alphabet: &[u8]) -> Vec<Vec<u8>> {
    (0..count)
        .map(|_| (0..len).map(|_| *alphabet.choose(rng).expect("alphabet")).collect())
        .collect()
}

/// Random chain-and-loop regex over `alphabet` with `atoms` atoms.
pub fn random_regex_source(rng: &mut impl Rng, atoms: usize, alphabet: &[u8]) -> String {
    let mut s = String::new();
    for _ in 0..atoms {
        let a = *alphabet.choose(rng).expect("alphabet") as char;
        match rng.gen_range(0..6) {
            0 => {
                let b = *alphabet.choose(rng).expect("alphabet") as char;
                s.push_str(&format!("[{a}{b}]"));
            }
            1 => s.push_str(&format!("{a}+")),
            2 => {
                let b = *alphabet.choose(rng).expect("alphabet") as char;
                s.push_str(&format!("({a}|{b}{a})"));
            }
            _ => s.push(a),
        }
    }
    s
}

/// `count` compiled random regexes; empty-accepting ones are skipped.
pub fn random_regexes(rng: &mut impl Rng, count: usize, atoms: std::ops::RangeInclusive<usize>) -> Vec<PartialDfa> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = rng.gen_range(atoms.clone());
        match compile_regex(&random_regex_source(rng, n, REGEX_ALPHABET)) {
            Ok(d) => out.push(d),
            Err(Error::AcceptsEmpty) => continue,
            Err(e) => panic!("generator produced an invalid regex: {e}"),
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub vocab_size: usize,
    pub prompts: usize,
    pub prompt_len: usize,
    pub max_tokens: usize,
    pub repeats: usize,
    pub seed: u64,
    pub workers: usize,
    /// Adversarial logit boost; zero disables the adversary.
    pub boost: f32,
    pub rule: DecodeRule,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            vocab_size: 4000,
            prompts: 16,
            prompt_len: 6,
            max_tokens: 48,
            repeats: 3,
            seed: 0,
            workers: 1,
            boost: 6.0,
            rule: DecodeRule::Greedy,
        }
    }
}

/// Everything needed to run one measurement point.
#[derive(Clone)]
pub struct Workload {
    pub vocab: Arc<Vocabulary>,
    pub constraints: Arc<CompiledConstraints>,
    pub scorer: Arc<dyn Scorer>,
    pub prompts: Vec<Vec<TokenId>>,
    pub config: DecodeConfig,
    pub workers: usize,
    pub validate_with_prompt: bool,
}

impl Workload {
    /// Builds a workload with an n-gram scorer over a synthetic token stream,
    /// wrapped in an adversary when `opts.boost > 0`.
    pub fn synthetic(
        vocab: Arc<Vocabulary>,
        lexicon: &[Vec<u8>],
        dfas: &[PartialDfa],
        opts: &BenchOptions,
    ) -> Result<Self> {
        let constraints = Arc::new(CompiledConstraints::build(&vocab, lexicon, dfas, &BuildOptions::default())?);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
        let stream = synthetic_token_stream(&mut rng, &vocab, 20_000);
        let base = NgramScorer::from_ids(&vocab, &stream, NgramOptions { order: 2, ..Default::default() })?;
        let scorer: Arc<dyn Scorer> = if opts.boost > 0.0 {
            Arc::new(AdversarialScorer::new(base, opts.boost, constraints.clone(), vocab.clone()))
        } else {
            Arc::new(base)
        };
        let prompts = (0..opts.prompts)
            .map(|_| synthetic_token_stream(&mut rng, &vocab, opts.prompt_len))
            .collect();
        Ok(Self {
            vocab,
            constraints,
            scorer,
            prompts,
            config: DecodeConfig {
                rule: opts.rule,
                max_tokens: opts.max_tokens,
                seed: opts.seed,
                ..Default::default()
            },
            workers: opts.workers,
            validate_with_prompt: false,
        })
    }

    fn text_of(&self, prompt: &[TokenId], tokens: &[TokenId]) -> Result<Vec<u8>> {
        let mut text = if self.validate_with_prompt {
            self.vocab.decode_ids(prompt)?
        } else {
            Vec::new()
        };
        text.extend(self.vocab.decode_ids(tokens)?);
        Ok(text)
    }

    /// Decodes all prompts once with `enforcer`; the clock covers decoding only.
    pub fn run_with<E: Enforcer>(&self, enforcer: &E, method: Method) -> Result<(RunMetrics, Vec<Vec<TokenId>>)> {
        let config = DecodeConfig { method, ..self.config.clone() };
        let started = Instant::now();
        let gens = generate_batch(&*self.scorer, enforcer, &config, &self.prompts, self.vocab.eos_id(), self.workers)?;
        let elapsed_s = started.elapsed().as_secs_f64();
        let mut m = RunMetrics {
            responses: gens.len(),
            elapsed_s,
            ..Default::default()
        };
        for (g, p) in gens.iter().zip(&self.prompts) {
            m.tokens += g.tokens.len();
            m.rejections += g.report.rejections;
            let text = self.text_of(p, &g.tokens)?;
            if scan(&text, self.constraints.lexicon(), self.constraints.dfas()).violated() {
                m.violated += 1;
            }
        }
        Ok((m, gens.into_iter().map(|g| g.tokens).collect()))
    }

    pub fn run(&self, method: Method) -> Result<(RunMetrics, Vec<Vec<TokenId>>)> {
        match method {
            Method::RejectionSampling => self.run_with(&ByteMatcher::new(&self.vocab, &self.constraints), method),
            _ => self.run_with(&*self.constraints, method),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub method: String,
    pub point: String,
    pub batch_size: usize,
    pub throughput: f64,
    pub throughput_std: f64,
    /// Percent of the unconstrained throughput at the same batch size.
    pub relative: f64,
    pub precompute_s: f64,
    pub violation_rate: f64,
    pub rejections: u64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

struct Measured {
    label: String,
    throughputs: Vec<f64>,
    violation_rate: f64,
    rejections: u64,
    precompute_s: f64,
}

fn measure<F>(label: &str, repeats: usize, precompute_s: f64, mut run: F) -> Result<Measured>
where
    F: FnMut() -> Result<(RunMetrics, Vec<Vec<TokenId>>)>,
{
    let mut throughputs = Vec::with_capacity(repeats);
    let mut last = RunMetrics::default();
    for _ in 0..repeats.max(1) {
        let (m, _) = run()?;
        throughputs.push(m.throughput());
        last = m;
    }
    Ok(Measured {
        label: label.to_string(),
        throughputs,
        violation_rate: last.violation_rate()?,
        rejections: last.rejections,
        precompute_s,
    })
}

fn finish(point: &str, batch: usize, rows: Vec<Measured>) -> Vec<BenchResult> {
    let base = mean_std(&rows[0].throughputs).0;
    rows.into_iter()
        .enumerate()
        .map(|(i, m)| {
            let (mean, std) = mean_std(&m.throughputs);
            BenchResult {
                method: m.label,
                point: point.to_string(),
                batch_size: batch,
                throughput: mean,
                throughput_std: std,
                relative: if i == 0 { 100.0 } else if base > 0.0 { 100.0 * mean / base } else { 0.0 },
                precompute_s: m.precompute_s,
                violation_rate: m.violation_rate,
                rejections: m.rejections,
            }
        })
        .collect()
}

/// Runs unconstrained, rejection sampling and masking on the same prompts
/// and seeds. The unconstrained row comes first.
pub fn bench_point(w: &Workload, point: &str, repeats: usize) -> Result<Vec<BenchResult>> {
    let pre = w.constraints.precompute_secs();
    let rows = vec![
        measure(Method::Unconstrained.label(), repeats, 0.0, || w.run(Method::Unconstrained))?,
        measure(Method::RejectionSampling.label(), repeats, 0.0, || w.run(Method::RejectionSampling))?,
        measure(Method::Nco.label(), repeats, pre, || w.run(Method::Nco))?,
    ];
    Ok(finish(point, w.prompts.len(), rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    NumPatterns,
    PatternLength,
    NumDfas,
    DfaStates,
    NumRegexes,
    BatchSize,
}

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::NumPatterns,
        Axis::PatternLength,
        Axis::NumDfas,
        Axis::DfaStates,
        Axis::NumRegexes,
        Axis::BatchSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::NumPatterns => "num-patterns",
            Axis::PatternLength => "pattern-length",
            Axis::NumDfas => "num-dfas",
            Axis::DfaStates => "dfa-states",
            Axis::NumRegexes => "num-regexes",
            Axis::BatchSize => "batch-size",
        }
    }

    pub fn default_values(self) -> Vec<usize> {
        match self {
            Axis::NumPatterns => vec![1, 2, 4, 8, 16, 32],
            Axis::PatternLength => vec![1, 2, 4, 8],
            Axis::NumDfas => vec![1, 2, 4, 8],
            Axis::DfaStates => vec![8, 16, 32, 64],
            Axis::NumRegexes => vec![10, 25, 50, 100, 250, 500],
            Axis::BatchSize => vec![1, 4, 16, 64],
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep axis `{s}`")))
    }
}

/// Constraints for one sweep point.
pub fn point_constraints(axis: Axis, value: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<PartialDfa>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (value as u64).wrapping_mul(0x9e37_79b9));
    let letters = &SYNTH_ALPHABET[..8];
    match axis {
        Axis::NumPatterns => (random_lexicon(&mut rng, value, 4, letters), Vec::new()),
        Axis::PatternLength => (random_lexicon(&mut rng, 8, value.max(1), letters), Vec::new()),
        Axis::NumDfas => (Vec::new(), random_regexes(&mut rng, value, 3..=5)),
        Axis::DfaStates => {
            let atoms = (value / 4).max(1);
            (Vec::new(), random_regexes(&mut rng, 4, atoms..=atoms))
        }
        Axis::NumRegexes => (Vec::new(), random_regexes(&mut rng, value, 3..=6)),
        Axis::BatchSize => (random_lexicon(&mut rng, 8, 4, letters), random_regexes(&mut rng, 4, 3..=5)),
    }
}

/// Runs a sweep over `values` of `axis` on a shared synthetic vocabulary.
pub fn sweep(axis: Axis, values: &[usize], opts: &BenchOptions) -> Result<Vec<BenchResult>> {
    let vocab = Arc::new(synthetic_vocab(opts.seed, opts.vocab_size, SYNTH_ALPHABET, 12)?);
    let mut out = Vec::new();
    for &v in values {
        let (lexicon, dfas) = point_constraints(axis, v, opts.seed);
        let mut point_opts = opts.clone();
        if axis == Axis::BatchSize {
            point_opts.prompts = v;
        }
        let w = Workload::synthetic(vocab.clone(), &lexicon, &dfas, &point_opts)?;
        out.extend(bench_point(&w, &format!("{axis}={v}"), opts.repeats)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    NoFailureLinks,
    NoBpePrecompute,
    NoSuffixMap,
    NoMatmul,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::NoFailureLinks,
        Variant::NoBpePrecompute,
        Variant::NoSuffixMap,
        Variant::NoMatmul,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoFailureLinks => "no-failure-links",
            Variant::NoBpePrecompute => "no-bpe-precompute",
            Variant::NoSuffixMap => "no-suffix-map",
            Variant::NoMatmul => "no-matmul",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub variant: String,
    pub full: BenchResult,
    pub ablated: BenchResult,
    /// Generations of the variant are token-for-token those of full masking.
    pub identical_outputs: bool,
    /// For precompute variants: tables equal to the full build.
    pub identical_tables: Option<bool>,
}

/// Measures full masking against one ablated variant on the same workload.
pub fn ablate(w: &Workload, variant: Variant, repeats: usize) -> Result<AblationResult> {
    let c = &*w.constraints;
    let has_strings = !c.lexicon().is_empty();
    let has_regex = !c.dfas().is_empty();
    let needs = |ok: bool, what: &str| {
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("variant {variant} needs {what}")))
        }
    };
    let (_, reference) = w.run(Method::Nco)?;
    let full = measure("nco", repeats, c.precompute_secs(), || w.run(Method::Nco))?;

    let build = |opts: BuildOptions| -> Result<CompiledConstraints> {
        let vocab = &*w.vocab;
        CompiledConstraints::build(vocab, c.lexicon(), c.dfas(), &opts)
    };
    let label = variant.name();
    let (ablated, outputs, tables) = match variant {
        Variant::NoFailureLinks => {
            needs(has_strings && !has_regex, "a lexicon and no regexes")?;
            let rt = ReversedTrieMatcher::new(&w.vocab, c.lexicon())?;
            let (_, out) = w.run_with(&rt, Method::Nco)?;
            (measure(label, repeats, c.precompute_secs(), || w.run_with(&rt, Method::Nco))?, out, None)
        }
        Variant::NoBpePrecompute | Variant::NoSuffixMap => {
            if variant == Variant::NoSuffixMap {
                needs(has_regex, "regexes")?;
            }
            let opts = BuildOptions {
                bpe: variant != Variant::NoBpePrecompute,
                precompute: PrecomputeOptions {
                    compose_suffixes: variant != Variant::NoSuffixMap,
                    ..Default::default()
                },
                ..Default::default()
            };
            let alt = build(opts)?;
            let same = tables_equal(c, &alt);
            let (_, out) = w.run_with(&alt, Method::Nco)?;
            (measure(label, repeats, alt.precompute_secs(), || w.run_with(&alt, Method::Nco))?, out, Some(same))
        }
        Variant::NoMatmul => {
            needs(has_regex, "regexes")?;
            let alt = c.clone().with_mask_path(MaskPath::Iterative);
            let (_, out) = w.run_with(&alt, Method::Nco)?;
            (measure(label, repeats, c.precompute_secs(), || w.run_with(&alt, Method::Nco))?, out, None)
        }
    };
    let mut rows = finish(label, w.prompts.len(), vec![full, ablated]);
    let ablated = rows.pop().expect("two rows");
    let full = rows.pop().expect("two rows");
    Ok(AblationResult {
        variant: label.to_string(),
        full,
        ablated,
        identical_outputs: outputs == reference,
        identical_tables: tables,
    })
}

/// Bitwise comparison of all transition, mask and suffix tables.
pub fn tables_equal(a: &CompiledConstraints, b: &CompiledConstraints) -> bool {
    let strings = match (a.string_tables(), b.string_tables()) {
        (Some(x), Some(y)) => x == y,
        (None, None) => true,
        _ => false,
    };
    let regex = match (a.regex_tables(), b.regex_tables()) {
        (Some(x), Some(y)) => x == y,
        (None, None) => true,
        _ => false,
    };
    strings && regex
}

/// Median wall time per token of one mask computation plus one state update,
/// replaying `tokens` `reps` times.
pub fn per_token_cost<E: Enforcer>(enforcer: &E, tokens: &[TokenId], reps: usize) -> f64 {
    let mut blocked = BitSet::new(enforcer.vocab_size());
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let mut state = enforcer.init_state();
        let started = Instant::now();
        for &w in tokens {
            enforcer.blocked_tokens(&state, &mut blocked);
            enforcer.advance(&mut state, w);
        }
        samples.push(started.elapsed().as_secs_f64() / tokens.len().max(1) as f64);
        std::hint::black_box(&blocked);
    }
    median(&mut samples)
}

/// Median precompute seconds for BPE composition and per-token scanning.
pub fn compare_precompute(
    vocab: &Vocabulary,
    lexicon: &[Vec<u8>],
    dfas: &[PartialDfa],
    runs: usize,
) -> Result<(f64, f64)> {
    let mut bpe = Vec::new();
    let mut naive = Vec::new();
    for _ in 0..runs.max(1) {
        for (use_bpe, sink) in [(true, &mut bpe), (false, &mut naive)] {
            let opts = BuildOptions { bpe: use_bpe, ..Default::default() };
            let c = CompiledConstraints::build(vocab, lexicon, dfas, &opts)?;
            sink.push(c.precompute_secs());
        }
    }
    Ok((median(&mut bpe), median(&mut naive)))
}

pub fn format_table(rows: &[BenchResult]) -> String {
    let mut s = format!(
        "{:<20} {:<6} {:>6} {:>14} {:>10} {:>9} {:>11} {:>8} {:>10}\n",
        "point", "method", "batch", "tok/s", "stdev", "rel%", "precomp_s", "viol%", "rejections"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:<6} {:>6} {:>14.1} {:>10.1} {:>9.1} {:>11.4} {:>8.1} {:>10}\n",
            r.point, r.method, r.batch_size, r.throughput, r.throughput_std, r.relative, r.precompute_s, r.violation_rate, r.rejections
        ));
    }
    s
}
