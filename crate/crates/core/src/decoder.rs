//! Generation loop over masked logits, the rejection-sampling baseline and
//! beam search.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitSet;
use crate::error::{Error, Result};
use crate::mask::{apply_mask, Enforcer, MaskMode};
use crate::scorer::Scorer;
use crate::vocab::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DecodeRule {
    Greedy,
    TopK(usize),
    TopP(f32),
    Temperature(f32),
    Beam(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Mask blocked tokens before selection.
    Nco,
    /// Select first, check, and reselect on violation.
    RejectionSampling,
    Unconstrained,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Nco => "nco",
            Method::RejectionSampling => "rs",
            Method::Unconstrained => "none",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecodeConfig {
    pub rule: DecodeRule,
    pub max_tokens: usize,
    pub seed: u64,
    pub mode: MaskMode,
    pub method: Method,
    /// Seed the constraint state by running it over the prompt.
    pub scan_prompt: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            rule: DecodeRule::Greedy,
            max_tokens: 64,
            seed: 0,
            mode: MaskMode::Hard,
            method: Method::Nco,
            scan_prompt: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        match self.rule {
            DecodeRule::TopK(0) => return bad("top-k needs k >= 1"),
            DecodeRule::TopP(p) if !(p > 0.0 && p <= 1.0) => return bad("top-p needs p in (0, 1]"),
            DecodeRule::Temperature(t) if !(t > 0.0 && t.is_finite()) => {
                return bad("temperature must be positive")
            }
            DecodeRule::Beam(0) => return bad("beam width must be >= 1"),
            _ => {}
        }
        if let MaskMode::Soft(l) = self.mode {
            if !(l >= 0.0) {
                return bad("soft penalty must be non-negative");
            }
            if matches!(self.rule, DecodeRule::Beam(_)) {
                return bad("soft mode cannot be combined with beam search");
            }
            if self.method == Method::RejectionSampling {
                return bad("rejection sampling requires hard mode");
            }
        }
        if self.method == Method::RejectionSampling && matches!(self.rule, DecodeRule::Beam(_)) {
            return bad("rejection sampling does not support beam search");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub tokens_emitted: usize,
    pub elapsed_s: f64,
    pub rejections: u64,
    /// Blocked-token count at each step (masking methods only).
    pub masked_per_step: Vec<u32>,
    pub hit_eos: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Generated tokens, including the final EOS when one was emitted.
    pub tokens: Vec<TokenId>,
    pub report: GenerationReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    /// Sum of unmasked log-probabilities of the selected tokens.
    pub score: f64,
}

/// Highest finite logit; ties go to the lowest id.
pub fn argmax(logits: &[f32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in logits.iter().enumerate() {
        if x == f32::NEG_INFINITY || x.is_nan() {
            continue;
        }
        if best.is_none_or(|b| x > logits[b]) {
            best = Some(i);
        }
    }
    best
}

/// Numerically stable log-softmax in f64.
pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(f32::NEG_INFINITY, f32::max) as f64;
    let z: f64 = logits.iter().map(|&x| (x as f64 - max).exp()).sum();
    let lz = max + z.ln();
    logits.iter().map(|&x| x as f64 - lz).collect()
}

fn sample_from(candidates: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    // `candidates` hold unnormalized weights.
    let total: f64 = candidates.iter().map(|&(_, p)| p).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(i, p) in candidates {
        if u < p {
            return i;
        }
        u -= p;
    }
    candidates
        .iter()
        .rev()
        .find(|&&(_, p)| p > 0.0)
        .map_or(candidates[0].0, |&(i, _)| i)
}

fn weights(logits: &[f32], temperature: f64) -> Vec<(usize, f64)> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    logits
        .iter()
        .enumerate()
        .filter(|(_, x)| **x != f32::NEG_INFINITY)
        .map(|(i, &x)| (i, ((x as f64 - max) / temperature).exp()))
        .collect()
}

/// Descending by weight, ties by ascending id.
fn sort_desc(w: &mut [(usize, f64)]) {
    w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Applies a decoding rule to already-masked logits.
pub fn select(rule: DecodeRule, logits: &[f32], rng: &mut ChaCha8Rng) -> usize {
    match rule {
        DecodeRule::Greedy | DecodeRule::Beam(_) => {
            argmax(logits).expect("at least one selectable token")
        }
        DecodeRule::Temperature(t) => sample_from(&weights(logits, t as f64), rng),
        DecodeRule::TopK(k) => {
            let mut w = weights(logits, 1.0);
            sort_desc(&mut w);
            w.truncate(k);
            sample_from(&w, rng)
        }
        DecodeRule::TopP(p) => {
            let mut w = weights(logits, 1.0);
            sort_desc(&mut w);
            let total: f64 = w.iter().map(|&(_, x)| x).sum();
            let mut acc = 0.0;
            let mut keep = w.len();
            for (n, &(_, x)) in w.iter().enumerate() {
                acc += x;
                if acc >= p as f64 * total {
                    keep = n + 1;
                    break;
                }
            }
            w.truncate(keep);
            sample_from(&w, rng)
        }
    }
}

pub fn sequence_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index))
}

/// Decodes one sequence. Beam rules return the best hypothesis.
pub fn generate<S, E>(
    scorer: &S,
    enforcer: &E,
    config: &DecodeConfig,
    prompt: &[TokenId],
    eos_id: TokenId,
) -> Result<Generation>
where
    S: Scorer + ?Sized,
    E: Enforcer,
{
    generate_indexed(scorer, enforcer, config, prompt, eos_id, 0)
}

fn generate_indexed<S, E>(
    scorer: &S,
    enforcer: &E,
    config: &DecodeConfig,
    prompt: &[TokenId],
    eos_id: TokenId,
    index: u64,
) -> Result<Generation>
where
    S: Scorer + ?Sized,
    E: Enforcer,
{
    config.validate()?;
    check_sizes(scorer, enforcer)?;
    if let DecodeRule::Beam(_) = config.rule {
        let started = Instant::now();
        let mut hyps = generate_beam(scorer, enforcer, config, prompt, eos_id)?;
        let best = hyps.swap_remove(0);
        let report = GenerationReport {
            tokens_emitted: best.tokens.len(),
            elapsed_s: started.elapsed().as_secs_f64(),
            hit_eos: best.tokens.last() == Some(&eos_id),
            ..Default::default()
        };
        return Ok(Generation {
            tokens: best.tokens,
            report,
        });
    }
    if config.method == Method::RejectionSampling {
        return generate_rejection_indexed(scorer, enforcer, config, prompt, eos_id, index);
    }

    let started = Instant::now();
    let mut rng = sequence_rng(config.seed, index);
    let v = scorer.vocab_size();
    let mut logits = vec![0.0f32; v];
    let mut blocked = BitSet::new(v);
    let mut state = enforcer.init_state();
    if config.scan_prompt {
        for &w in prompt {
            enforcer.advance(&mut state, w);
        }
    }
    let mut context = prompt.to_vec();
    let mut report = GenerationReport::default();
    let mut out = Vec::new();
    for _ in 0..config.max_tokens {
        scorer.next_logits(&context, &mut logits);
        if config.method == Method::Nco {
            enforcer.blocked_tokens(&state, &mut blocked);
            report.masked_per_step.push(blocked.count_ones() as u32);
            apply_mask(&mut logits, &blocked, config.mode);
        }
        let w = select(config.rule, &logits, &mut rng) as TokenId;
        out.push(w);
        context.push(w);
        if w == eos_id {
            report.hit_eos = true;
            break;
        }
        enforcer.advance(&mut state, w);
    }
    report.tokens_emitted = out.len();
    report.elapsed_s = started.elapsed().as_secs_f64();
    Ok(Generation { tokens: out, report })
}

/// Rejection-sampling baseline: select from unmasked logits, and on a
/// violation mask only the rejected token and reselect from the same logits.
pub fn generate_rejection<S, E>(
    scorer: &S,
    checker: &E,
    config: &DecodeConfig,
    prompt: &[TokenId],
    eos_id: TokenId,
) -> Result<Generation>
where
    S: Scorer + ?Sized,
    E: Enforcer,
{
    let config = DecodeConfig {
        method: Method::RejectionSampling,
        ..config.clone()
    };
    config.validate()?;
    check_sizes(scorer, checker)?;
    generate_rejection_indexed(scorer, checker, &config, prompt, eos_id, 0)
}

fn generate_rejection_indexed<S, E>(
    scorer: &S,
    checker: &E,
    config: &DecodeConfig,
    prompt: &[TokenId],
    eos_id: TokenId,
    index: u64,
) -> Result<Generation>
where
    S: Scorer + ?Sized,
    E: Enforcer,
{
    let started = Instant::now();
    let mut rng = sequence_rng(config.seed, index);
    let mut logits = vec![0.0f32; scorer.vocab_size()];
    let mut state = checker.init_state();
    if config.scan_prompt {
        for &w in prompt {
            checker.advance(&mut state, w);
        }
    }
    let mut context = prompt.to_vec();
    let mut report = GenerationReport::default();
    let mut out = Vec::new();
    for _ in 0..config.max_tokens {
        scorer.next_logits(&context, &mut logits);
        let w = loop {
            let w = select(config.rule, &logits, &mut rng) as TokenId;
            if w == eos_id || !checker.violates(&state, w) {
                break w;
            }
            report.rejections += 1;
            logits[w as usize] = f32::NEG_INFINITY;
        };
        out.push(w);
        context.push(w);
        if w == eos_id {
            report.hit_eos = true;
            break;
        }
        checker.advance(&mut state, w);
    }
    report.tokens_emitted = out.len();
    report.elapsed_s = started.elapsed().as_secs_f64();
    Ok(Generation { tokens: out, report })
}

struct Beam<St> {
    tokens: Vec<TokenId>,
    state: St,
    score: f64,
    done: bool,
}

/// Beam search with masking as a feasibility filter. Returned hypotheses are
/// sorted by descending score.
pub fn generate_beam<S, E>(
    scorer: &S,
    enforcer: &E,
    config: &DecodeConfig,
    prompt: &[TokenId],
    eos_id: TokenId,
) -> Result<Vec<Hypothesis>>
where
    S: Scorer + ?Sized,
    E: Enforcer,
{
    config.validate()?;
    check_sizes(scorer, enforcer)?;
    let width = match config.rule {
        DecodeRule::Beam(w) => w,
        _ => return Err(Error::InvalidConfig("beam search needs a beam rule".into())),
    };
    let v = scorer.vocab_size();
    let mut init = enforcer.init_state();
    if config.scan_prompt {
        for &w in prompt {
            enforcer.advance(&mut init, w);
        }
    }
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        state: init,
        score: 0.0,
        done: false,
    }];
    let mut logits = vec![0.0f32; v];
    let mut blocked = BitSet::new(v);
    let mut context = Vec::with_capacity(prompt.len() + config.max_tokens);
    for _ in 0..config.max_tokens {
        if beams.iter().all(|b| b.done) {
            break;
        }
        // (score, beam index, token or None for a finished beam carried over)
        let mut pool: Vec<(f64, usize, Option<TokenId>)> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            if beam.done {
                pool.push((beam.score, bi, None));
                continue;
            }
            context.clear();
            context.extend_from_slice(prompt);
            context.extend_from_slice(&beam.tokens);
            scorer.next_logits(&context, &mut logits);
            let logp = log_softmax(&logits);
            if config.method == Method::Nco {
                enforcer.blocked_tokens(&beam.state, &mut blocked);
                apply_mask(&mut logits, &blocked, MaskMode::Hard);
            }
            let mut cands: Vec<(usize, f64)> = logits
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != f32::NEG_INFINITY)
                .map(|(i, _)| (i, logp[i]))
                .collect();
            sort_desc(&mut cands);
            cands.truncate(width);
            pool.extend(
                cands
                    .into_iter()
                    .map(|(w, lp)| (beam.score + lp, bi, Some(w as TokenId))),
            );
        }
        pool.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        pool.truncate(width);
        beams = pool
            .into_iter()
            .map(|(score, bi, w)| {
                let parent = &beams[bi];
                match w {
                    None => Beam {
                        tokens: parent.tokens.clone(),
                        state: parent.state.clone(),
                        score,
                        done: true,
                    },
                    Some(w) => {
                        let mut tokens = parent.tokens.clone();
                        tokens.push(w);
                        let mut state = parent.state.clone();
                        if w != eos_id {
                            enforcer.advance(&mut state, w);
                        }
                        Beam {
                            tokens,
                            state,
                            score,
                            done: w == eos_id,
                        }
                    }
                }
            })
            .collect();
    }
    Ok(beams
        .into_iter()
        .map(|b| Hypothesis {
            tokens: b.tokens,
            score: b.score,
        })
        .collect())
}

/// Decodes every prompt independently. Sequence `i` uses seed `seed + i`, so
/// results do not depend on `workers`.
pub fn generate_batch<S, E>(
    scorer: &S,
    enforcer: &E,
    config: &DecodeConfig,
    prompts: &[Vec<TokenId>],
    eos_id: TokenId,
    workers: usize,
) -> Result<Vec<Generation>>
where
    S: Scorer + ?Sized,
    E: Enforcer,
{
    config.validate()?;
    let run = |(i, p): (usize, &Vec<TokenId>)| {
        generate_indexed(scorer, enforcer, config, p, eos_id, i as u64)
    };
    if workers <= 1 {
        return prompts.iter().enumerate().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| prompts.par_iter().enumerate().map(run).collect())
}

fn check_sizes<S: Scorer + ?Sized, E: Enforcer>(scorer: &S, enforcer: &E) -> Result<()> {
    if scorer.vocab_size() != enforcer.vocab_size() {
        return Err(Error::VocabMismatch {
            expected: enforcer.vocab_size(),
            got: scorer.vocab_size(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{BuildOptions, CompiledConstraints};
    use crate::scorer::{StaticScorer, UniformScorer};
    use crate::vocab::{Vocabulary, EOS_ID};

    /// Prefers "a", then "b", then "ab", then EOS last.
    struct ABScorer {
        v: usize,
    }

    impl Scorer for ABScorer {
        fn vocab_size(&self) -> usize {
            self.v
        }

        fn next_logits(&self, context: &[TokenId], out: &mut [f32]) {
            out.fill(-10.0);
            out[EOS_ID as usize] = if context.len() >= 6 { 10.0 } else { -5.0 };
            let last = context.last().copied();
            if last == Some(b'a' as u32) {
                out[b'b' as usize] = 3.0;
                out[257] = 2.5;
                out[b'c' as usize] = 1.0;
            } else {
                out[b'a' as usize] = 3.0;
            }
        }
    }

    fn ab_setup() -> (Vocabulary, CompiledConstraints) {
        let vocab = Vocabulary::from_merges([(b'a' as u32, b'b' as u32)]).unwrap();
        let c = CompiledConstraints::build(&vocab, &[b"ab".to_vec()], &[], &BuildOptions::default())
            .unwrap();
        (vocab, c)
    }

    #[test]
    fn greedy_avoids_ab() {
        let (vocab, c) = ab_setup();
        let s = ABScorer { v: vocab.len() };
        let g = generate(&s, &c, &DecodeConfig::default(), &[], EOS_ID).unwrap();
        let text = vocab.decode_ids(&g.tokens).unwrap();
        assert_eq!(text, b"acacac");
        assert!(g.report.hit_eos);
        assert_eq!(g.report.masked_per_step.len(), g.tokens.len());

        let un = DecodeConfig {
            method: Method::Unconstrained,
            ..Default::default()
        };
        let g = generate(&s, &c, &un, &[], EOS_ID).unwrap();
        assert_eq!(vocab.decode_ids(&g.tokens).unwrap(), b"ababab");
    }

    #[test]
    fn rejection_greedy_matches_and_counts() {
        let (vocab, c) = ab_setup();
        let s = ABScorer { v: vocab.len() };
        let nco = generate(&s, &c, &DecodeConfig::default(), &[], EOS_ID).unwrap();
        let rs = generate_rejection(&s, &c, &DecodeConfig::default(), &[], EOS_ID).unwrap();
        assert_eq!(nco.tokens, rs.tokens);
        // "b" and "ab" are rejected after each "a".
        assert_eq!(rs.report.rejections, 6);
    }

    #[test]
    fn soft_zero_and_empty_constraints_match_unconstrained() {
        let vocab = Vocabulary::from_merges([(b'a' as u32, b'b' as u32)]).unwrap();
        let (_, c) = ab_setup();
        let none = CompiledConstraints::build(&vocab, &[], &[], &BuildOptions::default()).unwrap();
        let s = UniformScorer::new(vocab.len());
        for rule in [DecodeRule::Temperature(1.0), DecodeRule::TopK(5), DecodeRule::TopP(0.5)] {
            let base = DecodeConfig {
                rule,
                max_tokens: 40,
                seed: 7,
                method: Method::Unconstrained,
                ..Default::default()
            };
            let reference = generate(&s, &c, &base, &[], EOS_ID).unwrap().tokens;
            let soft = DecodeConfig {
                method: Method::Nco,
                mode: MaskMode::Soft(0.0),
                ..base.clone()
            };
            assert_eq!(generate(&s, &c, &soft, &[], EOS_ID).unwrap().tokens, reference);
            let empty = DecodeConfig {
                method: Method::Nco,
                ..base.clone()
            };
            assert_eq!(generate(&s, &none, &empty, &[], EOS_ID).unwrap().tokens, reference);
        }
    }

    #[test]
    fn invalid_configs() {
        let (vocab, c) = ab_setup();
        let s = UniformScorer::new(vocab.len());
        for cfg in [
            DecodeConfig { rule: DecodeRule::Beam(2), mode: MaskMode::Soft(1.0), ..Default::default() },
            DecodeConfig { rule: DecodeRule::TopP(0.0), ..Default::default() },
            DecodeConfig { rule: DecodeRule::Temperature(0.0), ..Default::default() },
            DecodeConfig { rule: DecodeRule::TopK(0), ..Default::default() },
            DecodeConfig { rule: DecodeRule::Beam(0), ..Default::default() },
            DecodeConfig { max_tokens: 0, ..Default::default() },
            DecodeConfig {
                method: Method::RejectionSampling,
                mode: MaskMode::Soft(1.0),
                rule: DecodeRule::Temperature(1.0),
                ..Default::default()
            },
        ] {
            assert!(matches!(
                generate(&s, &c, &cfg, &[], EOS_ID),
                Err(Error::InvalidConfig(_))
            ));
        }
        let small = UniformScorer::new(10);
        assert!(matches!(
            generate(&small, &c, &DecodeConfig::default(), &[], EOS_ID),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn beam_one_is_greedy_and_scores_use_original_logprobs() {
        let (vocab, c) = ab_setup();
        let s = ABScorer { v: vocab.len() };
        let greedy = generate(&s, &c, &DecodeConfig::default(), &[], EOS_ID).unwrap();
        let cfg = DecodeConfig {
            rule: DecodeRule::Beam(1),
            ..Default::default()
        };
        let hyps = generate_beam(&s, &c, &cfg, &[], EOS_ID).unwrap();
        assert_eq!(hyps[0].tokens, greedy.tokens);
        let mut ctx = Vec::new();
        let mut expected = 0.0;
        for &w in &hyps[0].tokens {
            expected += log_softmax(&s.logits(&ctx))[w as usize];
            ctx.push(w);
        }
        assert!((hyps[0].score - expected).abs() < 1e-9);

        let wide = DecodeConfig {
            rule: DecodeRule::Beam(4),
            ..Default::default()
        };
        let hyps = generate_beam(&s, &c, &wide, &[], EOS_ID).unwrap();
        assert_eq!(hyps.len(), 4);
        assert!(hyps.windows(2).all(|p| p[0].score >= p[1].score));
        for h in &hyps {
            let text = vocab.decode_ids(&h.tokens).unwrap();
            assert!(!text.windows(2).any(|p| p == b"ab"));
        }
    }

    #[test]
    fn top_k_and_top_p_pools() {
        let logits = vec![3.0, 2.0, 1.0, f32::NEG_INFINITY, 0.0];
        let mut rng = sequence_rng(1, 0);
        for _ in 0..200 {
            assert!(select(DecodeRule::TopK(2), &logits, &mut rng) < 2);
            assert_eq!(select(DecodeRule::TopP(0.01), &logits, &mut rng), 0);
            assert_ne!(select(DecodeRule::Temperature(1.0), &logits, &mut rng), 3);
        }
        assert_eq!(argmax(&[1.0, 2.0, 2.0]), Some(1));
        assert_eq!(argmax(&[f32::NEG_INFINITY]), None);
    }

    #[test]
    fn batch_is_worker_independent() {
        let (vocab, c) = ab_setup();
        let mut logits = vec![0.0; vocab.len()];
        logits[EOS_ID as usize] = -3.0;
        let s = StaticScorer::new(logits);
        let cfg = DecodeConfig {
            rule: DecodeRule::Temperature(1.0),
            max_tokens: 30,
            seed: 3,
            ..Default::default()
        };
        let prompts: Vec<Vec<TokenId>> = (0..8).map(|i| vec![i]).collect();
        let a = generate_batch(&s, &c, &cfg, &prompts, EOS_ID, 1).unwrap();
        let b = generate_batch(&s, &c, &cfg, &prompts, EOS_ID, 4).unwrap();
        let ta: Vec<_> = a.iter().map(|g| g.tokens.clone()).collect();
        let tb: Vec<_> = b.iter().map(|g| g.tokens.clone()).collect();
        assert_eq!(ta, tb);
        assert_ne!(ta[0], ta[1]);
    }
}
