mod common;

use std::sync::Arc;

use common::{random_instance, HashScorer};
use negdec::decoder::log_softmax;
use negdec::{
    generate, generate_batch, generate_rejection, AdversarialScorer, BuildOptions, ByteMatcher,
    CompiledConstraints, DecodeConfig, DecodeRule, MaskMode, Method, StaticScorer, TokenId,
    Vocabulary,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson statistic and p-value for observed counts against probabilities.
fn chi_square(observed: &[u64], probs: &[f64]) -> (f64, f64) {
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    (stat, 1.0 - dist.cdf(stat))
}

#[test]
fn masked_sampling_matches_renormalized_distribution() {
    let vocab = Vocabulary::byte_level();
    let c = CompiledConstraints::build(&vocab, &[b"ab".to_vec()], &[], &BuildOptions::default()).unwrap();
    let support: Vec<TokenId> = vec![b'a' as u32, b'b' as u32, b'c' as u32, b'd' as u32, 256];
    let raw = [0.5f32, 2.0, 1.0, -0.3, 0.2];
    let mut logits = vec![-1e4f32; vocab.len()];
    for (&w, &x) in support.iter().zip(&raw) {
        logits[w as usize] = x;
    }
    let scorer = StaticScorer::new(logits);
    let cfg = DecodeConfig {
        rule: DecodeRule::Temperature(1.0),
        max_tokens: 1,
        seed: 11,
        scan_prompt: true,
        ..Default::default()
    };
    let prompts = vec![vec![b'a' as TokenId]; 20_000];
    let gens = generate_batch(&scorer, &c, &cfg, &prompts, vocab.eos_id(), 4).unwrap();
    let allowed: Vec<usize> = vec![0, 2, 3, 4];
    let mut counts = vec![0u64; allowed.len()];
    for g in &gens {
        let w = g.tokens[0];
        assert_ne!(w, b'b' as u32);
        let i = support.iter().position(|&s| s == w).unwrap();
        counts[allowed.iter().position(|&a| a == i).unwrap()] += 1;
    }
    let z: f64 = allowed.iter().map(|&i| (raw[i] as f64).exp()).sum();
    let probs: Vec<f64> = allowed.iter().map(|&i| (raw[i] as f64).exp() / z).collect();
    let (_, p) = chi_square(&counts, &probs);
    assert!(p > 0.001, "p = {p}, counts {counts:?}");
}

#[test]
fn rejection_sampling_keeps_the_masked_distribution() {
    let vocab = Vocabulary::byte_level();
    let c = CompiledConstraints::build(&vocab, &[b"ab".to_vec()], &[], &BuildOptions::default()).unwrap();
    let mut logits = vec![-1e4f32; vocab.len()];
    logits[b'a' as usize] = 0.0;
    logits[b'b' as usize] = 1.0;
    logits[b'c' as usize] = 0.5;
    let scorer = StaticScorer::new(logits);
    let checker = ByteMatcher::new(&vocab, &c);
    let mut counts = [0u64; 2];
    for seed in 0..5000 {
        let cfg = DecodeConfig {
            rule: DecodeRule::Temperature(1.0),
            max_tokens: 1,
            seed,
            scan_prompt: true,
            ..Default::default()
        };
        let g = generate_rejection(&scorer, &checker, &cfg, &[b'a' as u32], vocab.eos_id()).unwrap();
        match g.tokens[0] {
            w if w == b'a' as u32 => counts[0] += 1,
            w if w == b'c' as u32 => counts[1] += 1,
            w => panic!("unexpected token {w}"),
        }
    }
    let z = 1.0 + 0.5f64.exp();
    let (_, p) = chi_square(&counts, &[1.0 / z, 0.5f64.exp() / z]);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn soft_zero_reproduces_unconstrained() {
    for seed in 0..5 {
        let inst = random_instance(seed, 400, true, true);
        let c = CompiledConstraints::build(&inst.vocab, &inst.lexicon, &inst.dfas, &BuildOptions::default()).unwrap();
        let scorer = HashScorer::new(&inst.vocab, seed);
        let base = DecodeConfig { rule: DecodeRule::TopP(0.9), max_tokens: 40, seed, method: Method::Unconstrained, ..Default::default() };
        let soft = DecodeConfig { method: Method::Nco, mode: MaskMode::Soft(0.0), ..base.clone() };
        let eos = inst.vocab.eos_id();
        assert_eq!(
            generate(&scorer, &c, &base, &[], eos).unwrap().tokens,
            generate(&scorer, &c, &soft, &[], eos).unwrap().tokens
        );
    }
}

#[test]
fn rejections_grow_with_boost() {
    let inst = random_instance(5, 600, true, true);
    let vocab = Arc::new(inst.vocab);
    let c = Arc::new(CompiledConstraints::build(&vocab, &inst.lexicon, &inst.dfas, &BuildOptions::default()).unwrap());
    let checker = ByteMatcher::new(&vocab, &c);
    let cfg = DecodeConfig { rule: DecodeRule::Temperature(1.0), max_tokens: 30, seed: 1, ..Default::default() };
    let mut totals = Vec::new();
    for boost in [0.0f32, 3.0, 8.0] {
        let scorer = AdversarialScorer::new(HashScorer::new(&vocab, 5), boost, c.clone(), vocab.clone());
        let total: u64 = (0..20u64)
            .map(|i| {
                let cfg = DecodeConfig { seed: i, ..cfg.clone() };
                generate_rejection(&scorer, &checker, &cfg, &[], vocab.eos_id()).unwrap().report.rejections
            })
            .sum();
        totals.push(total);
    }
    assert!(totals[0] < totals[1] && totals[1] < totals[2], "{totals:?}");
}

#[test]
fn beam_scores_are_sums_of_original_logprobs() {
    let inst = random_instance(9, 300, true, true);
    let c = CompiledConstraints::build(&inst.vocab, &inst.lexicon, &inst.dfas, &BuildOptions::default()).unwrap();
    let scorer = HashScorer::new(&inst.vocab, 9);
    let cfg = DecodeConfig { rule: DecodeRule::Beam(3), max_tokens: 12, ..Default::default() };
    let hyps = negdec::generate_beam(&scorer, &c, &cfg, &[], inst.vocab.eos_id()).unwrap();
    use negdec::Scorer;
    for h in hyps {
        let mut ctx = Vec::new();
        let mut s = 0.0;
        for &w in &h.tokens {
            s += log_softmax(&scorer.logits(&ctx))[w as usize];
            ctx.push(w);
        }
        assert!((s - h.score).abs() < 1e-9);
    }
}
