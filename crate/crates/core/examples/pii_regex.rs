//! Keeps number patterns out of generated text with regex constraints.

use std::sync::Arc;

use negdec::regex::PII_PATTERNS;
use negdec::validator::scan_regex;
use negdec::{
    compile_regex, generate, train_toy_bpe, AdversarialScorer, BuildOptions, CompiledConstraints,
    DecodeConfig, DecodeRule, Method, NgramOptions, NgramScorer,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn digits(rng: &mut ChaCha8Rng, groups: &[usize]) -> String {
    let parts: Vec<String> = groups.iter().map(|&n| (0..n).map(|_| char::from(b'0' + rng.gen_range(0..10))).collect()).collect();
    parts.join("-")
}

fn corpus(lines: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shapes: [&[usize]; 4] = [&[3, 2, 4], &[3, 3, 4], &[4, 4, 4, 4], &[2, 2]];
    let lead = ["call", "my number is", "card", "ref", "reach me at"];
    (0..lines)
        .map(|_| {
            let shape = shapes[rng.gen_range(0..shapes.len())];
            let word = *lead.choose(&mut rng).unwrap();
            format!("{word} {} today. ", digits(&mut rng, shape))
        })
        .collect()
}

fn main() -> negdec::Result<()> {
    let dfas = PII_PATTERNS
        .iter()
        .map(|(name, re)| {
            let d = compile_regex(re)?;
            println!("{name:<24} {re:<40} {} states", d.num_states());
            Ok(d)
        })
        .collect::<negdec::Result<Vec<_>>>()?;

    let corpus = corpus(300);
    let vocab = Arc::new(train_toy_bpe(corpus.as_bytes(), 340)?);
    let c = Arc::new(CompiledConstraints::build(&vocab, &[], &dfas, &BuildOptions::default())?);
    println!("M = {} global states", c.global().unwrap().total_states());

    let base = NgramScorer::train(&vocab, corpus.as_bytes(), NgramOptions { eos_mass: 0.002, smoothing: 0.001, ..Default::default() })?;
    // Pushes probability toward tokens that would complete a number.
    let scorer = AdversarialScorer::new(base, 6.0, c.clone(), vocab.clone());

    let prompt = vocab.encode(b"call ");
    for seed in 0..3 {
        for method in [Method::Nco, Method::Unconstrained] {
            let cfg = DecodeConfig { rule: DecodeRule::TopK(10), max_tokens: 60, seed, method, ..Default::default() };
            let g = generate(&scorer, &*c, &cfg, &prompt, vocab.eos_id())?;
            let text = vocab.decode_ids(&g.tokens)?;
            let found = scan_regex(&text, &dfas);
            println!("{:<5} {} matches: {:?}", method.label(), found.matches.len(), String::from_utf8_lossy(&text));
        }
    }
    Ok(())
}
