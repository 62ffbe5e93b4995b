//! Sweeps the soft penalty and reports how often constraints are broken.

use std::sync::Arc;

use negdec::bench::{random_lexicon, synthetic_token_stream, synthetic_vocab};
use negdec::validator::scan;
use negdec::{
    generate_batch, AdversarialScorer, BuildOptions, CompiledConstraints, DecodeConfig, DecodeRule,
    MaskMode, Method, NgramOptions, NgramScorer, TokenId,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ALPHABET: &[u8] = b"abcdefgh";

fn main() -> negdec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vocab = Arc::new(synthetic_vocab(2, 1000, ALPHABET, 6)?);
    let lexicon = random_lexicon(&mut rng, 8, 3, ALPHABET);
    let c = Arc::new(CompiledConstraints::build(&vocab, &lexicon, &[], &BuildOptions::default())?);
    let stream = synthetic_token_stream(&mut rng, &vocab, 10_000);
    let base = NgramScorer::from_ids(&vocab, &stream, NgramOptions { order: 2, ..Default::default() })?;
    let scorer = AdversarialScorer::new(base, 3.0, c.clone(), vocab.clone());
    let prompts: Vec<Vec<TokenId>> = (0..200).map(|_| synthetic_token_stream(&mut rng, &vocab, 3)).collect();

    let rate = |method, mode| -> negdec::Result<f64> {
        let cfg = DecodeConfig { rule: DecodeRule::Temperature(1.0), max_tokens: 24, seed: 5, mode, method, ..Default::default() };
        let gens = generate_batch(&scorer, &*c, &cfg, &prompts, vocab.eos_id(), 4)?;
        let mut bad = 0;
        for g in &gens {
            bad += scan(&vocab.decode_ids(&g.tokens)?, &lexicon, &[]).violated() as usize;
        }
        Ok(100.0 * bad as f64 / gens.len() as f64)
    };

    println!("unconstrained   {:>5.1}%", rate(Method::Unconstrained, MaskMode::Hard)?);
    for lambda in [0.0, 1.0, 2.0, 4.0, 8.0, 16.0] {
        println!("soft {lambda:>5.1}      {:>5.1}%", rate(Method::Nco, MaskMode::Soft(lambda))?);
    }
    println!("hard            {:>5.1}%", rate(Method::Nco, MaskMode::Hard)?);
    Ok(())
}
