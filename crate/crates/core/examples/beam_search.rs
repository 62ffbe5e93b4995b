//! Constrained beam search; scores stay the model's own log-probabilities.

use negdec::{
    generate_beam, train_toy_bpe, BuildOptions, CompiledConstraints, DecodeConfig, DecodeRule,
    NgramOptions, NgramScorer,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const COLOURS: &[&str] = &["red", "green", "yellow"];
const THINGS: &[&str] = &["apples", "pears", "wine", "tea", "grapes"];

fn main() -> negdec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let corpus: String = (0..300)
        .map(|_| {
            let mut pick = |xs: &[&'static str]| *xs.choose(&mut rng).unwrap();
            format!("{} {} and {} {}. ", pick(COLOURS), pick(THINGS), pick(COLOURS), pick(THINGS))
        })
        .collect();
    let vocab = train_toy_bpe(corpus.as_bytes(), 290)?;
    let opts = NgramOptions { eos_mass: 0.001, ..Default::default() };
    let scorer = NgramScorer::train(&vocab, corpus.as_bytes(), opts)?;
    let prompt = vocab.encode(b"red ");
    let cfg = DecodeConfig { rule: DecodeRule::Beam(4), max_tokens: 8, ..Default::default() };

    for lexicon in [vec![], vec![b"wine".to_vec(), b"apple".to_vec()]] {
        let c = CompiledConstraints::build(&vocab, &lexicon, &[], &BuildOptions::default())?;
        let names: Vec<_> = lexicon.iter().map(|p| String::from_utf8_lossy(p).into_owned()).collect();
        println!("blocked {names:?}");
        for h in generate_beam(&scorer, &c, &cfg, &prompt, vocab.eos_id())? {
            println!("  {:>8.3}  {:?}", h.score, String::from_utf8_lossy(&vocab.decode_ids(&h.tokens)?));
        }
    }
    Ok(())
}
