//! Blocks a word list during generation from an n-gram model.
//!
//! The same seed is decoded with and without the mask so the two outputs can
//! be compared side by side.

use negdec::validator::scan_strings;
use negdec::{
    generate, train_toy_bpe, BuildOptions, CompiledConstraints, DecodeConfig, DecodeRule, Method,
    NgramOptions, NgramScorer,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SUBJECTS: &[&str] = &["the fox", "a dog", "the lazy cat", "my neighbour", "the quick hare"];
const VERBS: &[&str] = &["jumps over", "sleeps near", "chases", "watches", "ignores"];
const OBJECTS: &[&str] = &["the lazy dog", "a fence", "the quick fox", "the river", "a lazy afternoon"];

fn corpus(sentences: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).unwrap();
    (0..sentences)
        .map(|_| format!("{} {} {}. ", pick(&mut rng, SUBJECTS), pick(&mut rng, VERBS), pick(&mut rng, OBJECTS)))
        .collect()
}

fn main() -> negdec::Result<()> {
    let corpus = corpus(400);
    let vocab = train_toy_bpe(corpus.as_bytes(), 300)?;
    let scorer = NgramScorer::train(&vocab, corpus.as_bytes(), NgramOptions { smoothing: 0.001, ..Default::default() })?;
    let lexicon = vec![b"lazy".to_vec(), b"fox".to_vec()];
    let c = CompiledConstraints::build(&vocab, &lexicon, &[], &BuildOptions::default())?;
    println!(
        "trie states {}, tables {} bytes, built in {:.2} ms",
        c.automaton().unwrap().num_states(),
        c.table_bytes(),
        c.precompute_secs() * 1e3
    );

    let prompt = vocab.encode(b"the ");
    for seed in 0..4 {
        let masked = DecodeConfig { rule: DecodeRule::TopK(5), max_tokens: 24, seed, ..Default::default() };
        let plain = DecodeConfig { method: Method::Unconstrained, ..masked.clone() };
        for (label, cfg) in [("masked", &masked), ("plain ", &plain)] {
            let g = generate(&scorer, &c, cfg, &prompt, vocab.eos_id())?;
            let text = vocab.decode_ids(&g.tokens)?;
            let hits = scan_strings(&text, &lexicon).matches.len();
            println!("seed {seed} {label} [{hits} hits] {:?}", String::from_utf8_lossy(&text));
        }
    }
    Ok(())
}
