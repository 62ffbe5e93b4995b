//! Times table construction by merge composition against per-token scanning.

use negdec::bench::{compare_precompute, random_lexicon, random_regexes, synthetic_vocab, SYNTH_ALPHABET};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> negdec::Result<()> {
    let vocab = synthetic_vocab(0, 8000, SYNTH_ALPHABET, 12)?;
    println!("vocab {} tokens, mean length {:.2}", vocab.len(), vocab.mean_token_len());
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    for n in [10, 100, 1000] {
        let lexicon = random_lexicon(&mut rng, n, 4, &SYNTH_ALPHABET[..8]);
        let (bpe, naive) = compare_precompute(&vocab, &lexicon, &[], 3)?;
        println!("{n:>5} strings: composed {:>8.2} ms, scanned {:>8.2} ms ({:.1}x)", bpe * 1e3, naive * 1e3, naive / bpe);
    }
    for n in [5, 50] {
        let dfas = random_regexes(&mut rng, n, 3..=6);
        let (bpe, naive) = compare_precompute(&vocab, &[], &dfas, 3)?;
        println!("{n:>5} regexes: composed {:>8.2} ms, scanned {:>8.2} ms ({:.1}x)", bpe * 1e3, naive * 1e3, naive / bpe);
    }
    Ok(())
}
