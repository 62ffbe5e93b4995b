//! Runs every ablated variant against full masking on one workload.

use std::sync::Arc;

use negdec::bench::{ablate, random_lexicon, random_regexes, synthetic_vocab, BenchOptions, Variant, Workload, SYNTH_ALPHABET};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> negdec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab = Arc::new(synthetic_vocab(5, 3000, SYNTH_ALPHABET, 12)?);
    let lexicon = random_lexicon(&mut rng, 32, 4, &SYNTH_ALPHABET[..8]);
    let dfas = random_regexes(&mut rng, 8, 3..=6);
    let opts = BenchOptions { prompts: 8, max_tokens: 32, ..Default::default() };
    // The failure-link variant only covers string constraints.
    let strings_only = Workload::synthetic(vocab.clone(), &lexicon, &[], &opts)?;
    let mixed = Workload::synthetic(vocab, &lexicon, &dfas, &opts)?;
    for v in Variant::ALL {
        let w = if v == Variant::NoFailureLinks { &strings_only } else { &mixed };
        let r = ablate(w, v, 3)?;
        println!(
            "{:<18} full {:>8.0} tok/s  ablated {:>8.0} tok/s  precompute {:.3}s vs {:.3}s  same outputs {}",
            r.variant, r.full.throughput, r.ablated.throughput, r.full.precompute_s, r.ablated.precompute_s, r.identical_outputs
        );
    }
    Ok(())
}
