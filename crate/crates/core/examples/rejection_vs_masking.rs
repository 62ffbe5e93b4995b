//! Throughput of masking against rejection sampling as the adversary grows.

use std::sync::Arc;

use negdec::bench::{random_regexes, synthetic_vocab, BenchOptions, Workload, SYNTH_ALPHABET};
use negdec::{DecodeRule, Method};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> negdec::Result<()> {
    let vocab = Arc::new(synthetic_vocab(4, 4000, SYNTH_ALPHABET, 12)?);
    let dfas = random_regexes(&mut ChaCha8Rng::seed_from_u64(4), 50, 3..=6);
    println!("{:>6} {:>6} {:>10} {:>10} {:>10}", "boost", "method", "tok/s", "rejects", "violated");
    for boost in [0.0, 2.0, 4.0, 8.0] {
        let opts = BenchOptions { boost, prompts: 8, max_tokens: 32, rule: DecodeRule::Temperature(1.0), ..Default::default() };
        let w = Workload::synthetic(vocab.clone(), &[], &dfas, &opts)?;
        for method in [Method::Nco, Method::RejectionSampling, Method::Unconstrained] {
            let (m, _) = w.run(method)?;
            println!("{boost:>6.1} {:>6} {:>10.0} {:>10} {:>10}", method.label(), m.throughput(), m.rejections, m.violated);
        }
    }
    Ok(())
}
