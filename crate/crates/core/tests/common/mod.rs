#![allow(dead_code)]

use std::hash::{Hash, Hasher};

use negdec::bench::{random_lexicon, random_regexes, synthetic_vocab};
use negdec::regex::DEAD;
use negdec::{PartialDfa, Scorer, TokenId, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALPHABET: &[u8] = b"abcdefgh";

/// Pseudo-random logits that depend only on the context.
pub struct HashScorer {
    pub vocab_size: usize,
    pub eos_id: TokenId,
    pub seed: u64,
    pub spread: f32,
    pub eos_logit: f32,
    /// Tokens outside this set get a very low logit.
    pub support: Option<Vec<bool>>,
}

impl HashScorer {
    pub fn new(vocab: &Vocabulary, seed: u64) -> Self {
        let support = (0..vocab.len() as TokenId)
            .map(|w| w == vocab.eos_id() || vocab.token_bytes(w).iter().all(|b| ALPHABET.contains(b)))
            .collect();
        Self {
            vocab_size: vocab.len(),
            eos_id: vocab.eos_id(),
            seed,
            spread: 4.0,
            eos_logit: -1.0,
            support: Some(support),
        }
    }
}

impl Scorer for HashScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, context: &[TokenId], out: &mut [f32]) {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        context.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ h.finish());
        for (w, x) in out.iter_mut().enumerate() {
            *x = rng.gen::<f32>() * self.spread;
            if let Some(s) = &self.support {
                if !s[w] {
                    *x = -30.0;
                }
            }
        }
        out[self.eos_id as usize] = self.eos_logit;
    }
}

pub struct Instance {
    pub vocab: Vocabulary,
    pub lexicon: Vec<Vec<u8>>,
    pub dfas: Vec<PartialDfa>,
}

/// A random vocabulary over [`ALPHABET`] with random constraints.
pub fn random_instance(seed: u64, vocab_size: usize, strings: bool, regexes: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = synthetic_vocab(seed, vocab_size, ALPHABET, 6).unwrap();
    let lexicon = if strings {
        let n = rng.gen_range(1..=32);
        let mut lexicon = Vec::with_capacity(n);
        for _ in 0..n {
            let len = rng.gen_range(1..=5);
            if len > 1 || rng.gen_bool(0.2) {
                lexicon.extend(random_lexicon(&mut rng, 1, len, ALPHABET));
            }
        }
        lexicon
    } else {
        Vec::new()
    };
    let lexicon = if strings && lexicon.is_empty() { vec![b"abc".to_vec()] } else { lexicon };
    let dfas = if regexes {
        let n = rng.gen_range(1..=8);
        random_regexes(&mut rng, n, 2..=5)
    } else {
        Vec::new()
    };
    Instance { vocab, lexicon, dfas }
}

/// States reached by running `dfa` over every suffix of `text`, including
/// the empty one.
pub fn brute_active(dfa: &PartialDfa, text: &[u8]) -> Vec<u32> {
    let mut out: Vec<u32> = (0..=text.len())
        .filter_map(|i| {
            let mut q = dfa.start();
            for &a in &text[i..] {
                q = dfa.step(q, a);
                if q == DEAD {
                    return None;
                }
            }
            Some(q)
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}
