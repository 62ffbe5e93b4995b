//! Next-token scorers standing in for a language model.

use std::collections::HashMap;
use std::sync::Arc;

use crate::bits::BitSet;
use crate::error::{Error, Result};
use crate::mask::{CompiledConstraints, Enforcer};
use crate::vocab::{TokenId, Vocabulary};

/// A pure function from context to next-token logits.
pub trait Scorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Writes `vocab_size()` finite logits for the token after `context`.
    fn next_logits(&self, context: &[TokenId], out: &mut [f32]);

    fn logits(&self, context: &[TokenId]) -> Vec<f32> {
        let mut out = vec![0.0; self.vocab_size()];
        self.next_logits(context, &mut out);
        out
    }
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logits(&self, context: &[TokenId], out: &mut [f32]) {
        (**self).next_logits(context, out)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logits(&self, context: &[TokenId], out: &mut [f32]) {
        (**self).next_logits(context, out)
    }
}

#[derive(Clone, Debug)]
pub struct UniformScorer {
    vocab_size: usize,
}

impl UniformScorer {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }
}

impl Scorer for UniformScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, _context: &[TokenId], out: &mut [f32]) {
        out.fill(0.0);
    }
}

/// Fixed logits regardless of context.
#[derive(Clone, Debug)]
pub struct StaticScorer {
    logits: Vec<f32>,
}

impl StaticScorer {
    pub fn new(logits: Vec<f32>) -> Self {
        Self { logits }
    }
}

impl Scorer for StaticScorer {
    fn vocab_size(&self) -> usize {
        self.logits.len()
    }

    fn next_logits(&self, _context: &[TokenId], out: &mut [f32]) {
        out.copy_from_slice(&self.logits);
    }
}

#[derive(Clone, Debug)]
pub struct NgramOptions {
    pub order: usize,
    /// Additive smoothing constant.
    pub smoothing: f64,
    /// Probability mass reserved for end-of-sequence.
    pub eos_mass: f64,
}

impl Default for NgramOptions {
    fn default() -> Self {
        Self {
            order: 3,
            smoothing: 0.1,
            eos_mass: 0.02,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Counts {
    total: u64,
    next: Vec<(TokenId, u32)>,
}

/// Smoothed n-gram model over token ids with backoff to shorter contexts.
#[derive(Clone, Debug)]
pub struct NgramScorer {
    vocab_size: usize,
    eos_id: TokenId,
    opts: NgramOptions,
    /// Indexed by context length `0..order`.
    tables: Vec<HashMap<Vec<TokenId>, Counts>>,
}

impl NgramScorer {
    pub fn train(vocab: &Vocabulary, corpus: &[u8], opts: NgramOptions) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Self::from_ids(vocab, &vocab.encode(corpus), opts)
    }

    /// Trains on an already tokenized corpus.
    pub fn from_ids(vocab: &Vocabulary, ids: &[TokenId], opts: NgramOptions) -> Result<Self> {
        if !(1..=4).contains(&opts.order) {
            return Err(Error::InvalidConfig(format!(
                "n-gram order must be in 1..=4, got {}",
                opts.order
            )));
        }
        if !(opts.smoothing > 0.0) {
            return Err(Error::InvalidConfig("smoothing must be positive".into()));
        }
        if !(opts.eos_mass > 0.0 && opts.eos_mass < 1.0) {
            return Err(Error::InvalidConfig("eos mass must be in (0, 1)".into()));
        }
        if ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut raw: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u32>>> =
            vec![HashMap::new(); opts.order];
        for (i, &w) in ids.iter().enumerate() {
            for k in 0..opts.order.min(i + 1) {
                let ctx = ids[i - k..i].to_vec();
                *raw[k].entry(ctx).or_default().entry(w).or_default() += 1;
            }
        }
        let tables = raw
            .into_iter()
            .map(|level| {
                level
                    .into_iter()
                    .map(|(ctx, next)| {
                        let mut next: Vec<(TokenId, u32)> = next.into_iter().collect();
                        next.sort_unstable();
                        let total = next.iter().map(|&(_, c)| c as u64).sum();
                        (ctx, Counts { total, next })
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            vocab_size: vocab.len(),
            eos_id: vocab.eos_id(),
            opts,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.opts.order
    }

    /// Counts for the longest seen suffix of `context`.
    fn backoff(&self, context: &[TokenId]) -> Option<&Counts> {
        let longest = (self.opts.order - 1).min(context.len());
        (0..=longest)
            .rev()
            .find_map(|k| self.tables[k].get(&context[context.len() - k..]))
    }
}

impl Scorer for NgramScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, context: &[TokenId], out: &mut [f32]) {
        let alpha = self.opts.smoothing;
        let support = (self.vocab_size - 1) as f64;
        let keep = (1.0 - self.opts.eos_mass).ln();
        let counts = self.backoff(context);
        let total = counts.map_or(0, |c| c.total) as f64;
        let denom = (total + alpha * support).ln();
        out.fill((alpha.ln() - denom + keep) as f32);
        if let Some(c) = counts {
            for &(w, n) in &c.next {
                out[w as usize] = ((n as f64 + alpha).ln() - denom + keep) as f32;
            }
        }
        out[self.eos_id as usize] = self.opts.eos_mass.ln() as f32;
    }
}

/// Boosts tokens that complete or extend a forbidden match after `context`.
pub struct AdversarialScorer<S> {
    base: S,
    boost: f32,
    constraints: Arc<CompiledConstraints>,
    vocab: Arc<Vocabulary>,
    extend: bool,
}

impl<S: Scorer> AdversarialScorer<S> {
    pub fn new(
        base: S,
        boost: f32,
        constraints: Arc<CompiledConstraints>,
        vocab: Arc<Vocabulary>,
    ) -> Self {
        Self {
            base,
            boost,
            constraints,
            vocab,
            extend: true,
        }
    }

    /// Only boost tokens that complete a match.
    pub fn completing_only(mut self) -> Self {
        self.extend = false;
        self
    }

    pub fn boost(&self) -> f32 {
        self.boost
    }

    /// Tokens boosted after `context`.
    pub fn targets(&self, context: &[TokenId]) -> BitSet {
        let c = &*self.constraints;
        let mut state = c.init_state();
        for &w in context {
            c.advance(&mut state, w);
        }
        let mut out = BitSet::new(c.vocab_size());
        c.blocked_matmul(&state, &mut out);
        if self.extend {
            if let (Some(ac), Some(t), Some(q)) =
                (c.automaton(), c.string_tables(), state.trie_state)
            {
                let depth = ac.depth(q);
                for w in 0..self.vocab.len() as TokenId {
                    let len = self.vocab.token_bytes(w).len();
                    if len > 0 && ac.depth(t.delta(q, w)) == depth + len {
                        out.insert(w as usize);
                    }
                }
            }
        }
        out
    }
}

impl<S: Scorer> Scorer for AdversarialScorer<S> {
    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }

    fn next_logits(&self, context: &[TokenId], out: &mut [f32]) {
        self.base.next_logits(context, out);
        for w in self.targets(context).ones() {
            out[w] += self.boost;
        }
    }
}
