//! Per-sequence constraint state and token masks.
//!
//! A lexicon is tracked by a single Aho-Corasick state; regexes by an
//! active-state bitvector over the concatenated state space of all automata.
//! The blocked-token vector for a step is the mask row of the trie state OR'd
//! with the boolean product `sᵀ·B` of the active vector and the blocking
//! matrix.

use std::time::Instant;

use crate::ac::AcAutomaton;
use crate::bits::{BitMatrix, BitSet};
use crate::error::{Error, Result};
use crate::regex::{PartialDfa, DEAD};
use crate::tables::{
    precompute_regex_bpe, precompute_regex_naive, precompute_string_bpe,
    precompute_string_naive, GlobalMatrices, PrecomputeOptions, RegexTables, StringTables,
};
use crate::vocab::{TokenId, Vocabulary};

/// How a decoding step turns constraint state into a token mask.
pub trait Enforcer: Sync {
    type State: Clone + Send;

    fn vocab_size(&self) -> usize;

    fn init_state(&self) -> Self::State;

    /// Writes the blocked-token vector for `state` into `out`.
    fn blocked_tokens(&self, state: &Self::State, out: &mut BitSet);

    /// Whether appending `w` in `state` completes a forbidden match.
    fn violates(&self, state: &Self::State, w: TokenId) -> bool;

    fn advance(&self, state: &mut Self::State, w: TokenId);
}

/// Logit penalty applied to blocked tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskMode {
    /// Blocked logits become `-inf`.
    Hard,
    /// Blocked logits are shifted by `-lambda`.
    Soft(f32),
}

pub fn apply_mask(logits: &mut [f32], blocked: &BitSet, mode: MaskMode) {
    debug_assert_eq!(logits.len(), blocked.len());
    match mode {
        MaskMode::Hard => {
            for w in blocked.ones() {
                logits[w] = f32::NEG_INFINITY;
            }
        }
        MaskMode::Soft(lambda) => {
            if lambda == 0.0 {
                return;
            }
            for w in blocked.ones() {
                logits[w] -= lambda;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MaskPath {
    /// Boolean product of the active vector with the global blocking matrix.
    #[default]
    Matmul,
    /// Token-by-token check against each active state's row.
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    String,
    Regex,
    Combined,
    Unconstrained,
}

/// Online constraint state of one sequence or beam.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceState {
    pub trie_state: Option<u32>,
    pub active: Option<BitSet>,
}

impl SequenceState {
    pub fn kind(&self) -> StateKind {
        match (&self.trie_state, &self.active) {
            (Some(_), Some(_)) => StateKind::Combined,
            (Some(_), None) => StateKind::String,
            (None, Some(_)) => StateKind::Regex,
            (None, None) => StateKind::Unconstrained,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub precompute: PrecomputeOptions,
    /// Compose merged tokens from their children; otherwise scan every token.
    pub bpe: bool,
    pub mask_path: MaskPath,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            precompute: PrecomputeOptions::default(),
            bpe: true,
            mask_path: MaskPath::Matmul,
        }
    }
}

/// A lexicon and regex set compiled against one vocabulary.
#[derive(Clone, Debug)]
pub struct CompiledConstraints {
    vocab_size: usize,
    eos_id: TokenId,
    lexicon: Vec<Vec<u8>>,
    ac: Option<AcAutomaton>,
    strings: Option<StringTables>,
    dfas: Vec<PartialDfa>,
    regex: Option<RegexTables>,
    global: Option<GlobalMatrices>,
    mask_path: MaskPath,
    precompute_secs: f64,
}

impl CompiledConstraints {
    pub fn build(
        vocab: &Vocabulary,
        lexicon: &[Vec<u8>],
        dfas: &[PartialDfa],
        opts: &BuildOptions,
    ) -> Result<Self> {
        let started = Instant::now();
        let (ac, strings) = if lexicon.is_empty() {
            (None, None)
        } else {
            let ac = AcAutomaton::build(lexicon)?;
            let tables = if opts.bpe {
                precompute_string_bpe(&ac, vocab, &opts.precompute)?
            } else {
                precompute_string_naive(&ac, vocab, &opts.precompute)?
            };
            (Some(ac), Some(tables))
        };
        let (regex, global) = if dfas.is_empty() {
            (None, None)
        } else {
            let tables = if opts.bpe {
                precompute_regex_bpe(dfas, vocab, &opts.precompute)?
            } else {
                precompute_regex_naive(dfas, vocab, &opts.precompute)?
            };
            let global = GlobalMatrices::build(&tables);
            (Some(tables), Some(global))
        };
        Ok(Self {
            vocab_size: vocab.len(),
            eos_id: vocab.eos_id(),
            lexicon: lexicon.to_vec(),
            ac,
            strings,
            dfas: dfas.to_vec(),
            regex,
            global,
            mask_path: opts.mask_path,
            precompute_secs: started.elapsed().as_secs_f64(),
        })
    }

    /// Reassembles constraints from previously computed tables.
    pub fn from_tables(
        vocab: &Vocabulary,
        lexicon: &[Vec<u8>],
        dfas: &[PartialDfa],
        strings: Option<StringTables>,
        regex: Option<RegexTables>,
    ) -> Result<Self> {
        let mismatch = |what: &str| Error::InvalidConfig(format!("cached {what} tables do not match the constraints"));
        let ac = if lexicon.is_empty() {
            None
        } else {
            Some(AcAutomaton::build(lexicon)?)
        };
        match (&ac, &strings) {
            (None, None) => {}
            (Some(ac), Some(t)) if t.num_states() == ac.num_states() => {}
            _ => return Err(mismatch("string")),
        }
        match &regex {
            None if dfas.is_empty() => {}
            Some(r)
                if r.per_dfa.len() == dfas.len()
                    && r.per_dfa.iter().zip(dfas).all(|(t, d)| t.num_states() == d.num_states()) => {}
            _ => return Err(mismatch("regex")),
        }
        for got in [strings.as_ref().map(StringTables::vocab_size), regex.as_ref().map(RegexTables::vocab_size)]
            .into_iter()
            .flatten()
        {
            if got != vocab.len() {
                return Err(Error::VocabMismatch {
                    expected: got,
                    got: vocab.len(),
                });
            }
        }
        let global = regex.as_ref().map(GlobalMatrices::build);
        Ok(Self {
            vocab_size: vocab.len(),
            eos_id: vocab.eos_id(),
            lexicon: lexicon.to_vec(),
            ac,
            strings,
            dfas: dfas.to_vec(),
            regex,
            global,
            mask_path: MaskPath::Matmul,
            precompute_secs: 0.0,
        })
    }

    /// Compiles regex sources and builds in one go.
    pub fn from_sources(
        vocab: &Vocabulary,
        lexicon: &[Vec<u8>],
        regexes: &[String],
        opts: &BuildOptions,
    ) -> Result<Self> {
        let dfas = regexes
            .iter()
            .map(|p| crate::regex::compile_regex(p))
            .collect::<Result<Vec<_>>>()?;
        Self::build(vocab, lexicon, &dfas, opts)
    }

    pub fn with_mask_path(mut self, path: MaskPath) -> Self {
        self.mask_path = path;
        self
    }

    pub fn mask_path(&self) -> MaskPath {
        self.mask_path
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_none() && self.global.is_none()
    }

    pub fn lexicon(&self) -> &[Vec<u8>] {
        &self.lexicon
    }

    pub fn automaton(&self) -> Option<&AcAutomaton> {
        self.ac.as_ref()
    }

    pub fn dfas(&self) -> &[PartialDfa] {
        &self.dfas
    }

    pub fn string_tables(&self) -> Option<&StringTables> {
        self.strings.as_ref()
    }

    pub fn regex_tables(&self) -> Option<&RegexTables> {
        self.regex.as_ref()
    }

    pub fn global(&self) -> Option<&GlobalMatrices> {
        self.global.as_ref()
    }

    pub fn precompute_secs(&self) -> f64 {
        self.precompute_secs
    }

    pub fn table_bytes(&self) -> usize {
        self.strings.as_ref().map_or(0, StringTables::size_bytes)
            + self.regex.as_ref().map_or(0, RegexTables::size_bytes)
            + self.global.as_ref().map_or(0, GlobalMatrices::size_bytes)
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size {
            return Err(Error::VocabMismatch {
                expected: self.vocab_size,
                got: vocab.len(),
            });
        }
        Ok(())
    }

    /// Blocked tokens via the boolean product with the global matrix.
    pub fn blocked_matmul(&self, state: &SequenceState, out: &mut BitSet) {
        out.clear();
        if let (Some(t), Some(q)) = (&self.strings, state.trie_state) {
            out.union_with_words(t.block_matrix().row_words(q as usize));
        }
        if let (Some(g), Some(active)) = (&self.global, &state.active) {
            for r in active.ones() {
                out.union_with_words(g.block_mat.row_words(r));
            }
        }
    }

    /// Blocked tokens by checking each token against every active state of
    /// every automaton through the per-automaton tables.
    pub fn blocked_iterative(&self, state: &SequenceState, out: &mut BitSet) {
        out.clear();
        let per_dfa: Vec<(usize, Vec<u32>)> = match (&self.regex, &self.global, &state.active) {
            (Some(_), Some(g), Some(active)) => {
                let mut grouped: Vec<(usize, Vec<u32>)> = Vec::new();
                for r in active.ones() {
                    let (i, q) = g.local(r);
                    match grouped.last_mut() {
                        Some((j, qs)) if *j == i => qs.push(q),
                        _ => grouped.push((i, vec![q])),
                    }
                }
                grouped
            }
            _ => Vec::new(),
        };
        for w in 0..self.vocab_size as TokenId {
            let string_hit = match (&self.strings, state.trie_state) {
                (Some(t), Some(q)) => t.blocked(q, w),
                _ => false,
            };
            let regex_hit = || {
                let tables = self.regex.as_ref().expect("regex tables");
                per_dfa
                    .iter()
                    .any(|(i, qs)| qs.iter().any(|&q| tables.per_dfa[*i].blocked(q, w)))
            };
            if string_hit || (!per_dfa.is_empty() && regex_hit()) {
                out.insert(w as usize);
            }
        }
    }

    /// Blocked-token matrix `H = S·B` for a batch of states.
    pub fn blocked_batch(&self, states: &[SequenceState]) -> Vec<BitSet> {
        let mut h: Vec<BitSet> = states
            .iter()
            .map(|s| {
                let mut row = BitSet::new(self.vocab_size);
                if let (Some(t), Some(q)) = (&self.strings, s.trie_state) {
                    row.union_with_words(t.block_matrix().row_words(q as usize));
                }
                row
            })
            .collect();
        if let Some(g) = &self.global {
            let mut stacked = BitMatrix::new(states.len(), g.total_states());
            for (b, s) in states.iter().enumerate() {
                if let Some(active) = &s.active {
                    stacked.set_row(b, active);
                }
            }
            let mut row = BitSet::new(self.vocab_size);
            for (b, out) in h.iter_mut().enumerate() {
                g.block_mat.or_rows(&stacked.row(b), &mut row);
                out.union_with(&row);
            }
        }
        h
    }
}

impl Enforcer for CompiledConstraints {
    type State = SequenceState;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn init_state(&self) -> SequenceState {
        SequenceState {
            trie_state: self.strings.as_ref().map(StringTables::root),
            active: self.global.as_ref().map(|g| g.init_vec.clone()),
        }
    }

    fn blocked_tokens(&self, state: &SequenceState, out: &mut BitSet) {
        match self.mask_path {
            MaskPath::Matmul => self.blocked_matmul(state, out),
            MaskPath::Iterative => self.blocked_iterative(state, out),
        }
    }

    fn violates(&self, state: &SequenceState, w: TokenId) -> bool {
        if let (Some(t), Some(q)) = (&self.strings, state.trie_state) {
            if t.blocked(q, w) {
                return true;
            }
        }
        if let (Some(g), Some(active)) = (&self.global, &state.active) {
            return active.ones().any(|r| g.block_mat.get(r, w as usize));
        }
        false
    }

    fn advance(&self, state: &mut SequenceState, w: TokenId) {
        if w == self.eos_id {
            return;
        }
        if let (Some(t), Some(q)) = (&self.strings, state.trie_state.as_mut()) {
            *q = t.delta(*q, w);
        }
        if let (Some(g), Some(active)) = (&self.global, state.active.as_mut()) {
            let mut next = g.suffix_mat.row(w as usize);
            next.union_with(&g.init_vec);
            for r in active.ones() {
                let d = g.delta(r, w);
                if d != DEAD {
                    next.insert(d as usize);
                }
            }
            *active = next;
        }
    }
}

/// Byte-level online matcher that checks candidate tokens by scanning them
/// through the automata directly, without any token tables.
#[derive(Clone, Debug)]
pub struct ByteMatcher<'a> {
    vocab: &'a Vocabulary,
    ac: Option<&'a AcAutomaton>,
    dfas: &'a [PartialDfa],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ByteMatcherState {
    pub trie_state: u32,
    /// Per automaton: sorted states reached by suffixes of the output.
    pub active: Vec<Vec<u32>>,
}

impl<'a> ByteMatcher<'a> {
    pub fn new(vocab: &'a Vocabulary, constraints: &'a CompiledConstraints) -> Self {
        Self {
            vocab,
            ac: constraints.automaton(),
            dfas: constraints.dfas(),
        }
    }

    /// Feeds `bytes`; returns true if a forbidden match ends inside them.
    fn feed(&self, state: &mut ByteMatcherState, bytes: &[u8]) -> bool {
        let mut hit = false;
        let mut next = Vec::new();
        for &a in bytes {
            if let Some(ac) = self.ac {
                state.trie_state = ac.step(state.trie_state, a);
                hit |= ac.is_forbidden(state.trie_state);
            }
            for (dfa, active) in self.dfas.iter().zip(state.active.iter_mut()) {
                next.clear();
                next.push(dfa.start());
                for &q in active.iter() {
                    let t = dfa.step(q, a);
                    if t != DEAD {
                        hit |= dfa.is_accepting(t);
                        next.push(t);
                    }
                }
                next.sort_unstable();
                next.dedup();
                std::mem::swap(active, &mut next);
            }
        }
        hit
    }
}

impl Enforcer for ByteMatcher<'_> {
    type State = ByteMatcherState;

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn init_state(&self) -> ByteMatcherState {
        ByteMatcherState {
            trie_state: AcAutomaton::ROOT,
            active: self.dfas.iter().map(|d| vec![d.start()]).collect(),
        }
    }

    fn blocked_tokens(&self, state: &ByteMatcherState, out: &mut BitSet) {
        out.clear();
        for w in 0..self.vocab.len() as TokenId {
            if self.violates(state, w) {
                out.insert(w as usize);
            }
        }
    }

    fn violates(&self, state: &ByteMatcherState, w: TokenId) -> bool {
        let mut probe = state.clone();
        self.feed(&mut probe, self.vocab.token_bytes(w))
    }

    fn advance(&self, state: &mut ByteMatcherState, w: TokenId) {
        self.feed(state, self.vocab.token_bytes(w));
    }
}

/// Trie-without-failure-links matcher: each check walks a trie of reversed
/// patterns backward from every end position inside the candidate token.
#[derive(Clone, Debug)]
pub struct ReversedTrieMatcher<'a> {
    vocab: &'a Vocabulary,
    /// Trie over reversed patterns: sorted child lists and terminal flags.
    children: Vec<Vec<(u8, u32)>>,
    terminal: Vec<bool>,
    max_len: usize,
}

impl<'a> ReversedTrieMatcher<'a> {
    pub fn new(vocab: &'a Vocabulary, lexicon: &[Vec<u8>]) -> Result<Self> {
        let mut children: Vec<Vec<(u8, u32)>> = vec![Vec::new()];
        let mut terminal = vec![false];
        let mut max_len = 0;
        for p in lexicon {
            if p.is_empty() {
                return Err(Error::EmptyPattern);
            }
            max_len = max_len.max(p.len());
            let mut node = 0usize;
            for &a in p.iter().rev() {
                let pos = children[node].binary_search_by_key(&a, |&(b, _)| b);
                node = match pos {
                    Ok(i) => children[node][i].1 as usize,
                    Err(i) => {
                        let id = children.len();
                        children.push(Vec::new());
                        terminal.push(false);
                        children[node].insert(i, (a, id as u32));
                        id
                    }
                };
            }
            terminal[node] = true;
        }
        Ok(Self {
            vocab,
            children,
            terminal,
            max_len,
        })
    }

    /// True if some pattern ends exactly at the end of `text`.
    fn ends_with_pattern(&self, text: &[u8]) -> bool {
        let mut node = 0usize;
        for &a in text.iter().rev() {
            match self.children[node].binary_search_by_key(&a, |&(b, _)| b) {
                Ok(i) => node = self.children[node][i].1 as usize,
                Err(_) => return false,
            }
            if self.terminal[node] {
                return true;
            }
        }
        false
    }
}

impl Enforcer for ReversedTrieMatcher<'_> {
    /// The last `max_len - 1` emitted bytes.
    type State = Vec<u8>;

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn init_state(&self) -> Vec<u8> {
        Vec::new()
    }

    fn blocked_tokens(&self, state: &Vec<u8>, out: &mut BitSet) {
        out.clear();
        for w in 0..self.vocab.len() as TokenId {
            if self.violates(state, w) {
                out.insert(w as usize);
            }
        }
    }

    fn violates(&self, state: &Vec<u8>, w: TokenId) -> bool {
        let bytes = self.vocab.token_bytes(w);
        if bytes.is_empty() || self.max_len == 0 {
            return false;
        }
        let mut window = state.clone();
        window.extend_from_slice(bytes);
        let base = state.len();
        (1..=bytes.len()).any(|end| self.ends_with_pattern(&window[..base + end]))
    }

    fn advance(&self, state: &mut Vec<u8>, w: TokenId) {
        state.extend_from_slice(self.vocab.token_bytes(w));
        let keep = self.max_len.saturating_sub(1);
        if state.len() > keep {
            state.drain(..state.len() - keep);
        }
    }
}
