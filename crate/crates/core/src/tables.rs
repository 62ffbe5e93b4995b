//! Token-level transition tables, blocking masks and suffix-reachable sets.
//!
//! Every table comes in two constructions: a naive one that scans each
//! token's bytes from each constraint state, and a BPE one that scans only
//! base tokens and fills each merged token `w = u·v` from its children:
//!
//! ```text
//! Δ[q,w] = Δ[Δ[q,u], v]            (⊥ if Δ[q,u] = ⊥)
//! B[q,w] = B[q,u] ∨ B[Δ[q,u], v]    (B[q,u] if Δ[q,u] = ⊥)
//! R[w]   = R[v] ∪ { Δ[q,v] : q ∈ R[u], Δ[q,v] ≠ ⊥ }
//! ```
//!
//! Both must agree bit for bit. Transitions are stored token-major
//! (`delta[w * states + q]`) so composing one merge touches three contiguous
//! columns; blocking masks are stored state-major so that a decoding step ORs
//! whole rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ac::AcAutomaton;
use crate::bits::{BitMatrix, BitSet};
use crate::error::{Error, Result};
use crate::regex::{PartialDfa, DEAD};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Clone, Debug)]
pub struct PrecomputeOptions {
    /// Refuse to build any single table with more than this many cells.
    pub max_cells: usize,
    /// Build rows (naive) or automata (regex) on the rayon pool.
    pub parallel: bool,
    /// Compose suffix-reachable sets through merges. When false, each merged
    /// token's suffix set is computed by scanning its suffixes directly.
    pub compose_suffixes: bool,
}

impl Default for PrecomputeOptions {
    fn default() -> Self {
        Self {
            max_cells: 1 << 31,
            parallel: false,
            compose_suffixes: true,
        }
    }
}

fn check_cells(constraint: impl FnOnce() -> String, states: usize, tokens: usize, limit: usize) -> Result<()> {
    let cells = states.saturating_mul(tokens);
    if cells > limit {
        return Err(Error::TableTooLarge {
            constraint: constraint(),
            states,
            tokens,
            cells,
            limit,
        });
    }
    Ok(())
}

/// Transposes token-major mask columns into a state-major matrix.
fn columns_to_rows(columns: &[BitSet], states: usize) -> BitMatrix {
    let mut m = BitMatrix::new(states, columns.len());
    for (w, col) in columns.iter().enumerate() {
        for q in col.ones() {
            m.set(q, w, true);
        }
    }
    m
}

fn maybe_par_map<T: Send>(parallel: bool, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

// ---------------------------------------------------------------------------
// Finite lexicon

/// Transition and blocking tables for the Aho-Corasick automaton.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringTables {
    num_states: usize,
    vocab_size: usize,
    /// Token-major: `delta[w * num_states + q]`.
    delta: Vec<u32>,
    /// `block[q][w]`.
    block: BitMatrix,
}

impl StringTables {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn root(&self) -> u32 {
        AcAutomaton::ROOT
    }

    #[inline]
    pub fn delta(&self, q: u32, w: TokenId) -> u32 {
        self.delta[w as usize * self.num_states + q as usize]
    }

    #[inline]
    pub fn blocked(&self, q: u32, w: TokenId) -> bool {
        self.block.get(q as usize, w as usize)
    }

    pub fn block_matrix(&self) -> &BitMatrix {
        &self.block
    }

    pub fn size_bytes(&self) -> usize {
        self.delta.len() * 4 + self.block.size_bytes()
    }
}

/// Scans `bytes` from `q`; returns the final state and whether any visited
/// state is forbidden.
#[inline]
fn scan_ac(ac: &AcAutomaton, q: u32, bytes: &[u8]) -> (u32, bool) {
    ac.run_from(q, bytes)
}

/// Every `(q, w)` entry by byte-by-byte simulation.
pub fn precompute_string_naive(
    ac: &AcAutomaton,
    vocab: &Vocabulary,
    opts: &PrecomputeOptions,
) -> Result<StringTables> {
    let n = ac.num_states();
    let v = vocab.len();
    check_cells(|| "forbidden lexicon".into(), n, v, opts.max_cells)?;
    let eos = vocab.eos_id();
    let columns: Vec<(Vec<u32>, BitSet)> = maybe_par_map(opts.parallel, v, |w| {
        let mut delta = Vec::with_capacity(n);
        let mut block = BitSet::new(n);
        for q in 0..n as u32 {
            if w as TokenId == eos {
                delta.push(q);
                continue;
            }
            let (to, hit) = scan_ac(ac, q, vocab.token_bytes(w as TokenId));
            delta.push(to);
            if hit {
                block.insert(q as usize);
            }
        }
        (delta, block)
    });
    let mut delta = Vec::with_capacity(n * v);
    let mut block_cols = Vec::with_capacity(v);
    for (d, b) in columns {
        delta.extend_from_slice(&d);
        block_cols.push(b);
    }
    Ok(StringTables {
        num_states: n,
        vocab_size: v,
        delta,
        block: columns_to_rows(&block_cols, n),
    })
}

/// Scans base tokens, then composes each merged token from its children.
pub fn precompute_string_bpe(
    ac: &AcAutomaton,
    vocab: &Vocabulary,
    opts: &PrecomputeOptions,
) -> Result<StringTables> {
    let n = ac.num_states();
    let v = vocab.len();
    check_cells(|| "forbidden lexicon".into(), n, v, opts.max_cells)?;
    let eos = vocab.eos_id();
    let mut delta = vec![0u32; n * v];
    let mut block_cols = vec![BitSet::new(n); v];

    for w in vocab.base_ids() {
        let col = &mut delta[w as usize * n..(w as usize + 1) * n];
        if w == eos {
            for (q, d) in col.iter_mut().enumerate() {
                *d = q as u32;
            }
            continue;
        }
        let bytes = vocab.token_bytes(w);
        for (q, d) in col.iter_mut().enumerate() {
            let (to, hit) = scan_ac(ac, q as u32, bytes);
            *d = to;
            if hit {
                block_cols[w as usize].insert(q);
            }
        }
    }

    for m in vocab.merges() {
        let (u, vv, w) = (m.left as usize, m.right as usize, m.merged as usize);
        let mut col_w = BitSet::new(n);
        for q in 0..n {
            let mid = delta[u * n + q] as usize;
            delta[w * n + q] = delta[vv * n + mid];
            if block_cols[u].get(q) || block_cols[vv].get(mid) {
                col_w.insert(q);
            }
        }
        block_cols[w] = col_w;
    }

    Ok(StringTables {
        num_states: n,
        vocab_size: v,
        delta,
        block: columns_to_rows(&block_cols, n),
    })
}

// ---------------------------------------------------------------------------
// Regex constraints

/// Tables for one partial DFA.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfaTables {
    num_states: usize,
    start: u32,
    /// Token-major: `delta[w * num_states + q]`, [`DEAD`] for ⊥.
    delta: Vec<u32>,
    /// `block[q][w]`.
    block: BitMatrix,
    /// `suffix[w]`: sorted states reached from start by a non-empty suffix of `w`.
    suffix: Vec<Vec<u32>>,
}

impl DfaTables {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    #[inline]
    pub fn delta(&self, q: u32, w: TokenId) -> u32 {
        self.delta[w as usize * self.num_states + q as usize]
    }

    #[inline]
    pub fn blocked(&self, q: u32, w: TokenId) -> bool {
        self.block.get(q as usize, w as usize)
    }

    pub fn suffix_states(&self, w: TokenId) -> &[u32] {
        &self.suffix[w as usize]
    }

    pub fn block_matrix(&self) -> &BitMatrix {
        &self.block
    }

    pub fn size_bytes(&self) -> usize {
        self.delta.len() * 4
            + self.block.size_bytes()
            + self.suffix.iter().map(|s| s.len() * 4).sum::<usize>()
    }
}

/// Tables for every regex constraint, kept per automaton.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegexTables {
    pub per_dfa: Vec<DfaTables>,
    vocab_size: usize,
}

impl RegexTables {
    /// `M`: the total number of states across automata.
    pub fn total_states(&self) -> usize {
        self.per_dfa.iter().map(DfaTables::num_states).sum()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn size_bytes(&self) -> usize {
        self.per_dfa.iter().map(DfaTables::size_bytes).sum()
    }
}

/// Runs `bytes` from `q`; returns the state (⊥ on death) and whether an
/// accepting state was visited, counting `q` itself.
#[inline]
fn scan_dfa(dfa: &PartialDfa, mut q: u32, bytes: &[u8]) -> (u32, bool) {
    let mut hit = dfa.is_accepting(q);
    for &a in bytes {
        q = dfa.step(q, a);
        if q == DEAD {
            break;
        }
        hit |= dfa.is_accepting(q);
    }
    (q, hit)
}

/// Suffix-reachable states of `bytes` and whether any suffix run accepts.
fn scan_suffixes(dfa: &PartialDfa, bytes: &[u8]) -> (Vec<u32>, bool) {
    let mut states = Vec::new();
    let mut accepted = false;
    for i in 0..bytes.len() {
        let (q, hit) = scan_dfa(dfa, dfa.start(), &bytes[i..]);
        accepted |= hit;
        if q != DEAD {
            states.push(q);
        }
    }
    states.sort_unstable();
    states.dedup();
    (states, accepted)
}

fn regex_label(i: usize, dfa: &PartialDfa) -> String {
    format!("regex #{i} `{}`", dfa.pattern())
}

fn naive_dfa_tables(dfa: &PartialDfa, vocab: &Vocabulary) -> DfaTables {
    let n = dfa.num_states();
    let v = vocab.len();
    let eos = vocab.eos_id();
    let mut delta = Vec::with_capacity(n * v);
    let mut block_cols = Vec::with_capacity(v);
    let mut suffix = Vec::with_capacity(v);
    for w in 0..v as TokenId {
        let mut col = BitSet::new(n);
        if w == eos {
            delta.extend(0..n as u32);
            block_cols.push(col);
            suffix.push(Vec::new());
            continue;
        }
        let bytes = vocab.token_bytes(w);
        for q in 0..n as u32 {
            let (to, hit) = scan_dfa(dfa, q, bytes);
            delta.push(to);
            if hit {
                col.insert(q as usize);
            }
        }
        let (states, accepted) = scan_suffixes(dfa, bytes);
        if accepted {
            col = BitSet::from_indices(n, 0..n);
        }
        block_cols.push(col);
        suffix.push(states);
    }
    DfaTables {
        num_states: n,
        start: dfa.start(),
        delta,
        block: columns_to_rows(&block_cols, n),
        suffix,
    }
}

fn bpe_dfa_tables(dfa: &PartialDfa, vocab: &Vocabulary, compose_suffixes: bool) -> DfaTables {
    let n = dfa.num_states();
    let v = vocab.len();
    let eos = vocab.eos_id();
    let start = dfa.start() as usize;
    let all = BitSet::from_indices(n, 0..n);
    let mut delta = vec![DEAD; n * v];
    let mut block_cols = vec![BitSet::new(n); v];
    let mut suffix: Vec<Vec<u32>> = vec![Vec::new(); v];

    for w in vocab.base_ids() {
        let wi = w as usize;
        if w == eos {
            for q in 0..n {
                delta[wi * n + q] = q as u32;
            }
            continue;
        }
        let bytes = vocab.token_bytes(w);
        for q in 0..n {
            let (to, hit) = scan_dfa(dfa, q as u32, bytes);
            delta[wi * n + q] = to;
            if hit {
                block_cols[wi].insert(q);
            }
        }
        let (states, accepted) = scan_suffixes(dfa, bytes);
        if accepted {
            block_cols[wi] = all.clone();
        }
        suffix[wi] = states;
    }

    let mut seen = vec![false; n];
    for m in vocab.merges() {
        let (u, vv, w) = (m.left as usize, m.right as usize, m.merged as usize);
        let mut col_w = BitSet::new(n);
        for q in 0..n {
            let mid = delta[u * n + q];
            if mid == DEAD {
                if block_cols[u].get(q) {
                    col_w.insert(q);
                }
                continue;
            }
            let mid = mid as usize;
            delta[w * n + q] = delta[vv * n + mid];
            if block_cols[u].get(q) || block_cols[vv].get(mid) {
                col_w.insert(q);
            }
        }

        let lift = if compose_suffixes {
            let mut states = suffix[vv].clone();
            for &s in &states {
                seen[s as usize] = true;
            }
            let mut lift = block_cols[vv].get(start);
            for &q in &suffix[u] {
                lift |= block_cols[vv].get(q as usize);
                let t = delta[vv * n + q as usize];
                if t != DEAD && !seen[t as usize] {
                    seen[t as usize] = true;
                    states.push(t);
                }
            }
            for &s in &states {
                seen[s as usize] = false;
            }
            states.sort_unstable();
            suffix[w] = states;
            lift
        } else {
            let (states, accepted) = scan_suffixes(dfa, vocab.token_bytes(w as TokenId));
            suffix[w] = states;
            accepted
        };
        block_cols[w] = if lift { all.clone() } else { col_w };
    }

    DfaTables {
        num_states: n,
        start: dfa.start(),
        delta,
        block: columns_to_rows(&block_cols, n),
        suffix,
    }
}

fn check_regex_cells(dfas: &[PartialDfa], vocab: &Vocabulary, opts: &PrecomputeOptions) -> Result<()> {
    for (i, dfa) in dfas.iter().enumerate() {
        check_cells(|| regex_label(i, dfa), dfa.num_states(), vocab.len(), opts.max_cells)?;
    }
    Ok(())
}

pub fn precompute_regex_naive(
    dfas: &[PartialDfa],
    vocab: &Vocabulary,
    opts: &PrecomputeOptions,
) -> Result<RegexTables> {
    check_regex_cells(dfas, vocab, opts)?;
    let per_dfa = maybe_par_map(opts.parallel, dfas.len(), |i| naive_dfa_tables(&dfas[i], vocab));
    Ok(RegexTables {
        per_dfa,
        vocab_size: vocab.len(),
    })
}

pub fn precompute_regex_bpe(
    dfas: &[PartialDfa],
    vocab: &Vocabulary,
    opts: &PrecomputeOptions,
) -> Result<RegexTables> {
    check_regex_cells(dfas, vocab, opts)?;
    let compose = opts.compose_suffixes;
    let per_dfa = maybe_par_map(opts.parallel, dfas.len(), |i| {
        bpe_dfa_tables(&dfas[i], vocab, compose)
    });
    Ok(RegexTables {
        per_dfa,
        vocab_size: vocab.len(),
    })
}

// ---------------------------------------------------------------------------
// Concatenated global matrices

/// All regex tables over the disjoint union of state spaces.
///
/// Global state `offsets[i] + q` is state `q` of automaton `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalMatrices {
    offsets: Vec<usize>,
    total_states: usize,
    vocab_size: usize,
    /// `block_mat[g][w]`.
    pub block_mat: BitMatrix,
    /// `suffix_mat[w][g]`.
    pub suffix_mat: BitMatrix,
    /// Token-major: `delta_global[w * M + g]`, global id or [`DEAD`].
    delta_global: Vec<u32>,
    pub init_vec: BitSet,
}

impl GlobalMatrices {
    pub fn build(tables: &RegexTables) -> Self {
        let mut offsets = Vec::with_capacity(tables.per_dfa.len());
        let mut total = 0;
        for t in &tables.per_dfa {
            offsets.push(total);
            total += t.num_states();
        }
        let v = tables.vocab_size;
        let mut block_mat = BitMatrix::new(total, v);
        let mut suffix_mat = BitMatrix::new(v, total);
        let mut delta_global = vec![DEAD; total * v];
        let mut init_vec = BitSet::new(total);
        for (t, &off) in tables.per_dfa.iter().zip(&offsets) {
            init_vec.insert(off + t.start() as usize);
            for q in 0..t.num_states() {
                block_mat.set_row(off + q, &t.block.row(q));
            }
            for w in 0..v {
                let col = &t.delta[w * t.num_states()..(w + 1) * t.num_states()];
                for (q, &d) in col.iter().enumerate() {
                    if d != DEAD {
                        delta_global[w * total + off + q] = off as u32 + d;
                    }
                }
                for &s in &t.suffix[w] {
                    suffix_mat.set(w, off + s as usize, true);
                }
            }
        }
        Self {
            offsets,
            total_states: total,
            vocab_size: v,
            block_mat,
            suffix_mat,
            delta_global,
            init_vec,
        }
    }

    pub fn total_states(&self) -> usize {
        self.total_states
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_automata(&self) -> usize {
        self.offsets.len()
    }

    pub fn offset(&self, automaton: usize) -> usize {
        self.offsets[automaton]
    }

    /// Maps a global state back to `(automaton, local state)`.
    pub fn local(&self, g: usize) -> (usize, u32) {
        let i = self.offsets.partition_point(|&o| o <= g) - 1;
        (i, (g - self.offsets[i]) as u32)
    }

    #[inline]
    pub fn delta(&self, g: usize, w: TokenId) -> u32 {
        self.delta_global[w as usize * self.total_states + g]
    }

    pub fn size_bytes(&self) -> usize {
        self.delta_global.len() * 4
            + self.block_mat.size_bytes()
            + self.suffix_mat.size_bytes()
    }
}
