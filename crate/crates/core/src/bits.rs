//! Packed bit vectors and row-major bit matrices.
//!
//! Token masks, active-state vectors and the blocking matrices are all stored
//! here as `u64` words so that mask aggregation is a word-wise OR of rows.

use std::fmt;

use serde::{Deserialize, Serialize};

const WORD: usize = 64;

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD)
}

/// A fixed-length packed bit vector.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BitSet {
    len: usize,
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut set = Self::new(len);
        for i in indices {
            set.insert(i);
        }
        set
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / WORD] |= 1 << (i % WORD);
    }

    #[inline]
    pub fn remove(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / WORD] &= !(1 << (i % WORD));
    }

    pub fn set(&mut self, i: usize, value: bool) {
        if value {
            self.insert(i)
        } else {
            self.remove(i)
        }
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }

    /// `self |= other`. Both sets must have the same length.
    #[inline]
    pub fn union_with(&mut self, other: &BitSet) {
        debug_assert_eq!(self.len, other.len);
        or_words(&mut self.words, &other.words);
    }

    #[inline]
    pub(crate) fn union_with_words(&mut self, words: &[u64]) {
        or_words(&mut self.words, words);
    }

    pub fn is_subset(&self, other: &BitSet) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    pub fn ones(&self) -> Ones<'_> {
        Ones {
            words: &self.words,
            index: 0,
            current: self.words.first().copied().unwrap_or(0),
        }
    }

    pub fn as_words(&self) -> &[u64] {
        &self.words
    }
}

#[inline]
fn or_words(dst: &mut [u64], src: &[u64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d |= *s;
    }
}

impl fmt::Debug for BitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.ones()).finish()
    }
}

/// Iterator over the set bits of a [`BitSet`] or a matrix row, ascending.
pub struct Ones<'a> {
    words: &'a [u64],
    index: usize,
    current: u64,
}

impl Iterator for Ones<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some(self.index * WORD + bit);
            }
            self.index += 1;
            if self.index >= self.words.len() {
                return None;
            }
            self.current = self.words[self.index];
        }
    }
}

/// Row-major packed bit matrix.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            words: vec![0; rows * stride],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.rows && col < self.cols);
        self.words[row * self.stride + col / WORD] >> (col % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.rows && col < self.cols);
        let word = &mut self.words[row * self.stride + col / WORD];
        if value {
            *word |= 1 << (col % WORD);
        } else {
            *word &= !(1 << (col % WORD));
        }
    }

    #[inline]
    pub fn row_words(&self, row: usize) -> &[u64] {
        &self.words[row * self.stride..(row + 1) * self.stride]
    }

    pub fn row(&self, row: usize) -> BitSet {
        BitSet {
            len: self.cols,
            words: self.row_words(row).to_vec(),
        }
    }

    pub fn row_ones(&self, row: usize) -> Ones<'_> {
        let words = self.row_words(row);
        Ones {
            words,
            index: 0,
            current: words.first().copied().unwrap_or(0),
        }
    }

    /// Copies `src` into row `row` of this matrix.
    pub fn set_row(&mut self, row: usize, src: &BitSet) {
        debug_assert_eq!(src.len(), self.cols);
        let stride = self.stride;
        self.words[row * stride..(row + 1) * stride].copy_from_slice(&src.words);
    }

    /// Sets every entry of column `col` to `value`.
    pub fn fill_col(&mut self, col: usize, value: bool) {
        for r in 0..self.rows {
            self.set(r, col, value);
        }
    }

    /// Sets every entry of row `row`.
    pub fn fill_row(&mut self, row: usize) {
        let stride = self.stride;
        let tail = self.cols % WORD;
        let words = &mut self.words[row * stride..(row + 1) * stride];
        words.iter_mut().for_each(|w| *w = u64::MAX);
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last = (1u64 << tail) - 1;
            }
        }
    }

    /// Boolean vector-matrix product `vᵀ·M`: the OR of every row selected by `v`.
    pub fn or_rows(&self, selector: &BitSet, out: &mut BitSet) {
        debug_assert_eq!(selector.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.clear();
        for r in selector.ones() {
            out.union_with_words(self.row_words(r));
        }
    }

    pub fn size_bytes(&self) -> usize {
        self.words.len() * std::mem::size_of::<u64>()
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BitMatrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}
