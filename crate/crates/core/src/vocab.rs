//! Byte-level BPE vocabulary with an explicit merge order.
//!
//! Ids `0..=255` are the single-byte tokens, id `256` is EOS, and every id
//! from `257` upward is the output of exactly one merge, in merge order. A
//! vocabulary may additionally carry *added* tokens that sit outside the merge
//! tree; precomputation scans those directly like the byte tokens.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Number of single-byte base tokens.
pub const BYTE_TOKENS: usize = 256;
/// Id of the end-of-sequence control token.
pub const EOS_ID: TokenId = 256;
/// Id of the first merged token.
pub const FIRST_MERGED_ID: TokenId = 257;

const FILE_HEADER: &str = "negdec-vocab v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Merge {
    pub left: TokenId,
    pub right: TokenId,
    pub merged: TokenId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    merges: Vec<Merge>,
    /// `children[w]` is `Some((u, v))` when `w` is produced by merging `u·v`.
    children: Vec<Option<(TokenId, TokenId)>>,
    ranks: HashMap<(TokenId, TokenId), usize>,
}

impl Vocabulary {
    /// The 257-token vocabulary with no merges.
    pub fn byte_level() -> Self {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.push(Vec::new());
        let n = tokens.len();
        Self {
            tokens,
            merges: Vec::new(),
            children: vec![None; n],
            ranks: HashMap::new(),
        }
    }

    /// Builds a vocabulary from `(left, right)` pairs; merged ids are assigned
    /// sequentially starting at [`FIRST_MERGED_ID`].
    pub fn from_merges(pairs: impl IntoIterator<Item = (TokenId, TokenId)>) -> Result<Self> {
        let mut vocab = Self::byte_level();
        for (left, right) in pairs {
            vocab.push_merge(left, right)?;
        }
        Ok(vocab)
    }

    /// Appends a merge `left·right` and returns the new token id.
    pub fn push_merge(&mut self, left: TokenId, right: TokenId) -> Result<TokenId> {
        let index = self.merges.len();
        let merged = self.tokens.len() as TokenId;
        if merged as usize != FIRST_MERGED_ID as usize + index {
            return Err(Error::InvalidMerge {
                index,
                reason: "merges must precede added tokens".into(),
            });
        }
        for side in [left, right] {
            if side == EOS_ID {
                return Err(Error::InvalidMerge {
                    index,
                    reason: "EOS cannot be merged".into(),
                });
            }
            if side >= merged {
                return Err(Error::InvalidMerge {
                    index,
                    reason: format!("operand {side} is not defined before token {merged}"),
                });
            }
        }
        let mut bytes = self.tokens[left as usize].clone();
        bytes.extend_from_slice(&self.tokens[right as usize]);
        self.tokens.push(bytes);
        self.children.push(Some((left, right)));
        self.ranks.entry((left, right)).or_insert(index);
        self.merges.push(Merge {
            left,
            right,
            merged,
        });
        Ok(merged)
    }

    /// Appends a token that is not produced by any merge (e.g. a special token
    /// imported from another tokenizer). Encoding never emits added tokens.
    pub fn push_added_token(&mut self, bytes: Vec<u8>) -> Result<TokenId> {
        if bytes.is_empty() {
            return Err(Error::InvalidMerge {
                index: self.merges.len(),
                reason: "added token must be non-empty".into(),
            });
        }
        self.tokens.push(bytes);
        self.children.push(None);
        Ok((self.tokens.len() - 1) as TokenId)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    #[inline]
    pub fn eos_id(&self) -> TokenId {
        EOS_ID
    }

    /// Byte content of token `id`; EOS has none.
    #[inline]
    pub fn token_bytes(&self, id: TokenId) -> &[u8] {
        &self.tokens[id as usize]
    }

    pub fn get(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    #[inline]
    pub fn children(&self, id: TokenId) -> Option<(TokenId, TokenId)> {
        self.children[id as usize]
    }

    pub fn is_base(&self, id: TokenId) -> bool {
        self.children[id as usize].is_none()
    }

    /// Token ids not produced by a merge: bytes, EOS and any added tokens.
    pub fn base_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.len() as TokenId).filter(|&id| self.is_base(id))
    }

    /// Looks up the id of a token by its exact byte content.
    pub fn find(&self, bytes: &[u8]) -> Option<TokenId> {
        if bytes.is_empty() {
            return None;
        }
        self.tokens
            .iter()
            .position(|t| t == bytes)
            .map(|i| i as TokenId)
    }

    pub fn mean_token_len(&self) -> f64 {
        let (sum, n) = self
            .tokens
            .iter()
            .filter(|t| !t.is_empty())
            .fold((0usize, 0usize), |(s, n), t| (s + t.len(), n + 1));
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }

    /// Tokenizes `text` by applying merges in merge order until none applies.
    pub fn encode(&self, text: &[u8]) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = text.iter().map(|&b| b as TokenId).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&r| (r, (p[0], p[1]))))
                .min();
            let Some((rank, pair)) = best else {
                break;
            };
            let merged = self.merges[rank].merged;
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            ids = out;
        }
        ids
    }

    /// Concatenates token contents. EOS contributes no bytes.
    pub fn decode_ids(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.get(id).ok_or(Error::InvalidTokenId(id))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Serializes the merge list. Added tokens are not representable.
    pub fn to_file_string(&self) -> String {
        let mut s = String::from(FILE_HEADER);
        s.push('\n');
        for m in &self.merges {
            let _ = writeln!(s, "{} {}", m.left, m.right);
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end() == FILE_HEADER => {}
            _ => {
                return Err(Error::VocabFormat {
                    line: 1,
                    reason: format!("expected header `{FILE_HEADER}`"),
                })
            }
        }
        let mut vocab = Self::byte_level();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::VocabFormat { line: i + 1, reason };
            let mut parts = line.split_ascii_whitespace();
            let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `<left_id> <right_id>`".into()));
            };
            let l: TokenId = l.parse().map_err(|e| bad(format!("{e}")))?;
            let r: TokenId = r.parse().map_err(|e| bad(format!("{e}")))?;
            vocab.push_merge(l, r).map_err(|e| bad(e.to_string()))?;
        }
        Ok(vocab)
    }
}

/// Learns `target_size - 257` merges greedily from `corpus`.
///
/// Each round merges the most frequent adjacent pair (non-overlapping, left to
/// right); ties go to the lowest `(left, right)` pair. Training stops early if
/// the corpus collapses to a single token.
pub fn train_toy_bpe(corpus: &[u8], target_size: usize) -> Result<Vocabulary> {
    let min = BYTE_TOKENS + 1;
    if target_size < min {
        return Err(Error::VocabTooSmall {
            min,
            got: target_size,
        });
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut vocab = Vocabulary::byte_level();
    let mut ids: Vec<TokenId> = corpus.iter().map(|&b| b as TokenId).collect();
    let mut counts: HashMap<(TokenId, TokenId), usize> = HashMap::new();
    while vocab.len() < target_size {
        counts.clear();
        for p in ids.windows(2) {
            *counts.entry((p[0], p[1])).or_default() += 1;
        }
        let Some((&pair, _)) = counts
            .iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            break;
        };
        let merged = vocab.push_merge(pair.0, pair.1)?;
        let mut out = Vec::with_capacity(ids.len());
        let mut i = 0;
        while i < ids.len() {
            if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                out.push(merged);
                i += 2;
            } else {
                out.push(ids[i]);
                i += 1;
            }
        }
        ids = out;
    }
    Ok(vocab)
}
