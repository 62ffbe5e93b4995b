//! Decoding-time enforcement of negative substring constraints.
//!
//! A forbidden lexicon is compiled into an Aho-Corasick automaton and a set of
//! forbidden regexes into partial DFAs. Token-level transition and blocking
//! tables are precomputed over a BPE vocabulary (composing merged tokens from
//! their children), so each decoding step needs only a table lookup per
//! constraint state and an OR of precomputed mask rows.

pub mod ac;
pub mod bench;
pub mod bits;
pub mod cli;
pub mod decoder;
pub mod error;
pub mod files;
pub mod mask;
pub mod regex;
pub mod scorer;
pub mod tables;
pub mod validator;
pub mod vocab;

pub use ac::AcAutomaton;
pub use bits::{BitMatrix, BitSet};
pub use error::{Error, Result};
pub use regex::{compile_regex, PartialDfa, DEAD};
pub use vocab::{train_toy_bpe, TokenId, Vocabulary, EOS_ID};
pub use mask::{
    apply_mask, BuildOptions, ByteMatcher, CompiledConstraints, Enforcer, MaskMode, MaskPath,
    ReversedTrieMatcher, SequenceState,
};
pub use tables::{
    precompute_regex_bpe, precompute_regex_naive, precompute_string_bpe, precompute_string_naive,
    GlobalMatrices, PrecomputeOptions, RegexTables, StringTables,
};
pub use decoder::{
    generate, generate_batch, generate_beam, generate_rejection, DecodeConfig, DecodeRule,
    Generation, GenerationReport, Hypothesis, Method,
};
pub use scorer::{AdversarialScorer, NgramOptions, NgramScorer, Scorer, StaticScorer, UniformScorer};
pub use validator::{scan, scan_regex, scan_strings, violation_rate, RunMetrics, ViolationReport};
