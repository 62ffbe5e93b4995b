//! Post-hoc violation scanning and run metrics.
//!
//! Scans here are brute force on purpose and share no code with the trie or
//! the token tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regex::{PartialDfa, DEAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintRef {
    String(usize),
    Regex(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub constraint: ConstraintRef,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub matches: Vec<Match>,
}

impl ViolationReport {
    pub fn violated(&self) -> bool {
        !self.matches.is_empty()
    }

    pub fn merge(mut self, other: ViolationReport) -> Self {
        self.matches.extend(other.matches);
        self
    }
}

/// Every occurrence of every pattern, by windowed comparison.
pub fn scan_strings(text: &[u8], patterns: &[Vec<u8>]) -> ViolationReport {
    let mut matches = Vec::new();
    for (id, p) in patterns.iter().enumerate() {
        if p.is_empty() || p.len() > text.len() {
            continue;
        }
        for offset in 0..=text.len() - p.len() {
            if &text[offset..offset + p.len()] == p.as_slice() {
                matches.push(Match {
                    constraint: ConstraintRef::String(id),
                    offset,
                    len: p.len(),
                });
            }
        }
    }
    ViolationReport { matches }
}

/// For each automaton and start offset, the shortest accepted substring.
pub fn scan_regex(text: &[u8], dfas: &[PartialDfa]) -> ViolationReport {
    let mut matches = Vec::new();
    for (id, dfa) in dfas.iter().enumerate() {
        for offset in 0..text.len() {
            let mut q = dfa.start();
            for (i, &a) in text[offset..].iter().enumerate() {
                q = dfa.step(q, a);
                if q == DEAD {
                    break;
                }
                if dfa.is_accepting(q) {
                    matches.push(Match {
                        constraint: ConstraintRef::Regex(id),
                        offset,
                        len: i + 1,
                    });
                    break;
                }
            }
        }
    }
    ViolationReport { matches }
}

pub fn scan(text: &[u8], patterns: &[Vec<u8>], dfas: &[PartialDfa]) -> ViolationReport {
    scan_strings(text, patterns).merge(scan_regex(text, dfas))
}

/// Percentage of violated reports.
pub fn violation_rate(reports: &[ViolationReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::NoResponses);
    }
    let nv = reports.iter().filter(|r| r.violated()).count();
    Ok(100.0 * nv as f64 / reports.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub responses: usize,
    pub violated: usize,
    pub tokens: usize,
    pub elapsed_s: f64,
    pub rejections: u64,
}

impl RunMetrics {
    pub fn violation_rate(&self) -> Result<f64> {
        if self.responses == 0 {
            return Err(Error::NoResponses);
        }
        Ok(100.0 * self.violated as f64 / self.responses as f64)
    }

    /// Tokens per second.
    pub fn throughput(&self) -> f64 {
        if self.elapsed_s > 0.0 {
            self.tokens as f64 / self.elapsed_s
        } else {
            0.0
        }
    }
}
