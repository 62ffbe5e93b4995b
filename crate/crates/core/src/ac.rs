//! Aho-Corasick automaton over a forbidden lexicon.
//!
//! A state stands for the longest suffix of the scanned text that is also a
//! prefix of some pattern. A state is *forbidden* when some pattern is a
//! suffix of its string; marks are propagated along failure links so that a
//! single flag test per byte detects every occurrence.

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub type StateId = u32;

#[derive(Clone, Debug)]
pub struct AcAutomaton {
    /// Sorted sparse child lists.
    goto: Vec<Vec<(u8, StateId)>>,
    fail: Vec<StateId>,
    forbidden: Vec<bool>,
    parent: Vec<(StateId, u8)>,
    depth: Vec<u32>,
    total_len: usize,
}

impl AcAutomaton {
    pub const ROOT: StateId = 0;

    /// Builds the trie, failure links and propagated forbidden marks.
    pub fn build<I, P>(patterns: I) -> Result<Self>
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[u8]>,
    {
        let mut ac = Self {
            goto: vec![Vec::new()],
            fail: vec![Self::ROOT],
            forbidden: vec![false],
            parent: vec![(Self::ROOT, 0)],
            depth: vec![0],
            total_len: 0,
        };
        for p in patterns {
            let p = p.as_ref();
            if p.is_empty() {
                return Err(Error::EmptyPattern);
            }
            ac.total_len += p.len();
            let mut q = Self::ROOT;
            for &a in p {
                q = match ac.child(q, a) {
                    Some(next) => next,
                    None => ac.add_child(q, a),
                };
            }
            ac.forbidden[q as usize] = true;
        }

        // Breadth-first so fail(q) is final before q's children are visited.
        let mut queue: VecDeque<StateId> = ac.goto[0].iter().map(|&(_, c)| c).collect();
        while let Some(q) = queue.pop_front() {
            let children = ac.goto[q as usize].clone();
            for (a, child) in children {
                let mut f = ac.fail[q as usize];
                let target = loop {
                    if let Some(next) = ac.child(f, a) {
                        break next;
                    }
                    if f == Self::ROOT {
                        break Self::ROOT;
                    }
                    f = ac.fail[f as usize];
                };
                ac.fail[child as usize] = target;
                if ac.forbidden[target as usize] {
                    ac.forbidden[child as usize] = true;
                }
                queue.push_back(child);
            }
        }
        Ok(ac)
    }

    fn add_child(&mut self, q: StateId, a: u8) -> StateId {
        let id = self.goto.len() as StateId;
        self.goto.push(Vec::new());
        self.fail.push(Self::ROOT);
        self.forbidden.push(false);
        self.parent.push((q, a));
        self.depth.push(self.depth[q as usize] + 1);
        let edges = &mut self.goto[q as usize];
        let pos = edges.partition_point(|&(b, _)| b < a);
        edges.insert(pos, (a, id));
        id
    }

    /// Trie child of `q` on `a`, without following failure links.
    #[inline]
    pub fn child(&self, q: StateId, a: u8) -> Option<StateId> {
        let edges = &self.goto[q as usize];
        edges
            .binary_search_by_key(&a, |&(b, _)| b)
            .ok()
            .map(|i| edges[i].1)
    }

    /// One automaton move: follow failure links until a child on `a` exists.
    #[inline]
    pub fn step(&self, mut q: StateId, a: u8) -> StateId {
        loop {
            if let Some(next) = self.child(q, a) {
                return next;
            }
            if q == Self::ROOT {
                return Self::ROOT;
            }
            q = self.fail[q as usize];
        }
    }

    /// Scans `text` from the root. `hit` is set if any visited state is forbidden.
    pub fn run(&self, text: &[u8]) -> (StateId, bool) {
        self.run_from(Self::ROOT, text)
    }

    pub fn run_from(&self, mut q: StateId, text: &[u8]) -> (StateId, bool) {
        let mut hit = false;
        for &a in text {
            q = self.step(q, a);
            hit |= self.forbidden[q as usize];
        }
        (q, hit)
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.goto.len()
    }

    #[inline]
    pub fn is_forbidden(&self, q: StateId) -> bool {
        self.forbidden[q as usize]
    }

    #[inline]
    pub fn fail(&self, q: StateId) -> StateId {
        self.fail[q as usize]
    }

    pub fn depth(&self, q: StateId) -> usize {
        self.depth[q as usize] as usize
    }

    /// Total pattern length `L`; `num_states() <= 1 + L`.
    pub fn total_pattern_len(&self) -> usize {
        self.total_len
    }

    /// The trie prefix spelled by state `q`.
    pub fn state_string(&self, mut q: StateId) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.depth(q));
        while q != Self::ROOT {
            let (p, a) = self.parent[q as usize];
            out.push(a);
            q = p;
        }
        out.reverse();
        out
    }

    /// State whose string is exactly `prefix`, if it is a trie prefix.
    pub fn state_of(&self, prefix: &[u8]) -> Option<StateId> {
        prefix
            .iter()
            .try_fold(Self::ROOT, |q, &a| self.child(q, a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_contains(text: &[u8], patterns: &[Vec<u8>]) -> bool {
        patterns
            .iter()
            .any(|p| text.windows(p.len()).any(|w| w == p.as_slice()))
    }

    #[test]
    fn classic_he_she_his_hers() {
        let ac = AcAutomaton::build(["he", "she", "his", "hers"]).unwrap();
        assert_eq!(ac.num_states(), 10);
        let forbidden: Vec<Vec<u8>> = (0..ac.num_states() as StateId)
            .filter(|&q| ac.is_forbidden(q))
            .map(|q| ac.state_string(q))
            .collect();
        let mut forbidden: Vec<&[u8]> = forbidden.iter().map(Vec::as_slice).collect();
        forbidden.sort();
        assert_eq!(forbidden, vec![&b"he"[..], b"hers", b"his", b"she"]);
        let she = ac.state_of(b"she").unwrap();
        assert_eq!(ac.fail(she), ac.state_of(b"he").unwrap());
    }

    #[test]
    fn empty_lexicon_is_single_root() {
        let ac = AcAutomaton::build(Vec::<Vec<u8>>::new()).unwrap();
        assert_eq!(ac.num_states(), 1);
        assert!(!ac.is_forbidden(AcAutomaton::ROOT));
        assert_eq!(ac.run(b""), (AcAutomaton::ROOT, false));
    }

    #[test]
    fn empty_pattern_rejected() {
        assert!(matches!(
            AcAutomaton::build(["ok", ""]),
            Err(Error::EmptyPattern)
        ));
    }

    #[test]
    fn mark_propagates_through_fail() {
        let ac = AcAutomaton::build(["ab", "b"]).unwrap();
        let ab = ac.state_of(b"ab").unwrap();
        let b = ac.state_of(b"b").unwrap();
        assert_eq!(ac.fail(ab), b);
        assert!(ac.is_forbidden(ab) && ac.is_forbidden(b));

        let ac = AcAutomaton::build(["abc", "c"]).unwrap();
        assert!(ac.is_forbidden(ac.state_of(b"abc").unwrap()));
        assert!(!ac.is_forbidden(ac.state_of(b"ab").unwrap()));
    }

    #[test]
    fn step_follows_fail_chain() {
        let ac = AcAutomaton::build(["he", "she"]).unwrap();
        let sh = ac.state_of(b"sh").unwrap();
        assert_eq!(ac.step(sh, b'e'), ac.state_of(b"she").unwrap());
        assert_eq!(ac.step(AcAutomaton::ROOT, b'z'), AcAutomaton::ROOT);

        let ac = AcAutomaton::build(["he", "she", "hers"]).unwrap();
        let she = ac.state_of(b"she").unwrap();
        assert_eq!(ac.step(she, b'r'), ac.state_of(b"her").unwrap());
    }

    #[test]
    fn run_examples() {
        let ac = AcAutomaton::build(["she"]).unwrap();
        assert!(ac.run(b"ushers").1);
        let ac = AcAutomaton::build(["ab"]).unwrap();
        assert_eq!(ac.run(b"aab"), (ac.state_of(b"ab").unwrap(), true));
    }

    fn lexicon() -> impl Strategy<Value = Vec<Vec<u8>>> {
        proptest::collection::vec(proptest::collection::vec(b'a'..=b'c', 1..5), 0..6)
    }

    proptest! {
        #[test]
        fn matches_naive_scan(patterns in lexicon(),
                              text in proptest::collection::vec(b'a'..=b'd', 0..40)) {
            let ac = AcAutomaton::build(&patterns).unwrap();
            prop_assert_eq!(ac.run(&text).1, naive_contains(&text, &patterns));
        }

        #[test]
        fn state_is_longest_suffix_prefix(patterns in lexicon(),
                                          text in proptest::collection::vec(b'a'..=b'd', 0..30)) {
            let ac = AcAutomaton::build(&patterns).unwrap();
            let (q, _) = ac.run(&text);
            let expected = (0..=text.len())
                .map(|i| &text[i..])
                .find(|s| patterns.iter().any(|p| p.starts_with(s)))
                .unwrap_or(&[]);
            prop_assert_eq!(ac.state_string(q), expected.to_vec());
        }

        #[test]
        fn states_bounded_by_total_length(patterns in lexicon()) {
            let ac = AcAutomaton::build(&patterns).unwrap();
            prop_assert!(ac.num_states() <= 1 + ac.total_pattern_len());
        }
    }
}
