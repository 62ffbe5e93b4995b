//! Compilation of a regular-expression fragment into a minimal partial DFA.
//!
//! Pipeline: parse → Thompson NFA → subset construction over byte classes →
//! Hopcroft minimization → drop the dead class. The result never materializes
//! the non-accepting sink: a missing transition means the run is dead (⊥).
//!
//! Supported syntax: literals, `.` (any byte), `[...]` classes with ranges and
//! negation, `\d \w \s` and their negations, `\xHH`, grouping `( )` and
//! `(?: )`, alternation, `* + ?`, and `{m}`, `{m,}`, `{m,n}`. Patterns are
//! unanchored bodies: the decoder supplies substring semantics.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

/// Reserved index for the omitted sink state ⊥.
pub const DEAD: u32 = u32::MAX;

/// Patterns for phone, social-security and credit-card numbers.
pub const PII_PATTERNS: [(&str, &str); 3] = [
    ("phone number", "[0-9]{3}-[0-9]{2}-[0-9]{4}"),
    ("social security number", "[0-9]{3}-[0-9]{3}-[0-9]{4}"),
    ("credit card number", "[0-9]{4}-[0-9]{4}-[0-9]{4}-[0-9]{4}"),
];

#[derive(Clone, Debug)]
pub struct RegexOptions {
    /// Ceiling on NFA states produced by expanding one bounded repetition.
    pub max_repetition_states: usize,
    /// Ceiling on states created during determinization.
    pub max_dfa_states: usize,
}

impl Default for RegexOptions {
    fn default() -> Self {
        Self {
            max_repetition_states: 1024,
            max_dfa_states: 100_000,
        }
    }
}

/// A set of bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ByteSet([u64; 4]);

impl ByteSet {
    pub fn empty() -> Self {
        Self([0; 4])
    }

    pub fn full() -> Self {
        Self([u64::MAX; 4])
    }

    pub fn single(b: u8) -> Self {
        let mut s = Self::empty();
        s.insert(b);
        s
    }

    pub fn range(lo: u8, hi: u8) -> Self {
        let mut s = Self::empty();
        for b in lo..=hi {
            s.insert(b);
        }
        s
    }

    #[inline]
    pub fn contains(&self, b: u8) -> bool {
        self.0[(b >> 6) as usize] >> (b & 63) & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, b: u8) {
        self.0[(b >> 6) as usize] |= 1 << (b & 63);
    }

    pub fn union(mut self, other: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a |= b;
        }
        self
    }

    pub fn complement(mut self) -> Self {
        for a in self.0.iter_mut() {
            *a = !*a;
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0 == [0; 4]
    }
}

impl std::fmt::Debug for ByteSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set()
            .entries((0..=255u8).filter(|&b| self.contains(b)))
            .finish()
    }
}

/// Parsed pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ast {
    Empty,
    Class(ByteSet),
    Concat(Vec<Ast>),
    Alt(Vec<Ast>),
    Repeat {
        inner: Box<Ast>,
        min: u32,
        max: Option<u32>,
    },
}

impl Ast {
    /// Number of NFA states the Thompson construction allocates for this node.
    fn nfa_size(&self) -> usize {
        match self {
            Ast::Empty => 1,
            Ast::Class(_) => 2,
            Ast::Concat(items) if items.is_empty() => 1,
            Ast::Concat(items) => items.iter().map(Ast::nfa_size).sum(),
            Ast::Alt(items) => 2 + items.iter().map(Ast::nfa_size).sum::<usize>(),
            Ast::Repeat { inner, min, max } => {
                let inner = inner.nfa_size();
                let fixed = inner.saturating_mul(*min as usize);
                let tail = match max {
                    None => inner + 1,
                    Some(max) => inner.saturating_mul((max - min) as usize) + 1,
                };
                1 + fixed.saturating_add(tail)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

const MAX_REPEAT: u32 = 100_000;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

pub fn parse(pattern: &str) -> Result<Ast> {
    let mut p = Parser {
        src: pattern.as_bytes(),
        pos: 0,
    };
    let ast = p.alternation()?;
    if let Some(c) = p.peek() {
        return Err(p.syntax(format!("unexpected `{}`", c as char)));
    }
    Ok(ast)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        Some(c)
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn syntax(&self, what: impl Into<String>) -> Error {
        Error::RegexSyntax {
            offset: self.pos,
            what: what.into(),
        }
    }

    fn unsupported(&self, offset: usize, what: impl Into<String>) -> Error {
        Error::UnsupportedRegex {
            offset,
            what: what.into(),
        }
    }

    fn alternation(&mut self) -> Result<Ast> {
        let mut branches = vec![self.concat()?];
        while self.eat(b'|') {
            branches.push(self.concat()?);
        }
        Ok(if branches.len() == 1 {
            branches.pop().unwrap()
        } else {
            Ast::Alt(branches)
        })
    }

    fn concat(&mut self) -> Result<Ast> {
        let mut items = Vec::new();
        while let Some(c) = self.peek() {
            if c == b'|' || c == b')' {
                break;
            }
            let atom = self.atom()?;
            items.push(self.quantifiers(atom)?);
        }
        Ok(match items.len() {
            0 => Ast::Empty,
            1 => items.pop().unwrap(),
            _ => Ast::Concat(items),
        })
    }

    fn quantifiers(&mut self, mut atom: Ast) -> Result<Ast> {
        loop {
            let (min, max) = match self.peek() {
                Some(b'*') => (0, None),
                Some(b'+') => (1, None),
                Some(b'?') => (0, Some(1)),
                Some(b'{') => {
                    self.pos += 1;
                    let q = self.braces()?;
                    self.pos -= 1;
                    q
                }
                _ => return Ok(atom),
            };
            self.pos += 1;
            // Lazy and greedy quantifiers accept the same language.
            self.eat(b'?');
            if self.peek() == Some(b'+') {
                return Err(self.unsupported(self.pos, "possessive quantifier"));
            }
            atom = Ast::Repeat {
                inner: Box::new(atom),
                min,
                max,
            };
        }
    }

    /// Parses `m}`, `m,}` or `m,n}` after the opening brace.
    fn braces(&mut self) -> Result<(u32, Option<u32>)> {
        let min = self.number()?;
        let max = if self.eat(b',') {
            if self.peek() == Some(b'}') {
                None
            } else {
                Some(self.number()?)
            }
        } else {
            Some(min)
        };
        if self.peek() != Some(b'}') {
            return Err(self.syntax("expected `}` in repetition"));
        }
        self.pos += 1;
        if let Some(max) = max {
            if max < min {
                return Err(self.syntax(format!("repetition {{{min},{max}}} has max < min")));
            }
        }
        Ok((min, max))
    }

    fn number(&mut self) -> Result<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected a number in repetition"));
        }
        let n: u32 = std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.syntax("repetition count too large"))?;
        if n > MAX_REPEAT {
            return Err(self.syntax("repetition count too large"));
        }
        Ok(n)
    }

    fn atom(&mut self) -> Result<Ast> {
        let start = self.pos;
        let c = self.bump().expect("atom called at end of input");
        match c {
            b'(' => {
                if self.eat(b'?') && !self.eat(b':') {
                    return Err(self.unsupported(start, "lookaround or inline flags"));
                }
                let inner = self.alternation()?;
                if !self.eat(b')') {
                    return Err(self.syntax("unclosed group"));
                }
                Ok(inner)
            }
            b'[' => self.class(),
            b'.' => Ok(Ast::Class(ByteSet::full())),
            b'^' | b'$' => Err(self.unsupported(start, "anchor")),
            b'\\' => self.escape(start, false).map(Ast::Class),
            b'*' | b'+' | b'?' | b'{' => Err(self.syntax("quantifier without operand")),
            b')' => Err(self.syntax("unbalanced `)`")),
            c => Ok(Ast::Class(ByteSet::single(c))),
        }
    }

    fn escape(&mut self, start: usize, in_class: bool) -> Result<ByteSet> {
        let Some(c) = self.bump() else {
            return Err(self.syntax("trailing backslash"));
        };
        let digit = ByteSet::range(b'0', b'9');
        let word = ByteSet::range(b'a', b'z')
            .union(ByteSet::range(b'A', b'Z'))
            .union(digit)
            .union(ByteSet::single(b'_'));
        let space = [b' ', b'\t', b'\n', b'\r', 0x0b, 0x0c]
            .into_iter()
            .fold(ByteSet::empty(), |s, b| s.union(ByteSet::single(b)));
        Ok(match c {
            b'd' => digit,
            b'D' => digit.complement(),
            b'w' => word,
            b'W' => word.complement(),
            b's' => space,
            b'S' => space.complement(),
            b'n' => ByteSet::single(b'\n'),
            b't' => ByteSet::single(b'\t'),
            b'r' => ByteSet::single(b'\r'),
            b'f' => ByteSet::single(0x0c),
            b'v' => ByteSet::single(0x0b),
            b'0' => ByteSet::single(0),
            b'x' => {
                let hex = self.src.get(self.pos..self.pos + 2).unwrap_or_default();
                let value = std::str::from_utf8(hex)
                    .ok()
                    .and_then(|h| u8::from_str_radix(h, 16).ok())
                    .ok_or_else(|| self.syntax("expected two hex digits after \\x"))?;
                self.pos += 2;
                ByteSet::single(value)
            }
            b'1'..=b'9' => return Err(self.unsupported(start, "backreference")),
            b'b' if in_class => ByteSet::single(0x08),
            b'b' | b'B' | b'A' | b'z' | b'Z' | b'G' => {
                return Err(self.unsupported(start, "anchor or word boundary"))
            }
            b'p' | b'P' => return Err(self.unsupported(start, "Unicode class")),
            c if c.is_ascii_alphanumeric() => {
                return Err(self.unsupported(start, format!("escape \\{}", c as char)))
            }
            c => ByteSet::single(c),
        })
    }

    fn class(&mut self) -> Result<Ast> {
        let negated = self.eat(b'^');
        let mut set = ByteSet::empty();
        let mut first = true;
        loop {
            let start = self.pos;
            let Some(c) = self.bump() else {
                return Err(self.syntax("unclosed character class"));
            };
            if c == b']' && !first {
                break;
            }
            first = false;
            let lo = match c {
                b'\\' => {
                    let item = self.escape(start, true)?;
                    match single_byte(&item) {
                        Some(b) => b,
                        None => {
                            set = set.union(item);
                            continue;
                        }
                    }
                }
                c if c >= 0x80 => {
                    return Err(self.unsupported(start, "multi-byte character in class"))
                }
                b'[' if self.peek() == Some(b':') => {
                    return Err(self.unsupported(start, "POSIX class"))
                }
                c => c,
            };
            if self.peek() == Some(b'-') && self.src.get(self.pos + 1) != Some(&b']') {
                self.pos += 1;
                let hi_start = self.pos;
                let hi = match self.bump() {
                    None => return Err(self.syntax("unclosed character class")),
                    Some(b'\\') => single_byte(&self.escape(hi_start, true)?)
                        .ok_or_else(|| self.syntax("class shorthand as range bound"))?,
                    Some(c) if c >= 0x80 => {
                        return Err(self.unsupported(hi_start, "multi-byte character in class"))
                    }
                    Some(c) => c,
                };
                if hi < lo {
                    return Err(self.syntax("reversed class range"));
                }
                set = set.union(ByteSet::range(lo, hi));
            } else {
                set.insert(lo);
            }
        }
        Ok(Ast::Class(if negated { set.complement() } else { set }))
    }
}

fn single_byte(set: &ByteSet) -> Option<u8> {
    let mut it = (0..=255u8).filter(|&b| set.contains(b));
    let b = it.next()?;
    it.next().is_none().then_some(b)
}

// ---------------------------------------------------------------------------
// Thompson NFA

#[derive(Default)]
struct NfaState {
    eps: Vec<usize>,
    byte: Option<(ByteSet, usize)>,
}

struct Nfa {
    states: Vec<NfaState>,
}

impl Nfa {
    fn add(&mut self) -> usize {
        self.states.push(NfaState::default());
        self.states.len() - 1
    }

    fn eps(&mut self, from: usize, to: usize) {
        self.states[from].eps.push(to);
    }

    /// Returns the `(entry, exit)` pair of the fragment for `ast`.
    fn build(&mut self, ast: &Ast, opts: &RegexOptions) -> Result<(usize, usize)> {
        Ok(match ast {
            Ast::Empty => {
                let s = self.add();
                (s, s)
            }
            Ast::Class(set) => {
                let s = self.add();
                let e = self.add();
                self.states[s].byte = Some((*set, e));
                (s, e)
            }
            Ast::Concat(items) => {
                let Some((first, rest)) = items.split_first() else {
                    let s = self.add();
                    return Ok((s, s));
                };
                let (s, mut e) = self.build(first, opts)?;
                for item in rest {
                    let (a, b) = self.build(item, opts)?;
                    self.eps(e, a);
                    e = b;
                }
                (s, e)
            }
            Ast::Alt(items) => {
                let s = self.add();
                let e = self.add();
                for item in items {
                    let (a, b) = self.build(item, opts)?;
                    self.eps(s, a);
                    self.eps(b, e);
                }
                (s, e)
            }
            Ast::Repeat { inner, min, max } => {
                let size = ast.nfa_size();
                let copies = min + max.map_or(1, |m| m - min);
                if copies > 1 && size > opts.max_repetition_states {
                    return Err(Error::RepetitionTooLarge {
                        states: size,
                        limit: opts.max_repetition_states,
                    });
                }
                let s = self.add();
                let mut cur = s;
                for _ in 0..*min {
                    let (a, b) = self.build(inner, opts)?;
                    self.eps(cur, a);
                    cur = b;
                }
                match max {
                    None => {
                        let hub = self.add();
                        let (a, b) = self.build(inner, opts)?;
                        self.eps(cur, hub);
                        self.eps(hub, a);
                        self.eps(b, hub);
                        (s, hub)
                    }
                    Some(max) => {
                        let end = self.add();
                        for _ in *min..*max {
                            let (a, b) = self.build(inner, opts)?;
                            self.eps(cur, a);
                            self.eps(cur, end);
                            cur = b;
                        }
                        self.eps(cur, end);
                        (s, end)
                    }
                }
            }
        })
    }

    fn closure(&self, seeds: impl IntoIterator<Item = usize>, seen: &mut [bool]) -> Vec<usize> {
        let mut stack: Vec<usize> = Vec::new();
        let mut out = Vec::new();
        for s in seeds {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
        while let Some(s) = stack.pop() {
            out.push(s);
            for &t in &self.states[s].eps {
                if !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        for &s in &out {
            seen[s] = false;
        }
        out.sort_unstable();
        out
    }
}

// ---------------------------------------------------------------------------
// Partial DFA

/// Deterministic automaton without the non-accepting sink.
///
/// Transitions are stored per byte class: `class_of` maps each byte to a
/// column of `table`, and `table[q * num_classes + c]` is the successor or
/// [`DEAD`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialDfa {
    pattern: String,
    class_of: Box<[u16; 256]>,
    num_classes: usize,
    table: Vec<u32>,
    accepting: Vec<bool>,
    start: u32,
}

impl PartialDfa {
    #[inline]
    pub fn num_states(&self) -> usize {
        self.accepting.len()
    }

    #[inline]
    pub fn start(&self) -> u32 {
        self.start
    }

    #[inline]
    pub fn is_accepting(&self, q: u32) -> bool {
        self.accepting[q as usize]
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Successor of `q` on `a`; ⊥ ([`DEAD`]) is absorbing.
    #[inline]
    pub fn step(&self, q: u32, a: u8) -> u32 {
        if q == DEAD {
            return DEAD;
        }
        self.table[q as usize * self.num_classes + self.class_of[a as usize] as usize]
    }

    /// Runs from the start state over `text`; true iff it ends accepting.
    pub fn accepts(&self, text: &[u8]) -> bool {
        let q = text.iter().fold(self.start, |q, &a| self.step(q, a));
        q != DEAD && self.is_accepting(q)
    }

    /// Outgoing edges of `q` as `(byte, successor)` pairs, ascending by byte.
    pub fn edges(&self, q: u32) -> impl Iterator<Item = (u8, u32)> + '_ {
        (0..=255u8).filter_map(move |a| {
            let t = self.step(q, a);
            (t != DEAD).then_some((a, t))
        })
    }

    pub fn num_edges(&self) -> usize {
        (0..self.num_states() as u32).map(|q| self.edges(q).count()).sum()
    }
}

pub fn compile_regex(pattern: &str) -> Result<PartialDfa> {
    compile_regex_with(pattern, &RegexOptions::default())
}

pub fn compile_regex_with(pattern: &str, opts: &RegexOptions) -> Result<PartialDfa> {
    let ast = parse(pattern)?;
    compile_ast(pattern, &ast, opts)
}

pub fn compile_ast(pattern: &str, ast: &Ast, opts: &RegexOptions) -> Result<PartialDfa> {
    let mut nfa = Nfa { states: Vec::new() };
    let (entry, exit) = nfa.build(ast, opts)?;

    // Byte classes: bytes that no transition set distinguishes share a class.
    let mut class_of = [0u16; 256];
    let mut num_classes = 1usize;
    for state in &nfa.states {
        let Some((set, _)) = &state.byte else { continue };
        let mut remap: HashMap<(u16, bool), u16> = HashMap::new();
        for b in 0..=255u8 {
            let key = (class_of[b as usize], set.contains(b));
            let next = remap.len() as u16;
            class_of[b as usize] = *remap.entry(key).or_insert(next);
        }
        num_classes = remap.len();
    }
    let mut representative = vec![0u8; num_classes];
    for b in (0..=255u8).rev() {
        representative[class_of[b as usize] as usize] = b;
    }

    // Subset construction.
    let mut seen = vec![false; nfa.states.len()];
    let start_set = nfa.closure([entry], &mut seen);
    if start_set.contains(&exit) {
        return Err(Error::AcceptsEmpty);
    }
    let mut ids: HashMap<Vec<usize>, u32> = HashMap::new();
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let mut trans: Vec<u32> = Vec::new();
    ids.insert(start_set.clone(), 0);
    sets.push(start_set);
    let mut next = 0;
    while next < sets.len() {
        for &b in &representative {
            let targets: Vec<usize> = sets[next]
                .iter()
                .filter_map(|&s| match nfa.states[s].byte {
                    Some((set, t)) if set.contains(b) => Some(t),
                    _ => None,
                })
                .collect();
            if targets.is_empty() {
                trans.push(DEAD);
                continue;
            }
            let closed = nfa.closure(targets, &mut seen);
            let id = match ids.get(&closed) {
                Some(&id) => id,
                None => {
                    let id = sets.len() as u32;
                    if sets.len() >= opts.max_dfa_states {
                        return Err(Error::DfaTooLarge {
                            limit: opts.max_dfa_states,
                        });
                    }
                    ids.insert(closed.clone(), id);
                    sets.push(closed);
                    id
                }
            };
            trans.push(id);
        }
        next += 1;
    }
    let accepting: Vec<bool> = sets.iter().map(|s| s.contains(&exit)).collect();

    let (table, accepting, start) = minimize(&trans, &accepting, num_classes)?;
    Ok(PartialDfa {
        pattern: pattern.to_owned(),
        class_of: Box::new(class_of),
        num_classes,
        table,
        accepting,
        start,
    })
}

/// Hopcroft partition refinement on the completed DFA (explicit sink added),
/// followed by removal of the sink's block and BFS renumbering from start.
fn minimize(trans: &[u32], accepting: &[bool], k: usize) -> Result<(Vec<u32>, Vec<bool>, u32)> {
    let n = accepting.len();
    let sink = n;
    let total = n + 1;
    let succ = |q: usize, c: usize| -> usize {
        if q == sink {
            sink
        } else {
            match trans[q * k + c] {
                DEAD => sink,
                t => t as usize,
            }
        }
    };

    // Inverse transitions: pred[c][t] = sources.
    let mut pred: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); total]; k];
    for q in 0..total {
        for (c, p) in pred.iter_mut().enumerate() {
            p[succ(q, c)].push(q);
        }
    }

    let mut block_of = vec![0usize; total];
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let (acc, rej): (Vec<usize>, Vec<usize>) =
        (0..total).partition(|&q| q != sink && accepting[q]);
    for part in [acc, rej] {
        if !part.is_empty() {
            for &q in &part {
                block_of[q] = blocks.len();
            }
            blocks.push(part);
        }
    }
    let mut in_work = vec![true; blocks.len()];
    let mut work: Vec<usize> = (0..blocks.len()).collect();
    let mut mark = vec![false; total];
    let mut touched: Vec<usize> = Vec::new();
    let mut hits: Vec<Vec<usize>> = vec![Vec::new(); blocks.len()];

    while let Some(a) = work.pop() {
        in_work[a] = false;
        let splitter = blocks[a].clone();
        for p in &pred {
            for &t in &splitter {
                for &q in &p[t] {
                    if !mark[q] {
                        mark[q] = true;
                        let b = block_of[q];
                        if hits[b].is_empty() {
                            touched.push(b);
                        }
                        hits[b].push(q);
                    }
                }
            }
            for &b in &touched {
                let inside = std::mem::take(&mut hits[b]);
                for &q in &inside {
                    mark[q] = false;
                }
                if inside.len() == blocks[b].len() {
                    continue;
                }
                let new_id = blocks.len();
                for &q in &inside {
                    block_of[q] = new_id;
                }
                blocks[b].retain(|&q| block_of[q] == b);
                let rest_len = blocks[b].len();
                let inside_len = inside.len();
                blocks.push(inside);
                hits.push(Vec::new());
                in_work.push(false);
                if in_work[b] || inside_len <= rest_len {
                    in_work[new_id] = true;
                    work.push(new_id);
                } else {
                    in_work[b] = true;
                    work.push(b);
                }
            }
            touched.clear();
        }
    }

    let dead_block = block_of[sink];
    let start_block = block_of[0];
    if start_block == dead_block {
        return Err(Error::EmptyLanguage);
    }

    // Renumber live blocks in BFS order from the start block.
    let mut new_id = vec![DEAD; blocks.len()];
    let mut order = vec![start_block];
    new_id[start_block] = 0;
    let mut queue = VecDeque::from([start_block]);
    while let Some(b) = queue.pop_front() {
        let rep = blocks[b][0];
        for c in 0..k {
            let t = block_of[succ(rep, c)];
            if t != dead_block && new_id[t] == DEAD {
                new_id[t] = order.len() as u32;
                order.push(t);
                queue.push_back(t);
            }
        }
    }
    let mut table = Vec::with_capacity(order.len() * k);
    let mut acc = Vec::with_capacity(order.len());
    for &b in &order {
        let rep = blocks[b][0];
        acc.push(accepting[rep]);
        for c in 0..k {
            let t = block_of[succ(rep, c)];
            table.push(if t == dead_block { DEAD } else { new_id[t] });
        }
    }
    Ok((table, acc, 0))
}
