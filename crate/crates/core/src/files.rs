//! On-disk formats: lexicon and regex lists, prompt files, generation
//! records and the table cache.
//!
//! Lexicon and regex files hold one entry per line. Lines starting with `#`
//! are comments and empty lines are skipped; a leading `\#` stands for a
//! literal `#`. Lexicon lines additionally understand `\\`, `\n`, `\t`, `\r`
//! and `\xHH`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::CompiledConstraints;
use crate::regex::{compile_regex, PartialDfa};
use crate::tables::{RegexTables, StringTables};
use crate::vocab::{TokenId, Vocabulary};

fn at_line(path: &Path, line: usize, source: Error) -> Error {
    Error::AtLine {
        path: path.to_path_buf(),
        line,
        source: Box::new(source),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment, non-empty lines with their 1-based numbers.
fn entries(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.strip_suffix('\r').unwrap_or(line);
        (!line.is_empty() && !line.starts_with('#')).then_some((i + 1, line))
    })
}

fn unescape_lexicon(line: &str) -> Result<Vec<u8>> {
    let bytes = line.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        let bad = |what: String| Error::Record(what);
        let c = *bytes.get(i + 1).ok_or_else(|| bad("trailing backslash".into()))?;
        i += 2;
        out.push(match c {
            b'\\' => b'\\',
            b'#' => b'#',
            b'n' => b'\n',
            b't' => b'\t',
            b'r' => b'\r',
            b'x' => {
                let hex = line.get(i..i + 2).ok_or_else(|| bad("expected two hex digits after \\x".into()))?;
                i += 2;
                u8::from_str_radix(hex, 16).map_err(|_| bad(format!("bad hex escape \\x{hex}")))?
            }
            c => return Err(bad(format!("unknown escape \\{}", c as char))),
        });
    }
    Ok(out)
}

pub fn parse_lexicon(text: &str, path: &Path) -> Result<Vec<Vec<u8>>> {
    entries(text)
        .map(|(n, line)| {
            let p = unescape_lexicon(line).map_err(|e| at_line(path, n, e))?;
            if p.is_empty() {
                return Err(at_line(path, n, Error::EmptyPattern));
            }
            Ok(p)
        })
        .collect()
}

/// Regex sources with their line numbers.
pub fn parse_regex_list(text: &str) -> Vec<(usize, String)> {
    entries(text)
        .map(|(n, line)| {
            let src = match line.strip_prefix("\\#") {
                Some(rest) => format!("#{rest}"),
                None => line.to_string(),
            };
            (n, src)
        })
        .collect()
}

pub fn load_lexicon(path: &Path) -> Result<Vec<Vec<u8>>> {
    parse_lexicon(&read_text(path)?, path)
}

pub fn load_regexes(path: &Path) -> Result<Vec<PartialDfa>> {
    parse_regex_list(&read_text(path)?)
        .into_iter()
        .map(|(n, src)| compile_regex(&src).map_err(|e| at_line(path, n, e)))
        .collect()
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::from_file_str(&read_text(path)?).map_err(|e| match e {
        Error::VocabFormat { line, .. } => at_line(path, line, e),
        e => Error::AtLine {
            path: path.to_path_buf(),
            line: 0,
            source: Box::new(e),
        },
    })
}

/// One prompt per line, tokenized with `vocab`.
pub fn load_prompts(path: &Path, vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>> {
    let text = read_text(path)?;
    Ok(text
        .lines()
        .map(|l| vocab.encode(l.strip_suffix('\r').unwrap_or(l).as_bytes()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_id: usize,
    pub tokens: Vec<TokenId>,
    pub text_hex: String,
    pub elapsed_s: f64,
    pub rejections: u64,
    #[serde(default)]
    pub prompt_hex: String,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Record(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| at_line(path, i + 1, Error::Record(e.to_string())))?;
        out.push(rec);
    }
    Ok(out)
}

/// FNV-1a over the serialized merge list and added tokens.
pub fn vocab_fingerprint(vocab: &Vocabulary) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(vocab.to_file_string().as_bytes());
    for w in 0..vocab.len() as TokenId {
        if vocab.is_base(w) && w as usize > 256 {
            feed(vocab.token_bytes(w));
            feed(&[0xff]);
        }
    }
    format!("{h:016x}-{}", vocab.len())
}

/// Precomputed tables together with what they were built from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableCache {
    pub vocab: String,
    pub lexicon_hex: Vec<String>,
    pub regexes: Vec<String>,
    pub strings: Option<StringTables>,
    pub regex: Option<RegexTables>,
}

impl TableCache {
    pub fn new(vocab: &Vocabulary, c: &CompiledConstraints) -> Self {
        Self {
            vocab: vocab_fingerprint(vocab),
            lexicon_hex: c.lexicon().iter().map(hex::encode).collect(),
            regexes: c.dfas().iter().map(|d| d.pattern().to_string()).collect(),
            strings: c.string_tables().cloned(),
            regex: c.regex_tables().cloned(),
        }
    }

    /// Whether the cache was built for exactly these inputs.
    pub fn matches(&self, vocab: &Vocabulary, lexicon: &[Vec<u8>], dfas: &[PartialDfa]) -> bool {
        self.vocab == vocab_fingerprint(vocab)
            && self.lexicon_hex == lexicon.iter().map(hex::encode).collect::<Vec<_>>()
            && self.regexes == dfas.iter().map(|d| d.pattern().to_string()).collect::<Vec<_>>()
    }

    pub fn into_constraints(self, vocab: &Vocabulary, lexicon: &[Vec<u8>], dfas: &[PartialDfa]) -> Result<CompiledConstraints> {
        CompiledConstraints::from_tables(vocab, lexicon, dfas, self.strings, self.regex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(|e| Error::Record(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Record(format!("{}: {e}", path.display())))
    }
}

/// Default cache location next to the first constraint file.
pub fn default_cache_path(lexicon: Option<&Path>, regexes: Option<&Path>) -> Option<PathBuf> {
    let base = lexicon.or(regexes)?;
    let mut name = base.file_name()?.to_os_string();
    name.push(".tables.json");
    Some(base.with_file_name(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BuildOptions;

    #[test]
    fn lexicon_comments_and_escapes() {
        let text = "# comment\nfoo\n\n\\#tag\na\\x00b\\\\\nbar \r\n";
        let p = parse_lexicon(text, Path::new("l.txt")).unwrap();
        assert_eq!(p, vec![b"foo".to_vec(), b"#tag".to_vec(), b"a\0b\\".to_vec(), b"bar ".to_vec()]);
    }

    #[test]
    fn lexicon_errors_carry_line() {
        let err = parse_lexicon("ok\nbad\\q\n", Path::new("l.txt")).unwrap_err();
        assert!(err.to_string().starts_with("l.txt:2:"), "{err}");
        assert!(matches!(err, Error::AtLine { line: 2, .. }));
    }

    #[test]
    fn regex_lines() {
        let list = parse_regex_list("# pii\n[0-9]+\n\\#x\n");
        assert_eq!(list, vec![(2, "[0-9]+".to_string()), (3, "#x".to_string())]);
    }

    #[test]
    fn regex_file_error_has_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        fs::write(&path, "abc\n\n(ab\n").unwrap();
        let err = load_regexes(&path).unwrap_err();
        assert!(matches!(err, Error::AtLine { line: 3, .. }), "{err}");
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::from_merges([(b'a' as u32, b'b' as u32)]).unwrap();
        let lexicon = vec![b"ab".to_vec()];
        let dfas = vec![compile_regex("b+a").unwrap()];
        let c = CompiledConstraints::build(&vocab, &lexicon, &dfas, &BuildOptions::default()).unwrap();
        let path = dir.path().join("t.json");
        TableCache::new(&vocab, &c).save(&path).unwrap();
        let cache = TableCache::load(&path).unwrap();
        assert!(cache.matches(&vocab, &lexicon, &dfas));
        assert!(!cache.matches(&vocab, &[b"ba".to_vec()], &dfas));
        assert!(!cache.matches(&Vocabulary::byte_level(), &lexicon, &dfas));
        let back = cache.into_constraints(&vocab, &lexicon, &dfas).unwrap();
        assert_eq!(back.string_tables(), c.string_tables());
        assert_eq!(back.global(), c.global());
    }

    #[test]
    fn generations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        let rec = GenerationRecord {
            prompt_id: 3,
            tokens: vec![97, 256],
            text_hex: hex::encode(b"a"),
            elapsed_s: 0.5,
            rejections: 2,
            prompt_hex: String::new(),
        };
        write_jsonl(&path, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(read_generations(&path).unwrap(), vec![rec]);
        let line = fs::read_to_string(&path).unwrap();
        assert!(line.starts_with("{\"prompt_id\":3,\"tokens\":[97,256],\"text_hex\":\"61\""));
    }
}
