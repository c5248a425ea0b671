//! Caption normalization and token-ID mapping.
//!
//! Two tokenizer families are provided:
//!
//! * [`WordTokenizer`] ("Tokenizer A"): a frequency-trained word vocabulary
//!   with `PAD = 0`, `UNK = 1` and words densely numbered from 2.
//! * [`HashingTokenizer`] ("Tokenizer B"): seeded FNV-1a 64 of each word,
//!   reduced modulo the bucket count. Collisions are expected and are what
//!   separates the two families in the experiments.
//!
//! Both are immutable after construction and safe to share across threads.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hash::Fnv1a64;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const DEFAULT_MAX_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum TokenizeError {
    #[error("corpus is empty")]
    CorpusEmpty,
    #[error("vocabulary size must be at least 3, got {0}")]
    InvalidVocabSize(usize),
    #[error("hashing tokenizer needs at least 2 buckets, got {0}")]
    InvalidBuckets(u64),
    #[error("max_len must be positive")]
    InvalidMaxLen,
    #[error("vocabulary file line {line}: {reason}")]
    VocabFormat { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercased, punctuation-free words with adjacent repeats collapsed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedText {
    words: Vec<String>,
}

impl NormalizedText {
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn join(&self) -> String {
        self.words.join(" ")
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join())
    }
}

/// Normalize a caption: lowercase, split on Unicode whitespace, drop every
/// non-alphanumeric character, drop empty words and collapse adjacent
/// duplicates.
pub fn normalize(text: &str) -> NormalizedText {
    let mut words: Vec<String> = Vec::new();
    for raw in text.split_whitespace() {
        let word: String = raw
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect();
        if word.is_empty() || words.last() == Some(&word) {
            continue;
        }
        words.push(word);
    }
    NormalizedText { words }
}

/// A sequence of token ids, truncated to the producing tokenizer's `max_len`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenIdList(pub Vec<u32>);

impl TokenIdList {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u32>> for TokenIdList {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

/// Word vocabulary with reserved `PAD` and `UNK` ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, u32>,
    // id - 2 -> word
    words: Vec<String>,
}

impl Vocabulary {
    /// Number of ids including the two special ones.
    pub fn size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn id_of(&self, word: &str) -> Option<u32> {
        self.word_to_id.get(word).copied()
    }

    pub fn word_of(&self, id: u32) -> Option<&str> {
        let idx = (id as usize).checked_sub(2)?;
        self.words.get(idx).map(String::as_str)
    }

    /// Non-special entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u32)> {
        self.words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i as u32 + 2))
    }

    fn from_words(words: Vec<String>) -> Self {
        let word_to_id = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + 2))
            .collect();
        Self { word_to_id, words }
    }

    /// Writes one `word<TAB>id` line per non-special entry, sorted by id.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), TokenizeError> {
        for (word, id) in self.entries() {
            writeln!(out, "{word}\t{id}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, TokenizeError> {
        let mut by_id: Vec<Option<String>> = Vec::new();
        let mut seen_words: HashMap<String, usize> = HashMap::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| TokenizeError::VocabFormat {
                line: lineno,
                reason,
            };
            let (word, id) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected `word<TAB>id`".into()))?;
            let id: u32 = id
                .parse()
                .map_err(|_| bad(format!("invalid id `{id}`")))?;
            if id < 2 {
                return Err(bad(format!("id {id} is reserved")));
            }
            if word.is_empty() {
                return Err(bad("empty word".into()));
            }
            if let Some(prev) = seen_words.insert(word.to_string(), lineno) {
                return Err(bad(format!("duplicate word `{word}` (first on line {prev})")));
            }
            let slot = id as usize - 2;
            if slot >= by_id.len() {
                by_id.resize(slot + 1, None);
            }
            if by_id[slot].is_some() {
                return Err(bad(format!("duplicate id {id}")));
            }
            by_id[slot] = Some(word.to_string());
        }
        let mut words = Vec::with_capacity(by_id.len());
        for (slot, w) in by_id.into_iter().enumerate() {
            match w {
                Some(w) => words.push(w),
                None => {
                    return Err(TokenizeError::VocabFormat {
                        line: 0,
                        reason: format!("ids are not dense: {} missing", slot + 2),
                    })
                }
            }
        }
        Ok(Self::from_words(words))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizeError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizeError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Keeps the `size - 2` most frequent words. Ids follow descending frequency,
/// ties broken lexicographically.
pub fn train_vocab(corpus: &[NormalizedText], size: usize) -> Result<Vocabulary, TokenizeError> {
    if size < 3 {
        return Err(TokenizeError::InvalidVocabSize(size));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for text in corpus {
        for w in text.words() {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(TokenizeError::CorpusEmpty);
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(size - 2);
    Ok(Vocabulary::from_words(
        ranked.into_iter().map(|(w, _)| w.to_string()).collect(),
    ))
}

/// Tokenizer A: vocabulary lookup with `UNK` fallback, head-keep truncation.
pub fn tokenize_a(text: &NormalizedText, vocab: &Vocabulary, max_len: usize) -> TokenIdList {
    TokenIdList(
        text.words()
            .iter()
            .take(max_len)
            .map(|w| vocab.id_of(w).unwrap_or(UNK_ID))
            .collect(),
    )
}

/// Bucket of a single word under the hashing tokenizer.
#[inline]
pub fn hash_word(word: &str, num_buckets: u64, seed: u64) -> u32 {
    let mut h = Fnv1a64::new();
    h.write(&seed.to_le_bytes());
    h.write(word.as_bytes());
    (h.finish() % num_buckets) as u32
}

/// Tokenizer B: `FNV1a64(seed_le ‖ word) mod num_buckets` per word.
pub fn tokenize_b(text: &NormalizedText, num_buckets: u64, seed: u64, max_len: usize) -> TokenIdList {
    assert!(num_buckets >= 2, "num_buckets must be at least 2");
    TokenIdList(
        text.words()
            .iter()
            .take(max_len)
            .map(|w| hash_word(w, num_buckets, seed))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct WordTokenizer {
    vocab: Vocabulary,
    max_len: usize,
}

impl WordTokenizer {
    pub fn new(vocab: Vocabulary, max_len: usize) -> Result<Self, TokenizeError> {
        if max_len == 0 {
            return Err(TokenizeError::InvalidMaxLen);
        }
        Ok(Self { vocab, max_len })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingTokenizer {
    num_buckets: u64,
    seed: u64,
    max_len: usize,
}

impl HashingTokenizer {
    pub fn new(num_buckets: u64, seed: u64, max_len: usize) -> Result<Self, TokenizeError> {
        if num_buckets < 2 || num_buckets > u64::from(u32::MAX) + 1 {
            return Err(TokenizeError::InvalidBuckets(num_buckets));
        }
        if max_len == 0 {
            return Err(TokenizeError::InvalidMaxLen);
        }
        Ok(Self {
            num_buckets,
            seed,
            max_len,
        })
    }
}

/// Either tokenizer family behind one interface.
#[derive(Debug, Clone)]
pub enum Tokenizer {
    Word(WordTokenizer),
    Hashing(HashingTokenizer),
}

impl Tokenizer {
    pub fn tokenize(&self, text: &NormalizedText) -> TokenIdList {
        match self {
            Tokenizer::Word(t) => tokenize_a(text, &t.vocab, t.max_len),
            Tokenizer::Hashing(t) => tokenize_b(text, t.num_buckets, t.seed, t.max_len),
        }
    }

    /// Exclusive upper bound on produced ids; sizes the token embedding tables.
    pub fn id_space(&self) -> usize {
        match self {
            Tokenizer::Word(t) => t.vocab.size(),
            Tokenizer::Hashing(t) => t.num_buckets as usize,
        }
    }

    /// Short label used in reports ("A" / "B").
    pub fn label(&self) -> &'static str {
        match self {
            Tokenizer::Word(_) => "A",
            Tokenizer::Hashing(_) => "B",
        }
    }
}
