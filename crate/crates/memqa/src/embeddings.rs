//! Pretrained word vectors and padded feature encoding.
//!
//! Word vectors load from the text `.vec` format: a `count dim` header line
//! followed by `word f_1 ... f_dim` lines. Lookup is total — out-of-vocabulary
//! words resolve through an [`OovPolicy`]. The hash-bucket policy doubles as
//! a standalone source of deterministic pseudo-random vectors for synthetic
//! corpora, via [`EmbeddingTable::hashed`].

use crate::corpus::{preprocess, PreprocessRules, QAGroup, TokenSeq};
use crate::ndcore::{RngStream, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// How lookups of unknown words resolve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OovPolicy {
    /// Unknown words map to the zero vector.
    Zero,
    /// Unknown words share deterministic random vectors, one per bucket.
    HashBucket { buckets: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    oov: OovPolicy,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov: OovPolicy) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
            oov,
        }
    }

    /// A table with no stored vectors: every word resolves through hash
    /// buckets. Used when no pretrained vectors are available.
    pub fn hashed(dim: usize, buckets: usize, seed: u64) -> Self {
        EmbeddingTable::new(dim, OovPolicy::HashBucket { buckets, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    pub fn insert(&mut self, word: impl Into<String>, vec: Vec<f64>) -> Result<()> {
        if vec.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector of length {} in a {}-dimensional table",
                vec.len(),
                self.dim
            )));
        }
        self.vectors.insert(word.into(), vec);
        Ok(())
    }

    /// Total lookup: stored vector, or the OOV policy's resolution.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        if let Some(v) = self.vectors.get(word) {
            return v.clone();
        }
        match self.oov {
            OovPolicy::Zero => vec![0.0; self.dim],
            OovPolicy::HashBucket { buckets, seed } => {
                let bucket = fnv1a(word.as_bytes()) % buckets.max(1) as u64;
                let mut rng = RngStream::new(seed ^ bucket.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                (0..self.dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
            }
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Parse a `.vec` file. Duplicate words keep the last occurrence.
pub fn load_vec_table(path: impl AsRef<Path>, oov: OovPolicy) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `count dim` header"))??;
    let mut it = header.split_whitespace();
    let (count, dim): (usize, usize) = match (it.next(), it.next(), it.next()) {
        (Some(c), Some(d), None) => (
            c.parse()
                .map_err(|_| Error::parse(path, 1, format!("bad count {c:?}")))?,
            d.parse()
                .map_err(|_| Error::parse(path, 1, format!("bad dim {d:?}")))?,
        ),
        _ => return Err(Error::parse(path, 1, format!("bad header {header:?}"))),
    };
    if dim == 0 {
        return Err(Error::parse(path, 1, "dimension must be ≥ 1"));
    }
    let mut table = EmbeddingTable::new(dim, oov);
    let mut seen = 0usize;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "empty line"))?;
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad float {p:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} floats for {word:?}, found {}", values.len()),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("non-finite value {bad} for {word:?}"),
            ));
        }
        table.vectors.insert(word.to_string(), values);
        seen += 1;
    }
    if seen != count {
        return Err(Error::parse(
            path,
            1,
            format!("header declares {count} words, file contains {seen}"),
        ));
    }
    Ok(table)
}

/// A padded `L_max × d` matrix of word vectors with its validity mask.
/// Rows at and beyond `length` hold the zero padding vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
    pub length: usize,
    pub mask: Vec<bool>,
}

impl FeatureMatrix {
    pub fn max_len(&self) -> usize {
        self.mask.len()
    }
}

/// Encode tokens into a feature matrix, truncating beyond `max_len`.
pub fn encode_tokens(tokens: &TokenSeq, table: &EmbeddingTable, max_len: usize) -> FeatureMatrix {
    let d = table.dim();
    let length = tokens.len().min(max_len);
    let mut values = Tensor::zeros(&[max_len, d]);
    for (r, tok) in tokens.tokens.iter().take(length).enumerate() {
        values.row_mut(r).copy_from_slice(&table.lookup(tok));
    }
    let mask = (0..max_len).map(|r| r < length).collect();
    FeatureMatrix {
        values,
        length,
        mask,
    }
}

/// Reserved padding character id.
pub const CHAR_PAD: usize = 0;
/// Reserved unknown-character id.
pub const CHAR_UNK: usize = 1;

/// Closed character vocabulary with reserved PAD and UNK ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    ids: HashMap<char, usize>,
}

impl CharVocab {
    /// Build from every character of the corpus questions and memories,
    /// in sorted order for determinism.
    pub fn build(groups: &[QAGroup], rules: &PreprocessRules) -> Self {
        let mut set = std::collections::BTreeSet::new();
        for g in groups {
            for tok in &preprocess(&g.question, rules).tokens {
                set.extend(tok.chars());
            }
            for m in &g.memories {
                for tok in &preprocess(&m.text, rules).tokens {
                    set.extend(tok.chars());
                }
            }
        }
        CharVocab::from_chars(set.into_iter())
    }

    pub fn from_chars(chars: impl Iterator<Item = char>) -> Self {
        let chars: Vec<char> = chars.collect();
        let ids = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + 2))
            .collect();
        CharVocab { chars, ids }
    }

    /// Vocabulary size including PAD and UNK.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn id(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(CHAR_UNK)
    }

    /// The non-reserved characters in id order, for serialization.
    pub fn alphabet(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn from_alphabet(s: &str) -> Self {
        CharVocab::from_chars(s.chars())
    }
}

/// Character ids per word position: `max_len` rows of `max_word_len` ids,
/// padded with [`CHAR_PAD`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharTensor {
    pub ids: Vec<Vec<usize>>,
    /// Character count of each word, clamped to `max_word_len`; 0 for padding rows.
    pub word_lens: Vec<usize>,
}

/// Encode per-word character ids, truncating words at `max_word_len`.
pub fn encode_chars(
    tokens: &TokenSeq,
    vocab: &CharVocab,
    max_len: usize,
    max_word_len: usize,
) -> CharTensor {
    let mut ids = vec![vec![CHAR_PAD; max_word_len]; max_len];
    let mut word_lens = vec![0usize; max_len];
    for (r, tok) in tokens.tokens.iter().take(max_len).enumerate() {
        let mut n = 0;
        for (c, ch) in tok.chars().take(max_word_len).enumerate() {
            ids[r][c] = vocab.id(ch);
            n += 1;
        }
        word_lens[r] = n;
    }
    CharTensor { ids, word_lens }
}

/// A fully encoded utterance: word features plus optional character ids.
#[derive(Clone, Debug)]
pub struct EncodedUtterance {
    pub words: FeatureMatrix,
    pub chars: Option<CharTensor>,
}

/// An encoded QA group ready for model forward passes.
#[derive(Clone, Debug)]
pub struct EncodedGroup {
    pub id: String,
    pub question: EncodedUtterance,
    pub memories: Vec<EncodedUtterance>,
    pub labels: Vec<bool>,
}

/// Bundles everything needed to turn raw text into model inputs.
pub struct Encoder<'a> {
    pub table: &'a EmbeddingTable,
    pub char_vocab: Option<&'a CharVocab>,
    pub rules: &'a PreprocessRules,
    pub max_len: usize,
    pub max_word_len: usize,
}

impl Encoder<'_> {
    pub fn encode_text(&self, text: &str) -> EncodedUtterance {
        let tokens = preprocess(text, self.rules);
        self.encode_tokens(&tokens)
    }

    pub fn encode_tokens(&self, tokens: &TokenSeq) -> EncodedUtterance {
        EncodedUtterance {
            words: encode_tokens(tokens, self.table, self.max_len),
            chars: self
                .char_vocab
                .map(|v| encode_chars(tokens, v, self.max_len, self.max_word_len)),
        }
    }

    pub fn encode_group(&self, group: &QAGroup) -> EncodedGroup {
        EncodedGroup {
            id: group.id.clone(),
            question: self.encode_text(&group.question),
            memories: group
                .memories
                .iter()
                .map(|m| self.encode_text(&m.text))
                .collect(),
            labels: group.labels(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn write_vec(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_fixture() {
        let f = write_vec("2 3\na 1 0 0\nb 0 1 0\n");
        let t = load_vec_table(f.path(), OovPolicy::Zero).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.lookup("a"), vec![1.0, 0.0, 0.0]);
        assert_eq!(t.lookup("b"), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn oov_zero_policy() {
        let f = write_vec("1 3\na 1 0 0\n");
        let t = load_vec_table(f.path(), OovPolicy::Zero).unwrap();
        assert_eq!(t.lookup("zzz"), vec![0.0; 3]);
    }

    #[test]
    fn arity_mismatch_names_the_line() {
        let f = write_vec("2 3\na 1 0 0\nb 0 1\n");
        match load_vec_table(f.path(), OovPolicy::Zero) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_value_is_rejected() {
        let f = write_vec("1 2\na 1 inf\n");
        assert!(load_vec_table(f.path(), OovPolicy::Zero).is_err());
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let f = write_vec("3 2\na 1 1\nb 2 2\n");
        assert!(load_vec_table(f.path(), OovPolicy::Zero).is_err());
    }

    #[test]
    fn duplicate_words_keep_the_last() {
        let f = write_vec("2 2\na 1 1\na 2 2\n");
        let t = load_vec_table(f.path(), OovPolicy::Zero).unwrap();
        assert_eq!(t.lookup("a"), vec![2.0, 2.0]);
    }

    #[test]
    fn hash_bucket_is_deterministic_and_dim_correct() {
        let t = EmbeddingTable::hashed(16, 64, 9);
        let a = t.lookup("hello");
        assert_eq!(a.len(), 16);
        assert_eq!(a, t.lookup("hello"));
        assert_ne!(a, t.lookup("world"));
        // a fresh table with the same seed agrees
        assert_eq!(a, EmbeddingTable::hashed(16, 64, 9).lookup("hello"));
    }

    fn toks(words: &[&str]) -> TokenSeq {
        TokenSeq {
            tokens: words.iter().map(|w| w.to_string()).collect(),
        }
    }

    #[test]
    fn encode_pads_and_masks() {
        let f = write_vec("2 3\na 1 0 0\nb 0 1 0\n");
        let t = load_vec_table(f.path(), OovPolicy::Zero).unwrap();
        let fm = encode_tokens(&toks(&["a", "b", "a"]), &t, 10);
        assert_eq!(fm.values.shape(), &[10, 3]);
        assert_eq!(fm.length, 3);
        assert_eq!(fm.mask[..3], [true, true, true]);
        assert!(fm.mask[3..].iter().all(|&m| !m));
        for r in 3..10 {
            assert!(fm.values.row(r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encode_empty_tokens_is_all_padding() {
        let t = EmbeddingTable::hashed(4, 8, 0);
        let fm = encode_tokens(&toks(&[]), &t, 5);
        assert_eq!(fm.length, 0);
        assert!(fm.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_truncates_beyond_max_len() {
        let t = EmbeddingTable::hashed(4, 8, 0);
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let fm = encode_tokens(&toks(&refs), &t, 10);
        assert_eq!(fm.length, 10);
    }

    #[test]
    fn char_encoding_pads_and_truncates() {
        let vocab = CharVocab::from_chars("abcst".chars());
        let ct = encode_chars(&toks(&["cats"]), &vocab, 2, 8);
        assert_eq!(ct.word_lens, vec![4, 0]);
        assert_eq!(
            ct.ids[0][..4],
            [vocab.id('c'), vocab.id('a'), vocab.id('t'), vocab.id('s')]
        );
        assert_eq!(ct.ids[0][4..], [CHAR_PAD; 4]);

        let long = encode_chars(&toks(&["abcabcabcabc"]), &vocab, 1, 8);
        assert_eq!(long.word_lens[0], 8);
    }

    #[test]
    fn unknown_chars_map_to_unk() {
        let vocab = CharVocab::from_chars("ab".chars());
        let ct = encode_chars(&toks(&["axb"]), &vocab, 1, 8);
        assert_eq!(ct.ids[0][1], CHAR_UNK);
    }

    #[test]
    fn char_vocab_round_trips_through_alphabet() {
        let vocab = CharVocab::from_chars("abz'".chars());
        let again = CharVocab::from_alphabet(&vocab.alphabet());
        assert_eq!(vocab, again);
    }

    proptest! {
        /// Lookup totality: any string encodes without failure under both policies.
        #[test]
        fn lookup_is_total(word in "\\PC{0,12}") {
            let zero = EmbeddingTable::new(7, OovPolicy::Zero);
            prop_assert_eq!(zero.lookup(&word).len(), 7);
            let hashed = EmbeddingTable::hashed(7, 32, 1);
            prop_assert_eq!(hashed.lookup(&word).len(), 7);
        }

        /// Masked dot products equal dot products on the unpadded rows.
        #[test]
        fn mask_consistency(words in proptest::collection::vec("[a-z]{1,5}", 0..14)) {
            let table = EmbeddingTable::hashed(6, 32, 2);
            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            let t = toks(&refs);
            let fm = encode_tokens(&t, &table, 10);
            let probe: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut masked = 0.0;
            for r in 0..fm.max_len() {
                if fm.mask[r] {
                    masked += crate::ndcore::dot(fm.values.row(r), &probe);
                }
            }
            let mut unpadded = 0.0;
            for tok in t.tokens.iter().take(10) {
                unpadded += crate::ndcore::dot(&table.lookup(tok), &probe);
            }
            prop_assert!((masked - unpadded).abs() < 1e-9);
        }
    }
}
