//! Utterance preprocessing: lowercasing, contraction expansion, carrier
//! phrase stripping, stopword deletion, whitespace tokenization.
//!
//! The rule lists ship as editable text resources; the embedded defaults
//! cover common contractions, question carrier phrases, and a small set of
//! low-content verbs. Application order is fixed: contractions, then
//! carrier phrases (longest prefix, repeated until no prefix matches, which
//! keeps the whole pipeline idempotent), then stopwords.

use crate::{Error, Result};
use std::collections::HashSet;
use std::path::Path;

const DEFAULT_CONTRACTIONS: &str = include_str!("../../resources/contractions.tsv");
const DEFAULT_CARRIERS: &str = include_str!("../../resources/carrier_phrases.txt");
const DEFAULT_STOPWORDS: &str = include_str!("../../resources/stopwords.txt");

/// A tokenized utterance: lowercase words, possibly empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
}

impl TokenSeq {
    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PreprocessRules {
    contractions: Vec<(String, Vec<String>)>,
    carrier_phrases: Vec<Vec<String>>,
    stopwords: HashSet<String>,
}

impl Default for PreprocessRules {
    fn default() -> Self {
        PreprocessRules::parse(DEFAULT_CONTRACTIONS, DEFAULT_CARRIERS, DEFAULT_STOPWORDS)
            .expect("embedded resources parse")
    }
}

impl PreprocessRules {
    pub fn parse(contractions: &str, carriers: &str, stopwords: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in contractions.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (from, to) = line.split_once('\t').ok_or_else(|| {
                Error::Schema(format!(
                    "contraction line {} lacks a tab separator: {line:?}",
                    i + 1
                ))
            })?;
            pairs.push((
                from.trim().to_lowercase(),
                to.split_whitespace().map(str::to_lowercase).collect(),
            ));
        }
        let phrases = carriers
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_whitespace().map(str::to_lowercase).collect())
            .collect();
        let stop = stopwords
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().to_lowercase())
            .collect();
        Ok(PreprocessRules {
            contractions: pairs,
            carrier_phrases: phrases,
            stopwords: stop,
        })
    }

    pub fn from_files(
        contractions: impl AsRef<Path>,
        carriers: impl AsRef<Path>,
        stopwords: impl AsRef<Path>,
    ) -> Result<Self> {
        PreprocessRules::parse(
            &std::fs::read_to_string(contractions)?,
            &std::fs::read_to_string(carriers)?,
            &std::fs::read_to_string(stopwords)?,
        )
    }

    /// Rules that only lowercase and tokenize.
    pub fn none() -> Self {
        PreprocessRules {
            contractions: Vec::new(),
            carrier_phrases: Vec::new(),
            stopwords: HashSet::new(),
        }
    }

    pub fn carrier_phrases(&self) -> &[Vec<String>] {
        &self.carrier_phrases
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    fn expand(&self, token: &str) -> Option<&[String]> {
        self.contractions
            .iter()
            .find(|(from, _)| from == token)
            .map(|(_, to)| to.as_slice())
    }

    /// Length of the longest carrier phrase prefixing `tokens`, if any.
    fn carrier_prefix(&self, tokens: &[String]) -> Option<usize> {
        self.carrier_phrases
            .iter()
            .filter(|p| !p.is_empty() && tokens.len() >= p.len() && tokens[..p.len()] == p[..])
            .map(|p| p.len())
            .max()
    }
}

/// Normalize an utterance into tokens. Empty output is allowed.
pub fn preprocess(text: &str, rules: &PreprocessRules) -> TokenSeq {
    let mut tokens: Vec<String> = text
        .to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect();

    // Contractions, iterated to a fixpoint so that chained rules stay
    // idempotent; the depth cap guards against cyclic rule files.
    for _ in 0..8 {
        let mut changed = false;
        let mut next = Vec::with_capacity(tokens.len());
        for t in &tokens {
            match rules.expand(t) {
                Some(to) => {
                    changed = true;
                    next.extend(to.iter().cloned());
                }
                None => next.push(t.clone()),
            }
        }
        tokens = next;
        if !changed {
            break;
        }
    }

    while let Some(n) = rules.carrier_prefix(&tokens) {
        tokens.drain(..n);
    }

    tokens.retain(|t| !rules.stopwords.contains(t));
    TokenSeq { tokens }
}
