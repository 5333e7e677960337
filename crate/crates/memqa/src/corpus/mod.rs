//! QA-group data model, JSONL I/O, corpus statistics, and the synthetic
//! corpus generator.
//!
//! The on-disk format is JSON Lines: one object per line,
//! `{"id": ..., "question": ..., "memories": [{"text": ..., "relevant": ...}]}`.

mod preprocess;
mod synth;

pub use preprocess::{preprocess, PreprocessRules, TokenSeq};
pub use synth::{gen_synthetic, SynthSpec};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// A stored user utterance with its relevance label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory {
    pub text: String,
    pub relevant: bool,
}

/// One question plus every candidate memory; the unit of F1 evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAGroup {
    pub id: String,
    pub question: String,
    pub memories: Vec<Memory>,
}

impl QAGroup {
    pub fn labels(&self) -> Vec<bool> {
        self.memories.iter().map(|m| m.relevant).collect()
    }

    fn validate(&self, path: &Path, line: usize) -> Result<()> {
        if self.memories.is_empty() {
            return Err(Error::parse(path, line, "group must contain ≥1 memory"));
        }
        if self.question.trim().is_empty() {
            return Err(Error::parse(path, line, "question must be non-empty"));
        }
        if let Some(i) = self.memories.iter().position(|m| m.text.trim().is_empty()) {
            return Err(Error::parse(
                path,
                line,
                format!("memory {i} has empty text"),
            ));
        }
        Ok(())
    }
}

/// Load a QA JSONL corpus, preserving file order and labels exactly.
pub fn load_qa_jsonl(path: impl AsRef<Path>) -> Result<Vec<QAGroup>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut groups = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let group: QAGroup = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        group.validate(path, lineno)?;
        if !seen.insert(group.id.clone()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate group id {:?}", group.id),
            ));
        }
        groups.push(group);
    }
    Ok(groups)
}

/// Write a corpus as JSON Lines; `load_qa_jsonl` reproduces it exactly.
pub fn save_qa_jsonl(groups: &[QAGroup], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for g in groups {
        serde_json::to_writer(&mut out, g).map_err(|e| Error::Schema(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Shape statistics of a corpus, in the style of a dataset summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub group_count: usize,
    pub answer_count: usize,
    pub min_memories: usize,
    pub max_memories: usize,
    pub mean_memories: f64,
    pub stddev_memories: f64,
    /// Per-group relevant fraction averaged over groups, as a percentage.
    pub percent_relevant: f64,
    pub mean_question_tokens_raw: f64,
    pub mean_answer_tokens_raw: f64,
    pub mean_question_tokens_pre: f64,
    pub mean_answer_tokens_pre: f64,
}

/// Compute corpus statistics. Percent-relevant is computed per group and
/// then averaged over groups, so duplicating a group leaves it unchanged.
pub fn corpus_stats(groups: &[QAGroup], rules: &PreprocessRules) -> Result<CorpusStats> {
    if groups.is_empty() {
        return Err(Error::Schema("cannot compute stats of an empty corpus".into()));
    }
    let counts: Vec<usize> = groups.iter().map(|g| g.memories.len()).collect();
    let n = groups.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let percent = groups
        .iter()
        .map(|g| {
            let rel = g.memories.iter().filter(|m| m.relevant).count();
            rel as f64 / g.memories.len() as f64
        })
        .sum::<f64>()
        / n
        * 100.0;

    let raw_tokens = |s: &str| s.split_whitespace().count() as f64;
    let mean_q_raw = groups.iter().map(|g| raw_tokens(&g.question)).sum::<f64>() / n;
    let mean_q_pre = groups
        .iter()
        .map(|g| preprocess(&g.question, rules).tokens.len() as f64)
        .sum::<f64>()
        / n;
    let answers = groups.iter().flat_map(|g| &g.memories).count() as f64;
    let mean_a_raw = groups
        .iter()
        .flat_map(|g| &g.memories)
        .map(|m| raw_tokens(&m.text))
        .sum::<f64>()
        / answers;
    let mean_a_pre = groups
        .iter()
        .flat_map(|g| &g.memories)
        .map(|m| preprocess(&m.text, rules).tokens.len() as f64)
        .sum::<f64>()
        / answers;

    Ok(CorpusStats {
        group_count: groups.len(),
        answer_count: answers as usize,
        min_memories: *counts.iter().min().expect("non-empty"),
        max_memories: *counts.iter().max().expect("non-empty"),
        mean_memories: mean,
        stddev_memories: var.sqrt(),
        percent_relevant: percent,
        mean_question_tokens_raw: mean_q_raw,
        mean_answer_tokens_raw: mean_a_raw,
        mean_question_tokens_pre: mean_q_pre,
        mean_answer_tokens_pre: mean_a_pre,
    })
}

impl CorpusStats {
    /// Plain-text summary table.
    pub fn render(&self) -> String {
        format!(
            "groups            {}\n\
             answers           {}\n\
             memories/group    min {} / max {} / mean {:.2} / stddev {:.2}\n\
             percent relevant  {:.2}%\n\
             question tokens   raw {:.2} / preprocessed {:.2}\n\
             answer tokens     raw {:.2} / preprocessed {:.2}\n",
            self.group_count,
            self.answer_count,
            self.min_memories,
            self.max_memories,
            self.mean_memories,
            self.stddev_memories,
            self.percent_relevant,
            self.mean_question_tokens_raw,
            self.mean_question_tokens_pre,
            self.mean_answer_tokens_raw,
            self.mean_answer_tokens_pre,
        )
    }
}
