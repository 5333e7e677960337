//! The model zoo.
//!
//! Deterministic cosine baselines score pairs directly; the probabilistic
//! models (ChrWrdFF, TEFF, TEFFCH) build autodiff graphs mapping a
//! question–memory pair to a distribution over {irrelevant, relevant}.
//! Every model scores pairs independently, so the score of `(q, m)` never
//! depends on the other memories in the group.

mod charcnn;
mod cosine;
mod feedforward;

pub use charcnn::char_cnn_embed;
pub use cosine::{aggregate, coattention, cosine_score, cosine_sim, AggKind};
pub use feedforward::{forward_pair, group_forward};

use crate::embeddings::EncodedGroup;
use crate::ndcore::{glorot_uniform, Graph, RngStream, Tensor, Var};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    CosineMax,
    CosineSum,
    CosineAvg,
    CosineCoatt,
    Chrwrdff,
    Teff,
    Teffch,
}

impl Architecture {
    pub fn is_probabilistic(self) -> bool {
        matches!(
            self,
            Architecture::Chrwrdff | Architecture::Teff | Architecture::Teffch
        )
    }

    pub fn uses_chars(self) -> bool {
        matches!(self, Architecture::Chrwrdff | Architecture::Teffch)
    }

    pub fn agg_kind(self) -> Option<AggKind> {
        match self {
            Architecture::CosineMax => Some(AggKind::Max),
            Architecture::CosineSum => Some(AggKind::Sum),
            Architecture::CosineAvg => Some(AggKind::Avg),
            Architecture::CosineCoatt => Some(AggKind::Coatt),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::CosineMax => "cosine-max",
            Architecture::CosineSum => "cosine-sum",
            Architecture::CosineAvg => "cosine-avg",
            Architecture::CosineCoatt => "cosine-coatt",
            Architecture::Chrwrdff => "chrwrdff",
            Architecture::Teff => "teff",
            Architecture::Teffch => "teffch",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cosine-max" => Architecture::CosineMax,
            "cosine-sum" => Architecture::CosineSum,
            "cosine-avg" => Architecture::CosineAvg,
            "cosine-coatt" => Architecture::CosineCoatt,
            "chrwrdff" => Architecture::Chrwrdff,
            "teff" => Architecture::Teff,
            "teffch" => Architecture::Teffch,
            other => return Err(Error::Config(format!("unknown architecture {other:?}"))),
        })
    }
}

/// Character CNN hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharCnnConfig {
    pub kernel_widths: Vec<usize>,
    /// Filters per kernel width.
    pub filters: usize,
    /// Dimension of the projected character embedding appended to each word vector.
    pub out_dim: usize,
    /// Dimension of the learned per-character embeddings.
    pub char_dim: usize,
    /// Character vocabulary size including PAD and UNK.
    pub char_vocab_size: usize,
}

impl Default for CharCnnConfig {
    fn default() -> Self {
        CharCnnConfig {
            kernel_widths: vec![1, 2],
            filters: 128,
            out_dim: 108,
            char_dim: 16,
            char_vocab_size: 0, // filled in once the corpus vocabulary is known
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    /// Pretrained word-vector dimension `d`.
    pub embed_dim: usize,
    /// Encoder width `h`.
    pub hidden: usize,
    /// Encoder depth `N`.
    pub layers: usize,
    pub dropout: f64,
    /// Hidden width of the ChrWrdFF joint layer.
    pub chrwrdff_hidden: usize,
    pub charcnn: Option<CharCnnConfig>,
    /// Maximum utterance length in tokens.
    pub max_len: usize,
    /// Maximum word length in characters.
    pub max_word_len: usize,
}

impl ModelConfig {
    /// The published configuration for an architecture: 300-d vectors,
    /// 2-layer encoders of 694 (TEFF) or 736 (TEFFCH) units, kernels {1,2}
    /// with 128 filters each and a 108-d projection.
    pub fn paper(arch: Architecture) -> Self {
        ModelConfig {
            arch,
            embed_dim: 300,
            hidden: if arch == Architecture::Teffch { 736 } else { 694 },
            layers: 2,
            dropout: 0.1,
            chrwrdff_hidden: 256,
            charcnn: arch.uses_chars().then(CharCnnConfig::default),
            max_len: 10,
            max_word_len: 8,
        }
    }

    /// Word-vector dimension as seen by the encoder: the pretrained vector
    /// plus the character embedding when one is configured.
    pub fn input_dim(&self) -> usize {
        match (&self.charcnn, self.arch.uses_chars()) {
            (Some(c), true) => self.embed_dim + c.out_dim,
            _ => self.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.max_len == 0 || self.max_word_len == 0 {
            return Err(Error::Config(
                "embed_dim, max_len and max_word_len must be ≥ 1".into(),
            ));
        }
        if self.arch.is_probabilistic() && self.arch != Architecture::Chrwrdff && self.hidden == 0 {
            return Err(Error::Config("hidden units must be ≥ 1".into()));
        }
        if self.arch.is_probabilistic() && self.layers == 0 && self.arch != Architecture::Chrwrdff {
            return Err(Error::Config("layer count must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.arch.uses_chars() {
            let c = self.charcnn.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "architecture {} requires a charcnn configuration",
                    self.arch.name()
                ))
            })?;
            if c.kernel_widths.is_empty() || c.filters == 0 || c.out_dim == 0 || c.char_dim == 0 {
                return Err(Error::Config("charcnn dimensions must be ≥ 1".into()));
            }
            if c.char_vocab_size < 2 {
                return Err(Error::Config(
                    "charcnn vocabulary must include PAD and UNK".into(),
                ));
            }
            if let Some(&w) = c.kernel_widths.iter().find(|&&w| w == 0 || w > self.max_word_len) {
                return Err(Error::Config(format!(
                    "kernel width {w} outside [1, max_word_len={}]",
                    self.max_word_len
                )));
            }
        }
        Ok(())
    }
}

/// Named parameter tensors in schema order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn empty() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    /// Initialize from a schema: 1-D tensors (biases) start at zero, others
    /// uniform(±√(6/(fan_in+fan_out))).
    pub fn init(schema: &[(String, Vec<usize>)], rng: &mut RngStream) -> Self {
        let entries = schema
            .iter()
            .map(|(name, shape)| {
                let t = if shape.len() == 1 {
                    Tensor::zeros(shape)
                } else {
                    let (fan_in, fan_out) = fans(shape);
                    glorot_uniform(shape, fan_in, fan_out, rng)
                };
                (name.clone(), t)
            })
            .collect();
        ParamSet { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.entries
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect()
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        ParamSet { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [a, b] => (*a, *b),
        // conv kernels [k, c, n]: receptive field × channels in, filters out
        [k, c, n] => (k * c, *n),
        other => {
            let total: usize = other.iter().product();
            (total, total)
        }
    }
}

/// Parameter names and shapes for a configuration, in canonical order.
pub fn param_schema(cfg: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    cfg.validate()?;
    let mut schema = Vec::new();
    if cfg.arch.uses_chars() {
        let c = cfg.charcnn.as_ref().expect("validated");
        schema.push(("char.emb".to_string(), vec![c.char_vocab_size, c.char_dim]));
        for &k in &c.kernel_widths {
            schema.push((format!("char.conv{k}.w"), vec![k, c.char_dim, c.filters]));
            schema.push((format!("char.conv{k}.b"), vec![c.filters]));
        }
        let concat = c.kernel_widths.len() * c.filters;
        schema.push(("char.proj.w".to_string(), vec![concat, c.out_dim]));
        schema.push(("char.proj.b".to_string(), vec![c.out_dim]));
    }
    match cfg.arch {
        Architecture::Chrwrdff => {
            let d = cfg.input_dim();
            schema.push(("ff.l1.w".to_string(), vec![d, cfg.chrwrdff_hidden]));
            schema.push(("ff.l1.b".to_string(), vec![cfg.chrwrdff_hidden]));
            schema.push(("ff.out.w".to_string(), vec![cfg.chrwrdff_hidden, 2]));
            schema.push(("ff.out.b".to_string(), vec![2]));
        }
        Architecture::Teff | Architecture::Teffch => {
            let mut in_dim = cfg.input_dim();
            for l in 0..cfg.layers {
                schema.push((format!("enc.l{l}.w"), vec![in_dim, cfg.hidden]));
                schema.push((format!("enc.l{l}.b"), vec![cfg.hidden]));
                in_dim = cfg.hidden;
            }
            schema.push(("out.w".to_string(), vec![4 * cfg.hidden, 2]));
            schema.push(("out.b".to_string(), vec![2]));
        }
        _ => {}
    }
    Ok(schema)
}

/// Parameters bound into a graph, addressable by name.
pub struct ParamBinding {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamBinding {
    pub fn bind(g: &mut Graph, params: &ParamSet) -> Self {
        let mut names = Vec::with_capacity(params.len());
        let mut vars = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            names.push(name.to_string());
            vars.push(g.param(t.clone()));
        }
        ParamBinding { names, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name:?} not in schema"));
        self.vars[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Aligned gradients for every bound parameter (zeros where unreached).
    pub fn gradients(&self, g: &Graph, grads: &crate::ndcore::Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| grads.get_or_zero(v, g.value(v).shape()))
            .collect()
    }
}

/// Per-group model output: probabilities for the learned models, raw cosine
/// scores in `[-1, 1]` for the deterministic baselines.
#[derive(Clone, Debug, PartialEq)]
pub enum GroupScores {
    Probs(Vec<[f64; 2]>),
    Cosine(Vec<f64>),
}

impl GroupScores {
    /// Confidence that each memory is relevant, in `[0, 1]`. Cosine scores
    /// map through `(s+1)/2` so one threshold mechanism serves both model
    /// families.
    pub fn relevance(&self) -> Vec<f64> {
        match self {
            GroupScores::Probs(p) => p.iter().map(|pr| pr[1]).collect(),
            GroupScores::Cosine(s) => s.iter().map(|&v| (v + 1.0) / 2.0).collect(),
        }
    }
}

/// A configured architecture with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let schema = param_schema(&config)?;
        Ok(Model {
            params: ParamSet::init(&schema, rng),
            config,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.total_params()
    }

    /// Score every memory of a group in evaluation mode (dropout off).
    pub fn score_group(&self, group: &EncodedGroup) -> Result<GroupScores> {
        if let Some(kind) = self.config.arch.agg_kind() {
            let scores = group
                .memories
                .iter()
                .map(|m| cosine_score(&group.question.words, &m.words, kind))
                .collect::<Result<_>>()?;
            return Ok(GroupScores::Cosine(scores));
        }
        let mut g = Graph::with_capacity(64 + 96 * group.memories.len());
        let binding = ParamBinding::bind(&mut g, &self.params);
        // eval mode never consumes randomness
        let mut rng = RngStream::new(0);
        let probs = group_forward(
            &mut g,
            &binding,
            &self.config,
            group,
            false,
            &mut rng,
        )?;
        let out = probs
            .iter()
            .map(|&v| {
                let d = g.value(v).data();
                [d[0], d[1]]
            })
            .collect();
        Ok(GroupScores::Probs(out))
    }
}
