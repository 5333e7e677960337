//! The probabilistic scorers.
//!
//! TEFF runs the question and memory through one shared stack of
//! affine+relu+dropout layers, max-pools each over time into `u` and `v`,
//! and classifies `concat(u, v, |u−v|, u⊙v)` through a final projection and
//! softmax. TEFFCH is TEFF over combined word+character embeddings.
//! ChrWrdFF max-pools the combined embeddings directly and classifies the
//! Hadamard product of the two pooled vectors.

use super::charcnn::combined_matrix;
use super::{Architecture, ModelConfig, ParamBinding};
use crate::embeddings::{EncodedGroup, EncodedUtterance};
use crate::ndcore::{Graph, RngStream, Var};
use crate::{Error, Result};

/// The question/memory embedding matrix as a graph node, combined with
/// character embeddings when the architecture calls for them.
fn embed(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &ModelConfig,
    utt: &EncodedUtterance,
) -> Result<Var> {
    if cfg.arch.uses_chars() {
        combined_matrix(g, binding, cfg, utt)
    } else {
        Ok(g.input(utt.words.values.clone()))
    }
}

/// Shared encoder stack: `layers` rounds of affine+relu+dropout.
fn encoder_stack(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &ModelConfig,
    x: Var,
    train: bool,
    rng: &mut RngStream,
) -> Result<Var> {
    let mut y = x;
    for l in 0..cfg.layers {
        y = g.affine(
            y,
            binding.var(&format!("enc.l{l}.w")),
            binding.var(&format!("enc.l{l}.b")),
        )?;
        y = g.relu(y);
        y = g.dropout(y, cfg.dropout, train, rng)?;
    }
    Ok(y)
}

/// Encode one utterance into its pooled `h`-dimensional representation.
fn teff_encode(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &ModelConfig,
    utt: &EncodedUtterance,
    train: bool,
    rng: &mut RngStream,
) -> Result<Var> {
    let e = embed(g, binding, cfg, utt)?;
    let y = encoder_stack(g, binding, cfg, e, train, rng)?;
    g.max_over_time(y, &utt.words.mask)
}

/// Classify pooled representations `u`, `v` into a 2-way distribution.
fn teff_head(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &ModelConfig,
    u: Var,
    v: Var,
    train: bool,
    rng: &mut RngStream,
) -> Result<Var> {
    let diff = g.abs_diff(u, v)?;
    let prod = g.hadamard(u, v)?;
    let z = g.concat(&[u, v, diff, prod], 0)?;
    let z = g.dropout(z, cfg.dropout, train, rng)?;
    let logits = g.affine(z, binding.var("out.w"), binding.var("out.b"))?;
    g.softmax(logits, 0)
}

fn chrwrdff_pool(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &ModelConfig,
    utt: &EncodedUtterance,
) -> Result<Var> {
    let e = embed(g, binding, cfg, utt)?;
    g.max_over_time(e, &utt.words.mask)
}

fn chrwrdff_head(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &ModelConfig,
    eq: Var,
    em: Var,
    train: bool,
    rng: &mut RngStream,
) -> Result<Var> {
    let joint = g.hadamard(eq, em)?;
    let y = g.affine(joint, binding.var("ff.l1.w"), binding.var("ff.l1.b"))?;
    let y = g.relu(y);
    let y = g.dropout(y, cfg.dropout, train, rng)?;
    let logits = g.affine(y, binding.var("ff.out.w"), binding.var("ff.out.b"))?;
    g.softmax(logits, 0)
}

/// Relevance distribution for a single question–memory pair.
pub fn forward_pair(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &ModelConfig,
    question: &EncodedUtterance,
    memory: &EncodedUtterance,
    train: bool,
    rng: &mut RngStream,
) -> Result<Var> {
    match cfg.arch {
        Architecture::Teff | Architecture::Teffch => {
            let u = teff_encode(g, binding, cfg, question, train, rng)?;
            let v = teff_encode(g, binding, cfg, memory, train, rng)?;
            teff_head(g, binding, cfg, u, v, train, rng)
        }
        Architecture::Chrwrdff => {
            let eq = chrwrdff_pool(g, binding, cfg, question)?;
            let em = chrwrdff_pool(g, binding, cfg, memory)?;
            chrwrdff_head(g, binding, cfg, eq, em, train, rng)
        }
        other => Err(Error::Config(format!(
            "{} is not a probabilistic model",
            other.name()
        ))),
    }
}

/// Relevance distributions for every memory of a group. The question-side
/// subgraph is built once and shared across pairs.
pub fn group_forward(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &ModelConfig,
    group: &EncodedGroup,
    train: bool,
    rng: &mut RngStream,
) -> Result<Vec<Var>> {
    match cfg.arch {
        Architecture::Teff | Architecture::Teffch => {
            let u = teff_encode(g, binding, cfg, &group.question, train, rng)?;
            group
                .memories
                .iter()
                .map(|m| {
                    let v = teff_encode(g, binding, cfg, m, train, rng)?;
                    teff_head(g, binding, cfg, u, v, train, rng)
                })
                .collect()
        }
        Architecture::Chrwrdff => {
            let eq = chrwrdff_pool(g, binding, cfg, &group.question)?;
            group
                .memories
                .iter()
                .map(|m| {
                    let em = chrwrdff_pool(g, binding, cfg, m)?;
                    chrwrdff_head(g, binding, cfg, eq, em, train, rng)
                })
                .collect()
        }
        other => Err(Error::Config(format!(
            "{} is not a probabilistic model",
            other.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenSeq;
    use crate::embeddings::{encode_chars, encode_tokens, CharVocab, EmbeddingTable};
    use crate::models::{param_schema, CharCnnConfig, Model, ParamSet};

    fn toks(words: &[&str]) -> TokenSeq {
        TokenSeq {
            tokens: words.iter().map(|w| w.to_string()).collect(),
        }
    }

    fn utterance(words: &[&str], cfg: &ModelConfig, vocab: Option<&CharVocab>) -> EncodedUtterance {
        let table = EmbeddingTable::hashed(cfg.embed_dim, 64, 3);
        let t = toks(words);
        EncodedUtterance {
            words: encode_tokens(&t, &table, cfg.max_len),
            chars: vocab.map(|v| encode_chars(&t, v, cfg.max_len, cfg.max_word_len)),
        }
    }

    fn teff_cfg() -> ModelConfig {
        ModelConfig {
            arch: Architecture::Teff,
            embed_dim: 6,
            hidden: 5,
            layers: 2,
            dropout: 0.0,
            chrwrdff_hidden: 4,
            charcnn: None,
            max_len: 6,
            max_word_len: 5,
        }
    }

    fn char_cfg(arch: Architecture) -> (ModelConfig, CharVocab) {
        let vocab = CharVocab::from_chars("abcdefghijklmnopqrstuvwxyz".chars());
        let cfg = ModelConfig {
            arch,
            embed_dim: 6,
            hidden: 5,
            layers: 1,
            dropout: 0.0,
            chrwrdff_hidden: 4,
            charcnn: Some(CharCnnConfig {
                kernel_widths: vec![1, 2],
                filters: 4,
                out_dim: 5,
                char_dim: 3,
                char_vocab_size: vocab.len(),
            }),
            max_len: 6,
            max_word_len: 5,
        };
        (cfg, vocab)
    }

    fn pair_probs(cfg: &ModelConfig, q: &EncodedUtterance, m: &EncodedUtterance, seed: u64) -> [f64; 2] {
        let model = Model::new(cfg.clone(), &mut RngStream::new(seed)).unwrap();
        let mut g = Graph::new();
        let binding = ParamBinding::bind(&mut g, &model.params);
        let mut rng = RngStream::new(0);
        let p = forward_pair(&mut g, &binding, cfg, q, m, false, &mut rng).unwrap();
        let d = g.value(p).data();
        [d[0], d[1]]
    }

    #[test]
    fn teff_probabilities_sum_to_one() {
        let cfg = teff_cfg();
        let q = utterance(&["who", "took", "keys"], &cfg, None);
        let m = utterance(&["keys", "on", "table"], &cfg, None);
        let p = pair_probs(&cfg, &q, &m, 1);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        assert!(p[0] > 0.0 && p[0] < 1.0);
    }

    #[test]
    fn teff_identical_utterances_zero_diff_component() {
        let cfg = teff_cfg();
        let model = Model::new(cfg.clone(), &mut RngStream::new(2)).unwrap();
        let q = utterance(&["same", "words"], &cfg, None);
        let mut g = Graph::new();
        let binding = ParamBinding::bind(&mut g, &model.params);
        let mut rng = RngStream::new(0);
        let u = teff_encode(&mut g, &binding, &cfg, &q, false, &mut rng).unwrap();
        let v = teff_encode(&mut g, &binding, &cfg, &q, false, &mut rng).unwrap();
        let diff = g.abs_diff(u, v).unwrap();
        assert!(g.value(diff).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn word_order_does_not_change_output() {
        let cfg = teff_cfg();
        let q = utterance(&["who", "took", "keys"], &cfg, None);
        let m1 = utterance(&["keys", "on", "table"], &cfg, None);
        let m2 = utterance(&["table", "keys", "on"], &cfg, None);
        let p1 = pair_probs(&cfg, &q, &m1, 3);
        let p2 = pair_probs(&cfg, &q, &m2, 3);
        assert!((p1[1] - p2[1]).abs() < 1e-12);
    }

    #[test]
    fn pairwise_locality_under_group_forward() {
        // scoring a pair inside a bigger group changes nothing
        let cfg = teff_cfg();
        let model = Model::new(cfg.clone(), &mut RngStream::new(4)).unwrap();
        let q = utterance(&["where", "is", "bag"], &cfg, None);
        let m1 = utterance(&["bag", "in", "car"], &cfg, None);
        let m2 = utterance(&["sky", "blue"], &cfg, None);

        let run = |memories: Vec<EncodedUtterance>| {
            let group = EncodedGroup {
                id: "t".into(),
                question: q.clone(),
                labels: vec![false; memories.len()],
                memories,
            };
            let mut g = Graph::new();
            let binding = ParamBinding::bind(&mut g, &model.params);
            let mut rng = RngStream::new(0);
            let probs = group_forward(&mut g, &binding, &cfg, &group, false, &mut rng).unwrap();
            probs.iter().map(|&p| g.value(p).data()[1]).collect::<Vec<_>>()
        };

        let solo = run(vec![m1.clone()]);
        let with_other = run(vec![m2.clone(), m1.clone()]);
        let permuted = run(vec![m1, m2]);
        assert!((solo[0] - with_other[1]).abs() < 1e-12);
        assert!((with_other[1] - permuted[0]).abs() < 1e-12);
    }

    #[test]
    fn chrwrdff_zero_question_takes_bias_path() {
        let (cfg, vocab) = char_cfg(Architecture::Chrwrdff);
        let schema = param_schema(&cfg).unwrap();
        let params = ParamSet::init(&schema, &mut RngStream::new(5));
        let mut g = Graph::new();
        let binding = ParamBinding::bind(&mut g, &params);
        let mut rng = RngStream::new(0);

        // empty question → pooled ê_q = 0 → joint activation 0
        let q = utterance(&[], &cfg, Some(&vocab));
        let m = utterance(&["anything"], &cfg, Some(&vocab));
        let p = forward_pair(&mut g, &binding, &cfg, &q, &m, false, &mut rng).unwrap();

        // bias-only path computed by hand from the parameters
        let b1 = params.get("ff.l1.b").unwrap().data().to_vec();
        let w2 = params.get("ff.out.w").unwrap();
        let b2 = params.get("ff.out.b").unwrap().data().to_vec();
        let hidden: Vec<f64> = b1.iter().map(|&x| x.max(0.0)).collect();
        let mut logits = b2;
        for (i, &h) in hidden.iter().enumerate() {
            for (j, l) in logits.iter_mut().enumerate() {
                *l += h * w2.data()[i * 2 + j];
            }
        }
        let max = logits[0].max(logits[1]);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let expect = [exps[0] / sum, exps[1] / sum];
        let got = g.value(p).data();
        assert!((got[0] - expect[0]).abs() < 1e-12);
        assert!((got[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn teffch_runs_and_sums_to_one() {
        let (cfg, vocab) = char_cfg(Architecture::Teffch);
        let q = utterance(&["who", "took", "phone"], &cfg, Some(&vocab));
        let m = utterance(&["phone", "is", "here"], &cfg, Some(&vocab));
        let p = pair_probs(&cfg, &q, &m, 6);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_utterance_is_total_for_teff() {
        let cfg = teff_cfg();
        let q = utterance(&[], &cfg, None);
        let m = utterance(&["memory"], &cfg, None);
        let p = pair_probs(&cfg, &q, &m, 7);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
    }
}
