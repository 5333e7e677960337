//! Convolutional character-aware word embeddings.
//!
//! Each word's characters embed into learned vectors; convolutions of
//! several widths run over them, each followed by relu and max-pooling over
//! time, and the concatenated pools project to a fixed output dimension.
//! The projected vector is appended to the word's pretrained vector.
//!
//! Convolutions are "valid" over `max(|w|, k)` character positions: short
//! words extend into learned PAD embeddings just far enough to guarantee
//! one window per kernel width.

use super::{CharCnnConfig, ModelConfig, ParamBinding};
use crate::embeddings::{CharTensor, EncodedUtterance};
use crate::ndcore::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Embed one word from its character id row; returns the projected
/// character embedding of dimension `cfg.out_dim`.
pub fn char_cnn_embed(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &CharCnnConfig,
    char_ids: &[usize],
    word_len: usize,
) -> Result<Var> {
    let emb = binding.var("char.emb");
    let mut pooled = Vec::with_capacity(cfg.kernel_widths.len());
    for &k in &cfg.kernel_widths {
        let span = word_len.max(k).min(char_ids.len());
        let ids = &char_ids[..span];
        let rows = g.gather(emb, ids)?;
        let conv = g.conv1d(
            rows,
            binding.var(&format!("char.conv{k}.w")),
            binding.var(&format!("char.conv{k}.b")),
        )?;
        let act = g.relu(conv);
        let windows = g.value(act).rows();
        let pool = g.max_over_time(act, &vec![true; windows])?;
        pooled.push(pool);
    }
    let cat = g.concat(&pooled, 0)?;
    g.affine(cat, binding.var("char.proj.w"), binding.var("char.proj.b"))
}

/// Build the combined word+character embedding matrix for an utterance:
/// rows are `concat(v_w, y_w)` for real words, zero for padding positions.
pub fn combined_matrix(
    g: &mut Graph,
    binding: &ParamBinding,
    cfg: &ModelConfig,
    utt: &EncodedUtterance,
) -> Result<Var> {
    let ccfg = cfg
        .charcnn
        .as_ref()
        .ok_or_else(|| Error::Config("combined embeddings need a charcnn config".into()))?;
    let chars: &CharTensor = utt.chars.as_ref().ok_or_else(|| {
        Error::Config("utterance was encoded without character ids".into())
    })?;
    let width = cfg.embed_dim + ccfg.out_dim;
    let mut rows = Vec::with_capacity(utt.words.max_len());
    for r in 0..utt.words.max_len() {
        if utt.words.mask[r] {
            let word_vec = g.input(Tensor::vector(utt.words.values.row(r).to_vec()));
            let char_vec = char_cnn_embed(g, binding, ccfg, &chars.ids[r], chars.word_lens[r])?;
            rows.push(g.concat(&[word_vec, char_vec], 0)?);
        } else {
            rows.push(g.input(Tensor::vector(vec![0.0; width])));
        }
    }
    g.stack_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{param_schema, Architecture, ModelConfig, ParamBinding, ParamSet};
    use crate::ndcore::RngStream;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            arch: Architecture::Teffch,
            embed_dim: 4,
            hidden: 3,
            layers: 1,
            dropout: 0.0,
            chrwrdff_hidden: 4,
            charcnn: Some(CharCnnConfig {
                kernel_widths: vec![1, 2],
                filters: 5,
                out_dim: 6,
                char_dim: 3,
                char_vocab_size: 8,
            }),
            max_len: 4,
            max_word_len: 6,
        }
    }

    #[test]
    fn output_dimensions_follow_config() {
        let cfg = tiny_cfg();
        let schema = param_schema(&cfg).unwrap();
        let params = ParamSet::init(&schema, &mut RngStream::new(1));
        let mut g = Graph::new();
        let binding = ParamBinding::bind(&mut g, &params);
        let y = char_cnn_embed(
            &mut g,
            &binding,
            cfg.charcnn.as_ref().unwrap(),
            &[2, 3, 4, 0, 0, 0],
            3,
        )
        .unwrap();
        assert_eq!(g.value(y).shape(), &[6]);
    }

    #[test]
    fn width_one_kernel_picks_character_embedding_through_relu_maxpool() {
        // identity width-1 kernel, zero bias: pooled output = column-wise
        // max over relu of the word's character embedding rows
        let cfg = CharCnnConfig {
            kernel_widths: vec![1],
            filters: 3,
            out_dim: 3,
            char_dim: 3,
            char_vocab_size: 6,
        };
        let mut emb = Tensor::zeros(&[6, 3]);
        emb.row_mut(2).copy_from_slice(&[0.5, -1.0, 2.0]);
        emb.row_mut(3).copy_from_slice(&[1.5, 0.25, -3.0]);
        let mut kernel = Tensor::zeros(&[1, 3, 3]);
        for i in 0..3 {
            kernel.data_mut()[i * 3 + i] = 1.0; // identity over channels
        }
        let params = ParamSet::from_entries(vec![
            ("char.emb".into(), emb),
            ("char.conv1.w".into(), kernel),
            ("char.conv1.b".into(), Tensor::vector(vec![0.0; 3])),
            ("char.proj.w".into(), {
                let mut w = Tensor::zeros(&[3, 3]);
                for i in 0..3 {
                    w.data_mut()[i * 3 + i] = 1.0;
                }
                w
            }),
            ("char.proj.b".into(), Tensor::vector(vec![0.0; 3])),
        ]);
        let mut g = Graph::new();
        let binding = ParamBinding::bind(&mut g, &params);
        let y = char_cnn_embed(&mut g, &binding, &cfg, &[2, 3], 2).unwrap();
        // relu then max over the two rows: [1.5, 0.25, 2.0]
        assert_eq!(g.value(y).data(), &[1.5, 0.25, 2.0]);
    }

    #[test]
    fn single_char_word_with_width_two_kernel_has_one_window() {
        let cfg = tiny_cfg();
        let schema = param_schema(&cfg).unwrap();
        let params = ParamSet::init(&schema, &mut RngStream::new(2));
        let mut g = Graph::new();
        let binding = ParamBinding::bind(&mut g, &params);
        // word of length 1: the width-2 convolution spans [char, PAD]
        let y = char_cnn_embed(
            &mut g,
            &binding,
            cfg.charcnn.as_ref().unwrap(),
            &[5, 0, 0, 0, 0, 0],
            1,
        )
        .unwrap();
        assert_eq!(g.value(y).shape(), &[6]);
    }
}
