//! Trainable prompts for a frozen backbone.
//!
//! Two kinds of prompt act on the model:
//!
//! * input prompts, `L` rows prepended to the encoder and decoder embeddings
//!   (content positions shift by `L`);
//! * deep key/value prompts, one pair per attention block, which replace the
//!   first `L` rows of that block's key and value inputs before projection.
//!
//! Deep prompts always cover encoder self-attention and decoder
//! self-attention. [`PromptLayout::cross_attention`] additionally adds a pair
//! for every decoder cross-attention block, which then replaces the first `L`
//! rows of the encoder memory.

mod decode;
mod tune;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::weights::leaf_group;
use crate::model::BackboneConfig;
use crate::numerics::{Matrix, Tape, Var};

pub use decode::{generate, DecodeConfig, DecodeMode};
pub use tune::{teacher_forced_accuracy, tune, Accuracy, TuneConfig, TuneReport};

pub const DEFAULT_PROMPT_LEN: usize = 8;
pub const DEFAULT_INIT_SCALE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptLayout {
    pub cross_attention: bool,
}

impl Default for PromptLayout {
    fn default() -> Self {
        Self {
            cross_attention: true,
        }
    }
}

impl PromptLayout {
    /// Embedding prompts plus self-attention key/value prompts only.
    pub const SELF_ATTENTION_ONLY: PromptLayout = PromptLayout {
        cross_attention: false,
    };
}

leaf_group!(KvPrompt { key, value });

/// Backbone dimensions a prompt set is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptShape {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
}

impl From<&BackboneConfig> for PromptShape {
    fn from(cfg: &BackboneConfig) -> Self {
        Self {
            d_model: cfg.d_model,
            n_enc_layers: cfg.n_enc_layers,
            n_dec_layers: cfg.n_dec_layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet<T = Matrix> {
    len: usize,
    pub layout: PromptLayout,
    pub encoder_input: T,
    pub decoder_input: T,
    pub encoder: Vec<KvPrompt<T>>,
    pub decoder_self: Vec<KvPrompt<T>>,
    /// Empty unless `layout.cross_attention`.
    pub decoder_cross: Vec<KvPrompt<T>>,
}

impl<T> PromptSet<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> PromptSet<U> {
        PromptSet {
            len: self.len,
            layout: self.layout,
            encoder_input: f(&self.encoder_input),
            decoder_input: f(&self.decoder_input),
            encoder: self.encoder.iter().map(|p| p.map(f)).collect(),
            decoder_self: self.decoder_self.iter().map(|p| p.map(f)).collect(),
            decoder_cross: self.decoder_cross.iter().map(|p| p.map(f)).collect(),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        f("encoder_input".into(), &self.encoder_input);
        f("decoder_input".into(), &self.decoder_input);
        for (i, p) in self.encoder.iter().enumerate() {
            p.visit(&format!("encoder.{i}"), f);
        }
        for (i, p) in self.decoder_self.iter().enumerate() {
            p.visit(&format!("decoder_self.{i}"), f);
        }
        for (i, p) in self.decoder_cross.iter().enumerate() {
            p.visit(&format!("decoder_cross.{i}"), f);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
        f(&mut self.encoder_input);
        f(&mut self.decoder_input);
        for p in self
            .encoder
            .iter_mut()
            .chain(self.decoder_self.iter_mut())
            .chain(self.decoder_cross.iter_mut())
        {
            p.visit_mut(f);
        }
    }

    pub fn tensors(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.visit_mut(&mut |t| out.push(t));
        out
    }
}

impl PromptSet<Matrix> {
    /// Assembles a prompt set from tensors in [`PromptSet::visit`] order.
    pub fn from_tensors(
        shape: PromptShape,
        len: usize,
        layout: PromptLayout,
        tensors: Vec<Matrix>,
    ) -> Result<Self> {
        let mut set = Self::zeros(shape, len, layout);
        let slots = set.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Mismatch(format!(
                "expected {} prompt tensors, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Mismatch(format!(
                    "prompt tensor shape {:?} where {:?} was expected",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(set)
    }

    fn zeros(cfg: PromptShape, len: usize, layout: PromptLayout) -> Self {
        let z = || Matrix::zeros(len, cfg.d_model);
        let kv = || KvPrompt { key: z(), value: z() };
        PromptSet {
            len,
            layout,
            encoder_input: z(),
            decoder_input: z(),
            encoder: (0..cfg.n_enc_layers).map(|_| kv()).collect(),
            decoder_self: (0..cfg.n_dec_layers).map(|_| kv()).collect(),
            decoder_cross: if layout.cross_attention {
                (0..cfg.n_dec_layers).map(|_| kv()).collect()
            } else {
                Vec::new()
            },
        }
    }

    pub fn d_model(&self) -> usize {
        self.encoder_input.cols()
    }

    pub fn shape(&self) -> PromptShape {
        PromptShape {
            d_model: self.d_model(),
            n_enc_layers: self.encoder.len(),
            n_dec_layers: self.decoder_self.len(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// Fails with a descriptive message unless these prompts fit `cfg`.
    pub fn check_compatible(&self, cfg: &BackboneConfig) -> Result<()> {
        let mut problems = Vec::new();
        if self.d_model() != cfg.d_model {
            problems.push(format!("d_model {} vs backbone {}", self.d_model(), cfg.d_model));
        }
        if self.encoder.len() != cfg.n_enc_layers {
            problems.push(format!(
                "{} encoder layer prompts vs backbone {} encoder layers",
                self.encoder.len(),
                cfg.n_enc_layers
            ));
        }
        if self.decoder_self.len() != cfg.n_dec_layers {
            problems.push(format!(
                "{} decoder layer prompts vs backbone {} decoder layers",
                self.decoder_self.len(),
                cfg.n_dec_layers
            ));
        }
        let cross = if self.layout.cross_attention { cfg.n_dec_layers } else { 0 };
        if self.decoder_cross.len() != cross {
            problems.push(format!(
                "{} cross-attention prompts where the layout needs {cross}",
                self.decoder_cross.len()
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Mismatch(problems.join("; ")))
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> PromptSet<Var> {
        self.map(&mut |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        })
    }
}

/// Gaussian prompts, `N(0, scale²)`, deterministic in `seed`.
pub fn init_prompts(cfg: &BackboneConfig, len: usize, layout: PromptLayout, seed: u64, scale: f64) -> PromptSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = PromptSet::zeros(cfg.into(), len, layout);
    for m in set.tensors_mut() {
        *m = Matrix::randn(len, cfg.d_model, scale, &mut rng);
    }
    set
}

/// Number of trainable prompt entries for this layout, in closed form.
pub fn prompt_param_count(cfg: &BackboneConfig, len: usize, layout: PromptLayout) -> usize {
    let per = len * cfg.d_model;
    let cross = if layout.cross_attention { cfg.n_dec_layers } else { 0 };
    2 * per + 2 * per * (cfg.n_enc_layers + cfg.n_dec_layers) + 2 * per * cross
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(d: usize, enc: usize, dec: usize) -> BackboneConfig {
        BackboneConfig {
            d_model: d,
            n_heads: 1,
            n_enc_layers: enc,
            n_dec_layers: dec,
            d_ff: 4,
            vocab_size: 8,
            max_positions: 16,
        }
    }

    #[test]
    fn empty_prompt_set() {
        let p = init_prompts(&cfg(8, 1, 1), 0, PromptLayout::default(), 1, 0.02);
        assert!(p.is_empty());
        assert_eq!(p.param_count(), 0);
        assert_eq!(prompt_param_count(&cfg(8, 1, 1), 0, PromptLayout::default()), 0);
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let c = cfg(8, 2, 1);
        let a = init_prompts(&c, 3, PromptLayout::default(), 42, 0.02);
        let b = init_prompts(&c, 3, PromptLayout::default(), 42, 0.02);
        assert_eq!(a, b);
        assert!(a.tensors().iter().all(|m| m.shape() == (3, 8)));
        let other = init_prompts(&c, 3, PromptLayout::default(), 43, 0.02);
        assert_ne!(a, other);
    }

    #[test]
    fn init_scale_is_respected() {
        let c = cfg(64, 2, 2);
        let p = init_prompts(&c, 50, PromptLayout::default(), 3, 0.02);
        let vals: Vec<f64> = p.tensors().iter().flat_map(|m| m.data().to_vec()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-3, "{mean}");
        assert!((std - 0.02).abs() < 1e-3, "{std}");
    }

    #[test]
    fn paper_scale_count() {
        let c = BackboneConfig {
            d_model: 1024,
            n_heads: 16,
            n_enc_layers: 12,
            n_dec_layers: 12,
            d_ff: 4096,
            vocab_size: 1004,
            max_positions: 1024,
        };
        assert_eq!(prompt_param_count(&c, 200, PromptLayout::SELF_ATTENTION_ONLY), 10_240_000);
        assert_eq!(prompt_param_count(&c, 200, PromptLayout::default()), 15_155_200);
    }

    #[test]
    fn small_count_matches_enumeration() {
        let c = cfg(4, 1, 1);
        for layout in [PromptLayout::default(), PromptLayout::SELF_ATTENTION_ONLY] {
            let p = init_prompts(&c, 2, layout, 0, 1.0);
            let enumerated: usize = p.tensors().iter().map(|m| m.rows() * m.cols()).sum();
            assert_eq!(prompt_param_count(&c, 2, layout), enumerated);
        }
    }

    #[test]
    fn compatibility_reports_every_mismatch() {
        let p = init_prompts(&cfg(8, 2, 2), 2, PromptLayout::default(), 0, 0.02);
        assert!(p.check_compatible(&cfg(8, 2, 2)).is_ok());
        let err = p.check_compatible(&cfg(16, 1, 2)).unwrap_err().to_string();
        assert!(err.contains("d_model 8 vs backbone 16"), "{err}");
        assert!(err.contains("encoder layer"), "{err}");
    }

    proptest! {
        #[test]
        fn count_formula_matches_enumeration(
            d in 1usize..12, enc in 1usize..4, dec in 1usize..4, len in 0usize..6, cross: bool
        ) {
            let c = cfg(d, enc, dec);
            let layout = PromptLayout { cross_attention: cross };
            let p = init_prompts(&c, len, layout, 1, 0.02);
            let mut entries = 0;
            p.visit(&mut |_, m| entries += m.data().len());
            prop_assert_eq!(prompt_param_count(&c, len, layout), entries);
        }
    }
}
