//! Pre-layer-norm encoder–decoder transformer over unit sequences.

mod forward;
pub mod pretrain;
pub mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::prompt::PromptSet;
use crate::units::{Unit, Vocabulary};

pub use forward::{attention, decode, decode_batch, embed_values, encode, encode_batch, key_mask, plan_sample, SampleLayout};
pub use pretrain::{pretrain_backbone, train_backbone, PretrainConfig, PretrainReport};
pub use weights::Weights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub vocab_size: u32,
    pub max_positions: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("backbone.{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "backbone.d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Vocabulary::new(self.vocab_size).map(|_| ())
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.vocab_size).expect("validated vocabulary")
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let f = self.d_ff;
        let v = self.vocab_size as usize;
        let norm = 2 * d;
        let attn = 4 * d * d + 3 * d;
        let ff = d * f + f + f * d + d;
        let enc_layer = 2 * norm + attn + ff;
        let dec_layer = 3 * norm + 2 * attn + ff;
        v * d + self.n_enc_layers * enc_layer + self.n_dec_layers * dec_layer + 2 * norm + d * v + v
    }
}

/// Backbone parameters plus the frozen flag and a step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneModel {
    config: BackboneConfig,
    weights: Weights<Matrix>,
    frozen: bool,
    step: u64,
}

impl BackboneModel {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            weights: Weights::init(&config, &mut rng),
            config,
            frozen: false,
            step: 0,
        })
    }

    pub fn from_parts(config: BackboneConfig, weights: Weights<Matrix>, frozen: bool, step: u64) -> Result<Self> {
        config.validate()?;
        let expected = Weights::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
        let mut shapes_ok = true;
        let have: Vec<_> = weights.tensors().iter().map(|m| m.shape()).collect();
        let want: Vec<_> = expected.tensors().iter().map(|m| m.shape()).collect();
        if have != want {
            shapes_ok = false;
        }
        if !shapes_ok {
            return Err(Error::Mismatch(
                "backbone tensor shapes do not match the configuration".into(),
            ));
        }
        Ok(Self {
            config,
            weights,
            frozen,
            step,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn vocab(&self) -> Vocabulary {
        self.config.vocab()
    }

    pub fn weights(&self) -> &Weights<Matrix> {
        &self.weights
    }

    /// Mutable parameter access for training. Fails on a frozen model.
    pub fn weights_mut(&mut self) -> Result<&mut Weights<Matrix>> {
        if self.frozen {
            return Err(Error::Contract(
                "backbone is frozen; unfreeze it before training".into(),
            ));
        }
        Ok(&mut self.weights)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advance_step(&mut self) {
        self.step += 1;
    }

    pub fn param_count(&self) -> usize {
        self.weights.count()
    }

    /// FNV-1a over the bit patterns of every parameter, in layout order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for m in self.weights.tensors() {
            for v in m.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Logits for every decoder row, `(L + |dec_in|) × vocab`, where `L` is the
    /// prompt length (0 without prompts). The last `|dec_in|` rows predict the
    /// next unit after each decoder input position.
    pub fn forward(&self, enc_in: &[Unit], dec_in: &[Unit], prompts: Option<&PromptSet>) -> Result<Matrix> {
        forward::forward_values(self, enc_in, dec_in, prompts)
    }
}

/// Sinusoidal positional encodings for positions `offset..offset + len`.
pub fn positional_encoding(offset: usize, len: usize, d_model: usize) -> Matrix {
    let mut m = Matrix::zeros(len, d_model);
    for r in 0..len {
        let pos = (offset + r) as f64;
        for i in 0..d_model {
            let pair = (i / 2) as f64;
            let angle = pos / 10_000f64.powf(2.0 * pair / d_model as f64);
            m.set(r, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

/// Encoder input, decoder input and next-unit targets for one `(src, tgt)` pair:
/// `src ++ [EOS]`, `[BOS] ++ tgt`, `tgt ++ [EOS]`.
pub fn frame_pair(vocab: &Vocabulary, src: &[Unit], tgt: &[Unit]) -> (Vec<Unit>, Vec<Unit>, Vec<Unit>) {
    let mut enc = src.to_vec();
    enc.push(vocab.eos());
    let mut dec = Vec::with_capacity(tgt.len() + 1);
    dec.push(vocab.bos());
    dec.extend_from_slice(tgt);
    let mut targets = tgt.to_vec();
    targets.push(vocab.eos());
    (enc, dec, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 2,
            d_ff: 12,
            vocab_size: 9,
            max_positions: 32,
        }
    }

    #[test]
    fn closed_form_count_matches_instantiated_model() {
        for cfg in [
            tiny(),
            BackboneConfig {
                d_model: 16,
                n_heads: 4,
                n_enc_layers: 2,
                n_dec_layers: 2,
                d_ff: 32,
                vocab_size: 12,
                max_positions: 40,
            },
        ] {
            let m = BackboneModel::new(cfg, 1).unwrap();
            assert_eq!(m.param_count(), cfg.param_count());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny();
        c.vocab_size = 4;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.d_ff = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn frozen_model_refuses_mutable_weights() {
        let mut m = BackboneModel::new(tiny(), 2).unwrap();
        m.freeze();
        assert!(matches!(m.weights_mut(), Err(Error::Contract(_))));
        m.unfreeze();
        assert!(m.weights_mut().is_ok());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = BackboneModel::new(tiny(), 7).unwrap();
        let b = BackboneModel::new(tiny(), 7).unwrap();
        let c = BackboneModel::new(tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn framing() {
        let v = Vocabulary::new(9).unwrap();
        let (e, d, t) = frame_pair(&v, &[1, 2], &[3]);
        assert_eq!(e, vec![1, 2, v.eos()]);
        assert_eq!(d, vec![v.bos(), 3]);
        assert_eq!(t, vec![3, v.eos()]);
    }
}
