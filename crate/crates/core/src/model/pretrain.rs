//! Span-denoising pretraining: a contiguous span of each utterance is replaced
//! by MASK units and the model reconstructs the clean utterance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackboneConfig, BackboneModel};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Tape};
use crate::tasks::{TaskMeta, TaskSample};
use crate::trainer::{batch, batch_loss};
use crate::units::{UnitSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds parameter initialization, batch order and span placement.
    pub seed: u64,
    pub span_min_frac: f64,
    pub span_max_frac: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            span_min_frac: 0.15,
            span_max_frac: 0.5,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("pretrain.adam.lr must be positive".into()));
        }
        if !(0.0 <= self.span_min_frac && self.span_min_frac <= self.span_max_frac && self.span_max_frac <= 1.0) {
            return Err(Error::Config(format!(
                "pretrain span fractions [{}, {}] must satisfy 0 <= min <= max <= 1",
                self.span_min_frac, self.span_max_frac
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Batch loss before each optimizer step.
    pub losses: Vec<f64>,
}

/// Masks one contiguous span covering between `min_frac` and `max_frac` of
/// the utterance (at least one unit); the target is the clean utterance.
pub fn denoise_sample<R: Rng + ?Sized>(
    clean: &UnitSequence,
    rng: &mut R,
    min_frac: f64,
    max_frac: f64,
    vocab: &Vocabulary,
) -> TaskSample {
    let n = clean.len();
    let (span_start, span_len) = if n == 0 {
        (0, 0)
    } else {
        let lo = ((min_frac * n as f64).ceil() as usize).clamp(1, n);
        let hi = ((max_frac * n as f64).floor() as usize).clamp(lo, n);
        let len = rng.random_range(lo..=hi);
        (rng.random_range(0..=n - len), len)
    };
    let src = clean
        .iter()
        .enumerate()
        .map(|(i, &u)| if (span_start..span_start + span_len).contains(&i) { vocab.mask() } else { u })
        .collect();
    TaskSample {
        id: String::new(),
        src,
        tgt: clean.clone(),
        meta: TaskMeta::Denoise { span_start, span_len },
    }
}

/// Initializes a backbone from `cfg.seed` and trains it on `corpus`.
/// The returned model is not frozen.
pub fn pretrain_backbone(
    corpus: &[UnitSequence],
    backbone: BackboneConfig,
    cfg: &PretrainConfig,
) -> Result<(BackboneModel, PretrainReport)> {
    let mut model = BackboneModel::new(backbone, cfg.seed)?;
    let report = train_backbone(&mut model, corpus, cfg)?;
    Ok((model, report))
}

/// Continues training an unfrozen backbone for `cfg.steps` optimizer steps.
pub fn train_backbone(model: &mut BackboneModel, corpus: &[UnitSequence], cfg: &PretrainConfig) -> Result<PretrainReport> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Contract("pretraining corpus is empty".into()));
    }
    if model.is_frozen() {
        return Err(Error::Contract("cannot pretrain a frozen backbone".into()));
    }
    let vocab = model.vocab();
    for seq in corpus {
        vocab.validate(seq)?;
    }
    let backbone = *model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = Vec::new();
    let mut report = PretrainReport::default();
    for step in 0..cfg.steps {
        let mut samples = Vec::with_capacity(cfg.batch_size);
        while samples.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..corpus.len()).collect();
                order.shuffle(&mut rng);
            }
            let i = order.pop().unwrap();
            samples.push(denoise_sample(&corpus[i], &mut rng, cfg.span_min_frac, cfg.span_max_frac, &vocab));
        }
        let b = batch(&samples, &vocab, 0)?;
        let mut tape = Tape::new();
        let w = model.weights().bind(&mut tape, true);
        let loss = batch_loss(&mut tape, &backbone, &w, None, &b)?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        report.losses.push(value);
        let mut grads = tape.backward(loss);
        let grads: Vec<_> = w.tensors().into_iter().map(|&v| grads.take(v)).collect();
        let mut params = model.weights_mut()?.tensors_mut();
        adam.step(&mut params, &grads);
        model.advance_step();
    }
    Ok(report)
}
