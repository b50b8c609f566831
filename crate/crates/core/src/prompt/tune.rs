use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PromptSet, DEFAULT_INIT_SCALE};
use crate::error::{Error, Result};
use crate::model::BackboneModel;
use crate::numerics::{Adam, AdamConfig, Tape};
use crate::tasks::TaskSample;
use crate::trainer::{batch, batch_logits, batch_loss};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub adam: AdamConfig,
    pub steps: u64,
    pub batch_size: usize,
    /// Seeds prompt initialization and batch order.
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            steps: 500,
            batch_size: 16,
            seed: 0,
            init_scale: DEFAULT_INIT_SCALE,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("tune.adam.lr must be positive, got {}", self.adam.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("tune.batch_size must be positive".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Config("tune.init_scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    /// Batch loss before each optimizer step.
    pub losses: Vec<f64>,
}

/// Optimizes only the prompts against a frozen backbone. The backbone is
/// bound as constants, so no gradient ever reaches it.
pub fn tune(
    model: &BackboneModel,
    prompts: PromptSet,
    data: &[TaskSample],
    cfg: &TuneConfig,
) -> Result<(PromptSet, TuneReport)> {
    cfg.validate()?;
    if !model.is_frozen() {
        return Err(Error::Contract("prompt tuning requires a frozen backbone".into()));
    }
    prompts.check_compatible(model.config())?;
    if cfg.steps > 0 && data.is_empty() {
        return Err(Error::Contract("prompt tuning data is empty".into()));
    }
    let vocab = model.vocab();
    for s in data {
        vocab.validate(&s.src)?;
        vocab.validate(&s.tgt)?;
    }
    let backbone = model.config();
    let mut prompts = prompts;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = Vec::new();
    let mut report = TuneReport::default();
    for step in 0..cfg.steps {
        let mut samples = Vec::with_capacity(cfg.batch_size);
        while samples.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            samples.push(data[order.pop().unwrap()].clone());
        }
        let b = batch(&samples, &vocab, prompts.len())?;
        let mut tape = Tape::new();
        let w = model.weights().bind(&mut tape, false);
        let p = prompts.bind(&mut tape, true);
        let loss = batch_loss(&mut tape, backbone, &w, Some(&p), &b)?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        report.losses.push(value);
        let mut grads = tape.backward(loss);
        let grads: Vec<_> = p.tensors().into_iter().map(|&v| grads.take(v)).collect();
        adam.step(&mut prompts.tensors_mut(), &grads);
    }
    Ok((prompts, report))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Argmax hits over every target position, end-of-sequence included.
    pub correct: usize,
    pub total: usize,
    /// Same, restricted to content positions.
    pub content_correct: usize,
    pub content_total: usize,
}

impl Accuracy {
    pub fn rate(&self) -> f64 {
        self.correct as f64 / self.total.max(1) as f64
    }

    pub fn content_rate(&self) -> f64 {
        self.content_correct as f64 / self.content_total.max(1) as f64
    }
}

/// Next-unit accuracy under teacher forcing: argmax of each scored logit row
/// (first maximum on ties) against the reference target.
pub fn teacher_forced_accuracy(
    model: &BackboneModel,
    prompts: Option<&PromptSet>,
    samples: &[TaskSample],
) -> Result<Accuracy> {
    if let Some(p) = prompts {
        p.check_compatible(model.config())?;
    }
    let vocab = model.vocab();
    let l = prompts.map_or(0, PromptSet::len);
    let mut acc = Accuracy::default();
    for chunk in samples.chunks(32) {
        let b = batch(chunk, &vocab, l)?;
        let mut tape = Tape::new();
        let w = model.weights().bind(&mut tape, false);
        let p = prompts.map(|p| p.bind(&mut tape, false));
        let logits = batch_logits(&mut tape, model.config(), &w, p.as_ref(), &b)?;
        let logits = tape.value(logits);
        let rows = b.loss_mask[0].len();
        for i in 0..b.len() {
            for t in 0..b.dec_valid[i] {
                let row = logits.row(i * rows + l + t);
                let pred = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &x)| if x > best.1 { (j, x) } else { best })
                    .0;
                let hit = pred == b.targets[i][t] as usize;
                acc.total += 1;
                acc.correct += hit as usize;
                if b.targets[i][t] != vocab.eos() {
                    acc.content_total += 1;
                    acc.content_correct += hit as usize;
                }
            }
        }
    }
    Ok(acc)
}
