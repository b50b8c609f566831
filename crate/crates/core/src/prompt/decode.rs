use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PromptSet;
use crate::error::{Error, Result};
use crate::model::{decode, encode, plan_sample, BackboneModel};
use crate::numerics::Tape;
use crate::units::{Unit, UnitSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    /// Softmax temperature for sampling; must be positive in sample mode.
    pub temperature: f64,
    /// Maximum number of generated units, end-of-sequence excluded.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            temperature: 1.0,
            max_len: 64,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == DecodeMode::Sample && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "decode.temperature must be positive for sampling, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Autoregressive decoding from `[p^E; src ++ EOS]`, starting the decoder at
/// `[p^D; BOS]`. PAD, BOS and MASK are never emitted; decoding stops at EOS,
/// after `max_len` units, or when the decoder runs out of positions.
pub fn generate(
    model: &BackboneModel,
    prompts: Option<&PromptSet>,
    src: &[Unit],
    cfg: &DecodeConfig,
) -> Result<UnitSequence> {
    cfg.validate()?;
    let backbone = model.config();
    let vocab = model.vocab();
    if let Some(p) = prompts {
        p.check_compatible(backbone)?;
    }
    let l = prompts.map_or(0, PromptSet::len);
    let mut enc = src.to_vec();
    enc.push(vocab.eos());
    let mut dec = vec![vocab.bos()];
    let layout = plan_sample(backbone, l, &enc, enc.len(), &dec, 1)?;
    if cfg.max_len == 0 {
        return Ok(UnitSequence::empty());
    }

    let mut tape = Tape::new();
    let w = model.weights().bind(&mut tape, false);
    let p = prompts.map(|p| p.bind(&mut tape, false));
    let memory = encode(&mut tape, backbone, &w, p.as_ref(), &enc, &layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let banned = [vocab.pad(), vocab.bos(), vocab.mask()];
    let mut out = Vec::new();
    while out.len() < cfg.max_len && l + dec.len() <= backbone.max_positions {
        let layout = plan_sample(backbone, l, &enc, enc.len(), &dec, dec.len())?;
        let logits = decode(&mut tape, backbone, &w, p.as_ref(), memory, &dec, &layout)?;
        let m = tape.value(logits);
        let row = m.row(m.rows() - 1);
        let allowed = |u: usize| !banned.contains(&(u as Unit));
        let next = match cfg.mode {
            DecodeMode::Greedy => {
                let mut best: Option<(usize, f64)> = None;
                for (u, &x) in row.iter().enumerate().filter(|&(u, _)| allowed(u)) {
                    if best.is_none_or(|(_, b)| x > b) {
                        best = Some((u, x));
                    }
                }
                best.expect("vocabulary has content units").0
            }
            DecodeMode::Sample => {
                let max = row
                    .iter()
                    .enumerate()
                    .filter(|&(u, _)| allowed(u))
                    .map(|(_, &x)| x)
                    .fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .map(|(u, &x)| if allowed(u) { ((x - max) / cfg.temperature).exp() } else { 0.0 })
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut x = rng.random_range(0.0..total);
                let mut pick = weights.iter().rposition(|&w| w > 0.0).unwrap();
                for (u, &wt) in weights.iter().enumerate() {
                    if x < wt {
                        pick = u;
                        break;
                    }
                    x -= wt;
                }
                pick
            }
        } as Unit;
        if next == vocab.eos() {
            break;
        }
        out.push(next);
        dec.push(next);
    }
    Ok(UnitSequence::new(out))
}
