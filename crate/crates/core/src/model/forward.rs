use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::weights::{Attention, FeedForward, Norm, Weights};
use super::{positional_encoding, BackboneConfig, BackboneModel};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};
use crate::prompt::{KvPrompt, PromptSet};
use crate::units::Unit;

thread_local! {
    static POSITIONS: RefCell<HashMap<usize, Matrix>> = RefCell::new(HashMap::new());
}

fn positions(offset: usize, len: usize, d_model: usize) -> Matrix {
    POSITIONS.with(|cache| {
        let mut cache = cache.borrow_mut();
        let table = cache.entry(d_model).or_insert_with(|| Matrix::zeros(0, d_model));
        if table.rows() < offset + len {
            *table = positional_encoding(0, (offset + len).max(2 * table.rows()), d_model);
        }
        table.slice_rows(offset, len)
    })
}

/// Row bookkeeping for one (possibly padded) sample once prompts are prepended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleLayout {
    pub prompt_len: usize,
    pub enc_rows: usize,
    pub enc_valid: usize,
    pub dec_rows: usize,
    pub dec_valid: usize,
}

impl SampleLayout {
    /// Total encoder rows including prompts.
    pub fn memory_rows(&self) -> usize {
        self.prompt_len + self.enc_rows
    }

    pub fn logit_rows(&self) -> usize {
        self.prompt_len + self.dec_rows
    }
}

/// Validates one sample against the backbone and describes its rows. Only the
/// first `enc_valid` / `dec_valid` positions are real; the rest are padding.
pub fn plan_sample(
    cfg: &BackboneConfig,
    prompt_len: usize,
    enc_in: &[Unit],
    enc_valid: usize,
    dec_in: &[Unit],
    dec_valid: usize,
) -> Result<SampleLayout> {
    let vocab = cfg.vocab();
    for seq in [enc_in, dec_in] {
        if let Some(&u) = seq.iter().find(|&&u| u >= vocab.size()) {
            return Err(Error::Vocabulary {
                unit: u,
                vocab_size: vocab.size(),
            });
        }
        if prompt_len + seq.len() > cfg.max_positions {
            return Err(Error::Length {
                len: seq.len(),
                offset: prompt_len,
                max: cfg.max_positions,
            });
        }
    }
    if enc_valid == 0 || dec_valid == 0 || enc_valid > enc_in.len() || dec_valid > dec_in.len() {
        return Err(Error::Contract(format!(
            "encoder/decoder inputs need at least one valid position (got {enc_valid}/{}, {dec_valid}/{})",
            enc_in.len(),
            dec_in.len()
        )));
    }
    Ok(SampleLayout {
        prompt_len,
        enc_rows: enc_in.len(),
        enc_valid,
        dec_rows: dec_in.len(),
        dec_valid,
    })
}

fn embed(tape: &mut Tape, cfg: &BackboneConfig, w: &Weights<Var>, seq: &[Unit], offset: usize) -> Result<Var> {
    if offset + seq.len() > cfg.max_positions {
        return Err(Error::Length {
            len: seq.len(),
            offset,
            max: cfg.max_positions,
        });
    }
    let ids: Vec<usize> = seq.iter().map(|&u| u as usize).collect();
    let tokens = tape.gather_rows(w.embedding, &ids)?;
    let pe = tape.constant(positions(offset, seq.len(), cfg.d_model));
    tape.add(tokens, pe)
}

/// Embeds `seq` at positions `offset..` without touching prompts.
pub fn embed_values(model: &BackboneModel, seq: &[Unit], offset: usize) -> Result<Matrix> {
    let mut tape = Tape::new();
    let w = model.weights().bind(&mut tape, false);
    let cfg = model.config();
    if let Some(&u) = seq.iter().find(|&&u| u >= cfg.vocab_size) {
        return Err(Error::Vocabulary {
            unit: u,
            vocab_size: cfg.vocab_size,
        });
    }
    let v = embed(&mut tape, cfg, &w, seq, offset)?;
    Ok(tape.value(v).clone())
}

fn layer_norm(tape: &mut Tape, x: Var, n: &Norm<Var>) -> Result<Var> {
    tape.layer_norm(x, n.gain, n.bias)
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn feed_forward(tape: &mut Tape, x: Var, ff: &FeedForward<Var>) -> Result<Var> {
    let h = linear(tape, x, ff.w1, ff.b1)?;
    let h = tape.gelu(h);
    linear(tape, h, ff.w2, ff.b2)
}

/// Replaces the first `L` rows of every sample block of `x` with `prompt`.
fn replace_leading(tape: &mut Tape, x: Var, prompt: Var, samples: usize) -> Result<Var> {
    let prompt_len = tape.value(prompt).rows();
    let rows = tape.value(x).rows() / samples;
    if prompt_len > rows {
        return Err(Error::PromptLength { prompt_len, rows });
    }
    let mut parts = Vec::with_capacity(2 * samples);
    for b in 0..samples {
        parts.push(prompt);
        parts.push(tape.slice_rows(x, b * rows + prompt_len, rows - prompt_len));
    }
    tape.concat_rows(&parts)
}

/// Multi-head attention of `query_in` over `kv_in`.
///
/// Both inputs stack `masks.len()` samples of equal row count; each sample
/// attends only within its own block, through its own `queries × keys`
/// visibility mask. With `kv_override`, the first `L` rows of each sample's
/// key input and value input (before their projections) are replaced by the
/// prompt's key and value rows. Queries always come from `query_in` unchanged.
pub fn attention(
    tape: &mut Tape,
    n_heads: usize,
    attn: &Attention<Var>,
    query_in: Var,
    kv_in: Var,
    masks: &[Rc<[bool]>],
    kv_override: Option<&KvPrompt<Var>>,
) -> Result<Var> {
    let samples = masks.len();
    if samples == 0 {
        return Err(Error::Contract("attention needs at least one sample".into()));
    }
    let (key_in, value_in) = match kv_override {
        Some(p) => (
            replace_leading(tape, kv_in, p.key, samples)?,
            replace_leading(tape, kv_in, p.value, samples)?,
        ),
        None => (kv_in, kv_in),
    };
    let q = linear(tape, query_in, attn.wq, attn.bq)?;
    let k = tape.matmul(key_in, attn.wk)?;
    let v = linear(tape, value_in, attn.wv, attn.bv)?;
    let (q_total, d_model) = tape.value(q).shape();
    let k_total = tape.value(k).rows();
    let (q_rows, k_rows) = (q_total / samples, k_total / samples);
    let head_dim = d_model / n_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * head_dim, head_dim),
                tape.slice_cols(k, h * head_dim, head_dim),
                tape.slice_cols(v, h * head_dim, head_dim),
            )
        };
        let mut outs = Vec::with_capacity(samples);
        for (b, mask) in masks.iter().enumerate() {
            let (qb, kb, vb) = if samples == 1 {
                (qh, kh, vh)
            } else {
                (
                    tape.slice_rows(qh, b * q_rows, q_rows),
                    tape.slice_rows(kh, b * k_rows, k_rows),
                    tape.slice_rows(vh, b * k_rows, k_rows),
                )
            };
            let scores = tape.matmul_t(qb, kb)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax_rows(scores, Some(mask));
            outs.push(tape.matmul(probs, vb)?);
        }
        heads.push(if samples == 1 { outs[0] } else { tape.concat_rows(&outs)? });
    }
    let merged = if n_heads == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    linear(tape, merged, attn.wo, attn.bo)
}

/// Visibility mask: key `j` is visible to query `i` iff `j < valid_keys` and,
/// when causal, `j ≤ i`.
pub fn key_mask(queries: usize, keys: usize, valid_keys: usize, causal: bool) -> Rc<[bool]> {
    let mut m = Vec::with_capacity(queries * keys);
    for i in 0..queries {
        for j in 0..keys {
            m.push(j < valid_keys && (!causal || j <= i));
        }
    }
    m.into()
}

fn uniform<'a>(layouts: &'a [SampleLayout]) -> Result<&'a SampleLayout> {
    let first = layouts
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    if layouts
        .iter()
        .any(|l| (l.prompt_len, l.enc_rows, l.dec_rows) != (first.prompt_len, first.enc_rows, first.dec_rows))
    {
        return Err(Error::Contract("batched samples must be padded to equal lengths".into()));
    }
    Ok(first)
}

/// Embeds each sample, prepends `prompt` if any, and stacks the samples.
fn stacked_input(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    w: &Weights<Var>,
    prompt: Option<Var>,
    seqs: &[&[Unit]],
    offset: usize,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(2 * seqs.len());
    for seq in seqs {
        parts.extend(prompt);
        parts.push(embed(tape, cfg, w, seq, offset)?);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat_rows(&parts)
    }
}

/// Runs the encoder over a padded batch and returns the stacked memory,
/// `B · (L + enc_rows) × d_model`.
pub fn encode_batch(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    w: &Weights<Var>,
    prompts: Option<&PromptSet<Var>>,
    enc_in: &[&[Unit]],
    layouts: &[SampleLayout],
) -> Result<Var> {
    let shape = *uniform(layouts)?;
    let l = shape.prompt_len;
    let mut x = stacked_input(tape, cfg, w, prompts.map(|p| p.encoder_input), enc_in, l)?;
    let rows = shape.memory_rows();
    let masks: Vec<_> = layouts
        .iter()
        .map(|s| key_mask(rows, rows, l + s.enc_valid, false))
        .collect();
    for (j, layer) in w.encoder.iter().enumerate() {
        let h = layer_norm(tape, x, &layer.attn_norm)?;
        let kv = prompts.map(|p| &p.encoder[j]);
        let a = attention(tape, cfg.n_heads, &layer.attn, h, h, &masks, kv)?;
        x = tape.add(x, a)?;
        let h = layer_norm(tape, x, &layer.ff_norm)?;
        let f = feed_forward(tape, h, &layer.ff)?;
        x = tape.add(x, f)?;
    }
    layer_norm(tape, x, &w.encoder_norm)
}

/// Runs the decoder over a padded batch against the stacked `memory` and
/// returns stacked logits, `B · (L + dec_rows) × vocab`.
pub fn decode_batch(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    w: &Weights<Var>,
    prompts: Option<&PromptSet<Var>>,
    memory: Var,
    dec_in: &[&[Unit]],
    layouts: &[SampleLayout],
) -> Result<Var> {
    let shape = *uniform(layouts)?;
    let l = shape.prompt_len;
    let mut x = stacked_input(tape, cfg, w, prompts.map(|p| p.decoder_input), dec_in, l)?;
    let rows = shape.logit_rows();
    let self_masks: Vec<_> = layouts
        .iter()
        .map(|s| key_mask(rows, rows, l + s.dec_valid, true))
        .collect();
    let cross_masks: Vec<_> = layouts
        .iter()
        .map(|s| key_mask(rows, shape.memory_rows(), l + s.enc_valid, false))
        .collect();
    for (j, layer) in w.decoder.iter().enumerate() {
        let h = layer_norm(tape, x, &layer.self_norm)?;
        let kv = prompts.map(|p| &p.decoder_self[j]);
        let a = attention(tape, cfg.n_heads, &layer.self_attn, h, h, &self_masks, kv)?;
        x = tape.add(x, a)?;

        let h = layer_norm(tape, x, &layer.cross_norm)?;
        let kv = prompts.and_then(|p| p.decoder_cross.get(j));
        let c = attention(tape, cfg.n_heads, &layer.cross_attn, h, memory, &cross_masks, kv)?;
        x = tape.add(x, c)?;

        let h = layer_norm(tape, x, &layer.ff_norm)?;
        let f = feed_forward(tape, h, &layer.ff)?;
        x = tape.add(x, f)?;
    }
    let h = layer_norm(tape, x, &w.decoder_norm)?;
    linear(tape, h, w.out_proj, w.out_bias)
}

/// Single-sample encoder: memory of `(L + |enc_in|) × d_model`.
pub fn encode(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    w: &Weights<Var>,
    prompts: Option<&PromptSet<Var>>,
    enc_in: &[Unit],
    layout: &SampleLayout,
) -> Result<Var> {
    encode_batch(tape, cfg, w, prompts, &[enc_in], std::slice::from_ref(layout))
}

/// Single-sample decoder: logits of `(L + |dec_in|) × vocab`.
pub fn decode(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    w: &Weights<Var>,
    prompts: Option<&PromptSet<Var>>,
    memory: Var,
    dec_in: &[Unit],
    layout: &SampleLayout,
) -> Result<Var> {
    decode_batch(tape, cfg, w, prompts, memory, &[dec_in], std::slice::from_ref(layout))
}

pub(super) fn forward_values(
    model: &BackboneModel,
    enc_in: &[Unit],
    dec_in: &[Unit],
    prompts: Option<&PromptSet>,
) -> Result<Matrix> {
    let cfg = model.config();
    if let Some(p) = prompts {
        p.check_compatible(cfg)?;
    }
    let l = prompts.map_or(0, PromptSet::len);
    let layout = plan_sample(cfg, l, enc_in, enc_in.len(), dec_in, dec_in.len())?;
    let mut tape = Tape::new();
    let w = model.weights().bind(&mut tape, false);
    let p = prompts.map(|p| p.bind(&mut tape, false));
    let memory = encode(&mut tape, cfg, &w, p.as_ref(), enc_in, &layout)?;
    let logits = decode(&mut tape, cfg, &w, p.as_ref(), memory, dec_in, &layout)?;
    Ok(tape.value(logits).clone())
}
