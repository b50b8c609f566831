use crate::error::{Error, Result};
use crate::model::{decode_batch, encode_batch, frame_pair, plan_sample, BackboneConfig, SampleLayout, Weights};
use crate::numerics::{Tape, Var};
use crate::prompt::PromptSet;
use crate::tasks::TaskSample;
use crate::units::{Unit, Vocabulary};

/// Right-padded encoder inputs, decoder inputs and targets for a batch, plus
/// the loss mask. Mask rows cover the `L` prompt rows followed by the decoder
/// rows, and are false on prompt rows and on padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub prompt_len: usize,
    pub enc: Vec<Vec<Unit>>,
    pub dec: Vec<Vec<Unit>>,
    pub targets: Vec<Vec<Unit>>,
    pub enc_valid: Vec<usize>,
    pub dec_valid: Vec<usize>,
    pub loss_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.enc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.enc.is_empty()
    }

    pub fn layouts(&self, cfg: &BackboneConfig) -> Result<Vec<SampleLayout>> {
        (0..self.len())
            .map(|b| plan_sample(cfg, self.prompt_len, &self.enc[b], self.enc_valid[b], &self.dec[b], self.dec_valid[b]))
            .collect()
    }
}

fn pad_to(mut v: Vec<Unit>, len: usize, pad: Unit) -> Vec<Unit> {
    v.resize(len, pad);
    v
}

/// Frames every sample (`src ++ [EOS]`, `[BOS] ++ tgt`, `tgt ++ [EOS]`) and
/// right-pads each side with PAD to the batch maximum.
pub fn batch(samples: &[TaskSample], vocab: &Vocabulary, prompt_len: usize) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let framed: Vec<_> = samples.iter().map(|s| frame_pair(vocab, &s.src, &s.tgt)).collect();
    let enc_len = framed.iter().map(|f| f.0.len()).max().unwrap();
    let dec_len = framed.iter().map(|f| f.1.len()).max().unwrap();
    let pad = vocab.pad();
    let mut out = Batch {
        prompt_len,
        enc: Vec::new(),
        dec: Vec::new(),
        targets: Vec::new(),
        enc_valid: Vec::new(),
        dec_valid: Vec::new(),
        loss_mask: Vec::new(),
    };
    for (enc, dec, tgt) in framed {
        let dec_valid = dec.len();
        out.enc_valid.push(enc.len());
        out.dec_valid.push(dec_valid);
        out.loss_mask
            .push((0..prompt_len + dec_len).map(|r| r >= prompt_len && r - prompt_len < dec_valid).collect());
        out.enc.push(pad_to(enc, enc_len, pad));
        out.dec.push(pad_to(dec, dec_len, pad));
        out.targets.push(pad_to(tgt, dec_len, pad));
    }
    Ok(out)
}

/// Runs the batch and returns its logits, stacked `B · (L + dec_rows) × vocab`.
pub fn batch_logits(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    w: &Weights<Var>,
    prompts: Option<&PromptSet<Var>>,
    b: &Batch,
) -> Result<Var> {
    let layouts = b.layouts(cfg)?;
    let enc: Vec<&[Unit]> = b.enc.iter().map(Vec::as_slice).collect();
    let dec: Vec<&[Unit]> = b.dec.iter().map(Vec::as_slice).collect();
    let memory = encode_batch(tape, cfg, w, prompts, &enc, &layouts)?;
    decode_batch(tape, cfg, w, prompts, memory, &dec, &layouts)
}

/// Mean over samples of each sample's masked cross-entropy.
pub fn batch_loss(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    w: &Weights<Var>,
    prompts: Option<&PromptSet<Var>>,
    b: &Batch,
) -> Result<Var> {
    let logits = batch_logits(tape, cfg, w, prompts, b)?;
    let rows = b.loss_mask[0].len();
    let mut total = None;
    for i in 0..b.len() {
        let part = if b.len() == 1 {
            logits
        } else {
            tape.slice_rows(logits, i * rows, rows)
        };
        let targets: Vec<usize> = std::iter::repeat_n(0, b.prompt_len)
            .chain(b.targets[i].iter().map(|&u| u as usize))
            .collect();
        let loss = tape.cross_entropy(part, &targets, &b.loss_mask[i])?;
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(if b.len() == 1 {
        total
    } else {
        tape.scale(total, 1.0 / b.len() as f64)
    })
}
