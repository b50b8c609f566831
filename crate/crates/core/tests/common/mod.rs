//! Shared fixtures, independent oracles and experiment drivers for the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use unitprompt::metrics::{bleu, edit_distance, NgramLM};
use unitprompt::model::{pretrain_backbone, PretrainConfig};
use unitprompt::numerics::{grad_check, GradCheckReport, Matrix, Tape, Var};
use unitprompt::prompt::{init_prompts, teacher_forced_accuracy, tune, Accuracy, TuneConfig};
use unitprompt::tasks::{
    gen_continuation_sample, gen_inpainting_sample, generate_corpus, split_speaker_disjoint, CorpusConfig, CorpusSizes,
    InpaintConfig, SplitRatios, TaskKind, TaskMeta, TaskSample, UtteranceRecord, UtteranceSource,
};
use unitprompt::trainer::{batch, batch_loss, load_job, run, RunLog};
use unitprompt::{BackboneConfig, BackboneModel, PromptLayout, PromptSet, UnitSequence, Vocabulary};

// ---------------------------------------------------------------------------
// Fixtures

pub fn sample(src: &[u32], tgt: &[u32]) -> TaskSample {
    TaskSample {
        id: "s".into(),
        src: UnitSequence::from(src),
        tgt: UnitSequence::from(tgt),
        meta: TaskMeta::Pair,
    }
}

/// Random content sequence of length `len` over a vocabulary.
pub fn random_units(rng: &mut impl Rng, vocab: &Vocabulary, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..vocab.content_size())).collect()
}

/// Small random backbone configuration.
pub fn random_config(rng: &mut impl Rng) -> BackboneConfig {
    let n_heads = [1, 2, 4][rng.random_range(0..3)];
    BackboneConfig {
        d_model: n_heads * rng.random_range(1..=4),
        n_heads,
        n_enc_layers: rng.random_range(1..=3),
        n_dec_layers: rng.random_range(1..=3),
        d_ff: rng.random_range(1..=24),
        vocab_size: rng.random_range(5..=20),
        max_positions: 32,
    }
}

// ---------------------------------------------------------------------------
// Reference forward pass: plain nested loops written straight from the
// architecture description, sharing no code with the library's tape.

type Rows = Vec<Vec<f64>>;

fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mm(a: &Rows, b: &Matrix) -> Rows {
    a.iter()
        .map(|row| {
            (0..b.cols())
                .map(|j| row.iter().enumerate().map(|(k, &x)| x * b.get(k, j)).sum())
                .collect()
        })
        .collect()
}

fn plus_bias(mut a: Rows, b: &Matrix) -> Rows {
    for row in &mut a {
        for (x, j) in row.iter_mut().zip(0..) {
            *x += b.get(0, j);
        }
    }
    a
}

fn linear(a: &Rows, w: &Matrix, b: &Matrix) -> Rows {
    plus_bias(mm(a, w), b)
}

fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn norm(a: &Rows, gain: &Matrix, bias: &Matrix) -> Rows {
    a.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, x)| (x - mean) * inv * gain.get(0, j) + bias.get(0, j))
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

fn sinusoid(pos: usize, i: usize, d: usize) -> f64 {
    let angle = pos as f64 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
    if i % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn embed(model: &BackboneModel, prompt: Option<&Matrix>, seq: &[u32]) -> Rows {
    let d = model.config().d_model;
    let mut out = prompt.map(rows).unwrap_or_default();
    let l = out.len();
    for (t, &u) in seq.iter().enumerate() {
        let e = model.weights().embedding.row(u as usize);
        out.push((0..d).map(|i| e[i] + sinusoid(l + t, i, d)).collect());
    }
    out
}

fn replace_first(x: &Rows, p: Option<&Matrix>) -> Rows {
    let mut out = x.clone();
    if let Some(p) = p {
        for r in 0..p.rows() {
            out[r] = p.row(r).to_vec();
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn mha(
    a: &unitprompt::model::weights::Attention<Matrix>,
    heads: usize,
    q_in: &Rows,
    kv_in: &Rows,
    kv_prompt: Option<&unitprompt::prompt::KvPrompt<Matrix>>,
    causal: bool,
) -> Rows {
    let k_in = replace_first(kv_in, kv_prompt.map(|p| &p.key));
    let v_in = replace_first(kv_in, kv_prompt.map(|p| &p.value));
    let q = linear(q_in, &a.wq, &a.bq);
    let k = mm(&k_in, &a.wk);
    let v = linear(&v_in, &a.wv, &a.bv);
    let d = q[0].len();
    let hd = d / heads;
    let mut merged = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..q.len() {
            let visible = |j: usize| !causal || j <= i;
            let scores: Vec<f64> = (0..k.len())
                .map(|j| {
                    if visible(j) {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                merged[i][c] = (0..k.len()).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    linear(&merged, &a.wo, &a.bo)
}

/// Logits `(L + |dec_in|) × vocab` computed without the library's forward code.
pub fn reference_forward(model: &BackboneModel, prompts: Option<&PromptSet>, enc_in: &[u32], dec_in: &[u32]) -> Matrix {
    let cfg = model.config();
    let w = model.weights();
    let mut x = embed(model, prompts.map(|p| &p.encoder_input), enc_in);
    for (j, layer) in w.encoder.iter().enumerate() {
        let h = norm(&x, &layer.attn_norm.gain, &layer.attn_norm.bias);
        let a = mha(&layer.attn, cfg.n_heads, &h, &h, prompts.map(|p| &p.encoder[j]), false);
        x = add(&x, &a);
        let h = norm(&x, &layer.ff_norm.gain, &layer.ff_norm.bias);
        let f = linear(&h, &layer.ff.w1, &layer.ff.b1)
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect::<Rows>();
        x = add(&x, &linear(&f, &layer.ff.w2, &layer.ff.b2));
    }
    let memory = norm(&x, &w.encoder_norm.gain, &w.encoder_norm.bias);

    let mut y = embed(model, prompts.map(|p| &p.decoder_input), dec_in);
    for (j, layer) in w.decoder.iter().enumerate() {
        let h = norm(&y, &layer.self_norm.gain, &layer.self_norm.bias);
        let a = mha(&layer.self_attn, cfg.n_heads, &h, &h, prompts.map(|p| &p.decoder_self[j]), true);
        y = add(&y, &a);
        let h = norm(&y, &layer.cross_norm.gain, &layer.cross_norm.bias);
        let cross = prompts.and_then(|p| p.decoder_cross.get(j));
        let c = mha(&layer.cross_attn, cfg.n_heads, &h, &memory, cross, false);
        y = add(&y, &c);
        let h = norm(&y, &layer.ff_norm.gain, &layer.ff_norm.bias);
        let f = linear(&h, &layer.ff.w1, &layer.ff.b1)
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect::<Rows>();
        y = add(&y, &linear(&f, &layer.ff.w2, &layer.ff.b2));
    }
    let h = norm(&y, &w.decoder_norm.gain, &w.decoder_norm.bias);
    Matrix::from_rows(&linear(&h, &w.out_proj, &w.out_bias))
}

// ---------------------------------------------------------------------------
// No-prompt identity

pub fn bits(m: &Matrix) -> Vec<u64> {
    m.data().iter().map(|v| v.to_bits()).collect()
}

/// Compares `L = 0` prompts with the promptless path on `cases` random
/// models and inputs, for both the forward pass and greedy generation.
/// Returns the number of cases that differ in any bit.
pub fn no_prompt_identity(cases: usize, seed: u64) -> usize {
    use unitprompt::prompt::{generate, DecodeConfig, DecodeMode};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for case in 0..cases {
        let cfg = random_config(&mut rng);
        let model = BackboneModel::new(cfg, rng.random()).unwrap();
        let layout = PromptLayout {
            cross_attention: rng.random(),
        };
        let empty = init_prompts(&cfg, 0, layout, rng.random(), 0.02);
        let vocab = cfg.vocab();
        let n = rng.random_range(1..10);
        let src = random_units(&mut rng, &vocab, n);
        let n = rng.random_range(1..10);
        let dec = random_units(&mut rng, &vocab, n);
        let a = model.forward(&src, &dec, None).unwrap();
        let b = model.forward(&src, &dec, Some(&empty)).unwrap();
        let decode = DecodeConfig {
            mode: if case % 2 == 0 { DecodeMode::Greedy } else { DecodeMode::Sample },
            temperature: 0.7,
            max_len: 12,
            seed: rng.random(),
        };
        let ga = generate(&model, None, &src, &decode).unwrap();
        let gb = generate(&model, Some(&empty), &src, &decode).unwrap();
        if bits(&a) != bits(&b) || ga != gb {
            mismatches += 1;
        }
    }
    mismatches
}

// ---------------------------------------------------------------------------
// Gradient checks

pub const GRAD_H: f64 = 1e-4;

pub fn grad_config() -> BackboneConfig {
    BackboneConfig {
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 2,
        n_dec_layers: 2,
        d_ff: 32,
        vocab_size: 12,
        max_positions: 32,
    }
}

/// Backbone, `L = 4` prompts and a padded two-sample batch for gradient checks.
pub fn grad_fixture() -> (BackboneModel, PromptSet, Vec<TaskSample>) {
    let cfg = grad_config();
    let model = BackboneModel::new(cfg, 11).unwrap();
    let prompts = init_prompts(&cfg, 4, PromptLayout::default(), 12, 0.5);
    let data = vec![sample(&[1, 2, 3], &[4, 5, 6, 7]), sample(&[7, 6, 5, 4, 3], &[2, 1])];
    (model, prompts, data)
}

fn rebind<T: Clone>(template: &impl Fn(&mut dyn FnMut() -> Var) -> T, vars: &[Var]) -> T {
    let mut it = vars.iter().copied();
    template(&mut || it.next().expect("one variable per tensor"))
}

/// Gradient of the masked batch loss with respect to every prompt entry.
pub fn prompt_gradient_check() -> GradCheckReport {
    let (model, prompts, data) = grad_fixture();
    let cfg = *model.config();
    let b = batch(&data, &cfg.vocab(), prompts.len()).unwrap();
    let params: Vec<Matrix> = prompts.tensors().into_iter().cloned().collect();
    let template = |next: &mut dyn FnMut() -> Var| prompts.map(&mut |_| next());
    grad_check(
        |tape: &mut Tape, vars: &[Var]| {
            let w = model.weights().bind(tape, false);
            let p = rebind(&template, vars);
            batch_loss(tape, &cfg, &w, Some(&p), &b)
        },
        &params,
        GRAD_H,
    )
    .unwrap()
}

/// Gradient of the same loss with respect to every backbone parameter, the
/// backbone unfrozen as during pretraining.
pub fn backbone_gradient_check() -> GradCheckReport {
    let (model, prompts, data) = grad_fixture();
    let cfg = *model.config();
    let b = batch(&data, &cfg.vocab(), prompts.len()).unwrap();
    let params: Vec<Matrix> = model.weights().tensors().into_iter().cloned().collect();
    let template = |next: &mut dyn FnMut() -> Var| model.weights().map(&mut |_| next());
    grad_check(
        |tape: &mut Tape, vars: &[Var]| {
            let w = rebind(&template, vars);
            let p = prompts.bind(tape, false);
            batch_loss(tape, &cfg, &w, Some(&p), &b)
        },
        &params,
        GRAD_H,
    )
    .unwrap()
}

/// Outcome of comparing tape gradients against Richardson-extrapolated central
/// differences.
#[derive(Debug, Clone, Copy)]
pub struct ExtrapolatedCheck {
    pub coordinates: usize,
    pub violations: usize,
    /// Largest `|analytic − numeric| / (1e-6·max(|analytic|, |numeric|) + 1e-11)`.
    pub worst_ratio: f64,
}

/// Plain central differences at `h = 1e-4` resolve a loss of magnitude ~3
/// only to about `ulp / h ≈ 2e-12` per coordinate, so coordinates whose exact
/// gradient is tiny cannot reach a tight relative tolerance whatever the
/// backward pass does. This check removes the second-order truncation term,
/// `(4·D(h/2) − D(h)) / 3` with `h = 2e-3`, and accepts
/// `|a − n| ≤ 1e-6·max(|a|, |n|) + 1e-11`.
pub fn extrapolated_backbone_check(seed: u64) -> ExtrapolatedCheck {
    let cfg = grad_config();
    let (_, prompts, data) = grad_fixture();
    let model = BackboneModel::new(cfg, seed).unwrap();
    let b = batch(&data, &cfg.vocab(), prompts.len()).unwrap();
    let template = |next: &mut dyn FnMut() -> Var| model.weights().map(&mut |_| next());
    let eval = |ps: &[Matrix]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let p = prompts.bind(&mut tape, false);
        let loss = batch_loss(&mut tape, &cfg, &rebind(&template, &vars), Some(&p), &b).unwrap();
        tape.value(loss).get(0, 0)
    };
    let params: Vec<Matrix> = model.weights().tensors().into_iter().cloned().collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let p = prompts.bind(&mut tape, false);
    let loss = batch_loss(&mut tape, &cfg, &rebind(&template, &vars), Some(&p), &b).unwrap();
    let grads = tape.backward(loss);
    let mut work = params.clone();
    let mut out = ExtrapolatedCheck {
        coordinates: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    let h = 2e-3;
    for p in 0..work.len() {
        let analytic = grads.wrt(vars[p]);
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            let mut central = |step: f64| {
                work[p].data_mut()[i] = orig + step;
                let plus = eval(&work);
                work[p].data_mut()[i] = orig - step;
                let minus = eval(&work);
                work[p].data_mut()[i] = orig;
                (plus - minus) / (2.0 * step)
            };
            let numeric = (4.0 * central(h / 2.0) - central(h)) / 3.0;
            let a = analytic.data()[i];
            let ratio = (a - numeric).abs() / (1e-6 * a.abs().max(numeric.abs()) + 1e-11);
            out.coordinates += 1;
            out.worst_ratio = out.worst_ratio.max(ratio);
            if ratio > 1.0 {
                out.violations += 1;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// End-to-end steering experiment

#[derive(Debug, Clone)]
pub struct SteeringOutcome {
    pub pretrain_first_loss: f64,
    pub pretrain_last_loss: f64,
    pub tune_steps: u64,
    pub baseline: Accuracy,
    pub tuned: Accuracy,
    pub backbone_bit_identical: bool,
    pub pretrain_secs: f64,
    pub tune_secs: f64,
    pub total_secs: f64,
}

pub const STEERING_BACKBONE: BackboneConfig = BackboneConfig {
    d_model: 64,
    n_heads: 4,
    n_enc_layers: 2,
    n_dec_layers: 2,
    d_ff: 128,
    vocab_size: 32,
    max_positions: 64,
};

pub const STEERING_PRETRAIN_STEPS: u64 = 3000;
pub const STEERING_TUNE_STEPS: u64 = 4000;
pub const STEERING_TUNE_LR: f64 = 1e-2;
/// Prompt rows stand in for LayerNorm-ed key/value rows of unit scale; a
/// near-zero start leaves tuning on a long initial plateau.
pub const STEERING_INIT_SCALE: f64 = 1.0;

fn weight_bits(model: &BackboneModel) -> Vec<u64> {
    model.weights().tensors().into_iter().flat_map(bits).collect()
}

/// Pretrains a toy backbone on 5,000 synthetic utterances by span denoising,
/// freezes it and tunes `L = 8` prompts on 2,000 cipher-translation samples;
/// accuracy is teacher-forced on 200 held-out samples.
pub fn steering_experiment() -> SteeringOutcome {
    let start = Instant::now();
    let mut utt = CorpusConfig::new(TaskKind::Utterances, STEERING_BACKBONE.vocab_size);
    utt.source.n_speakers = 100;
    utt.source.utterances_per_speaker = 56;
    utt.sizes = CorpusSizes {
        train: 5000,
        valid: 100,
        test: 100,
    };
    let splits = generate_corpus(&utt).unwrap();
    let corpus: Vec<UnitSequence> = splits[0].1.iter().map(|(_, s)| s.tgt.clone()).collect();
    assert_eq!(corpus.len(), 5000);

    let pretrain = PretrainConfig {
        steps: STEERING_PRETRAIN_STEPS,
        ..PretrainConfig::default()
    };
    let (mut model, report) = pretrain_backbone(&corpus, STEERING_BACKBONE, &pretrain).unwrap();
    let pretrain_secs = start.elapsed().as_secs_f64();
    model.freeze();

    let mut task = CorpusConfig::new(TaskKind::Translation, STEERING_BACKBONE.vocab_size);
    task.seed = 1;
    task.sizes = CorpusSizes {
        train: 2000,
        valid: 0,
        test: 200,
    };
    let splits = generate_corpus(&task).unwrap();
    let train: Vec<TaskSample> = splits[0].1.iter().map(|(_, s)| s.clone()).collect();
    let held_out: Vec<TaskSample> = splits[2].1.iter().map(|(_, s)| s.clone()).collect();

    let mut tune_cfg = TuneConfig {
        steps: STEERING_TUNE_STEPS,
        seed: 3,
        init_scale: STEERING_INIT_SCALE,
        ..TuneConfig::default()
    };
    tune_cfg.adam.lr = STEERING_TUNE_LR;
    let init = init_prompts(&STEERING_BACKBONE, 8, PromptLayout::default(), tune_cfg.seed, tune_cfg.init_scale);
    let baseline = teacher_forced_accuracy(&model, Some(&init), &held_out).unwrap();
    let before = weight_bits(&model);
    let tune_start = Instant::now();
    let (prompts, _) = tune(&model, init, &train, &tune_cfg).unwrap();
    let tune_secs = tune_start.elapsed().as_secs_f64();
    let backbone_bit_identical = weight_bits(&model) == before;
    let tuned = teacher_forced_accuracy(&model, Some(&prompts), &held_out).unwrap();
    SteeringOutcome {
        pretrain_first_loss: report.losses[0],
        pretrain_last_loss: *report.losses.last().unwrap(),
        tune_steps: tune_cfg.steps,
        baseline,
        tuned,
        backbone_bit_identical,
        pretrain_secs,
        tune_secs,
        total_secs: start.elapsed().as_secs_f64(),
    }
}

// ---------------------------------------------------------------------------
// Task-generator properties

/// Span fractions of `count` inpainting samples drawn from synthetic utterances.
pub fn inpainting_fractions(count: usize, seed: u64) -> Vec<f64> {
    let vocab = Vocabulary::new(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = unitprompt::tasks::SourceConfig::default();
    cfg.min_len = 10;
    cfg.max_len = 120;
    let source = UtteranceSource::new(vocab.content_size() as usize, cfg, &mut rng).unwrap();
    let inpaint = InpaintConfig::default();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let clean = source.utterance(rng.random_range(0..cfg.n_speakers), &mut rng);
        if let Some(s) = gen_inpainting_sample(&clean, &mut rng, &inpaint, &vocab, String::new()) {
            let TaskMeta::Inpainting { span_start, span_len } = s.meta else {
                panic!("inpainting sample without span metadata");
            };
            let masked = (0..s.src.len()).filter(|&i| s.src[i] == vocab.mask()).count();
            assert_eq!(masked, span_len);
            assert!((span_start..span_start + span_len).all(|i| s.src[i] == vocab.mask()));
            out.push(span_len as f64 / clean.len() as f64);
        }
    }
    out
}

/// Runs `runs` random speaker splits; returns `(disjoint runs, runs within
/// the whole-speaker ratio bound)`.
pub fn split_runs(runs: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut disjoint, mut close) = (0, 0);
    for run in 0..runs {
        let n_speakers = rng.random_range(3..60);
        let sizes: Vec<usize> = (0..n_speakers).map(|_| rng.random_range(1..40)).collect();
        let records: Vec<UtteranceRecord> = sizes
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| {
                (0..n).map(move |i| UtteranceRecord {
                    speaker: format!("spk{s}"),
                    id: format!("{run}-{s}-{i}"),
                    units: UnitSequence::from(vec![0, 1]),
                })
            })
            .collect();
        let split = split_speaker_disjoint(&records, &mut rng, SplitRatios::default()).unwrap();
        let owner: Vec<BTreeMap<&str, usize>> = split
            .parts()
            .iter()
            .map(|p| p.iter().fold(BTreeMap::new(), |mut m, r| {
                *m.entry(r.speaker.as_str()).or_insert(0) += 1;
                m
            }))
            .collect();
        let mut all: Vec<&str> = owner.iter().flat_map(|m| m.keys().copied()).collect();
        let total_speakers = all.len();
        all.sort_unstable();
        all.dedup();
        let counts_ok = split.parts().iter().map(|p| p.len()).sum::<usize>() == records.len();
        if all.len() == total_speakers && total_speakers == n_speakers && counts_ok {
            disjoint += 1;
        }
        let n = records.len() as f64;
        let mut sorted = sizes.clone();
        sorted.sort_unstable();
        // Non-empty valid and test splits need at least the two smallest speakers.
        let forced = (sorted[0] + sorted[1]) as f64 / n - 0.1;
        let bound = (*sorted.last().unwrap() as f64 / n).max(forced) + 1e-12;
        let within = split
            .parts()
            .iter()
            .zip([0.9, 0.05, 0.05])
            .all(|(p, r)| !p.is_empty() && (p.len() as f64 / n - r).abs() <= bound);
        if within {
            close += 1;
        }
    }
    (disjoint, close)
}

/// Independent seed-length oracle: round half up, clamped to `[1, T − 1]`.
pub fn seed_length_oracle(r: f64, t: usize) -> usize {
    let x = r * t as f64;
    let rounded = if x - x.floor() >= 0.5 { x.floor() + 1.0 } else { x.floor() };
    (rounded as usize).clamp(1, t - 1)
}

/// Checks every continuation sample for `T ∈ 2..=max_t` at ratio `r`;
/// returns the number of violations.
pub fn continuation_violations(r: f64, max_t: usize) -> usize {
    let mut bad = 0;
    for t in 2..=max_t {
        let u = UnitSequence::from((0..t as u32).map(|i| i % 7).collect::<Vec<_>>());
        let s = gen_continuation_sample(&u, r, String::new()).unwrap().unwrap();
        let joined: Vec<u32> = s.src.iter().chain(s.tgt.iter()).copied().collect();
        if s.src.len() != seed_length_oracle(r, t) || joined != u.as_slice() {
            bad += 1;
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// Metric oracles

/// Plain recursive Levenshtein distance.
pub fn edit_oracle(a: &[u8], b: &[u8]) -> usize {
    match (a.split_last(), b.split_last()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_oracle(ra, rb) + usize::from(x != y);
            let del = edit_oracle(ra, b) + 1;
            let ins = edit_oracle(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

pub fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// `(pairs checked, mismatches)` over every pair of sequences up to `max_len`.
pub fn edit_distance_exhaustive(alphabet: u8, max_len: usize) -> (usize, usize) {
    let seqs = all_sequences(alphabet, max_len);
    let mut bad = 0;
    for a in &seqs {
        for b in &seqs {
            let ops = edit_distance(a, b);
            let consistent = ops.substitutions + ops.insertions + ops.deletions == ops.distance
                && ops.insertions + a.len() == ops.deletions + b.len();
            if ops.distance != edit_oracle(a, b) || !consistent {
                bad += 1;
            }
        }
    }
    (seqs.len() * seqs.len(), bad)
}

/// Brute-force sentence BLEU: clip counts by scanning, BLEU-k as the brevity
/// penalty times the geometric mean of the first k precisions.
pub fn bleu_oracle(cand: &[u32], reference: &[u32], max_n: usize) -> Vec<f64> {
    let count = |seq: &[u32], gram: &[u32]| seq.windows(gram.len()).filter(|w| *w == gram).count();
    let mut precisions = Vec::new();
    for n in 1..=max_n {
        if cand.len() < n {
            precisions.push(0.0);
            continue;
        }
        let grams: Vec<&[u32]> = cand.windows(n).collect();
        let mut matched = 0usize;
        let mut seen: Vec<&[u32]> = Vec::new();
        for g in &grams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            matched += count(cand, g).min(count(reference, g));
        }
        precisions.push(matched as f64 / grams.len() as f64);
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c == 0.0 {
        0.0
    } else if c < r {
        (1.0 - r / c).exp()
    } else {
        1.0
    };
    (1..=max_n)
        .map(|k| {
            let p = &precisions[..k];
            if p.contains(&0.0) {
                0.0
            } else {
                100.0 * bp * p.iter().product::<f64>().powf(1.0 / k as f64)
            }
        })
        .collect()
}

/// Largest deviation between the library's BLEU and the oracle over `pairs`
/// random candidate/reference pairs.
pub fn bleu_max_deviation(pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let alphabet = rng.random_range(2..6);
        let cand: Vec<u32> = (0..rng.random_range(0..15)).map(|_| rng.random_range(0..alphabet)).collect();
        let reference: Vec<u32> = (0..rng.random_range(1..15)).map(|_| rng.random_range(0..alphabet)).collect();
        let got = bleu(&cand, &reference, 4);
        let want = bleu_oracle(&cand, &reference, 4);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    worst
}

/// Direct add-one n-gram probability product, counting by scanning every
/// training position.
pub fn perplexity_oracle(order: usize, vocab: usize, corpus: &[Vec<u32>], seq: &[u32]) -> f64 {
    let history = |s: &[u32], t: usize| -> Vec<Option<u32>> {
        (1..order).rev().map(|back| t.checked_sub(back).map(|i| s[i])).collect()
    };
    let mut product = 1.0;
    for t in 0..seq.len() {
        let h = history(seq, t);
        let (mut hist, mut gram) = (0usize, 0usize);
        for s in corpus {
            for u in 0..s.len() {
                if history(s, u) == h {
                    hist += 1;
                    if s[u] == seq[t] {
                        gram += 1;
                    }
                }
            }
        }
        product *= (gram + 1) as f64 / (hist + vocab) as f64;
    }
    product.powf(-1.0 / seq.len() as f64)
}

/// Largest absolute perplexity deviation over `corpora` random toy corpora.
pub fn perplexity_max_deviation(corpora: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..corpora {
        let vocab = rng.random_range(2..8);
        let order = rng.random_range(1..4);
        let corpus: Vec<Vec<u32>> = (0..rng.random_range(1..8))
            .map(|_| (0..rng.random_range(0..12)).map(|_| rng.random_range(0..vocab as u32)).collect())
            .collect();
        let seq: Vec<u32> = (0..rng.random_range(1..12)).map(|_| rng.random_range(0..vocab as u32)).collect();
        let lm = NgramLM::train(order, vocab, &corpus).unwrap();
        let got = lm.perplexity(&seq).unwrap();
        worst = worst.max((got - perplexity_oracle(order, vocab, &corpus, &seq)).abs());
    }
    worst
}

// ---------------------------------------------------------------------------
// Job pipeline

pub fn tiny_backbone_json() -> Value {
    json!({
        "d_model": 16, "n_heads": 2, "n_enc_layers": 1, "n_dec_layers": 1,
        "d_ff": 32, "vocab_size": 16, "max_positions": 48
    })
}

/// Config files for the full toy pipeline, keyed by job name, in run order.
pub fn pipeline_configs() -> Vec<(&'static str, Value)> {
    vec![
        (
            "gen_utterances",
            json!({
                "kind": "gen-corpus",
                "seed": 4,
                "paths": {"corpus": "data/utterances", "output": "runs/gen_utterances"},
                "corpus": {"task": "utterances", "vocab_size": 16, "sizes": {"train": 60, "valid": 4, "test": 4}}
            }),
        ),
        (
            "gen_cipher",
            json!({
                "kind": "gen-corpus",
                "seed": 5,
                "paths": {"corpus": "data/cipher", "output": "runs/gen_cipher"},
                "corpus": {"task": "translation", "vocab_size": 16, "sizes": {"train": 40, "valid": 6, "test": 6},
                           "cipher": {"permutation_seed": 2, "min_len": 3, "max_len": 6}}
            }),
        ),
        (
            "pretrain",
            json!({
                "kind": "pretrain",
                "seed": 6,
                "paths": {"corpus": "data/utterances", "backbone": "ckpt/backbone.upck", "output": "runs/pretrain"},
                "backbone": tiny_backbone_json(),
                "pretrain": {"steps": 30, "batch_size": 4}
            }),
        ),
        (
            "tune",
            json!({
                "kind": "tune",
                "seed": 7,
                "paths": {"corpus": "data/cipher", "backbone": "ckpt/backbone.upck",
                          "prompts": "ckpt/prompts.upck", "output": "runs/tune"},
                "prompt": {"len": 3},
                "tune": {"steps": 20, "batch_size": 4, "adam": {"lr": 0.01}}
            }),
        ),
        (
            "generate",
            json!({
                "kind": "generate",
                "seed": 8,
                "paths": {"corpus": "data/cipher", "backbone": "ckpt/backbone.upck",
                          "prompts": "ckpt/prompts.upck", "output": "runs/generate"},
                "decode": {"mode": "sample", "temperature": 0.8, "max_len": 10}
            }),
        ),
        (
            "eval",
            json!({
                "kind": "eval",
                "paths": {"corpus": "data/cipher", "backbone": "ckpt/backbone.upck",
                          "hypotheses": "runs/generate/hypotheses.txt", "output": "runs/eval"}
            }),
        ),
    ]
}

/// Writes every pipeline config into `dir` and returns their paths.
pub fn write_pipeline(dir: &Path) -> Vec<(&'static str, PathBuf)> {
    pipeline_configs()
        .into_iter()
        .map(|(name, v)| {
            let path = dir.join(format!("{name}.json"));
            fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
            (name, path)
        })
        .collect()
}

/// Runs the pipeline in `dir` through the library.
pub fn run_pipeline(dir: &Path) -> Vec<RunLog> {
    write_pipeline(dir)
        .into_iter()
        .map(|(name, path)| {
            let (job, source) = load_job(&path, &[], None).unwrap();
            run(&job, &source).unwrap_or_else(|e| panic!("{name}: {e}"))
        })
        .collect()
}

/// Every file under `root` (relative path → bytes), run logs excluded
/// because they carry wall-clock time.
pub fn artifact_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != "run_log.json" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
