use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::source::{SourceConfig, UtteranceSource};
use super::split::{split_speaker_disjoint, SplitRatios, UtteranceRecord};
use super::{
    gen_continuation_sample, gen_inpainting_sample, gen_translation_pair, Cipher, CipherSpec, InpaintConfig,
    TaskMeta, TaskSample,
};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::units::{format_manifest, format_units_line, ManifestRow, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Translation,
    Inpainting,
    Continuation,
    /// Clean utterances with `src == tgt`, used to pretrain the backbone.
    Utterances,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        Self {
            train: 100,
            valid: 10,
            test: 10,
        }
    }
}

impl CorpusSizes {
    fn get(&self, split: &str) -> usize {
        match split {
            "train" => self.train,
            "valid" => self.valid,
            _ => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sizes: CorpusSizes,
    pub vocab_size: u32,
    #[serde(default)]
    pub inpainting: InpaintConfig,
    #[serde(default = "default_ratio")]
    pub conditional_ratio: f64,
    #[serde(default)]
    pub cipher: CipherSpec,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub split_ratios: SplitRatios,
}

fn default_ratio() -> f64 {
    0.5
}

impl CorpusConfig {
    pub fn new(task: TaskKind, vocab_size: u32) -> Self {
        Self {
            task,
            seed: 0,
            sizes: CorpusSizes::default(),
            vocab_size,
            inpainting: InpaintConfig::default(),
            conditional_ratio: default_ratio(),
            cipher: CipherSpec::default(),
            source: SourceConfig::default(),
            split_ratios: SplitRatios::default(),
        }
    }

    pub fn validate(&self) -> Result<Vocabulary> {
        let vocab = Vocabulary::new(self.vocab_size)?;
        match self.task {
            TaskKind::Inpainting => self.inpainting.validate()?,
            TaskKind::Continuation if !(self.conditional_ratio > 0.0 && self.conditional_ratio < 1.0) => {
                return Err(Error::Config(format!(
                    "conditional_ratio must lie strictly between 0 and 1, got {}",
                    self.conditional_ratio
                )));
            }
            _ => {}
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub task: TaskKind,
    pub sizes: CorpusSizes,
    pub manifests: Vec<PathBuf>,
}

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Serialize)]
struct MetaLine<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    speaker: Option<&'a str>,
    #[serde(flatten)]
    meta: &'a TaskMeta,
}

/// Generates every split in memory. Pure in `(cfg)`.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<(String, Vec<(Option<String>, TaskSample)>)>> {
    let vocab = cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.task == TaskKind::Translation {
        let cipher = Cipher::from_spec(&cfg.cipher, &vocab)?;
        return Ok(SPLITS
            .iter()
            .map(|&split| {
                let samples = (0..cfg.sizes.get(split))
                    .map(|i| (None, gen_translation_pair(&mut rng, &cipher, format!("{split}-{i:06}"))))
                    .collect();
                (split.to_string(), samples)
            })
            .collect());
    }

    let source = UtteranceSource::new(vocab.content_size() as usize, cfg.source, &mut rng)?;
    let records = source.records(&mut rng);
    let split = split_speaker_disjoint(&records, &mut rng, cfg.split_ratios)?;
    let mut out = Vec::new();
    for (name, part) in SPLITS.iter().zip(split.parts()) {
        let samples = samples_from(cfg, &vocab, name, part, &mut rng)?;
        out.push((name.to_string(), samples));
    }
    Ok(out)
}

fn samples_from<R: Rng>(
    cfg: &CorpusConfig,
    vocab: &Vocabulary,
    split: &str,
    part: &[UtteranceRecord],
    rng: &mut R,
) -> Result<Vec<(Option<String>, TaskSample)>> {
    let want = cfg.sizes.get(split);
    let mut out = Vec::with_capacity(want);
    if want == 0 {
        return Ok(out);
    }
    let mut order: Vec<&UtteranceRecord> = part.iter().collect();
    order.shuffle(rng);
    // Cycle through the split's utterances; a full pass that yields nothing
    // means no utterance qualifies for this task.
    loop {
        let before = out.len();
        for rec in &order {
            if out.len() == want {
                return Ok(out);
            }
            let id = format!("{split}-{:06}", out.len());
            let sample = match cfg.task {
                TaskKind::Inpainting => gen_inpainting_sample(&rec.units, rng, &cfg.inpainting, vocab, id),
                TaskKind::Continuation => gen_continuation_sample(&rec.units, cfg.conditional_ratio, id)?,
                TaskKind::Utterances => Some(TaskSample {
                    id,
                    src: rec.units.clone(),
                    tgt: rec.units.clone(),
                    meta: TaskMeta::Utterance,
                }),
                TaskKind::Translation => unreachable!("translation samples are not drawn from utterances"),
            };
            if let Some(s) = sample {
                out.push((Some(rec.speaker.clone()), s));
            }
        }
        if out.len() == before {
            return Err(Error::Config(format!(
                "no {split} utterance is long enough for the {:?} task",
                cfg.task
            )));
        }
    }
}

/// Writes per-split manifests (`<split>.tsv`), unit files
/// (`<split>/<id>.src`, `<split>/<id>.tgt`), per-sample metadata
/// (`<split>.meta.jsonl`) and the generating config (`corpus.json`).
pub fn build_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<CorpusSummary> {
    let splits = generate_corpus(cfg)?;
    let mut manifests = Vec::new();
    for (split, samples) in &splits {
        let mut rows = Vec::with_capacity(samples.len());
        let mut meta = String::new();
        for (speaker, s) in samples {
            let src = format!("{split}/{}.src", s.id);
            let tgt = format!("{split}/{}.tgt", s.id);
            write_atomic(&out_dir.join(&src), format!("{}\n", format_units_line(&s.src)).as_bytes())?;
            write_atomic(&out_dir.join(&tgt), format!("{}\n", format_units_line(&s.tgt)).as_bytes())?;
            rows.push(ManifestRow {
                id: s.id.clone(),
                src_path: src.into(),
                tgt_path: tgt.into(),
            });
            let line = MetaLine {
                id: &s.id,
                speaker: speaker.as_deref(),
                meta: &s.meta,
            };
            writeln!(meta, "{}", serde_json::to_string(&line).expect("metadata serializes")).unwrap();
        }
        let manifest = out_dir.join(format!("{split}.tsv"));
        write_atomic(&manifest, format_manifest(&rows).as_bytes())?;
        write_atomic(&out_dir.join(format!("{split}.meta.jsonl")), meta.as_bytes())?;
        manifests.push(manifest);
    }
    let echo = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    write_atomic(&out_dir.join("corpus.json"), echo.as_bytes())?;
    Ok(CorpusSummary {
        task: cfg.task,
        sizes: cfg.sizes,
        manifests,
    })
}
