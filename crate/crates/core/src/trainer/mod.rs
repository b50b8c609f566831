//! Reproducible jobs: corpus generation, pretraining, prompt tuning,
//! generation, evaluation and report aggregation.

mod batch;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{load_backbone, load_prompts, save_backbone, save_prompts};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::metrics::{evaluate_run, EvalConfig, MetricReport};
use crate::model::{pretrain_backbone, BackboneConfig, PretrainConfig};
use crate::prompt::{
    generate, init_prompts, teacher_forced_accuracy, tune, DecodeConfig, PromptLayout, TuneConfig,
    DEFAULT_PROMPT_LEN,
};
use crate::tasks::{build_corpus, CorpusConfig, TaskMeta, TaskSample};
use crate::units::{format_units_text, read_manifest_pairs, read_units_file, PairRecord, UnitSequence, Vocabulary};

pub use batch::{batch, batch_logits, batch_loss, Batch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    GenCorpus,
    Pretrain,
    #[serde(alias = "prompt-tune")]
    Tune,
    Generate,
    #[serde(alias = "evaluate")]
    Eval,
    Report,
}

impl JobKind {
    pub fn name(self) -> &'static str {
        match self {
            JobKind::GenCorpus => "gen-corpus",
            JobKind::Pretrain => "pretrain",
            JobKind::Tune => "tune",
            JobKind::Generate => "generate",
            JobKind::Eval => "eval",
            JobKind::Report => "report",
        }
    }
}

/// File locations, relative to the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobPaths {
    /// Corpus directory: written by `gen-corpus`, read by every other job.
    pub corpus: Option<PathBuf>,
    /// Backbone checkpoint: written by `pretrain`, read by `tune` and `generate`.
    pub backbone: Option<PathBuf>,
    /// Prompt checkpoint: written by `tune`, optionally read by `generate`.
    pub prompts: Option<PathBuf>,
    /// Directory for the run log, hypotheses and reports.
    pub output: PathBuf,
    /// Units file of generated sequences; defaults to `<output>/hypotheses.txt`.
    pub hypotheses: Option<PathBuf>,
    /// Manifest whose targets train the perplexity model; defaults to the
    /// evaluated split.
    pub lm_corpus: Option<PathBuf>,
    /// Metric reports aggregated by `report`.
    pub reports: Vec<PathBuf>,
}

impl Default for JobPaths {
    fn default() -> Self {
        Self {
            corpus: None,
            backbone: None,
            prompts: None,
            output: PathBuf::from("out"),
            hypotheses: None,
            lm_corpus: None,
            reports: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub len: usize,
    pub cross_attention: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            len: DEFAULT_PROMPT_LEN,
            cross_attention: PromptLayout::default().cross_attention,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub kind: JobKind,
    /// When set, replaces every nested seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: JobPaths,
    #[serde(default)]
    pub corpus: Option<CorpusConfig>,
    #[serde(default)]
    pub backbone: Option<BackboneConfig>,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Split that `generate` decodes and `eval` scores.
    #[serde(default = "default_split")]
    pub split: String,
}

fn default_split() -> String {
    "test".into()
}

impl JobConfig {
    pub fn new(kind: JobKind) -> Self {
        serde_json::from_value(json!({ "kind": kind })).expect("defaults deserialize")
    }

    /// Nested configs with the job seed applied.
    fn seeded(&self) -> Self {
        let mut c = self.clone();
        if let Some(s) = self.seed {
            if let Some(corpus) = &mut c.corpus {
                corpus.seed = s;
            }
            c.pretrain.seed = s;
            c.tune.seed = s;
            c.decode.seed = s;
        }
        c
    }
}

/// Where a job came from: the base directory for relative paths and the
/// exact config text, echoed into the run log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JobSource {
    pub base_dir: PathBuf,
    pub config_text: String,
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub kind: JobKind,
    pub steps: Vec<StepLoss>,
    pub wall_clock_secs: f64,
    pub final_metrics: BTreeMap<String, Value>,
    pub artifacts: Vec<PathBuf>,
    pub config: String,
    pub overrides: Vec<String>,
}

impl RunLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run log serializes") + "\n"
    }
}

/// Parses JSON config text, applies `key=value` overrides (dotted keys,
/// values parsed as JSON or else taken as strings) and checks the job kind.
pub fn parse_job(text: &str, overrides: &[String], kind: Option<JobKind>) -> Result<JobConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
    if !value.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    if let Some(kind) = kind {
        match value.get("kind") {
            None => {
                value["kind"] = json!(kind);
            }
            Some(k) => {
                let declared: JobKind = serde_json::from_value(k.clone())
                    .map_err(|e| Error::Config(format!("kind: {e}")))?;
                if declared != kind {
                    return Err(Error::Config(format!(
                        "config declares kind {:?} but the {} command was used",
                        declared.name(),
                        kind.name()
                    )));
                }
            }
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    unreachable!("keys have at least one part")
}

/// Reads a config file and applies overrides. Relative paths in the config
/// are resolved against the file's directory.
pub fn load_job(path: &Path, overrides: &[String], kind: Option<JobKind>) -> Result<(JobConfig, JobSource)> {
    if !path.is_file() {
        return Err(Error::Path {
            path: path.to_path_buf(),
            reason: "config file does not exist".into(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let job = parse_job(&text, overrides, kind).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((
        job,
        JobSource {
            base_dir,
            config_text: text,
            overrides: overrides.to_vec(),
        },
    ))
}

struct Ctx<'a> {
    job: JobConfig,
    src: &'a JobSource,
}

impl Ctx<'_> {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.src.base_dir.join(p)
        }
    }

    fn required(&self, name: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        p.as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("paths.{name} is required for {}", self.job.kind.name())))
    }

    fn existing(&self, name: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        let path = self.required(name, p)?;
        exists(&path)?;
        Ok(path)
    }

    fn output(&self) -> PathBuf {
        self.resolve(&self.job.paths.output)
    }

    fn manifest(&self, split: &str) -> Result<PathBuf> {
        let dir = self.existing("corpus", &self.job.paths.corpus)?;
        let m = dir.join(format!("{split}.tsv"));
        exists(&m)?;
        Ok(m)
    }

    fn hypotheses(&self) -> PathBuf {
        match &self.job.paths.hypotheses {
            Some(p) => self.resolve(p),
            None => self.output().join("hypotheses.txt"),
        }
    }

    fn backbone_cfg(&self) -> Result<BackboneConfig> {
        let cfg = self
            .job
            .backbone
            .ok_or_else(|| Error::Config(format!("a backbone section is required for {}", self.job.kind.name())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Path {
            path: path.to_path_buf(),
            reason: "does not exist".into(),
        })
    }
}

fn samples(records: Vec<PairRecord>) -> Vec<TaskSample> {
    records
        .into_iter()
        .map(|r| TaskSample {
            id: r.id,
            src: r.src,
            tgt: r.tgt,
            meta: TaskMeta::Pair,
        })
        .collect()
}

/// Checks everything that can be checked without doing work: sections,
/// input paths and nested parameters.
fn validate(ctx: &Ctx) -> Result<()> {
    let job = &ctx.job;
    match job.kind {
        JobKind::GenCorpus => {
            ctx.required("corpus", &job.paths.corpus)?;
            job.corpus
                .as_ref()
                .ok_or_else(|| Error::Config("a corpus section is required for gen-corpus".into()))?
                .validate()?;
        }
        JobKind::Pretrain => {
            ctx.backbone_cfg()?;
            job.pretrain.validate()?;
            ctx.manifest("train")?;
            ctx.required("backbone", &job.paths.backbone)?;
        }
        JobKind::Tune => {
            job.tune.validate()?;
            ctx.existing("backbone", &job.paths.backbone)?;
            ctx.manifest("train")?;
            ctx.required("prompts", &job.paths.prompts)?;
        }
        JobKind::Generate => {
            job.decode.validate()?;
            ctx.existing("backbone", &job.paths.backbone)?;
            if job.paths.prompts.is_some() {
                ctx.existing("prompts", &job.paths.prompts)?;
            }
            ctx.manifest(&job.split)?;
        }
        JobKind::Eval => {
            ctx.manifest(&job.split)?;
            exists(&ctx.hypotheses())?;
            if let Some(p) = &job.paths.lm_corpus {
                exists(&ctx.resolve(p))?;
            }
            match &job.backbone {
                Some(b) => b.validate()?,
                None => {
                    ctx.existing("backbone", &job.paths.backbone)?;
                }
            }
        }
        JobKind::Report => {
            if job.paths.reports.is_empty() {
                return Err(Error::Config("paths.reports must list at least one report".into()));
            }
            for p in &job.paths.reports {
                exists(&ctx.resolve(p))?;
            }
        }
    }
    Ok(())
}

/// Runs one job: validates it, does the work, writes artifacts atomically and
/// persists the run log as `<output>/run_log.json`.
pub fn run(job: &JobConfig, source: &JobSource) -> Result<RunLog> {
    let ctx = Ctx {
        job: job.seeded(),
        src: source,
    };
    validate(&ctx)?;
    let start = Instant::now();
    let mut log = RunLog {
        kind: job.kind,
        steps: Vec::new(),
        wall_clock_secs: 0.0,
        final_metrics: BTreeMap::new(),
        artifacts: Vec::new(),
        config: source.config_text.clone(),
        overrides: source.overrides.clone(),
    };
    match job.kind {
        JobKind::GenCorpus => gen_corpus_job(&ctx, &mut log)?,
        JobKind::Pretrain => pretrain_job(&ctx, &mut log)?,
        JobKind::Tune => tune_job(&ctx, &mut log)?,
        JobKind::Generate => generate_job(&ctx, &mut log)?,
        JobKind::Eval => eval_job(&ctx, &mut log)?,
        JobKind::Report => report_job(&ctx, &mut log)?,
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    write_atomic(&ctx.output().join("run_log.json"), log.to_json().as_bytes())?;
    Ok(log)
}

fn gen_corpus_job(ctx: &Ctx, log: &mut RunLog) -> Result<()> {
    let cfg = ctx.job.corpus.as_ref().expect("validated");
    let dir = ctx.required("corpus", &ctx.job.paths.corpus)?;
    let summary = build_corpus(cfg, &dir)?;
    log.final_metrics.insert("train".into(), json!(summary.sizes.train));
    log.final_metrics.insert("valid".into(), json!(summary.sizes.valid));
    log.final_metrics.insert("test".into(), json!(summary.sizes.test));
    log.artifacts = summary.manifests;
    Ok(())
}

fn pretrain_job(ctx: &Ctx, log: &mut RunLog) -> Result<()> {
    let backbone = ctx.backbone_cfg()?;
    let vocab = backbone.vocab();
    let corpus: Vec<UnitSequence> = read_manifest_pairs(&ctx.manifest("train")?, &vocab)?
        .into_iter()
        .map(|r| r.tgt)
        .collect();
    let (model, report) = pretrain_backbone(&corpus, backbone, &ctx.job.pretrain)?;
    log.steps = losses(&report.losses);
    if let Some(&last) = report.losses.last() {
        log.final_metrics.insert("final_loss".into(), json!(last));
    }
    log.final_metrics.insert("parameters".into(), json!(model.param_count()));
    let out = ctx.required("backbone", &ctx.job.paths.backbone)?;
    save_backbone(&out, &model)?;
    log.artifacts.push(out);
    Ok(())
}

fn losses(values: &[f64]) -> Vec<StepLoss> {
    values
        .iter()
        .enumerate()
        .map(|(i, &loss)| StepLoss { step: i as u64, loss })
        .collect()
}

fn tune_job(ctx: &Ctx, log: &mut RunLog) -> Result<()> {
    let job = &ctx.job;
    let mut model = load_backbone(&ctx.existing("backbone", &job.paths.backbone)?)?;
    model.freeze();
    let vocab = model.vocab();
    let train = samples(read_manifest_pairs(&ctx.manifest("train")?, &vocab)?);
    let layout = PromptLayout {
        cross_attention: job.prompt.cross_attention,
    };
    let init = init_prompts(model.config(), job.prompt.len, layout, job.tune.seed, job.tune.init_scale);
    let (prompts, report) = tune(&model, init, &train, &job.tune)?;
    log.steps = losses(&report.losses);
    if let Some(&last) = report.losses.last() {
        log.final_metrics.insert("final_loss".into(), json!(last));
    }
    log.final_metrics.insert("prompt_parameters".into(), json!(prompts.param_count()));
    let valid_manifest = ctx.required("corpus", &job.paths.corpus)?.join("valid.tsv");
    if valid_manifest.exists() {
        let valid = samples(read_manifest_pairs(&valid_manifest, &vocab)?);
        if !valid.is_empty() {
            let acc = teacher_forced_accuracy(&model, Some(&prompts), &valid)?;
            log.final_metrics.insert("valid_accuracy".into(), json!(acc.rate()));
            log.final_metrics.insert("valid_content_accuracy".into(), json!(acc.content_rate()));
        }
    }
    let out = ctx.required("prompts", &job.paths.prompts)?;
    save_prompts(&out, &prompts)?;
    log.artifacts.push(out);
    Ok(())
}

fn generate_job(ctx: &Ctx, log: &mut RunLog) -> Result<()> {
    let job = &ctx.job;
    let model = load_backbone(&ctx.existing("backbone", &job.paths.backbone)?)?;
    let prompts = match &job.paths.prompts {
        Some(p) => Some(load_prompts(&ctx.resolve(p), Some(model.config()))?),
        None => None,
    };
    let rows = read_manifest_pairs(&ctx.manifest(&job.split)?, &model.vocab())?;
    let hyps = rows
        .iter()
        .map(|r| generate(&model, prompts.as_ref(), &r.src, &job.decode))
        .collect::<Result<Vec<_>>>()?;
    let out = ctx.hypotheses();
    write_atomic(&out, format_units_text(&hyps).as_bytes())?;
    log.final_metrics.insert("n_samples".into(), json!(hyps.len()));
    log.artifacts.push(out);
    Ok(())
}

fn eval_job(ctx: &Ctx, log: &mut RunLog) -> Result<()> {
    let job = &ctx.job;
    let vocab: Vocabulary = match &job.backbone {
        Some(b) => b.vocab(),
        None => load_backbone(&ctx.existing("backbone", &job.paths.backbone)?)?.vocab(),
    };
    let refs = read_manifest_pairs(&ctx.manifest(&job.split)?, &vocab)?;
    let hyps = read_units_file(&ctx.hypotheses(), &vocab)?;
    let lm_corpus: Vec<UnitSequence> = match &job.paths.lm_corpus {
        Some(p) => read_manifest_pairs(&ctx.resolve(p), &vocab)?.into_iter().map(|r| r.tgt).collect(),
        None => refs.iter().map(|r| r.tgt.clone()).collect(),
    };
    let report = evaluate_run(&refs, &hyps, &lm_corpus, &vocab, &job.eval)?;
    let out = ctx.output().join("report.json");
    write_atomic(&out, report.to_json().as_bytes())?;
    if let Value::Object(m) = serde_json::to_value(&report).expect("report serializes") {
        log.final_metrics.extend(m);
    }
    log.artifacts.push(out);
    Ok(())
}

/// Tab-separated table with one row per report, named by file stem.
pub fn report_table(reports: &[(String, MetricReport)]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut out = String::from("run\tbleu_1\tbleu_2\tbleu_3\tbleu_4\tauto_bleu_1\tauto_bleu_2\tauto_bleu_3\twer\tcer\tppx\tn_samples\n");
    for (name, r) in reports {
        let cells = [
            fmt(Some(r.bleu_1)),
            fmt(Some(r.bleu_2)),
            fmt(Some(r.bleu_3)),
            fmt(Some(r.bleu_4)),
            fmt(r.auto_bleu_1),
            fmt(r.auto_bleu_2),
            fmt(r.auto_bleu_3),
            fmt(Some(r.wer)),
            fmt(Some(r.cer)),
            fmt(r.ppx),
            r.n_samples.to_string(),
        ];
        out.push_str(&format!("{name}\t{}\n", cells.join("\t")));
    }
    out
}

fn report_job(ctx: &Ctx, log: &mut RunLog) -> Result<()> {
    let mut reports = Vec::new();
    for p in &ctx.job.paths.reports {
        let path = ctx.resolve(p);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: MetricReport = serde_json::from_str(&text).map_err(|e| Error::Path {
            path: path.clone(),
            reason: format!("not a metric report: {e}"),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        reports.push((name, report));
    }
    let out = ctx.output().join("summary.tsv");
    write_atomic(&out, report_table(&reports).as_bytes())?;
    log.final_metrics.insert("reports".into(), json!(reports.len()));
    log.artifacts.push(out);
    Ok(())
}
