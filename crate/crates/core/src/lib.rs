//! Deep prompt tuning for a frozen encoder–decoder transformer over discrete
//! speech units, with synthetic task generators and an evaluation battery.
//!
//! The pieces, bottom up:
//!
//! * [`units`]: unit sequences, vocabularies, units files and manifests;
//! * [`numerics`]: dense matrices, a reverse-mode tape and Adam;
//! * [`model`]: the backbone and its span-denoising pretraining;
//! * [`prompt`]: prompt sets, prompt tuning and decoding;
//! * [`tasks`]: translation, inpainting and continuation corpora;
//! * [`metrics`]: BLEU, auto-BLEU, WER/CER and n-gram perplexity;
//! * [`checkpoint`], [`trainer`] and [`cli`]: reproducible jobs on disk.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod fsio;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod prompt;
pub mod tasks;
pub mod trainer;
pub mod units;

pub use error::{Error, Result};
pub use model::{BackboneConfig, BackboneModel};
pub use prompt::{PromptLayout, PromptSet};
pub use units::{UnitSequence, Vocabulary};
