//! Discrete unit sequences, vocabularies and their on-disk text formats.
//!
//! A units file holds one utterance per line as space-separated decimal unit
//! ids. Empty lines are empty utterances. A manifest is a tab-separated table
//! with the header `id<TAB>src_path<TAB>tgt_path`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Unit = u32;

/// Closed unit vocabulary. Content units are `0..size-4`; the top four ids are
/// reserved as PAD, BOS, EOS and MASK in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: u32,
}

impl Vocabulary {
    pub const RESERVED: u32 = 4;

    pub fn new(size: u32) -> Result<Self> {
        if size < Self::RESERVED + 1 {
            return Err(Error::InvalidVocabulary(format!(
                "size {size} leaves no content units (need at least {})",
                Self::RESERVED + 1
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// Number of non-reserved units.
    pub fn content_size(&self) -> u32 {
        self.size - Self::RESERVED
    }

    pub fn pad(&self) -> Unit {
        self.size - 4
    }

    pub fn bos(&self) -> Unit {
        self.size - 3
    }

    pub fn eos(&self) -> Unit {
        self.size - 2
    }

    pub fn mask(&self) -> Unit {
        self.size - 1
    }

    pub fn is_reserved(&self, unit: Unit) -> bool {
        unit >= self.pad() && unit < self.size
    }

    pub fn check(&self, unit: Unit) -> Result<()> {
        if unit < self.size {
            Ok(())
        } else {
            Err(Error::Vocabulary {
                unit,
                vocab_size: self.size,
            })
        }
    }

    pub fn validate(&self, seq: &UnitSequence) -> Result<()> {
        seq.iter().try_for_each(|&u| self.check(u))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitSequence(Vec<Unit>);

impl UnitSequence {
    pub fn new(units: Vec<Unit>) -> Self {
        Self(units)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Unit] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Unit> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<Unit> {
        self.0
    }
}

impl From<Vec<Unit>> for UnitSequence {
    fn from(units: Vec<Unit>) -> Self {
        Self(units)
    }
}

impl From<&[Unit]> for UnitSequence {
    fn from(units: &[Unit]) -> Self {
        Self(units.to_vec())
    }
}

impl std::ops::Deref for UnitSequence {
    type Target = [Unit];

    fn deref(&self) -> &[Unit] {
        &self.0
    }
}

impl AsRef<[Unit]> for UnitSequence {
    fn as_ref(&self) -> &[Unit] {
        &self.0
    }
}

impl FromIterator<Unit> for UnitSequence {
    fn from_iter<I: IntoIterator<Item = Unit>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl fmt::Display for UnitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_units_line(self))
    }
}

/// Keeps the first unit of every maximal run of equal adjacent units.
pub fn dedup(seq: &UnitSequence) -> UnitSequence {
    let mut out = seq.0.clone();
    out.dedup();
    UnitSequence(out)
}

pub fn parse_units_line(text: &str, vocab: &Vocabulary) -> Result<UnitSequence> {
    parse_line_inner(text, vocab, None)
}

fn parse_line_inner(text: &str, vocab: &Vocabulary, line: Option<usize>) -> Result<UnitSequence> {
    let mut units = Vec::new();
    let mut token = 0;
    let mut rest = text;
    let mut offset = 0;
    while let Some(start) = rest.find(|c: char| !c.is_whitespace()) {
        let tail = &rest[start..];
        let end = tail.find(char::is_whitespace).unwrap_or(tail.len());
        let word = &tail[..end];
        token += 1;
        let unit: Unit = word
            .bytes()
            .all(|b| b.is_ascii_digit())
            .then(|| word.parse().ok())
            .flatten()
            .ok_or_else(|| Error::Parse {
                line,
                token,
                column: offset + start + 1,
                text: word.to_string(),
            })?;
        vocab.check(unit)?;
        units.push(unit);
        offset += start + end;
        rest = &tail[end..];
    }
    Ok(UnitSequence(units))
}

pub fn format_units_line(seq: &UnitSequence) -> String {
    let mut out = String::with_capacity(seq.len() * 3);
    for (i, u) in seq.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&u.to_string());
    }
    out
}

pub fn parse_units_text(text: &str, vocab: &Vocabulary) -> Result<Vec<UnitSequence>> {
    // A trailing newline terminates the last utterance rather than starting a new one.
    let body = text.strip_suffix('\n').unwrap_or(text);
    if text.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| parse_line_inner(line.trim_end_matches('\r'), vocab, Some(i + 1)))
        .collect()
}

pub fn format_units_text(seqs: &[UnitSequence]) -> String {
    let mut out = String::new();
    for seq in seqs {
        out.push_str(&format_units_line(seq));
        out.push('\n');
    }
    out
}

pub fn read_units_file(path: &Path, vocab: &Vocabulary) -> Result<Vec<UnitSequence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_units_text(&text, vocab).map_err(|e| Error::Path {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub src_path: PathBuf,
    pub tgt_path: PathBuf,
}

pub const MANIFEST_HEADER: &str = "id\tsrc_path\ttgt_path";

pub fn format_manifest(rows: &[ManifestRow]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            row.id,
            row.src_path.display(),
            row.tgt_path.display()
        ));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "manifest header must be `{}`, found `{}`",
                MANIFEST_HEADER.escape_default(),
                other.unwrap_or("").escape_default()
            )))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            match cols.as_slice() {
                [id, src, tgt] => Ok(ManifestRow {
                    id: id.to_string(),
                    src_path: PathBuf::from(src),
                    tgt_path: PathBuf::from(tgt),
                }),
                _ => Err(Error::Config(format!(
                    "manifest line {}: expected 3 tab-separated columns, found {}",
                    i + 2,
                    cols.len()
                ))),
            }
        })
        .collect()
}

/// A manifest row with both sides loaded. Each side's file holds a single
/// utterance on its first line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub id: String,
    pub src: UnitSequence,
    pub tgt: UnitSequence,
}

/// Reads a manifest and every unit file it references. Paths in the manifest
/// are relative to the manifest's directory.
pub fn read_manifest_pairs(path: &Path, vocab: &Vocabulary) -> Result<Vec<PairRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text)?
        .into_iter()
        .map(|row| {
            let load = |p: &Path| -> Result<UnitSequence> {
                let mut seqs = read_units_file(&base.join(p), vocab)?;
                Ok(if seqs.is_empty() {
                    UnitSequence::empty()
                } else {
                    seqs.swap_remove(0)
                })
            };
            Ok(PairRecord {
                src: load(&row.src_path)?,
                tgt: load(&row.tgt_path)?,
                id: row.id,
            })
        })
        .collect()
}
