use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctc::Alphabet;
use crate::error::{Error, Result};

/// How a transcript splits into scoring tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// Space-separated words spelled with the alphabet's characters.
    #[default]
    Word,
    /// Space-separated phones, each a single alphabet symbol.
    Phone,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Audio path as written; relative paths resolve against the manifest.
    pub audio: PathBuf,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<Unit>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub unit: Unit,
    /// Directory relative audio paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, unit: Unit, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate utterance id {:?}", e.id)));
            }
            if e.text.trim().is_empty() {
                return Err(Error::invalid(format!("utterance {:?} has an empty transcript", e.id)));
            }
        }
        Ok(Manifest {
            entries,
            unit,
            base_dir: base_dir.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn audio_path(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.audio.is_absolute() {
            entry.audio.clone()
        } else {
            self.base_dir.join(&entry.audio)
        }
    }

    /// Scoring tokens of an entry's transcript.
    pub fn tokens(&self, entry: &ManifestEntry) -> Vec<String> {
        tokenize(&entry.text, self.unit)
    }

    /// Sorted set of transcript symbols. Word manifests include the space;
    /// phone manifests require every token to be a single character.
    pub fn alphabet(&self) -> Result<Alphabet> {
        let mut symbols = BTreeSet::new();
        for e in &self.entries {
            match self.unit {
                Unit::Word => symbols.extend(normalize_transcript(&e.text).chars()),
                Unit::Phone => {
                    for tok in e.text.split_whitespace() {
                        let mut chars = tok.chars();
                        match (chars.next(), chars.next()) {
                            (Some(c), None) => {
                                symbols.insert(c);
                            }
                            _ => {
                                return Err(Error::invalid(format!(
                                    "utterance {:?}: phone {tok:?} is not a single character",
                                    e.id
                                )))
                            }
                        }
                    }
                }
            }
        }
        Alphabet::new(symbols)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::file(path, e))?);
        for e in &self.entries {
            let row = ManifestEntry {
                unit: Some(self.unit),
                ..e.clone()
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Lowercases and collapses whitespace; apostrophes are kept.
pub fn normalize_transcript(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tokenize(text: &str, unit: Unit) -> Vec<String> {
    match unit {
        Unit::Word => normalize_transcript(text)
            .split(' ')
            .filter(|w| !w.is_empty())
            .map(String::from)
            .collect(),
        Unit::Phone => text.split_whitespace().map(String::from).collect(),
    }
}

/// Parses JSON-lines `{id, audio, text[, unit]}` rows. Referenced audio
/// files must exist.
pub fn parse_manifest(text: &str, base_dir: impl Into<PathBuf>) -> Result<Manifest> {
    let base_dir = base_dir.into();
    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut unit: Option<Unit> = None;
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            what: "manifest",
            line: n + 1,
            msg,
        };
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if !seen.insert(entry.id.clone()) {
            return Err(bad(format!("duplicate utterance id {:?}", entry.id)));
        }
        if entry.text.trim().is_empty() {
            return Err(bad(format!("utterance {:?} has an empty transcript", entry.id)));
        }
        let row_unit = entry.unit.unwrap_or_default();
        match unit {
            None => unit = Some(row_unit),
            Some(u) if u != row_unit => {
                return Err(bad(format!("unit {row_unit:?} differs from earlier rows ({u:?})")))
            }
            _ => {}
        }
        let audio = if entry.audio.is_absolute() {
            entry.audio.clone()
        } else {
            base_dir.join(&entry.audio)
        };
        if !audio.is_file() {
            return Err(bad(format!("audio file {} does not exist", audio.display())));
        }
        entries.push(ManifestEntry { unit: None, ..entry });
    }
    Manifest::new(entries, unit.unwrap_or_default(), base_dir)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, base).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::file(path, format!("line {line}: {msg}")),
        other => other,
    })
}
