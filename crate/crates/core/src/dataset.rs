//! Preference triples and their JSON-lines representation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Which construction produced a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Clair,
    JudgeOnPolicy,
    JudgeOffPolicy,
    StrongerPreferred,
    Synthetic,
}

impl Source {
    pub const ALL: [Source; 5] = [
        Source::Clair,
        Source::JudgeOnPolicy,
        Source::JudgeOffPolicy,
        Source::StrongerPreferred,
        Source::Synthetic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Clair => "clair",
            Source::JudgeOnPolicy => "judge-on-policy",
            Source::JudgeOffPolicy => "judge-off-policy",
            Source::StrongerPreferred => "stronger-preferred",
            Source::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown source {s:?}")))
    }
}

/// One `(prompt, winning, losing)` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub prompt: String,
    pub winning: String,
    pub losing: String,
    pub source: Source,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl PreferenceTriple {
    pub fn new(
        prompt: impl Into<String>,
        winning: impl Into<String>,
        losing: impl Into<String>,
        source: Source,
    ) -> Result<Self> {
        let triple = Self {
            prompt: prompt.into(),
            winning: winning.into(),
            losing: losing.into(),
            source,
            meta: BTreeMap::new(),
        };
        triple.validate()?;
        Ok(triple)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.winning.is_empty() {
            return Err(Error::Precondition("winning response is empty".into()));
        }
        if self.losing.is_empty() {
            return Err(Error::Precondition("losing response is empty".into()));
        }
        Ok(())
    }

    fn from_json_line(line: &str, lineno: usize) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err("expected a JSON object".into()))?;
        let text_field = |name: &str| -> Result<String> {
            match obj.get(name) {
                None => Err(parse_err(format!("missing field {name}"))),
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(parse_err(format!("field {name} must be a string"))),
            }
        };
        let prompt = text_field("prompt")?;
        let winning = text_field("winning")?;
        let losing = text_field("losing")?;
        let source: Source = text_field("source")?
            .parse()
            .map_err(|e: Error| parse_err(e.to_string()))?;
        let meta = match obj.get("meta") {
            None | Some(Value::Null) => BTreeMap::new(),
            Some(m) => serde_json::from_value(m.clone())
                .map_err(|e| parse_err(format!("field meta: {e}")))?,
        };
        let triple = Self {
            prompt,
            winning,
            losing,
            source,
            meta,
        };
        triple
            .validate()
            .map_err(|e| parse_err(e.to_string()))?;
        Ok(triple)
    }
}

/// Reads a JSON-lines dataset. Blank lines are skipped.
pub fn read_dataset(path: &Path) -> Result<Vec<PreferenceTriple>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(PreferenceTriple::from_json_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, triples: &[PreferenceTriple]) -> Result<()> {
    write_jsonl(path, triples)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one JSON object per line into `T`, naming the line on failure.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Length caps applied before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthCaps {
    pub max_prompt: usize,
    /// Includes the trailing EOS.
    pub max_response: usize,
}

impl Default for LengthCaps {
    fn default() -> Self {
        Self {
            max_prompt: 8,
            max_response: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedTriple {
    pub prompt_ids: Vec<TokenId>,
    pub winning_ids: Vec<TokenId>,
    pub losing_ids: Vec<TokenId>,
}

impl TokenizedTriple {
    /// Prompts keep their last `max_prompt` tokens; responses keep their
    /// first `max_response - 1` tokens followed by EOS.
    pub fn new(triple: &PreferenceTriple, vocab: &Vocabulary, caps: LengthCaps) -> Self {
        let mut prompt_ids = vocab.encode(&triple.prompt, false);
        if prompt_ids.len() > caps.max_prompt {
            prompt_ids.drain(..prompt_ids.len() - caps.max_prompt);
        }
        let response = |text: &str| {
            let mut ids = vocab.encode(text, false);
            ids.truncate(caps.max_response.saturating_sub(1));
            ids.push(Vocabulary::EOS);
            ids
        };
        Self {
            prompt_ids,
            winning_ids: response(&triple.winning),
            losing_ids: response(&triple.losing),
        }
    }
}
