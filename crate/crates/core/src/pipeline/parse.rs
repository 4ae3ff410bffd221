//! Parsing reviser and judge responses, and pair filters.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REASONING_ID: &str = "{{teacher_reasoning}}";
pub const CORRECTED_ID: &str = "{{corrected_student_solution}}";

/// Why a response or pair was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reject {
    MissingIdentifier,
    EmptyRevision,
    NoVerdict,
    LengthRatio,
    EmptyResponse,
}

impl Reject {
    pub fn as_str(&self) -> &'static str {
        match self {
            Reject::MissingIdentifier => "missing-identifier",
            Reject::EmptyRevision => "empty-revision",
            Reject::NoVerdict => "no-verdict",
            Reject::LengthRatio => "length-ratio",
            Reject::EmptyResponse => "empty-response",
        }
    }
}

impl fmt::Display for Reject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevisionResult {
    pub reasoning: String,
    pub revised: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeResult {
    /// 1 or 2.
    pub winner_index: u8,
    pub raw: String,
}

fn strip_label(s: &str) -> &str {
    let s = s.trim_start();
    s.strip_prefix(':').unwrap_or(s).trim()
}

/// Takes everything after the last corrected-solution identifier as the
/// revision. Reasoning is the text between the reasoning identifier and it,
/// or empty when the reasoning identifier is absent.
pub fn parse_revision(raw: &str) -> std::result::Result<RevisionResult, Reject> {
    let at = raw.rfind(CORRECTED_ID).ok_or(Reject::MissingIdentifier)?;
    let revised = strip_label(&raw[at + CORRECTED_ID.len()..]);
    if revised.is_empty() {
        return Err(Reject::EmptyRevision);
    }
    let before = &raw[..at];
    let reasoning = before
        .find(REASONING_ID)
        .map(|r| strip_label(&before[r + REASONING_ID.len()..]).to_string())
        .unwrap_or_default();
    Ok(RevisionResult {
        reasoning,
        revised: revised.to_string(),
        raw: raw.to_string(),
    })
}

/// The last literal `[1]` or `[2]` in the response is the verdict.
pub fn parse_judgement(raw: &str) -> std::result::Result<JudgeResult, Reject> {
    let one = raw.rfind("[1]");
    let two = raw.rfind("[2]");
    let winner_index = match (one, two) {
        (None, None) => return Err(Reject::NoVerdict),
        (Some(_), None) => 1,
        (None, Some(_)) => 2,
        (Some(a), Some(b)) => {
            if a > b {
                1
            } else {
                2
            }
        }
    };
    Ok(JudgeResult {
        winner_index,
        raw: raw.to_string(),
    })
}

/// Closed interval on `chars(y_w) / chars(y_l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthFilter {
    pub lo: f64,
    pub hi: f64,
}

impl Default for LengthFilter {
    fn default() -> Self {
        Self { lo: 0.5, hi: 2.0 }
    }
}

impl LengthFilter {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < 1.0 && hi > 1.0 && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "length filter needs 0 < lo < 1 < hi, got lo={lo} hi={hi}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn check(&self, y_l: &str, y_w: &str) -> std::result::Result<(), Reject> {
        length_filter(y_l, y_w, self.lo, self.hi)
    }
}

pub fn length_filter(y_l: &str, y_w: &str, lo: f64, hi: f64) -> std::result::Result<(), Reject> {
    let n_l = y_l.chars().count();
    if n_l == 0 {
        return Err(Reject::EmptyResponse);
    }
    let ratio = y_w.chars().count() as f64 / n_l as f64;
    if lo <= ratio && ratio <= hi {
        Ok(())
    } else {
        Err(Reject::LengthRatio)
    }
}
