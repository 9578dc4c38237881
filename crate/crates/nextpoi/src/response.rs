//! Extraction of the structured recommendation from raw model text.
//!
//! Models are asked for a bare JSON object but routinely wrap it in prose or
//! code fences. Parsing therefore tries the whole text first, then the first
//! balanced `{…}` substring, and otherwise reports a failure status — a
//! failed parse is a scored outcome, not an error.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::candidates::CandidateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    /// The whole response was the requested JSON object.
    Clean,
    /// The object was recovered from surrounding text.
    Recovered,
    /// No usable object was found; the case scores zero.
    Failed,
}

/// A parsed and sanitized recommendation.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub poi_ids: Vec<String>,
    pub reason: String,
    pub raw_text: String,
    pub parse_status: ParseStatus,
}

/// Pulls the id list and reason out of raw model text.
///
/// Ids may come back as JSON strings or numbers; numbers are stringified.
/// Array elements of any other type are dropped.
pub fn parse_recommendation(raw_text: &str) -> (Vec<String>, String, ParseStatus) {
    if let Some((ids, reason)) = extract_fields(raw_text.trim()) {
        return (ids, reason, ParseStatus::Clean);
    }
    if let Some(fragment) = first_balanced_object(raw_text) {
        if let Some((ids, reason)) = extract_fields(fragment) {
            return (ids, reason, ParseStatus::Recovered);
        }
    }
    (Vec::new(), String::new(), ParseStatus::Failed)
}

fn extract_fields(text: &str) -> Option<(Vec<String>, String)> {
    let value: Value = serde_json::from_str(text).ok()?;
    let object = value.as_object()?;
    let ids = object
        .get("recommendation")?
        .as_array()?
        .iter()
        .filter_map(|item| match item {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        })
        .collect();
    let reason = object.get("reason").and_then(Value::as_str).unwrap_or("").to_string();
    Some((ids, reason))
}

/// The first balanced top-level `{…}` substring, honoring JSON string
/// escaping rules.
fn first_balanced_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Drops ids outside the candidate set, deduplicates keeping the first
/// occurrence, and truncates to `k`. Never pads a short list.
pub fn sanitize(ids: &[String], candidate_set: &CandidateSet, k: usize) -> Vec<String> {
    let valid: std::collections::HashSet<&str> = candidate_set.poi_ids().collect();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for id in ids {
        if out.len() == k {
            break;
        }
        if valid.contains(id.as_str()) && seen.insert(id.as_str()) {
            out.push(id.clone());
        }
    }
    out
}
