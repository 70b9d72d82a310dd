//! Parser for the bracketed triplet list the synthesis prompts demand:
//! `[{Q:<r>, A:<r>, E:<r>}, ...]`. Real model output violates "strictly"
//! often, so the parser tolerates surrounding prose, flexible whitespace, and
//! optional quotes around keys and values; values may contain commas (fields
//! are delimited by the `, A:` / `, E:` markers, matched left to right).
//! Strictness violations are reported, not enforced.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::SynthError;

/// One parsed question-answer-explanation triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthTriplet {
    pub question: String,
    pub answer: String,
    pub explanation: String,
}

/// A diagnostic tied to a byte position in the raw output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    pub position: usize,
    pub reason: String,
}

/// Outcome of parsing one raw model output. Every `{...}` group found is
/// accounted for by either a triplet or an error entry; warnings carry the
/// soft checks (answers longer than 3 words).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub triplets: Vec<SynthTriplet>,
    pub errors: Vec<ParseIssue>,
    pub warnings: Vec<ParseIssue>,
    pub raw: String,
}

static Q_HEAD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^\s*["']?Q["']?\s*:\s*"#).expect("regex"));
static A_SEP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#",\s*["']?A["']?\s*:\s*"#).expect("regex"));
static E_SEP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#",\s*["']?E["']?\s*:\s*"#).expect("regex"));

/// Strip one layer of matching quotes and surrounding whitespace.
fn clean_value(v: &str) -> String {
    let v = v.trim();
    for quote in ['"', '\''] {
        if v.len() >= 2 && v.starts_with(quote) && v.ends_with(quote) {
            return v[1..v.len() - 1].trim().to_string();
        }
    }
    v.to_string()
}

fn parse_group(content: &str) -> Result<SynthTriplet, String> {
    let Some(head) = Q_HEAD.find(content) else {
        return Err("group does not start with Q:".to_string());
    };
    let rest = &content[head.end()..];
    let Some(a_sep) = A_SEP.find(rest) else {
        return Err("missing , A: separator".to_string());
    };
    let question = clean_value(&rest[..a_sep.start()]);
    let rest = &rest[a_sep.end()..];
    let Some(e_sep) = E_SEP.find(rest) else {
        return Err("missing , E: separator".to_string());
    };
    let answer = clean_value(&rest[..e_sep.start()]);
    let explanation = clean_value(&rest[e_sep.end()..]);
    if question.is_empty() || answer.is_empty() || explanation.is_empty() {
        return Err("empty field".to_string());
    }
    Ok(SynthTriplet {
        question,
        answer,
        explanation,
    })
}

/// Parse a raw completion into triplets. A count mismatch against
/// `expected_k` is recorded as an error entry; the parsed triplets are still
/// returned.
pub fn parse_triplets(raw: &str, expected_k: usize) -> Result<ParseReport, SynthError> {
    let list_start = raw.find('[').ok_or(SynthError::NoListFound)?;

    // Extract balanced-enough `{...}` groups: a group ends at the next '}'
    // outside double quotes. Single quotes are left to the value cleaner so
    // apostrophes in prose do not derail the scan.
    let mut groups: Vec<(usize, &str)> = Vec::new();
    let mut errors: Vec<ParseIssue> = Vec::new();
    let mut group_start: Option<usize> = None;
    let mut in_quotes = false;
    for (i, ch) in raw[list_start..].char_indices() {
        let pos = list_start + i;
        match group_start {
            None => match ch {
                '{' => group_start = Some(pos),
                ']' => break,
                _ => {}
            },
            Some(start) => match ch {
                '"' => in_quotes = !in_quotes,
                '}' if !in_quotes => {
                    groups.push((start, &raw[start + 1..pos]));
                    group_start = None;
                }
                _ => {}
            },
        }
    }
    if let Some(start) = group_start {
        errors.push(ParseIssue {
            position: start,
            reason: "unterminated group (unbalanced braces)".to_string(),
        });
    }

    let mut triplets = Vec::new();
    let mut warnings = Vec::new();
    for (pos, content) in groups {
        match parse_group(content) {
            Ok(t) => {
                let words = t.answer.split_whitespace().count();
                if words > 3 {
                    warnings.push(ParseIssue {
                        position: pos,
                        reason: format!("answer has {words} words (maximum of 3 requested)"),
                    });
                }
                triplets.push(t);
            }
            Err(reason) => errors.push(ParseIssue { position: pos, reason }),
        }
    }
    if triplets.len() != expected_k {
        errors.push(ParseIssue {
            position: list_start,
            reason: format!("expected {expected_k} triplets, parsed {}", triplets.len()),
        });
    }
    Ok(ParseReport {
        triplets,
        errors,
        warnings,
        raw: raw.to_string(),
    })
}

/// Render triplets through the output grammar, the inverse of
/// [`parse_triplets`] on marker-free values.
pub fn render_triplets(triplets: &[SynthTriplet]) -> String {
    let groups: Vec<String> = triplets
        .iter()
        .map(|t| format!("{{Q: {}, A: {}, E: {}}}", t.question, t.answer, t.explanation))
        .collect();
    format!("[{}]", groups.join(", "))
}
