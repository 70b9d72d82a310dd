//! NLG metric suite (BLEU-1..4, METEOR, ROUGE-L, CIDEr-D) with the
//! filtered/unfiltered evaluation protocol and answer extraction from
//! generated sequences.
//!
//! Corpus scoring is parallel over items with all floating-point reductions
//! done sequentially in item order, so scores are identical for any worker
//! count. SPICE is deliberately absent (it needs a scene-graph parser);
//! reports simply omit it.

mod bleu;
mod cider;
mod meteor;
mod rouge;
mod text;

pub use bleu::{bleu, Smoothing};
pub use cider::cider_d;
pub use meteor::meteor;
pub use rouge::rouge_l;
pub use text::{metric_tokenize, stem};

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_ws, ANSWER_MARKER, BECAUSE_MARKER};

use bleu::{bleu_from_partial, bleu_partial, BleuPartial, BleuScratch};
use cider::{cider_item, df_insert_item, df_merge, CiderScratch, DocFreq};
use meteor::meteor_item;
use rouge::rouge_item;
use text::{hash_text, HashedText};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty candidate set")]
    EmptyInput,
    #[error("candidate {index} has no references")]
    MissingReference { index: usize },
    #[error("{candidates} candidates vs {references} reference sets")]
    LengthMismatch {
        candidates: usize,
        references: usize,
    },
    #[error("max_n must be in 1..=4, got {0}")]
    BadMaxN(usize),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Answer extraction failure: which marker was missing, plus whatever could
/// still be recovered.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("extraction failed: marker {missing_marker:?} not found")]
pub struct ExtractionFailed {
    pub missing_marker: &'static str,
    pub partial_answer: Option<String>,
    pub partial_explanation: Option<String>,
}

/// Split a generated sequence at the first answer marker and the first
/// because marker after it. The sequence may start directly with
/// "the answer is" (question-free generation).
pub fn extract_answer_explanation(text: &str) -> Result<(String, String), ExtractionFailed> {
    let after_answer = if let Some(rest) = text.strip_prefix(ANSWER_MARKER.trim_start()) {
        rest
    } else if let Some(pos) = text.find(ANSWER_MARKER) {
        &text[pos + ANSWER_MARKER.len()..]
    } else {
        return Err(ExtractionFailed {
            missing_marker: "the answer is",
            partial_answer: None,
            partial_explanation: text
                .find(BECAUSE_MARKER)
                .map(|p| text[p + BECAUSE_MARKER.len()..].to_string()),
        });
    };
    match after_answer.find(BECAUSE_MARKER) {
        Some(pos) => Ok((
            after_answer[..pos].to_string(),
            after_answer[pos + BECAUSE_MARKER.len()..].to_string(),
        )),
        None => Err(ExtractionFailed {
            missing_marker: "because",
            partial_answer: Some(after_answer.to_string()),
            partial_explanation: None,
        }),
    }
}

/// Normal form for answer-correctness comparison: case-folded, ASCII
/// punctuation replaced by spaces, whitespace collapsed.
pub fn normalize_answer(s: &str) -> String {
    let folded: String = s
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    normalize_ws(&folded)
}

/// One scored generation with its gold targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub sample_id: String,
    pub generated_text: String,
    pub extracted_answer: Option<String>,
    pub extracted_explanation: Option<String>,
    pub extraction_ok: bool,
    pub gold_answers: Vec<String>,
    pub gold_explanations: Vec<String>,
}

/// Line format of a predictions file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub generated_text: String,
    pub gold_answers: Vec<String>,
    pub gold_explanations: Vec<String>,
}

impl Prediction {
    pub fn from_generated(
        sample_id: impl Into<String>,
        generated_text: impl Into<String>,
        gold_answers: Vec<String>,
        gold_explanations: Vec<String>,
    ) -> Self {
        let generated_text = generated_text.into();
        let (extracted_answer, extracted_explanation, extraction_ok) =
            match extract_answer_explanation(&generated_text) {
                Ok((a, e)) => (Some(a), Some(e), true),
                Err(f) => (f.partial_answer, f.partial_explanation, false),
            };
        Prediction {
            sample_id: sample_id.into(),
            generated_text,
            extracted_answer,
            extracted_explanation,
            extraction_ok,
            gold_answers,
            gold_explanations,
        }
    }

    pub fn from_record(r: PredictionRecord) -> Self {
        Prediction::from_generated(r.sample_id, r.generated_text, r.gold_answers, r.gold_explanations)
    }

    /// Failed extractions count as incorrect; otherwise the extracted answer
    /// must match ANY gold answer in normal form.
    pub fn answer_correct(&self) -> bool {
        if !self.extraction_ok {
            return false;
        }
        let Some(answer) = &self.extracted_answer else {
            return false;
        };
        let norm = normalize_answer(answer);
        self.gold_answers.iter().any(|g| normalize_answer(g) == norm)
    }
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, MetricsError> {
    read_predictions_from(std::fs::File::open(path)?)
}

pub fn read_predictions_from(reader: impl Read) -> Result<Vec<Prediction>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        out.push(Prediction::from_record(record));
    }
    Ok(out)
}

pub fn write_predictions<'a>(
    records: impl IntoIterator<Item = &'a PredictionRecord>,
    mut writer: impl Write,
) -> Result<(), MetricsError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| MetricsError::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Filtered,
    Unfiltered,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filtered" => Ok(EvalMode::Filtered),
            "unfiltered" => Ok(EvalMode::Unfiltered),
            other => Err(format!("unknown mode {other:?} (filtered|unfiltered)")),
        }
    }
}

/// Corpus scores. BLEU/METEOR/ROUGE-L in [0,1], CIDEr-D in [0,10].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

impl ScoreSet {
    fn rounded(&self) -> ScoreSet {
        let r = |x: f64| (x * 1e4).round() / 1e4;
        ScoreSet {
            bleu1: r(self.bleu1),
            bleu2: r(self.bleu2),
            bleu3: r(self.bleu3),
            bleu4: r(self.bleu4),
            meteor: r(self.meteor),
            rouge_l: r(self.rouge_l),
            cider: r(self.cider),
        }
    }
}

/// Evaluation outcome under one protocol mode. In filtered mode with zero
/// answer-correct predictions (the empty-filtered-set condition) the report
/// is still produced, with `scores` absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: EvalMode,
    pub n_evaluated: usize,
    pub n_total: usize,
    pub answer_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreSet>,
}

impl MetricReport {
    /// External JSON form: scores rounded to 4 decimal places.
    pub fn to_json(&self) -> String {
        let mut rounded = self.clone();
        rounded.scores = rounded.scores.map(|s| s.rounded());
        serde_json::to_string_pretty(&rounded).expect("report serialization")
    }
}

struct ItemPass {
    cand: Vec<u64>,
    refs: Vec<Vec<u64>>,
    bleu: BleuPartial,
    rouge: f64,
    meteor: f64,
}

/// Score predictions under the given protocol. Worker parallelism follows the
/// ambient rayon pool; results are bitwise independent of its size.
pub fn evaluate(predictions: &[Prediction], mode: EvalMode) -> Result<MetricReport, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for (i, p) in predictions.iter().enumerate() {
        if p.gold_explanations.is_empty() {
            return Err(MetricsError::MissingReference { index: i });
        }
    }
    let correct: Vec<bool> = predictions.par_iter().map(Prediction::answer_correct).collect();
    let n_total = predictions.len();
    let n_correct = correct.iter().filter(|&&c| c).count();
    let answer_accuracy = n_correct as f64 / n_total as f64;

    let selected: Vec<usize> = match mode {
        EvalMode::Unfiltered => (0..n_total).collect(),
        EvalMode::Filtered => (0..n_total).filter(|&i| correct[i]).collect(),
    };
    let n_evaluated = selected.len();
    let scores = if selected.is_empty() {
        None
    } else {
        Some(score_items(predictions, &selected))
    };
    Ok(MetricReport {
        mode,
        n_evaluated,
        n_total,
        answer_accuracy,
        scores,
    })
}

fn score_items(predictions: &[Prediction], selected: &[usize]) -> ScoreSet {
    // Pass 1: tokenize once, per-item BLEU partials and ROUGE/METEOR scores.
    let pass1: Vec<ItemPass> = selected
        .par_iter()
        .map_init(BleuScratch::default, |scratch, &i| {
            let p = &predictions[i];
            let cand_text = p.extracted_explanation.as_deref().unwrap_or("");
            let cand = hash_text(cand_text);
            let refs: Vec<HashedText> =
                p.gold_explanations.iter().map(|r| hash_text(r)).collect();
            let meteor = meteor_item::<f64>(&cand, &refs);
            let ref_toks: Vec<Vec<u64>> = refs.into_iter().map(|h| h.toks).collect();
            let slices: Vec<&[u64]> = ref_toks.iter().map(Vec::as_slice).collect();
            let rouge = rouge_item::<f64>(&cand.toks, &slices);
            let bleu = bleu_partial(&cand.toks, &slices, 4, scratch);
            ItemPass {
                cand: cand.toks,
                refs: ref_toks,
                bleu,
                rouge,
                meteor,
            }
        })
        .collect();

    // Sequential reductions in item order keep results worker-independent.
    let mut bleu_sum = BleuPartial::default();
    let mut rouge_sum = 0f64;
    let mut meteor_sum = 0f64;
    for item in &pass1 {
        bleu_sum.add(&item.bleu);
        rouge_sum += item.rouge;
        meteor_sum += item.meteor;
    }
    let n = pass1.len() as f64;
    let b = bleu_from_partial::<f64>(&bleu_sum, 4, Smoothing::None);

    // Document frequencies: integer merges commute, so a parallel fold is exact.
    let df: DocFreq = pass1
        .par_iter()
        .fold(
            || (DocFreq::default(), Vec::new()),
            |(mut df, mut seen), item| {
                let slices: Vec<&[u64]> = item.refs.iter().map(Vec::as_slice).collect();
                df_insert_item(&slices, &mut df, &mut seen);
                (df, seen)
            },
        )
        .map(|(df, _)| df)
        .reduce(DocFreq::default, df_merge);

    // Pass 2: CIDEr similarities against the corpus-level idf.
    let n_items = pass1.len();
    let cider_scores: Vec<f64> = pass1
        .par_iter()
        .map_init(CiderScratch::default, |scratch, item| {
            let slices: Vec<&[u64]> = item.refs.iter().map(Vec::as_slice).collect();
            cider_item::<f64>(&item.cand, &slices, &df, n_items, scratch)
        })
        .collect();
    let cider = cider_scores.iter().sum::<f64>() / n;

    ScoreSet {
        bleu1: b[0],
        bleu2: b[1],
        bleu3: b[2],
        bleu4: b[3],
        meteor: meteor_sum / n,
        rouge_l: rouge_sum / n,
        cider,
    }
}
