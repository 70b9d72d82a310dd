//! ROUGE-L: longest-common-subsequence F-measure with beta = 1.2, max over
//! references, mean over candidates.

use crate::num::Scalar;

use super::text::hash_text;
use super::MetricsError;

pub const ROUGE_BETA: f64 = 1.2;

/// LCS length over fingerprint sequences, one-row DP.
pub(crate) fn lcs_len(a: &[u64], b: &[u64]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; b.len() + 1];
    for &x in a {
        let mut prev_diag = 0;
        for (j, &y) in b.iter().enumerate() {
            let tmp = row[j + 1];
            row[j + 1] = if x == y {
                prev_diag + 1
            } else {
                row[j + 1].max(row[j])
            };
            prev_diag = tmp;
        }
    }
    row[b.len()]
}

/// Per-item score: best F over the references.
pub(crate) fn rouge_item<F: Scalar>(cand: &[u64], refs: &[&[u64]]) -> F {
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    let mut best = 0f64;
    for r in refs {
        if cand.is_empty() || r.is_empty() {
            continue;
        }
        let lcs = lcs_len(cand, r) as f64;
        let prec = lcs / cand.len() as f64;
        let rec = lcs / r.len() as f64;
        if prec > 0.0 && rec > 0.0 {
            let f = ((1.0 + beta2) * prec * rec) / (rec + beta2 * prec);
            best = best.max(f);
        }
    }
    F::from_f64_c(best)
}

/// Corpus ROUGE-L over raw texts.
pub fn rouge_l<F: Scalar>(
    candidates: &[String],
    references: &[Vec<String>],
) -> Result<F, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    let mut sum = F::zero();
    for (i, (c, rs)) in candidates.iter().zip(references).enumerate() {
        if rs.is_empty() {
            return Err(MetricsError::MissingReference { index: i });
        }
        let cand = hash_text(c);
        let refs: Vec<_> = rs.iter().map(|r| hash_text(r)).collect();
        let ref_slices: Vec<&[u64]> = refs.iter().map(|h| h.toks.as_slice()).collect();
        sum += rouge_item::<F>(&cand.toks, &ref_slices);
    }
    Ok(sum / F::from_usize_c(candidates.len()))
}
