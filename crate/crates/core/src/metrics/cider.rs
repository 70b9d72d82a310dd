//! CIDEr-D: tf-idf weighted n-gram cosine consensus for n = 1..4, with
//! candidate count clipping, a Gaussian length penalty (sigma = 6), and the
//! conventional factor of 10. Document frequencies are computed over the
//! reference sets of the whole corpus; idf = ln(N / df).

use crate::num::Scalar;

use super::text::{hash_text, ngram_key, FpMap};
use super::MetricsError;

pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;
const MAX_N: usize = 4;

pub(crate) type DocFreq = FpMap<u32>;

/// Record every distinct reference n-gram of one item into a document
/// frequency map (each item contributes at most 1 per n-gram).
pub(crate) fn df_insert_item(refs: &[&[u64]], df: &mut DocFreq, seen: &mut Vec<u64>) {
    seen.clear();
    for r in refs {
        for n in 1..=MAX_N.min(r.len()) {
            for w in r.windows(n) {
                seen.push(ngram_key(w));
            }
        }
    }
    seen.sort_unstable();
    seen.dedup();
    for &k in seen.iter() {
        *df.entry(k).or_insert(0) += 1;
    }
}

pub(crate) fn df_merge(mut a: DocFreq, b: DocFreq) -> DocFreq {
    if a.len() < b.len() {
        return df_merge(b, a);
    }
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

/// Scratch space for the per-item similarity computation.
#[derive(Default)]
pub(crate) struct CiderScratch {
    cand: FpMap<f64>,
    refv: FpMap<f64>,
}

fn tfidf_vector(
    toks: &[u64],
    n: usize,
    df: &DocFreq,
    ln_n_items: f64,
    out: &mut FpMap<f64>,
) -> f64 {
    out.clear();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *out.entry(ngram_key(w)).or_insert(0.0) += 1.0;
        }
    }
    let mut norm_sq = 0.0;
    for (k, v) in out.iter_mut() {
        let d = f64::from(df.get(k).copied().unwrap_or(0).max(1));
        *v *= ln_n_items - d.ln();
        norm_sq += *v * *v;
    }
    norm_sq.sqrt()
}

/// Per-item CIDEr-D score in [0, 10]: clipped tf-idf cosine per n, averaged
/// over n and references, Gaussian length penalty, scaled by 10.
pub(crate) fn cider_item<F: Scalar>(
    cand: &[u64],
    refs: &[&[u64]],
    df: &DocFreq,
    n_items: usize,
    scratch: &mut CiderScratch,
) -> F {
    let ln_n_items = (n_items as f64).ln();
    let mut acc = [0f64; MAX_N];
    for r in refs {
        let delta = cand.len() as f64 - r.len() as f64;
        let length_penalty = (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        for n in 1..=MAX_N {
            let cand_norm = tfidf_vector(cand, n, df, ln_n_items, &mut scratch.cand);
            let ref_norm = tfidf_vector(r, n, df, ln_n_items, &mut scratch.refv);
            if cand_norm == 0.0 || ref_norm == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            for (k, &cv) in &scratch.cand {
                if let Some(&rv) = scratch.refv.get(k) {
                    // clip the candidate weight at the reference weight
                    dot += cv.min(rv) * rv;
                }
            }
            acc[n - 1] += length_penalty * dot / (cand_norm * ref_norm);
        }
    }
    let mean_n = acc.iter().sum::<f64>() / MAX_N as f64;
    F::from_f64_c(CIDER_SCALE * mean_n / refs.len() as f64)
}

/// Corpus CIDEr-D over raw texts.
pub fn cider_d<F: Scalar>(
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
    let cands: Vec<_> = candidates.iter().map(|c| hash_text(c).toks).collect();
    let refs: Vec<Vec<Vec<u64>>> = references
        .iter()
        .map(|rs| rs.iter().map(|r| hash_text(r).toks).collect())
        .collect();
    let mut df = DocFreq::default();
    let mut seen = Vec::new();
    for (i, rs) in refs.iter().enumerate() {
        if rs.is_empty() {
            return Err(MetricsError::MissingReference { index: i });
        }
        let slices: Vec<&[u64]> = rs.iter().map(Vec::as_slice).collect();
        df_insert_item(&slices, &mut df, &mut seen);
    }
    let n_items = cands.len();
    let mut scratch = CiderScratch::default();
    let mut sum = F::zero();
    for (cand, rs) in cands.iter().zip(&refs) {
        let slices: Vec<&[u64]> = rs.iter().map(Vec::as_slice).collect();
        sum += cider_item::<F>(cand, &slices, &df, n_items, &mut scratch);
    }
    Ok(sum / F::from_usize_c(n_items))
}
