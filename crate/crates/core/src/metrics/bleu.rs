//! Corpus-level BLEU with modified n-gram precision (clipping) and the
//! classical brevity penalty. No smoothing by default: a zero n-gram overlap
//! zeroes the geometric mean, matching the corpus-level definition.

use crate::num::Scalar;

use super::text::{hash_text, ngram_key, FpMap};
use super::MetricsError;

/// Smoothing for the modified precisions. `None` is the classical definition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Adds epsilon to numerator and denominator of zero precisions.
    Epsilon(f64),
}

/// Per-candidate clipped-match bookkeeping, summable across a corpus.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct BleuPartial {
    pub matched: [u64; 4],
    pub total: [u64; 4],
    pub cand_len: u64,
    pub ref_len: u64,
}

impl BleuPartial {
    pub(crate) fn add(&mut self, other: &BleuPartial) {
        for n in 0..4 {
            self.matched[n] += other.matched[n];
            self.total[n] += other.total[n];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }
}

/// Scratch maps reused across items to avoid per-item allocation.
#[derive(Default)]
pub(crate) struct BleuScratch {
    cand: FpMap<u64>,
    refs: FpMap<u64>,
    one_ref: FpMap<u64>,
}

pub(crate) fn bleu_partial(
    cand: &[u64],
    refs: &[&[u64]],
    max_n: usize,
    scratch: &mut BleuScratch,
) -> BleuPartial {
    let mut p = BleuPartial {
        cand_len: cand.len() as u64,
        ref_len: closest_ref_len(cand.len(), refs) as u64,
        ..Default::default()
    };
    for n in 1..=max_n {
        if cand.len() < n {
            continue;
        }
        scratch.cand.clear();
        for w in cand.windows(n) {
            *scratch.cand.entry(ngram_key(w)).or_insert(0) += 1;
        }
        scratch.refs.clear();
        for r in refs {
            if r.len() < n {
                continue;
            }
            // max reference count per n-gram across references
            scratch.one_ref.clear();
            for w in r.windows(n) {
                *scratch.one_ref.entry(ngram_key(w)).or_insert(0) += 1;
            }
            for (&k, &v) in &scratch.one_ref {
                let e = scratch.refs.entry(k).or_insert(0);
                *e = (*e).max(v);
            }
        }
        let mut matched = 0;
        let mut total = 0;
        for (k, &c) in &scratch.cand {
            total += c;
            matched += c.min(scratch.refs.get(k).copied().unwrap_or(0));
        }
        p.matched[n - 1] = matched;
        p.total[n - 1] = total;
    }
    p
}

/// Closest reference length to the candidate length; ties go to the shorter.
fn closest_ref_len(cand_len: usize, refs: &[&[u64]]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(cand_len), l))
        .unwrap_or(0)
}

pub(crate) fn bleu_from_partial<F: Scalar>(
    sum: &BleuPartial,
    max_n: usize,
    smoothing: Smoothing,
) -> Vec<F> {
    let mut precisions = [0f64; 4];
    for (n, precision) in precisions.iter_mut().enumerate().take(max_n) {
        let (m, t) = (sum.matched[n] as f64, sum.total[n] as f64);
        *precision = match smoothing {
            Smoothing::None => {
                if t > 0.0 {
                    m / t
                } else {
                    0.0
                }
            }
            Smoothing::Epsilon(eps) => {
                if t > 0.0 && m > 0.0 {
                    m / t
                } else {
                    eps / (t + eps)
                }
            }
        };
    }
    let bp = if sum.cand_len == 0 {
        0.0
    } else if sum.cand_len > sum.ref_len {
        1.0
    } else {
        (1.0 - sum.ref_len as f64 / sum.cand_len as f64).exp()
    };
    (1..=max_n)
        .map(|k| {
            let mut log_sum = 0.0;
            for &p in &precisions[..k] {
                if p <= 0.0 {
                    return F::zero();
                }
                log_sum += p.ln();
            }
            F::from_f64_c(bp * (log_sum / k as f64).exp())
        })
        .collect()
}

/// Corpus BLEU-1..max_n over raw texts.
pub fn bleu<F: Scalar>(
    candidates: &[String],
    references: &[Vec<String>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<Vec<F>, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if !(1..=4).contains(&max_n) {
        return Err(MetricsError::BadMaxN(max_n));
    }
    let mut sum = BleuPartial::default();
    let mut scratch = BleuScratch::default();
    for (i, (c, rs)) in candidates.iter().zip(references).enumerate() {
        if rs.is_empty() {
            return Err(MetricsError::MissingReference { index: i });
        }
        let cand = hash_text(c);
        let refs: Vec<_> = rs.iter().map(|r| hash_text(r)).collect();
        let ref_slices: Vec<&[u64]> = refs.iter().map(|h| h.toks.as_slice()).collect();
        sum.add(&bleu_partial(&cand.toks, &ref_slices, max_n, &mut scratch));
    }
    Ok(bleu_from_partial(&sum, max_n, smoothing))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(cands: &[&str], refs: &[&[&str]]) -> Vec<f64> {
        let c: Vec<String> = cands.iter().map(|s| s.to_string()).collect();
        let r: Vec<Vec<String>> = refs
            .iter()
            .map(|rs| rs.iter().map(|s| s.to_string()).collect())
            .collect();
        bleu(&c, &r, 4, Smoothing::None).unwrap()
    }

    #[test]
    fn identity_candidate_scores_one() {
        let b = run(
            &["the cat sat on the mat"],
            &[&["the cat sat on the mat"]],
        );
        for score in b {
            assert!((score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn brevity_penalty_hand_case() {
        // candidate "the cat sat" vs reference "the cat sat on the mat":
        // p1 = 1, c = 3, r = 6, BP = exp(1 - 6/3) = e^-1
        let b = run(&["the cat sat"], &[&["the cat sat on the mat"]]);
        assert!((b[0] - (-1.0f64).exp()).abs() < 1e-9, "B1 = {}", b[0]);
    }

    #[test]
    fn zero_fourgram_overlap_zeroes_b4() {
        let b = run(&["a b c x"], &[&["a b c d"]]);
        assert!(b[0] > 0.0);
        assert_eq!(b[3], 0.0);
    }

    #[test]
    fn smoothing_switch_rescues_zero_precision() {
        let c = vec!["a b c x".to_string()];
        let r = vec![vec!["a b c d".to_string()]];
        let plain: Vec<f64> = bleu(&c, &r, 4, Smoothing::None).unwrap();
        let smoothed: Vec<f64> = bleu(&c, &r, 4, Smoothing::Epsilon(1e-9)).unwrap();
        assert_eq!(plain[3], 0.0);
        assert!(smoothed[3] > 0.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            bleu::<f64>(&[], &[], 4, Smoothing::None),
            Err(MetricsError::EmptyInput)
        ));
    }

    #[test]
    fn clipping_limits_repeated_ngrams() {
        // "the the the" vs "the cat": unigram matches clipped at 1
        let b = run(&["the the the"], &[&["the cat"]]);
        // p1 = 1/3, c=3 > r=2 so BP=1
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-12);
    }
}
