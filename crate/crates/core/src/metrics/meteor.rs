//! METEOR, simplified to exact and stem unigram matching (no synonym stage).
//! Parameters alpha = 0.9, beta = 3, gamma = 0.5. Alignment maximizes matches
//! stage by stage, preferring contiguous reference positions so the chunk
//! penalty stays meaningful.

use crate::num::Scalar;

use super::text::{hash_text, FpMap, HashedText};
use super::MetricsError;

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

/// Greedy one stage of alignment over key sequences. For each unmatched
/// candidate position (left to right) take the reference position that
/// extends the previous match contiguously when possible, otherwise the
/// lowest unmatched one.
fn align_stage(
    cand_keys: &[u64],
    ref_keys: &[u64],
    cand_match: &mut [Option<usize>],
    ref_used: &mut [bool],
) {
    let mut positions: FpMap<Vec<usize>> = FpMap::default();
    for (j, &k) in ref_keys.iter().enumerate() {
        if !ref_used[j] {
            positions.entry(k).or_default().push(j);
        }
    }
    let mut prev_j: Option<usize> = None;
    for (i, &k) in cand_keys.iter().enumerate() {
        if cand_match[i].is_some() {
            prev_j = cand_match[i];
            continue;
        }
        let Some(open) = positions.get_mut(&k) else {
            continue;
        };
        let pick = prev_j
            .map(|p| p + 1)
            .filter(|next| open.contains(next))
            .or_else(|| open.iter().copied().find(|&j| !ref_used[j]));
        if let Some(j) = pick {
            if ref_used[j] {
                continue;
            }
            cand_match[i] = Some(j);
            ref_used[j] = true;
            open.retain(|&x| x != j);
            prev_j = Some(j);
        }
    }
}

/// Count maximal runs of matches contiguous in both candidate and reference.
fn count_chunks(cand_match: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, m) in cand_match.iter().enumerate() {
        if let Some(j) = m {
            match prev {
                Some((pi, pj)) if pi + 1 == i && pj + 1 == *j => {}
                _ => chunks += 1,
            }
            prev = Some((i, *j));
        }
    }
    chunks
}

pub(crate) fn meteor_pair<F: Scalar>(cand: &HashedText, reference: &HashedText) -> F {
    let lc = cand.toks.len();
    let lr = reference.toks.len();
    if lc == 0 || lr == 0 {
        return F::zero();
    }
    let mut cand_match = vec![None; lc];
    let mut ref_used = vec![false; lr];
    align_stage(&cand.toks, &reference.toks, &mut cand_match, &mut ref_used);
    align_stage(&cand.stems, &reference.stems, &mut cand_match, &mut ref_used);

    let m = cand_match.iter().flatten().count();
    if m == 0 {
        return F::zero();
    }
    let (m_f, lc_f, lr_f) = (m as f64, lc as f64, lr as f64);
    let precision = m_f / lc_f;
    let recall = m_f / lr_f;
    let f_mean =
        precision * recall / (METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall);
    let chunks = count_chunks(&cand_match) as f64;
    let penalty = METEOR_GAMMA * (chunks / m_f).powf(METEOR_BETA);
    F::from_f64_c(f_mean * (1.0 - penalty))
}

pub(crate) fn meteor_item<F: Scalar>(cand: &HashedText, refs: &[HashedText]) -> F {
    refs.iter()
        .map(|r| meteor_pair::<F>(cand, r))
        .fold(F::zero(), F::max)
}

/// Corpus METEOR over raw texts: max over references, mean over candidates.
pub fn meteor<F: Scalar>(
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
        let refs: Vec<HashedText> = rs.iter().map(|r| hash_text(r)).collect();
        sum += meteor_item::<F>(&cand, &refs);
    }
    Ok(sum / F::from_usize_c(candidates.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(cand: &str, refs: &[&str]) -> f64 {
        meteor(
            &[cand.to_string()],
            &[refs.iter().map(|s| s.to_string()).collect()],
        )
        .unwrap()
    }

    #[test]
    fn identical_three_tokens() {
        // m = 3 in one chunk: score = 1 - 0.5 * (1/3)^3
        let expected = 1.0 - 0.5 / 27.0;
        assert!((run("a b c", &["a b c"]) - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_overlap_scores_zero() {
        assert_eq!(run("a b", &["x y"]), 0.0);
    }

    #[test]
    fn stem_stage_matches_inflection() {
        assert!(run("cats", &["cat"]) > 0.0);
    }

    #[test]
    fn chunk_penalty_orders_scores() {
        // same matches, scrambled order -> more chunks -> lower score
        let contiguous = run("a b c d", &["a b c d"]);
        let scrambled = run("d c b a", &["a b c d"]);
        assert!(contiguous > scrambled);
        assert!(scrambled > 0.0);
    }

    #[test]
    fn exact_match_preferred_over_duplicates() {
        // repeated reference tokens: greedy still matches all candidate "a"s
        let score = run("a a", &["a a"]);
        let expected = 1.0 - 0.5 * (1.0f64 / 2.0).powi(3);
        assert!((score - expected).abs() < 1e-9);
    }

    #[test]
    fn best_reference_wins() {
        let best = run("a b c", &["x y z", "a b c"]);
        let single = run("a b c", &["a b c"]);
        assert!((best - single).abs() < 1e-12);
    }
}
