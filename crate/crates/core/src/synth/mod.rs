//! Dataset synthesis: verbatim LLM prompts, the strict triplet output
//! grammar, corpus assembly for the two synthesized datasets, and the
//! word-length / question-repetition statistics.

mod parse;
mod prompt;
mod provider;

pub use parse::{parse_triplets, render_triplets, ParseIssue, ParseReport, SynthTriplet};
pub use prompt::{
    build_imagenetx_prompt, build_vqa_parax_prompt, MAX_TRIPLETS_PER_PROMPT, TRIPLET_SLOT,
};
pub use provider::{
    fetch_completions, prompt_hash, CompletionOutcome, CompletionProvider, LiveProvider,
    ProviderError, ReplayProvider, RetryPolicy, TOKEN_ENV_VAR,
};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{canonical_question, normalize_ws, CorpusError, NleSample, Split, TaskKind};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("empty {0}")]
    EmptyPrompt(&'static str),
    #[error("triplet count {0} outside 1..=6")]
    BadTripletCount(usize),
    #[error("no bracketed triplet list found in output")]
    NoListFound,
    #[error("malformed replay file: {0}")]
    BadReplayFile(String),
    #[error("completion token environment variable {0} is not set")]
    MissingToken(String),
    #[error("prompt {index}: {source}")]
    Fetch {
        index: usize,
        source: ProviderError,
    },
    #[error("class {class}: {reason}")]
    Assembly { class: String, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which synthesis prompt to build.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptKind {
    VqaParaX { paragraph: String, k: usize },
    ImageNetX { class_label: String },
}

impl PromptKind {
    pub fn build(&self) -> Result<String, SynthError> {
        match self {
            PromptKind::VqaParaX { paragraph, k } => build_vqa_parax_prompt(paragraph, *k),
            PromptKind::ImageNetX { class_label } => build_imagenetx_prompt(class_label),
        }
    }
}

/// Generated descriptions and image pools for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassDescriptionSet {
    pub class_label: String,
    pub descriptions: Vec<String>,
    pub train_image_refs: Vec<String>,
    pub heldout_image_refs: Vec<String>,
}

/// Assemble class-description records: per class, every description except
/// the last `heldout_per_class` becomes `images_per_description` train
/// records over distinct images; each held-out description becomes one
/// val-or-test record (alternating by index) bound to a single held-out
/// image.
pub fn assemble_imagenetx(
    sets: &[ClassDescriptionSet],
    images_per_description: usize,
    heldout_per_class: usize,
) -> Result<Vec<NleSample>, SynthError> {
    let fail = |class: &str, reason: String| SynthError::Assembly {
        class: class.to_string(),
        reason,
    };
    let mut labels = HashSet::new();
    let mut records = Vec::new();
    let question = canonical_question(TaskKind::ImageNetX, None)?;
    if images_per_description == 0 {
        return Err(fail("*", "images_per_description must be >= 1".to_string()));
    }
    for set in sets {
        let label = normalize_ws(&set.class_label);
        if label.is_empty() {
            return Err(fail(&set.class_label, "empty class label".to_string()));
        }
        if !labels.insert(label.clone()) {
            return Err(fail(&label, "duplicate class label".to_string()));
        }
        let normalized: Vec<String> = set.descriptions.iter().map(|d| normalize_ws(d)).collect();
        let distinct: HashSet<&String> = normalized.iter().collect();
        if distinct.len() != normalized.len() {
            return Err(fail(&label, "descriptions not distinct after normalization".to_string()));
        }
        if normalized.len() < heldout_per_class + 1 {
            return Err(fail(
                &label,
                format!(
                    "{} descriptions cannot cover {heldout_per_class} held out plus training",
                    normalized.len()
                ),
            ));
        }
        let train_images: Vec<&String> = set.train_image_refs.iter().collect();
        if train_images.len() < images_per_description
            || train_images.iter().collect::<HashSet<_>>().len() < images_per_description
        {
            return Err(fail(
                &label,
                format!(
                    "{} distinct train images cannot give each description {images_per_description}",
                    train_images.iter().collect::<HashSet<_>>().len()
                ),
            ));
        }
        if set.heldout_image_refs.len() < heldout_per_class {
            return Err(fail(
                &label,
                format!(
                    "{} held-out images for {heldout_per_class} held-out descriptions",
                    set.heldout_image_refs.len()
                ),
            ));
        }
        let slug = label.replace(' ', "_");
        let n_train_descs = normalized.len() - heldout_per_class;
        for (di, desc) in normalized[..n_train_descs].iter().enumerate() {
            for j in 0..images_per_description {
                let image = &train_images[(di * images_per_description + j) % train_images.len()];
                records.push(NleSample::new(
                    format!("{slug}-d{di:04}-i{j}"),
                    TaskKind::ImageNetX,
                    Split::Train,
                    Some((*image).clone()),
                    &question,
                    &label,
                    desc,
                    Some(label.clone()),
                )?);
            }
        }
        for (hi, desc) in normalized[n_train_descs..].iter().enumerate() {
            let split = if hi % 2 == 0 { Split::Val } else { Split::Test };
            records.push(NleSample::new(
                format!("{slug}-h{hi:04}"),
                TaskKind::ImageNetX,
                split,
                Some(set.heldout_image_refs[hi].clone()),
                &question,
                &label,
                desc,
                Some(label.clone()),
            )?);
        }
    }
    Ok(records)
}

/// Convert parsed triplets from one source paragraph into records. With
/// `dedup` set, triplets repeating an earlier (question, answer) pair in the
/// same batch are dropped; off by default in callers since the source
/// datasets keep their repetitions.
pub fn triplets_to_records(
    source_id: &str,
    image_ref: Option<&str>,
    split: Split,
    triplets: &[SynthTriplet],
    dedup: bool,
) -> Result<Vec<NleSample>, SynthError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, t) in triplets.iter().enumerate() {
        if dedup {
            let key = (
                normalize_ws(&t.question).to_lowercase(),
                normalize_ws(&t.answer).to_lowercase(),
            );
            if !seen.insert(key) {
                continue;
            }
        }
        records.push(NleSample::new(
            format!("{source_id}#{i}"),
            TaskKind::VqaParaX,
            split,
            image_ref.map(str::to_string),
            &t.question,
            &t.answer,
            &t.explanation,
            Some(source_id.to_string()),
        )?);
    }
    Ok(records)
}

/// One bin of the question-repetition histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionBin {
    /// Maximum duplicate count within a group (0 = all questions unique).
    pub repetitions: u32,
    /// Percentage of groups with that maximum, 0..=100.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_records: usize,
    pub n_groups: usize,
    /// Mean explanation length in whitespace words.
    pub avg_word_len: f64,
    pub max_word_len: usize,
    pub repetition_histogram: Vec<RepetitionBin>,
}

/// Word-length statistics over explanations plus question-repetition
/// statistics over `source_ref` groups (records without a source_ref group
/// by themselves). A group's repetition value is the maximum duplicate count
/// among its case-folded questions.
pub fn corpus_stats(records: &[NleSample]) -> CorpusStats {
    let mut word_sum = 0usize;
    let mut max_word_len = 0usize;
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for r in records {
        let words = r.explanation.split_whitespace().count();
        word_sum += words;
        max_word_len = max_word_len.max(words);
        let key = r.source_ref.as_deref().unwrap_or(&r.id);
        groups
            .entry(key)
            .or_default()
            .push(normalize_ws(&r.question).to_lowercase());
    }
    let n_groups = groups.len();
    let mut bins: BTreeMap<u32, usize> = BTreeMap::new();
    for questions in groups.values() {
        let mut counts: BTreeMap<&String, u32> = BTreeMap::new();
        for q in questions {
            *counts.entry(q).or_insert(0) += 1;
        }
        let max_dupes = counts.values().map(|&c| c - 1).max().unwrap_or(0);
        *bins.entry(max_dupes).or_insert(0) += 1;
    }
    let repetition_histogram = bins
        .into_iter()
        .map(|(repetitions, count)| RepetitionBin {
            repetitions,
            percent: 100.0 * count as f64 / n_groups as f64,
        })
        .collect();
    CorpusStats {
        n_records: records.len(),
        n_groups,
        avg_word_len: if records.is_empty() {
            0.0
        } else {
            word_sum as f64 / records.len() as f64
        },
        max_word_len,
        repetition_histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(label: &str, n_desc: usize, n_train_img: usize, n_held_img: usize) -> ClassDescriptionSet {
        ClassDescriptionSet {
            class_label: label.to_string(),
            descriptions: (0..n_desc).map(|i| format!("description {i} of {label}")).collect(),
            train_image_refs: (0..n_train_img).map(|i| format!("{label}-train-{i}")).collect(),
            heldout_image_refs: (0..n_held_img).map(|i| format!("{label}-val-{i}")).collect(),
        }
    }

    #[test]
    fn fixture_assembly_counts() {
        // 10 classes x 5 descriptions, heldout 3, images_per_description 3
        let sets: Vec<_> = (0..10).map(|i| class(&format!("c{i}"), 5, 4, 3)).collect();
        let records = assemble_imagenetx(&sets, 3, 3).unwrap();
        let train = records.iter().filter(|r| r.split == Split::Train).count();
        let held = records.len() - train;
        assert_eq!(train, 60);
        assert_eq!(held, 30);
        // alternating val/test by held-out index parity
        let vals = records.iter().filter(|r| r.split == Split::Val).count();
        let tests = records.iter().filter(|r| r.split == Split::Test).count();
        assert_eq!(vals, 20);
        assert_eq!(tests, 10);
    }

    #[test]
    fn assembly_count_identity() {
        let sets = vec![class("a", 7, 5, 2), class("b", 4, 3, 2)];
        let records = assemble_imagenetx(&sets, 2, 2).unwrap();
        let expected_train = (7 - 2) * 2 + (4 - 2) * 2;
        let train = records.iter().filter(|r| r.split == Split::Train).count();
        assert_eq!(train, expected_train);
    }

    #[test]
    fn minimal_assembly() {
        let sets = vec![class("solo", 1, 1, 0)];
        let records = assemble_imagenetx(&sets, 1, 0).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.split, Split::Train);
        assert_eq!(r.question, "What category is this?");
        assert_eq!(r.answer, "solo");
        assert_eq!(r.task, TaskKind::ImageNetX);
    }

    #[test]
    fn images_distinct_within_description() {
        let sets = vec![class("c", 4, 3, 1)];
        let records = assemble_imagenetx(&sets, 3, 1).unwrap();
        for di in 0..3 {
            let imgs: Vec<_> = records
                .iter()
                .filter(|r| r.id.starts_with(&format!("c-d{di:04}")))
                .map(|r| r.image_ref.clone().unwrap())
                .collect();
            assert_eq!(imgs.len(), 3);
            let distinct: HashSet<_> = imgs.iter().collect();
            assert_eq!(distinct.len(), 3, "description {di} repeats an image");
        }
    }

    #[test]
    fn assembly_errors_name_the_class() {
        let err = assemble_imagenetx(&[class("thin", 2, 3, 3)], 3, 3).unwrap_err();
        match err {
            SynthError::Assembly { class, .. } => assert_eq!(class, "thin"),
            other => panic!("unexpected {other:?}"),
        }
        let err = assemble_imagenetx(&[class("dry", 5, 1, 3)], 3, 3).unwrap_err();
        assert!(matches!(err, SynthError::Assembly { .. }));
    }

    #[test]
    fn triplet_records_and_dedup() {
        let triplets = vec![
            SynthTriplet { question: "Q one?".into(), answer: "a".into(), explanation: "e1".into() },
            SynthTriplet { question: "q one?".into(), answer: "A".into(), explanation: "e2".into() },
            SynthTriplet { question: "Q two?".into(), answer: "b".into(), explanation: "e3".into() },
        ];
        let all = triplets_to_records("p7", Some("img7"), Split::Train, &triplets, false).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[0].id, "p7#0");
        assert_eq!(all[0].source_ref.as_deref(), Some("p7"));
        let deduped = triplets_to_records("p7", None, Split::Train, &triplets, true).unwrap();
        assert_eq!(deduped.len(), 2);
    }

    #[test]
    fn stats_hand_fixture() {
        // group g1: questions (a, a, b); group g2: (c, d, e)
        let mk = |id: &str, q: &str, e: &str, group: &str| {
            NleSample::new(
                id,
                TaskKind::VqaParaX,
                Split::Train,
                None,
                q,
                "x",
                e,
                Some(group.to_string()),
            )
            .unwrap()
        };
        let records = vec![
            mk("1", "a", "one two three", "g1"),
            mk("2", "A", "one two", "g1"),
            mk("3", "b", "one", "g1"),
            mk("4", "c", "one two three four", "g2"),
            mk("5", "d", "one", "g2"),
            mk("6", "e", "one two", "g2"),
        ];
        let stats = corpus_stats(&records);
        assert_eq!(stats.n_groups, 2);
        assert_eq!(stats.max_word_len, 4);
        assert!((stats.avg_word_len - 13.0 / 6.0).abs() < 1e-12);
        assert_eq!(
            stats.repetition_histogram,
            vec![
                RepetitionBin { repetitions: 0, percent: 50.0 },
                RepetitionBin { repetitions: 1, percent: 50.0 },
            ]
        );
        let sum: f64 = stats.repetition_histogram.iter().map(|b| b.percent).sum();
        assert!((sum - 100.0).abs() < 0.01);
    }

    #[test]
    fn stats_percentages_sum_to_one_hundred() {
        // randomized group structure; histogram mass must be conserved
        let mut state = 0x5151u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state as usize
        };
        for round in 0..50 {
            let n_groups = 1 + next() % 12;
            let mut records = Vec::new();
            for g in 0..n_groups {
                let n = 1 + next() % 6;
                for i in 0..n {
                    let q = format!("q{}", next() % 3);
                    records.push(
                        NleSample::new(
                            format!("{round}-{g}-{i}"),
                            TaskKind::VqaParaX,
                            Split::Train,
                            None,
                            &q,
                            "a",
                            "one two",
                            Some(format!("g{g}")),
                        )
                        .unwrap(),
                    );
                }
            }
            let stats = corpus_stats(&records);
            assert_eq!(stats.n_groups, n_groups);
            let sum: f64 = stats.repetition_histogram.iter().map(|b| b.percent).sum();
            assert!((sum - 100.0).abs() <= 0.01, "round {round}: {sum}");
        }
    }

    #[test]
    fn stats_groups_without_source_ref_are_singletons() {
        let mk = |id: &str| {
            NleSample::new(id, TaskKind::VqaX, Split::Train, None, "q", "a", "e", None).unwrap()
        };
        let stats = corpus_stats(&[mk("1"), mk("2")]);
        assert_eq!(stats.n_groups, 2);
        assert_eq!(stats.repetition_histogram.len(), 1);
        assert_eq!(stats.repetition_histogram[0].repetitions, 0);
    }
}
