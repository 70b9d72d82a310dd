//! Canonical data model for the seven explanation tasks: validated
//! question-answer-explanation records, the unified training sequence
//! `<question> the answer is <answer> because <explanation>`, line-delimited
//! record files, and deterministic corpus merging.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Connective inserted between question and answer.
pub const ANSWER_MARKER: &str = " the answer is ";
/// Connective inserted between answer and explanation.
pub const BECAUSE_MARKER: &str = " because ";

const Q_IMAGENET: &str = "What category is this?";
const Q_ACTION: &str = "What action is this?";
const Q_ENTAILMENT: &str = "is the following hypothesis true or false?";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty {field} after whitespace normalization")]
    EmptyField { field: &'static str },
    #[error("answer contains a newline")]
    AnswerContainsNewline,
    #[error("task {task} requires an original question/hypothesis")]
    MissingField { task: TaskKind },
    #[error("marker {marker:?} not found in sequence text")]
    MissingMarker { marker: &'static str },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The seven explanation tasks. Closed enumeration; the declared order is
/// the deterministic task order used by [`merge`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "vqa-x")]
    VqaX,
    #[serde(rename = "act-x")]
    ActX,
    #[serde(rename = "esnli-ve")]
    EsnliVe,
    #[serde(rename = "vqa-parax")]
    VqaParaX,
    #[serde(rename = "a-okvqa")]
    AOkvqa,
    #[serde(rename = "imagenetx")]
    ImageNetX,
    #[serde(rename = "vcr")]
    Vcr,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::VqaX,
        TaskKind::ActX,
        TaskKind::EsnliVe,
        TaskKind::VqaParaX,
        TaskKind::AOkvqa,
        TaskKind::ImageNetX,
        TaskKind::Vcr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::VqaX => "vqa-x",
            TaskKind::ActX => "act-x",
            TaskKind::EsnliVe => "esnli-ve",
            TaskKind::VqaParaX => "vqa-parax",
            TaskKind::AOkvqa => "a-okvqa",
            TaskKind::ImageNetX => "imagenetx",
            TaskKind::Vcr => "vcr",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::Parse {
                line: 0,
                reason: format!("unknown split {other:?}"),
            }),
        }
    }
}

/// Collapse internal whitespace runs to single spaces and trim the ends.
/// Case is preserved; answer matching folds case at comparison time instead.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One task-tagged (question, answer, explanation, image-ref) record.
///
/// Fields are stored whitespace-normalized; construction through
/// [`NleSample::new`] enforces the invariants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NleSample {
    pub id: String,
    pub task: TaskKind,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub question: String,
    pub answer: String,
    pub explanation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_ref: Option<String>,
}

impl NleSample {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        task: TaskKind,
        split: Split,
        image_ref: Option<String>,
        question: &str,
        answer: &str,
        explanation: &str,
        source_ref: Option<String>,
    ) -> Result<Self, CorpusError> {
        if answer.contains('\n') {
            return Err(CorpusError::AnswerContainsNewline);
        }
        let sample = NleSample {
            id: id.into(),
            task,
            split,
            image_ref,
            question: normalize_ws(question),
            answer: normalize_ws(answer),
            explanation: normalize_ws(explanation),
            source_ref,
        };
        sample.check()?;
        Ok(sample)
    }

    fn check(&self) -> Result<(), CorpusError> {
        if self.id.is_empty() {
            return Err(CorpusError::EmptyField { field: "id" });
        }
        if self.question.is_empty() {
            return Err(CorpusError::EmptyField { field: "question" });
        }
        if self.answer.is_empty() {
            return Err(CorpusError::EmptyField { field: "answer" });
        }
        if self.explanation.is_empty() {
            return Err(CorpusError::EmptyField { field: "explanation" });
        }
        Ok(())
    }
}

/// The unified sequence: question, answer, and explanation joined by the
/// fixed connectives, with byte spans locating each component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnifiedSequence {
    pub text: String,
    pub q_span: Range<usize>,
    pub a_span: Range<usize>,
    pub e_span: Range<usize>,
    /// True when [`parse_back`] on `text` would not reproduce the source
    /// fields (a connective marker is embedded in a component). The sequence
    /// is still produced; callers decide whether to keep flagged samples.
    pub ambiguous_marker: bool,
}

impl UnifiedSequence {
    pub fn question(&self) -> &str {
        &self.text[self.q_span.clone()]
    }

    pub fn answer(&self) -> &str {
        &self.text[self.a_span.clone()]
    }

    pub fn explanation(&self) -> &str {
        &self.text[self.e_span.clone()]
    }
}

/// The per-task fixed question. Tasks without an inherent question get a
/// constant one; visual entailment prefixes the fixed stem to the hypothesis;
/// question-bearing tasks pass the original through unchanged.
pub fn canonical_question(
    task: TaskKind,
    original_question: Option<&str>,
) -> Result<String, CorpusError> {
    let require = |task: TaskKind| {
        original_question
            .map(normalize_ws)
            .filter(|q| !q.is_empty())
            .ok_or(CorpusError::MissingField { task })
    };
    match task {
        TaskKind::ImageNetX => Ok(Q_IMAGENET.to_string()),
        TaskKind::ActX => Ok(Q_ACTION.to_string()),
        TaskKind::EsnliVe => {
            let hypothesis = require(task)?;
            Ok(format!("{Q_ENTAILMENT} {hypothesis}"))
        }
        TaskKind::VqaX | TaskKind::AOkvqa | TaskKind::VqaParaX | TaskKind::Vcr => require(task),
    }
}

/// Render a sample into the unified sequence.
pub fn unify(sample: &NleSample) -> Result<UnifiedSequence, CorpusError> {
    sample.check()?;
    let q = &sample.question;
    let a = &sample.answer;
    let e = &sample.explanation;
    let text = format!("{q}{ANSWER_MARKER}{a}{BECAUSE_MARKER}{e}");
    let q_span = 0..q.len();
    let a_start = q.len() + ANSWER_MARKER.len();
    let a_span = a_start..a_start + a.len();
    let e_start = a_span.end + BECAUSE_MARKER.len();
    let e_span = e_start..text.len();
    let ambiguous_marker = match parse_back(&text) {
        Ok((pq, pa, pe)) => !(pq == *q && pa == *a && pe == *e),
        Err(_) => true,
    };
    Ok(UnifiedSequence {
        text,
        q_span,
        a_span,
        e_span,
        ambiguous_marker,
    })
}

/// Recover (question, answer, explanation) from a unified sequence by
/// splitting at the first answer marker and the first because marker after it.
pub fn parse_back(text: &str) -> Result<(String, String, String), CorpusError> {
    let a_pos = text.find(ANSWER_MARKER).ok_or(CorpusError::MissingMarker {
        marker: "the answer is",
    })?;
    let question = &text[..a_pos];
    let rest = &text[a_pos + ANSWER_MARKER.len()..];
    let b_pos = rest.find(BECAUSE_MARKER).ok_or(CorpusError::MissingMarker {
        marker: "because",
    })?;
    let answer = &rest[..b_pos];
    let explanation = &rest[b_pos + BECAUSE_MARKER.len()..];
    Ok((
        question.to_string(),
        answer.to_string(),
        explanation.to_string(),
    ))
}

/// Per-task, per-split record counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

impl SplitCounts {
    pub fn total(&self) -> u64 {
        self.train + self.val + self.test
    }

    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Val => self.val += 1,
            Split::Test => self.test += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub tasks: BTreeMap<TaskKind, SplitCounts>,
    pub total: u64,
}

impl CorpusManifest {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a NleSample>) -> Self {
        let mut manifest = CorpusManifest::default();
        for s in samples {
            manifest.tasks.entry(s.task).or_default().bump(s.split);
            manifest.total += 1;
        }
        manifest
    }

    /// Conservation check: the stored total equals the sum over tasks.
    pub fn is_conserved(&self) -> bool {
        self.tasks.values().map(SplitCounts::total).sum::<u64>() == self.total
    }
}

/// Streaming reader over a line-delimited record file. Yields one result per
/// non-empty line; errors carry the 1-based line number. Duplicate ids within
/// the stream are reported as errors on the offending line.
pub struct RecordReader<R> {
    reader: R,
    line_no: usize,
    seen: HashSet<String>,
    buf: String,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R) -> Self {
        RecordReader {
            reader,
            line_no: 0,
            seen: HashSet::new(),
            buf: String::new(),
        }
    }

    fn parse_line(&mut self, line: &str) -> Result<NleSample, CorpusError> {
        let raw: NleSample = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: self.line_no,
            reason: e.to_string(),
        })?;
        let sample = NleSample::new(
            raw.id.clone(),
            raw.task,
            raw.split,
            raw.image_ref,
            &raw.question,
            &raw.answer,
            &raw.explanation,
            raw.source_ref,
        )
        .map_err(|e| CorpusError::Parse {
            line: self.line_no,
            reason: e.to_string(),
        })?;
        if !self.seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: sample.id.clone(),
            });
        }
        Ok(sample)
    }
}

impl RecordReader<BufReader<std::fs::File>> {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Ok(RecordReader::new(BufReader::new(std::fs::File::open(
            path,
        )?)))
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<NleSample, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line_no += 1;
                    let line = self.buf.trim_end_matches(['\n', '\r']);
                    if line.trim().is_empty() {
                        continue;
                    }
                    let line = line.to_string();
                    return Some(self.parse_line(&line));
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

/// Read a whole record file, failing on the first invalid line.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<NleSample>, CorpusError> {
    RecordReader::from_path(path)?.collect()
}

/// Read from any buffered source, failing on the first invalid line.
pub fn read_records_from(reader: impl Read) -> Result<Vec<NleSample>, CorpusError> {
    RecordReader::new(BufReader::new(reader)).collect()
}

/// Write records as one JSON object per line with a fixed key order.
pub fn write_records<'a>(
    samples: impl IntoIterator<Item = &'a NleSample>,
    mut writer: impl Write,
) -> Result<(), CorpusError> {
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| CorpusError::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Write records to a file path.
pub fn write_records_to_path<'a>(
    samples: impl IntoIterator<Item = &'a NleSample>,
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_records(samples, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Merge corpora into one stream with task-prefixed ids and a manifest.
///
/// Ids are normalized to `<task>/<id>` (already-prefixed ids are left alone,
/// which makes merging idempotent); the output is ordered by task, then id.
/// On already-normalized input with no further sources, merge is the identity.
pub fn merge(
    corpora: Vec<Vec<NleSample>>,
) -> Result<(Vec<NleSample>, CorpusManifest), CorpusError> {
    let mut all: Vec<NleSample> = Vec::with_capacity(corpora.iter().map(Vec::len).sum());
    for corpus in corpora {
        for mut s in corpus {
            let prefix = format!("{}/", s.task.as_str());
            if !s.id.starts_with(&prefix) {
                s.id = format!("{prefix}{}", s.id);
            }
            all.push(s);
        }
    }
    all.sort_by(|x, y| (x.task, &x.id).cmp(&(y.task, &y.id)));
    for pair in all.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(CorpusError::DuplicateId {
                id: pair[0].id.clone(),
            });
        }
    }
    let manifest = CorpusManifest::from_samples(&all);
    Ok((all, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(q: &str, a: &str, e: &str) -> NleSample {
        NleSample::new("s1", TaskKind::VqaX, Split::Train, None, q, a, e, None).unwrap()
    }

    #[test]
    fn canonical_question_fixed_tasks() {
        assert_eq!(
            canonical_question(TaskKind::ImageNetX, None).unwrap(),
            "What category is this?"
        );
        assert_eq!(
            canonical_question(TaskKind::ActX, None).unwrap(),
            "What action is this?"
        );
        assert_eq!(
            canonical_question(TaskKind::VqaX, Some("what sport is being played?")).unwrap(),
            "what sport is being played?"
        );
    }

    #[test]
    fn canonical_question_entailment_appends_hypothesis() {
        assert_eq!(
            canonical_question(TaskKind::EsnliVe, Some("a dog is running")).unwrap(),
            "is the following hypothesis true or false? a dog is running"
        );
    }

    #[test]
    fn canonical_question_missing_original_errors() {
        for task in [TaskKind::VqaX, TaskKind::AOkvqa, TaskKind::VqaParaX, TaskKind::Vcr] {
            let err = canonical_question(task, None).unwrap_err();
            assert!(matches!(err, CorpusError::MissingField { task: t } if t == task));
        }
        assert!(canonical_question(TaskKind::EsnliVe, None).is_err());
    }

    #[test]
    fn unify_baseball_example() {
        let s = sample(
            "What sport is being played?",
            "baseball",
            "they are playing on a baseball diamond with a ball and a bat",
        );
        let u = unify(&s).unwrap();
        assert_eq!(
            u.text,
            "What sport is being played? the answer is baseball because they are playing on a baseball diamond with a ball and a bat"
        );
        assert_eq!(u.question(), s.question);
        assert_eq!(u.answer(), s.answer);
        assert_eq!(u.explanation(), s.explanation);
        assert!(!u.ambiguous_marker);
    }

    #[test]
    fn unify_minimal_template() {
        let u = unify(&sample("q?", "a", "e")).unwrap();
        assert_eq!(u.text, "q? the answer is a because e");
    }

    #[test]
    fn unify_flags_marker_in_answer() {
        // "because" embedded in the answer shifts the first-marker split.
        let s = sample("q?", "just because mom said so", "e");
        let u = unify(&s).unwrap();
        assert!(u.ambiguous_marker);
        let (pq, pa, _pe) = parse_back(&u.text).unwrap();
        assert_eq!(pq, "q?");
        assert_ne!(pa, s.answer);
    }

    #[test]
    fn answer_with_marker_word_but_unambiguous() {
        // "because" as a word without the spaced marker does not break parsing.
        let s = sample("q?", "cause and effect", "science");
        let u = unify(&s).unwrap();
        assert!(!u.ambiguous_marker);
        let (_, pa, pe) = parse_back(&u.text).unwrap();
        assert_eq!(pa, "cause and effect");
        assert_eq!(pe, "science");
    }

    #[test]
    fn parse_back_missing_markers() {
        assert!(matches!(
            parse_back("no markers here"),
            Err(CorpusError::MissingMarker { marker: "the answer is" })
        ));
        assert!(matches!(
            parse_back("q the answer is a without the rest"),
            Err(CorpusError::MissingMarker { marker: "because" })
        ));
    }

    #[test]
    fn sample_validation() {
        assert!(matches!(
            NleSample::new("i", TaskKind::VqaX, Split::Train, None, "q", " ", "e", None),
            Err(CorpusError::EmptyField { field: "answer" })
        ));
        assert!(matches!(
            NleSample::new("i", TaskKind::VqaX, Split::Train, None, "q", "a\nb", "e", None),
            Err(CorpusError::AnswerContainsNewline)
        ));
        let s = NleSample::new(
            "i",
            TaskKind::VqaX,
            Split::Train,
            None,
            "  a\t b ",
            "x",
            "e",
            None,
        )
        .unwrap();
        assert_eq!(s.question, "a b");
    }

    #[test]
    fn read_empty_file_is_empty_stream() {
        let samples = read_records_from(std::io::Cursor::new("")).unwrap();
        assert!(samples.is_empty());
    }

    #[test]
    fn read_reports_line_numbers() {
        let good = r#"{"id":"a","task":"vqa-x","split":"train","question":"q?","answer":"x","explanation":"e"}"#;
        let bad = r#"{"id":"d","task":"vqa-x","split":"train","question":"q?","answer":"","explanation":"e"}"#;
        let text = format!("{good}\n{}\n{}\n{bad}\n", good.replace("\"a\"", "\"b\""), good.replace("\"a\"", "\"c\""));
        let results: Vec<_> = RecordReader::new(std::io::Cursor::new(text)).collect();
        assert_eq!(results.len(), 4);
        assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 3);
        match &results[3] {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(*line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_unknown_keys_and_duplicate_ids() {
        let unknown = r#"{"id":"a","task":"vqa-x","split":"train","question":"q","answer":"x","explanation":"e","extra":1}"#;
        let results: Vec<_> = RecordReader::new(std::io::Cursor::new(unknown)).collect();
        assert!(matches!(results[0], Err(CorpusError::Parse { line: 1, .. })));

        let line = r#"{"id":"a","task":"vqa-x","split":"train","question":"q","answer":"x","explanation":"e"}"#;
        let text = format!("{line}\n{line}\n");
        let results: Vec<_> = RecordReader::new(std::io::Cursor::new(text)).collect();
        assert!(results[0].is_ok());
        assert!(matches!(&results[1], Err(CorpusError::DuplicateId { id }) if id == "a"));
    }

    #[test]
    fn write_read_round_trip_is_byte_identical() {
        let samples = vec![
            sample("q one?", "a", "e one"),
            NleSample::new(
                "s2",
                TaskKind::ImageNetX,
                Split::Val,
                Some("img-7".into()),
                "What category is this?",
                "tench",
                "a freshwater fish",
                Some("tench".into()),
            )
            .unwrap(),
        ];
        let mut first = Vec::new();
        write_records(&samples, &mut first).unwrap();
        let reread = read_records_from(std::io::Cursor::new(first.clone())).unwrap();
        assert_eq!(reread, samples);
        let mut second = Vec::new();
        write_records(&reread, &mut second).unwrap();
        assert_eq!(first, second);
    }

    fn numbered(task: TaskKind, n: usize) -> Vec<NleSample> {
        (0..n)
            .map(|i| {
                NleSample::new(
                    format!("r{i:03}"),
                    task,
                    Split::Train,
                    None,
                    "q?",
                    "a",
                    "e",
                    None,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn merge_counts_and_identity() {
        let (merged, manifest) =
            merge(vec![numbered(TaskKind::VqaX, 3), numbered(TaskKind::ActX, 2)]).unwrap();
        assert_eq!(manifest.total, 5);
        assert!(manifest.is_conserved());
        // task order follows the TaskKind declaration: vqa-x before act-x
        assert_eq!(merged[0].id, "vqa-x/r000");
        assert_eq!(merged[3].id, "act-x/r000");

        // Identity element: merging normalized output with nothing else.
        let (again, manifest2) = merge(vec![merged.clone()]).unwrap();
        assert_eq!(again, merged);
        assert_eq!(manifest2, manifest);
    }

    #[test]
    fn merge_detects_collisions() {
        let err = merge(vec![numbered(TaskKind::VqaX, 2), numbered(TaskKind::VqaX, 1)]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { .. }));
    }

    #[test]
    fn merge_is_deterministic() {
        let a = vec![numbered(TaskKind::Vcr, 4), numbered(TaskKind::VqaX, 2)];
        let (m1, _) = merge(a.clone()).unwrap();
        let (m2, _) = merge(a).unwrap();
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        write_records(&m1, &mut b1).unwrap();
        write_records(&m2, &mut b2).unwrap();
        assert_eq!(b1, b2);
    }

    /// Words drawn from a pool that includes the connective words, so a
    /// fraction of generated samples embed template markers.
    fn word_pool() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z]{1,7}",
            Just("the".to_string()),
            Just("answer".to_string()),
            Just("is".to_string()),
            Just("because".to_string()),
        ]
    }

    fn phrase(max_words: usize) -> impl Strategy<Value = String> {
        prop::collection::vec(word_pool(), 1..=max_words).prop_map(|ws| ws.join(" "))
    }

    proptest! {
        #[test]
        fn unify_round_trip_or_flagged(q in phrase(8), a in phrase(4), e in phrase(12)) {
            let s = sample(&q, &a, &e);
            let u = unify(&s).unwrap();
            let parsed = parse_back(&u.text);
            if u.ambiguous_marker {
                // Flagged: parsing must NOT reproduce the fields.
                if let Ok((pq, pa, pe)) = parsed {
                    prop_assert!(pq != s.question || pa != s.answer || pe != s.explanation)
                }
            } else {
                let (pq, pa, pe) = parsed.unwrap();
                prop_assert_eq!(pq, s.question);
                prop_assert_eq!(pa, s.answer);
                prop_assert_eq!(pe, s.explanation);
            }
        }

        #[test]
        fn spans_reconstruct_components(q in phrase(6), a in phrase(3), e in phrase(9)) {
            let s = sample(&q, &a, &e);
            let u = unify(&s).unwrap();
            prop_assert_eq!(u.question(), s.question.as_str());
            prop_assert_eq!(u.answer(), s.answer.as_str());
            prop_assert_eq!(u.explanation(), s.explanation.as_str());
            prop_assert_eq!(
                u.text.len(),
                s.question.len() + ANSWER_MARKER.len() + s.answer.len()
                    + BECAUSE_MARKER.len() + s.explanation.len()
            );
        }
    }
}
