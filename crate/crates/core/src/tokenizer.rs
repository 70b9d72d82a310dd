//! Reversible word-level tokenization with segment ids and loss masks for
//! unified sequences.
//!
//! The scheme is a case-preserving whitespace split with `. , ? ! ; :`
//! detached as single-character tokens. A deterministic word-level vocabulary
//! keeps the toolkit self-contained; [`Vocabulary`] is the seam where a
//! subword tokenizer could drop in.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::UnifiedSequence;

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Default encode length cap; fits the longest synthesized explanations.
pub const DEFAULT_MAX_LEN: usize = 256;

const PUNCTUATION: [char; 6] = ['.', ',', '?', '!', ';', ':'];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("sequence of {actual} tokens exceeds maximum length {max}")]
    TooLong { actual: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    BadId { id: u32, size: usize },
    #[error("malformed vocabulary file: {0}")]
    BadVocabFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which component of the unified sequence a token belongs to.
///
/// Connectives go with the component they introduce: "the answer is" is
/// answer-segment, "because" is explanation-segment, so the question segment
/// is exactly the inference-time input and the connectives carry loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Question = 0,
    Answer = 1,
    Explanation = 2,
}

/// Split text into tokens: whitespace-separated chunks with the punctuation
/// set detached as single-character tokens.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if PUNCTUATION.contains(&ch) {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(ch.to_string());
            } else {
                word.push(ch);
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

/// The tokenizer's text normal form: tokens re-joined with single spaces.
/// `decode(encode(x)) == normalize(x)` for UNK-free `x`.
pub fn normalize(text: &str) -> String {
    tokenize_text(text).join(" ")
}

/// Token/id bijection with fixed special ids 0..=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    specials: Vec<String>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Build from an iterator of text lines: every token with frequency
    /// >= `min_freq` gets an id, ordered by frequency (desc) then token.
    pub fn build<I, S>(texts: I, min_freq: usize) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let min_freq = min_freq.max(1);
        let mut freq: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for tok in tokenize_text(text.as_ref()) {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut entries: Vec<(String, usize)> =
            freq.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        entries.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
        let mut vocab = Vocabulary::empty();
        for (tok, _) in entries {
            let id = vocab.id_to_token.len() as u32;
            vocab.token_to_id.insert(tok.clone(), id);
            vocab.id_to_token.push(tok);
        }
        Ok(vocab)
    }

    fn empty() -> Self {
        let mut token_to_id = HashMap::new();
        let mut id_to_token = Vec::new();
        for (i, s) in SPECIALS.iter().enumerate() {
            token_to_id.insert(s.to_string(), i as u32);
            id_to_token.push(s.to_string());
        }
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn save(&self, mut writer: impl Write) -> Result<(), TokenizerError> {
        let file = VocabFile {
            specials: SPECIALS.iter().map(|s| s.to_string()).collect(),
            tokens: self.id_to_token[SPECIALS.len()..].to_vec(),
        };
        let json = serde_json::to_string(&file).map_err(|e| TokenizerError::BadVocabFile(e.to_string()))?;
        writer.write_all(json.as_bytes())?;
        Ok(())
    }

    pub fn save_to_path(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        self.save(std::fs::File::create(path)?)
    }

    pub fn load(mut reader: impl Read) -> Result<Self, TokenizerError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let file: VocabFile =
            serde_json::from_str(&text).map_err(|e| TokenizerError::BadVocabFile(e.to_string()))?;
        if file.specials != SPECIALS {
            return Err(TokenizerError::BadVocabFile(format!(
                "unexpected specials {:?}",
                file.specials
            )));
        }
        let mut vocab = Vocabulary::empty();
        for tok in file.tokens {
            if vocab.token_to_id.contains_key(&tok) {
                return Err(TokenizerError::BadVocabFile(format!(
                    "duplicate token {tok:?}"
                )));
            }
            let id = vocab.id_to_token.len() as u32;
            vocab.token_to_id.insert(tok.clone(), id);
            vocab.id_to_token.push(tok);
        }
        Ok(vocab)
    }

    pub fn load_from_path(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::load(std::fs::File::open(path)?)
    }
}

/// Token ids with aligned segment ids and loss mask; the model's training unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    pub ids: Vec<u32>,
    pub segments: Vec<Segment>,
    pub loss_mask: Vec<bool>,
    pub image_ref: Option<String>,
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encode a unified sequence: BOS + question (Q) + "the answer is" + answer
/// (A) + "because" + explanation (E) + EOS. BOS takes the question segment,
/// EOS the explanation segment and it carries loss so the model learns to
/// stop; the mask is true exactly on answer- and explanation-segment
/// positions.
pub fn encode(
    seq: &UnifiedSequence,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenizedExample, TokenizerError> {
    let mut ids = vec![BOS_ID];
    let mut segments = vec![Segment::Question];

    let push = |text: &str, seg: Segment, ids: &mut Vec<u32>, segments: &mut Vec<Segment>| {
        for tok in tokenize_text(text) {
            ids.push(vocab.id_or_unk(&tok));
            segments.push(seg);
        }
    };
    push(seq.question(), Segment::Question, &mut ids, &mut segments);
    push("the answer is", Segment::Answer, &mut ids, &mut segments);
    push(seq.answer(), Segment::Answer, &mut ids, &mut segments);
    push("because", Segment::Explanation, &mut ids, &mut segments);
    push(seq.explanation(), Segment::Explanation, &mut ids, &mut segments);
    ids.push(EOS_ID);
    segments.push(Segment::Explanation);

    if ids.len() > max_len {
        return Err(TokenizerError::TooLong {
            actual: ids.len(),
            max: max_len,
        });
    }
    let loss_mask = segments.iter().map(|s| *s != Segment::Question).collect();
    Ok(TokenizedExample {
        ids,
        segments,
        loss_mask,
        image_ref: None,
    })
}

/// Decode ids to text: specials dropped, tokens joined by single spaces.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Result<String, TokenizerError> {
    let mut tokens = Vec::with_capacity(ids.len());
    for &id in ids {
        let tok = vocab.token_of(id).ok_or(TokenizerError::BadId {
            id,
            size: vocab.size(),
        })?;
        if id >= SPECIALS.len() as u32 {
            tokens.push(tok);
        }
    }
    Ok(tokens.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{unify, NleSample, Split, TaskKind};
    use proptest::prelude::*;

    fn seq(q: &str, a: &str, e: &str) -> UnifiedSequence {
        let s = NleSample::new("x", TaskKind::VqaX, Split::Train, None, q, a, e, None).unwrap();
        unify(&s).unwrap()
    }

    #[test]
    fn build_vocab_min_freq() {
        let v = Vocabulary::build(["a a b"], 2).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.id_of("a"), Some(4));
        assert_eq!(v.id_of("b"), None);
    }

    #[test]
    fn build_vocab_distinct_tokens() {
        let v = Vocabulary::build(["x y z", "w"], 1).unwrap();
        assert_eq!(v.size(), 4 + 4);
    }

    #[test]
    fn build_vocab_deterministic() {
        let texts = ["b a b c", "c b"];
        let v1 = Vocabulary::build(texts, 1).unwrap();
        let v2 = Vocabulary::build(texts, 1).unwrap();
        assert_eq!(v1, v2);
        // frequency desc, then lexicographic: b(3), c(2), a(1)
        assert_eq!(v1.id_of("b"), Some(4));
        assert_eq!(v1.id_of("c"), Some(5));
        assert_eq!(v1.id_of("a"), Some(6));
    }

    #[test]
    fn build_vocab_empty_corpus() {
        let texts: [&str; 0] = [];
        assert!(matches!(
            Vocabulary::build(texts, 1),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn tokenize_detaches_punctuation() {
        assert_eq!(
            tokenize_text("What sport, is played?"),
            vec!["What", "sport", ",", "is", "played", "?"]
        );
        assert_eq!(tokenize_text("a.b"), vec!["a", ".", "b"]);
    }

    #[test]
    fn encode_segments_and_mask() {
        let s = seq("q?", "a", "e");
        let v = Vocabulary::build([s.text.as_str()], 1).unwrap();
        let ex = encode(&s, &v, DEFAULT_MAX_LEN).unwrap();
        // [BOS q ? the answer is a because e EOS]
        assert_eq!(ex.ids.len(), 10);
        assert_eq!(ex.ids[0], BOS_ID);
        assert_eq!(*ex.ids.last().unwrap(), EOS_ID);
        use Segment::*;
        assert_eq!(
            ex.segments,
            vec![Question, Question, Question, Answer, Answer, Answer, Answer, Explanation, Explanation, Explanation]
        );
        assert_eq!(
            ex.loss_mask,
            vec![false, false, false, true, true, true, true, true, true, true]
        );
    }

    #[test]
    fn encode_degenerate_vocab_all_unk() {
        let s = seq("q?", "a", "e");
        let v = Vocabulary::build(["zzz"], 1).unwrap();
        let ex = encode(&s, &v, DEFAULT_MAX_LEN).unwrap();
        for (i, &id) in ex.ids.iter().enumerate() {
            if i == 0 || i == ex.ids.len() - 1 {
                continue;
            }
            if ex.segments[i] == Segment::Answer || ex.segments[i] == Segment::Explanation {
                // connectives are in-vocab only if the degenerate vocab has them
            }
            if ![BOS_ID, EOS_ID].contains(&id) {
                assert_eq!(id, UNK_ID);
            }
        }
        assert_eq!(ex.ids.len(), ex.segments.len());
        assert_eq!(ex.ids.len(), ex.loss_mask.len());
    }

    #[test]
    fn encode_too_long() {
        let s = seq("q", "a", "e");
        let v = Vocabulary::build([s.text.as_str()], 1).unwrap();
        let err = encode(&s, &v, 4).unwrap_err();
        assert!(matches!(err, TokenizerError::TooLong { actual: 9, max: 4 }));
    }

    #[test]
    fn decode_drops_specials() {
        let v = Vocabulary::build(["a"], 1).unwrap();
        let id = v.id_of("a").unwrap();
        assert_eq!(decode(&[BOS_ID, id, EOS_ID], &v).unwrap(), "a");
        assert_eq!(decode(&[], &v).unwrap(), "");
    }

    #[test]
    fn decode_bad_id() {
        let v = Vocabulary::build(["a"], 1).unwrap();
        assert!(matches!(
            decode(&[99], &v),
            Err(TokenizerError::BadId { id: 99, .. })
        ));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocabulary::build(["b a b c", "c b"], 1).unwrap();
        let mut buf = Vec::new();
        v.save(&mut buf).unwrap();
        let loaded = Vocabulary::load(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(loaded, v);
    }

    fn phrase() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-z]{1,6}(\\?|,|\\.)?", 1..8).prop_map(|ws| ws.join(" "))
    }

    proptest! {
        #[test]
        fn alignment_and_monotone_segments(q in phrase(), a in "[a-z]{1,5}", e in phrase()) {
            let s = seq(&q, &a, &e);
            let v = Vocabulary::build([s.text.as_str()], 1).unwrap();
            let ex = encode(&s, &v, DEFAULT_MAX_LEN).unwrap();
            prop_assert_eq!(ex.ids.len(), ex.segments.len());
            prop_assert_eq!(ex.ids.len(), ex.loss_mask.len());
            for w in ex.segments.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for (i, &m) in ex.loss_mask.iter().enumerate() {
                prop_assert_eq!(
                    m,
                    matches!(ex.segments[i], Segment::Answer | Segment::Explanation)
                );
                if ex.ids[i] == EOS_ID {
                    prop_assert!(m);
                }
                if ex.segments[i] == Segment::Question {
                    prop_assert!(!m);
                }
            }
        }

        #[test]
        fn round_trip_unk_free(q in phrase(), a in "[a-z]{1,5}", e in phrase()) {
            let s = seq(&q, &a, &e);
            let v = Vocabulary::build([s.text.as_str()], 1).unwrap();
            let ex = encode(&s, &v, DEFAULT_MAX_LEN).unwrap();
            prop_assert!(!ex.ids.contains(&UNK_ID));
            prop_assert_eq!(decode(&ex.ids, &v).unwrap(), normalize(&s.text));
        }
    }
}
