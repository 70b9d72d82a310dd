//! Greedy decoding and answer-conditioned decoding. Generated tokens are
//! assigned the answer segment until "because" is emitted, then the
//! explanation segment, mirroring the tokenizer's connective rule, so an
//! answer-conditioned prefix reproduces exactly the sequence a free greedy
//! decode would have built.

use crate::num::Scalar;
use crate::tokenizer::{Segment, Vocabulary, BOS_ID, EOS_ID};

use super::{LanguageModel, ModelError};

/// A decoded sequence. `ids` holds the full sequence including BOS and the
/// prompt; `generated()` is the continuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub ids: Vec<u32>,
    pub segments: Vec<Segment>,
    pub prompt_len: usize,
    /// True when decoding stopped at the token budget instead of EOS.
    pub truncated: bool,
}

impl Generation {
    pub fn generated(&self) -> &[u32] {
        &self.ids[self.prompt_len..]
    }
}

fn argmax<F: Scalar>(row: &[F]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

impl<F: Scalar> LanguageModel<F> {
    fn greedy_loop(
        &self,
        mut ids: Vec<u32>,
        mut segments: Vec<Segment>,
        mut in_explanation: bool,
        because_id: Option<u32>,
        image: Option<&[F]>,
        max_new: usize,
    ) -> Result<Generation, ModelError> {
        let prompt_len = ids.len();
        let budget = self.config.max_len - self.config.prefix_len();
        let mut truncated = true;
        for _ in 0..max_new {
            if ids.len() >= budget {
                break;
            }
            let logits = self.forward(&ids, &segments, image)?;
            let next = argmax(logits.row(logits.rows - 1));
            if Some(next) == because_id {
                in_explanation = true;
            }
            let segment = if next == EOS_ID || in_explanation {
                Segment::Explanation
            } else {
                Segment::Answer
            };
            ids.push(next);
            segments.push(segment);
            if next == EOS_ID {
                truncated = false;
                break;
            }
        }
        Ok(Generation {
            ids,
            segments,
            prompt_len,
            truncated,
        })
    }

    /// Greedy decode from a question: prompt is BOS plus the question tokens
    /// (question segment); generation continues to EOS or `max_new` tokens.
    pub fn greedy_decode(
        &self,
        question_ids: &[u32],
        image: Option<&[F]>,
        max_new: usize,
        vocab: &Vocabulary,
    ) -> Result<Generation, ModelError> {
        let mut ids = Vec::with_capacity(question_ids.len() + 1);
        ids.push(BOS_ID);
        ids.extend_from_slice(question_ids);
        let segments = vec![Segment::Question; ids.len()];
        self.greedy_loop(ids, segments, false, vocab.id_of("because"), image, max_new)
    }

    /// Decode with a forced answer: the prompt is
    /// BOS + question (Q) + "the answer is" + answer (A) + "because" (E),
    /// and the model generates only the explanation.
    pub fn decode_with_answer(
        &self,
        question_ids: &[u32],
        answer_ids: &[u32],
        image: Option<&[F]>,
        max_new: usize,
        vocab: &Vocabulary,
    ) -> Result<Generation, ModelError> {
        if answer_ids.is_empty() {
            return Err(ModelError::EmptyAnswer);
        }
        let connective = |tok: &str| {
            vocab
                .id_of(tok)
                .ok_or_else(|| ModelError::MissingConnective(tok.to_string()))
        };
        let mut ids = vec![BOS_ID];
        let mut segments = vec![Segment::Question];
        ids.extend_from_slice(question_ids);
        segments.extend(std::iter::repeat_n(Segment::Question, question_ids.len()));
        for tok in ["the", "answer", "is"] {
            ids.push(connective(tok)?);
            segments.push(Segment::Answer);
        }
        ids.extend_from_slice(answer_ids);
        segments.extend(std::iter::repeat_n(Segment::Answer, answer_ids.len()));
        ids.push(connective("because")?);
        segments.push(Segment::Explanation);

        let total = ids.len() + self.config.prefix_len();
        if total >= self.config.max_len {
            return Err(ModelError::TooLong {
                actual: total,
                max: self.config.max_len,
            });
        }
        self.greedy_loop(ids, segments, true, None, image, max_new)
    }
}
