//! Desk-scale decoder-only causal language model with three segment
//! embeddings and learned image-prefix conditioning: training with linear
//! learning-rate decay, greedy and answer-conditioned decoding, binary
//! checkpoints, and a finite-difference gradient checker.

mod checkpoint;
mod decode;
mod forward;
mod gradcheck;
mod params;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use decode::Generation;
pub use forward::cross_entropy;
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{LayerParams, Parameters};
pub use tensor::Mat;
pub use train::{lr_at_step, train, write_curve_csv, CurvePoint, TrainConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingTable;
use crate::num::Scalar;
use crate::tokenizer::TokenizedExample;

use forward::softmax_ce_grad;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence of {actual} positions exceeds max_len {max}")]
    TooLong { actual: usize, max: usize },
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },
    #[error("token id {id} out of range for vocab of {vocab_size}")]
    BadTokenId { id: u32, vocab_size: usize },
    #[error("image_ref {0:?} not present in the embedding table")]
    MissingImage(String),
    #[error("token {0:?} missing from the vocabulary")]
    MissingConnective(String),
    #[error("forced answer is empty")]
    EmptyAnswer,
    #[error("training example too short (need at least 2 tokens)")]
    TooShort,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and conditioning configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    /// 0 disables image conditioning entirely.
    pub image_dim: usize,
    pub n_prefix_tokens: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Tie the output projection to the token embedding.
    pub tied_output: bool,
    /// Give prefix positions a learned fourth segment row instead of the
    /// default zero segment vector.
    pub image_segment: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 256,
            image_dim: 0,
            n_prefix_tokens: 1,
            dropout: 0.0,
            seed: 0,
            tied_output: true,
            image_segment: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.vocab_size < 4 {
            return fail(format!("vocab_size {} < 4 (specials)", self.vocab_size));
        }
        if self.n_heads == 0 || self.d_model == 0 || self.n_layers == 0 {
            return fail("d_model, n_layers, n_heads must be positive".to_string());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.image_dim > 0 && self.n_prefix_tokens == 0 {
            return fail("n_prefix_tokens must be >= 1 when image conditioning is on".to_string());
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Prefix positions prepended to every sequence.
    pub fn prefix_len(&self) -> usize {
        if self.image_dim > 0 {
            self.n_prefix_tokens
        } else {
            0
        }
    }
}

/// One training sample: a tokenized example plus its optional image vector.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a, F> {
    pub example: &'a TokenizedExample,
    pub image: Option<&'a [F]>,
}

/// Resolve examples against an embedding table. Conditioning is opt-in:
/// without a table, image_refs are ignored and everything trains
/// unconditioned; with a table, a dangling image_ref is an error.
pub fn resolve_items<'a, F: Scalar>(
    examples: &'a [TokenizedExample],
    images: Option<&'a EmbeddingTable<F>>,
) -> Result<Vec<TrainItem<'a, F>>, ModelError> {
    examples
        .iter()
        .map(|example| {
            let image = match (&example.image_ref, images) {
                (Some(r), Some(table)) => Some(
                    table
                        .get(r)
                        .ok_or_else(|| ModelError::MissingImage(r.clone()))?,
                ),
                _ => None,
            };
            Ok(TrainItem { example, image })
        })
        .collect()
}

/// The model: a config plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel<F> {
    pub config: ModelConfig,
    pub params: Parameters<F>,
}

impl<F: Scalar> LanguageModel<F> {
    /// Seeded random initialization.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Parameters::init(&config);
        Ok(LanguageModel { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters<F>) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(LanguageModel { config, params })
    }

    /// Mean masked cross-entropy over a batch without gradients.
    pub fn batch_loss(&self, items: &[TrainItem<'_, F>]) -> Result<F, ModelError> {
        let mut loss_sum = F::zero();
        let mut total = 0usize;
        for item in items {
            let ex = item.example;
            if ex.ids.len() < 2 {
                return Err(ModelError::TooShort);
            }
            let n = ex.ids.len() - 1;
            let cache = self.forward_cached(&ex.ids[..n], &ex.segments[..n], item.image, None)?;
            let mut dlogits = Mat::zeros(n, self.config.vocab_size);
            let (s, c) = softmax_ce_grad(&cache.logits, &ex.ids[1..], &ex.loss_mask[1..], &mut dlogits);
            loss_sum += s;
            total += c;
        }
        if total == 0 {
            return Err(ModelError::EmptyMask);
        }
        Ok(loss_sum / F::from_usize_c(total))
    }

    /// Mean masked cross-entropy and its gradient over a batch. Gradients are
    /// accumulated sample by sample in batch order, then scaled once; results
    /// do not depend on any worker count because there is none.
    pub fn loss_and_grad(
        &self,
        items: &[TrainItem<'_, F>],
        dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> Result<(F, Parameters<F>), ModelError> {
        let mut grads = Parameters::zeros(&self.config);
        let mut loss_sum = F::zero();
        let mut total = 0usize;
        let mut rng = dropout_rng;
        for item in items {
            let ex = item.example;
            if ex.ids.len() < 2 {
                return Err(ModelError::TooShort);
            }
            let n = ex.ids.len() - 1;
            let cache = self.forward_cached(
                &ex.ids[..n],
                &ex.segments[..n],
                item.image,
                rng.as_deref_mut(),
            )?;
            let mut dlogits = Mat::zeros(n, self.config.vocab_size);
            let (s, c) = softmax_ce_grad(&cache.logits, &ex.ids[1..], &ex.loss_mask[1..], &mut dlogits);
            loss_sum += s;
            total += c;
            self.backward(&cache, &dlogits, &ex.ids[..n], &ex.segments[..n], item.image, &mut grads);
        }
        if total == 0 {
            return Err(ModelError::EmptyMask);
        }
        let scale = F::one() / F::from_usize_c(total);
        for tensor in grads.tensors_mut() {
            for v in tensor.iter_mut() {
                *v *= scale;
            }
        }
        Ok((loss_sum * scale, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Segment;

    pub(crate) fn tiny_config(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            max_len: 32,
            image_dim: 3,
            n_prefix_tokens: 2,
            seed: 7,
            ..ModelConfig::default()
        }
    }

    fn segs(pattern: &[u8]) -> Vec<Segment> {
        pattern
            .iter()
            .map(|&s| match s {
                0 => Segment::Question,
                1 => Segment::Answer,
                _ => Segment::Explanation,
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(tiny_config(10).validate().is_ok());
        assert!(ModelConfig { d_model: 7, ..tiny_config(10) }.validate().is_err());
        assert!(ModelConfig { vocab_size: 2, ..tiny_config(10) }.validate().is_err());
        assert!(ModelConfig { image_dim: 4, n_prefix_tokens: 0, ..tiny_config(10) }
            .validate()
            .is_err());
    }

    #[test]
    fn causality_probe_bit_exact() {
        let model = LanguageModel::<f32>::new(tiny_config(12)).unwrap();
        let ids_a = vec![4, 5, 6, 7, 8];
        let mut ids_b = ids_a.clone();
        ids_b[3] = 9; // perturb token at position 3
        let segments = segs(&[0, 0, 1, 1, 2]);
        let img = vec![0.5f32, -0.25, 1.0];
        let la = model.forward(&ids_a, &segments, Some(&img)).unwrap();
        let lb = model.forward(&ids_b, &segments, Some(&img)).unwrap();
        for t in 0..3 {
            assert_eq!(la.row(t), lb.row(t), "logits changed at position {t}");
        }
        assert_ne!(la.row(3), lb.row(3));
    }

    #[test]
    fn segment_flip_changes_logits() {
        let model = LanguageModel::<f32>::new(tiny_config(12)).unwrap();
        let ids = vec![4, 5, 6];
        let a = model.forward(&ids, &segs(&[0, 0, 0]), None).unwrap();
        let b = model.forward(&ids, &segs(&[0, 2, 0]), None).unwrap();
        assert_ne!(a.row(1), b.row(1));
    }

    #[test]
    fn zero_image_equals_absent_image_iff_bias_zero() {
        let mut model = LanguageModel::<f32>::new(tiny_config(12)).unwrap();
        let ids = vec![4, 5, 6];
        let segments = segs(&[0, 1, 2]);
        let zero_img = vec![0.0f32; 3];

        // bias starts at zero after init
        let with_zero = model.forward(&ids, &segments, Some(&zero_img)).unwrap();
        let absent = model.forward(&ids, &segments, None).unwrap();
        assert_eq!(with_zero.data, absent.data);

        model.params.img_b[0] = 0.5;
        let with_zero = model.forward(&ids, &segments, Some(&zero_img)).unwrap();
        let absent = model.forward(&ids, &segments, None).unwrap();
        assert_ne!(with_zero.data, absent.data);
    }

    #[test]
    fn forward_shape_errors() {
        let model = LanguageModel::<f32>::new(tiny_config(12)).unwrap();
        assert!(matches!(
            model.forward(&[4, 5], &segs(&[0]), None),
            Err(ModelError::Shape(_))
        ));
        assert!(matches!(
            model.forward(&[99], &segs(&[0]), None),
            Err(ModelError::BadTokenId { id: 99, .. })
        ));
        assert!(matches!(
            model.forward(&[4], &segs(&[0]), Some(&[1.0])),
            Err(ModelError::Shape(_))
        ));
        let long_ids = vec![4u32; 31];
        let long_segs = segs(&[0u8; 31]);
        assert!(matches!(
            model.forward(&long_ids, &long_segs, Some(&[0.0, 0.0, 0.0])),
            Err(ModelError::TooLong { actual: 33, max: 32 })
        ));
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        let vocab = 11;
        let logits = Mat::<f64> {
            rows: 4,
            cols: vocab,
            data: vec![0.37; 4 * vocab],
        };
        let loss = cross_entropy(&logits, &[1, 2, 3, 4], &[true, true, false, true]).unwrap();
        assert!((loss - (vocab as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn one_hot_logits_loss_vanishes() {
        let vocab = 6;
        let mut logits = Mat::<f64>::zeros(2, vocab);
        logits.row_mut(0)[3] = 50.0;
        logits.row_mut(1)[1] = 50.0;
        let loss = cross_entropy(&logits, &[3, 1], &[true, true]).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn masked_loss_matches_per_position_average() {
        let vocab = 5;
        let mut logits = Mat::<f64>::zeros(4, vocab);
        for t in 0..4 {
            for v in 0..vocab {
                logits.row_mut(t)[v] = (t * vocab + v) as f64 * 0.131;
            }
        }
        let targets = [0u32, 1, 2, 3];
        let mask = [true, false, true, false];
        let loss = cross_entropy(&logits, &targets, &mask).unwrap();
        let mut expected = 0.0;
        for t in [0usize, 2] {
            let row = logits.row(t);
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = row.iter().map(|l| (l - max).exp()).sum();
            expected += z.ln() + max - row[targets[t] as usize];
        }
        expected /= 2.0;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let logits = Mat::<f64>::zeros(2, 5);
        assert!(matches!(
            cross_entropy(&logits, &[0, 1], &[false, false]),
            Err(ModelError::EmptyMask)
        ));
    }
}
