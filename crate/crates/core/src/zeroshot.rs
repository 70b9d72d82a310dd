//! Prompt-templated zero-shot classification over externally supplied joint
//! vision-language embeddings: template rendering, explanation-embedding
//! averaging, cosine-similarity argmax, and top-1 reporting.
//!
//! Embeddings are consumed, never computed; the contract starts at vectors.
//! The language model's checkpoint does not feed this module (different
//! embedding spaces) — they meet only at the embedding file format.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingTable;
use crate::num::Scalar;

const CLASS_SLOT: &str = "{class label}";
const EXPLANATION_SLOT: &str = "{explanation}";

/// The bundled class-prompt templates for zero-shot transfer.
pub const ZERO_SHOT_PROMPT_TEMPLATES: [&str; 12] = [
    "a photo of a {class label}",
    "how can you identify a {class label}",
    "A caption of an image of a {class label}",
    "A description of an image of a {class label}",
    "a photo of a {class label}. {explanation}",
    "how can you identify a {class label}. {explanation}",
    "A caption of an image of a {class label}. {explanation}",
    "A description of an image of a {class label}. {explanation}",
    "a photo of a {class label}. Distinctive and physical features describing {explanation}",
    "A caption of an image of a {class label}. Distinctive and physical features describing {explanation}",
    "A description of an image of a {class label}. Distinctive and physical features describing {explanation}",
    "how can you identify a {class label}. Distinctive and physical features describing {explanation}",
];

#[derive(Debug, Error)]
pub enum ZeroShotError {
    #[error("template error: {0}")]
    Template(String),
    #[error("class vector mean has zero norm (antipodal or zero inputs)")]
    DegenerateClassVector,
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("{predictions} predictions vs {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

/// A prompt pattern with a mandatory class-label slot and an optional
/// explanation slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pattern: String,
}

impl PromptTemplate {
    pub fn new(pattern: impl Into<String>) -> Result<Self, ZeroShotError> {
        let pattern = pattern.into();
        let class_slots = pattern.matches(CLASS_SLOT).count();
        if class_slots != 1 {
            return Err(ZeroShotError::Template(format!(
                "pattern must contain {CLASS_SLOT:?} exactly once, found {class_slots}"
            )));
        }
        let expl_slots = pattern.matches(EXPLANATION_SLOT).count();
        if expl_slots > 1 {
            return Err(ZeroShotError::Template(format!(
                "pattern may contain {EXPLANATION_SLOT:?} at most once, found {expl_slots}"
            )));
        }
        Ok(PromptTemplate { pattern })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn has_explanation_slot(&self) -> bool {
        self.pattern.contains(EXPLANATION_SLOT)
    }
}

/// Render one string per explanation (or a single string for templates
/// without an explanation slot). Explanations must be supplied exactly when
/// the template has the slot.
pub fn render_prompts(
    template: &PromptTemplate,
    class_label: &str,
    explanations: &[String],
) -> Result<Vec<String>, ZeroShotError> {
    let base = template.pattern.replace(CLASS_SLOT, class_label);
    if template.has_explanation_slot() {
        if explanations.is_empty() {
            return Err(ZeroShotError::Template(
                "template has an explanation slot but no explanations were given".to_string(),
            ));
        }
        Ok(explanations
            .iter()
            .map(|e| base.replace(EXPLANATION_SLOT, e))
            .collect())
    } else {
        if !explanations.is_empty() {
            return Err(ZeroShotError::Template(format!(
                "template has no explanation slot but {} explanations were given",
                explanations.len()
            )));
        }
        Ok(vec![base])
    }
}

fn unit_normalize<F: Scalar>(v: &[F]) -> Option<Vec<F>> {
    let norm_sq = v.iter().fold(F::zero(), |acc, &x| acc + x * x);
    if norm_sq == F::zero() {
        return None;
    }
    let inv = F::one() / norm_sq.sqrt();
    Some(v.iter().map(|&x| x * inv).collect())
}

/// Mean of unit-normalized prompt embeddings, re-normalized to unit length.
/// Averaging is idempotent on duplicates of a single vector.
pub fn class_vector<F: Scalar>(embeddings: &[Vec<F>]) -> Result<Vec<F>, ZeroShotError> {
    let Some(first) = embeddings.first() else {
        return Err(ZeroShotError::Empty("class embeddings"));
    };
    let dim = first.len();
    let mut mean = vec![F::zero(); dim];
    for e in embeddings {
        if e.len() != dim {
            return Err(ZeroShotError::Shape(format!(
                "class embedding dims {} vs {dim}",
                e.len()
            )));
        }
        let unit = unit_normalize(e).ok_or(ZeroShotError::DegenerateClassVector)?;
        for (m, u) in mean.iter_mut().zip(&unit) {
            *m += *u;
        }
    }
    let count = F::from_usize_c(embeddings.len());
    for m in mean.iter_mut() {
        *m /= count;
    }
    unit_normalize(&mean).ok_or(ZeroShotError::DegenerateClassVector)
}

/// Predictions plus any all-zero image vectors encountered (those tie at
/// similarity zero everywhere and fall to class 0 by the tie rule).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub predictions: Vec<usize>,
    pub zero_vector_ids: Vec<String>,
}

/// Cosine-similarity argmax per image; ties break to the lowest class index.
/// Inputs are normalized internally.
pub fn classify<F: Scalar>(
    images: &EmbeddingTable<F>,
    class_vectors: &[Vec<F>],
) -> Result<Classification, ZeroShotError> {
    if class_vectors.is_empty() {
        return Err(ZeroShotError::Empty("class vectors"));
    }
    if images.is_empty() {
        return Err(ZeroShotError::Empty("image table"));
    }
    let dim = images.dim();
    let normalized_classes: Vec<Option<Vec<F>>> = class_vectors
        .iter()
        .map(|c| {
            if c.len() != dim {
                return Err(ZeroShotError::Shape(format!(
                    "class vector dim {} vs image dim {dim}",
                    c.len()
                )));
            }
            Ok(unit_normalize(c))
        })
        .collect::<Result<_, _>>()?;

    let rows: Vec<(usize, &str, &[F])> = images
        .rows()
        .enumerate()
        .map(|(i, (id, v))| (i, id, v))
        .collect();
    let results: Vec<(usize, bool)> = rows
        .par_iter()
        .map(|(_, _, vector)| {
            let normalized = unit_normalize(vector);
            let is_zero = normalized.is_none();
            let mut best = 0usize;
            let mut best_sim = F::neg_infinity();
            for (ci, class) in normalized_classes.iter().enumerate() {
                let sim = match (&normalized, class) {
                    (Some(img), Some(cls)) => {
                        let mut acc = F::zero();
                        for (a, b) in img.iter().zip(cls) {
                            acc += *a * *b;
                        }
                        acc
                    }
                    _ => F::zero(),
                };
                if sim > best_sim {
                    best_sim = sim;
                    best = ci;
                }
            }
            (best, is_zero)
        })
        .collect();
    let predictions = results.iter().map(|&(p, _)| p).collect();
    let zero_vector_ids = rows
        .iter()
        .zip(&results)
        .filter(|(_, (_, z))| *z)
        .map(|((_, id, _), _)| id.to_string())
        .collect();
    Ok(Classification {
        predictions,
        zero_vector_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassAccuracy {
    pub class_index: usize,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub top1_accuracy: f64,
    pub per_class: Vec<PerClassAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    pub explanations_per_class: usize,
}

/// Top-1 accuracy with a per-gold-class breakdown.
pub fn top1(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<ZeroShotReport, ZeroShotError> {
    if predictions.len() != labels.len() {
        return Err(ZeroShotError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ZeroShotError::Empty("predictions"));
    }
    let mut n = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    let mut total_correct = 0usize;
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= n_classes {
            return Err(ZeroShotError::Shape(format!(
                "label {l} outside {n_classes} classes"
            )));
        }
        n[l] += 1;
        if p == l {
            correct[l] += 1;
            total_correct += 1;
        }
    }
    let per_class = (0..n_classes)
        .map(|c| PerClassAccuracy {
            class_index: c,
            n: n[c],
            correct: correct[c],
            accuracy: if n[c] == 0 {
                0.0
            } else {
                correct[c] as f64 / n[c] as f64
            },
        })
        .collect();
    Ok(ZeroShotReport {
        top1_accuracy: total_correct as f64 / predictions.len() as f64,
        per_class,
        template: None,
        explanations_per_class: 0,
    })
}

impl ZeroShotReport {
    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = Some(template.into());
        self
    }

    pub fn with_explanations_per_class(mut self, e: usize) -> Self {
        self.explanations_per_class = e;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis_table(n: usize, dim: usize) -> EmbeddingTable<f32> {
        let mut t = EmbeddingTable::new(dim);
        for i in 0..n {
            let mut v = vec![0.0f32; dim];
            v[i] = 1.0;
            t.push(format!("img{i}"), &v).unwrap();
        }
        t
    }

    fn basis_classes(n: usize, dim: usize) -> Vec<Vec<f32>> {
        (0..n)
            .map(|i| {
                let mut v = vec![0.0f32; dim];
                v[i] = 1.0;
                v
            })
            .collect()
    }

    #[test]
    fn render_photo_template() {
        let t = PromptTemplate::new("a photo of a {class label}").unwrap();
        assert_eq!(
            render_prompts(&t, "tench", &[]).unwrap(),
            vec!["a photo of a tench".to_string()]
        );
    }

    #[test]
    fn render_explanation_template_one_per_explanation() {
        let t = PromptTemplate::new(
            "how can you identify a {class label}. Distinctive and physical features describing {explanation}",
        )
        .unwrap();
        let explanations: Vec<String> = (0..4).map(|i| format!("feature set {i}")).collect();
        let rendered = render_prompts(&t, "tench", &explanations).unwrap();
        assert_eq!(rendered.len(), 4);
        assert_eq!(
            rendered[0],
            "how can you identify a tench. Distinctive and physical features describing feature set 0"
        );
    }

    #[test]
    fn render_argument_mismatches() {
        let with_slot = PromptTemplate::new("{class label}. {explanation}").unwrap();
        assert!(matches!(
            render_prompts(&with_slot, "x", &[]),
            Err(ZeroShotError::Template(_))
        ));
        let without_slot = PromptTemplate::new("a photo of a {class label}").unwrap();
        assert!(matches!(
            render_prompts(&without_slot, "x", &["e".to_string()]),
            Err(ZeroShotError::Template(_))
        ));
    }

    #[test]
    fn template_slot_validation() {
        assert!(PromptTemplate::new("no slots").is_err());
        assert!(PromptTemplate::new("{class label} and {class label}").is_err());
        assert!(PromptTemplate::new("{class label} {explanation} {explanation}").is_err());
        for pattern in ZERO_SHOT_PROMPT_TEMPLATES {
            assert!(PromptTemplate::new(pattern).is_ok(), "bad template {pattern:?}");
        }
    }

    #[test]
    fn class_vector_single_and_idempotent() {
        let v = vec![3.0f32, 4.0];
        let single = class_vector(std::slice::from_ref(&v)).unwrap();
        assert!((single[0] - 0.6).abs() < 1e-6);
        assert!((single[1] - 0.8).abs() < 1e-6);
        let double = class_vector(&[v.clone(), v]).unwrap();
        assert_eq!(single, double);
    }

    #[test]
    fn class_vector_antipodal_degenerates() {
        let v = vec![1.0f32, 0.0];
        let neg = vec![-1.0f32, 0.0];
        assert!(matches!(
            class_vector(&[v, neg]),
            Err(ZeroShotError::DegenerateClassVector)
        ));
    }

    #[test]
    fn classify_orthonormal_basis() {
        let images = basis_table(4, 4);
        let classes = basis_classes(4, 4);
        let result = classify(&images, &classes).unwrap();
        assert_eq!(result.predictions, vec![0, 1, 2, 3]);
        assert!(result.zero_vector_ids.is_empty());
    }

    #[test]
    fn classify_with_noise_margin() {
        let dim = 10;
        let classes = basis_classes(10, dim);
        let mut images = EmbeddingTable::<f32>::new(dim);
        let mut rng_state = 9u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state as f64 / u64::MAX as f64) as f32 - 0.5
        };
        for k in 0..10 {
            let mut noise: Vec<f32> = (0..dim).map(|_| next()).collect();
            let norm: f32 = noise.iter().map(|x| x * x).sum::<f32>().sqrt();
            for x in noise.iter_mut() {
                *x *= 0.1 / norm;
            }
            let mut v = vec![0.0f32; dim];
            v[k] = 1.0;
            for (vi, ni) in v.iter_mut().zip(&noise) {
                *vi += ni;
            }
            images.push(format!("img{k}"), &v).unwrap();
        }
        let result = classify(&images, &classes).unwrap();
        let expected: Vec<usize> = (0..10).collect();
        assert_eq!(result.predictions, expected);
    }

    #[test]
    fn zero_vector_ties_to_class_zero_with_warning() {
        let mut images = EmbeddingTable::<f32>::new(3);
        images.push("zero", &[0.0, 0.0, 0.0]).unwrap();
        images.push("real", &[0.0, 1.0, 0.0]).unwrap();
        let classes = basis_classes(3, 3);
        let result = classify(&images, &classes).unwrap();
        assert_eq!(result.predictions, vec![0, 1]);
        assert_eq!(result.zero_vector_ids, vec!["zero".to_string()]);
    }

    #[test]
    fn classify_dim_mismatch() {
        let images = basis_table(2, 2);
        let classes = basis_classes(3, 3);
        assert!(matches!(
            classify(&images, &classes),
            Err(ZeroShotError::Shape(_))
        ));
    }

    #[test]
    fn scale_invariance_of_predictions() {
        let images = basis_table(4, 4);
        let classes = basis_classes(4, 4);
        let base = classify(&images, &classes).unwrap();
        for alpha in [0.25f32, 2.0, 100.0] {
            let mut scaled = EmbeddingTable::<f32>::new(4);
            for (id, v) in images.rows() {
                let sv: Vec<f32> = v.iter().map(|&x| x * alpha).collect();
                scaled.push(id, &sv).unwrap();
            }
            let result = classify(&scaled, &classes).unwrap();
            assert_eq!(result.predictions, base.predictions);
        }
    }

    #[test]
    fn works_at_f64_too() {
        let mut images = EmbeddingTable::<f64>::new(2);
        images.push("a", &[2.0, 0.0]).unwrap();
        images.push("b", &[0.0, 0.5]).unwrap();
        let classes = vec![vec![1.0f64, 0.0], vec![0.0, 1.0]];
        let result = classify(&images, &classes).unwrap();
        assert_eq!(result.predictions, vec![0, 1]);
        let avg = class_vector(&[vec![0.0f64, 3.0], vec![0.0, 7.0]]).unwrap();
        assert!((avg[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top1_reports() {
        let report = top1(&[0, 1, 2, 0], &[0, 1, 1, 0], 3).unwrap();
        assert!((report.top1_accuracy - 0.75).abs() < 1e-12);
        assert_eq!(report.per_class[1].n, 2);
        assert_eq!(report.per_class[1].correct, 1);
        assert_eq!(report.per_class[2].n, 0);
        assert!(top1(&[0], &[0, 1], 2).is_err());
    }
}
