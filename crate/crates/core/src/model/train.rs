//! Training loop: adaptive-moment optimizer, linear learning-rate decay from
//! the peak to exactly zero at the final step, seeded shuffling, per-step
//! loss curve. Deterministic given the seed: fixed shuffle, fixed batch
//! order, single-threaded numeric core.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::num::Scalar;
use crate::tokenizer::TokenizedExample;

use super::{resolve_items, LanguageModel, ModelConfig, ModelError, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Stop once a batch loss drops below this value.
    pub stop_at_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 20,
            peak_lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
            seed: 0,
            stop_at_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.peak_lr <= 0.0 {
            return Err(ModelError::Config(format!("peak_lr {} must be > 0", self.peak_lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("epochs and batch_size must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// One step of the emitted loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Linear decay from the peak at step 0 to exactly zero at the final step.
pub fn lr_at_step(peak: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        return peak;
    }
    let last = (total_steps - 1) as f64;
    peak * (last - step as f64) / last
}

struct Adam<F> {
    m: Parameters<F>,
    v: Parameters<F>,
    t: usize,
}

impl<F: Scalar> Adam<F> {
    fn new(config: &ModelConfig) -> Self {
        Adam {
            m: Parameters::zeros(config),
            v: Parameters::zeros(config),
            t: 0,
        }
    }

    fn step(
        &mut self,
        params: &mut Parameters<F>,
        grads: &mut Parameters<F>,
        cfg: &TrainConfig,
        lr: f64,
    ) {
        self.t += 1;
        let beta1 = F::from_f64_c(cfg.beta1);
        let beta2 = F::from_f64_c(cfg.beta2);
        let eps = F::from_f64_c(cfg.eps);
        let wd = F::from_f64_c(cfg.weight_decay);
        let lr = F::from_f64_c(lr);
        let bias1 = F::one() - F::from_f64_c(cfg.beta1.powi(self.t as i32));
        let bias2 = F::one() - F::from_f64_c(cfg.beta2.powi(self.t as i32));

        if let Some(clip) = cfg.grad_clip {
            let mut norm_sq = F::zero();
            for tensor in grads.tensors_mut() {
                for g in tensor.iter() {
                    norm_sq += *g * *g;
                }
            }
            let norm = norm_sq.sqrt();
            let clip = F::from_f64_c(clip);
            if norm > clip {
                let scale = clip / norm;
                for tensor in grads.tensors_mut() {
                    for g in tensor.iter_mut() {
                        *g *= scale;
                    }
                }
            }
        }

        let mut p_t = params.tensors_mut();
        let g_t = grads.tensors_mut();
        let mut m_t = self.m.tensors_mut();
        let mut v_t = self.v.tensors_mut();
        for i in 0..p_t.len() {
            let (p, g, m, v) = (&mut p_t[i], &g_t[i], &mut m_t[i], &mut v_t[i]);
            for j in 0..p.len() {
                let grad = g[j];
                m[j] = beta1 * m[j] + (F::one() - beta1) * grad;
                v[j] = beta2 * v[j] + (F::one() - beta2) * grad * grad;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] = p[j] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[j]);
            }
        }
        drop(g_t);
    }
}

/// Train a fresh model on tokenized examples. Returns the model and the
/// per-step loss curve. Bit-reproducible for a fixed seed.
pub fn train<F: Scalar>(
    examples: &[TokenizedExample],
    images: Option<&EmbeddingTable<F>>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(LanguageModel<F>, Vec<CurvePoint>), ModelError> {
    model_config.validate()?;
    train_config.validate()?;
    if examples.is_empty() {
        return Err(ModelError::Config("empty training corpus".to_string()));
    }
    let items = resolve_items(examples, images)?;
    for item in &items {
        let need = item.example.ids.len() + model_config.prefix_len();
        if need > model_config.max_len {
            return Err(ModelError::TooLong {
                actual: need,
                max: model_config.max_len,
            });
        }
    }

    let mut model = LanguageModel::<F>::new(model_config.clone())?;
    let mut adam = Adam::new(model_config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_config.seed.wrapping_add(1));

    let n = items.len();
    let batches_per_epoch = n.div_ceil(train_config.batch_size);
    let total_steps = train_config.epochs * batches_per_epoch;
    let mut curve = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..n).collect();

    'epochs: for _epoch in 0..train_config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(train_config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| items[i]).collect();
            let rng = if model_config.dropout > 0.0 {
                Some(&mut dropout_rng)
            } else {
                None
            };
            let (loss, mut grads) = model.loss_and_grad(&batch, rng)?;
            let loss_f64 = loss.to_f64_c();
            if !loss_f64.is_finite() {
                return Err(ModelError::Divergence { step });
            }
            let lr = lr_at_step(train_config.peak_lr, step, total_steps);
            adam.step(&mut model.params, &mut grads, train_config, lr);
            curve.push(CurvePoint { step, lr, loss: loss_f64 });
            step += 1;
            if let Some(stop) = train_config.stop_at_loss {
                if loss_f64 < stop {
                    break 'epochs;
                }
            }
        }
    }
    if !model.params.all_finite() {
        return Err(ModelError::Divergence { step });
    }
    Ok((model, curve))
}

/// Write a loss curve as CSV: `step,lr,loss`.
pub fn write_curve_csv(curve: &[CurvePoint], mut w: impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "step,lr,loss")?;
    for p in curve {
        writeln!(w, "{},{},{}", p.step, p.lr, p.loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Segment;

    fn toy_examples(vocab: u32, n: usize) -> Vec<TokenizedExample> {
        (0..n)
            .map(|i| {
                let a = 4 + (i as u32 % (vocab - 4));
                let b = 4 + ((i as u32 + 1) % (vocab - 4));
                TokenizedExample {
                    ids: vec![1, a, b, a, 2],
                    segments: vec![
                        Segment::Question,
                        Segment::Question,
                        Segment::Answer,
                        Segment::Explanation,
                        Segment::Explanation,
                    ],
                    loss_mask: vec![false, false, true, true, true],
                    image_ref: None,
                }
            })
            .collect()
    }

    fn small_configs() -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                vocab_size: 12,
                d_model: 16,
                n_layers: 1,
                n_heads: 2,
                max_len: 16,
                image_dim: 0,
                seed: 3,
                ..ModelConfig::default()
            },
            TrainConfig {
                batch_size: 4,
                epochs: 3,
                peak_lr: 1e-3,
                seed: 3,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn lr_schedule_endpoints_and_midpoint() {
        let total = 101;
        assert_eq!(lr_at_step(2e-5, 0, total), 2e-5);
        assert_eq!(lr_at_step(2e-5, 100, total), 0.0);
        assert!((lr_at_step(2e-5, 50, total) - 1e-5).abs() < 1e-20);
        assert_eq!(lr_at_step(2e-5, 0, 1), 2e-5);
    }

    #[test]
    fn training_runs_and_reduces_loss() {
        let (mc, tc) = small_configs();
        let examples = toy_examples(12, 8);
        let (_, curve) = train::<f32>(&examples, None, &mc, &tc).unwrap();
        assert_eq!(curve.len(), 6);
        assert_eq!(curve[0].step, 0);
        assert!(curve.last().unwrap().loss < curve[0].loss);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (mc, tc) = small_configs();
        let examples = toy_examples(12, 8);
        let (m1, c1) = train::<f32>(&examples, None, &mc, &tc).unwrap();
        let (m2, c2) = train::<f32>(&examples, None, &mc, &tc).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(c1, c2);
    }

    #[test]
    fn divergence_reports_step() {
        let (mc, tc) = small_configs();
        let tc = TrainConfig { peak_lr: 1e18, ..tc };
        let examples = toy_examples(12, 8);
        match train::<f32>(&examples, None, &mc, &tc) {
            Err(ModelError::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn dropout_trains_without_nan() {
        let (mc, tc) = small_configs();
        let mc = ModelConfig { dropout: 0.1, ..mc };
        let examples = toy_examples(12, 8);
        let (_, curve) = train::<f32>(&examples, None, &mc, &tc).unwrap();
        assert!(curve.iter().all(|p| p.loss.is_finite()));
    }

    #[test]
    fn grad_clip_keeps_training_stable() {
        let (mc, tc) = small_configs();
        let tc = TrainConfig { grad_clip: Some(1.0), ..tc };
        let examples = toy_examples(12, 8);
        assert!(train::<f32>(&examples, None, &mc, &tc).is_ok());
    }

    #[test]
    fn image_refs_ignored_without_table_and_conditioned_with_one() {
        let (mc, tc) = small_configs();
        let mut examples = toy_examples(12, 8);
        for (i, ex) in examples.iter_mut().enumerate() {
            ex.image_ref = Some(format!("img{}", i % 4));
        }
        // no table: trains unconditioned even though refs are present
        assert!(train::<f32>(&examples, None, &mc, &tc).is_ok());

        // with a table and image conditioning configured
        let mc_img = ModelConfig { image_dim: 3, n_prefix_tokens: 2, ..mc };
        let mut table = crate::embedding::EmbeddingTable::<f32>::new(3);
        for i in 0..4 {
            table.push(format!("img{i}"), &[0.1 * i as f32, -0.2, 0.5]).unwrap();
        }
        let (model, curve) = train::<f32>(&examples, Some(&table), &mc_img, &tc).unwrap();
        assert!(curve.last().unwrap().loss.is_finite());
        assert!(model.params.img_w.data.iter().any(|&w| w != 0.0));

        // dangling ref with a table is a hard error
        examples[0].image_ref = Some("missing".to_string());
        match train::<f32>(&examples, Some(&table), &mc_img, &tc) {
            Err(ModelError::MissingImage(r)) => assert_eq!(r, "missing"),
            other => panic!("expected MissingImage, got {other:?}"),
        }
    }

    #[test]
    fn curve_csv_format() {
        let curve = vec![CurvePoint { step: 0, lr: 2e-5, loss: 3.5 }];
        let mut buf = Vec::new();
        write_curve_csv(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "step,lr,loss\n0,0.00002,3.5\n");
    }
}
