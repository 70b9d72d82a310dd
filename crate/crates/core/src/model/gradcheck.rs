//! Central finite-difference verification of the analytic gradients. Meant
//! for small high-precision (f64) configurations; samples coordinates from
//! every parameter tensor, including the segment embeddings and the image
//! projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::num::Scalar;

use super::{LanguageModel, ModelError, TrainItem};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Worst relative error per tensor name.
    pub per_tensor: Vec<(String, f64)>,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare analytic gradients to central differences on at least
/// `min_coords` coordinates spanning every tensor.
pub fn grad_check<F: Scalar>(
    model: &LanguageModel<F>,
    items: &[TrainItem<'_, F>],
    epsilon: f64,
    min_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let (_, grads) = model.loss_and_grad(items, None)?;
    let tensor_meta: Vec<(String, usize)> = grads
        .tensors()
        .into_iter()
        .map(|(name, _, data)| (name, data.len()))
        .collect();
    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(_, _, data)| data.iter().map(|v| v.to_f64_c()).collect())
        .collect();

    // Pick coordinates: every non-empty tensor gets at least one, then
    // round-robin until the minimum count is reached.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<(usize, usize)> = Vec::new();
    let nonempty: Vec<usize> = tensor_meta
        .iter()
        .enumerate()
        .filter(|(_, (_, len))| *len > 0)
        .map(|(i, _)| i)
        .collect();
    for &ti in &nonempty {
        coords.push((ti, rng.gen_range(0..tensor_meta[ti].1)));
    }
    while coords.len() < min_coords {
        let ti = nonempty[rng.gen_range(0..nonempty.len())];
        coords.push((ti, rng.gen_range(0..tensor_meta[ti].1)));
    }

    let eps = F::from_f64_c(epsilon);
    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    let mut per_tensor: Vec<(String, f64)> = tensor_meta
        .iter()
        .map(|(name, _)| (name.clone(), 0.0))
        .collect();
    for &(ti, ci) in &coords {
        let original = {
            let mut tensors = probe.params.tensors_mut();
            let v = tensors[ti][ci];
            tensors[ti][ci] = v + eps;
            v
        };
        let loss_plus = probe.batch_loss(items)?.to_f64_c();
        {
            let mut tensors = probe.params.tensors_mut();
            tensors[ti][ci] = original - eps;
        }
        let loss_minus = probe.batch_loss(items)?.to_f64_c();
        {
            let mut tensors = probe.params.tensors_mut();
            tensors[ti][ci] = original;
        }
        let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
        let rel = rel_error(analytic[ti][ci], numeric);
        if rel > per_tensor[ti].1 {
            per_tensor[ti].1 = rel;
        }
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        coords_checked: coords.len(),
        per_tensor,
    })
}
