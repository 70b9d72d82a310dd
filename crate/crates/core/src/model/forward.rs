#![allow(clippy::needless_range_loop)]

//! Forward pass with activation cache, cross-entropy loss, and the manual
//! backward pass. Attention is strictly causal over the combined
//! prefix + text sequence: row i's softmax runs over j <= i only, so logits
//! at a position are bit-identical under perturbation of later tokens.
//!
//! When image conditioning is configured (image_dim > 0) the prefix positions
//! always exist; a present image is projected into them, an absent image
//! leaves their content at zero (so a zero image vector and an absent image
//! produce identical logits exactly when the projection bias is zero).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::num::Scalar;
use crate::tokenizer::Segment;

use super::tensor::{dot, linear, matmul, matmul_transa_acc, matmul_transb, Mat};
use super::{LanguageModel, ModelError, Parameters};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64_c(GELU_C);
    let a = F::from_f64_c(GELU_A);
    let half = F::from_f64_c(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64_c(GELU_C);
    let a = F::from_f64_c(GELU_A);
    let half = F::from_f64_c(0.5);
    let three = F::from_f64_c(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * a * x * x)
}

fn layer_norm<F: Scalar>(
    x: &Mat<F>,
    gain: &[F],
    bias: &[F],
    out: &mut Mat<F>,
    means: &mut Vec<F>,
    rstds: &mut Vec<F>,
) {
    let d = x.cols;
    let inv_d = F::one() / F::from_usize_c(d);
    means.clear();
    rstds.clear();
    for i in 0..x.rows {
        let row = x.row(i);
        let mut mean = F::zero();
        for &v in row {
            mean += v;
        }
        mean *= inv_d;
        let mut var = F::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_d;
        let rstd = F::one() / (var + F::from_f64_c(LN_EPS)).sqrt();
        let out_row = out.row_mut(i);
        for j in 0..d {
            out_row[j] = (row[j] - mean) * rstd * gain[j] + bias[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<F: Scalar>(
    dout: &Mat<F>,
    x: &Mat<F>,
    gain: &[F],
    means: &[F],
    rstds: &[F],
    dx: &mut Mat<F>,
    dgain: &mut [F],
    dbias: &mut [F],
) {
    let d = x.cols;
    let inv_d = F::one() / F::from_usize_c(d);
    for i in 0..x.rows {
        let row = x.row(i);
        let dout_row = dout.row(i);
        let (mean, rstd) = (means[i], rstds[i]);
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for j in 0..d {
            let xhat = (row[j] - mean) * rstd;
            let dxhat = dout_row[j] * gain[j];
            dgain[j] += dout_row[j] * xhat;
            dbias[j] += dout_row[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let dx_row = dx.row_mut(i);
        for j in 0..d {
            let xhat = (row[j] - mean) * rstd;
            let dxhat = dout_row[j] * gain[j];
            dx_row[j] += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
}

pub(crate) struct LayerCache<F> {
    x_in: Mat<F>,
    ln1_mean: Vec<F>,
    ln1_rstd: Vec<F>,
    ln1_out: Mat<F>,
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    /// per-head S x S lower-triangular softmax rows
    probs: Vec<Mat<F>>,
    att: Mat<F>,
    attn_drop: Option<Vec<F>>,
    x_mid: Mat<F>,
    ln2_mean: Vec<F>,
    ln2_rstd: Vec<F>,
    ln2_out: Mat<F>,
    u: Mat<F>,
    g: Mat<F>,
    mlp_drop: Option<Vec<F>>,
}

pub(crate) struct ForwardCache<F> {
    pub prefix: usize,
    layers: Vec<LayerCache<F>>,
    x_last: Mat<F>,
    lnf_mean: Vec<F>,
    lnf_rstd: Vec<F>,
    lnf_out: Mat<F>,
    /// text-position logits, T x vocab
    pub logits: Mat<F>,
}

impl<F: Scalar> LanguageModel<F> {
    fn validate_forward_inputs(
        &self,
        ids: &[u32],
        segments: &[Segment],
        image: Option<&[F]>,
    ) -> Result<usize, ModelError> {
        let config = &self.config;
        if ids.is_empty() || ids.len() != segments.len() {
            return Err(ModelError::Shape(format!(
                "{} ids vs {} segments",
                ids.len(),
                segments.len()
            )));
        }
        for &id in ids {
            if id as usize >= config.vocab_size {
                return Err(ModelError::BadTokenId {
                    id,
                    vocab_size: config.vocab_size,
                });
            }
        }
        let prefix = if config.image_dim > 0 {
            config.n_prefix_tokens
        } else {
            if image.is_some() {
                return Err(ModelError::Shape(
                    "image embedding given but image_dim is 0".to_string(),
                ));
            }
            0
        };
        if let Some(img) = image {
            if img.len() != config.image_dim {
                return Err(ModelError::Shape(format!(
                    "image embedding dim {} vs configured {}",
                    img.len(),
                    config.image_dim
                )));
            }
        }
        let total = prefix + ids.len();
        if total > config.max_len {
            return Err(ModelError::TooLong {
                actual: total,
                max: config.max_len,
            });
        }
        Ok(prefix)
    }

    /// Logits for every text position, row-major T x vocab_size.
    pub fn forward(
        &self,
        ids: &[u32],
        segments: &[Segment],
        image: Option<&[F]>,
    ) -> Result<Mat<F>, ModelError> {
        Ok(self.forward_cached(ids, segments, image, None)?.logits)
    }

    pub(crate) fn forward_cached(
        &self,
        ids: &[u32],
        segments: &[Segment],
        image: Option<&[F]>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache<F>, ModelError> {
        let prefix = self.validate_forward_inputs(ids, segments, image)?;
        let config = &self.config;
        let params = &self.params;
        let d = config.d_model;
        let heads = config.n_heads;
        let dh = d / heads;
        let t_len = ids.len();
        let s_len = prefix + t_len;
        let scale = F::one() / F::from_usize_c(dh).sqrt();

        let mut x0 = Mat::zeros(s_len, d);
        for p in 0..prefix {
            let row = x0.row_mut(p);
            if let Some(img) = image {
                for (i, &xi) in img.iter().enumerate() {
                    let w_row = params.img_w.row(i);
                    for j in 0..d {
                        row[j] += xi * w_row[p * d + j];
                    }
                }
                for j in 0..d {
                    row[j] += params.img_b[p * d + j];
                }
            }
            let pos_row = params.pos_emb.row(p);
            for j in 0..d {
                row[j] += pos_row[j];
            }
            if config.image_segment {
                let seg_row = params.seg_emb.row(3);
                for j in 0..d {
                    row[j] += seg_row[j];
                }
            }
        }
        for t in 0..t_len {
            let row = x0.row_mut(prefix + t);
            let tok_row = params.tok_emb.row(ids[t] as usize);
            let pos_row = params.pos_emb.row(prefix + t);
            let seg_row = params.seg_emb.row(segments[t] as usize);
            for j in 0..d {
                row[j] = tok_row[j] + pos_row[j] + seg_row[j];
            }
        }

        let keep = 1.0 - config.dropout;
        let sample_drop_mask = |rng: &mut Option<&mut ChaCha8Rng>, len: usize| -> Option<Vec<F>> {
            match rng {
                Some(rng) if config.dropout > 0.0 => Some(
                    (0..len)
                        .map(|_| {
                            if rng.gen::<f64>() < keep {
                                F::from_f64_c(1.0 / keep)
                            } else {
                                F::zero()
                            }
                        })
                        .collect(),
                ),
                _ => None,
            }
        };

        let mut x = x0;
        let mut layers = Vec::with_capacity(config.n_layers);
        for layer in &params.layers {
            let x_in = x.clone();
            let mut ln1_out = Mat::zeros(s_len, d);
            let mut ln1_mean = Vec::new();
            let mut ln1_rstd = Vec::new();
            layer_norm(&x_in, &layer.ln1_g, &layer.ln1_b, &mut ln1_out, &mut ln1_mean, &mut ln1_rstd);

            let mut q = Mat::zeros(s_len, d);
            let mut k = Mat::zeros(s_len, d);
            let mut v = Mat::zeros(s_len, d);
            linear(&ln1_out, &layer.wq, &layer.bq, &mut q);
            linear(&ln1_out, &layer.wk, &layer.bk, &mut k);
            linear(&ln1_out, &layer.wv, &layer.bv, &mut v);

            let mut probs = Vec::with_capacity(heads);
            let mut att = Mat::zeros(s_len, d);
            for h in 0..heads {
                let col = h * dh;
                let mut p_head = Mat::zeros(s_len, s_len);
                for i in 0..s_len {
                    let q_i = &q.row(i)[col..col + dh];
                    let mut max_score = F::neg_infinity();
                    let mut scores = vec![F::zero(); i + 1];
                    for (j, s_ij) in scores.iter_mut().enumerate() {
                        *s_ij = dot(q_i, &k.row(j)[col..col + dh]) * scale;
                        if *s_ij > max_score {
                            max_score = *s_ij;
                        }
                    }
                    let mut z = F::zero();
                    for s_ij in scores.iter_mut() {
                        *s_ij = (*s_ij - max_score).exp();
                        z += *s_ij;
                    }
                    let p_row = p_head.row_mut(i);
                    let att_row = &mut att.data[i * d + col..i * d + col + dh];
                    for (j, &e) in scores.iter().enumerate() {
                        let p_ij = e / z;
                        p_row[j] = p_ij;
                        let v_j = &v.row(j)[col..col + dh];
                        for (a, &vv) in att_row.iter_mut().zip(v_j) {
                            *a += p_ij * vv;
                        }
                    }
                }
                probs.push(p_head);
            }

            let mut o = Mat::zeros(s_len, d);
            linear(&att, &layer.wo, &layer.bo, &mut o);
            let attn_drop = sample_drop_mask(&mut dropout_rng, s_len * d);
            if let Some(mask) = &attn_drop {
                for (ov, &m) in o.data.iter_mut().zip(mask) {
                    *ov *= m;
                }
            }
            let mut x_mid = x_in.clone();
            for (xm, &ov) in x_mid.data.iter_mut().zip(&o.data) {
                *xm += ov;
            }

            let mut ln2_out = Mat::zeros(s_len, d);
            let mut ln2_mean = Vec::new();
            let mut ln2_rstd = Vec::new();
            layer_norm(&x_mid, &layer.ln2_g, &layer.ln2_b, &mut ln2_out, &mut ln2_mean, &mut ln2_rstd);

            let mut u = Mat::zeros(s_len, 4 * d);
            linear(&ln2_out, &layer.w1, &layer.b1, &mut u);
            let mut g = Mat::zeros(s_len, 4 * d);
            for (gv, &uv) in g.data.iter_mut().zip(&u.data) {
                *gv = gelu(uv);
            }
            let mut m_out = Mat::zeros(s_len, d);
            linear(&g, &layer.w2, &layer.b2, &mut m_out);
            let mlp_drop = sample_drop_mask(&mut dropout_rng, s_len * d);
            if let Some(mask) = &mlp_drop {
                for (mv, &dm) in m_out.data.iter_mut().zip(mask) {
                    *mv *= dm;
                }
            }
            let mut x_next = x_mid.clone();
            for (xn, &mv) in x_next.data.iter_mut().zip(&m_out.data) {
                *xn += mv;
            }

            layers.push(LayerCache {
                x_in,
                ln1_mean,
                ln1_rstd,
                ln1_out,
                q,
                k,
                v,
                probs,
                att,
                attn_drop,
                x_mid,
                ln2_mean,
                ln2_rstd,
                ln2_out,
                u,
                g,
                mlp_drop,
            });
            x = x_next;
        }

        let x_last = x;
        let mut lnf_out = Mat::zeros(s_len, d);
        let mut lnf_mean = Vec::new();
        let mut lnf_rstd = Vec::new();
        layer_norm(&x_last, &params.lnf_g, &params.lnf_b, &mut lnf_out, &mut lnf_mean, &mut lnf_rstd);

        let mut f_text = Mat::zeros(t_len, d);
        for t in 0..t_len {
            f_text.row_mut(t).copy_from_slice(lnf_out.row(prefix + t));
        }
        let out_w = params.out_w.as_ref().unwrap_or(&params.tok_emb);
        let mut logits = Mat::zeros(t_len, config.vocab_size);
        matmul_transb(&f_text, out_w, &mut logits);

        Ok(ForwardCache {
            prefix,
            layers,
            x_last,
            lnf_mean,
            lnf_rstd,
            lnf_out,
            logits,
        })
    }

    /// Accumulate parameter gradients for one sample given d(loss)/d(logits).
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache<F>,
        dlogits: &Mat<F>,
        ids: &[u32],
        segments: &[Segment],
        image: Option<&[F]>,
        grads: &mut Parameters<F>,
    ) {
        let config = &self.config;
        let params = &self.params;
        let d = config.d_model;
        let heads = config.n_heads;
        let dh = d / heads;
        let prefix = cache.prefix;
        let t_len = ids.len();
        let s_len = prefix + t_len;
        let scale = F::one() / F::from_usize_c(dh).sqrt();

        // Output projection (tied weights fold into the token embedding grad).
        let out_w = params.out_w.as_ref().unwrap_or(&params.tok_emb);
        let mut f_text = Mat::zeros(t_len, d);
        for t in 0..t_len {
            f_text.row_mut(t).copy_from_slice(cache.lnf_out.row(prefix + t));
        }
        let mut d_f_text = Mat::zeros(t_len, d);
        matmul(dlogits, out_w, &mut d_f_text);
        {
            let dw = grads.out_w.as_mut().unwrap_or(&mut grads.tok_emb);
            matmul_transa_acc(dlogits, &f_text, dw);
        }
        let mut d_lnf_out = Mat::zeros(s_len, d);
        for t in 0..t_len {
            d_lnf_out.row_mut(prefix + t).copy_from_slice(d_f_text.row(t));
        }

        let mut d_x = Mat::zeros(s_len, d);
        layer_norm_backward(
            &d_lnf_out,
            &cache.x_last,
            &params.lnf_g,
            &cache.lnf_mean,
            &cache.lnf_rstd,
            &mut d_x,
            &mut grads.lnf_g,
            &mut grads.lnf_b,
        );

        for (li, layer) in params.layers.iter().enumerate().rev() {
            let lc = &cache.layers[li];
            let lg = &mut grads.layers[li];

            // MLP branch
            let mut d_m = d_x.clone();
            if let Some(mask) = &lc.mlp_drop {
                for (dv, &m) in d_m.data.iter_mut().zip(mask) {
                    *dv *= m;
                }
            }
            matmul_transa_acc(&lc.g, &d_m, &mut lg.w2);
            for i in 0..s_len {
                let row = d_m.row(i);
                for j in 0..d {
                    lg.b2[j] += row[j];
                }
            }
            let mut d_g = Mat::zeros(s_len, 4 * d);
            matmul_transb(&d_m, &layer.w2, &mut d_g);
            let mut d_u = d_g;
            for (duv, &uv) in d_u.data.iter_mut().zip(&lc.u.data) {
                *duv *= gelu_grad(uv);
            }
            matmul_transa_acc(&lc.ln2_out, &d_u, &mut lg.w1);
            for i in 0..s_len {
                let row = d_u.row(i);
                for j in 0..4 * d {
                    lg.b1[j] += row[j];
                }
            }
            let mut d_ln2_out = Mat::zeros(s_len, d);
            matmul_transb(&d_u, &layer.w1, &mut d_ln2_out);

            // d_x currently holds d(x_next); the residual passes it straight
            // through to x_mid, and the layer-norm path adds to it.
            let mut d_x_mid = d_x;
            layer_norm_backward(
                &d_ln2_out,
                &lc.x_mid,
                &layer.ln2_g,
                &lc.ln2_mean,
                &lc.ln2_rstd,
                &mut d_x_mid,
                &mut lg.ln2_g,
                &mut lg.ln2_b,
            );

            // Attention branch
            let mut d_o = d_x_mid.clone();
            if let Some(mask) = &lc.attn_drop {
                for (dv, &m) in d_o.data.iter_mut().zip(mask) {
                    *dv *= m;
                }
            }
            matmul_transa_acc(&lc.att, &d_o, &mut lg.wo);
            for i in 0..s_len {
                let row = d_o.row(i);
                for j in 0..d {
                    lg.bo[j] += row[j];
                }
            }
            let mut d_att = Mat::zeros(s_len, d);
            matmul_transb(&d_o, &layer.wo, &mut d_att);

            let mut d_q = Mat::zeros(s_len, d);
            let mut d_k = Mat::zeros(s_len, d);
            let mut d_v = Mat::zeros(s_len, d);
            for h in 0..heads {
                let col = h * dh;
                let p_head = &lc.probs[h];
                for i in 0..s_len {
                    let dctx = &d_att.row(i)[col..col + dh];
                    let p_row = p_head.row(i);
                    // dv and dp
                    let mut dp = vec![F::zero(); i + 1];
                    for (j, dp_ij) in dp.iter_mut().enumerate() {
                        let p_ij = p_row[j];
                        let v_row = &lc.v.row(j)[col..col + dh];
                        *dp_ij = dot(dctx, v_row);
                        let dv_row = &mut d_v.data[j * d + col..j * d + col + dh];
                        for (dvv, &c) in dv_row.iter_mut().zip(dctx) {
                            *dvv += p_ij * c;
                        }
                    }
                    let mut row_sum = F::zero();
                    for (j, &dp_ij) in dp.iter().enumerate() {
                        row_sum += p_row[j] * dp_ij;
                    }
                    let q_i: Vec<F> = lc.q.row(i)[col..col + dh].to_vec();
                    let dq_i = &mut d_q.data[i * d + col..i * d + col + dh];
                    for (j, &dp_ij) in dp.iter().enumerate() {
                        let ds_ij = p_row[j] * (dp_ij - row_sum) * scale;
                        let k_row = &lc.k.row(j)[col..col + dh];
                        for (dq, &kv) in dq_i.iter_mut().zip(k_row) {
                            *dq += ds_ij * kv;
                        }
                        let dk_row = &mut d_k.data[j * d + col..j * d + col + dh];
                        for (dk, &qv) in dk_row.iter_mut().zip(&q_i) {
                            *dk += ds_ij * qv;
                        }
                    }
                }
            }

            matmul_transa_acc(&lc.ln1_out, &d_q, &mut lg.wq);
            matmul_transa_acc(&lc.ln1_out, &d_k, &mut lg.wk);
            matmul_transa_acc(&lc.ln1_out, &d_v, &mut lg.wv);
            for i in 0..s_len {
                for j in 0..d {
                    lg.bq[j] += d_q.row(i)[j];
                    lg.bk[j] += d_k.row(i)[j];
                    lg.bv[j] += d_v.row(i)[j];
                }
            }
            let mut d_ln1_out = Mat::zeros(s_len, d);
            matmul_transb(&d_q, &layer.wq, &mut d_ln1_out);
            let mut tmp = Mat::zeros(s_len, d);
            matmul_transb(&d_k, &layer.wk, &mut tmp);
            for (a, &b) in d_ln1_out.data.iter_mut().zip(&tmp.data) {
                *a += b;
            }
            matmul_transb(&d_v, &layer.wv, &mut tmp);
            for (a, &b) in d_ln1_out.data.iter_mut().zip(&tmp.data) {
                *a += b;
            }

            let mut d_x_in = d_x_mid;
            layer_norm_backward(
                &d_ln1_out,
                &lc.x_in,
                &layer.ln1_g,
                &lc.ln1_mean,
                &lc.ln1_rstd,
                &mut d_x_in,
                &mut lg.ln1_g,
                &mut lg.ln1_b,
            );
            d_x = d_x_in;
        }

        // Embedding gradients
        for t in 0..t_len {
            let g_row = d_x.row(prefix + t);
            let tok = &mut grads.tok_emb.data[ids[t] as usize * d..(ids[t] as usize + 1) * d];
            let pos = &mut grads.pos_emb.data[(prefix + t) * d..(prefix + t + 1) * d];
            for j in 0..d {
                tok[j] += g_row[j];
                pos[j] += g_row[j];
            }
            let seg = grads.seg_emb.row_mut(segments[t] as usize);
            for j in 0..d {
                seg[j] += g_row[j];
            }
        }
        for p in 0..prefix {
            let g_row = d_x.row(p);
            let pos = grads.pos_emb.row_mut(p);
            for j in 0..d {
                pos[j] += g_row[j];
            }
            if config.image_segment {
                let seg = grads.seg_emb.row_mut(3);
                for j in 0..d {
                    seg[j] += g_row[j];
                }
            }
            if let Some(img) = image {
                for j in 0..d {
                    grads.img_b[p * d + j] += g_row[j];
                }
                for (i, &xi) in img.iter().enumerate() {
                    let w_row = grads.img_w.row_mut(i);
                    for j in 0..d {
                        w_row[p * d + j] += xi * g_row[j];
                    }
                }
            }
        }
    }
}

/// Sum of cross-entropy at masked positions plus d(loss_sum)/d(logits).
/// Returns (loss_sum, masked_count).
pub(crate) fn softmax_ce_grad<F: Scalar>(
    logits: &Mat<F>,
    targets: &[u32],
    mask: &[bool],
    dlogits: &mut Mat<F>,
) -> (F, usize) {
    let mut loss_sum = F::zero();
    let mut count = 0;
    for t in 0..logits.rows {
        if !mask[t] {
            continue;
        }
        count += 1;
        let row = logits.row(t);
        let mut max = F::neg_infinity();
        for &l in row {
            if l > max {
                max = l;
            }
        }
        let mut z = F::zero();
        for &l in row {
            z += (l - max).exp();
        }
        let target = targets[t] as usize;
        loss_sum += z.ln() + max - row[target];
        let d_row = dlogits.row_mut(t);
        for (v, &l) in d_row.iter_mut().zip(row) {
            *v = (l - max).exp() / z;
        }
        d_row[target] -= F::one();
    }
    (loss_sum, count)
}

/// Mean cross-entropy over masked positions. `targets` are the ids shifted
/// one position left relative to the forward input; the mask marks which
/// target positions contribute.
pub fn cross_entropy<F: Scalar>(
    logits: &Mat<F>,
    targets: &[u32],
    mask: &[bool],
) -> Result<F, ModelError> {
    if targets.len() != logits.rows || mask.len() != logits.rows {
        return Err(ModelError::Shape(format!(
            "{} logit rows vs {} targets / {} mask",
            logits.rows,
            targets.len(),
            mask.len()
        )));
    }
    let mut dlogits = Mat::zeros(logits.rows, logits.cols);
    let (loss_sum, count) = softmax_ce_grad(logits, targets, mask, &mut dlogits);
    if count == 0 {
        return Err(ModelError::EmptyMask);
    }
    Ok(loss_sum / F::from_usize_c(count))
}
