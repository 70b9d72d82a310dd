//! Parameter tensors, seeded initialization, and ordered tensor iteration.
//! The iteration order here is the declared order: the checkpoint format,
//! the optimizer state, and the gradient checker all walk it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::num::Scalar;

use super::tensor::Mat;
use super::ModelConfig;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_g: Vec<F>,
    pub ln1_b: Vec<F>,
    pub wq: Mat<F>,
    pub bq: Vec<F>,
    pub wk: Mat<F>,
    pub bk: Vec<F>,
    pub wv: Mat<F>,
    pub bv: Vec<F>,
    pub wo: Mat<F>,
    pub bo: Vec<F>,
    pub ln2_g: Vec<F>,
    pub ln2_b: Vec<F>,
    pub w1: Mat<F>,
    pub b1: Vec<F>,
    pub w2: Mat<F>,
    pub b2: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    /// vocab_size x d_model; doubles as the output projection when tied.
    pub tok_emb: Mat<F>,
    /// max_len x d_model, covering prefix and text positions jointly.
    pub pos_emb: Mat<F>,
    /// 3 rows (Q/A/E), plus a fourth image-segment row when configured.
    pub seg_emb: Mat<F>,
    /// image_dim x (n_prefix_tokens * d_model); empty when image_dim == 0.
    pub img_w: Mat<F>,
    pub img_b: Vec<F>,
    pub layers: Vec<LayerParams<F>>,
    pub lnf_g: Vec<F>,
    pub lnf_b: Vec<F>,
    /// vocab_size x d_model; present only when the output is untied.
    pub out_w: Option<Mat<F>>,
}

impl<F: Scalar> Parameters<F> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let n_seg = if config.image_segment { 4 } else { 3 };
        let prefix_width = if config.image_dim > 0 {
            config.n_prefix_tokens * d
        } else {
            0
        };
        Parameters {
            tok_emb: Mat::zeros(config.vocab_size, d),
            pos_emb: Mat::zeros(config.max_len, d),
            seg_emb: Mat::zeros(n_seg, d),
            img_w: Mat::zeros(config.image_dim, prefix_width),
            img_b: vec![F::zero(); prefix_width],
            layers: (0..config.n_layers)
                .map(|_| LayerParams {
                    ln1_g: vec![F::zero(); d],
                    ln1_b: vec![F::zero(); d],
                    wq: Mat::zeros(d, d),
                    bq: vec![F::zero(); d],
                    wk: Mat::zeros(d, d),
                    bk: vec![F::zero(); d],
                    wv: Mat::zeros(d, d),
                    bv: vec![F::zero(); d],
                    wo: Mat::zeros(d, d),
                    bo: vec![F::zero(); d],
                    ln2_g: vec![F::zero(); d],
                    ln2_b: vec![F::zero(); d],
                    w1: Mat::zeros(d, 4 * d),
                    b1: vec![F::zero(); 4 * d],
                    w2: Mat::zeros(4 * d, d),
                    b2: vec![F::zero(); d],
                })
                .collect(),
            lnf_g: vec![F::zero(); d],
            lnf_b: vec![F::zero(); d],
            out_w: if config.tied_output {
                None
            } else {
                Some(Mat::zeros(config.vocab_size, d))
            },
        }
    }

    /// Seeded init: weights N(0, 0.02), biases zero, layer-norm gain one.
    pub fn init(config: &ModelConfig) -> Self {
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("normal distribution");
        let fill = |m: &mut [F], rng: &mut ChaCha8Rng| {
            for v in m.iter_mut() {
                *v = F::from_f64_c(normal.sample(rng));
            }
        };
        fill(&mut params.tok_emb.data, &mut rng);
        fill(&mut params.pos_emb.data, &mut rng);
        fill(&mut params.seg_emb.data, &mut rng);
        fill(&mut params.img_w.data, &mut rng);
        for layer in &mut params.layers {
            layer.ln1_g.fill(F::one());
            fill(&mut layer.wq.data, &mut rng);
            fill(&mut layer.wk.data, &mut rng);
            fill(&mut layer.wv.data, &mut rng);
            fill(&mut layer.wo.data, &mut rng);
            layer.ln2_g.fill(F::one());
            fill(&mut layer.w1.data, &mut rng);
            fill(&mut layer.w2.data, &mut rng);
        }
        params.lnf_g.fill(F::one());
        if let Some(out_w) = &mut params.out_w {
            fill(&mut out_w.data, &mut rng);
        }
        params
    }

    /// Tensors in declared order as (name, shape, data).
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &Vec<F>)> {
        let mut out: Vec<(String, Vec<usize>, &Vec<F>)> = vec![
            ("tok_emb".into(), vec![self.tok_emb.rows, self.tok_emb.cols], &self.tok_emb.data),
            ("pos_emb".into(), vec![self.pos_emb.rows, self.pos_emb.cols], &self.pos_emb.data),
            ("seg_emb".into(), vec![self.seg_emb.rows, self.seg_emb.cols], &self.seg_emb.data),
            ("img_w".into(), vec![self.img_w.rows, self.img_w.cols], &self.img_w.data),
            ("img_b".into(), vec![self.img_b.len()], &self.img_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let name = |s: &str| format!("layer{i}.{s}");
            out.push((name("ln1_g"), vec![l.ln1_g.len()], &l.ln1_g));
            out.push((name("ln1_b"), vec![l.ln1_b.len()], &l.ln1_b));
            out.push((name("wq"), vec![l.wq.rows, l.wq.cols], &l.wq.data));
            out.push((name("bq"), vec![l.bq.len()], &l.bq));
            out.push((name("wk"), vec![l.wk.rows, l.wk.cols], &l.wk.data));
            out.push((name("bk"), vec![l.bk.len()], &l.bk));
            out.push((name("wv"), vec![l.wv.rows, l.wv.cols], &l.wv.data));
            out.push((name("bv"), vec![l.bv.len()], &l.bv));
            out.push((name("wo"), vec![l.wo.rows, l.wo.cols], &l.wo.data));
            out.push((name("bo"), vec![l.bo.len()], &l.bo));
            out.push((name("ln2_g"), vec![l.ln2_g.len()], &l.ln2_g));
            out.push((name("ln2_b"), vec![l.ln2_b.len()], &l.ln2_b));
            out.push((name("w1"), vec![l.w1.rows, l.w1.cols], &l.w1.data));
            out.push((name("b1"), vec![l.b1.len()], &l.b1));
            out.push((name("w2"), vec![l.w2.rows, l.w2.cols], &l.w2.data));
            out.push((name("b2"), vec![l.b2.len()], &l.b2));
        }
        out.push(("lnf_g".into(), vec![self.lnf_g.len()], &self.lnf_g));
        out.push(("lnf_b".into(), vec![self.lnf_b.len()], &self.lnf_b));
        if let Some(out_w) = &self.out_w {
            out.push(("out_w".into(), vec![out_w.rows, out_w.cols], &out_w.data));
        }
        out
    }

    /// Mutable tensor buffers in the same declared order as [`tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<F>> {
        let mut out: Vec<&mut Vec<F>> = vec![
            &mut self.tok_emb.data,
            &mut self.pos_emb.data,
            &mut self.seg_emb.data,
            &mut self.img_w.data,
            &mut self.img_b,
        ];
        for l in self.layers.iter_mut() {
            out.push(&mut l.ln1_g);
            out.push(&mut l.ln1_b);
            out.push(&mut l.wq.data);
            out.push(&mut l.bq);
            out.push(&mut l.wk.data);
            out.push(&mut l.bk);
            out.push(&mut l.wv.data);
            out.push(&mut l.bv);
            out.push(&mut l.wo.data);
            out.push(&mut l.bo);
            out.push(&mut l.ln2_g);
            out.push(&mut l.ln2_b);
            out.push(&mut l.w1.data);
            out.push(&mut l.b1);
            out.push(&mut l.w2.data);
            out.push(&mut l.b2);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        if let Some(out_w) = &mut self.out_w {
            out.push(&mut out_w.data);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            max_len: 16,
            image_dim: 3,
            n_prefix_tokens: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let config = tiny_config();
        let a = Parameters::<f32>::init(&config);
        let b = Parameters::<f32>::init(&config);
        assert_eq!(a, b);
        let other = Parameters::<f32>::init(&ModelConfig { seed: 1, ..config });
        assert_ne!(a, other);
    }

    #[test]
    fn tensor_iteration_counts_params() {
        let config = tiny_config();
        let p = Parameters::<f64>::init(&config);
        let names: Vec<String> = p.tensors().iter().map(|(n, _, _)| n.clone()).collect();
        assert_eq!(names[0], "tok_emb");
        assert!(names.contains(&"layer1.w2".to_string()));
        assert!(names.contains(&"img_w".to_string()));
        let total = p.n_params();
        let via_mut: usize = {
            let mut p = p.clone();
            p.tensors_mut().iter().map(|t| t.len()).sum()
        };
        assert_eq!(total, via_mut);
    }

    #[test]
    fn untied_output_adds_tensor() {
        let config = ModelConfig {
            tied_output: false,
            ..tiny_config()
        };
        let p = Parameters::<f32>::init(&config);
        assert!(p.tensors().iter().any(|(n, _, _)| n == "out_w"));
    }
}
