use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

/// Weights of one post-norm encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
}

/// Coarse grouping used to decide what a training phase may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Embedding,
    Encoder,
    MlmHead,
    ClassifierHead,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        if name.starts_with("embed.") {
            ParamGroup::Embedding
        } else if name.starts_with("mlm.") {
            ParamGroup::MlmHead
        } else if name.starts_with("cls.") {
            ParamGroup::ClassifierHead
        } else {
            ParamGroup::Encoder
        }
    }
}

/// All model weights. The same struct doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub layers: Vec<LayerParams>,
    pub mlm_w: Matrix,
    pub mlm_b: Vec<f64>,
    pub cls_w: Matrix,
    pub cls_b: Vec<f64>,
}

impl LayerParams {
    fn init(cfg: &ModelConfig, std: f64, rng: &mut rng::Rng) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut m = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| normal.sample(rng));
        LayerParams {
            wq: m(d, d),
            bq: vec![0.0; d],
            wk: m(d, d),
            bk: vec![0.0; d],
            wv: m(d, d),
            bv: vec![0.0; d],
            wo: m(d, d),
            bo: vec![0.0; d],
            ln1_gamma: vec![1.0; d],
            ln1_beta: vec![0.0; d],
            w1: m(d, f),
            b1: vec![0.0; f],
            w2: m(f, d),
            b2: vec![0.0; d],
            ln2_gamma: vec![1.0; d],
            ln2_beta: vec![0.0; d],
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        let p = prefix;
        out.push((format!("{p}.wq"), self.wq.as_slice()));
        out.push((format!("{p}.bq"), &self.bq));
        out.push((format!("{p}.wk"), self.wk.as_slice()));
        out.push((format!("{p}.bk"), &self.bk));
        out.push((format!("{p}.wv"), self.wv.as_slice()));
        out.push((format!("{p}.bv"), &self.bv));
        out.push((format!("{p}.wo"), self.wo.as_slice()));
        out.push((format!("{p}.bo"), &self.bo));
        out.push((format!("{p}.ln1_gamma"), &self.ln1_gamma));
        out.push((format!("{p}.ln1_beta"), &self.ln1_beta));
        out.push((format!("{p}.w1"), self.w1.as_slice()));
        out.push((format!("{p}.b1"), &self.b1));
        out.push((format!("{p}.w2"), self.w2.as_slice()));
        out.push((format!("{p}.b2"), &self.b2));
        out.push((format!("{p}.ln2_gamma"), &self.ln2_gamma));
        out.push((format!("{p}.ln2_beta"), &self.ln2_beta));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        let p = prefix;
        out.push((format!("{p}.wq"), self.wq.as_mut_slice()));
        out.push((format!("{p}.bq"), &mut self.bq));
        out.push((format!("{p}.wk"), self.wk.as_mut_slice()));
        out.push((format!("{p}.bk"), &mut self.bk));
        out.push((format!("{p}.wv"), self.wv.as_mut_slice()));
        out.push((format!("{p}.bv"), &mut self.bv));
        out.push((format!("{p}.wo"), self.wo.as_mut_slice()));
        out.push((format!("{p}.bo"), &mut self.bo));
        out.push((format!("{p}.ln1_gamma"), &mut self.ln1_gamma));
        out.push((format!("{p}.ln1_beta"), &mut self.ln1_beta));
        out.push((format!("{p}.w1"), self.w1.as_mut_slice()));
        out.push((format!("{p}.b1"), &mut self.b1));
        out.push((format!("{p}.w2"), self.w2.as_mut_slice()));
        out.push((format!("{p}.b2"), &mut self.b2));
        out.push((format!("{p}.ln2_gamma"), &mut self.ln2_gamma));
        out.push((format!("{p}.ln2_beta"), &mut self.ln2_beta));
    }
}

/// Standard deviation of the normal initializer for all weight matrices.
pub const INIT_STD: f64 = 0.02;

impl Parameters {
    /// Random initialization: N(0, 0.02) weights, zero biases, unit norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, INIT_STD)
    }

    pub fn init_with_std(config: ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[0x1417]);
        let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
        let d = config.d_model;
        let m = |r: usize, c: usize, rng: &mut rng::Rng| {
            Matrix::from_fn(r, c, |_, _| normal.sample(rng))
        };
        let tok_emb = m(config.vocab_size, d, &mut rng);
        let pos_emb = m(config.max_len, d, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams::init(&config, std, &mut rng))
            .collect();
        let mlm_w = m(d, config.vocab_size, &mut rng);
        let cls_w = m(d, config.n_classes, &mut rng);
        Ok(Parameters {
            config,
            tok_emb,
            pos_emb,
            layers,
            mlm_w,
            mlm_b: vec![0.0; config.vocab_size],
            cls_w,
            cls_b: vec![0.0; config.n_classes],
        })
    }

    /// Same shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::with_capacity(8 + 16 * self.layers.len());
        out.push(("embed.tok".into(), self.tok_emb.as_slice()));
        out.push(("embed.pos".into(), self.pos_emb.as_slice()));
        for (l, layer) in self.layers.iter().enumerate() {
            layer.named(&format!("layer{}", l + 1), &mut out);
        }
        out.push(("mlm.w".into(), self.mlm_w.as_slice()));
        out.push(("mlm.b".into(), &self.mlm_b));
        out.push(("cls.w".into(), self.cls_w.as_slice()));
        out.push(("cls.b".into(), &self.cls_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::with_capacity(8 + 16 * self.layers.len());
        out.push(("embed.tok".into(), self.tok_emb.as_mut_slice()));
        out.push(("embed.pos".into(), self.pos_emb.as_mut_slice()));
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.named_mut(&format!("layer{}", l + 1), &mut out);
        }
        out.push(("mlm.w".into(), self.mlm_w.as_mut_slice()));
        out.push(("mlm.b".into(), &mut self.mlm_b));
        out.push(("cls.w".into(), self.cls_w.as_mut_slice()));
        out.push(("cls.b".into(), &mut self.cls_b));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named()
            .into_iter()
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(name) => Err(Error::numeric(format!("non-finite parameter in {name}"))),
            None => Ok(()),
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        let src = other.named();
        for ((_, dst), (_, s)) in self.named_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.named_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Squared global L2 norm over all tensors.
    pub fn norm_sq(&self) -> f64 {
        self.named()
            .iter()
            .map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_views_line_up() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 12,
            vocab_size: 11,
            max_len: 6,
            n_classes: 3,
        };
        let mut p = Parameters::init(cfg, 3).unwrap();
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = p.named_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(names.len(), 2 + 16 * 2 + 4);
        assert_eq!(ParamGroup::of("layer2.w1"), ParamGroup::Encoder);
        assert_eq!(ParamGroup::of("mlm.b"), ParamGroup::MlmHead);
        let expected = 11 * 8 + 6 * 8 + 2 * (4 * (64 + 8) + 4 * 8 + 8 * 12 + 12 + 12 * 8 + 8) + 8 * 11 + 11 + 8 * 3 + 3;
        assert_eq!(p.num_parameters(), expected);
        assert_eq!(Parameters::init(cfg, 3).unwrap(), p);
        p.cls_b[0] = f64::NAN;
        assert_eq!(p.first_non_finite().as_deref(), Some("cls.b"));
    }
}
