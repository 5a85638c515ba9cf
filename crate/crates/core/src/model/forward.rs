//! Encoder forward pass with cached activations and its exact backward pass.
//!
//! Block structure (post-norm, BERT-like):
//!
//! ```text
//! h⁰ = tok_emb[t] + pos_emb + δ
//! a  = MHA(hˡ⁻¹)             u = LN₁(hˡ⁻¹ + a)
//! f  = GELU(u W₁ + b₁) W₂ + b₂   hˡ = LN₂(u + f)
//! ```
//!
//! The classification head reads the CLS row of the last layer; the MLM head
//! reads the masked rows.

use super::batch::validate_row;
use super::params::{LayerParams, Parameters};
use crate::error::{Error, Result};
use crate::tensor::{self, Matrix};

pub const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Which head produces the logits.
#[derive(Debug, Clone, Copy)]
pub enum Head<'a> {
    /// One row of class logits from the CLS position.
    Classify,
    /// One row of vocabulary logits per listed position.
    Mlm(&'a [usize]),
}

/// Replace the output of encoder layer `layer` (1-based) with `replacement`.
#[derive(Debug, Clone, Copy)]
pub struct Substitution<'a> {
    pub layer: usize,
    pub replacement: &'a Matrix,
}

/// `hˡ` for `l = 0..=n_layers`; layer 0 is the embedded input.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub layers: Vec<Matrix>,
}

impl HiddenStates {
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub hidden: HiddenStates,
    pub substituted_at: Option<usize>,
}

struct NormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

struct LayerCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    ctx: Matrix,
    ln1: NormCache,
    u: Matrix,
    z: Matrix,
    g: Matrix,
    ln2: NormCache,
}

/// Activations needed to backpropagate from any layer down to the input.
pub(crate) struct Trace {
    hidden: Vec<Matrix>,
    caches: Vec<LayerCache>,
}

fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> (Matrix, NormCache) {
    let (rows, cols) = x.shape();
    let mut xhat = Matrix::zeros(rows, cols);
    let mut y = Matrix::zeros(rows, cols);
    let mut rstd = Vec::with_capacity(rows);
    for i in 0..rows {
        let r = x.row(i);
        let mean = r.iter().sum::<f64>() / cols as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(s);
        for j in 0..cols {
            let xh = (r[j] - mean) * s;
            xhat.set(i, j, xh);
            y.set(i, j, gamma[j] * xh + beta[j]);
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Matrix,
    cache: &NormCache,
    gamma: &[f64],
    grads: Option<(&mut [f64], &mut [f64])>,
) -> Matrix {
    let (rows, cols) = dy.shape();
    if let Some((dgamma, dbeta)) = grads {
        for i in 0..rows {
            for j in 0..cols {
                dgamma[j] += dy.get(i, j) * cache.xhat.get(i, j);
                dbeta[j] += dy.get(i, j);
            }
        }
    }
    let mut dx = Matrix::zeros(rows, cols);
    let n = cols as f64;
    for i in 0..rows {
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for (j, &g) in gamma.iter().enumerate() {
            let d = dy.get(i, j) * g;
            mean_d += d;
            mean_dx += d * cache.xhat.get(i, j);
        }
        mean_d /= n;
        mean_dx /= n;
        for (j, &g) in gamma.iter().enumerate() {
            let d = dy.get(i, j) * g;
            dx.set(i, j, cache.rstd[i] * (d - mean_d - cache.xhat.get(i, j) * mean_dx));
        }
    }
    dx
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut y = x.matmul(w);
    y.add_row_vector(b);
    y
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn layer_forward(p: &LayerParams, h: &Matrix, n_heads: usize) -> (Matrix, LayerCache) {
    let len = h.rows();
    let d = h.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = affine(h, &p.wq, &p.bq);
    let k = affine(h, &p.wk, &p.bk);
    let v = affine(h, &p.wv, &p.bv);
    let mut ctx = Matrix::zeros(len, d);
    let mut probs = Vec::with_capacity(n_heads);
    for head in 0..n_heads {
        let qh = q.col_block(head * dh, dh);
        let kh = k.col_block(head * dh, dh);
        let vh = v.col_block(head * dh, dh);
        let mut scores = qh.matmul_t(&kh);
        scores.scale(scale);
        for i in 0..len {
            tensor::softmax_in_place(scores.row_mut(i));
        }
        ctx.set_col_block(head * dh, &scores.matmul(&vh));
        probs.push(scores);
    }
    let a = affine(&ctx, &p.wo, &p.bo);
    let mut r1 = h.clone();
    r1.add_assign(&a);
    let (u, ln1) = layer_norm(&r1, &p.ln1_gamma, &p.ln1_beta);
    let z = affine(&u, &p.w1, &p.b1);
    let g = Matrix::from_vec(z.rows(), z.cols(), z.as_slice().iter().map(|&x| gelu(x)).collect());
    let mut r2 = affine(&g, &p.w2, &p.b2);
    r2.add_assign(&u);
    let (out, ln2) = layer_norm(&r2, &p.ln2_gamma, &p.ln2_beta);
    let cache = LayerCache {
        q,
        k,
        v,
        probs,
        ctx,
        ln1,
        u,
        z,
        g,
        ln2,
    };
    (out, cache)
}

/// Backward through one block. `input` is the block input `hˡ⁻¹`.
fn layer_backward(
    p: &LayerParams,
    cache: &LayerCache,
    input: &Matrix,
    d_out: &Matrix,
    n_heads: usize,
    mut grads: Option<&mut LayerParams>,
) -> Matrix {
    let d = input.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let dr2 = layer_norm_backward(
        d_out,
        &cache.ln2,
        &p.ln2_gamma,
        grads.as_deref_mut().map(|g| (&mut g.ln2_gamma[..], &mut g.ln2_beta[..])),
    );
    // r2 = u + g W2 + b2
    let mut du = dr2.clone();
    if let Some(g) = grads.as_deref_mut() {
        g.w2.add_assign(&cache.g.t_matmul(&dr2));
        accumulate(&mut g.b2, &dr2.col_sums());
    }
    let dg = dr2.matmul_t(&p.w2);
    let dz = Matrix::from_vec(
        dg.rows(),
        dg.cols(),
        dg.as_slice()
            .iter()
            .zip(cache.z.as_slice())
            .map(|(&d, &z)| d * gelu_grad(z))
            .collect(),
    );
    if let Some(g) = grads.as_deref_mut() {
        g.w1.add_assign(&cache.u.t_matmul(&dz));
        accumulate(&mut g.b1, &dz.col_sums());
    }
    du.add_assign(&dz.matmul_t(&p.w1));

    let dr1 = layer_norm_backward(
        &du,
        &cache.ln1,
        &p.ln1_gamma,
        grads.as_deref_mut().map(|g| (&mut g.ln1_gamma[..], &mut g.ln1_beta[..])),
    );
    // r1 = h + ctx Wo + bo
    let mut dh_total = dr1.clone();
    if let Some(g) = grads.as_deref_mut() {
        g.wo.add_assign(&cache.ctx.t_matmul(&dr1));
        accumulate(&mut g.bo, &dr1.col_sums());
    }
    let dctx = dr1.matmul_t(&p.wo);

    let len = input.rows();
    let mut dq = Matrix::zeros(len, d);
    let mut dk = Matrix::zeros(len, d);
    let mut dv = Matrix::zeros(len, d);
    for head in 0..n_heads {
        let probs = &cache.probs[head];
        let dctx_h = dctx.col_block(head * dh, dh);
        let vh = cache.v.col_block(head * dh, dh);
        let qh = cache.q.col_block(head * dh, dh);
        let kh = cache.k.col_block(head * dh, dh);
        let dp = dctx_h.matmul_t(&vh);
        dv.set_col_block(head * dh, &probs.t_matmul(&dctx_h));
        let mut ds = Matrix::zeros(len, len);
        for i in 0..len {
            let pr = probs.row(i);
            let dpr = dp.row(i);
            let inner = tensor::dot(pr, dpr);
            for j in 0..len {
                ds.set(i, j, pr[j] * (dpr[j] - inner) * scale);
            }
        }
        dq.set_col_block(head * dh, &ds.matmul(&kh));
        dk.set_col_block(head * dh, &ds.t_matmul(&qh));
    }
    if let Some(g) = grads {
        g.wq.add_assign(&input.t_matmul(&dq));
        accumulate(&mut g.bq, &dq.col_sums());
        g.wk.add_assign(&input.t_matmul(&dk));
        accumulate(&mut g.bk, &dk.col_sums());
        g.wv.add_assign(&input.t_matmul(&dv));
        accumulate(&mut g.bv, &dv.col_sums());
    }
    dh_total.add_assign(&dq.matmul_t(&p.wq));
    dh_total.add_assign(&dk.matmul_t(&p.wk));
    dh_total.add_assign(&dv.matmul_t(&p.wv));
    dh_total
}

/// Layer-0 hidden state: token + position embedding, plus an optional offset.
pub fn embed(params: &Parameters, tokens: &[u32], offset: Option<&Matrix>) -> Result<Matrix> {
    let cfg = &params.config;
    validate_row(tokens, cfg.vocab_size, cfg.max_len)?;
    let d = cfg.d_model;
    let mut x = Matrix::zeros(tokens.len(), d);
    for (i, &t) in tokens.iter().enumerate() {
        let row = x.row_mut(i);
        for ((o, a), b) in row.iter_mut().zip(params.tok_emb.row(t as usize)).zip(params.pos_emb.row(i)) {
            *o = a + b;
        }
    }
    if let Some(off) = offset {
        if off.shape() != x.shape() {
            return Err(Error::input(format!(
                "input offset shape {:?} differs from embedded input {:?}",
                off.shape(),
                x.shape()
            )));
        }
        x.add_assign(off);
    }
    Ok(x)
}

pub(crate) fn run_encoder(
    params: &Parameters,
    tokens: &[u32],
    offset: Option<&Matrix>,
    substitution: Option<Substitution<'_>>,
    up_to: Option<usize>,
) -> Result<Trace> {
    let cfg = &params.config;
    if let Some(s) = substitution {
        if s.layer == 0 || s.layer > cfg.n_layers {
            return Err(Error::input(format!(
                "substitution layer {} outside [1, {}]",
                s.layer, cfg.n_layers
            )));
        }
        if s.replacement.shape() != (tokens.len(), cfg.d_model) {
            return Err(Error::input("substitution matrix shape mismatch"));
        }
    }
    let x = embed(params, tokens, offset)?;
    let top = up_to.unwrap_or(cfg.n_layers).min(cfg.n_layers);
    let mut hidden = Vec::with_capacity(top + 1);
    let mut caches = Vec::with_capacity(top);
    hidden.push(x);
    for l in 1..=top {
        let (mut out, cache) = layer_forward(&params.layers[l - 1], &hidden[l - 1], cfg.n_heads);
        if let Some(s) = substitution.filter(|s| s.layer == l) {
            out = s.replacement.clone();
        }
        hidden.push(out);
        caches.push(cache);
    }
    Ok(Trace { hidden, caches })
}

fn head_logits(params: &Parameters, last: &Matrix, head: Head<'_>) -> Result<Matrix> {
    match head {
        Head::Classify => Ok(affine(
            &Matrix::from_vec(1, last.cols(), last.row(0).to_vec()),
            &params.cls_w,
            &params.cls_b,
        )),
        Head::Mlm(positions) => {
            let mut rows = Vec::with_capacity(positions.len());
            for &p in positions {
                if p >= last.rows() {
                    return Err(Error::input(format!("mask position {p} beyond sequence")));
                }
                rows.push(last.row(p).to_vec());
            }
            if rows.is_empty() {
                return Ok(Matrix::zeros(0, params.config.vocab_size));
            }
            Ok(affine(&Matrix::from_rows(&rows), &params.mlm_w, &params.mlm_b))
        }
    }
}

fn check_output(params: &Parameters, logits: &Matrix) -> Result<()> {
    if logits.is_finite() {
        return Ok(());
    }
    match params.first_non_finite() {
        Some(name) => Err(Error::numeric(format!("non-finite parameter in {name}"))),
        None => Err(Error::numeric("non-finite logits")),
    }
}

/// Deterministic forward pass for one unpadded sequence.
pub fn forward(
    params: &Parameters,
    tokens: &[u32],
    head: Head<'_>,
    offset: Option<&Matrix>,
    substitution: Option<Substitution<'_>>,
) -> Result<ForwardOutput> {
    let trace = run_encoder(params, tokens, offset, substitution, None)?;
    let logits = head_logits(params, trace.hidden.last().expect("layer 0"), head)?;
    check_output(params, &logits)?;
    Ok(ForwardOutput {
        logits,
        hidden: HiddenStates { layers: trace.hidden },
        substituted_at: substitution.map(|s| s.layer),
    })
}

/// Hidden states only (no head), e.g. for probes.
pub fn hidden_states(params: &Parameters, tokens: &[u32]) -> Result<HiddenStates> {
    let trace = run_encoder(params, tokens, None, None, None)?;
    Ok(HiddenStates { layers: trace.hidden })
}

/// Scalar objectives whose gradients the model exposes.
#[derive(Debug, Clone, Copy)]
pub enum ScalarFn<'a> {
    /// Cross-entropy of the classification head against `label`.
    ClassLoss(usize),
    /// Sum of MLM cross-entropies over `(position, target)` pairs.
    MlmLossSum(&'a [(usize, u32)]),
    /// ‖hˡᵢ‖₂ for encoder layer `layer` and position `pos`.
    HiddenNorm { layer: usize, pos: usize },
    /// Raw classification logit for one class.
    Logit(usize),
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub value: f64,
    /// Gradient with respect to the layer-0 embedded input.
    pub input: Matrix,
    pub params: Option<Parameters>,
    /// Set when the objective's gradient is undefined (‖hˡᵢ‖ = 0); the
    /// returned gradient is zero in that case.
    pub degenerate: bool,
}

fn cross_entropy_grad(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let lse = tensor::log_sum_exp(logits);
    let loss = lse - logits[target];
    let mut g: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    g[target] -= 1.0;
    (loss, g)
}

/// Value of `scalar` and its gradient with respect to the embedded input and,
/// if `want_params`, all parameters.
pub fn value_and_grad(
    params: &Parameters,
    tokens: &[u32],
    scalar: ScalarFn<'_>,
    offset: Option<&Matrix>,
    want_params: bool,
) -> Result<Gradients> {
    let cfg = &params.config;
    let len = tokens.len();
    let d = cfg.d_model;
    let top = match scalar {
        ScalarFn::HiddenNorm { layer, pos } => {
            if layer > cfg.n_layers {
                return Err(Error::input(format!("layer {layer} > n_layers {}", cfg.n_layers)));
            }
            if pos >= len {
                return Err(Error::input(format!("position {pos} beyond sequence")));
            }
            layer
        }
        _ => cfg.n_layers,
    };
    let trace = run_encoder(params, tokens, offset, None, Some(top))?;
    let last = &trace.hidden[top];
    let mut grads = want_params.then(|| params.zeros_like());

    let (value, d_top, degenerate) = match scalar {
        ScalarFn::ClassLoss(label) | ScalarFn::Logit(label) => {
            if label >= cfg.n_classes {
                return Err(Error::input(format!("label {label} >= n_classes {}", cfg.n_classes)));
            }
            let logits = head_logits(params, last, Head::Classify)?;
            check_output(params, &logits)?;
            let (value, dlogits) = match scalar {
                ScalarFn::ClassLoss(_) => cross_entropy_grad(logits.row(0), label),
                _ => {
                    let mut e = vec![0.0; cfg.n_classes];
                    e[label] = 1.0;
                    (logits.get(0, label), e)
                }
            };
            let cls_row = last.row(0);
            if let Some(g) = grads.as_mut() {
                for (i, &h) in cls_row.iter().enumerate() {
                    for (c, &dl) in dlogits.iter().enumerate() {
                        g.cls_w.as_mut_slice()[i * cfg.n_classes + c] += h * dl;
                    }
                }
                accumulate(&mut g.cls_b, &dlogits);
            }
            let mut dh = Matrix::zeros(len, d);
            for (i, o) in dh.row_mut(0).iter_mut().enumerate() {
                *o = tensor::dot(params.cls_w.row(i), &dlogits);
            }
            (value, dh, false)
        }
        ScalarFn::MlmLossSum(targets) => {
            let positions: Vec<usize> = targets.iter().map(|&(p, _)| p).collect();
            let logits = head_logits(params, last, Head::Mlm(&positions))?;
            check_output(params, &logits)?;
            let mut dh = Matrix::zeros(len, d);
            let mut total = 0.0;
            for (r, &(pos, target)) in targets.iter().enumerate() {
                if target as usize >= cfg.vocab_size {
                    return Err(Error::input(format!("MLM target {target} out of vocabulary")));
                }
                let (loss, dl) = cross_entropy_grad(logits.row(r), target as usize);
                total += loss;
                let h = last.row(pos);
                if let Some(g) = grads.as_mut() {
                    let v = cfg.vocab_size;
                    for (i, &hi) in h.iter().enumerate() {
                        let row = &mut g.mlm_w.as_mut_slice()[i * v..(i + 1) * v];
                        for (o, &x) in row.iter_mut().zip(&dl) {
                            *o += hi * x;
                        }
                    }
                    accumulate(&mut g.mlm_b, &dl);
                }
                for (i, o) in dh.row_mut(pos).iter_mut().enumerate() {
                    *o += tensor::dot(params.mlm_w.row(i), &dl);
                }
            }
            (total, dh, false)
        }
        ScalarFn::HiddenNorm { pos, .. } => {
            let h = last.row(pos);
            let n = tensor::norm(h);
            let mut dh = Matrix::zeros(len, d);
            if n == 0.0 {
                (0.0, dh, true)
            } else {
                for (o, &x) in dh.row_mut(pos).iter_mut().zip(h) {
                    *o = x / n;
                }
                (n, dh, false)
            }
        }
    };

    if !value.is_finite() {
        return Err(Error::numeric(format!("non-finite objective value {value}")));
    }

    let mut d_h = d_top;
    for l in (1..=top).rev() {
        let layer_grads = grads.as_mut().map(|g| &mut g.layers[l - 1]);
        d_h = layer_backward(
            &params.layers[l - 1],
            &trace.caches[l - 1],
            &trace.hidden[l - 1],
            &d_h,
            cfg.n_heads,
            layer_grads,
        );
    }
    if let Some(g) = grads.as_mut() {
        for (i, &t) in tokens.iter().enumerate() {
            accumulate(g.tok_emb.row_mut(t as usize), d_h.row(i));
            accumulate(g.pos_emb.row_mut(i), d_h.row(i));
        }
    }
    Ok(Gradients {
        value,
        input: d_h,
        params: grads,
        degenerate,
    })
}

/// Gradient of `scalar` with respect to the layer-0 embedded input.
pub fn input_gradient(
    params: &Parameters,
    tokens: &[u32],
    scalar: ScalarFn<'_>,
    offset: Option<&Matrix>,
) -> Result<Gradients> {
    value_and_grad(params, tokens, scalar, offset, false)
}
