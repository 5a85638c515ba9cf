//! Reference implementations used as test oracles. None of this code calls
//! into the crate's forward pass, graph algorithms or eigen-solver.

#![allow(dead_code)]

pub mod criteria;

use synprobe::model::{ModelConfig, Parameters};
use synprobe::Matrix;

pub fn small_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 12,
        vocab_size: 14,
        max_len: 10,
        n_classes: 3,
    }
}

/// Wider init than training uses, so every nonlinearity is exercised.
pub fn small_params(seed: u64) -> Parameters {
    let mut p = Parameters::init_with_std(small_config(), seed, 0.3).unwrap();
    // non-trivial biases and gains
    for (k, (name, t)) in p.named_mut().into_iter().enumerate() {
        if name.ends_with("gamma") {
            t.iter_mut().enumerate().for_each(|(i, x)| *x = 1.0 + 0.1 * ((i + k) % 5) as f64);
        } else if name.contains(".b") || name.ends_with("beta") || name.ends_with("_b") {
            t.iter_mut().enumerate().for_each(|(i, x)| *x = 0.05 * (((i * 7 + k) % 9) as f64 - 4.0));
        }
    }
    p
}

type Mat = Vec<Vec<f64>>;

fn to_vv(m: &Matrix) -> Mat {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn lin(x: &Mat, w: &Matrix, b: &[f64]) -> Mat {
    let w = to_vv(w);
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| b[j] + row.iter().enumerate().map(|(k, v)| v * w[k][j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| g[j] * (v - mu) / (var + 1e-5).sqrt() + b[j])
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Hidden states `h⁰ … h^L`, written out loop by loop.
pub fn oracle_hidden(p: &Parameters, toks: &[u32], offset: Option<&Matrix>) -> Vec<Mat> {
    let cfg = p.config;
    let d = cfg.d_model;
    let dh = d / cfg.n_heads;
    let mut h: Mat = toks
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            (0..d)
                .map(|j| {
                    p.tok_emb.get(t as usize, j)
                        + p.pos_emb.get(i, j)
                        + offset.map_or(0.0, |o| o.get(i, j))
                })
                .collect()
        })
        .collect();
    let mut out = vec![h.clone()];
    for lp in &p.layers {
        let q = lin(&h, &lp.wq, &lp.bq);
        let k = lin(&h, &lp.wk, &lp.bk);
        let v = lin(&h, &lp.wv, &lp.bv);
        let n = h.len();
        let mut ctx = vec![vec![0.0; d]; n];
        for head in 0..cfg.n_heads {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..n {
                let s: Vec<f64> = (0..n)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    ctx[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
                }
            }
        }
        let a = lin(&ctx, &lp.wo, &lp.bo);
        let u = layer_norm(&add(&h, &a), &lp.ln1_gamma, &lp.ln1_beta);
        let z: Mat = lin(&u, &lp.w1, &lp.b1)
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let f = lin(&z, &lp.w2, &lp.b2);
        h = layer_norm(&add(&u, &f), &lp.ln2_gamma, &lp.ln2_beta);
        out.push(h.clone());
    }
    out
}

fn ce(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

pub fn oracle_class_logits(p: &Parameters, toks: &[u32], offset: Option<&Matrix>) -> Vec<f64> {
    let hs = oracle_hidden(p, toks, offset);
    let cls = &hs.last().unwrap()[0];
    lin(&vec![cls.clone()], &p.cls_w, &p.cls_b).remove(0)
}

pub fn oracle_mlm_logits(p: &Parameters, toks: &[u32], pos: usize) -> Vec<f64> {
    let hs = oracle_hidden(p, toks, None);
    lin(&vec![hs.last().unwrap()[pos].clone()], &p.mlm_w, &p.mlm_b).remove(0)
}

pub fn oracle_class_loss(p: &Parameters, toks: &[u32], label: usize, offset: Option<&Matrix>) -> f64 {
    ce(&oracle_class_logits(p, toks, offset), label)
}

pub fn oracle_mlm_loss(p: &Parameters, toks: &[u32], targets: &[(usize, u32)]) -> f64 {
    targets
        .iter()
        .map(|&(pos, t)| ce(&oracle_mlm_logits(p, toks, pos), t as usize))
        .sum()
}

pub fn oracle_hidden_norm(p: &Parameters, toks: &[u32], layer: usize, pos: usize, offset: Option<&Matrix>) -> f64 {
    oracle_hidden(p, toks, offset)[layer][pos].iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Best arborescence weight rooted at `root` by enumerating every parent
/// assignment. `w[dep][head]` is the weight of edge head → dep.
pub fn brute_force_arborescence(w: &[Vec<f64>], root: usize) -> f64 {
    let n = w.len();
    let others: Vec<usize> = (0..n).filter(|&v| v != root).collect();
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; others.len()];
    loop {
        let mut parent = vec![usize::MAX; n];
        let mut ok = true;
        for (k, &v) in others.iter().enumerate() {
            let cands: Vec<usize> = (0..n).filter(|&u| u != v).collect();
            parent[v] = cands[choice[k]];
        }
        for &v in &others {
            let mut x = v;
            let mut steps = 0;
            while x != root {
                x = parent[x];
                steps += 1;
                if steps > n {
                    ok = false;
                    break;
                }
            }
            if !ok {
                break;
            }
        }
        if ok {
            let total: f64 = others.iter().map(|&v| w[v][parent[v]]).sum();
            best = best.max(total);
        }
        // odometer over (n−1)^(n−1) assignments
        let mut k = 0;
        loop {
            if k == choice.len() {
                return best;
            }
            choice[k] += 1;
            if choice[k] < n - 1 {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Exhaustive max cut of a symmetric weight matrix.
#[allow(clippy::needless_range_loop)]
pub fn brute_force_max_cut(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut best: f64 = 0.0;
    for mask in 0u32..(1 << n) {
        let mut cut = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                if (mask >> i) & 1 != (mask >> j) & 1 {
                    cut += a[i][j];
                }
            }
        }
        best = best.max(cut);
    }
    best
}

/// Largest Laplacian eigenvalue via nalgebra's symmetric eigensolver.
pub fn dense_lambda_max(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let l = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            a[i].iter().sum::<f64>()
        } else {
            -a[i][j]
        }
    });
    nalgebra::SymmetricEigen::new(l).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

#[allow(clippy::needless_range_loop)]
pub fn random_symmetric<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let w = if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() };
            a[i][j] = w;
            a[j][i] = w;
        }
    }
    a
}

pub fn to_matrix(a: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(a)
}

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}
