//! Graph Laplacian `L = D − A`, its largest eigenvalue, and the
//! `(n/4)·λ_max` max-cut bound checked against exhaustive enumeration.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAX_BRUTE_FORCE_NODES: usize = 16;

const SYM_TOL: f64 = 1e-12;

fn check_adjacency(a: &Matrix) -> Result<()> {
    let (n, m) = a.shape();
    if n != m || n == 0 {
        return Err(Error::input(format!("adjacency must be non-empty square, got {n}x{m}")));
    }
    let scale = a.as_slice().iter().fold(1.0f64, |s, x| s.max(x.abs()));
    for i in 0..n {
        if a.get(i, i) != 0.0 {
            return Err(Error::input(format!("adjacency diagonal entry {i} is {}", a.get(i, i))));
        }
        for j in 0..n {
            let x = a.get(i, j);
            if !x.is_finite() || x < 0.0 {
                return Err(Error::input(format!("adjacency entry ({i},{j}) = {x} must be finite and non-negative")));
            }
            if (x - a.get(j, i)).abs() > SYM_TOL * scale {
                return Err(Error::input(format!("adjacency is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// `D − A` with `D_ii = Σ_j A_ij`.
pub fn laplacian(a: &Matrix) -> Result<Matrix> {
    check_adjacency(a)?;
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        let deg: f64 = a.row(i).iter().sum();
        for j in 0..n {
            l.set(i, j, if i == j { deg } else { -a.get(i, j) });
        }
    }
    Ok(l)
}

/// All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi
/// rotations swept until the off-diagonal mass is negligible.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    assert_eq!(n, m.cols(), "eigenvalues need a square matrix");
    let mut a: Vec<f64> = m.as_slice().to_vec();
    let idx = |i: usize, j: usize| i * n + j;
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[idx(i, j)] * a[idx(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[idx(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest Laplacian eigenvalue of a symmetric non-negative adjacency.
pub fn laplacian_lambda_max(a: &Matrix) -> Result<f64> {
    let l = laplacian(a)?;
    Ok(*symmetric_eigenvalues(&l).last().expect("non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxCutCheck {
    pub lambda_max: f64,
    /// `(n/4)·λ_max`.
    pub bound: f64,
    pub max_cut: f64,
    pub holds: bool,
}

/// Compares the spectral bound with the exact max cut over all `2^(n−1)`
/// bipartitions (node 0 pinned to one side).
pub fn maxcut_bound_check(a: &Matrix) -> Result<MaxCutCheck> {
    let n = a.rows();
    if n > MAX_BRUTE_FORCE_NODES {
        return Err(Error::input(format!(
            "brute-force max cut refused for {n} > {MAX_BRUTE_FORCE_NODES} nodes"
        )));
    }
    let lambda_max = laplacian_lambda_max(a)?;
    let mut max_cut: f64 = 0.0;
    for mask in 0u32..(1u32 << (n - 1)) {
        let side = |v: usize| v > 0 && (mask >> (v - 1)) & 1 == 1;
        let mut cut = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                if side(i) != side(j) {
                    cut += a.get(i, j);
                }
            }
        }
        max_cut = max_cut.max(cut);
    }
    let bound = n as f64 / 4.0 * lambda_max;
    Ok(MaxCutCheck {
        lambda_max,
        bound,
        max_cut,
        holds: bound >= max_cut - 1e-9 * max_cut.abs().max(1.0),
    })
}
