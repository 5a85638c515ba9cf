//! Rank-r truncation of hidden-state matrices and substitution accuracy.

use nalgebra::DMatrix;

use crate::csvout::{fmt_f64, Table};
use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{forward, Head, Parameters, Substitution};
use crate::tensor::{self, Matrix};

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Best rank-`r` approximation `Σ_{k<r} u_k σ_k v_kᵀ`. For `r ≥ min(rows,
/// cols)` the input is returned unchanged.
pub fn svd_truncate(m: &Matrix, r: usize) -> Result<Matrix> {
    if r < 1 {
        return Err(Error::config("SVD rank must be at least 1"));
    }
    let (rows, cols) = m.shape();
    if r >= rows.min(cols) {
        return Ok(m.clone());
    }
    let svd = to_na(m).svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut out = Matrix::zeros(rows, cols);
    for &k in order.iter().take(r) {
        let s = svd.singular_values[k];
        for i in 0..rows {
            let us = u[(i, k)] * s;
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o += us * vt[(k, j)];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdRow {
    pub layer: usize,
    pub rank: usize,
    pub accuracy: f64,
    /// Forward passes that carried a substitution for this cell.
    pub substituted_forwards: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdReport {
    pub baseline: f64,
    pub rows: Vec<SvdRow>,
}

impl SvdReport {
    /// `(model_tag, layer, rank, accuracy)`; the unsubstituted baseline is
    /// written with `layer = -1, rank = 0`.
    pub fn to_table(&self, model_tag: &str) -> Table {
        let mut t = Table::new(&["model_tag", "layer", "rank", "accuracy"]);
        t.push(vec![model_tag.into(), "-1".into(), "0".into(), fmt_f64(self.baseline)]);
        for r in &self.rows {
            t.push(vec![model_tag.into(), r.layer.to_string(), r.rank.to_string(), fmt_f64(r.accuracy)]);
        }
        t
    }

    pub fn get(&self, layer: usize, rank: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.layer == layer && r.rank == rank).map(|r| r.accuracy)
    }
}

/// Dev accuracy when exactly one layer `l ∈ layers` is replaced by its
/// rank-`r` truncation, for every `(l, r)`, plus the unsubstituted baseline.
pub fn svd_substitution_accuracy(
    params: &Parameters,
    dev: &[LabeledExample],
    layers: &[usize],
    ranks: &[usize],
    exec: Exec,
) -> Result<SvdReport> {
    if dev.is_empty() {
        return Err(Error::config("empty dev set"));
    }
    let n_layers = params.config.n_layers;
    if let Some(&l) = layers.iter().find(|&&l| l < 1 || l > n_layers) {
        return Err(Error::config(format!("substitution layer {l} outside 1..={n_layers}")));
    }
    if ranks.contains(&0) {
        return Err(Error::config("SVD rank must be at least 1"));
    }
    struct PerExample {
        base_hit: bool,
        // (hit, substituted) per (layer, rank) cell in row-major order
        cells: Vec<(bool, bool)>,
    }
    let per = exec.map(dev, |_, ex| -> Result<PerExample> {
        let base = forward(params, &ex.ids, Head::Classify, None, None)?;
        let base_hit = tensor::argmax(base.logits.row(0)) == ex.label;
        let mut cells = Vec::with_capacity(layers.len() * ranks.len());
        for &l in layers {
            let h = base.hidden.layer(l);
            for &r in ranks {
                let rep = svd_truncate(h, r)?;
                let out = forward(
                    params,
                    &ex.ids,
                    Head::Classify,
                    None,
                    Some(Substitution {
                        layer: l,
                        replacement: &rep,
                    }),
                )?;
                cells.push((tensor::argmax(out.logits.row(0)) == ex.label, out.substituted_at == Some(l)));
            }
        }
        Ok(PerExample { base_hit, cells })
    });
    let per: Vec<PerExample> = per.into_iter().collect::<Result<_>>()?;
    let n = dev.len() as f64;
    let baseline = per.iter().filter(|p| p.base_hit).count() as f64 / n;
    let mut rows = Vec::new();
    for (li, &layer) in layers.iter().enumerate() {
        for (ri, &rank) in ranks.iter().enumerate() {
            let k = li * ranks.len() + ri;
            rows.push(SvdRow {
                layer,
                rank,
                accuracy: per.iter().filter(|p| p.cells[k].0).count() as f64 / n,
                substituted_forwards: per.iter().filter(|p| p.cells[k].1).count(),
            });
        }
    }
    Ok(SvdReport { baseline, rows })
}
