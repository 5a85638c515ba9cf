//! Influence graphs `S[i][j] = ‖∂‖hˡᵢ‖/∂x_j‖` over content tokens, the
//! dependency trees extracted from them, and their Laplacian spectra.

use serde::Serialize;

use crate::csvout::{fmt_f64, Table};
use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graphalg::{
    laplacian_lambda_max, max_arborescence, tree_metrics, Arborescence, TreeMetrics, WeightedDigraph,
};
use crate::model::{input_gradient, Parameters, ScalarFn, CLS, PAD, SEP};
use crate::tensor::{self, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceGraph {
    pub layer: usize,
    /// Sequence positions of the nodes (content tokens only).
    pub positions: Vec<usize>,
    pub tokens: Vec<u32>,
    /// `scores[i][j]`: influence of node `j` on node `i`; zero diagonal.
    pub scores: Matrix,
    pub normalized: bool,
    /// Nodes whose hidden vector had zero norm (their rows are zero).
    pub degenerate_rows: usize,
}

impl InfluenceGraph {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Rescales every row to sum to 1. A zero row becomes uniform over the
    /// other nodes.
    pub fn normalize(&self) -> InfluenceGraph {
        let n = self.n();
        let mut s = self.scores.clone();
        for i in 0..n {
            let total: f64 = s.row(i).iter().sum();
            for (j, x) in s.row_mut(i).iter_mut().enumerate() {
                *x = if i == j {
                    0.0
                } else if total > 0.0 {
                    *x / total
                } else {
                    1.0 / (n - 1) as f64
                };
            }
        }
        InfluenceGraph {
            scores: s,
            normalized: true,
            ..self.clone()
        }
    }

    /// `S + Sᵀ`.
    pub fn symmetrized(&self) -> Matrix {
        let mut a = self.scores.transpose();
        a.add_assign(&self.scores);
        a
    }
}

fn content_positions(ids: &[u32]) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(_, &t)| !matches!(t, CLS | SEP | PAD))
        .map(|(i, _)| i)
        .collect()
}

/// Raw influence scores at `layer` (0 = embedding layer).
pub fn influence_graph(params: &Parameters, ids: &[u32], layer: usize) -> Result<InfluenceGraph> {
    if layer > params.config.n_layers {
        return Err(Error::config(format!("layer {layer} > n_layers {}", params.config.n_layers)));
    }
    let positions = content_positions(ids);
    let n = positions.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("influence graph needs ≥ 2 content tokens, got {n}")));
    }
    let mut scores = Matrix::zeros(n, n);
    let mut degenerate_rows = 0;
    for (i, &pi) in positions.iter().enumerate() {
        let g = input_gradient(params, ids, ScalarFn::HiddenNorm { layer, pos: pi }, None)?;
        degenerate_rows += g.degenerate as usize;
        for (j, &pj) in positions.iter().enumerate() {
            if i != j {
                scores.set(i, j, tensor::norm(g.input.row(pj)));
            }
        }
    }
    Ok(InfluenceGraph {
        layer,
        tokens: positions.iter().map(|&p| ids[p]).collect(),
        positions,
        scores,
        normalized: false,
        degenerate_rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependencyTree {
    pub tree: Arborescence,
    pub metrics: TreeMetrics,
}

/// Root = node with the largest total outgoing influence (column sum of the
/// raw scores, ties to the smallest index); then optionally normalize rows
/// and take the maximum arborescence.
pub fn extract_dependency(graph: &InfluenceGraph, normalize: bool) -> Result<DependencyTree> {
    if graph.n() < 2 {
        return Err(Error::Degenerate("dependency extraction needs ≥ 2 nodes".into()));
    }
    let root = tensor::argmax(&graph.scores.col_sums());
    let g = if normalize && !graph.normalized {
        graph.normalize()
    } else {
        graph.clone()
    };
    let tree = max_arborescence(&WeightedDigraph::new(g.scores)?, root)?;
    let metrics = tree_metrics(&tree);
    Ok(DependencyTree { tree, metrics })
}

/// Per-example tree for qualitative inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeDump {
    pub example: usize,
    pub layer: usize,
    pub tokens: Vec<String>,
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub branching: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeProfile {
    /// `(layer, mean branching, mean depth, examples used)`.
    pub layers: Vec<(usize, f64, f64, usize)>,
    pub skipped: usize,
    pub dumps: Vec<TreeDump>,
}

impl TreeProfile {
    pub fn to_table(&self, model_tag: &str) -> Table {
        let mut t = Table::new(&["model_tag", "layer", "mean_branching", "mean_depth"]);
        for &(l, b, d, _) in &self.layers {
            t.push(vec![model_tag.into(), l.to_string(), fmt_f64(b), fmt_f64(d)]);
        }
        t
    }

    pub fn mean_depth(&self, layer: usize) -> Option<f64> {
        self.layers.iter().find(|r| r.0 == layer).map(|r| r.2)
    }
}

fn for_examples<T: Send>(
    params: &Parameters,
    dev: &[LabeledExample],
    layers: &[usize],
    exec: Exec,
    f: impl Fn(&InfluenceGraph) -> Result<T> + Sync,
) -> Result<Vec<Vec<Option<T>>>> {
    let per = exec.map(dev, |_, ex| -> Result<Vec<Option<T>>> {
        layers
            .iter()
            .map(|&l| match influence_graph(params, &ex.ids, l) {
                Ok(g) => f(&g).map(Some),
                Err(Error::Degenerate(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    });
    per.into_iter().collect()
}

/// Mean branching factor and depth of the extracted trees per layer.
pub fn tree_profile(
    params: &Parameters,
    dev: &[LabeledExample],
    layers: &[usize],
    normalize: bool,
    token_text: &dyn Fn(u32) -> String,
    exec: Exec,
) -> Result<TreeProfile> {
    let per = for_examples(params, dev, layers, exec, |g| {
        let t = extract_dependency(g, normalize)?;
        Ok((t, g.tokens.clone()))
    })?;
    let mut out = TreeProfile {
        layers: Vec::new(),
        skipped: 0,
        dumps: Vec::new(),
    };
    for (li, &layer) in layers.iter().enumerate() {
        let (mut b, mut d, mut k) = (0.0, 0.0, 0usize);
        for (ei, ex) in per.iter().enumerate() {
            match &ex[li] {
                Some((t, toks)) => {
                    b += t.metrics.branching as f64;
                    d += t.metrics.depth as f64;
                    k += 1;
                    out.dumps.push(TreeDump {
                        example: ei,
                        layer,
                        tokens: toks.iter().map(|&id| token_text(id)).collect(),
                        root: t.tree.root,
                        parent: t.tree.parent.clone(),
                        branching: t.metrics.branching,
                        depth: t.metrics.depth,
                    });
                }
                None => out.skipped += 1,
            }
        }
        let denom = k.max(1) as f64;
        out.layers.push((layer, b / denom, d / denom, k));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    /// `(layer, mean λ_max, examples used)`.
    pub layers: Vec<(usize, f64, usize)>,
    /// `(example, layer, n, λ_max, (n/4)·λ_max)`.
    pub per_example: Vec<(usize, usize, usize, f64, f64)>,
    pub skipped: usize,
}

impl SpectralProfile {
    pub fn to_table(&self, model_tag: &str) -> Table {
        let mut t = Table::new(&["model_tag", "layer", "mean_lambda_max"]);
        for &(l, m, _) in &self.layers {
            t.push(vec![model_tag.into(), l.to_string(), fmt_f64(m)]);
        }
        t
    }

    pub fn per_example_table(&self, model_tag: &str) -> Table {
        let mut t = Table::new(&["model_tag", "example", "layer", "n_nodes", "lambda_max", "maxcut_bound"]);
        for &(e, l, n, lam, bound) in &self.per_example {
            t.push(vec![
                model_tag.into(),
                e.to_string(),
                l.to_string(),
                n.to_string(),
                fmt_f64(lam),
                fmt_f64(bound),
            ]);
        }
        t
    }

    pub fn mean(&self, layer: usize) -> Option<f64> {
        self.layers.iter().find(|r| r.0 == layer).map(|r| r.1)
    }
}

/// Mean λ_max of `L = D − (S + Sᵀ)` over dev examples, per layer, using the
/// row-normalized influence graph.
pub fn spectral_profile(params: &Parameters, dev: &[LabeledExample], layers: &[usize], exec: Exec) -> Result<SpectralProfile> {
    let per = for_examples(params, dev, layers, exec, |g| {
        let a = g.normalize().symmetrized();
        Ok((g.n(), laplacian_lambda_max(&a)?))
    })?;
    let mut out = SpectralProfile {
        layers: Vec::new(),
        per_example: Vec::new(),
        skipped: 0,
    };
    for (li, &layer) in layers.iter().enumerate() {
        let (mut sum, mut k) = (0.0, 0usize);
        for (ei, ex) in per.iter().enumerate() {
            match ex[li] {
                Some((n, lam)) => {
                    sum += lam;
                    k += 1;
                    out.per_example.push((ei, layer, n, lam, n as f64 / 4.0 * lam));
                }
                None => out.skipped += 1,
            }
        }
        out.layers.push((layer, sum / k.max(1) as f64, k));
    }
    Ok(out)
}
