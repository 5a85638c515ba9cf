//! Chu–Liu/Edmonds maximum spanning arborescence (contract-and-recurse form).
//!
//! Ties are broken toward the smallest node index whenever a best edge is
//! picked, so the output is a deterministic function of the weights.

use serde::{Deserialize, Serialize};

use super::WeightedDigraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arborescence {
    pub root: usize,
    /// `parent[v]` is `None` only for the root.
    pub parent: Vec<Option<usize>>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeMetrics {
    /// Maximum outdegree.
    pub branching: usize,
    /// Edges on the longest root-to-leaf path.
    pub depth: usize,
}

impl Arborescence {
    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.n()];
        for (v, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                ch[*p].push(v);
            }
        }
        ch
    }

    /// Distance from the root for every node.
    pub fn depths(&self) -> Vec<usize> {
        let mut d = vec![0; self.n()];
        for (v, dv) in d.iter_mut().enumerate() {
            let mut cur = v;
            while let Some(p) = self.parent[cur] {
                *dv += 1;
                cur = p;
            }
        }
        d
    }

    /// Spans, one parent per non-root node, no cycles.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.n();
        if self.root >= n {
            return Err(format!("root {} out of range", self.root));
        }
        for (v, p) in self.parent.iter().enumerate() {
            match (v == self.root, p) {
                (true, Some(_)) => return Err("root has a parent".into()),
                (false, None) => return Err(format!("node {v} has no parent")),
                (false, Some(p)) if *p >= n || *p == v => return Err(format!("node {v} has invalid parent {p}")),
                _ => {}
            }
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(format!("cycle through node {start}"));
                }
            }
            if cur != self.root {
                return Err(format!("node {start} does not reach the root"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tree serializes")
    }
}

pub fn tree_metrics(tree: &Arborescence) -> TreeMetrics {
    TreeMetrics {
        branching: tree.children().iter().map(Vec::len).max().unwrap_or(0),
        depth: tree.depths().into_iter().max().unwrap_or(0),
    }
}

/// Weighted edge list as a dense matrix: `w[dep][head]`, `None` = no edge.
type Dense = Vec<Vec<Option<f64>>>;

fn best_in(w: &Dense, v: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (u, e) in w[v].iter().enumerate() {
        if u == v {
            continue;
        }
        if let Some(x) = e {
            match best {
                Some(b) if w[v][b].unwrap() >= *x => {}
                _ => best = Some(u),
            }
        }
    }
    best
}

fn find_cycle(parent: &[Option<usize>]) -> Option<Vec<usize>> {
    let n = parent.len();
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; n];
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = Some(start);
        while let Some(v) = cur {
            if state[v] == 2 {
                break;
            }
            if state[v] == 1 {
                let pos = path.iter().position(|&x| x == v).unwrap();
                let mut cyc = path[pos..].to_vec();
                cyc.sort_unstable();
                return Some(cyc);
            }
            state[v] = 1;
            path.push(v);
            cur = parent[v];
        }
        for v in path {
            state[v] = 2;
        }
    }
    None
}

fn solve(w: &Dense, root: usize) -> Result<Vec<Option<usize>>> {
    let n = w.len();
    let mut parent = vec![None; n];
    for (v, slot) in parent.iter_mut().enumerate() {
        if v == root {
            continue;
        }
        *slot = Some(best_in(w, v).ok_or_else(|| {
            Error::Structural(format!("node {v} is unreachable from root {root}"))
        })?);
    }
    let Some(cycle) = find_cycle(&parent) else {
        return Ok(parent);
    };
    let in_cycle: Vec<bool> = (0..n).map(|v| cycle.contains(&v)).collect();
    // contracted numbering: non-cycle nodes keep relative order, then the supernode
    let mut map = vec![0usize; n];
    let mut back = Vec::new();
    for v in 0..n {
        if !in_cycle[v] {
            map[v] = back.len();
            back.push(v);
        }
    }
    let c = back.len();
    for &v in &cycle {
        map[v] = c;
    }
    let m = c + 1;
    let mut cw: Dense = vec![vec![None; m]; m];
    // entering the cycle: which cycle node the edge lands on, per outside head
    let mut enter_at: Vec<Option<usize>> = vec![None; n];
    // leaving the cycle: which cycle node is the head, per outside dependent
    let mut leave_from: Vec<Option<usize>> = vec![None; n];
    for v in 0..n {
        for u in 0..n {
            if u == v {
                continue;
            }
            let Some(x) = w[v][u] else { continue };
            match (in_cycle[u], in_cycle[v]) {
                (true, true) => {}
                (false, false) => cw[map[v]][map[u]] = Some(x),
                (false, true) => {
                    let adj = x - w[v][parent[v].unwrap()].unwrap();
                    // cycle nodes are visited in ascending order; strict > keeps the smallest on ties
                    if cw[c][map[u]].is_none_or(|cur| adj > cur) {
                        cw[c][map[u]] = Some(adj);
                        enter_at[u] = Some(v);
                    }
                }
                (true, false) => {
                    if cw[map[v]][c].is_none_or(|cur| x > cur) {
                        cw[map[v]][c] = Some(x);
                        leave_from[v] = Some(u);
                    }
                }
            }
        }
    }
    let sub = solve(&cw, map[root])?;
    let mut out = parent.clone();
    for (cv, p) in sub.iter().enumerate() {
        let Some(p) = *p else { continue };
        if cv == c {
            let head = back[p];
            let v = enter_at[head].expect("entering edge recorded");
            out[v] = Some(head);
        } else {
            let v = back[cv];
            out[v] = Some(if p == c { leave_from[v].expect("leaving edge recorded") } else { back[p] });
        }
    }
    Ok(out)
}

/// Maximum-weight spanning arborescence rooted at `root`.
pub fn max_arborescence(graph: &WeightedDigraph, root: usize) -> Result<Arborescence> {
    let n = graph.n();
    if root >= n {
        return Err(Error::input(format!("root {root} out of range for {n} nodes")));
    }
    let w: Dense = (0..n)
        .map(|v| {
            (0..n)
                .map(|u| (u != v && v != root).then(|| graph.weight(u, v)))
                .collect()
        })
        .collect();
    let parent = solve(&w, root)?;
    let weight = parent
        .iter()
        .enumerate()
        .filter_map(|(v, p)| p.map(|p| graph.weight(p, v)))
        .sum();
    Ok(Arborescence { root, parent, weight })
}
