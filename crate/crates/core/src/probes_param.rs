//! Trainable probes over frozen hidden states: part-of-speech labeling
//! (POSL), dependency-arc labeling (DAL) and head selection (PARSE).
//!
//! A probe is a representation map followed by a task head. The map is
//! either linear or `ReLU(U Vᵀ x)` with `U, V ∈ R^{d_in×r}`. Classification
//! heads are affine; the PARSE head scores `score(i ← j) = f(h_i)ᵀ g(h_j)`
//! with two separately parameterized maps `f, g` and picks the argmax over
//! candidate heads, the CLS position standing in for the root. For PARSE a
//! linear map is a full `d×d` matrix (an identity map would leave nothing to
//! train).
//!
//! All parameters live in one flat vector so Adam and the parameter count
//! are trivial.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::csvout::{fmt_f64, Table};
use crate::data::{encode_words, DepSentence, DepTreebank, Vocab};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{hidden_states, Parameters};
use crate::rng;
use crate::tensor::{self, Matrix};
use crate::train::adam::adam_update;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProbeTask {
    Posl,
    Dal,
    Parse,
}

impl ProbeTask {
    pub fn name(self) -> &'static str {
        match self {
            ProbeTask::Posl => "POSL",
            ProbeTask::Dal => "DAL",
            ProbeTask::Parse => "PARSE",
        }
    }

    pub fn metric(self) -> &'static str {
        match self {
            ProbeTask::Parse => "uas",
            _ => "accuracy",
        }
    }
}

impl std::str::FromStr for ProbeTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "POSL" => Ok(ProbeTask::Posl),
            "DAL" => Ok(ProbeTask::Dal),
            "PARSE" => Ok(ProbeTask::Parse),
            _ => Err(Error::config(format!("unknown probe task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Linear,
    LowrankMlp,
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProbeKind::Linear),
            "lowrank-mlp" | "mlp" => Ok(ProbeKind::LowrankMlp),
            _ => Err(Error::config(format!("unknown probe kind {s:?}"))),
        }
    }
}

fn default_dropout() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub task: ProbeTask,
    pub kind: ProbeKind,
    /// Only used by `lowrank-mlp`.
    #[serde(default = "one")]
    pub rank: usize,
    pub layer: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn one() -> usize {
    1
}

impl ProbeConfig {
    pub fn linear(task: ProbeTask, layer: usize) -> Self {
        ProbeConfig {
            task,
            kind: ProbeKind::Linear,
            rank: 1,
            layer,
            dropout: 0.3,
        }
    }

    pub fn lowrank(task: ProbeTask, layer: usize, rank: usize) -> Self {
        ProbeConfig {
            kind: ProbeKind::LowrankMlp,
            rank,
            ..ProbeConfig::linear(task, layer)
        }
    }

    pub fn validate(&self, d_model: usize, n_layers: usize) -> Result<()> {
        if self.kind == ProbeKind::LowrankMlp && !(1..=d_model).contains(&self.rank) {
            return Err(Error::config(format!("rank {} outside 1..={d_model}", self.rank)));
        }
        if self.layer > n_layers {
            return Err(Error::config(format!("probe layer {} > n_layers {n_layers}", self.layer)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Sentences per update.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        ProbeTrainConfig {
            epochs: 20,
            learning_rate: 1e-2,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Shapes and offsets of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    kind: MapKind,
    d_in: usize,
    rank: usize,
    n_maps: usize,
    n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MapKind {
    Identity,
    Full,
    LowRank,
}

impl Layout {
    fn new(cfg: &ProbeConfig, d: usize, n_classes: usize) -> Layout {
        let (d_in, n_maps, n_classes) = match cfg.task {
            ProbeTask::Posl => (d, 1, n_classes),
            ProbeTask::Dal => (2 * d, 1, n_classes),
            ProbeTask::Parse => (d, 2, 0),
        };
        let kind = match (cfg.kind, cfg.task) {
            (ProbeKind::LowrankMlp, _) => MapKind::LowRank,
            (ProbeKind::Linear, ProbeTask::Parse) => MapKind::Full,
            (ProbeKind::Linear, _) => MapKind::Identity,
        };
        Layout {
            kind,
            d_in,
            rank: cfg.rank,
            n_maps,
            n_classes,
        }
    }

    fn map_len(&self) -> usize {
        match self.kind {
            MapKind::Identity => 0,
            MapKind::Full => self.d_in * self.d_in,
            MapKind::LowRank => 2 * self.d_in * self.rank,
        }
    }

    fn map_range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.map_len()..(k + 1) * self.map_len()
    }

    fn head_w(&self) -> std::ops::Range<usize> {
        let s = self.n_maps * self.map_len();
        s..s + self.n_classes * self.d_in
    }

    fn head_b(&self) -> std::ops::Range<usize> {
        let s = self.head_w().end;
        s..s + self.n_classes
    }

    fn total(&self) -> usize {
        self.head_b().end
    }
}

/// Exact parameter count for a probe on `d_model`-wide states with
/// `n_classes` output classes (ignored for PARSE).
pub fn probe_parameter_count(cfg: &ProbeConfig, d_model: usize, n_classes: usize) -> usize {
    Layout::new(cfg, d_model, n_classes).total()
}

struct MapCache {
    x: Vec<f64>,
    z: Vec<f64>,
    pre: Vec<f64>,
    out_mask: Option<Vec<f64>>,
}

fn dropout_mask<R: rand::Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

fn map_forward<R: rand::Rng + ?Sized>(
    lay: &Layout,
    w: &[f64],
    x: &[f64],
    dropout: Option<(f64, &mut R)>,
) -> (Vec<f64>, MapCache) {
    let d = lay.d_in;
    let (x, rng, p) = match dropout {
        Some((p, rng)) if p > 0.0 => {
            let m = dropout_mask(d, p, rng);
            (x.iter().zip(&m).map(|(a, b)| a * b).collect::<Vec<_>>(), Some(rng), p)
        }
        _ => (x.to_vec(), None, 0.0),
    };
    match lay.kind {
        MapKind::Identity => (
            x.clone(),
            MapCache {
                x,
                z: vec![],
                pre: vec![],
                out_mask: None,
            },
        ),
        MapKind::Full => {
            let y: Vec<f64> = (0..d).map(|i| tensor::dot(&w[i * d..(i + 1) * d], &x)).collect();
            (
                y,
                MapCache {
                    x,
                    z: vec![],
                    pre: vec![],
                    out_mask: None,
                },
            )
        }
        MapKind::LowRank => {
            let r = lay.rank;
            let (u, v) = w.split_at(d * r);
            // z = Vᵀ x, pre = U z; U and V are d×r row-major
            let mut z = vec![0.0; r];
            for (i, &xi) in x.iter().enumerate() {
                for k in 0..r {
                    z[k] += v[i * r + k] * xi;
                }
            }
            let pre: Vec<f64> = (0..d).map(|i| tensor::dot(&u[i * r..(i + 1) * r], &z)).collect();
            let mut y: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
            let out_mask = rng.map(|rng| dropout_mask(d, p, rng));
            if let Some(m) = &out_mask {
                y.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
            }
            (y, MapCache { x, z, pre, out_mask })
        }
    }
}

fn map_backward(lay: &Layout, w: &[f64], c: &MapCache, dy: &[f64], gw: &mut [f64]) {
    let d = lay.d_in;
    match lay.kind {
        MapKind::Identity => {}
        MapKind::Full => {
            for i in 0..d {
                for j in 0..d {
                    gw[i * d + j] += dy[i] * c.x[j];
                }
            }
        }
        MapKind::LowRank => {
            let r = lay.rank;
            let (u, _) = w.split_at(d * r);
            let (gu, gv) = gw.split_at_mut(d * r);
            let dpre: Vec<f64> = (0..d)
                .map(|i| {
                    let m = c.out_mask.as_ref().map_or(1.0, |m| m[i]);
                    if c.pre[i] > 0.0 {
                        dy[i] * m
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut dz = vec![0.0; r];
            for i in 0..d {
                for k in 0..r {
                    gu[i * r + k] += dpre[i] * c.z[k];
                    dz[k] += u[i * r + k] * dpre[i];
                }
            }
            for (i, &xi) in c.x.iter().enumerate() {
                for k in 0..r {
                    gv[i * r + k] += xi * dz[k];
                }
            }
        }
    }
}

/// Cached encoder features for one sentence: row 0 is CLS, row `k` is
/// word `k` (1-based, matching CoNLL-U ids).
#[derive(Debug, Clone)]
pub struct SentenceFeatures {
    pub states: Matrix,
    pub heads: Vec<usize>,
    pub upos: Vec<String>,
    pub deprels: Vec<String>,
}

impl SentenceFeatures {
    pub fn n_words(&self) -> usize {
        self.heads.len()
    }
}

/// Runs the frozen encoder once per sentence and keeps layer `layer`.
/// Sentences that do not fit in `max_len` are dropped (count returned).
pub fn extract_features(
    params: &Parameters,
    bank: &DepTreebank,
    vocab: &Vocab,
    layer: usize,
    exec: Exec,
) -> Result<(Vec<SentenceFeatures>, usize)> {
    if layer > params.config.n_layers {
        return Err(Error::config(format!(
            "probe layer {layer} > encoder n_layers {}",
            params.config.n_layers
        )));
    }
    let max_words = params.config.max_len - 2;
    let fits: Vec<&DepSentence> = bank.sentences.iter().filter(|s| s.len() <= max_words).collect();
    let dropped = bank.len() - fits.len();
    let feats = exec.map(&fits, |_, s| -> Result<SentenceFeatures> {
        let ids = encode_words(&s.forms(), vocab, params.config.max_len).ids;
        let hs = hidden_states(params, &ids)?;
        let h = hs.layer(layer);
        let n = s.len();
        Ok(SentenceFeatures {
            states: Matrix::from_fn(n + 1, h.cols(), |i, j| h.get(i, j)),
            heads: s.heads(),
            upos: s.tokens.iter().map(|t| t.upos.clone()).collect(),
            deprels: s.tokens.iter().map(|t| t.deprel.clone()).collect(),
        })
    });
    Ok((feats.into_iter().collect::<Result<_>>()?, dropped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub config: ProbeConfig,
    pub d_model: usize,
    /// Class names for POSL/DAL (empty for PARSE).
    pub classes: Vec<String>,
    pub theta: Vec<f64>,
}

impl ProbeModel {
    fn layout(&self) -> Layout {
        Layout::new(&self.config, self.d_model, self.classes.len())
    }

    pub fn num_parameters(&self) -> usize {
        self.theta.len()
    }

    fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }
}

/// Per-sentence loss and gradient (gradient accumulated into `grad`).
/// Returns `(loss sum, number of predictions)`.
fn sentence_step<R: rand::Rng + ?Sized>(
    model: &ProbeModel,
    s: &SentenceFeatures,
    rng: Option<&mut R>,
    grad: Option<&mut [f64]>,
) -> (f64, usize, Vec<bool>) {
    let lay = model.layout();
    let th = &model.theta;
    let n = s.n_words();
    let p = model.config.dropout;
    let mut rng = rng;
    let mut grad = grad;
    let mut loss = 0.0;
    let mut correct = Vec::with_capacity(n);
    match model.config.task {
        ProbeTask::Posl | ProbeTask::Dal => {
            let w = &th[lay.head_w()];
            let b = &th[lay.head_b()];
            let c = lay.n_classes;
            for k in 1..=n {
                let x: Vec<f64> = match model.config.task {
                    ProbeTask::Posl => s.states.row(k).to_vec(),
                    _ => {
                        let mut v = s.states.row(k).to_vec();
                        v.extend_from_slice(s.states.row(s.heads[k - 1]));
                        v
                    }
                };
                let gold_name = match model.config.task {
                    ProbeTask::Posl => &s.upos[k - 1],
                    _ => &s.deprels[k - 1],
                };
                let gold = model.class_index(gold_name);
                let (y, cache) = map_forward(&lay, &th[lay.map_range(0)], &x, rng.as_deref_mut().map(|r| (p, r)));
                let logits: Vec<f64> = (0..c)
                    .map(|i| tensor::dot(&w[i * lay.d_in..(i + 1) * lay.d_in], &y) + b[i])
                    .collect();
                correct.push(gold == Some(tensor::argmax(&logits)));
                let Some(gold) = gold else { continue };
                let lse = tensor::log_sum_exp(&logits);
                loss += lse - logits[gold];
                if let Some(g) = grad.as_deref_mut() {
                    let dlog: Vec<f64> = logits
                        .iter()
                        .enumerate()
                        .map(|(i, z)| (z - lse).exp() - (i == gold) as usize as f64)
                        .collect();
                    let mut dy = vec![0.0; lay.d_in];
                    {
                        let (gmaps, ghead) = g.split_at_mut(lay.head_w().start);
                        let (gw, gb) = ghead.split_at_mut(c * lay.d_in);
                        for i in 0..c {
                            gb[i] += dlog[i];
                            for j in 0..lay.d_in {
                                gw[i * lay.d_in + j] += dlog[i] * y[j];
                                dy[j] += w[i * lay.d_in + j] * dlog[i];
                            }
                        }
                        map_backward(&lay, &th[lay.map_range(0)], &cache, &dy, &mut gmaps[lay.map_range(0)]);
                    }
                }
            }
        }
        ProbeTask::Parse => {
            let mut fs = Vec::with_capacity(n + 1);
            let mut gs = Vec::with_capacity(n + 1);
            for k in 0..=n {
                let x = s.states.row(k);
                fs.push(map_forward(&lay, &th[lay.map_range(0)], x, rng.as_deref_mut().map(|r| (p, r))));
                gs.push(map_forward(&lay, &th[lay.map_range(1)], x, rng.as_deref_mut().map(|r| (p, r))));
            }
            let mut dfs = vec![vec![0.0; lay.d_in]; n + 1];
            let mut dgs = vec![vec![0.0; lay.d_in]; n + 1];
            for i in 1..=n {
                let cands: Vec<usize> = (0..=n).filter(|&j| j != i).collect();
                let scores: Vec<f64> = cands.iter().map(|&j| tensor::dot(&fs[i].0, &gs[j].0)).collect();
                let gold = s.heads[i - 1];
                let gold_c = cands.iter().position(|&j| j == gold).expect("gold head is a candidate");
                correct.push(cands[tensor::argmax(&scores)] == gold);
                let lse = tensor::log_sum_exp(&scores);
                loss += lse - scores[gold_c];
                if grad.is_some() {
                    for (ci, &j) in cands.iter().enumerate() {
                        let ds = (scores[ci] - lse).exp() - (ci == gold_c) as usize as f64;
                        for t in 0..lay.d_in {
                            dfs[i][t] += ds * gs[j].0[t];
                            dgs[j][t] += ds * fs[i].0[t];
                        }
                    }
                }
            }
            if let Some(g) = grad {
                for k in 0..=n {
                    map_backward(&lay, &th[lay.map_range(0)], &fs[k].1, &dfs[k], &mut g[lay.map_range(0)]);
                    map_backward(&lay, &th[lay.map_range(1)], &gs[k].1, &dgs[k], &mut g[lay.map_range(1)]);
                }
            }
        }
    }
    let count = correct.len();
    (loss, count, correct)
}

fn classes_for(task: ProbeTask, feats: &[SentenceFeatures]) -> Vec<String> {
    let mut v: Vec<String> = match task {
        ProbeTask::Posl => feats.iter().flat_map(|s| s.upos.iter().cloned()).collect(),
        ProbeTask::Dal => feats.iter().flat_map(|s| s.deprels.iter().cloned()).collect(),
        ProbeTask::Parse => Vec::new(),
    };
    v.sort();
    v.dedup();
    v
}

const PROBE_STREAM: u64 = 0x9B0B;

/// Trains probe parameters only; the encoder is read through cached
/// features and never modified.
pub fn train_probe(
    train: &[SentenceFeatures],
    cfg: &ProbeConfig,
    tcfg: &ProbeTrainConfig,
    d_model: usize,
) -> Result<ProbeModel> {
    if train.is_empty() {
        return Err(Error::config("empty probe training set"));
    }
    if tcfg.batch_size == 0 || tcfg.learning_rate <= 0.0 {
        return Err(Error::config("probe training needs batch_size ≥ 1 and learning_rate > 0"));
    }
    if train[0].states.cols() != d_model {
        return Err(Error::config("feature width does not match d_model"));
    }
    let classes = classes_for(cfg.task, train);
    let lay = Layout::new(cfg, d_model, classes.len());
    let mut init = rng::stream(tcfg.seed, &[PROBE_STREAM, 0]);
    let mut theta = vec![0.0; lay.total()];
    let scale = 1.0 / (lay.d_in as f64).sqrt();
    for k in 0..lay.n_maps {
        for x in &mut theta[lay.map_range(k)] {
            *x = init.random_range(-scale..scale);
        }
    }
    for x in &mut theta[lay.head_w()] {
        *x = init.random_range(-scale..scale);
    }
    let mut model = ProbeModel {
        config: *cfg,
        d_model,
        classes,
        theta,
    };
    let mut m = vec![0.0; model.theta.len()];
    let mut v = vec![0.0; model.theta.len()];
    let mut t = 0u64;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng::stream(tcfg.seed, &[PROBE_STREAM, 1]);
    for epoch in 0..tcfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
        for (bi, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let mut grad = vec![0.0; model.theta.len()];
            let mut count = 0;
            for &si in chunk {
                let mut r = rng::stream(tcfg.seed, &[PROBE_STREAM, 2, epoch as u64, bi as u64, si as u64]);
                let (_, c, _) = sentence_step(&model, &train[si], Some(&mut r), Some(&mut grad));
                count += c;
            }
            if count == 0 {
                continue;
            }
            grad.iter_mut().for_each(|g| *g /= count as f64);
            t += 1;
            adam_update(&mut model.theta, &grad, &mut m, &mut v, t, tcfg.learning_rate, 0.9, 0.999, 1e-8);
        }
    }
    if model.theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("probe parameters became non-finite"));
    }
    Ok(model)
}

/// Accuracy (POSL/DAL) or UAS (PARSE), punctuation included. Gold classes
/// unseen in training count as wrong.
pub fn evaluate_probe(model: &ProbeModel, split: &[SentenceFeatures]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::config("empty evaluation split"));
    }
    if split[0].states.cols() != model.d_model {
        return Err(Error::config("features come from an encoder of a different width"));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for s in split {
        let (_, n, correct) = sentence_step::<rng::Rng>(model, s, None, None);
        hits += correct.iter().filter(|&&c| c).count();
        total += n;
    }
    if total == 0 {
        return Err(Error::config("evaluation split has no tokens"));
    }
    Ok(hits as f64 / total as f64)
}

/// Fraction of tokens whose predicted head equals the gold head.
pub fn uas(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    let total: usize = gold.iter().map(Vec::len).sum();
    if total == 0 || pred.len() != gold.len() {
        return Err(Error::input("UAS needs matching, non-empty head lists"));
    }
    let mut hits = 0;
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::input("UAS head lists differ in length"));
        }
        hits += p.iter().zip(g).filter(|(a, b)| a == b).count();
    }
    Ok(hits as f64 / total as f64)
}

/// Every word attaches to the word before it; the first word to the root.
pub fn attach_to_previous(bank: &DepTreebank) -> Result<f64> {
    let gold: Vec<Vec<usize>> = bank.sentences.iter().map(|s| s.heads()).collect();
    let pred: Vec<Vec<usize>> = bank.sentences.iter().map(|s| (0..s.len()).collect()).collect();
    uas(&pred, &gold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub model_tag: String,
    pub task: ProbeTask,
    pub layer: usize,
    pub rank: Option<usize>,
    pub n_params: usize,
    pub value: f64,
}

/// `(model_tag, task, layer, rank, metric, value)`; rank is empty for
/// linear probes.
pub fn probe_table(rows: &[ProbeRow]) -> Table {
    let mut t = Table::new(&["model_tag", "task", "layer", "rank", "metric", "value"]);
    for r in rows {
        t.push(vec![
            r.model_tag.clone(),
            r.task.name().into(),
            r.layer.to_string(),
            r.rank.map(|k| k.to_string()).unwrap_or_default(),
            r.task.metric().into(),
            fmt_f64(r.value),
        ]);
    }
    t
}

/// `(rank, n_params, uas)` for a Pareto sweep.
pub fn pareto_table(rows: &[ProbeRow]) -> Table {
    let mut t = Table::new(&["model_tag", "rank", "n_params", "uas"]);
    for r in rows {
        t.push(vec![
            r.model_tag.clone(),
            r.rank.unwrap_or(0).to_string(),
            r.n_params.to_string(),
            fmt_f64(r.value),
        ]);
    }
    t
}

/// Inputs shared by sweeps: encoder, treebank splits and vocabulary.
pub struct ProbeData<'a> {
    pub encoder: &'a Parameters,
    pub train: &'a DepTreebank,
    pub dev: &'a DepTreebank,
    pub vocab: &'a Vocab,
}

fn run_one(data: &ProbeData<'_>, cfg: &ProbeConfig, tcfg: &ProbeTrainConfig, exec: Exec) -> Result<(f64, usize)> {
    cfg.validate(data.encoder.config.d_model, data.encoder.config.n_layers)?;
    let (tr, _) = extract_features(data.encoder, data.train, data.vocab, cfg.layer, exec)?;
    let (dv, _) = extract_features(data.encoder, data.dev, data.vocab, cfg.layer, exec)?;
    let model = train_probe(&tr, cfg, tcfg, data.encoder.config.d_model)?;
    Ok((evaluate_probe(&model, &dv)?, model.num_parameters()))
}

/// One probe per layer `0..=n_layers`, identical config and seed otherwise.
pub fn layer_sweep(
    data: &ProbeData<'_>,
    template: &ProbeConfig,
    tcfg: &ProbeTrainConfig,
    model_tag: &str,
    exec: Exec,
) -> Result<Vec<ProbeRow>> {
    (0..=data.encoder.config.n_layers)
        .map(|layer| {
            let cfg = ProbeConfig { layer, ..*template };
            let (value, n_params) = run_one(data, &cfg, tcfg, exec)?;
            Ok(ProbeRow {
                model_tag: model_tag.into(),
                task: cfg.task,
                layer,
                rank: (cfg.kind == ProbeKind::LowrankMlp).then_some(cfg.rank),
                n_params,
                value,
            })
        })
        .collect()
}

/// One rank-r MLP PARSE probe per rank on the last layer.
pub fn pareto_sweep(
    data: &ProbeData<'_>,
    ranks: &[usize],
    tcfg: &ProbeTrainConfig,
    model_tag: &str,
    exec: Exec,
) -> Result<Vec<ProbeRow>> {
    if ranks.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("ranks must be sorted ascending"));
    }
    let layer = data.encoder.config.n_layers;
    ranks
        .iter()
        .map(|&rank| {
            let cfg = ProbeConfig::lowrank(ProbeTask::Parse, layer, rank);
            let (value, n_params) = run_one(data, &cfg, tcfg, exec)?;
            Ok(ProbeRow {
                model_tag: model_tag.into(),
                task: ProbeTask::Parse,
                layer,
                rank: Some(rank),
                n_params,
                value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    ADominatesB,
    BDominatesA,
    None,
}

impl Dominance {
    pub fn verdict(self) -> &'static str {
        match self {
            Dominance::ADominatesB => "A dominates B",
            Dominance::BDominatesA => "B dominates A",
            Dominance::None => "none",
        }
    }
}

/// A dominates B iff A ≥ B at every point and A > B at one at least.
pub fn pareto_dominance(a: &[f64], b: &[f64]) -> Result<Dominance> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::input("dominance needs two non-empty curves of equal length"));
    }
    let ge = a.iter().zip(b).all(|(x, y)| x >= y);
    let le = a.iter().zip(b).all(|(x, y)| x <= y);
    let differ = a.iter().zip(b).any(|(x, y)| x != y);
    Ok(match (ge, le, differ) {
        (true, _, true) => Dominance::ADominatesB,
        (_, true, true) => Dominance::BDominatesA,
        _ => Dominance::None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_conllu;

    #[test]
    fn dominance_definition() {
        assert_eq!(pareto_dominance(&[0.5, 0.6, 0.7], &[0.4, 0.5, 0.6]).unwrap(), Dominance::ADominatesB);
        assert_eq!(pareto_dominance(&[0.5, 0.4], &[0.4, 0.5]).unwrap(), Dominance::None);
        assert_eq!(pareto_dominance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), Dominance::None);
        assert_eq!(pareto_dominance(&[0.5, 0.5], &[0.5, 0.6]).unwrap(), Dominance::BDominatesA);
    }

    #[test]
    fn parameter_count_formula() {
        let d = 16;
        for (task, c, lin, low) in [
            (ProbeTask::Posl, 5, 5 * d + 5, 2 * d * 3 + 5 * d + 5),
            (ProbeTask::Dal, 7, 7 * 2 * d + 7, 2 * 2 * d * 3 + 7 * 2 * d + 7),
            (ProbeTask::Parse, 0, 2 * d * d, 2 * 2 * d * 3),
        ] {
            assert_eq!(probe_parameter_count(&ProbeConfig::linear(task, 1), d, c), lin, "{task:?}");
            assert_eq!(probe_parameter_count(&ProbeConfig::lowrank(task, 1, 3), d, c), low, "{task:?}");
        }
    }

    #[test]
    fn gold_heads_give_full_uas() {
        let g = vec![vec![2, 0, 2], vec![0]];
        assert_eq!(uas(&g, &g).unwrap(), 1.0);
        assert!(uas(&[], &[]).is_err());
    }

    #[test]
    fn previous_token_baseline_hand_count() {
        // s1: heads 2 0 2 -> predicted 0 1 2 -> correct only token 3  (1/3)
        // s2: heads 0 1   -> predicted 0 1   -> both correct           (2/2)
        // s3: heads 3 3 0 4? no: heads 2 3 0 -> predicted 0 1 2 -> none (0/3)
        let text = "1\ta\t_\tX\t_\t_\t2\tx\t_\t_\n2\tb\t_\tX\t_\t_\t0\troot\t_\t_\n3\tc\t_\tX\t_\t_\t2\tx\t_\t_\n\n\
                    1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n2\tb\t_\tX\t_\t_\t1\tx\t_\t_\n\n\
                    1\ta\t_\tX\t_\t_\t2\tx\t_\t_\n2\tb\t_\tX\t_\t_\t3\tx\t_\t_\n3\tc\t_\tX\t_\t_\t0\troot\t_\t_\n";
        let bank = parse_conllu(text).unwrap();
        assert_eq!(attach_to_previous(&bank).unwrap(), 3.0 / 8.0);
    }

    fn feats(n: usize, d: usize, seed: u64) -> SentenceFeatures {
        let mut r = rng::seeded(seed);
        SentenceFeatures {
            states: Matrix::from_fn(n + 1, d, |_, _| r.random_range(-1.0..1.0)),
            heads: (0..n).map(|i| if i == 0 { 0 } else { 1 }).collect(),
            upos: (0..n).map(|i| ["A", "B", "C"][i % 3].to_string()).collect(),
            deprels: (0..n).map(|i| if i == 0 { "root".into() } else { "dep".into() }).collect(),
        }
    }

    /// Central differences on the flat parameter vector (dropout off).
    fn fd_check(cfg: ProbeConfig) {
        let s = feats(4, 6, 3);
        let mut model = train_probe(std::slice::from_ref(&s), &cfg, &ProbeTrainConfig { epochs: 0, ..Default::default() }, 6).unwrap();
        model.config.dropout = 0.0;
        // nudge ReLU pre-activations away from zero by using the trained init
        let mut grad = vec![0.0; model.theta.len()];
        sentence_step::<rng::Rng>(&model, &s, None, Some(&mut grad));
        let h = 1e-6;
        #[allow(clippy::needless_range_loop)]
        for k in 0..model.theta.len() {
            let mut p = model.clone();
            p.theta[k] += h;
            let lp = sentence_step::<rng::Rng>(&p, &s, None, None).0;
            p.theta[k] -= 2.0 * h;
            let lm = sentence_step::<rng::Rng>(&p, &s, None, None).0;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - grad[k]).abs() < 1e-5 * (1.0 + num.abs()), "{cfg:?} k={k}: {num} vs {}", grad[k]);
        }
    }

    #[test]
    fn probe_gradients_match_finite_differences() {
        for task in [ProbeTask::Posl, ProbeTask::Dal, ProbeTask::Parse] {
            fd_check(ProbeConfig::linear(task, 0));
            fd_check(ProbeConfig::lowrank(task, 0, 2));
        }
    }

    #[test]
    fn memorizes_a_repeated_sentence() {
        let s = feats(5, 8, 1);
        let train = vec![s.clone(); 4];
        let tcfg = ProbeTrainConfig {
            epochs: 200,
            learning_rate: 2e-2,
            batch_size: 4,
            seed: 0,
        };
        for task in [ProbeTask::Posl, ProbeTask::Dal, ProbeTask::Parse] {
            let mut cfg = ProbeConfig::linear(task, 0);
            cfg.dropout = 0.0;
            let m = train_probe(&train, &cfg, &tcfg, 8).unwrap();
            assert_eq!(evaluate_probe(&m, &train).unwrap(), 1.0, "{task:?}");
        }
    }
}
