//! Masked-language-model pretraining of the "base" encoder.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};

use super::adam::{pretrain_groups, Adam};
use super::config::{linear_decay, TrainConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{self, value_and_grad, Head, Parameters, ScalarFn, MASK};
use crate::rng;
use crate::tensor;

const MASK_STREAM: u64 = 0x3A5C;

/// Replaces each content position with `MASK` with probability `rate`
/// (at least one position per sequence). Returns the masked ids and the
/// `(position, original id)` targets.
pub fn mask_sequence<R: rand::Rng + ?Sized>(ids: &[u32], rate: f64, rng: &mut R) -> (Vec<u32>, Vec<(usize, u32)>) {
    let content: Vec<usize> = (1..ids.len().saturating_sub(1)).collect();
    let mut chosen: Vec<usize> = content.iter().copied().filter(|_| rng.random::<f64>() < rate).collect();
    if chosen.is_empty() && !content.is_empty() {
        chosen.push(*content.choose(rng).expect("non-empty"));
    }
    let mut masked = ids.to_vec();
    let targets = chosen
        .into_iter()
        .map(|p| {
            masked[p] = MASK;
            (p, ids[p])
        })
        .collect();
    (masked, targets)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: Parameters,
    /// Mean masked-token cross-entropy per step.
    pub losses: Vec<f64>,
}

/// Trains embeddings, encoder and MLM head on masked-token cross-entropy.
pub fn mlm_pretrain(
    mut params: Parameters,
    corpus: &[Vec<u32>],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if !(cfg.mask_rate > 0.0 && cfg.mask_rate <= 1.0) {
        return Err(Error::config(format!(
            "mask_rate must be in (0, 1], got {} (no MLM targets)",
            cfg.mask_rate
        )));
    }
    if corpus.len() < cfg.batch_size {
        return Err(Error::config(format!(
            "corpus of {} sequences is smaller than one batch ({})",
            corpus.len(),
            cfg.batch_size
        )));
    }
    let mut opt = Adam::new(&params);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut batch_rng = rng::stream(cfg.seed, &[MASK_STREAM, 0]);
    let mut losses = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..corpus.len()).collect();
                order.shuffle(&mut batch_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let frozen: &Parameters = &params;
        let per_example = exec.map(&batch, |i, &idx| -> Result<(f64, usize, Parameters)> {
            let mut r = rng::stream(cfg.seed, &[MASK_STREAM, 1 + step as u64, i as u64]);
            let (masked, targets) = mask_sequence(&corpus[idx], cfg.mask_rate, &mut r);
            let g = value_and_grad(frozen, &masked, ScalarFn::MlmLossSum(&targets), None, true)?;
            Ok((g.value, targets.len(), g.params.expect("requested")))
        });
        let mut total = params.zeros_like();
        let mut loss = 0.0;
        let mut count = 0usize;
        for r in per_example {
            let (l, n, g) = r?;
            loss += l;
            count += n;
            total.add_scaled(&g, 1.0);
        }
        if count == 0 {
            return Err(Error::config("batch produced no masked positions"));
        }
        let scale = 1.0 / count as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("non-finite MLM loss at step {step}")));
        }
        total.scale(scale);
        let lr = linear_decay(cfg.learning_rate, step, cfg.total_steps);
        opt.step(&mut params, &total, lr, pretrain_groups);
        losses.push(loss);
    }
    Ok(PretrainOutcome { params, losses })
}

/// Masked ids and their `(position, original id)` targets.
type Masked = (Vec<u32>, Vec<(usize, u32)>);

fn eval_masks(corpus: &[Vec<u32>], rate: f64, seed: u64) -> Vec<Masked> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, ids)| {
            let mut r = rng::stream(seed, &[MASK_STREAM, u64::MAX, i as u64]);
            mask_sequence(ids, rate, &mut r)
        })
        .collect()
}

/// Masked-token top-1 accuracy with masks drawn from `seed`.
pub fn mlm_accuracy(params: &Parameters, corpus: &[Vec<u32>], rate: f64, seed: u64, exec: Exec) -> Result<f64> {
    let masked = eval_masks(corpus, rate, seed);
    let per = exec.map(&masked, |_, (ids, targets)| -> Result<(usize, usize)> {
        let positions: Vec<usize> = targets.iter().map(|&(p, _)| p).collect();
        let out = model::forward(params, ids, Head::Mlm(&positions), None, None)?;
        let hits = targets
            .iter()
            .enumerate()
            .filter(|(r, &(_, t))| tensor::argmax(out.logits.row(*r)) == t as usize)
            .count();
        Ok((hits, targets.len()))
    });
    let (mut hits, mut total) = (0, 0);
    for r in per {
        let (h, n) = r?;
        hits += h;
        total += n;
    }
    if total == 0 {
        return Err(Error::config("no masked positions to evaluate"));
    }
    Ok(hits as f64 / total as f64)
}

/// Accuracy of always predicting the most frequent content token of
/// `train`, on the same masked positions [`mlm_accuracy`] uses.
pub fn unigram_majority_baseline(train: &[Vec<u32>], heldout: &[Vec<u32>], rate: f64, seed: u64) -> f64 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for ids in train {
        for &t in &ids[1..ids.len().saturating_sub(1)] {
            *counts.entry(t).or_default() += 1;
        }
    }
    let majority = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&t, _)| t);
    let masked = eval_masks(heldout, rate, seed);
    let total: usize = masked.iter().map(|(_, t)| t.len()).sum();
    let hits: usize = masked
        .iter()
        .flat_map(|(_, t)| t.iter())
        .filter(|&&(_, t)| Some(t) == majority)
        .count();
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CLS, SEP};

    #[test]
    fn masking_touches_content_only() {
        let ids = vec![CLS, 7, 8, 9, 10, SEP];
        let mut r = rng::seeded(4);
        for _ in 0..50 {
            let (m, t) = mask_sequence(&ids, 0.3, &mut r);
            assert!(!t.is_empty());
            assert_eq!(m[0], CLS);
            assert_eq!(m[5], SEP);
            for &(p, orig) in &t {
                assert_eq!(m[p], MASK);
                assert_eq!(ids[p], orig);
            }
        }
    }
}
