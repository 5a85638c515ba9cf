//! Fine-tuning (vanilla and PGD-adversarial), MLM pretraining and checkpoint
//! selection.

pub mod adam;
pub mod config;
pub mod mlm;
pub mod pgd;

use std::path::Path;

pub use adam::{finetune_groups, pretrain_groups, Adam};
pub use config::{linear_decay, PgdConfig, TrainConfig, TrainMode};
pub use mlm::{mask_sequence, mlm_accuracy, mlm_pretrain, unigram_majority_baseline, PretrainOutcome};
pub use pgd::{init_delta, pgd_attack, pgd_attack_from, project, PgdOutcome};

use rand::seq::SliceRandom;

use crate::csvout::{fmt_f64, Table};
use crate::data::{ClassificationDataset, LabeledExample};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{self, value_and_grad, Head, Parameters, ScalarFn};
use crate::rng;
use crate::tensor;

const PGD_STREAM: u64 = 0x9D6;
const BATCH_STREAM: u64 = 0xBA7C;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub lr: f64,
    /// Largest ‖δ‖ seen after any projection in this step (0 for vanilla).
    pub max_delta_norm: f64,
}

/// One optimizer step on a classification mini-batch.
///
/// In adversarial mode every example is replaced by its PGD-perturbed
/// version; clean examples are not trained on.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut Parameters,
    opt: &mut Adam,
    batch: &[&LabeledExample],
    mode: TrainMode,
    pgd: Option<&PgdConfig>,
    step: usize,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::config("empty mini-batch"));
    }
    let pgd = match mode {
        TrainMode::Adversarial => {
            Some(pgd.ok_or_else(|| Error::config("adversarial mode requires a PGD config"))?)
        }
        TrainMode::Vanilla => None,
    };
    let frozen: &Parameters = params;
    let per_example = exec.map(batch, |i, ex| -> Result<(f64, Parameters, f64)> {
        let (offset, max_norm) = match pgd {
            Some(p) => {
                let mut r = rng::stream(cfg.seed, &[PGD_STREAM, step as u64, i as u64]);
                let out = pgd_attack(frozen, &ex.ids, ex.label, p, &mut r)?;
                let m = out.max_norm();
                (Some(out.delta), m)
            }
            None => (None, 0.0),
        };
        let g = value_and_grad(frozen, &ex.ids, ScalarFn::ClassLoss(ex.label), offset.as_ref(), true)?;
        Ok((g.value, g.params.expect("requested"), max_norm))
    });
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    let mut max_delta_norm: f64 = 0.0;
    for r in per_example {
        let (l, g, m) = r?;
        loss += l;
        total.add_scaled(&g, 1.0);
        max_delta_norm = max_delta_norm.max(m);
    }
    let scale = 1.0 / batch.len() as f64;
    loss *= scale;
    total.scale(scale);
    if !loss.is_finite() {
        return Err(Error::numeric(format!("non-finite loss {loss} at step {step}")));
    }
    let lr = linear_decay(cfg.learning_rate, step, cfg.total_steps);
    opt.step(params, &total, lr, finetune_groups);
    Ok(StepStats {
        loss,
        lr,
        max_delta_norm,
    })
}

/// Classification accuracy of the CLS head.
pub fn evaluate_accuracy(params: &Parameters, examples: &[LabeledExample], exec: Exec) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::config("cannot evaluate on an empty split"));
    }
    let hits = exec.map(examples, |_, ex| -> Result<bool> {
        let out = model::forward(params, &ex.ids, Head::Classify, None, None)?;
        Ok(tensor::argmax(out.logits.row(0)) == ex.label)
    });
    let mut n = 0usize;
    for h in hits {
        n += h? as usize;
    }
    Ok(n as f64 / examples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: usize,
    pub dev_metric: f64,
    pub params: Parameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub max_delta_norm: f64,
    pub steps: usize,
}

impl TrainReport {
    fn record(&mut self, step: usize, split: &str, metric: &str, value: f64) {
        self.curve.push(CurvePoint {
            step,
            split: split.into(),
            metric: metric.into(),
            value,
        });
    }

    /// `(step, split, metric, value)` table.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["step", "split", "metric", "value"]);
        for p in &self.curve {
            t.push(vec![p.step.to_string(), p.split.clone(), p.metric.clone(), fmt_f64(p.value)]);
        }
        t
    }

    pub fn values(&self, split: &str, metric: &str) -> Vec<(usize, f64)> {
        self.curve
            .iter()
            .filter(|p| p.split == split && p.metric == metric)
            .map(|p| (p.step, p.value))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub checkpoints: Vec<Checkpoint>,
    pub report: TrainReport,
}

/// Extra dev metrics computed at every evaluation point (e.g. KL to base).
pub type EvalHook<'a> = dyn FnMut(usize, &Parameters) -> Result<Vec<(String, f64)>> + 'a;

/// Fine-tunes `params` on `data.train`, evaluating on `data.dev` every
/// `eval_every` steps (and at steps 0 and `total_steps`). Every evaluation
/// point becomes a checkpoint; when `checkpoint_dir` is given each one is
/// also written there as `step_<n>.json`.
pub fn run_training(
    mut params: Parameters,
    data: &ClassificationDataset,
    cfg: &TrainConfig,
    pgd: Option<&PgdConfig>,
    hook: &mut EvalHook<'_>,
    checkpoint_dir: Option<&Path>,
    exec: Exec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(Error::config("dataset needs non-empty train and dev splits"));
    }
    if cfg.mode == TrainMode::Adversarial {
        pgd.ok_or_else(|| Error::config("adversarial mode requires a PGD config"))?.validate()?;
    }
    let mut opt = Adam::new(&params);
    let mut report = TrainReport::default();
    let mut checkpoints = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut batch_rng = rng::stream(cfg.seed, &[BATCH_STREAM]);

    let mut evaluate = |step: usize,
                        params: &Parameters,
                        report: &mut TrainReport,
                        checkpoints: &mut Vec<Checkpoint>|
     -> Result<()> {
        let acc = evaluate_accuracy(params, &data.dev, exec)?;
        report.record(step, "dev", "accuracy", acc);
        for (name, value) in hook(step, params)? {
            report.record(step, "dev", &name, value);
        }
        if let Some(dir) = checkpoint_dir {
            model::io::save(params, &dir.join(format!("step_{step}.json")))?;
        }
        checkpoints.push(Checkpoint {
            step,
            dev_metric: acc,
            params: params.clone(),
        });
        Ok(())
    };

    evaluate(0, &params, &mut report, &mut checkpoints)?;
    for step in 0..cfg.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(data.train.len()) {
            if cursor == order.len() {
                order = (0..data.train.len()).collect();
                order.shuffle(&mut batch_rng);
                cursor = 0;
            }
            batch.push(&data.train[order[cursor]]);
            cursor += 1;
        }
        let stats = train_step(&mut params, &mut opt, &batch, cfg.mode, pgd, step, cfg, exec)?;
        report.record(step + 1, "train", "loss", stats.loss);
        report.max_delta_norm = report.max_delta_norm.max(stats.max_delta_norm);
        report.steps = step + 1;
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.total_steps {
            evaluate(done, &params, &mut report, &mut checkpoints)?;
        }
    }
    Ok(TrainOutcome {
        params,
        checkpoints,
        report,
    })
}

/// Mean dev metric over the `k` best checkpoints (all of them if fewer).
pub fn select_best(checkpoints: &[Checkpoint], k: usize) -> Option<f64> {
    let metrics: Vec<f64> = checkpoints.iter().map(|c| c.dev_metric).collect();
    mean_of_top_k(&metrics, k)
}

pub fn mean_of_top_k(metrics: &[f64], k: usize) -> Option<f64> {
    if metrics.is_empty() || k == 0 {
        return None;
    }
    let mut v = metrics.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(v.len());
    Some(v[..k].iter().sum::<f64>() / k as f64)
}
