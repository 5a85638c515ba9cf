//! Parameter-free probes: minimal-pair scoring with the MLM head,
//! symmetrized KL between two models' masked-token distributions, and
//! sensitivity of classification accuracy to word order.

use std::collections::BTreeMap;

use crate::csvout::{fmt_f64, Table};
use crate::data::{shuffle_content, EncodedPair, LabeledExample, PairFilterReport, PermutationSource};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{forward, Head, Parameters, CLS, MASK, PAD, SEP};
use crate::tensor::{self, Matrix};

/// Anything that yields vocabulary logits at given positions.
pub trait MaskedLm {
    fn max_len(&self) -> usize;
    /// One row of logits per entry of `positions`.
    fn mlm_logits(&self, ids: &[u32], positions: &[usize]) -> Result<Matrix>;
}

/// Anything that yields class logits for a sequence.
pub trait SequenceClassifier {
    fn class_logits(&self, ids: &[u32]) -> Result<Vec<f64>>;
}

impl MaskedLm for Parameters {
    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn mlm_logits(&self, ids: &[u32], positions: &[usize]) -> Result<Matrix> {
        Ok(forward(self, ids, Head::Mlm(positions), None, None)?.logits)
    }
}

impl SequenceClassifier for Parameters {
    fn class_logits(&self, ids: &[u32]) -> Result<Vec<f64>> {
        Ok(forward(self, ids, Head::Classify, None, None)?.logits.row(0).to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhenomenonAccuracy {
    pub phenomenon: String,
    pub n_pairs: usize,
    pub n_filtered: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    /// Sorted by phenomenon.
    pub rows: Vec<PhenomenonAccuracy>,
    pub overall: f64,
}

impl PairReport {
    /// `(checkpoint, phenomenon, n_pairs, n_filtered, accuracy)`.
    pub fn to_table(&self, checkpoint: &str) -> Table {
        let mut t = Table::new(&["checkpoint", "phenomenon", "n_pairs", "n_filtered", "accuracy"]);
        for r in &self.rows {
            t.push(vec![
                checkpoint.into(),
                r.phenomenon.clone(),
                r.n_pairs.to_string(),
                r.n_filtered.to_string(),
                fmt_f64(r.accuracy),
            ]);
        }
        t
    }

    pub fn get(&self, phenomenon: &str) -> Option<&PhenomenonAccuracy> {
        self.rows.iter().find(|r| r.phenomenon == phenomenon)
    }
}

/// A pair counts as correct iff `logit(good) > logit(bad)` at the masked
/// focus; ties count as incorrect.
pub fn minimal_pair_accuracy<M: MaskedLm + Sync + ?Sized>(
    model: &M,
    pairs: &[EncodedPair],
    filter: &PairFilterReport,
    exec: Exec,
) -> Result<PairReport> {
    if pairs.is_empty() {
        return Err(Error::input(format!(
            "no minimal pairs left to score ({} filtered)",
            filter.total_filtered()
        )));
    }
    let outcomes = exec.map(pairs, |_, p| -> Result<bool> {
        let logits = model.mlm_logits(&p.ids, &[p.focus])?;
        let row = logits.row(0);
        Ok(row[p.good as usize] > row[p.bad as usize])
    });
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (p, ok) in pairs.iter().zip(outcomes) {
        let e = tally.entry(p.phenomenon.as_str()).or_default();
        e.0 += 1;
        e.1 += ok? as usize;
    }
    let mut names: Vec<&str> = tally.keys().copied().collect();
    names.extend(filter.filtered.keys().map(String::as_str).filter(|n| !tally.contains_key(n)));
    names.sort_unstable();
    names.dedup();
    let rows = names
        .iter()
        .map(|&name| {
            let (n, hits) = tally.get(name).copied().unwrap_or((0, 0));
            PhenomenonAccuracy {
                phenomenon: name.to_string(),
                n_pairs: n,
                n_filtered: filter.filtered.get(name).copied().unwrap_or(0),
                accuracy: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
            }
        })
        .collect();
    let hits: usize = tally.values().map(|v| v.1).sum();
    Ok(PairReport {
        rows,
        overall: hits as f64 / pairs.len() as f64,
    })
}

/// `KL(p‖q) + KL(q‖p) = Σ_k (p_k − q_k)(log p_k − log q_k)` from two logit
/// rows, via log-softmax. The form is exactly antisymmetric in each factor,
/// so swapping the arguments gives a bit-identical result.
pub fn symmetric_kl_from_logits(a: &[f64], b: &[f64]) -> f64 {
    let la = tensor::log_softmax(a);
    let lb = tensor::log_softmax(b);
    la.iter()
        .zip(&lb)
        .map(|(&x, &y)| (x.exp() - y.exp()) * (x - y))
        .sum()
}

/// Mean symmetrized KL between the MLM distributions of `a` and `b`, masking
/// one content position at a time over every example of `corpus`.
pub fn symmetrized_kl<A, B>(a: &A, b: &B, corpus: &[Vec<u32>], exec: Exec) -> Result<f64>
where
    A: MaskedLm + Sync + ?Sized,
    B: MaskedLm + Sync + ?Sized,
{
    let limit = a.max_len().min(b.max_len());
    if let Some(ex) = corpus.iter().find(|ex| ex.len() > limit) {
        return Err(Error::config(format!(
            "example of length {} exceeds model max_len {limit}",
            ex.len()
        )));
    }
    let per = exec.map(corpus, |_, ids| -> Result<(f64, usize)> {
        let mut sum = 0.0;
        let mut n = 0;
        for pos in 0..ids.len() {
            if matches!(ids[pos], CLS | SEP | PAD) {
                continue;
            }
            let mut masked = ids.clone();
            masked[pos] = MASK;
            let la = a.mlm_logits(&masked, &[pos])?;
            let lb = b.mlm_logits(&masked, &[pos])?;
            sum += symmetric_kl_from_logits(la.row(0), lb.row(0));
            n += 1;
        }
        Ok((sum, n))
    });
    let (mut sum, mut n) = (0.0, 0usize);
    for r in per {
        let (s, k) = r?;
        sum += s;
        n += k;
    }
    if n == 0 {
        return Err(Error::input("no maskable positions in KL corpus"));
    }
    Ok(sum / n as f64)
}

/// `(checkpoint_step, kl_distance)`.
pub fn kl_table(points: &[(usize, f64)]) -> Table {
    let mut t = Table::new(&["checkpoint_step", "kl_distance"]);
    for &(s, v) in points {
        t.push(vec![s.to_string(), fmt_f64(v)]);
    }
    t
}

pub fn classifier_accuracy<C: SequenceClassifier + Sync + ?Sized>(
    clf: &C,
    rows: &[Vec<u32>],
    labels: &[usize],
    exec: Exec,
) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::input("empty evaluation set"));
    }
    let hits = exec.map(rows, |i, ids| -> Result<bool> {
        Ok(tensor::argmax(&clf.class_logits(ids)?) == labels[i])
    });
    let mut n = 0;
    for h in hits {
        n += h? as usize;
    }
    Ok(n as f64 / rows.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSensitivity {
    pub ordered: f64,
    pub shuffled: Vec<f64>,
    pub mean_shuffled: f64,
    /// `ordered − mean_shuffled`.
    pub drop: f64,
}

impl OrderSensitivity {
    /// `(model_tag, ordered, mean_shuffled, drop, n_sets)`.
    pub fn to_table(&self, model_tag: &str) -> Table {
        let mut t = Table::new(&["model_tag", "ordered", "mean_shuffled", "drop", "n_sets"]);
        t.push(vec![
            model_tag.into(),
            fmt_f64(self.ordered),
            fmt_f64(self.mean_shuffled),
            fmt_f64(self.drop),
            self.shuffled.len().to_string(),
        ]);
        t
    }
}

/// Dev accuracy on the original order versus the mean over `n_sets`
/// independently word-shuffled copies of the dev set.
pub fn order_sensitivity<C: SequenceClassifier + Sync + ?Sized, P: PermutationSource + ?Sized>(
    clf: &C,
    dev: &[LabeledExample],
    src: &mut P,
    n_sets: usize,
    exec: Exec,
) -> Result<OrderSensitivity> {
    if n_sets == 0 {
        return Err(Error::config("need at least one shuffled set"));
    }
    let rows: Vec<Vec<u32>> = dev.iter().map(|e| e.ids.clone()).collect();
    let labels: Vec<usize> = dev.iter().map(|e| e.label).collect();
    let ordered = classifier_accuracy(clf, &rows, &labels, exec)?;
    let mut shuffled = Vec::with_capacity(n_sets);
    for _ in 0..n_sets {
        let set: Vec<Vec<u32>> = rows.iter().map(|r| shuffle_content(r, src)).collect();
        shuffled.push(classifier_accuracy(clf, &set, &labels, exec)?);
    }
    let mean_shuffled = shuffled.iter().sum::<f64>() / n_sets as f64;
    Ok(OrderSensitivity {
        ordered,
        drop: ordered - mean_shuffled,
        shuffled,
        mean_shuffled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IdentityPermutation;
    use crate::rng;

    /// MLM stub: logits are a fixed per-token table regardless of context.
    struct Lookup(Vec<f64>);

    impl MaskedLm for Lookup {
        fn max_len(&self) -> usize {
            64
        }
        fn mlm_logits(&self, _ids: &[u32], positions: &[usize]) -> Result<Matrix> {
            Ok(Matrix::from_fn(positions.len(), self.0.len(), |_, k| self.0[k]))
        }
    }

    #[test]
    fn lookup_favoring_good_scores_one_and_ties_are_wrong() {
        let mk = |good, bad| EncodedPair {
            ids: vec![CLS, 7, MASK, SEP],
            focus: 2,
            good,
            bad,
            phenomenon: "x".into(),
        };
        let model = Lookup(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 1.0, 1.0]);
        let rep = minimal_pair_accuracy(&model, &[mk(6, 7), mk(6, 8)], &PairFilterReport::default(), Exec::Sequential)
            .unwrap();
        assert_eq!(rep.overall, 1.0);
        let tie = minimal_pair_accuracy(&model, &[mk(7, 8)], &PairFilterReport::default(), Exec::Sequential).unwrap();
        assert_eq!(tie.overall, 0.0);
    }

    #[test]
    fn all_filtered_is_error() {
        let mut f = PairFilterReport::default();
        f.filtered.insert("x".into(), 3);
        assert!(minimal_pair_accuracy(&Lookup(vec![0.0; 6]), &[], &f, Exec::Sequential).is_err());
    }

    #[test]
    fn kl_formula_on_fixed_distributions() {
        let p: [f64; 3] = [0.7, 0.2, 0.1];
        let q: [f64; 3] = [0.1, 0.2, 0.7];
        let lp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
        let lq: Vec<f64> = q.iter().map(|x| x.ln()).collect();
        let kl = |a: &[f64; 3], b: &[f64; 3]| -> f64 { a.iter().zip(b).map(|(x, y)| x * (x / y).ln()).sum() };
        let want = kl(&p, &q) + kl(&q, &p);
        assert!((symmetric_kl_from_logits(&lp, &lq) - want).abs() < 1e-10);
    }

    /// Bag-of-tokens classifier: position blind.
    struct Bag;

    impl SequenceClassifier for Bag {
        fn class_logits(&self, ids: &[u32]) -> Result<Vec<f64>> {
            let s: u32 = ids.iter().sum();
            Ok(vec![(s % 2) as f64, 1.0 - (s % 2) as f64])
        }
    }

    #[test]
    fn identity_shuffles_and_bag_models_show_no_drop() {
        let dev: Vec<LabeledExample> = (0..20)
            .map(|i| LabeledExample {
                ids: vec![CLS, 5 + i, 6, 7 + i % 3, SEP],
                label: (i % 2) as usize,
            })
            .collect();
        let o = order_sensitivity(&Bag, &dev, &mut IdentityPermutation, 10, Exec::Sequential).unwrap();
        assert!(o.drop.abs() < 1e-12, "{}", o.drop);
        let o = order_sensitivity(&Bag, &dev, &mut rng::seeded(2), 10, Exec::Sequential).unwrap();
        assert!(o.drop.abs() < 1e-12, "{}", o.drop);
    }
}
