//! The acceptance checks, each returning a verdict with a one-line detail.
//! Shared by the `acceptance` runner and the ordinary integration tests.

#![allow(dead_code)]

use std::time::Instant;

use rand::Rng;
use synprobe::data::{load_conllu, LabeledExample};
use synprobe::exec::Exec;
use synprobe::experiment::{pretrain_base, prepare, run_seed, Directions, ExperimentConfig, SeedResult};
use synprobe::graphalg::{laplacian_lambda_max, max_arborescence, maxcut_bound_check, WeightedDigraph};
use synprobe::intrinsic::{svd_substitution_accuracy, svd_truncate};
use synprobe::model::{value_and_grad, ModelConfig, Parameters, ScalarFn, CLS, SEP};
use synprobe::probes_free::{symmetrized_kl, MaskedLm};
use synprobe::probes_param::{
    attach_to_previous, evaluate_probe, extract_features, train_probe, ProbeConfig, ProbeTask,
};
use synprobe::rng;
use synprobe::train::{pgd_attack, pgd_attack_from, run_training, PgdConfig, TrainConfig, TrainMode};
use synprobe::{Matrix, Result};

use super::*;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

/// Fourth-order central difference.
fn fd(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

const FD_STEP: f64 = 1e-3;

fn sample_tokens(cfg: &ModelConfig, len: usize, seed: u64) -> Vec<u32> {
    let mut r = rng::seeded(seed);
    let mut t = vec![CLS];
    t.extend((0..len).map(|_| r.random_range(5..cfg.vocab_size as u32)));
    t.push(SEP);
    t
}

enum Objective {
    Class(usize),
    Mlm(Vec<(usize, u32)>),
    Norm(usize, usize),
}

impl Objective {
    fn scalar(&self) -> ScalarFn<'_> {
        match self {
            Objective::Class(y) => ScalarFn::ClassLoss(*y),
            Objective::Mlm(t) => ScalarFn::MlmLossSum(t),
            Objective::Norm(layer, pos) => ScalarFn::HiddenNorm { layer: *layer, pos: *pos },
        }
    }

    fn oracle(&self, p: &Parameters, toks: &[u32], off: Option<&Matrix>) -> f64 {
        match self {
            Objective::Class(y) => oracle_class_loss(p, toks, *y, off),
            Objective::Mlm(t) => {
                assert!(off.is_none());
                oracle_mlm_loss(p, toks, t)
            }
            Objective::Norm(l, pos) => oracle_hidden_norm(p, toks, *l, *pos, off),
        }
    }
}

/// Analytic parameter and input gradients against finite differences of
/// the loop-by-loop oracle, on a 2-layer model.
pub fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checked = 0usize;
    let mut value_gap: f64 = 0.0;
    for seed in 0..2u64 {
        let p = small_params(seed);
        let toks = sample_tokens(&p.config, 4, 100 + seed);
        let objectives = [
            Objective::Class(seed as usize % 3),
            Objective::Mlm(vec![(1, 6), (3, 9)]),
            Objective::Norm(1, 2),
            Objective::Norm(2, 0),
        ];
        for obj in &objectives {
            let g = value_and_grad(&p, &toks, obj.scalar(), None, true).unwrap();
            value_gap = value_gap.max((g.value - obj.oracle(&p, &toks, None)).abs());
            let grads = g.params.unwrap();
            let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
            let analytic: Vec<Vec<f64>> = grads.named().into_iter().map(|(_, t)| t.to_vec()).collect();
            for (ti, name) in names.iter().enumerate() {
                #[allow(clippy::needless_range_loop)]
                for k in 0..analytic[ti].len() {
                    let f = |x: f64| {
                        let mut q = p.clone();
                        q.named_mut()[ti].1[k] = x;
                        obj.oracle(&q, &toks, None)
                    };
                    let x0 = p.named()[ti].1[k];
                    let num = fd(&f, x0, FD_STEP);
                    let e = rel_err(analytic[ti][k], num);
                    checked += 1;
                    if e > worst.0 {
                        worst = (e, format!("{name}[{k}]"));
                    }
                }
            }
            if matches!(obj, Objective::Mlm(_)) {
                continue;
            }
            let zero = Matrix::zeros(toks.len(), p.config.d_model);
            let gi = value_and_grad(&p, &toks, obj.scalar(), Some(&zero), false).unwrap().input;
            for i in 0..toks.len() {
                for j in 0..p.config.d_model {
                    let f = |x: f64| {
                        let mut off = zero.clone();
                        off.set(i, j, x);
                        obj.oracle(&p, &toks, Some(&off))
                    };
                    let e = rel_err(gi.get(i, j), fd(&f, 0.0, FD_STEP));
                    checked += 1;
                    if e > worst.0 {
                        worst = (e, format!("input[{i},{j}]"));
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        worst.0 <= 1e-4 && value_gap <= 1e-10 && secs < 60.0,
        format!(
            "{checked} coordinates, max rel err {:.2e} at {}, value gap {:.1e}, {secs:.1}s",
            worst.0, worst.1, value_gap
        ),
    )
}

pub fn tiny_dataset(cfg: &ModelConfig, n: usize, seed: u64) -> synprobe::data::ClassificationDataset {
    let mk = |i: usize| LabeledExample {
        ids: sample_tokens(cfg, 3 + i % 4, seed * 1000 + i as u64),
        label: i % cfg.n_classes,
    };
    synprobe::data::ClassificationDataset {
        labels: (0..cfg.n_classes).map(|c| format!("c{c}")).collect(),
        train: (0..n).map(mk).collect(),
        dev: (n..n + n / 2).map(mk).collect(),
    }
}

fn tiny_train_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        total_steps: 12,
        batch_size: 4,
        max_len: 10,
        seed: 5,
        mode,
        eval_every: 4,
        keep_best: 2,
        mask_rate: 0.15,
    }
}

fn no_hook() -> impl FnMut(usize, &Parameters) -> Result<Vec<(String, f64)>> {
    |_, _| Ok(Vec::new())
}

/// Norm bound over a whole adversarial run, ε = 0 equivalence with vanilla,
/// and the one-step closed form from a zero start.
pub fn pgd_contract() -> Verdict {
    let p = Parameters::init_with_std(small_config(), 3, 0.2).unwrap();
    let data = tiny_dataset(&p.config, 16, 1);
    let eps = 0.3;
    let pgd = PgdConfig::with_alpha_fraction(eps, 0.2, 4).unwrap();
    let adv = run_training(
        p.clone(),
        &data,
        &tiny_train_config(TrainMode::Adversarial),
        Some(&pgd),
        &mut no_hook(),
        None,
        Exec::default(),
    )
    .unwrap();
    // independent re-measurement on the final parameters
    let mut remeasured: f64 = 0.0;
    for (i, ex) in data.train.iter().enumerate() {
        let out = pgd_attack(&adv.params, &ex.ids, ex.label, &pgd, &mut rng::seeded(i as u64)).unwrap();
        remeasured = remeasured.max(out.delta.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    let bound_ok = adv.report.max_delta_norm <= eps + 1e-6 && remeasured <= eps + 1e-6;

    let van = run_training(
        p.clone(),
        &data,
        &tiny_train_config(TrainMode::Vanilla),
        None,
        &mut no_hook(),
        None,
        Exec::default(),
    )
    .unwrap();
    let zero = run_training(
        p.clone(),
        &data,
        &tiny_train_config(TrainMode::Adversarial),
        Some(&PgdConfig::zero_radius(4)),
        &mut no_hook(),
        None,
        Exec::default(),
    )
    .unwrap();
    let identical = zero.params == van.params && zero.report.curve == van.report.curve;

    // N = 1, α = ε, δ₀ = 0 ⇒ δ = ε·g/‖g‖ with g the input gradient of the loss
    let ex = &data.train[2];
    let one = PgdConfig::new(eps, eps, 1).unwrap();
    let start = Matrix::zeros(ex.ids.len(), p.config.d_model);
    let delta = pgd_attack_from(&p, &ex.ids, ex.label, &one, start.clone()).unwrap().delta;
    let mut g = Matrix::zeros(ex.ids.len(), p.config.d_model);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let f = |x: f64| {
                let mut off = start.clone();
                off.set(i, j, x);
                oracle_class_loss(&p, &ex.ids, ex.label, Some(&off))
            };
            g.set(i, j, fd(&f, 0.0, FD_STEP));
        }
    }
    let gn = g.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let closed_gap = delta
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(d, gi)| (d - eps * gi / gn).abs())
        .fold(0.0, f64::max);
    Verdict::new(
        bound_ok && identical && closed_gap <= 1e-9,
        format!(
            "max ‖δ‖ {:.12} (re-measured {:.12}) vs ε {eps}; ε=0 identical to vanilla: {identical}; one-step gap {closed_gap:.2e}",
            adv.report.max_delta_norm, remeasured
        ),
    )
}

fn arborescence_is_valid(parent: &[Option<usize>], root: usize, w: &[Vec<f64>], weight: f64) -> bool {
    let n = parent.len();
    if parent[root].is_some() {
        return false;
    }
    let mut total = 0.0;
    for v in 0..n {
        if v == root {
            continue;
        }
        let Some(u) = parent[v] else { return false };
        if u >= n || u == v {
            return false;
        }
        total += w[v][u];
        let (mut x, mut steps) = (v, 0);
        while x != root {
            match parent[x] {
                Some(y) => x = y,
                None => return false,
            }
            steps += 1;
            if steps > n {
                return false;
            }
        }
    }
    (total - weight).abs() < 1e-9
}

pub fn edmonds_oracle() -> Verdict {
    let mut r = rng::seeded(2024);
    let (mut optimal, mut valid) = (0, 0);
    for _ in 0..200 {
        let n = r.random_range(3..=6);
        let w: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { r.random_range(-1.0..1.0) }).collect())
            .collect();
        let root = r.random_range(0..n);
        let g = WeightedDigraph::new(to_matrix(&w)).unwrap();
        let t = max_arborescence(&g, root).unwrap();
        let best = brute_force_arborescence(&w, root);
        optimal += ((t.weight - best).abs() < 1e-9) as usize;
        valid += (t.validate().is_ok() && arborescence_is_valid(&t.parent, root, &w, t.weight)) as usize;
    }
    Verdict::new(optimal == 200 && valid == 200, format!("optimal {optimal}/200, valid {valid}/200"))
}

pub fn spectral_oracle() -> Verdict {
    let mut r = rng::seeded(77);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..=8);
        let a = random_symmetric(n, &mut r);
        let got = laplacian_lambda_max(&to_matrix(&a)).unwrap();
        worst = worst.max((got - dense_lambda_max(&a)).abs());
    }
    let mut holds = 0;
    let mut exact_cut = 0;
    for _ in 0..50 {
        let n = r.random_range(2..=10);
        let a = random_symmetric(n, &mut r);
        let check = maxcut_bound_check(&to_matrix(&a)).unwrap();
        let cut = brute_force_max_cut(&a);
        let bound = n as f64 / 4.0 * dense_lambda_max(&a);
        holds += (check.holds && bound >= cut - 1e-12) as usize;
        exact_cut += ((check.max_cut - cut).abs() < 1e-12) as usize;
    }
    Verdict::new(
        worst <= 1e-8 && holds == 50 && exact_cut == 50,
        format!("λ_max max abs gap {worst:.2e} over 100 graphs; bound holds {holds}/50; max cut agrees {exact_cut}/50"),
    )
}

pub fn svd_contract() -> Verdict {
    let p = small_params(11);
    let dev: Vec<LabeledExample> = (0..40)
        .map(|i| LabeledExample {
            ids: sample_tokens(&p.config, 2 + i % 6, 500 + i as u64),
            label: i % 3,
        })
        .collect();
    let layers: Vec<usize> = (1..=p.config.n_layers).collect();
    let rep = svd_substitution_accuracy(&p, &dev, &layers, &[p.config.d_model], Exec::default()).unwrap();
    let unchanged = rep.rows.iter().all(|row| row.accuracy == rep.baseline);
    let oracle_acc = dev
        .iter()
        .filter(|e| synprobe::tensor::argmax(&oracle_class_logits(&p, &e.ids, None)) == e.label)
        .count() as f64
        / dev.len() as f64;

    let mut r = rng::seeded(31);
    let mut monotone = 0;
    for _ in 0..100 {
        let (rows, cols) = (r.random_range(2..=9), r.random_range(2..=9));
        let m = Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0));
        let errs: Vec<f64> = (1..=rows.min(cols))
            .map(|k| {
                let a = svd_truncate(&m, k).unwrap();
                m.as_slice().iter().zip(a.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        monotone += errs.windows(2).all(|w| w[1] <= w[0] + 1e-12) as usize;
    }
    Verdict::new(
        unchanged && oracle_acc == rep.baseline && monotone == 100,
        format!(
            "full-rank accuracy unchanged at {} layers: {unchanged} (baseline {:.4}, oracle {:.4}); error non-increasing {monotone}/100",
            layers.len(),
            rep.baseline,
            oracle_acc
        ),
    )
}

/// Fixed per-position logits, independent of context.
struct Stub(Vec<Vec<f64>>);

impl MaskedLm for Stub {
    fn max_len(&self) -> usize {
        16
    }
    fn mlm_logits(&self, _ids: &[u32], positions: &[usize]) -> Result<Matrix> {
        Ok(Matrix::from_rows(&positions.iter().map(|&p| self.0[p].clone()).collect::<Vec<_>>()))
    }
}

fn direct_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let s: f64 = z.iter().map(|x| x.exp()).sum();
    z.iter().map(|x| x.exp() / s).collect()
}

pub fn kl_contract() -> Verdict {
    let p = small_params(4);
    let corpus: Vec<Vec<u32>> = (0..6).map(|i| sample_tokens(&p.config, 3 + i % 3, 900 + i as u64)).collect();
    let same = symmetrized_kl(&p, &p.clone(), &corpus, Exec::default()).unwrap();
    let q = small_params(5);
    let ab = symmetrized_kl(&p, &q, &corpus, Exec::default()).unwrap();
    let ba = symmetrized_kl(&q, &p, &corpus, Exec::default()).unwrap();

    let mut r = rng::seeded(8);
    let v = 7;
    let logits = |r: &mut rng::Rng| -> Vec<Vec<f64>> {
        (0..16).map(|_| (0..v).map(|_| r.random_range(-2.0..2.0)).collect()).collect()
    };
    let (la, lb) = (logits(&mut r), logits(&mut r));
    let stub_corpus = vec![vec![CLS, 5, 6, 7, SEP], vec![CLS, 9, SEP]];
    let got = symmetrized_kl(&Stub(la.clone()), &Stub(lb.clone()), &stub_corpus, Exec::Sequential).unwrap();
    let positions = [1usize, 2, 3, 1];
    let want = positions
        .iter()
        .map(|&k| {
            let (pa, pb) = (softmax(&la[k]), softmax(&lb[k]));
            direct_kl(&pa, &pb) + direct_kl(&pb, &pa)
        })
        .sum::<f64>()
        / positions.len() as f64;
    let gap = (got - want).abs();
    Verdict::new(
        same == 0.0 && ab == ba && gap <= 1e-10,
        format!("identical {same}; swap {ab} vs {ba}; stub gap {gap:.2e}"),
    )
}

/// The four VAN vs ADV directions over fixed seeds; each must hold in at
/// least `need` seeds.
pub fn end_to_end(results: &[SeedResult], need: usize) -> Vec<(String, Verdict)> {
    let dirs: Vec<Directions> = results.iter().map(Directions::of).collect();
    let names = [
        "(a) ADV final KL-to-base <= VAN",
        "(b) ADV word-order drop >= VAN",
        "(c) ADV last-layer mean lambda_max <= VAN",
        "(d) ADV last-layer mean tree depth >= VAN",
    ];
    let pick = |d: &Directions, k: usize| match k {
        0 => d.kl,
        1 => d.order_drop,
        2 => d.lambda_max,
        _ => d.depth,
    };
    (0..4)
        .map(|k| {
            let hits = dirs.iter().filter(|d| d.holds()[k]).count();
            let effects: Vec<String> = dirs
                .iter()
                .zip(results)
                .map(|(d, r)| {
                    let (a, v) = pick(d, k);
                    format!("s{}: {:+.4}", r.seed, a - v)
                })
                .collect();
            (
                names[k].to_string(),
                Verdict::new(
                    hits >= need,
                    format!("{hits}/{} seeds; ADV−VAN {}", results.len(), effects.join(", ")),
                ),
            )
        })
        .collect()
}

pub const E2E_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

pub fn e2e_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk().with_seed(seed);
    c.analysis.probe_layers = false;
    c
}

pub fn run_e2e() -> Vec<SeedResult> {
    E2E_SEEDS
        .iter()
        .map(|&s| run_seed(&e2e_config(s), Exec::default()).unwrap())
        .collect()
}

/// Linear PARSE probe on the last layer of a pretrained toy encoder versus
/// the attach-to-previous baseline, on the fixture treebank.
pub fn probe_sanity() -> Verdict {
    let bank = load_conllu(&fixture_path("sample.conllu")).unwrap();
    let (train, dev) = bank.split_every(5);
    let cfg = ExperimentConfig::desk().with_seed(0);
    let prep = prepare(&cfg).unwrap();
    let (encoder, _) = pretrain_base(&prep, &cfg, Exec::default()).unwrap();
    let layer = encoder.config.n_layers;
    let (tr, _) = extract_features(&encoder, &train, &prep.vocab, layer, Exec::default()).unwrap();
    let (dv, dropped) = extract_features(&encoder, &dev, &prep.vocab, layer, Exec::default()).unwrap();
    let probe = train_probe(&tr, &ProbeConfig::linear(ProbeTask::Parse, layer), &cfg.probe, encoder.config.d_model).unwrap();
    let uas = evaluate_probe(&probe, &dv).unwrap();
    let base = attach_to_previous(&dev).unwrap();
    Verdict::new(
        bank.len() >= 200 && dropped == 0 && uas >= base + 0.05,
        format!(
            "{} sentences; probe UAS {:.4} vs attach-to-previous {:.4} (+{:.1} points)",
            bank.len(),
            uas,
            base,
            100.0 * (uas - base)
        ),
    )
}
