//! One-seed VAN vs ADV pipeline on the synthetic corpus: pretrain a base
//! encoder with MLM, fine-tune it twice (vanilla and PGD), then run every
//! analysis on base, VAN and ADV.

use serde::{Deserialize, Serialize};

use crate::csvout::{fmt_f64, Table};
use crate::data::{encode_pairs, generate_synthetic, ClassificationDataset, DepTreebank, GrammarSpec, SyntheticCorpus, Vocab};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::intrinsic::{spectral_profile, svd_substitution_accuracy, tree_profile, SpectralProfile, SvdReport, TreeProfile};
use crate::model::{ModelConfig, Parameters};
use crate::probes_free::{minimal_pair_accuracy, order_sensitivity, symmetrized_kl, OrderSensitivity, PairReport};
use crate::probes_param::{attach_to_previous, layer_sweep, ProbeConfig, ProbeData, ProbeRow, ProbeTask, ProbeTrainConfig};
use crate::rng;
use crate::train::{mlm_pretrain, run_training, select_best, PgdConfig, TrainConfig, TrainMode, TrainReport};

const CORPUS_STREAM: u64 = 0xC0_4B05;
const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5_4FF1E;

/// Permutation stream used for word-order shuffles of the dev set.
pub fn shuffle_rng(seed: u64) -> rng::Rng {
    rng::stream(seed, &[SHUFFLE_STREAM])
}

/// Encoder shape; vocabulary size and class count come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let t = ModelConfig::toy(5, 1);
        ModelShape {
            n_layers: t.n_layers,
            n_heads: t.n_heads,
            d_model: t.d_model,
            d_ff: t.d_ff,
            max_len: t.max_len,
        }
    }
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize, n_classes: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            max_len: self.max_len,
            n_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub dev_fraction: f64,
    /// Dev sentences used for the KL distance to the base model.
    pub kl_sentences: usize,
    /// Dev examples used for influence graphs (trees and spectra).
    pub influence_examples: usize,
    pub shuffle_sets: usize,
    pub svd_ranks: Vec<usize>,
    /// Run the per-layer linear PARSE probe sweep on every model.
    pub probe_layers: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            dev_fraction: 0.2,
            kl_sentences: 64,
            influence_examples: 40,
            shuffle_sets: 10,
            svd_ranks: vec![1, 2],
            probe_layers: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelShape,
    pub grammar: GrammarSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub pgd: PgdConfig,
    /// When non-empty, ADV is trained once per ε in the grid (α keeps its
    /// fraction of ε) and the run with the best minimal-pair accuracy is
    /// kept; ties go to the smaller ε.
    pub epsilon_grid: Vec<f64>,
    pub probe: ProbeTrainConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            model: ModelShape::default(),
            grammar: GrammarSpec::default_toy(),
            pretrain: TrainConfig {
                learning_rate: 2e-3,
                total_steps: 1500,
                batch_size: 32,
                ..Default::default()
            },
            finetune: TrainConfig {
                learning_rate: 1e-3,
                total_steps: 600,
                batch_size: 32,
                eval_every: 50,
                ..Default::default()
            },
            pgd: PgdConfig {
                epsilon: 0.2,
                alpha: 0.04,
                n_steps: 5,
            },
            epsilon_grid: Vec::new(),
            probe: ProbeTrainConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// A reduced configuration sized for a single CPU core: 4 layers,
    /// width 32, 16 positions, a few hundred fine-tuning steps.
    pub fn desk() -> Self {
        let mut c = ExperimentConfig {
            model: ModelShape {
                n_layers: 4,
                n_heads: 4,
                d_model: 32,
                d_ff: 64,
                max_len: 16,
            },
            ..Default::default()
        };
        c.grammar.n_sentences = 600;
        c.pretrain.total_steps = 600;
        c.pretrain.batch_size = 16;
        c.pretrain.max_len = 16;
        c.finetune.total_steps = 300;
        c.finetune.batch_size = 16;
        c.finetune.max_len = 16;
        c.finetune.eval_every = 50;
        c.pgd = PgdConfig {
            epsilon: 0.05,
            alpha: 0.01,
            n_steps: 3,
        };
        c.epsilon_grid = vec![0.01, 0.02, 0.05, 0.1];
        c.probe.epochs = 10;
        c.analysis.kl_sentences = 48;
        c.analysis.influence_examples = 24;
        c
    }

    /// Derives every per-stage seed from the experiment seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pretrain.seed = rng::derive(seed, &[1]);
        self.finetune.seed = rng::derive(seed, &[2]);
        self.probe.seed = rng::derive(seed, &[3]);
        self
    }
}

/// Everything the pipeline needs before any model is trained.
pub struct Prepared {
    pub corpus: SyntheticCorpus,
    pub vocab: Vocab,
    pub dataset: ClassificationDataset,
    pub mlm_corpus: Vec<Vec<u32>>,
    pub kl_corpus: Vec<Vec<u32>>,
    pub probe_train: DepTreebank,
    pub probe_dev: DepTreebank,
    pub model_config: ModelConfig,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let mut r = rng::stream(cfg.seed, &[CORPUS_STREAM]);
    let corpus = generate_synthetic(&cfg.grammar, &mut r)?;
    let vocab = corpus.vocab();
    let max_len = cfg.model.max_len;
    let dataset = corpus.classification(&vocab, max_len, cfg.analysis.dev_fraction);
    if dataset.train.is_empty() || dataset.dev.is_empty() {
        return Err(Error::config("synthetic corpus too small for a train/dev split"));
    }
    let mlm_corpus = dataset.train.iter().map(|e| e.ids.clone()).collect();
    let kl_corpus = dataset.dev.iter().take(cfg.analysis.kl_sentences).map(|e| e.ids.clone()).collect();
    let (probe_train, probe_dev) = corpus.treebank().split_every(5);
    let model_config = cfg.model.config(vocab.len(), dataset.n_classes());
    model_config.validate()?;
    Ok(Prepared {
        corpus,
        vocab,
        dataset,
        mlm_corpus,
        kl_corpus,
        probe_train,
        probe_dev,
        model_config,
    })
}

#[derive(Debug, Clone)]
pub struct ModelAnalysis {
    pub tag: String,
    pub dev_accuracy: f64,
    pub pairs: PairReport,
    pub order: OrderSensitivity,
    pub spectral: SpectralProfile,
    pub trees: TreeProfile,
    pub svd: SvdReport,
    pub probes: Vec<ProbeRow>,
}

impl ModelAnalysis {
    pub fn last_lambda_max(&self) -> f64 {
        self.spectral.layers.last().map_or(f64::NAN, |r| r.1)
    }

    pub fn last_tree_depth(&self) -> f64 {
        self.trees.layers.last().map_or(f64::NAN, |r| r.2)
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub params: Parameters,
    pub report: TrainReport,
    pub best_mean: f64,
    /// `(step, KL to base)` at every evaluation point.
    pub kl_curve: Vec<(usize, f64)>,
}

impl FinetuneResult {
    pub fn final_kl(&self) -> f64 {
        self.kl_curve.last().map_or(f64::NAN, |p| p.1)
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    /// `(ε, minimal-pair accuracy)` for every grid point tried.
    pub epsilon_tuning: Vec<(f64, f64)>,
    pub pgd: PgdConfig,
    pub pretrain_losses: Vec<f64>,
    pub attach_to_previous: f64,
    pub van: FinetuneResult,
    pub adv: FinetuneResult,
    pub base_analysis: ModelAnalysis,
    pub van_analysis: ModelAnalysis,
    pub adv_analysis: ModelAnalysis,
}

/// Fine-tunes from `base`, recording the symmetrized KL to `base` on
/// `kl_corpus` at every evaluation point.
pub fn finetune_with_kl(
    base: &Parameters,
    data: &ClassificationDataset,
    kl_corpus: &[Vec<u32>],
    cfg: &TrainConfig,
    pgd: Option<&PgdConfig>,
    exec: Exec,
) -> Result<FinetuneResult> {
    let mut kl_curve = Vec::new();
    let mut hook = |step: usize, p: &Parameters| -> Result<Vec<(String, f64)>> {
        let kl = symmetrized_kl(base, p, kl_corpus, exec)?;
        kl_curve.push((step, kl));
        Ok(vec![("kl_to_base".into(), kl)])
    };
    let out = run_training(base.clone(), data, cfg, pgd, &mut hook, None, exec)?;
    let best_mean = select_best(&out.checkpoints, cfg.keep_best).unwrap_or(f64::NAN);
    Ok(FinetuneResult {
        params: out.params,
        report: out.report,
        best_mean,
        kl_curve,
    })
}

/// All analyses on one model.
pub fn analyze_model(
    tag: &str,
    params: &Parameters,
    prep: &Prepared,
    cfg: &ExperimentConfig,
    exec: Exec,
) -> Result<ModelAnalysis> {
    let dev = &prep.dataset.dev;
    let n_layers = params.config.n_layers;
    let all_layers: Vec<usize> = (1..=n_layers).collect();
    let dev_accuracy = crate::train::evaluate_accuracy(params, dev, exec)?;
    let (encoded, filter) = encode_pairs(&prep.corpus.pairs, &prep.vocab, params.config.max_len);
    let pairs = minimal_pair_accuracy(params, &encoded, &filter, exec)?;
    let mut perm = shuffle_rng(cfg.seed);
    let order = order_sensitivity(params, dev, &mut perm, cfg.analysis.shuffle_sets, exec)?;
    let sample = &dev[..dev.len().min(cfg.analysis.influence_examples)];
    let spectral = spectral_profile(params, sample, &all_layers, exec)?;
    let token_text = |id: u32| prep.vocab.token(id).to_string();
    let trees = tree_profile(params, sample, &all_layers, true, &token_text, exec)?;
    let svd = svd_substitution_accuracy(params, dev, &all_layers, &cfg.analysis.svd_ranks, exec)?;
    let probes = if cfg.analysis.probe_layers {
        let data = ProbeData {
            encoder: params,
            train: &prep.probe_train,
            dev: &prep.probe_dev,
            vocab: &prep.vocab,
        };
        layer_sweep(&data, &ProbeConfig::linear(ProbeTask::Parse, 0), &cfg.probe, tag, exec)?
    } else {
        Vec::new()
    };
    Ok(ModelAnalysis {
        tag: tag.into(),
        dev_accuracy,
        pairs,
        order,
        spectral,
        trees,
        svd,
        probes,
    })
}

/// Pretrains the base model with MLM.
pub fn pretrain_base(prep: &Prepared, cfg: &ExperimentConfig, exec: Exec) -> Result<(Parameters, Vec<f64>)> {
    pretrain_on(prep.model_config, &prep.mlm_corpus, cfg, exec)
}

/// MLM pretraining from the seed-derived initialisation on any corpus.
pub fn pretrain_on(
    model_config: ModelConfig,
    corpus: &[Vec<u32>],
    cfg: &ExperimentConfig,
    exec: Exec,
) -> Result<(Parameters, Vec<f64>)> {
    let init = Parameters::init(model_config, rng::derive(cfg.seed, &[INIT_STREAM]))?;
    let out = mlm_pretrain(init, corpus, &cfg.pretrain, exec)?;
    Ok((out.params, out.losses))
}

fn pair_accuracy(params: &Parameters, prep: &Prepared, exec: Exec) -> Result<f64> {
    let (encoded, filter) = encode_pairs(&prep.corpus.pairs, &prep.vocab, params.config.max_len);
    Ok(minimal_pair_accuracy(params, &encoded, &filter, exec)?.overall)
}

/// The kept ADV run, its PGD config and `(ε, pair accuracy)` per grid point.
pub type TunedAdversarial = (FinetuneResult, PgdConfig, Vec<(f64, f64)>);

/// Adversarial fine-tuning at `cfg.pgd`, or the best grid point when
/// `cfg.epsilon_grid` is non-empty.
pub fn tune_adversarial(
    base: &Parameters,
    prep: &Prepared,
    cfg: &ExperimentConfig,
    adv_cfg: &TrainConfig,
    exec: Exec,
) -> Result<TunedAdversarial> {
    if cfg.epsilon_grid.is_empty() {
        let r = finetune_with_kl(base, &prep.dataset, &prep.kl_corpus, adv_cfg, Some(&cfg.pgd), exec)?;
        return Ok((r, cfg.pgd, Vec::new()));
    }
    let frac = if cfg.pgd.epsilon > 0.0 { cfg.pgd.alpha / cfg.pgd.epsilon } else { 0.2 };
    let mut best: Option<(FinetuneResult, PgdConfig, f64)> = None;
    let mut tried = Vec::new();
    for &eps in &cfg.epsilon_grid {
        let pgd = PgdConfig::with_alpha_fraction(eps, frac, cfg.pgd.n_steps)?;
        let r = finetune_with_kl(base, &prep.dataset, &prep.kl_corpus, adv_cfg, Some(&pgd), exec)?;
        let acc = pair_accuracy(&r.params, prep, exec)?;
        log::info!("epsilon {eps}: minimal-pair accuracy {acc:.4}");
        tried.push((eps, acc));
        if best.as_ref().is_none_or(|b| acc > b.2) {
            best = Some((r, pgd, acc));
        }
    }
    let (r, pgd, _) = best.expect("grid is non-empty");
    Ok((r, pgd, tried))
}

pub fn run_seed(cfg: &ExperimentConfig, exec: Exec) -> Result<SeedResult> {
    let prep = prepare(cfg)?;
    let (base, pretrain_losses) = pretrain_base(&prep, cfg, exec)?;
    let van_cfg = TrainConfig {
        mode: TrainMode::Vanilla,
        ..cfg.finetune.clone()
    };
    let adv_cfg = TrainConfig {
        mode: TrainMode::Adversarial,
        ..cfg.finetune.clone()
    };
    let van = finetune_with_kl(&base, &prep.dataset, &prep.kl_corpus, &van_cfg, None, exec)?;
    let (adv, pgd, epsilon_tuning) = tune_adversarial(&base, &prep, cfg, &adv_cfg, exec)?;
    Ok(SeedResult {
        seed: cfg.seed,
        epsilon_tuning,
        pgd,
        pretrain_losses,
        attach_to_previous: attach_to_previous(&prep.probe_dev)?,
        base_analysis: analyze_model("base", &base, &prep, cfg, exec)?,
        van_analysis: analyze_model("VAN", &van.params, &prep, cfg, exec)?,
        adv_analysis: analyze_model("ADV", &adv.params, &prep, cfg, exec)?,
        van,
        adv,
    })
}

/// The four directional comparisons between ADV and VAN for one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Directions {
    /// `(ADV, VAN)` final KL to base; holds when ADV ≤ VAN.
    pub kl: (f64, f64),
    /// Word-order accuracy drop; holds when ADV ≥ VAN.
    pub order_drop: (f64, f64),
    /// Last-layer mean λ_max; holds when ADV ≤ VAN.
    pub lambda_max: (f64, f64),
    /// Last-layer mean tree depth; holds when ADV ≥ VAN.
    pub depth: (f64, f64),
}

impl Directions {
    pub fn of(r: &SeedResult) -> Directions {
        Directions {
            kl: (r.adv.final_kl(), r.van.final_kl()),
            order_drop: (r.adv_analysis.order.drop, r.van_analysis.order.drop),
            lambda_max: (r.adv_analysis.last_lambda_max(), r.van_analysis.last_lambda_max()),
            depth: (r.adv_analysis.last_tree_depth(), r.van_analysis.last_tree_depth()),
        }
    }

    pub fn holds(&self) -> [bool; 4] {
        [
            self.kl.0 <= self.kl.1,
            self.order_drop.0 >= self.order_drop.1,
            self.lambda_max.0 <= self.lambda_max.1,
            self.depth.0 >= self.depth.1,
        ]
    }
}

/// `(seed, metric, adv, van, holds)` rows for a set of seed results.
pub fn directions_table(results: &[SeedResult]) -> Table {
    let mut t = Table::new(&["seed", "metric", "adv", "van", "holds"]);
    for r in results {
        let d = Directions::of(r);
        let h = d.holds();
        for (k, (name, (a, v))) in [
            ("kl_to_base", d.kl),
            ("order_drop", d.order_drop),
            ("last_lambda_max", d.lambda_max),
            ("last_tree_depth", d.depth),
        ]
        .into_iter()
        .enumerate()
        {
            t.push(vec![r.seed.to_string(), name.into(), fmt_f64(a), fmt_f64(v), h[k].to_string()]);
        }
    }
    t
}
