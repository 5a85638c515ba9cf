//! Subcommand implementations. Each reads and writes inside one run
//! directory.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use synprobe::csvout::{fmt_f64, Table};
use synprobe::data::{encode_pairs, to_conllu, write_pairs};
use synprobe::exec::Exec;
use synprobe::experiment::{prepare, pretrain_on, shuffle_rng};
use synprobe::intrinsic::{spectral_profile, svd_substitution_accuracy, tree_profile};
use synprobe::model::{io, Parameters};
use synprobe::probes_free::{kl_table, minimal_pair_accuracy, order_sensitivity, symmetrized_kl};
use synprobe::probes_param::{
    attach_to_previous, evaluate_probe, extract_features, layer_sweep, pareto_sweep, pareto_table, probe_table,
    train_probe, ProbeConfig, ProbeData, ProbeKind, ProbeRow, ProbeTask,
};
use synprobe::train::{mlm_accuracy, run_training, select_best, unigram_majority_baseline, PgdConfig, TrainConfig, TrainMode};

use crate::config::RunConfig;
use crate::data::{save_vocab, RunData};
use crate::error::{CliError, CliResult};
use crate::tables::{self, display_tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Base,
    Van,
    Adv,
}

impl Model {
    pub fn stem(self) -> &'static str {
        match self {
            Model::Base => "base",
            Model::Van => "van",
            Model::Adv => "adv",
        }
    }

    fn tag(self) -> String {
        display_tag(self.stem())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FinetuneMode {
    Vanilla,
    Adv,
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    pub exec: Exec,
}

fn write(t: &Table, dir: &Path, name: &str) -> CliResult<()> {
    t.write(&dir.join(name))?;
    log::info!("wrote {}", dir.join(name).display());
    Ok(())
}

fn summary(tag: &str, rows: &[(&str, f64)]) -> Table {
    let mut t = Table::new(&["model_tag", "metric", "value"]);
    for (m, v) in rows {
        t.push(vec![tag.into(), (*m).into(), fmt_f64(*v)]);
    }
    t
}

pub fn load_checkpoint(path: &Path) -> CliResult<Parameters> {
    if !path.exists() {
        return Err(CliError::data(format!("missing checkpoint {}", path.display())));
    }
    io::load(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

impl Ctx {
    fn data(&self) -> CliResult<RunData> {
        RunData::load(&self.cfg, &self.dir)
    }

    fn model(&self, model: Model, checkpoint: Option<&Path>, data: &RunData) -> CliResult<Parameters> {
        let path = checkpoint.map_or_else(|| self.dir.join(format!("{}.json", model.stem())), Path::to_path_buf);
        let p = load_checkpoint(&path)?;
        data.check_compatible(&p, &path.display().to_string())?;
        Ok(p)
    }

    pub fn pretrain(&self) -> CliResult<()> {
        let exp = &self.cfg.experiment;
        let data = self.data()?;
        let (params, losses) = pretrain_on(data.model_config, &data.mlm_corpus, exp, self.exec)?;
        io::save(&params, &self.dir.join("base.json"))?;
        save_vocab(&data.vocab, &self.dir)?;
        let mut curve = Table::new(&["step", "split", "metric", "value"]);
        for (i, l) in losses.iter().enumerate() {
            curve.push(vec![(i + 1).to_string(), "train".into(), "mlm_loss".into(), fmt_f64(*l)]);
        }
        write(&curve, &self.dir, "train_base.csv")?;
        let heldout: Vec<Vec<u32>> = data.dataset.dev.iter().map(|e| e.ids.clone()).collect();
        let rate = exp.pretrain.mask_rate;
        let acc = mlm_accuracy(&params, &heldout, rate, exp.pretrain.seed, self.exec)?;
        let unigram = unigram_majority_baseline(&data.mlm_corpus, &heldout, rate, exp.pretrain.seed);
        write(
            &summary("base", &[("mlm/heldout_accuracy", acc), ("mlm/unigram_baseline", unigram)]),
            &self.dir,
            "summary_base.csv",
        )
    }

    /// One fine-tuning run with KL-to-base recorded at every evaluation and
    /// checkpoints under `ckpt_dir`.
    fn train_one(
        &self,
        base: &Parameters,
        data: &RunData,
        tcfg: &TrainConfig,
        pgd: Option<&PgdConfig>,
        ckpt_dir: &Path,
    ) -> CliResult<(synprobe::train::TrainOutcome, Vec<(usize, f64)>)> {
        if ckpt_dir.exists() {
            std::fs::remove_dir_all(ckpt_dir)?;
        }
        std::fs::create_dir_all(ckpt_dir)?;
        let mut kl = Vec::new();
        let exec = self.exec;
        let mut hook = |step: usize, p: &Parameters| -> synprobe::Result<Vec<(String, f64)>> {
            let d = symmetrized_kl(base, p, &data.kl_corpus, exec)?;
            kl.push((step, d));
            Ok(vec![("kl_to_base".into(), d)])
        };
        let out = run_training(base.clone(), &data.dataset, tcfg, pgd, &mut hook, Some(ckpt_dir), exec)?;
        Ok((out, kl))
    }

    fn pair_accuracy(&self, params: &Parameters, data: &RunData) -> CliResult<f64> {
        let (enc, filter) = encode_pairs(&data.pairs, &data.vocab, params.config.max_len);
        Ok(minimal_pair_accuracy(params, &enc, &filter, self.exec)?.overall)
    }

    /// `grid` selects ε by minimal-pair accuracy; ties keep the earlier grid
    /// point.
    pub fn finetune(&self, mode: FinetuneMode, grid: bool) -> CliResult<()> {
        let exp = &self.cfg.experiment;
        let data = self.data()?;
        let base = self.model(Model::Base, None, &data)?;
        let (model, train_mode) = match mode {
            FinetuneMode::Vanilla => (Model::Van, TrainMode::Vanilla),
            FinetuneMode::Adv => (Model::Adv, TrainMode::Adversarial),
        };
        let tcfg = TrainConfig {
            mode: train_mode,
            ..exp.finetune.clone()
        };
        let stem = model.stem();
        let ckpt_dir = self.dir.join(format!("ckpt-{stem}"));
        let (out, kl, pgd) = match mode {
            FinetuneMode::Vanilla => {
                let (o, k) = self.train_one(&base, &data, &tcfg, None, &ckpt_dir)?;
                (o, k, None)
            }
            FinetuneMode::Adv if !grid => {
                let (o, k) = self.train_one(&base, &data, &tcfg, Some(&exp.pgd), &ckpt_dir)?;
                (o, k, Some(exp.pgd))
            }
            FinetuneMode::Adv => {
                if data.pairs.is_empty() {
                    return Err(CliError::usage("epsilon grid tuning needs minimal pairs; set data.pairs or pass --epsilon"));
                }
                let frac = if exp.pgd.epsilon > 0.0 { exp.pgd.alpha / exp.pgd.epsilon } else { 0.2 };
                let mut tuning = Table::new(&["epsilon", "alpha", "pair_accuracy", "selected"]);
                let mut best: Option<(usize, f64)> = None;
                let mut runs = Vec::new();
                for (i, &eps) in exp.epsilon_grid.iter().enumerate() {
                    let pgd = PgdConfig::with_alpha_fraction(eps, frac, exp.pgd.n_steps)?;
                    let dir = self.dir.join(format!("ckpt-adv-grid{i}"));
                    let (o, k) = self.train_one(&base, &data, &tcfg, Some(&pgd), &dir)?;
                    let acc = self.pair_accuracy(&o.params, &data)?;
                    log::info!("epsilon {eps}: minimal-pair accuracy {acc:.4}");
                    if best.is_none_or(|b| acc > b.1) {
                        best = Some((i, acc));
                    }
                    runs.push((o, k, pgd, dir, acc));
                }
                let (bi, _) = best.ok_or_else(|| CliError::usage("empty epsilon grid"))?;
                let mut chosen = None;
                for (i, (o, k, pgd, dir, acc)) in runs.into_iter().enumerate() {
                    tuning.push(vec![fmt_f64(pgd.epsilon), fmt_f64(pgd.alpha), fmt_f64(acc), (i == bi).to_string()]);
                    if i == bi {
                        if ckpt_dir.exists() {
                            std::fs::remove_dir_all(&ckpt_dir)?;
                        }
                        std::fs::rename(&dir, &ckpt_dir)?;
                        chosen = Some((o, k, Some(pgd)));
                    } else {
                        std::fs::remove_dir_all(&dir)?;
                    }
                }
                write(&tuning, &self.dir, "epsilon_tuning.csv")?;
                chosen.expect("best index is in range")
            }
        };
        io::save(&out.params, &self.dir.join(format!("{stem}.json")))?;
        write(&out.report.to_table(), &self.dir, &format!("train_{stem}.csv"))?;
        write(&kl_table(&kl), &self.dir, &format!("kl_{stem}.csv"))?;
        let final_acc = out.checkpoints.last().map_or(f64::NAN, |c| c.dev_metric);
        let mut rows = vec![
            ("dev/final_accuracy", final_acc),
            ("dev/best_k_mean", select_best(&out.checkpoints, tcfg.keep_best).unwrap_or(f64::NAN)),
        ];
        if let Some(p) = pgd {
            rows.extend([
                ("pgd/epsilon", p.epsilon),
                ("pgd/alpha", p.alpha),
                ("pgd/n_steps", p.n_steps as f64),
                ("pgd/max_delta_norm", out.report.max_delta_norm),
            ]);
        }
        write(&summary(&model.tag(), &rows), &self.dir, &format!("summary_{stem}.csv"))
    }

    pub fn pairs(&self, model: Model, checkpoint: Option<&Path>) -> CliResult<()> {
        let data = self.data()?;
        let params = self.model(model, checkpoint, &data)?;
        if data.pairs.is_empty() {
            return Err(CliError::usage("no minimal pairs: set data.pairs"));
        }
        let (enc, filter) = encode_pairs(&data.pairs, &data.vocab, params.config.max_len);
        let report = minimal_pair_accuracy(&params, &enc, &filter, self.exec)?;
        write(&report.to_table(&model.tag()), &self.dir, &format!("pairs_{}.csv", model.stem()))
    }

    /// KL to base for every saved checkpoint of a fine-tuned model.
    pub fn kl(&self, model: Model) -> CliResult<()> {
        if model == Model::Base {
            return Err(CliError::usage("kl compares a fine-tuned model (van or adv) with base"));
        }
        let data = self.data()?;
        let base = self.model(Model::Base, None, &data)?;
        let ckpt_dir = self.dir.join(format!("ckpt-{}", model.stem()));
        let entries = std::fs::read_dir(&ckpt_dir)
            .map_err(|e| CliError::data(format!("missing checkpoints {}: {e}", ckpt_dir.display())))?;
        let mut steps: Vec<(usize, PathBuf)> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let step = name.strip_prefix("step_")?.strip_suffix(".json")?.parse().ok()?;
                Some((step, e.path()))
            })
            .collect();
        if steps.is_empty() {
            return Err(CliError::data(format!("no step_<n>.json checkpoints in {}", ckpt_dir.display())));
        }
        steps.sort();
        let mut points = Vec::with_capacity(steps.len());
        for (step, path) in steps {
            let p = load_checkpoint(&path)?;
            data.check_compatible(&p, &path.display().to_string())?;
            points.push((step, symmetrized_kl(&base, &p, &data.kl_corpus, self.exec)?));
        }
        write(&kl_table(&points), &self.dir, &format!("kl_{}.csv", model.stem()))
    }

    pub fn order(&self, model: Model, checkpoint: Option<&Path>, sets: Option<usize>) -> CliResult<()> {
        let data = self.data()?;
        let params = self.model(model, checkpoint, &data)?;
        let exp = &self.cfg.experiment;
        let mut perm = shuffle_rng(exp.seed);
        let n_sets = sets.unwrap_or(exp.analysis.shuffle_sets);
        let o = order_sensitivity(&params, &data.dataset.dev, &mut perm, n_sets, self.exec)?;
        write(&o.to_table(&model.tag()), &self.dir, &format!("order_{}.csv", model.stem()))
    }

    fn attach_baseline(&self, dev: &synprobe::data::DepTreebank) -> CliResult<()> {
        let b = attach_to_previous(dev)?;
        write(&summary("baseline", &[("uas/attach_to_previous", b)]), &self.dir, "summary_baseline.csv")
    }

    pub fn probe_task(&self, model: Model, checkpoint: Option<&Path>, cfg: ProbeConfig) -> CliResult<()> {
        let data = self.data()?;
        let params = self.model(model, checkpoint, &data)?;
        let (train, dev) = data.treebank()?;
        cfg.validate(params.config.d_model, params.config.n_layers)?;
        let (tr, dropped_tr) = extract_features(&params, train, &data.vocab, cfg.layer, self.exec)?;
        let (dv, dropped_dv) = extract_features(&params, dev, &data.vocab, cfg.layer, self.exec)?;
        if dropped_tr + dropped_dv > 0 {
            log::warn!("{} sentences longer than the model's window were skipped", dropped_tr + dropped_dv);
        }
        let probe = train_probe(&tr, &cfg, &self.cfg.experiment.probe, params.config.d_model)?;
        let row = ProbeRow {
            model_tag: model.tag(),
            task: cfg.task,
            layer: cfg.layer,
            rank: (cfg.kind == ProbeKind::LowrankMlp).then_some(cfg.rank),
            n_params: probe.num_parameters(),
            value: evaluate_probe(&probe, &dv)?,
        };
        let mut name = format!("probe_{}_{}_layer{}", model.stem(), cfg.task.name(), cfg.layer);
        if let Some(r) = row.rank {
            name.push_str(&format!("_rank{r}"));
        }
        if cfg.task == ProbeTask::Parse {
            self.attach_baseline(dev)?;
        }
        write(&probe_table(&[row]), &self.dir, &format!("{name}.csv"))
    }

    pub fn layer_sweep(&self, model: Model, checkpoint: Option<&Path>, template: ProbeConfig) -> CliResult<()> {
        let data = self.data()?;
        let params = self.model(model, checkpoint, &data)?;
        let (train, dev) = data.treebank()?;
        let pd = ProbeData {
            encoder: &params,
            train,
            dev,
            vocab: &data.vocab,
        };
        let rows = layer_sweep(&pd, &template, &self.cfg.experiment.probe, &model.tag(), self.exec)?;
        let mut name = format!("probe_{}_{}_layers", model.stem(), template.task.name());
        if template.kind == ProbeKind::LowrankMlp {
            name.push_str(&format!("_rank{}", template.rank));
        }
        if template.task == ProbeTask::Parse {
            self.attach_baseline(dev)?;
        }
        write(&probe_table(&rows), &self.dir, &format!("{name}.csv"))
    }

    pub fn pareto(&self, model: Model, checkpoint: Option<&Path>, ranks: &[usize]) -> CliResult<()> {
        let data = self.data()?;
        let params = self.model(model, checkpoint, &data)?;
        let (train, dev) = data.treebank()?;
        let pd = ProbeData {
            encoder: &params,
            train,
            dev,
            vocab: &data.vocab,
        };
        let rows = pareto_sweep(&pd, ranks, &self.cfg.experiment.probe, &model.tag(), self.exec)?;
        self.attach_baseline(dev)?;
        write(&pareto_table(&rows), &self.dir, &format!("pareto_{}.csv", model.stem()))
    }

    fn layers(params: &Parameters) -> Vec<usize> {
        (1..=params.config.n_layers).collect()
    }

    pub fn svd(&self, model: Model, checkpoint: Option<&Path>, ranks: &[usize]) -> CliResult<()> {
        let data = self.data()?;
        let params = self.model(model, checkpoint, &data)?;
        let r = svd_substitution_accuracy(&params, &data.dataset.dev, &Self::layers(&params), ranks, self.exec)?;
        write(&r.to_table(&model.tag()), &self.dir, &format!("svd_{}.csv", model.stem()))
    }

    fn influence_sample<'a>(&self, data: &'a RunData) -> &'a [synprobe::data::LabeledExample] {
        let dev = &data.dataset.dev;
        &dev[..dev.len().min(self.cfg.experiment.analysis.influence_examples)]
    }

    pub fn trees(&self, model: Model, checkpoint: Option<&Path>, normalize: bool) -> CliResult<()> {
        let data = self.data()?;
        let params = self.model(model, checkpoint, &data)?;
        let text = |id: u32| data.vocab.token(id).to_string();
        let sample = self.influence_sample(&data);
        let p = tree_profile(&params, sample, &Self::layers(&params), normalize, &text, self.exec)?;
        if p.skipped > 0 {
            log::warn!("{} (example, layer) cells skipped as degenerate", p.skipped);
        }
        let stem = model.stem();
        write(&p.to_table(&model.tag()), &self.dir, &format!("trees_{stem}.csv"))?;
        std::fs::write(self.dir.join(format!("trees_{stem}.json")), serde_json::to_string_pretty(&p.dumps)? + "\n")?;
        Ok(())
    }

    pub fn spectral(&self, model: Model, checkpoint: Option<&Path>) -> CliResult<()> {
        let data = self.data()?;
        let params = self.model(model, checkpoint, &data)?;
        let sample = self.influence_sample(&data);
        let p = spectral_profile(&params, sample, &Self::layers(&params), self.exec)?;
        let stem = model.stem();
        write(&p.to_table(&model.tag()), &self.dir, &format!("spectral_{stem}.csv"))?;
        write(&p.per_example_table(&model.tag()), &self.dir, &format!("lambda_examples_{stem}.csv"))
    }

    /// Writes the configured synthetic corpus in the external formats.
    pub fn export_data(&self) -> CliResult<()> {
        let prep = prepare(&self.cfg.experiment)?;
        let mut tsv = String::new();
        for s in &prep.corpus.sentences {
            tsv.push_str(&format!("{}\t{}\n", prep.corpus.labels[s.topic], s.words.join(" ")));
        }
        std::fs::write(self.dir.join("synthetic.tsv"), tsv)?;
        std::fs::write(self.dir.join("synthetic.pairs.jsonl"), write_pairs(&prep.corpus.pairs))?;
        std::fs::write(self.dir.join("synthetic.conllu"), to_conllu(&prep.corpus.treebank()))?;
        Ok(())
    }

    pub fn report(&self) -> CliResult<String> {
        let c = tables::collect(&self.dir)?;
        for (f, want, got) in &c.mismatches {
            log::warn!("{f}: expected columns {want}, found {got}; skipped");
        }
        if c.metrics.is_empty() {
            return Err(CliError::data(format!("no known CSV artifacts in {}", self.dir.display())));
        }
        let t = tables::report_table(&c);
        write(&t, &self.dir, "report.csv")?;
        Ok(t.to_csv_string())
    }
}
