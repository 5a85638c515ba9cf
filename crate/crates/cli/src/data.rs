//! Inputs for a run: the synthetic corpus by default, or external files.

use std::path::Path;

use synprobe::data::{
    load_conllu, load_pairs, load_tsv, split_words, ClassificationDataset, DepTreebank, MinimalPair, Vocab,
};
use synprobe::experiment::prepare;
use synprobe::model::{ModelConfig, Parameters};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const VOCAB_FILE: &str = "vocab.json";

pub struct RunData {
    pub vocab: Vocab,
    pub dataset: ClassificationDataset,
    pub mlm_corpus: Vec<Vec<u32>>,
    pub kl_corpus: Vec<Vec<u32>>,
    pub pairs: Vec<MinimalPair>,
    pub treebank: Option<(DepTreebank, DepTreebank)>,
    pub model_config: ModelConfig,
}

fn load_saved_vocab(run_dir: &Path) -> CliResult<Option<Vocab>> {
    let path = run_dir.join(VOCAB_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    let v: Vocab = serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(Some(v.reindex()))
}

pub fn save_vocab(vocab: &Vocab, run_dir: &Path) -> CliResult<()> {
    std::fs::write(run_dir.join(VOCAB_FILE), serde_json::to_string_pretty(vocab)? + "\n")?;
    Ok(())
}

impl RunData {
    /// Builds the run's data. A vocabulary saved by `pretrain` in `run_dir`
    /// takes precedence so later stages encode text exactly as the base
    /// model saw it.
    pub fn load(cfg: &RunConfig, run_dir: &Path) -> CliResult<RunData> {
        let exp = &cfg.experiment;
        let saved = load_saved_vocab(run_dir)?;
        let paths = &cfg.data;
        let external_pairs = paths.pairs.as_deref().map(load_pairs).transpose()?;
        let external_bank = paths.conllu.as_deref().map(load_conllu).transpose()?;
        let max_len = exp.model.max_len;

        let mut data = match &paths.tsv {
            None => {
                let prep = prepare(exp)?;
                if let Some(v) = &saved {
                    if v.tokens() != prep.vocab.tokens() {
                        return Err(CliError::data(format!(
                            "{} does not match the configured synthetic corpus; was the config changed after pretrain?",
                            run_dir.join(VOCAB_FILE).display()
                        )));
                    }
                }
                RunData {
                    vocab: prep.vocab,
                    dataset: prep.dataset,
                    mlm_corpus: prep.mlm_corpus,
                    kl_corpus: prep.kl_corpus,
                    pairs: prep.corpus.pairs,
                    treebank: Some((prep.probe_train, prep.probe_dev)),
                    model_config: prep.model_config,
                }
            }
            Some(tsv) => {
                let items = load_tsv(tsv)?;
                let vocab = match saved {
                    Some(v) => v,
                    None => {
                        let mut words: Vec<String> = items.iter().flat_map(|(_, t)| split_words(t)).collect();
                        if let Some(bank) = &external_bank {
                            words.extend(bank.sentences.iter().flat_map(|s| s.forms()).map(str::to_string));
                        }
                        if let Some(pairs) = &external_pairs {
                            words.extend(pairs.iter().flat_map(|p| p.good_sentence().into_iter().chain([p.bad.clone()])));
                        }
                        Vocab::from_words(words)
                    }
                };
                let dataset = ClassificationDataset::from_labeled_texts(&items, &vocab, max_len, exp.analysis.dev_fraction)?;
                if dataset.train.is_empty() || dataset.dev.is_empty() {
                    return Err(CliError::data(format!("{} is too small for a train/dev split", tsv.display())));
                }
                let model_config = exp.model.config(vocab.len(), dataset.n_classes());
                model_config.validate()?;
                RunData {
                    mlm_corpus: dataset.train.iter().map(|e| e.ids.clone()).collect(),
                    kl_corpus: dataset.dev.iter().take(exp.analysis.kl_sentences).map(|e| e.ids.clone()).collect(),
                    pairs: Vec::new(),
                    treebank: None,
                    vocab,
                    dataset,
                    model_config,
                }
            }
        };
        if let Some(p) = external_pairs {
            data.pairs = p;
        }
        if let Some(b) = external_bank {
            data.treebank = Some(b.split_every(5));
        }
        Ok(data)
    }

    pub fn treebank(&self) -> CliResult<(&DepTreebank, &DepTreebank)> {
        self.treebank
            .as_ref()
            .map(|(a, b)| (a, b))
            .ok_or_else(|| CliError::usage("no treebank: set data.conllu"))
    }

    /// Fails when a checkpoint was trained on a different vocabulary.
    pub fn check_compatible(&self, params: &Parameters, what: &str) -> CliResult<()> {
        let c = params.config;
        if c.vocab_size != self.vocab.len() || c.n_classes != self.dataset.n_classes() {
            return Err(CliError::data(format!(
                "{what} has vocab {} / {} classes but the run data has {} / {}",
                c.vocab_size,
                c.n_classes,
                self.vocab.len(),
                self.dataset.n_classes()
            )));
        }
        Ok(())
    }
}
