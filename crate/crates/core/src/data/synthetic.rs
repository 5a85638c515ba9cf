//! Template grammar with number agreement.
//!
//! A template is a whitespace-separated slot pattern. Each slot reads
//! `KIND[(k)][*]>head/deprel`:
//!
//! * `KIND` is one of `DET ADJ NOUN VERB PREP ADV REFL PUNCT`;
//! * `(k)` makes the slot take the grammatical number of noun slot `k`
//!   (1-based);
//! * `*` marks a noun that may be drawn from another topic (a distractor);
//! * `head` is the 1-based head slot (0 for the root) and `deprel` the label.
//!
//! Every sentence has a topic (its classification label). Nouns, verbs and
//! adjectives come from that topic; distractor nouns switch topic with
//! probability `distractor_rate`. When a template names a focus slot, a
//! minimal pair is emitted by flipping the number of that one word.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::conllu::{DepSentence, DepToken, DepTreebank};
use super::pairs::MinimalPair;
use super::vocab::{encode_words, Vocab};
use super::{is_dev_index, ClassificationDataset, LabeledExample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inflected {
    pub sg: String,
    #[serde(default)]
    pub pl: Option<String>,
}

impl Inflected {
    pub fn new(sg: &str, pl: Option<&str>) -> Self {
        Inflected {
            sg: sg.into(),
            pl: pl.map(Into::into),
        }
    }

    fn form(&self, n: Number) -> Option<&str> {
        match n {
            Number::Sg => Some(&self.sg),
            Number::Pl => self.pl.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub nouns: Vec<Inflected>,
    /// `sg` is the third-person singular form, `pl` the plural form.
    pub verbs: Vec<Inflected>,
    #[serde(default)]
    pub adjectives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub name: String,
    pub pattern: String,
    /// 1-based focus slot for minimal pairs.
    #[serde(default)]
    pub focus: Option<usize>,
    #[serde(default)]
    pub phenomenon: String,
}

fn default_punct() -> String {
    ".".into()
}

fn default_n() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub topics: Vec<Topic>,
    #[serde(default)]
    pub determiners: Vec<Inflected>,
    #[serde(default)]
    pub prepositions: Vec<String>,
    #[serde(default)]
    pub adverbs: Vec<String>,
    #[serde(default)]
    pub reflexive: Option<Inflected>,
    #[serde(default = "default_punct")]
    pub punctuation: String,
    pub templates: Vec<TemplateSpec>,
    /// Target number of distinct sentences.
    #[serde(default = "default_n")]
    pub n_sentences: usize,
    #[serde(default)]
    pub distractor_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Number {
    Sg,
    Pl,
}

impl Number {
    fn flip(self) -> Number {
        match self {
            Number::Sg => Number::Pl,
            Number::Pl => Number::Sg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Det,
    Adj,
    Noun,
    Verb,
    Prep,
    Adv,
    Refl,
    Punct,
}

impl SlotKind {
    fn parse(s: &str) -> Option<SlotKind> {
        Some(match s {
            "DET" => SlotKind::Det,
            "ADJ" => SlotKind::Adj,
            "NOUN" => SlotKind::Noun,
            "VERB" => SlotKind::Verb,
            "PREP" => SlotKind::Prep,
            "ADV" => SlotKind::Adv,
            "REFL" => SlotKind::Refl,
            "PUNCT" => SlotKind::Punct,
            _ => return None,
        })
    }

    pub fn upos(self) -> &'static str {
        match self {
            SlotKind::Det => "DET",
            SlotKind::Adj => "ADJ",
            SlotKind::Noun => "NOUN",
            SlotKind::Verb => "VERB",
            SlotKind::Prep => "ADP",
            SlotKind::Adv => "ADV",
            SlotKind::Refl => "PRON",
            SlotKind::Punct => "PUNCT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub kind: SlotKind,
    /// 0-based noun slot this slot agrees with.
    pub agree: Option<usize>,
    pub distractor: bool,
    /// 1-based head slot, 0 for root.
    pub head: usize,
    pub deprel: String,
}

/// Parses a slot pattern (see the module docs).
pub fn parse_pattern(pattern: &str) -> Result<Vec<Slot>> {
    let bad = |tok: &str, why: &str| Error::config(format!("slot {tok:?}: {why}"));
    let mut slots = Vec::new();
    for tok in pattern.split_whitespace() {
        let (lhs, rhs) = tok.split_once('>').ok_or_else(|| bad(tok, "missing '>head/deprel'"))?;
        let (head, deprel) = rhs.split_once('/').ok_or_else(|| bad(tok, "missing '/deprel'"))?;
        let head: usize = head.parse().map_err(|_| bad(tok, "head is not a number"))?;
        let (lhs, distractor) = match lhs.strip_suffix('*') {
            Some(l) => (l, true),
            None => (lhs, false),
        };
        let (kind, agree) = match lhs.split_once('(') {
            Some((k, rest)) => {
                let idx: usize = rest
                    .strip_suffix(')')
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(tok, "bad agreement index"))?;
                if idx == 0 {
                    return Err(bad(tok, "agreement index is 1-based"));
                }
                (k, Some(idx - 1))
            }
            None => (lhs, None),
        };
        let kind = SlotKind::parse(kind).ok_or_else(|| bad(tok, "unknown slot kind"))?;
        slots.push(Slot {
            kind,
            agree,
            distractor,
            head,
            deprel: deprel.to_string(),
        });
    }
    if slots.is_empty() {
        return Err(Error::config("empty template pattern"));
    }
    for (i, s) in slots.iter().enumerate() {
        if let Some(a) = s.agree {
            if slots.get(a).map(|t| t.kind) != Some(SlotKind::Noun) {
                return Err(Error::config(format!("slot {} agrees with slot {} which is not a NOUN", i + 1, a + 1)));
            }
        }
    }
    let probe = DepSentence {
        sent_id: None,
        tokens: slots
            .iter()
            .map(|s| DepToken {
                form: String::new(),
                upos: String::new(),
                head: s.head,
                deprel: s.deprel.clone(),
            })
            .collect(),
    };
    probe
        .validate()
        .map_err(|m| Error::config(format!("pattern {pattern:?} is not a tree: {m}")))?;
    Ok(slots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSentence {
    pub words: Vec<String>,
    pub upos: Vec<String>,
    /// 1-based heads, 0 for the root.
    pub heads: Vec<usize>,
    pub deprels: Vec<String>,
    /// Topic index (the classification label).
    pub topic: usize,
    pub template: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub labels: Vec<String>,
    pub sentences: Vec<SyntheticSentence>,
    pub pairs: Vec<MinimalPair>,
    /// Every surface form the grammar can produce, in a fixed order.
    pub lexicon: Vec<String>,
}

impl SyntheticCorpus {
    pub fn vocab(&self) -> Vocab {
        Vocab::from_words(&self.lexicon)
    }

    pub fn texts(&self) -> Vec<String> {
        self.sentences.iter().map(|s| s.words.join(" ")).collect()
    }

    pub fn mlm_corpus(&self, vocab: &Vocab, max_len: usize) -> Vec<Vec<u32>> {
        self.sentences
            .iter()
            .map(|s| encode_words(&s.words, vocab, max_len).ids)
            .collect()
    }

    /// Topic classification with a hashed dev split.
    pub fn classification(&self, vocab: &Vocab, max_len: usize, dev_fraction: f64) -> ClassificationDataset {
        let mut ds = ClassificationDataset {
            labels: self.labels.clone(),
            ..Default::default()
        };
        for (i, s) in self.sentences.iter().enumerate() {
            let ex = LabeledExample {
                ids: encode_words(&s.words, vocab, max_len).ids,
                label: s.topic,
            };
            if is_dev_index(i, dev_fraction) {
                ds.dev.push(ex);
            } else {
                ds.train.push(ex);
            }
        }
        ds
    }

    pub fn treebank(&self) -> DepTreebank {
        DepTreebank {
            sentences: self
                .sentences
                .iter()
                .enumerate()
                .map(|(i, s)| DepSentence {
                    sent_id: Some(format!("syn-{}", i + 1)),
                    tokens: (0..s.words.len())
                        .map(|k| DepToken {
                            form: s.words[k].clone(),
                            upos: s.upos[k].clone(),
                            head: s.heads[k],
                            deprel: s.deprels[k].clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl GrammarSpec {
    fn validate(&self) -> Result<Vec<Vec<Slot>>> {
        if self.templates.is_empty() {
            return Err(Error::config("grammar has zero templates"));
        }
        if self.topics.is_empty() {
            return Err(Error::config("grammar has zero topics"));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::config("distractor_rate must be in [0, 1]"));
        }
        let mut parsed = Vec::new();
        for t in &self.templates {
            let slots = parse_pattern(&t.pattern).map_err(|e| Error::config(format!("template {}: {e}", t.name)))?;
            let need = |kind: SlotKind| slots.iter().any(|s| s.kind == kind);
            let missing = |what: &str| Error::config(format!("template {} needs {what}", t.name));
            for topic in &self.topics {
                if need(SlotKind::Noun) && topic.nouns.is_empty() {
                    return Err(missing(&format!("nouns in topic {}", topic.name)));
                }
                if need(SlotKind::Verb) && topic.verbs.is_empty() {
                    return Err(missing(&format!("verbs in topic {}", topic.name)));
                }
                if need(SlotKind::Adj) && topic.adjectives.is_empty() {
                    return Err(missing(&format!("adjectives in topic {}", topic.name)));
                }
            }
            if need(SlotKind::Det) && self.determiners.is_empty() {
                return Err(missing("determiners"));
            }
            if need(SlotKind::Prep) && self.prepositions.is_empty() {
                return Err(missing("prepositions"));
            }
            if need(SlotKind::Adv) && self.adverbs.is_empty() {
                return Err(missing("adverbs"));
            }
            if need(SlotKind::Refl) && self.reflexive.is_none() {
                return Err(missing("a reflexive"));
            }
            if let Some(f) = t.focus {
                let slot = f
                    .checked_sub(1)
                    .and_then(|i| slots.get(i))
                    .ok_or_else(|| Error::config(format!("template {}: focus {f} out of range", t.name)))?;
                if slot.agree.is_none() || !matches!(slot.kind, SlotKind::Det | SlotKind::Verb | SlotKind::Refl) {
                    return Err(Error::config(format!(
                        "template {}: focus slot must be an agreeing DET, VERB or REFL",
                        t.name
                    )));
                }
            }
            parsed.push(slots);
        }
        Ok(parsed)
    }

    /// All surface forms, reserved-free, in spec order.
    pub fn lexicon(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let push_inf = |out: &mut Vec<String>, i: &Inflected| {
            out.push(i.sg.clone());
            out.extend(i.pl.clone());
        };
        for t in &self.topics {
            t.nouns.iter().for_each(|n| push_inf(&mut out, n));
            t.verbs.iter().for_each(|v| push_inf(&mut out, v));
            out.extend(t.adjectives.iter().cloned());
        }
        self.determiners.iter().for_each(|d| push_inf(&mut out, d));
        if let Some(r) = &self.reflexive {
            push_inf(&mut out, r);
        }
        out.extend(self.prepositions.iter().cloned());
        out.extend(self.adverbs.iter().cloned());
        out.push(self.punctuation.clone());
        let mut seen = HashSet::new();
        out.into_iter().map(|w| w.to_lowercase()).filter(|w| seen.insert(w.clone())).collect()
    }

    /// Four topics, six agreement templates; sentences of at most 8 words.
    pub fn default_toy() -> Self {
        let inf = |pairs: &[(&str, &str)]| pairs.iter().map(|(s, p)| Inflected::new(s, Some(p))).collect::<Vec<_>>();
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        let topic = |name: &str, nouns: &[(&str, &str)], verbs: &[(&str, &str)], adjs: &[&str]| Topic {
            name: name.into(),
            nouns: inf(nouns),
            verbs: inf(verbs),
            adjectives: words(adjs),
        };
        let tpl = |name: &str, pattern: &str, focus: usize| TemplateSpec {
            name: name.into(),
            pattern: pattern.into(),
            focus: Some(focus),
            phenomenon: name.into(),
        };
        GrammarSpec {
            topics: vec![
                topic(
                    "animals",
                    &[("dog", "dogs"), ("cat", "cats"), ("horse", "horses"), ("bird", "birds"), ("fox", "foxes"), ("wolf", "wolves")],
                    &[("runs", "run"), ("sleeps", "sleep"), ("jumps", "jump"), ("hunts", "hunt"), ("eats", "eat")],
                    &["furry", "wild", "small", "hungry"],
                ),
                topic(
                    "vehicles",
                    &[("car", "cars"), ("truck", "trucks"), ("bus", "buses"), ("train", "trains"), ("bike", "bikes"), ("boat", "boats")],
                    &[("drives", "drive"), ("stalls", "stall"), ("speeds", "speed"), ("parks", "park"), ("honks", "honk")],
                    &["fast", "red", "old", "heavy"],
                ),
                topic(
                    "food",
                    &[("cake", "cakes"), ("apple", "apples"), ("soup", "soups"), ("pie", "pies"), ("salad", "salads"), ("pear", "pears")],
                    &[("tastes", "taste"), ("cools", "cool"), ("bakes", "bake"), ("spoils", "spoil"), ("melts", "melt")],
                    &["sweet", "fresh", "warm", "salty"],
                ),
                topic(
                    "music",
                    &[("song", "songs"), ("drum", "drums"), ("guitar", "guitars"), ("piano", "pianos"), ("band", "bands"), ("choir", "choirs")],
                    &[("plays", "play"), ("sounds", "sound"), ("echoes", "echo"), ("rings", "ring"), ("hums", "hum")],
                    &["loud", "soft", "jazzy", "tuned"],
                ),
            ],
            determiners: vec![
                Inflected::new("the", Some("the")),
                Inflected::new("this", Some("these")),
                Inflected::new("that", Some("those")),
                Inflected::new("a", None),
            ],
            prepositions: words(&["near", "behind", "with", "beside"]),
            adverbs: words(&["quickly", "often", "slowly", "again", "today"]),
            reflexive: Some(Inflected::new("itself", Some("themselves"))),
            punctuation: ".".into(),
            templates: vec![
                tpl("subject_verb", "DET(3)>3/det ADJ>3/amod NOUN>4/nsubj VERB(3)>0/root ADV>4/advmod PUNCT>4/punct", 4),
                tpl(
                    "across_pp",
                    "DET(2)>2/det NOUN>6/nsubj PREP>5/case DET(5)>5/det NOUN*>2/nmod VERB(2)>0/root PUNCT>6/punct",
                    6,
                ),
                tpl(
                    "transitive",
                    "DET(2)>2/det NOUN>3/nsubj VERB(2)>0/root DET(6)>6/det ADJ>6/amod NOUN*>3/obj PUNCT>3/punct",
                    3,
                ),
                tpl("reflexive", "DET(2)>2/det NOUN>3/nsubj VERB(2)>0/root REFL(2)>3/obj ADV>3/advmod PUNCT>3/punct", 4),
                tpl(
                    "reflexive_across_pp",
                    "DET(2)>2/det NOUN>6/nsubj PREP>5/case DET(5)>5/det NOUN*>2/nmod VERB(2)>0/root REFL(2)>6/obj PUNCT>6/punct",
                    7,
                ),
                tpl(
                    "determiner_noun",
                    "DET(3)>3/det ADJ>3/amod NOUN>4/nsubj VERB(3)>0/root PREP>7/case DET(7)>7/det NOUN*>4/obl PUNCT>4/punct",
                    1,
                ),
            ],
            n_sentences: 1000,
            distractor_rate: 0.3,
        }
    }
}

struct Draft {
    words: Vec<String>,
    /// Alternate (wrong-number) form of the focus word, if it differs.
    flipped_focus: Option<String>,
}

fn draw<R: rand::Rng + ?Sized>(
    spec: &GrammarSpec,
    slots: &[Slot],
    focus: Option<usize>,
    topic: usize,
    rng: &mut R,
) -> Option<Draft> {
    let n = slots.len();
    let mut numbers: Vec<Option<Number>> = vec![None; n];
    let mut words: Vec<String> = vec![String::new(); n];
    // nouns first so agreeing slots can look up their number
    for (i, s) in slots.iter().enumerate().filter(|(_, s)| s.kind == SlotKind::Noun) {
        let t = if s.distractor && spec.topics.len() > 1 && rng.random::<f64>() < spec.distractor_rate {
            let other = rng.random_range(0..spec.topics.len() - 1);
            if other >= topic {
                other + 1
            } else {
                other
            }
        } else {
            topic
        };
        let noun = spec.topics[t].nouns.choose(rng)?;
        let num = if noun.pl.is_some() && rng.random::<bool>() { Number::Pl } else { Number::Sg };
        numbers[i] = Some(num);
        words[i] = noun.form(num)?.to_string();
    }
    let mut flipped_focus = None;
    for (i, s) in slots.iter().enumerate() {
        let num = s.agree.and_then(|a| numbers[a]).unwrap_or(Number::Sg);
        let is_focus = focus == Some(i);
        let pick = |items: &[Inflected], rng: &mut R| -> Option<Inflected> {
            let ok: Vec<&Inflected> = items
                .iter()
                .filter(|it| {
                    it.form(num).is_some()
                        && (!is_focus || it.form(num.flip()).is_some_and(|f| Some(f) != it.form(num)))
                })
                .collect();
            ok.choose(rng).map(|it| (*it).clone())
        };
        let chosen: Option<Inflected> = match s.kind {
            SlotKind::Noun => continue,
            SlotKind::Det => pick(&spec.determiners, rng),
            SlotKind::Verb => pick(&spec.topics[topic].verbs, rng),
            SlotKind::Refl => pick(std::slice::from_ref(spec.reflexive.as_ref()?), rng),
            SlotKind::Adj => spec.topics[topic].adjectives.choose(rng).map(|w| Inflected::new(w, None)),
            SlotKind::Prep => spec.prepositions.choose(rng).map(|w| Inflected::new(w, None)),
            SlotKind::Adv => spec.adverbs.choose(rng).map(|w| Inflected::new(w, None)),
            SlotKind::Punct => Some(Inflected::new(&spec.punctuation, None)),
        };
        let chosen = chosen?;
        let is_inflecting = matches!(s.kind, SlotKind::Det | SlotKind::Verb | SlotKind::Refl);
        let use_num = if is_inflecting { num } else { Number::Sg };
        words[i] = chosen.form(use_num)?.to_string();
        if is_focus {
            flipped_focus = chosen.form(use_num.flip()).map(str::to_string);
        }
    }
    let words = words.into_iter().map(|w| w.to_lowercase()).collect();
    Some(Draft {
        words,
        flipped_focus: flipped_focus.map(|w| w.to_lowercase()),
    })
}

/// Samples up to `spec.n_sentences` distinct sentences (fewer if the grammar
/// cannot produce that many) plus one minimal pair per sentence whose
/// template has a focus slot.
pub fn generate_synthetic<R: rand::Rng + ?Sized>(spec: &GrammarSpec, rng: &mut R) -> Result<SyntheticCorpus> {
    let parsed = spec.validate()?;
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut sentences = Vec::new();
    let mut pairs = Vec::new();
    let max_attempts = spec.n_sentences.saturating_mul(50).max(100);
    for _ in 0..max_attempts {
        if sentences.len() >= spec.n_sentences {
            break;
        }
        let template = rng.random_range(0..spec.templates.len());
        let topic = rng.random_range(0..spec.topics.len());
        let slots = &parsed[template];
        let focus = spec.templates[template].focus.map(|f| f - 1);
        let Some(draft) = draw(spec, slots, focus, topic, rng) else {
            continue;
        };
        if !seen.insert(draft.words.clone()) {
            continue;
        }
        if let (Some(f), Some(bad)) = (focus, &draft.flipped_focus) {
            if *bad != draft.words[f] {
                pairs.push(MinimalPair {
                    prefix: draft.words[..f].to_vec(),
                    suffix: draft.words[f + 1..].to_vec(),
                    good: draft.words[f].clone(),
                    bad: bad.clone(),
                    phenomenon: spec.templates[template].phenomenon.clone(),
                });
            }
        }
        sentences.push(SyntheticSentence {
            upos: slots.iter().map(|s| s.kind.upos().to_string()).collect(),
            heads: slots.iter().map(|s| s.head).collect(),
            deprels: slots.iter().map(|s| s.deprel.clone()).collect(),
            words: draft.words,
            topic,
            template,
        });
    }
    Ok(SyntheticCorpus {
        labels: spec.topics.iter().map(|t| t.name.clone()).collect(),
        sentences,
        pairs,
        lexicon: spec.lexicon(),
    })
}
