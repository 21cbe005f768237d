use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use sonotrans_tensor::rng::rng;

use crate::{Error, Result};

/// Part of speech. Word `w` has tag `ALL[w % 4]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
}

impl Pos {
    pub const ALL: [Pos; 4] = [Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv];

    pub fn of_word(word_id: usize) -> Pos {
        Pos::ALL[word_id % 4]
    }

    pub fn parse(s: &str) -> Option<Pos> {
        match s {
            "N" => Some(Pos::Noun),
            "V" => Some(Pos::Verb),
            "ADJ" => Some(Pos::Adj),
            "ADV" => Some(Pos::Adv),
            _ => None,
        }
    }
}

/// Utterance length class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Unigram,
    Bigram,
    Trigram,
    Sentence,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Unigram, Tier::Bigram, Tier::Trigram, Tier::Sentence];

    pub fn lengths(self) -> RangeInclusive<usize> {
        match self {
            Tier::Unigram => 1..=1,
            Tier::Bigram => 2..=2,
            Tier::Trigram => 3..=3,
            Tier::Sentence => 5..=10,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Unigram => "unigram",
            Tier::Bigram => "bigram",
            Tier::Trigram => "trigram",
            Tier::Sentence => "sentence",
        }
    }

    pub fn parse(s: &str) -> Option<Tier> {
        Tier::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// Slot sequence plus the order in which the target language reads the slots:
/// `target[k] = source[target_order[k]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceTemplate {
    slots: Vec<Pos>,
    target_order: Vec<usize>,
}

impl SentenceTemplate {
    pub fn new(slots: Vec<Pos>, target_order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; slots.len()];
        let valid = target_order.len() == slots.len()
            && target_order
                .iter()
                .all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true));
        if slots.is_empty() || !valid {
            return Err(Error::Config(format!(
                "target order {target_order:?} is not a permutation of {} slots",
                slots.len()
            )));
        }
        Ok(SentenceTemplate {
            slots,
            target_order,
        })
    }

    pub fn identity(slots: Vec<Pos>) -> Result<Self> {
        let order = (0..slots.len()).collect();
        SentenceTemplate::new(slots, order)
    }

    /// Template whose target order follows [`reorder`].
    pub fn reordered(slots: Vec<Pos>) -> Result<Self> {
        let order = reorder(&slots);
        SentenceTemplate::new(slots, order)
    }

    /// Parses a space-separated tag list such as `"ADJ N V"`.
    pub fn parse(tags: &str) -> Result<Self> {
        let slots = tags
            .split_whitespace()
            .map(|t| Pos::parse(t).ok_or_else(|| Error::Config(format!("unknown tag {t}"))))
            .collect::<Result<Vec<_>>>()?;
        SentenceTemplate::reordered(slots)
    }

    pub fn slots(&self) -> &[Pos] {
        &self.slots
    }

    pub fn target_order(&self) -> &[usize] {
        &self.target_order
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn apply<T: Copy>(&self, source: &[T]) -> Vec<T> {
        self.target_order.iter().map(|&i| source[i]).collect()
    }
}

/// Target-language slot order: adjectives move after the noun they precede,
/// then verbs move to the end, each step stable.
pub fn reorder(slots: &[Pos]) -> Vec<usize> {
    let mut order = Vec::with_capacity(slots.len());
    let mut i = 0;
    while i < slots.len() {
        let run_end = (i..slots.len())
            .find(|&j| slots[j] != Pos::Adj)
            .unwrap_or(slots.len());
        if run_end > i && run_end < slots.len() && slots[run_end] == Pos::Noun {
            order.push(run_end);
            order.extend(i..run_end);
            i = run_end + 1;
        } else {
            order.push(i);
            i += 1;
        }
    }
    let (mut rest, verbs): (Vec<usize>, Vec<usize>) =
        order.into_iter().partition(|&k| slots[k] != Pos::Verb);
    rest.extend(verbs);
    rest
}

const DEFAULT_TEMPLATES: [&str; 20] = [
    "N",
    "V",
    "ADJ N",
    "N V",
    "ADJ N V",
    "N V N",
    "ADJ N V ADV",
    "N V ADJ N",
    "ADJ N V ADJ N",
    "N ADV V ADJ N",
    "ADJ N V ADJ N ADV",
    "ADJ ADJ N V N ADV",
    "ADJ N ADV V ADJ ADJ N",
    "N V ADJ N ADV ADJ N",
    "ADJ N V N ADV ADJ ADJ N",
    "ADJ ADJ N ADV V ADJ N ADV",
    "ADJ N V ADJ N ADV ADJ ADJ N",
    "N ADV ADV V ADJ ADJ N ADJ N",
    "ADJ ADJ N ADV V ADJ N ADV ADJ N",
    "ADJ N V ADJ ADJ N ADV ADV ADJ N",
];

/// Two templates for each length 1 through 10.
pub fn default_templates() -> Vec<SentenceTemplate> {
    DEFAULT_TEMPLATES
        .iter()
        .map(|t| SentenceTemplate::parse(t).expect("built-in template"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub template: usize,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Draws `n` sentences: a length uniformly from `lengths`, a template of that
/// length, then a word of the right part of speech for each slot. Target
/// words are the same ids (word-for-word translation) in template order.
pub fn sample_sentences(
    seed: u64,
    templates: &[SentenceTemplate],
    n: usize,
    lengths: RangeInclusive<usize>,
    vocab_size: usize,
) -> Result<Vec<SentencePair>> {
    if lengths.is_empty() || *lengths.start() < 1 || *lengths.end() > 10 {
        return Err(Error::Config(format!(
            "sentence length range {}..={} must be a non-empty subset of 1..=10",
            lengths.start(),
            lengths.end()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let by_pos: Vec<Vec<usize>> = Pos::ALL
        .iter()
        .map(|&p| (0..vocab_size).filter(|&w| Pos::of_word(w) == p).collect())
        .collect();
    let usable = |t: &SentenceTemplate| {
        t.slots()
            .iter()
            .all(|&p| !by_pos[Pos::ALL.iter().position(|&q| q == p).unwrap()].is_empty())
    };
    let lengths: Vec<usize> = lengths
        .filter(|&l| templates.iter().any(|t| t.len() == l && usable(t)))
        .collect();
    if lengths.is_empty() {
        return Err(Error::Config(
            "no template fits the length range and vocabulary".into(),
        ));
    }
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = lengths[r.gen_range(0..lengths.len())];
        let candidates: Vec<usize> = (0..templates.len())
            .filter(|&i| templates[i].len() == len && usable(&templates[i]))
            .collect();
        let template = candidates[r.gen_range(0..candidates.len())];
        let source: Vec<usize> = templates[template]
            .slots()
            .iter()
            .map(|&p| {
                let pool = &by_pos[Pos::ALL.iter().position(|&q| q == p).unwrap()];
                *pool.choose(&mut r).expect("non-empty pool")
            })
            .collect();
        let target = templates[template].apply(&source);
        out.push(SentencePair {
            template,
            source,
            target,
        });
    }
    Ok(out)
}
