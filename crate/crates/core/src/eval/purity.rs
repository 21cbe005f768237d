use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use sonotrans_tensor::rng::{derive_seed, rng};
use sonotrans_tensor::Real;

use crate::corpus::{render_utterance, Example, Lexicon, RenderOptions, Tier};
use crate::dsp::to_spectrogram;
use crate::model::Model;
use crate::{Error, Result};

/// One embedded single-word utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub utterance_id: String,
    pub word_id: usize,
    pub speaker_id: usize,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PurityResult {
    pub purity: f64,
    /// Embeddings that took part.
    pub evaluated: usize,
    /// Words left out because they have a single instance.
    pub excluded_words: Vec<usize>,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

/// Leave-one-out 1-nearest-neighbour word accuracy under cosine distance.
/// Ties go to the earliest embedding.
pub fn purity_of(labels: &[usize], vectors: &[Vec<f64>]) -> Result<PurityResult> {
    if labels.len() != vectors.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} embeddings",
            labels.len(),
            vectors.len()
        )));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let excluded_words: Vec<usize> = counts.iter().filter(|(_, &c)| c < 2).map(|(&w, _)| w).collect();
    for w in &excluded_words {
        log::warn!("word {w} has a single instance and is excluded from purity");
    }
    let keep: Vec<usize> = (0..labels.len())
        .filter(|&i| counts[&labels[i]] >= 2)
        .collect();
    if counts.len() - excluded_words.len() < 2 {
        return Err(Error::Config(
            "purity needs at least two words with two or more instances".into(),
        ));
    }
    let mut hits = 0usize;
    for &i in &keep {
        let mut best = f64::INFINITY;
        let mut best_j = usize::MAX;
        for &j in &keep {
            if j == i {
                continue;
            }
            let d = cosine_distance(&vectors[i], &vectors[j]);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        if labels[best_j] == labels[i] {
            hits += 1;
        }
    }
    Ok(PurityResult {
        purity: hits as f64 / keep.len() as f64,
        evaluated: keep.len(),
        excluded_words,
    })
}

pub fn embedding_purity(embeddings: &[Embedding]) -> Result<PurityResult> {
    let labels: Vec<usize> = embeddings.iter().map(|e| e.word_id).collect();
    let vectors: Vec<Vec<f64>> = embeddings.iter().map(|e| e.vector.clone()).collect();
    purity_of(&labels, &vectors)
}

/// Single-word parallel utterances for every `(word, speaker)` pair.
pub fn word_examples(
    lexicon: &Lexicon,
    words: &[usize],
    speakers: &[usize],
    options: &RenderOptions,
    seed: u64,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(words.len() * speakers.len());
    for &w in words {
        for &s in speakers {
            let base = derive_seed(seed, &[w as u64, s as u64]);
            let src = render_utterance(&[w], lexicon, 0, s, derive_seed(base, &[0]), options)?;
            let tgt = render_utterance(&[w], lexicon, 1, s, derive_seed(base, &[1]), options)?;
            out.push(Example {
                id: format!("word-{w:03}-spk{s:02}"),
                speaker_id: s,
                tier: Tier::Unigram,
                source_words: vec![w],
                target_words: vec![w],
                source: to_spectrogram(&src.waveform)?,
                target: to_spectrogram(&tgt.waveform)?,
            });
        }
    }
    Ok(out)
}

/// Mean final encoder state of each single-word source utterance.
pub fn embed_examples<R: Real>(model: &Model<R>, examples: &[Example]) -> Result<Vec<Embedding>> {
    examples
        .iter()
        .map(|ex| {
            if ex.source_words.len() != 1 {
                return Err(Error::Config(format!(
                    "{} has {} words; embeddings need single-word utterances",
                    ex.id,
                    ex.source_words.len()
                )));
            }
            Ok(Embedding {
                utterance_id: ex.id.clone(),
                word_id: ex.source_words[0],
                speaker_id: ex.speaker_id,
                vector: model.embed(&ex.source)?,
            })
        })
        .collect()
}

/// `utterance_id,word_id,speaker_id,d0,d1,...`
pub fn embeddings_csv(embeddings: &[Embedding]) -> String {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut s = String::from("utterance_id,word_id,speaker_id");
    for d in 0..dim {
        let _ = write!(s, ",d{d}");
    }
    s.push('\n');
    for e in embeddings {
        let _ = write!(s, "{},{},{}", e.utterance_id, e.word_id, e.speaker_id);
        for v in &e.vector {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn write_embeddings_csv(path: &Path, embeddings: &[Embedding]) -> Result<()> {
    std::fs::write(path, embeddings_csv(embeddings)).map_err(|e| Error::io(path, e))
}

/// Purity of Gaussian random embeddings over many trials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomControl {
    pub mean: f64,
    /// Spread of a single purity measurement.
    pub std_dev: f64,
    /// Standard error of `mean`.
    pub std_error: f64,
    pub trials: usize,
}

/// Exact expected purity when neighbours are unrelated to words:
/// `(per_word - 1) / (words·per_word - 1)`.
pub fn chance_purity(words: usize, per_word: usize) -> f64 {
    (per_word as f64 - 1.0) / ((words * per_word) as f64 - 1.0)
}

pub fn random_purity_control(
    words: usize,
    per_word: usize,
    dim: usize,
    trials: usize,
    seed: u64,
) -> Result<RandomControl> {
    if trials < 2 {
        return Err(Error::Config("the random control needs at least two trials".into()));
    }
    let labels: Vec<usize> = (0..words * per_word).map(|i| i / per_word).collect();
    let mut values = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut r = rng(derive_seed(seed, &[t as u64]));
        let vectors: Vec<Vec<f64>> = labels
            .iter()
            .map(|_| (0..dim).map(|_| r.sample(StandardNormal)).collect())
            .collect();
        values.push(purity_of(&labels, &vectors)?.purity);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(RandomControl {
        mean,
        std_dev: var.sqrt(),
        std_error: (var / n).sqrt(),
        trials,
    })
}
