use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sonotrans_tensor::rng::{derive_seed, tag};

use super::lexicon::{build_lexicon, word_name, Lexicon, LexiconConfig};
use super::manifest::{write_manifest, CorpusManifest, UtteranceRecord};
use super::render::{render_utterance, RenderOptions, RenderedUtterance};
use super::sentences::{default_templates, sample_sentences, Tier};
use crate::dsp::wav::write_wav;
use crate::hash::{canonical_hash, to_hex};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub lexicon: LexiconConfig,
    pub render: RenderOptions,
    /// Utterance count per tier, in [`Tier::ALL`] order.
    pub tier_counts: [usize; 4],
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            lexicon: LexiconConfig::default(),
            render: RenderOptions::default(),
            tier_counts: [100, 100, 100, 50],
        }
    }
}

impl CorpusConfig {
    pub fn seed(&self) -> u64 {
        self.lexicon.seed
    }

    pub fn only(tier: Tier, count: usize) -> [usize; 4] {
        let mut counts = [0; 4];
        counts[tier as usize] = count;
        counts
    }

    pub fn hash_pairs(&self) -> Vec<(&'static str, String)> {
        let l = &self.lexicon;
        let r = &self.render;
        vec![
            ("seed", l.seed.to_string()),
            ("vocab_size", l.vocab_size.to_string()),
            ("languages", l.languages.join(",")),
            ("male_speakers", l.male_speakers.to_string()),
            ("female_speakers", l.female_speakers.to_string()),
            ("word_ms_min", l.word_ms.0.to_string()),
            ("word_ms_max", l.word_ms.1.to_string()),
            ("lead_ms", r.lead_ms.to_string()),
            ("tail_ms", r.tail_ms.to_string()),
            ("gap_ms_min", r.gap_ms.0.to_string()),
            ("gap_ms_max", r.gap_ms.1.to_string()),
            ("jitter", r.jitter.to_string()),
            ("unigrams", self.tier_counts[0].to_string()),
            ("bigrams", self.tier_counts[1].to_string()),
            ("trigrams", self.tier_counts[2].to_string()),
            ("sentences", self.tier_counts[3].to_string()),
        ]
    }

    pub fn hash(&self) -> String {
        to_hex(&canonical_hash(self.hash_pairs()))
    }

    pub fn validate(&self) -> Result<()> {
        self.lexicon.validate()?;
        self.render.validate()?;
        if self.lexicon.languages.len() < 2 {
            return Err(Error::Config(
                "a parallel corpus needs two languages".into(),
            ));
        }
        Ok(())
    }
}

/// Words and seed of one utterance before any audio is produced.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedUtterance {
    pub id: String,
    pub tier: Tier,
    pub speaker_id: usize,
    pub source_words: Vec<usize>,
    pub target_words: Vec<usize>,
    pub seed: u64,
}

/// Speakers are assigned round-robin over the whole corpus so every speaker
/// appears in every tier with enough utterances.
pub fn plan_corpus(config: &CorpusConfig) -> Result<(Lexicon, Vec<PlannedUtterance>)> {
    config.validate()?;
    let lexicon = build_lexicon(&config.lexicon)?;
    let templates = default_templates();
    let n_speakers = lexicon.speakers.len();
    let mut plan = Vec::new();
    for (ti, tier) in Tier::ALL.into_iter().enumerate() {
        let pairs = sample_sentences(
            derive_seed(config.seed(), &[tag("sentences"), ti as u64]),
            &templates,
            config.tier_counts[ti],
            tier.lengths(),
            lexicon.vocab_size,
        )?;
        for (k, pair) in pairs.into_iter().enumerate() {
            let index = plan.len();
            plan.push(PlannedUtterance {
                id: format!("{}-{k:05}", tier.as_str()),
                tier,
                speaker_id: index % n_speakers,
                source_words: pair.source,
                target_words: pair.target,
                seed: derive_seed(config.seed(), &[tag("render"), index as u64]),
            });
        }
    }
    Ok((lexicon, plan))
}

/// Source (language 0) and target (language 1) renderings of a planned utterance.
pub fn render_pair(
    lexicon: &Lexicon,
    u: &PlannedUtterance,
    options: &RenderOptions,
) -> Result<(RenderedUtterance, RenderedUtterance)> {
    let src = render_utterance(
        &u.source_words,
        lexicon,
        0,
        u.speaker_id,
        derive_seed(u.seed, &[0]),
        options,
    )?;
    let tgt = render_utterance(
        &u.target_words,
        lexicon,
        1,
        u.speaker_id,
        derive_seed(u.seed, &[1]),
        options,
    )?;
    Ok((src, tgt))
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))
}

/// Renders every utterance to `out_dir/wav/` and writes `out_dir/manifest.tsv`.
/// Output is identical for any `jobs`.
pub fn generate_corpus(
    config: &CorpusConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<CorpusManifest> {
    let (lexicon, plan) = plan_corpus(config)?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let src_lang = lexicon.languages[0].clone();
    let tgt_lang = lexicon.languages[1].clone();
    let records = thread_pool(jobs)?.install(|| {
        plan.par_iter()
            .map(|u| {
                let (src, tgt) = render_pair(&lexicon, u, &config.render)?;
                let src_rel = PathBuf::from("wav").join(format!("{}_{src_lang}.wav", u.id));
                let tgt_rel = PathBuf::from("wav").join(format!("{}_{tgt_lang}.wav", u.id));
                write_wav(&out_dir.join(&src_rel), &src.waveform)?;
                write_wav(&out_dir.join(&tgt_rel), &tgt.waveform)?;
                Ok(UtteranceRecord {
                    id: u.id.clone(),
                    speaker_id: u.speaker_id,
                    tier: u.tier,
                    source_language: src_lang.clone(),
                    target_language: tgt_lang.clone(),
                    source_words: u.source_words.clone(),
                    target_words: u.target_words.clone(),
                    source_wav_path: src_rel,
                    target_wav_path: tgt_rel,
                    source_samples: src.waveform.len(),
                    target_samples: tgt.waveform.len(),
                    word_boundaries: src.boundaries,
                    target_word_boundaries: tgt.boundaries,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let manifest = CorpusManifest {
        seed: config.seed(),
        config_hash: config.hash(),
        languages: lexicon.languages.clone(),
        vocab: (0..lexicon.vocab_size).map(word_name).collect(),
        speakers: lexicon.speakers.clone(),
        records,
    };
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
