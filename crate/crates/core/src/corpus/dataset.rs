use std::collections::BTreeSet;
use std::path::Path;

use super::manifest::{CorpusManifest, UtteranceRecord};
use super::sentences::Tier;
use crate::dsp::wav::read_wav;
use crate::dsp::{to_spectrogram, Spectrogram};
use crate::{Error, Result};

/// A parallel utterance ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub speaker_id: usize,
    pub tier: Tier,
    pub source_words: Vec<usize>,
    pub target_words: Vec<usize>,
    pub source: Spectrogram,
    pub target: Spectrogram,
}

/// Which utterances of a manifest take part.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    All,
    Speakers(BTreeSet<usize>),
    ExcludeSpeakers(BTreeSet<usize>),
}

impl Split {
    pub fn contains(&self, speaker: usize) -> bool {
        match self {
            Split::All => true,
            Split::Speakers(s) => s.contains(&speaker),
            Split::ExcludeSpeakers(s) => !s.contains(&speaker),
        }
    }

    pub fn select<'a>(&self, manifest: &'a CorpusManifest) -> Vec<&'a UtteranceRecord> {
        manifest
            .records
            .iter()
            .filter(|r| self.contains(r.speaker_id))
            .collect()
    }

    /// Train/test pair holding out `speakers`.
    pub fn held_out(speakers: impl IntoIterator<Item = usize>) -> (Split, Split) {
        let set: BTreeSet<usize> = speakers.into_iter().collect();
        (Split::ExcludeSpeakers(set.clone()), Split::Speakers(set))
    }
}

pub fn load_example(root: &Path, record: &UtteranceRecord) -> Result<Example> {
    let src = read_wav(&root.join(&record.source_wav_path))?;
    let tgt = read_wav(&root.join(&record.target_wav_path))?;
    if src.len() != record.source_samples || tgt.len() != record.target_samples {
        return Err(Error::Integrity(format!(
            "{}: audio has {}/{} samples, manifest says {}/{}",
            record.id,
            src.len(),
            tgt.len(),
            record.source_samples,
            record.target_samples
        )));
    }
    Ok(Example {
        id: record.id.clone(),
        speaker_id: record.speaker_id,
        tier: record.tier,
        source_words: record.source_words.clone(),
        target_words: record.target_words.clone(),
        source: to_spectrogram(&src)?,
        target: to_spectrogram(&tgt)?,
    })
}

pub fn load_examples<'a>(
    root: &Path,
    records: impl IntoIterator<Item = &'a UtteranceRecord>,
) -> Result<Vec<Example>> {
    records.into_iter().map(|r| load_example(root, r)).collect()
}

pub fn load_split(root: &Path, manifest: &CorpusManifest, split: &Split) -> Result<Vec<Example>> {
    load_examples(root, split.select(manifest))
}
