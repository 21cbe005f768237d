use std::f64::consts::PI;

use rand::Rng;
use sonotrans_tensor::rng::{derive_seed, rng, tag};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::{Error, Result};

pub const MIN_WORD_MS: f64 = 150.0;
pub const MAX_WORD_MS: f64 = 600.0;
pub const F0_RANGE: (f64, f64) = (110.0, 330.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }

    pub fn parse(s: &str) -> Option<Sex> {
        match s {
            "male" => Some(Sex::Male),
            "female" => Some(Sex::Female),
            _ => None,
        }
    }
}

/// A synthetic voice: every word it speaks has its fundamental scaled by
/// `pitch_scale` and its peak set to `gain`.
#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub id: usize,
    pub sex: Sex,
    pub pitch_scale: f64,
    pub gain: f64,
}

impl Speaker {
    pub fn name(&self) -> String {
        speaker_name(self.id)
    }
}

pub fn speaker_name(id: usize) -> String {
    format!("spk{id:02}")
}

pub fn word_name(id: usize) -> String {
    format!("w{id:03}")
}

/// Acoustic identity of one word in one language.
#[derive(Clone, Debug, PartialEq)]
pub struct WordSignature {
    pub word_id: usize,
    pub language: usize,
    pub f0: f64,
    pub amplitudes: [f64; 3],
    pub phases: [f64; 3],
    pub samples: usize,
    /// Exponent of the raised-sine amplitude envelope.
    pub shape: f64,
    pub tremolo_rate: f64,
    pub tremolo_depth: f64,
}

impl WordSignature {
    /// Envelope-weighted sum of three harmonics of `f0 · pitch_scale`.
    pub fn synthesize(&self, pitch_scale: f64) -> Vec<f64> {
        let n = self.samples as f64;
        let sr = SAMPLE_RATE as f64;
        let f0 = self.f0 * pitch_scale;
        (0..self.samples)
            .map(|i| {
                let t = i as f64 / sr;
                let env = (PI * (i as f64 + 0.5) / n).sin().powf(self.shape)
                    * (1.0
                        - self.tremolo_depth
                            * 0.5
                            * (1.0 - (2.0 * PI * self.tremolo_rate * t).cos()));
                let tone: f64 = (0..3)
                    .map(|h| {
                        self.amplitudes[h]
                            * (2.0 * PI * f0 * (h + 1) as f64 * t + self.phases[h]).sin()
                    })
                    .sum();
                env * tone
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexiconConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub languages: Vec<String>,
    pub male_speakers: usize,
    pub female_speakers: usize,
    /// Inclusive range of word durations in milliseconds.
    pub word_ms: (f64, f64),
}

impl Default for LexiconConfig {
    fn default() -> Self {
        LexiconConfig {
            seed: 0,
            vocab_size: 100,
            languages: vec!["en".into(), "es".into()],
            male_speakers: 8,
            female_speakers: 4,
            word_ms: (MIN_WORD_MS, MAX_WORD_MS),
        }
    }
}

impl LexiconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        if self.languages.is_empty() {
            return Err(Error::Config("no languages".into()));
        }
        if self.male_speakers + self.female_speakers == 0 {
            return Err(Error::Config("no speakers".into()));
        }
        let (lo, hi) = self.word_ms;
        if !(MIN_WORD_MS..=MAX_WORD_MS).contains(&lo) || !(lo..=MAX_WORD_MS).contains(&hi) {
            return Err(Error::Config(format!(
                "word duration range {lo}..{hi} ms must lie within {MIN_WORD_MS}..{MAX_WORD_MS} ms"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexiconEntry {
    pub word_id: usize,
    pub language_id: usize,
    pub speaker_id: usize,
    pub waveform: Waveform,
}

/// Word signatures for every (word, language) and the speaker roster.
/// Entries are synthesized on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub languages: Vec<String>,
    pub vocab_size: usize,
    pub speakers: Vec<Speaker>,
    signatures: Vec<WordSignature>,
}

pub fn build_lexicon(config: &LexiconConfig) -> Result<Lexicon> {
    config.validate()?;
    let (lo_ms, hi_ms) = config.word_ms;
    let ms = SAMPLE_RATE as f64 / 1000.0;
    let mut signatures = Vec::with_capacity(config.vocab_size * config.languages.len());
    for language in 0..config.languages.len() {
        for word_id in 0..config.vocab_size {
            let mut r = rng(derive_seed(
                config.seed,
                &[tag("word"), language as u64, word_id as u64],
            ));
            let f0 = r.gen_range(F0_RANGE.0..=F0_RANGE.1);
            let amplitudes = [1.0, r.gen_range(0.1..0.8), r.gen_range(0.1..0.8)];
            let phases = [
                r.gen_range(0.2..2.9),
                r.gen_range(0.2..2.9),
                r.gen_range(0.2..2.9),
            ];
            let dur_ms = if hi_ms > lo_ms {
                r.gen_range(lo_ms..=hi_ms)
            } else {
                lo_ms
            };
            signatures.push(WordSignature {
                word_id,
                language,
                f0,
                amplitudes,
                phases,
                samples: (dur_ms * ms).round() as usize,
                shape: r.gen_range(0.5..2.0),
                tremolo_rate: r.gen_range(3.0..8.0),
                tremolo_depth: r.gen_range(0.0..0.5),
            });
        }
    }
    let total = config.male_speakers + config.female_speakers;
    let speakers = (0..total)
        .map(|id| {
            let mut r = rng(derive_seed(config.seed, &[tag("speaker"), id as u64]));
            let sex = if id < config.male_speakers {
                Sex::Male
            } else {
                Sex::Female
            };
            let pitch_scale = match sex {
                Sex::Male => r.gen_range(0.8..1.0),
                Sex::Female => r.gen_range(1.0..=1.25),
            };
            Speaker {
                id,
                sex,
                pitch_scale,
                gain: r.gen_range(0.5..=1.0),
            }
        })
        .collect();
    Ok(Lexicon {
        languages: config.languages.clone(),
        vocab_size: config.vocab_size,
        speakers,
        signatures,
    })
}

impl Lexicon {
    pub fn signature(&self, word_id: usize, language: usize) -> Result<&WordSignature> {
        if word_id >= self.vocab_size || language >= self.languages.len() {
            return Err(Error::Lookup(format!(
                "no signature for word {word_id} in language {language}"
            )));
        }
        Ok(&self.signatures[language * self.vocab_size + word_id])
    }

    pub fn speaker(&self, id: usize) -> Result<&Speaker> {
        self.speakers
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("unknown speaker {id}")))
    }

    pub fn language_index(&self, name: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Lookup(format!("unknown language {name}")))
    }

    /// `gain · peak_normalize(synthesize(signature, pitch_scale))`.
    pub fn entry(&self, word_id: usize, language: usize, speaker: usize) -> Result<LexiconEntry> {
        let missing = || {
            Error::Lookup(format!(
                "no lexicon entry for word {word_id}, language {language}, speaker {speaker}"
            ))
        };
        let sig = self.signature(word_id, language).map_err(|_| missing())?;
        let spk = self.speaker(speaker).map_err(|_| missing())?;
        let mut waveform = Waveform::new(sig.synthesize(spk.pitch_scale));
        waveform.peak_normalize();
        waveform.samples.iter_mut().for_each(|v| *v *= spk.gain);
        Ok(LexiconEntry {
            word_id,
            language_id: language,
            speaker_id: speaker,
            waveform,
        })
    }

    /// Every (word, language, speaker) entry, materialized.
    pub fn entries(&self) -> Result<Vec<LexiconEntry>> {
        let mut out = Vec::new();
        for language in 0..self.languages.len() {
            for speaker in 0..self.speakers.len() {
                for word in 0..self.vocab_size {
                    out.push(self.entry(word, language, speaker)?);
                }
            }
        }
        Ok(out)
    }
}
