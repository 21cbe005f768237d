//! Flat `key = value` run configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sonotrans_core::corpus::{CorpusConfig, LexiconConfig, RenderOptions};
use sonotrans_core::hash::{canonical_hash, to_hex};
use sonotrans_core::model::ModelConfig;
use sonotrans_core::train::{Lambdas, TrainConfig};
use sonotrans_core::{Error, Result};

/// Name of the effective configuration written next to training outputs.
pub const RUN_CONFIG_FILE: &str = "run.cfg";

/// Every recognised key with its value: defaults, then the file, then flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn defaults() -> BTreeMap<String, String> {
    let corpus = CorpusConfig::default();
    let train = TrainConfig::default();
    let mut m: BTreeMap<String, String> = corpus
        .hash_pairs()
        .into_iter()
        .map(|(k, v)| (format!("corpus.{k}"), v))
        .collect();
    for (k, v) in ModelConfig::default().hash_pairs() {
        m.insert(k.to_string(), v);
    }
    for (k, v) in train.hash_pairs() {
        m.insert(k.to_string(), v);
    }
    m.insert("train.max_steps".into(), train.max_steps.to_string());
    m.insert(
        "train.checkpoint_interval".into(),
        train.checkpoint_interval.to_string(),
    );
    m.insert("train.hold_out".into(), String::new());
    m
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: defaults() }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown and repeated
    /// keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected key = value, found {line:?}"),
            })?;
            let k = k.trim();
            if seen.iter().any(|s| s == k) {
                return Err(Error::Config(format!("key {k} set more than once")));
            }
            cfg.set(k, v.trim())?;
            seen.push(k.to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, found {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// SHA-256 of the sorted effective `key=value` pairs, in hex.
    pub fn hash(&self) -> String {
        to_hex(&canonical_hash(
            self.values.iter().map(|(k, v)| (k.as_str(), v.clone())),
        ))
    }

    /// The effective configuration in file syntax, keys sorted.
    pub fn to_file_string(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    fn typed<T: FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let v = self.get(key).expect("known key");
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: expected {what}, found {v:?}")))
    }

    fn uint(&self, key: &str) -> Result<usize> {
        self.typed(key, "a non-negative integer")
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.typed(key, "a non-negative integer")
    }

    fn real(&self, key: &str) -> Result<f64> {
        self.typed(key, "a number")
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key).expect("known key") {
            "true" | "on" => Ok(true),
            "false" | "off" => Ok(false),
            v => Err(Error::Config(format!("{key}: expected true or false, found {v:?}"))),
        }
    }

    pub fn corpus(&self) -> Result<CorpusConfig> {
        let languages: Vec<String> = self
            .get("corpus.languages")
            .expect("known key")
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let cfg = CorpusConfig {
            lexicon: LexiconConfig {
                seed: self.u64("corpus.seed")?,
                vocab_size: self.uint("corpus.vocab_size")?,
                languages,
                male_speakers: self.uint("corpus.male_speakers")?,
                female_speakers: self.uint("corpus.female_speakers")?,
                word_ms: (self.real("corpus.word_ms_min")?, self.real("corpus.word_ms_max")?),
            },
            render: RenderOptions {
                lead_ms: self.real("corpus.lead_ms")?,
                tail_ms: self.real("corpus.tail_ms")?,
                gap_ms: (self.real("corpus.gap_ms_min")?, self.real("corpus.gap_ms_max")?),
                jitter: self.real("corpus.jitter")?,
            },
            tier_counts: [
                self.uint("corpus.unigrams")?,
                self.uint("corpus.bigrams")?,
                self.uint("corpus.trigrams")?,
                self.uint("corpus.sentences")?,
            ],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let quant_bins = match self.get("model.quant_bins").expect("known key") {
            "none" => None,
            _ => Some(self.uint("model.quant_bins")?),
        };
        let cfg = ModelConfig {
            freq_bins: self.uint("model.freq_bins")?,
            conv_channels: self.uint("model.conv_channels")?,
            cnn: self.flag("model.cnn")?,
            enc_hidden: self.uint("model.enc_hidden")?,
            pyramid_layers: self.uint("model.pyramid_layers")?,
            pyramid: self.flag("model.pyramid")?,
            bidirectional: self.flag("model.bidirectional")?,
            attention: self.flag("model.attention")?,
            att_size: self.uint("model.att_size")?,
            dec_hidden: self.uint("model.dec_hidden")?,
            reduction: self.uint("model.reduction")?,
            quant_bins,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self, deterministic: bool) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lambdas: Lambdas::new(
                self.real("train.lambda_kl")?,
                self.real("train.lambda_l2")?,
                self.real("train.lambda_xent")?,
            ),
            learning_rate: self.real("train.learning_rate")?,
            grad_clip_norm: self.real("train.grad_clip_norm")?,
            batch_size: self.uint("train.batch_size")?,
            max_steps: self.u64("train.max_steps")?,
            seed: self.u64("train.seed")?,
            teacher_forcing: self.flag("train.teacher_forcing")?,
            checkpoint_interval: self.u64("train.checkpoint_interval")?,
            deterministic,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Speakers excluded from training (`train.hold_out`, comma separated).
    pub fn hold_out(&self) -> Result<Vec<usize>> {
        let v = self.get("train.hold_out").expect("known key");
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| {
                    Error::Config(format!("train.hold_out: expected speaker ids, found {v:?}"))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = RunConfig::default();
        assert_eq!(d.model().unwrap(), ModelConfig::default());
        assert_eq!(d.train(true).unwrap(), TrainConfig::default());
        assert_eq!(d.corpus().unwrap(), CorpusConfig::default());
        assert_eq!(RunConfig::parse(&d.to_file_string()).unwrap(), d);
    }
}
