use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::lexicon::{Sex, Speaker};
use super::sentences::Tier;
use crate::{Error, Result};

const MAGIC: &str = "# sonotrans corpus manifest v1";

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker_id: usize,
    pub tier: Tier,
    pub source_language: String,
    pub target_language: String,
    pub source_words: Vec<usize>,
    pub target_words: Vec<usize>,
    /// Relative to the manifest's directory.
    pub source_wav_path: PathBuf,
    pub target_wav_path: PathBuf,
    pub source_samples: usize,
    pub target_samples: usize,
    /// `[start, end)` sample ranges of the source words.
    pub word_boundaries: Vec<(usize, usize)>,
    pub target_word_boundaries: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub seed: u64,
    pub config_hash: String,
    pub languages: Vec<String>,
    pub vocab: Vec<String>,
    pub speakers: Vec<Speaker>,
    pub records: Vec<UtteranceRecord>,
}

impl CorpusManifest {
    pub fn records_for_speakers<'a>(
        &'a self,
        speakers: &'a [usize],
    ) -> impl Iterator<Item = &'a UtteranceRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| speakers.contains(&r.speaker_id))
    }
}

fn join_words(words: &[usize]) -> String {
    words
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn join_ranges(ranges: &[(usize, usize)]) -> String {
    ranges
        .iter()
        .map(|(a, b)| format!("{a}-{b}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn manifest_to_string(m: &CorpusManifest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "# seed={}", m.seed);
    let _ = writeln!(out, "# config_hash={}", m.config_hash);
    let _ = writeln!(out, "# languages={}", m.languages.join(","));
    let _ = writeln!(out, "# vocab={}", m.vocab.join(" "));
    for s in &m.speakers {
        let _ = writeln!(
            out,
            "# speaker={} sex={} pitch_scale={} gain={}",
            s.id,
            s.sex.as_str(),
            s.pitch_scale,
            s.gain
        );
    }
    for r in &m.records {
        let fields = [
            ("id", r.id.clone()),
            ("speaker_id", r.speaker_id.to_string()),
            ("tier", r.tier.as_str().to_string()),
            ("source_language", r.source_language.clone()),
            ("target_language", r.target_language.clone()),
            ("source_words", join_words(&r.source_words)),
            ("target_words", join_words(&r.target_words)),
            ("source_wav_path", r.source_wav_path.display().to_string()),
            ("target_wav_path", r.target_wav_path.display().to_string()),
            ("source_samples", r.source_samples.to_string()),
            ("target_samples", r.target_samples.to_string()),
            ("word_boundaries", join_ranges(&r.word_boundaries)),
            (
                "target_word_boundaries",
                join_ranges(&r.target_word_boundaries),
            ),
        ];
        let line: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "{}", line.join("\t"));
    }
    out
}

pub fn write_manifest(path: &Path, m: &CorpusManifest) -> Result<()> {
    std::fs::write(path, manifest_to_string(m)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| perr(line, format!("field {key}: cannot parse {v:?}")))
}

fn words(line: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split_whitespace().map(|w| num(line, key, w)).collect()
}

fn ranges(line: usize, key: &str, v: &str) -> Result<Vec<(usize, usize)>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(';')
        .map(|r| {
            let (a, b) = r
                .split_once('-')
                .ok_or_else(|| perr(line, format!("field {key}: bad range {r:?}")))?;
            Ok((num(line, key, a)?, num(line, key, b)?))
        })
        .collect()
}

fn parse_speaker(line: usize, body: &str) -> Result<Speaker> {
    let kv: BTreeMap<&str, &str> = body
        .split_whitespace()
        .filter_map(|t| t.split_once('='))
        .collect();
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| perr(line, format!("speaker header missing field {k}")))
    };
    Ok(Speaker {
        id: num(line, "speaker", get("speaker")?)?,
        sex: Sex::parse(get("sex")?)
            .ok_or_else(|| perr(line, "speaker sex must be male or female"))?,
        pitch_scale: num(line, "pitch_scale", get("pitch_scale")?)?,
        gain: num(line, "gain", get("gain")?)?,
    })
}

pub fn parse_manifest(text: &str) -> Result<CorpusManifest> {
    let mut seed = None;
    let mut config_hash = None;
    let mut languages = None;
    let mut vocab = Vec::new();
    let mut speakers = Vec::new();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(header) = raw.strip_prefix('#') {
            let header = header.trim();
            if line == 1 {
                if raw != MAGIC {
                    return Err(perr(line, format!("expected {MAGIC:?}")));
                }
                continue;
            }
            let Some((key, value)) = header.split_once('=') else {
                continue;
            };
            match key {
                "seed" => seed = Some(num::<u64>(line, "seed", value)?),
                "config_hash" => config_hash = Some(value.to_string()),
                "languages" => {
                    languages = Some(value.split(',').map(str::to_string).collect::<Vec<_>>())
                }
                "vocab" => vocab = value.split_whitespace().map(str::to_string).collect(),
                "speaker" => speakers.push(parse_speaker(line, header)?),
                other => return Err(perr(line, format!("unknown header key {other}"))),
            }
            continue;
        }
        if line == 1 {
            return Err(perr(line, format!("expected {MAGIC:?}")));
        }
        let mut kv = BTreeMap::new();
        for field in raw.split('\t') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| perr(line, format!("field {field:?} is not key=value")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| perr(line, format!("missing field {k}")))
        };
        records.push(UtteranceRecord {
            id: get("id")?.to_string(),
            speaker_id: num(line, "speaker_id", get("speaker_id")?)?,
            tier: Tier::parse(get("tier")?)
                .ok_or_else(|| perr(line, format!("field tier: unknown {:?}", get("tier"))))?,
            source_language: get("source_language")?.to_string(),
            target_language: get("target_language")?.to_string(),
            source_words: words(line, "source_words", get("source_words")?)?,
            target_words: words(line, "target_words", get("target_words")?)?,
            source_wav_path: PathBuf::from(get("source_wav_path")?),
            target_wav_path: PathBuf::from(get("target_wav_path")?),
            source_samples: num(line, "source_samples", get("source_samples")?)?,
            target_samples: num(line, "target_samples", get("target_samples")?)?,
            word_boundaries: ranges(line, "word_boundaries", get("word_boundaries")?)?,
            target_word_boundaries: ranges(
                line,
                "target_word_boundaries",
                get("target_word_boundaries")?,
            )?,
        });
    }
    if text.lines().next() != Some(MAGIC) {
        return Err(perr(1, format!("expected {MAGIC:?}")));
    }
    Ok(CorpusManifest {
        seed: seed.ok_or_else(|| perr(1, "missing header field seed"))?,
        config_hash: config_hash.ok_or_else(|| perr(1, "missing header field config_hash"))?,
        languages: languages.ok_or_else(|| perr(1, "missing header field languages"))?,
        vocab,
        speakers,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CorpusManifest {
        CorpusManifest {
            seed: 7,
            config_hash: "ab".repeat(32),
            languages: vec!["en".into(), "es".into()],
            vocab: vec!["w000".into(), "w001".into()],
            speakers: vec![Speaker {
                id: 0,
                sex: Sex::Female,
                pitch_scale: 1.123456789012345,
                gain: 0.7,
            }],
            records: vec![UtteranceRecord {
                id: "bigram-00000".into(),
                speaker_id: 0,
                tier: Tier::Bigram,
                source_language: "en".into(),
                target_language: "es".into(),
                source_words: vec![2, 0],
                target_words: vec![0, 2],
                source_wav_path: "wav/a.wav".into(),
                target_wav_path: "wav/b.wav".into(),
                source_samples: 9000,
                target_samples: 9100,
                word_boundaries: vec![(1600, 4000), (5000, 7400)],
                target_word_boundaries: vec![(1600, 4100), (5100, 7500)],
            }],
        }
    }

    #[test]
    fn round_trip() {
        let m = sample();
        assert_eq!(parse_manifest(&manifest_to_string(&m)).unwrap(), m);
    }

    #[test]
    fn missing_field_is_named_with_line() {
        let text = manifest_to_string(&sample()).replace("\ttier=bigram", "");
        match parse_manifest(&text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("tier"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = manifest_to_string(&sample()).replace("source_samples=9000", "source_samples=x");
        assert!(matches!(
            parse_manifest(&text),
            Err(Error::Parse { line: 7, .. })
        ));
    }
}
