//! RIFF PCM 16-bit mono 16 kHz input/output.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::spectrogram::Waveform;
use super::SAMPLE_RATE;
use crate::{Error, Result};

const EXPECTED: &str = "expected RIFF/WAVE PCM, 16-bit, mono, 16000 Hz";

fn spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}; {EXPECTED}", path.display())),
    })?;
    let s = reader.spec();
    if s != spec() {
        return Err(Error::Format(format!(
            "{}: got {} channel(s), {} Hz, {}-bit {:?}; {EXPECTED}",
            path.display(),
            s.channels,
            s.sample_rate,
            s.bits_per_sample,
            s.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|v| v.map(|x| x as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(Waveform::new(samples))
}

/// Samples are clamped to `[-1, 1]` and rounded to 16-bit.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut writer = WavWriter::create(path, spec()).map_err(map)?;
    for &x in &w.samples {
        writer.write_sample(to_pcm16(x)).map_err(map)?;
    }
    writer.finalize().map_err(map)
}

pub fn to_pcm16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new((0..500).map(|i| ((i as f64) * 0.05).sin() * 0.8).collect());
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate, 16_000);
        assert_eq!(r.len(), 500);
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() < 1.0 / 16_000.0);
        }
    }

    #[test]
    fn rejects_other_formats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stereo.wav");
        let mut s = spec();
        s.channels = 2;
        let mut w = WavWriter::create(&p, s).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&p).unwrap_err().to_string();
        assert!(err.contains("mono"), "{err}");

        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"not a wav file at all").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Format(_))));
    }
}
