use rand::Rng;
use sonotrans_tensor::rng::rng;

use super::lexicon::Lexicon;
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub lead_ms: f64,
    pub tail_ms: f64,
    /// Inclusive range for the silence between consecutive words.
    pub gap_ms: (f64, f64),
    /// Relative duration jitter; each word is resampled by `1 + u·jitter`, `u ∈ [-1, 1]`.
    pub jitter: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            lead_ms: 100.0,
            tail_ms: 100.0,
            gap_ms: (50.0, 150.0),
            jitter: 0.02,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.gap_ms;
        if self.lead_ms < 0.0 || self.tail_ms < 0.0 || lo < 0.0 || hi < lo {
            return Err(Error::Config(format!(
                "invalid silence lengths: lead {} tail {} gap {lo}..{hi}",
                self.lead_ms, self.tail_ms
            )));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::Config(format!(
                "jitter {} outside [0, 0.5)",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// A rendered utterance with the `[start, end)` sample range of every word.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedUtterance {
    pub waveform: Waveform,
    pub boundaries: Vec<(usize, usize)>,
}

fn ms_to_samples(ms: f64) -> usize {
    (ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
}

/// Linear-interpolation resample to `len` samples; endpoints are preserved.
pub fn resample_linear(x: &[f64], len: usize) -> Vec<f64> {
    if len == x.len() || x.len() < 2 {
        return x.to_vec();
    }
    let scale = (x.len() - 1) as f64 / (len - 1).max(1) as f64;
    (0..len)
        .map(|i| {
            let pos = i as f64 * scale;
            let k = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - k as f64;
            x[k] * (1.0 - frac) + x[k + 1] * frac
        })
        .collect()
}

/// Concatenates lexicon entries with seeded silence gaps, leading and
/// trailing silence, then peak-normalizes.
pub fn render_utterance(
    words: &[usize],
    lexicon: &Lexicon,
    language: usize,
    speaker: usize,
    seed: u64,
    options: &RenderOptions,
) -> Result<RenderedUtterance> {
    options.validate()?;
    let mut r = rng(seed);
    let mut samples = vec![0.0; ms_to_samples(options.lead_ms)];
    let mut boundaries = Vec::with_capacity(words.len());
    for (k, &w) in words.iter().enumerate() {
        let entry = lexicon.entry(w, language, speaker)?;
        let u: f64 = r.gen_range(-1.0..=1.0);
        let len = entry.waveform.len();
        let target = ((len as f64 * (1.0 + options.jitter * u)).round() as usize).max(2);
        let word = resample_linear(&entry.waveform.samples, target);
        if k > 0 {
            let (lo, hi) = options.gap_ms;
            let gap = r.gen_range(ms_to_samples(lo)..=ms_to_samples(hi));
            samples.resize(samples.len() + gap, 0.0);
        }
        let start = samples.len();
        samples.extend_from_slice(&word);
        boundaries.push((start, samples.len()));
    }
    samples.resize(samples.len() + ms_to_samples(options.tail_ms), 0.0);
    let mut waveform = Waveform::new(samples);
    waveform.peak_normalize();
    Ok(RenderedUtterance {
        waveform,
        boundaries,
    })
}
