use super::stft::{stft, StftMatrix, StftParams};
use super::SAMPLE_RATE;
use crate::{Error, Result};

pub const FLOOR_DB: f64 = -100.0;
pub const CEIL_DB: f64 = 20.0;
const MAG_EPS: f64 = 1e-6;

/// Mono PCM signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn silence(len: usize) -> Self {
        Waveform::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Scales to unit peak; silent signals are left untouched.
    pub fn peak_normalize(&mut self) {
        let p = self.peak();
        if p > 0.0 {
            self.samples.iter_mut().for_each(|v| *v /= p);
        }
    }

    pub fn mean_abs(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v.abs()).sum::<f64>() / self.samples.len() as f64
    }
}

/// Normalized log-magnitude spectrogram, `frames × bins`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    data: Vec<f64>,
    frames: usize,
    bins: usize,
    pub hop: usize,
    pub window: usize,
    pub floor_db: f64,
    pub ceil_db: f64,
}

impl Spectrogram {
    /// Wraps already-normalized values; every entry must lie in `[0, 1]`.
    pub fn from_normalized(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::Dimension(format!(
                "{} values for {frames}x{bins}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!(
                "spectrogram value {v} outside [0, 1]"
            )));
        }
        let p = StftParams::default();
        Ok(Spectrogram {
            data,
            frames,
            bins,
            hop: p.hop,
            window: p.window,
            floor_db: FLOOR_DB,
            ceil_db: CEIL_DB,
        })
    }

    pub fn zeros(frames: usize, bins: usize) -> Self {
        Spectrogram::from_normalized(frames, bins, vec![0.0; frames * bins]).expect("in range")
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.data[t * self.bins + f]
    }

    /// First `frames` frames.
    pub fn truncated(&self, frames: usize) -> Spectrogram {
        let frames = frames.min(self.frames);
        let mut s = self.clone();
        s.data.truncate(frames * self.bins);
        s.frames = frames;
        s
    }

    /// Drops trailing frames whose mean value is below `threshold`.
    pub fn trim_trailing_silence(&self, threshold: f64) -> Spectrogram {
        let mut keep = self.frames;
        while keep > 0 {
            let f = self.frame(keep - 1);
            if f.iter().sum::<f64>() / f.len().max(1) as f64 >= threshold {
                break;
            }
            keep -= 1;
        }
        self.truncated(keep)
    }

    /// Linear magnitudes (the inverse of the log/clamp/affine normalization).
    pub fn to_linear(&self) -> Vec<f64> {
        self.data.iter().map(|&v| denormalize_value(v)).collect()
    }

    pub fn mse(&self, other: &Spectrogram) -> Result<f64> {
        if self.frames != other.frames || self.bins != other.bins {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.frames, self.bins, other.frames, other.bins
            )));
        }
        let n = self.data.len().max(1) as f64;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }
}

/// `|X| → 20·log10(|X| + 1e-6) → clamp → [0, 1]`.
pub fn normalize_magnitude(mag: f64) -> f64 {
    let db = 20.0 * (mag + MAG_EPS).log10();
    (db.clamp(FLOOR_DB, CEIL_DB) - FLOOR_DB) / (CEIL_DB - FLOOR_DB)
}

/// Linear magnitude for a normalized value. The floor maps to exactly zero.
pub fn denormalize_value(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let db = FLOOR_DB + v.min(1.0) * (CEIL_DB - FLOOR_DB);
    (10f64.powf(db / 20.0) - MAG_EPS).max(0.0)
}

pub fn to_spectrogram(w: &Waveform) -> Result<Spectrogram> {
    to_spectrogram_with(w, &StftParams::default())
}

pub fn to_spectrogram_with(w: &Waveform, params: &StftParams) -> Result<Spectrogram> {
    let x: StftMatrix = stft(&w.samples, params)?;
    let data = x
        .data
        .iter()
        .map(|c| normalize_magnitude(c.norm()))
        .collect();
    Ok(Spectrogram {
        data,
        frames: x.frames,
        bins: x.bins,
        hop: params.hop,
        window: params.window,
        floor_db: FLOOR_DB,
        ceil_db: CEIL_DB,
    })
}
