use super::spectrogram::Spectrogram;
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 256;

/// Spectrogram values mapped onto `k` uniform bins over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedSpectrogram {
    pub bins: Vec<u16>,
    pub frames: usize,
    pub freq_bins: usize,
    pub k: usize,
}

/// Bin of a single value: `min(floor(v·K), K−1)`.
pub fn quantize_value(v: f64, k: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Range(format!("value {v} outside [0, 1]")));
    }
    Ok(((v * k as f64).floor() as usize).min(k - 1))
}

/// Bin centre `(bin + 0.5) / K`.
pub fn dequantize_value(bin: usize, k: usize) -> f64 {
    (bin as f64 + 0.5) / k as f64
}

pub fn quantize(s: &Spectrogram, k: usize) -> Result<QuantizedSpectrogram> {
    if !(2..=u16::MAX as usize + 1).contains(&k) {
        return Err(Error::Config(format!(
            "bin count {k} must be in [2, 65536]"
        )));
    }
    let bins = s
        .data()
        .iter()
        .map(|&v| quantize_value(v, k).map(|b| b as u16))
        .collect::<Result<_>>()?;
    Ok(QuantizedSpectrogram {
        bins,
        frames: s.frames(),
        freq_bins: s.bins(),
        k,
    })
}

pub fn dequantize(q: &QuantizedSpectrogram) -> Spectrogram {
    let data = q
        .bins
        .iter()
        .map(|&b| dequantize_value(b as usize, q.k))
        .collect();
    Spectrogram::from_normalized(q.frames, q.freq_bins, data).expect("bin centres lie in [0, 1]")
}
