//! Waveform/spectrogram conversion, the K-bin codec and Griffin-Lim.

mod fft;
mod griffin_lim;
pub mod image;
mod quant;
mod spectrogram;
mod stft;
pub mod wav;

pub use fft::Fft;
pub use griffin_lim::{
    griffin_lim, griffin_lim_linear, griffin_lim_momentum, spectral_convergence, GriffinLim,
    InitialPhase, DEFAULT_MOMENTUM,
};
pub use quant::{dequantize, dequantize_value, quantize, quantize_value, QuantizedSpectrogram, DEFAULT_BINS};
pub use spectrogram::{
    denormalize_value, normalize_magnitude, to_spectrogram, to_spectrogram_with, Spectrogram,
    Waveform, CEIL_DB, FLOOR_DB,
};
pub use stft::{istft, stft, StftMatrix, StftParams};

pub const SAMPLE_RATE: u32 = 16_000;
