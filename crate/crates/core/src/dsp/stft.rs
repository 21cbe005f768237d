use std::f64::consts::PI;

use num_complex::Complex64;

use super::fft::Fft;
use crate::{Error, Result};

/// Analysis parameters. Defaults: 50 ms Hann window, 12.5 ms hop, 1024-point FFT.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftParams {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            window: 800,
            hop: 200,
            fft_size: 1024,
        }
    }
}

impl StftParams {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window || self.window > self.fft_size {
            return Err(Error::Config(format!(
                "need 0 < hop ({}) <= window ({}) <= fft_size ({})",
                self.hop, self.window, self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Periodic Hann window.
    pub fn hann(&self) -> Vec<f64> {
        (0..self.window)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / self.window as f64).cos())
            .collect()
    }

    /// Frame count for a signal of `len` samples after zero-padding to a
    /// whole number of frames.
    pub fn frames_for(&self, len: usize) -> usize {
        let len = len.max(self.window);
        1 + (len - self.window).div_ceil(self.hop)
    }

    /// Samples covered by `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window
        }
    }

    /// The squared window overlap-adds to a constant at this hop.
    pub fn check_cola(&self) -> Result<()> {
        self.validate()?;
        let w = self.hann();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).map(|v| v * v).sum())
            .collect();
        let (lo, hi) = sums.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
        if !self.window.is_multiple_of(self.hop) || hi <= 0.0 || (hi - lo) / hi > 1e-9 {
            return Err(Error::Config(format!(
                "hop {} does not overlap-add the squared Hann window of {} to a constant",
                self.hop, self.window
            )));
        }
        Ok(())
    }
}

/// Complex STFT coefficients, `frames × bins`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StftMatrix {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl StftMatrix {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        StftMatrix {
            frames,
            bins,
            data: vec![Complex64::new(0.0, 0.0); frames * bins],
        }
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

pub fn stft(samples: &[f64], params: &StftParams) -> Result<StftMatrix> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::Dimension("stft of an empty signal".into()));
    }
    let fft = Fft::new(params.fft_size).expect("validated power of two");
    let window = params.hann();
    let frames = params.frames_for(samples.len());
    let bins = params.bins();
    let mut out = StftMatrix::zeros(frames, bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); params.fft_size];
    for t in 0..frames {
        let start = t * params.hop;
        for (n, b) in buf.iter_mut().enumerate() {
            let s = if n < params.window {
                samples.get(start + n).copied().unwrap_or(0.0) * window[n]
            } else {
                0.0
            };
            *b = Complex64::new(s, 0.0);
        }
        fft.forward(&mut buf);
        out.data[t * bins..(t + 1) * bins].copy_from_slice(&buf[..bins]);
    }
    Ok(out)
}

/// Weighted overlap-add inverse: `x = Σ w·ifft(X_t) / Σ w²`.
///
/// Output has `(frames - 1)·hop + window` samples. Samples where the squared
/// window envelope vanishes are returned as zero.
pub fn istft(spec: &StftMatrix, params: &StftParams) -> Result<Vec<f64>> {
    params.check_cola()?;
    if spec.bins != params.bins() {
        return Err(Error::Dimension(format!(
            "{} bins, expected {}",
            spec.bins,
            params.bins()
        )));
    }
    let fft = Fft::new(params.fft_size).expect("validated power of two");
    let window = params.hann();
    let len = params.samples_for(spec.frames);
    let mut out = vec![0.0; len];
    let mut env = vec![0.0; len];
    let n = params.fft_size;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..spec.frames {
        let frame = spec.frame(t);
        buf[..spec.bins].copy_from_slice(frame);
        // Hermitian extension; DC and Nyquist must be real for a real signal.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = frame[k].conj();
        }
        fft.inverse(&mut buf);
        let start = t * params.hop;
        for i in 0..params.window {
            out[start + i] += buf[i].re * window[i];
            env[start + i] += window[i] * window[i];
        }
    }
    for (o, e) in out.iter_mut().zip(&env) {
        *o = if *e > 1e-10 { *o / e } else { 0.0 };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_signal_zero_magnitudes() {
        let s = stft(&vec![0.0; 3000], &StftParams::default()).unwrap();
        assert!(s.magnitudes().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn empty_signal_is_dimension_error() {
        assert!(matches!(
            stft(&[], &StftParams::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn frame_count_formula() {
        let p = StftParams::default();
        assert_eq!(p.frames_for(800), 1);
        assert_eq!(p.frames_for(10), 1);
        assert_eq!(p.frames_for(1000), 2);
        assert_eq!(p.frames_for(1001), 3);
        let s = stft(&vec![0.1; 1001], &p).unwrap();
        assert_eq!(s.frames, 3);
        assert_eq!(s.bins, 513);
    }

    #[test]
    fn bin_centered_tone_peaks_at_bin() {
        let p = StftParams::default();
        let k = 37;
        let freq = k as f64 * 16_000.0 / p.fft_size as f64;
        let x: Vec<f64> = (0..8000)
            .map(|n| (2.0 * PI * freq * n as f64 / 16_000.0).sin())
            .collect();
        let s = stft(&x, &p).unwrap();
        let mags = s.magnitudes();
        for t in 1..s.frames - 1 {
            let row = &mags[t * s.bins..(t + 1) * s.bins];
            let argmax = (0..s.bins)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(argmax, k, "frame {t}");
        }
    }

    #[test]
    fn zero_matrix_gives_zero_signal() {
        let p = StftParams::default();
        let x = istft(&StftMatrix::zeros(4, 513), &p).unwrap();
        assert_eq!(x.len(), 1400);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_is_inverse_dft_over_window() {
        let p = StftParams::default();
        let mut r = rand::rngs::StdRng::seed_from_u64(4);
        let x: Vec<f64> = (0..800).map(|_| r.gen_range(-1.0..1.0)).collect();
        let s = stft(&x, &p).unwrap();
        assert_eq!(s.frames, 1);
        let y = istft(&s, &p).unwrap();
        for n in 1..800 {
            assert!((y[n] - x[n]).abs() < 1e-9);
        }
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn non_cola_hop_is_configuration_error() {
        let p = StftParams {
            window: 800,
            hop: 300,
            fft_size: 1024,
        };
        assert!(matches!(
            istft(&StftMatrix::zeros(2, 513), &p),
            Err(Error::Config(_))
        ));
    }
}
