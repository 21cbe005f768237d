use num_complex::Complex64;
use rand::Rng;
use sonotrans_tensor::rng::rng;

use super::spectrogram::{Spectrogram, Waveform};
use super::stft::{istft, stft, StftMatrix, StftParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitialPhase {
    #[default]
    Zero,
    Random(u64),
}

/// Reconstructed signal plus the spectral convergence after every iteration.
#[derive(Clone, Debug)]
pub struct GriffinLim {
    pub waveform: Waveform,
    pub convergence: Vec<f64>,
}

/// Weight of each one-sided bin in the two-sided spectrum's energy.
fn bin_weight(k: usize, bins: usize) -> f64 {
    if k == 0 || k + 1 == bins {
        1.0
    } else {
        2.0
    }
}

/// `‖|X| − mag‖_F / ‖mag‖_F`, measured over the full two-sided spectrum.
pub fn spectral_convergence(x: &StftMatrix, mag: &[f64]) -> f64 {
    let bins = x.bins;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (c, &m)) in x.data.iter().zip(mag).enumerate() {
        let w = bin_weight(i % bins, bins);
        let d = c.norm() - m;
        num += w * d * d;
        den += w * m * m;
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Momentum applied to accelerated steps unless overridden.
pub const DEFAULT_MOMENTUM: f64 = 0.99;

/// Griffin-Lim on a normalized spectrogram (denormalized to linear magnitude first).
pub fn griffin_lim(
    spec: &Spectrogram,
    iterations: usize,
    init: InitialPhase,
) -> Result<GriffinLim> {
    let params = StftParams {
        window: spec.window,
        hop: spec.hop,
        fft_size: (spec.bins() - 1) * 2,
    };
    griffin_lim_linear(&spec.to_linear(), spec.frames(), &params, iterations, init)
}

/// Griffin-Lim on linear magnitudes laid out `frames × (fft_size/2 + 1)`.
pub fn griffin_lim_linear(
    mag: &[f64],
    frames: usize,
    params: &StftParams,
    iterations: usize,
    init: InitialPhase,
) -> Result<GriffinLim> {
    griffin_lim_momentum(mag, frames, params, iterations, init, DEFAULT_MOMENTUM)
}

fn project(est: &StftMatrix, mag: &[f64]) -> StftMatrix {
    let mut out = est.clone();
    for (c, &m) in out.data.iter_mut().zip(mag) {
        let n = c.norm();
        *c = if n > 0.0 {
            *c * (m / n)
        } else {
            Complex64::new(m, 0.0)
        };
    }
    out
}

/// Griffin-Lim with safeguarded momentum.
///
/// Each iteration first tries `t + momentum·(t − t_prev)`, where `t` is the
/// magnitude projection of the current estimate. The accelerated step is kept
/// only if it does not raise the spectral convergence; otherwise the plain
/// projection step is taken. `momentum = 0` is the classic iteration.
pub fn griffin_lim_momentum(
    mag: &[f64],
    frames: usize,
    params: &StftParams,
    iterations: usize,
    init: InitialPhase,
    momentum: f64,
) -> Result<GriffinLim> {
    if iterations == 0 {
        return Err(Error::Config(
            "griffin-lim needs at least one iteration".into(),
        ));
    }
    if !(0.0..2.0).contains(&momentum) {
        return Err(Error::Config(format!("momentum {momentum} outside [0, 2)")));
    }
    params.check_cola()?;
    let bins = params.bins();
    if mag.len() != frames * bins {
        return Err(Error::Dimension(format!(
            "{} magnitudes for {frames} frames of {bins} bins",
            mag.len()
        )));
    }
    let len = params.samples_for(frames);
    if frames == 0 || mag.iter().all(|&m| m == 0.0) {
        return Ok(GriffinLim {
            waveform: Waveform::silence(len),
            convergence: vec![0.0; iterations],
        });
    }

    let mut start = StftMatrix::zeros(frames, bins);
    match init {
        InitialPhase::Zero => {
            for (c, &m) in start.data.iter_mut().zip(mag) {
                *c = Complex64::new(m, 0.0);
            }
        }
        InitialPhase::Random(seed) => {
            let mut r = rng(seed);
            for (c, &m) in start.data.iter_mut().zip(mag) {
                *c = Complex64::from_polar(
                    m,
                    r.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                );
            }
        }
    }

    let mut convergence = Vec::with_capacity(iterations);
    let mut x = istft(&start, params)?;
    let mut est = stft(&x, params)?;
    debug_assert_eq!(est.frames, frames);
    let mut current = spectral_convergence(&est, mag);
    convergence.push(current);
    let mut prev = start;
    for _ in 1..iterations {
        let target = project(&est, mag);
        let mut accepted = false;
        if momentum > 0.0 {
            let mut fast = target.clone();
            for (f, p) in fast.data.iter_mut().zip(&prev.data) {
                *f += (*f - p) * momentum;
            }
            let xf = istft(&fast, params)?;
            let ef = stft(&xf, params)?;
            let sc = spectral_convergence(&ef, mag);
            if sc <= current {
                x = xf;
                est = ef;
                current = sc;
                accepted = true;
            }
        }
        if !accepted {
            x = istft(&target, params)?;
            est = stft(&x, params)?;
            current = spectral_convergence(&est, mag);
        }
        convergence.push(current);
        prev = target;
    }
    let mut waveform = Waveform::new(x);
    waveform.peak_normalize();
    Ok(GriffinLim {
        waveform,
        convergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_magnitude_gives_silence() {
        let p = StftParams::default();
        let r = griffin_lim_linear(&vec![0.0; 5 * 513], 5, &p, 3, InitialPhase::Zero).unwrap();
        assert!(r.waveform.samples.iter().all(|&v| v == 0.0));
        assert_eq!(r.convergence, vec![0.0; 3]);
        let s = Spectrogram::zeros(5, 513);
        let r = griffin_lim(&s, 2, InitialPhase::Zero).unwrap();
        assert_eq!(r.waveform.peak(), 0.0);
    }

    #[test]
    fn zero_iterations_rejected() {
        let p = StftParams::default();
        assert!(griffin_lim_linear(&[1.0; 513], 1, &p, 0, InitialPhase::Zero).is_err());
        assert!(griffin_lim_momentum(&[1.0; 513], 1, &p, 3, InitialPhase::Zero, 2.5).is_err());
    }
}
