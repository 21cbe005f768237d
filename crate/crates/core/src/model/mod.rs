//! Convolutional front-end, pyramidal BLSTM encoder and attention decoder
//! emitting `r` spectrogram frames per step.

mod config;
pub mod network;
mod params;

pub use config::{ModelConfig, ParamCount, KERNEL, PADDING, SLICE_STRIDE, STRIDE};
pub use network::Mode;
pub use params::{init_params, param_shapes, zero_params};

use sonotrans_tensor::{Graph, ParamSet, Real};

use crate::dsp::Spectrogram;
use crate::{Error, Result};

/// Generated frames per source frame when decoding without a target.
pub const FREE_RUN_BUDGET: f64 = 1.5;
/// Mean value under which trailing generated frames are dropped.
pub const SILENCE_THRESHOLD: f64 = 0.02;

/// Values read back from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// The requested number of frames.
    pub spectrogram: Spectrogram,
    pub steps: usize,
    pub encoder_len: usize,
    /// One row per step over the valid encoder positions.
    pub alignment: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Model<R: Real = f32> {
    pub config: ModelConfig,
    pub params: ParamSet<R>,
}

impl<R: Real> Model<R> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet<R>) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Integrity(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Integrity(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Integrity(format!("missing parameter {name}"))),
            }
        }
        Ok(Model { config, params })
    }

    fn check_bins(&self, s: &Spectrogram) -> Result<()> {
        if s.bins() != self.config.freq_bins {
            return Err(Error::Dimension(format!(
                "spectrogram has {} bins, model expects {}",
                s.bins(),
                self.config.freq_bins
            )));
        }
        Ok(())
    }

    pub fn forward(&self, source: &Spectrogram, mode: Mode<'_>) -> Result<Prediction> {
        self.check_bins(source)?;
        let cfg = &self.config;
        let mut g = Graph::with_params(&self.params);
        let w = network::bind(&mut g, cfg)?;
        let x = network::spectrogram_input(&mut g, cfg, source.data(), source.frames())?;
        let h = network::encode(&mut g, cfg, &w, x)?;
        let len = g.shape(h)[0];
        let mem = network::prepare_attention(&mut g, &w, h, len)?;
        let out = network::decode(&mut g, cfg, &w, &mem, mode)?;
        let frames = mode.frames();
        let data: Vec<f64> = g.value(out.frames)[..frames * cfg.freq_bins]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let alignment = out
            .alignment
            .iter()
            .map(|&a| g.value(a)[..len].iter().map(|v| v.as_f64()).collect())
            .collect();
        Ok(Prediction {
            spectrogram: Spectrogram::from_normalized(frames, cfg.freq_bins, data)?,
            steps: out.steps,
            encoder_len: len,
            alignment,
        })
    }

    /// Free-running decode for `1.5 × T_src` frames, with trailing
    /// near-silent frames removed (at least one frame is kept).
    pub fn translate(&self, source: &Spectrogram) -> Result<Prediction> {
        let budget = ((source.frames() as f64 * FREE_RUN_BUDGET).ceil() as usize).max(1);
        let mut p = self.forward(source, Mode::FreeRunning { frames: budget })?;
        let trimmed = p.spectrogram.trim_trailing_silence(SILENCE_THRESHOLD);
        let keep = trimmed.frames().max(1);
        p.spectrogram = p.spectrogram.truncated(keep);
        Ok(p)
    }

    /// Mean of the final encoder states.
    pub fn embed(&self, source: &Spectrogram) -> Result<Vec<f64>> {
        self.check_bins(source)?;
        let cfg = &self.config;
        let mut g = Graph::with_params(&self.params);
        let w = network::bind(&mut g, cfg)?;
        let x = network::spectrogram_input(&mut g, cfg, source.data(), source.frames())?;
        let h = network::encode(&mut g, cfg, &w, x)?;
        let (t, e) = (g.shape(h)[0], g.shape(h)[1]);
        let v = g.value(h);
        Ok((0..e)
            .map(|j| (0..t).map(|i| v[i * e + j].as_f64()).sum::<f64>() / t as f64)
            .collect())
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }
}
