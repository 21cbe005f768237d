//! Grayscale PNG export of spectrograms.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::spectrogram::Spectrogram;
use crate::{Error, Result};

/// Pixel rows top to bottom: time on x, frequency ascending upwards.
pub fn spectrogram_pixels(s: &Spectrogram) -> Vec<u8> {
    let (w, h) = (s.frames(), s.bins());
    let mut px = Vec::with_capacity(w * h);
    for row in 0..h {
        let f = h - 1 - row;
        for t in 0..w {
            px.push((s.get(t, f) * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    px
}

pub fn write_spectrogram_png(path: &Path, s: &Spectrogram) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let width = s.frames().max(1) as u32;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, s.bins() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut px = spectrogram_pixels(s);
    if s.frames() == 0 {
        px = vec![0; s.bins()];
    }
    let fail = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(&px).map_err(fail)?;
    writer.finish().map_err(fail)
}
