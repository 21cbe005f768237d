use crate::{Error, Result};

pub const KERNEL: (usize, usize) = (7, 7);
pub const STRIDE: (usize, usize) = (2, 2);
pub const PADDING: (usize, usize) = (3, 3);
/// Frame stride of the slicing front-end used when the convolutions are off.
pub const SLICE_STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Spectrogram bins per frame (F).
    pub freq_bins: usize,
    /// Channels of both convolution blocks (C).
    pub conv_channels: usize,
    /// Convolutional front-end; when off every fourth frame is taken as is.
    pub cnn: bool,
    /// Hidden size of each encoder direction (d).
    pub enc_hidden: usize,
    /// Encoder layers above the first (L_p).
    pub pyramid_layers: usize,
    /// Whether those layers halve the sequence length.
    pub pyramid: bool,
    pub bidirectional: bool,
    /// When off the last valid encoder state is a constant context.
    pub attention: bool,
    pub att_size: usize,
    pub dec_hidden: usize,
    /// Frames emitted per decoder step (r).
    pub reduction: usize,
    /// Classes of the quantized output head (K), if present.
    pub quant_bins: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            freq_bins: 513,
            conv_channels: 8,
            cnn: true,
            enc_hidden: 64,
            pyramid_layers: 2,
            pyramid: true,
            bidirectional: true,
            attention: true,
            att_size: 64,
            dec_hidden: 64,
            reduction: 2,
            quant_bins: None,
        }
    }
}

/// Per-submodule scalar counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub items: Vec<(String, usize)>,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.items.iter().map(|(_, n)| n).sum()
    }

    pub fn get(&self, name: &str) -> usize {
        self.items
            .iter()
            .find(|(n, _)| n == name)
            .map_or(0, |(_, v)| *v)
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("freq_bins", self.freq_bins),
            ("conv_channels", self.conv_channels),
            ("enc_hidden", self.enc_hidden),
            ("att_size", self.att_size),
            ("dec_hidden", self.dec_hidden),
            ("reduction", self.reduction),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if let Some(k) = self.quant_bins {
            if !(2..=65_536).contains(&k) {
                return Err(Error::Config(format!("quant_bins {k} outside [2, 65536]")));
            }
        }
        Ok(())
    }

    /// Width of one encoder state.
    pub fn enc_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.enc_hidden
        } else {
            self.enc_hidden
        }
    }

    pub fn conv_freq(&self) -> (usize, usize) {
        let f1 = ceil_div(self.freq_bins, 2);
        (f1, ceil_div(f1, 2))
    }

    /// Width of a front-end feature row.
    pub fn feat_dim(&self) -> usize {
        if self.cnn {
            self.conv_channels * self.conv_freq().1
        } else {
            self.freq_bins
        }
    }

    /// Front-end output length for `t` input frames.
    pub fn conv_len(&self, t: usize) -> usize {
        if self.cnn {
            ceil_div(ceil_div(t, 2), 2)
        } else {
            ceil_div(t, SLICE_STRIDE)
        }
    }

    /// Encoder output length for `t` input frames.
    pub fn encoder_len(&self, t: usize) -> usize {
        let mut n = self.conv_len(t);
        if self.pyramid {
            for _ in 0..self.pyramid_layers {
                n = ceil_div(n, 2);
            }
        }
        n
    }

    pub fn decoder_steps(&self, target_frames: usize) -> usize {
        ceil_div(target_frames, self.reduction)
    }

    /// Values emitted per decoder step (`r·F`).
    pub fn block_width(&self) -> usize {
        self.reduction * self.freq_bins
    }

    /// Input width of encoder layer `l`.
    pub fn layer_input(&self, l: usize) -> usize {
        match l {
            0 => self.feat_dim(),
            _ if self.pyramid => 2 * self.enc_dim(),
            _ => self.enc_dim(),
        }
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn count_params(&self) -> ParamCount {
        let lstm = |d_in: usize, d: usize| 4 * d * (d_in + d) + 4 * d;
        let c = self.conv_channels;
        let (kt, kf) = KERNEL;
        let mut items = Vec::new();
        if self.cnn {
            items.push(("conv1".to_string(), c * kt * kf + c));
            items.push(("conv2".to_string(), c * kt * kf * c + c));
        }
        for l in 0..=self.pyramid_layers {
            items.push((
                format!("encoder.l{l}"),
                self.directions() * lstm(self.layer_input(l), self.enc_hidden),
            ));
        }
        let e = self.enc_dim();
        let a = self.att_size;
        if self.attention {
            items.push(("attention".to_string(), self.dec_hidden * a + e * a + a + a));
        }
        let bw = self.block_width();
        items.push((
            "decoder".to_string(),
            lstm(bw + e, self.dec_hidden),
        ));
        items.push(("output".to_string(), (self.dec_hidden + e) * bw + bw));
        if let Some(k) = self.quant_bins {
            items.push(("quant".to_string(), (self.dec_hidden + e) * bw * k + bw * k));
        }
        ParamCount { items }
    }

    pub fn hash_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model.freq_bins", self.freq_bins.to_string()),
            ("model.conv_channels", self.conv_channels.to_string()),
            ("model.cnn", self.cnn.to_string()),
            ("model.enc_hidden", self.enc_hidden.to_string()),
            ("model.pyramid_layers", self.pyramid_layers.to_string()),
            ("model.pyramid", self.pyramid.to_string()),
            ("model.bidirectional", self.bidirectional.to_string()),
            ("model.attention", self.attention.to_string()),
            ("model.att_size", self.att_size.to_string()),
            ("model.dec_hidden", self.dec_hidden.to_string()),
            ("model.reduction", self.reduction.to_string()),
            (
                "model.quant_bins",
                self.quant_bins.map_or("none".to_string(), |k| k.to_string()),
            ),
        ]
    }
}
