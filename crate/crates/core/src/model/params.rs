use sonotrans_tensor::init::xavier_uniform;
use sonotrans_tensor::rng::{derive_seed, rng, tag};
use sonotrans_tensor::{ParamSet, Real, Tensor};

use super::config::{ModelConfig, KERNEL};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    /// Zeros with the forget-gate quarter set to one.
    LstmBias,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn matrix(name: String, rows: usize, cols: usize) -> Spec {
    Spec {
        name,
        shape: vec![rows, cols],
        init: Init::Xavier {
            fan_in: rows,
            fan_out: cols,
        },
    }
}

fn zeros(name: String, shape: Vec<usize>) -> Spec {
    Spec {
        name,
        shape,
        init: Init::Zeros,
    }
}

fn lstm(prefix: &str, d_in: usize, d: usize, out: &mut Vec<Spec>) {
    out.push(matrix(format!("{prefix}.w"), d_in, 4 * d));
    out.push(matrix(format!("{prefix}.u"), d, 4 * d));
    out.push(Spec {
        name: format!("{prefix}.b"),
        shape: vec![4 * d],
        init: Init::LstmBias,
    });
}

fn specs(cfg: &ModelConfig) -> Vec<Spec> {
    let mut s = Vec::new();
    let c = cfg.conv_channels;
    let (kt, kf) = KERNEL;
    if cfg.cnn {
        s.push(Spec {
            name: "conv1.kernel".into(),
            shape: vec![c, kt, kf],
            init: Init::Xavier {
                fan_in: kt * kf,
                fan_out: kt * kf * c,
            },
        });
        s.push(zeros("conv1.bias".into(), vec![c]));
        s.push(Spec {
            name: "conv2.kernel".into(),
            shape: vec![c, kt, kf, c],
            init: Init::Xavier {
                fan_in: kt * kf * c,
                fan_out: kt * kf * c,
            },
        });
        s.push(zeros("conv2.bias".into(), vec![c]));
    }
    for l in 0..=cfg.pyramid_layers {
        let d_in = cfg.layer_input(l);
        lstm(&format!("enc.l{l}.fw"), d_in, cfg.enc_hidden, &mut s);
        if cfg.bidirectional {
            lstm(&format!("enc.l{l}.bw"), d_in, cfg.enc_hidden, &mut s);
        }
    }
    let e = cfg.enc_dim();
    let a = cfg.att_size;
    let dd = cfg.dec_hidden;
    if cfg.attention {
        s.push(matrix("att.w_dec".into(), dd, a));
        s.push(matrix("att.v_enc".into(), e, a));
        s.push(zeros("att.b".into(), vec![a]));
        s.push(matrix("att.score".into(), a, 1));
    }
    let bw = cfg.block_width();
    s.push(matrix("dec.w_y".into(), bw, 4 * dd));
    s.push(matrix("dec.w_ctx".into(), e, 4 * dd));
    s.push(matrix("dec.u".into(), dd, 4 * dd));
    s.push(Spec {
        name: "dec.b".into(),
        shape: vec![4 * dd],
        init: Init::LstmBias,
    });
    s.push(matrix("out.w".into(), dd + e, bw));
    s.push(zeros("out.b".into(), vec![bw]));
    if let Some(k) = cfg.quant_bins {
        s.push(matrix("quant.w".into(), dd + e, bw * k));
        s.push(zeros("quant.b".into(), vec![bw * k]));
    }
    s
}

/// Names and shapes of every learnable tensor, in storage order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    specs(cfg).into_iter().map(|s| (s.name, s.shape)).collect()
}

/// Xavier-uniform matrices, zero biases, forget-gate biases of one.
/// Each tensor draws from a seed derived from its name.
pub fn init_params<R: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamSet<R>> {
    cfg.validate()?;
    let mut ps = ParamSet::new();
    for spec in specs(cfg) {
        let t = match spec.init {
            Init::Xavier { fan_in, fan_out } => {
                let mut r = rng(derive_seed(seed, &[tag(&spec.name)]));
                xavier_uniform(&mut r, &spec.shape, fan_in, fan_out)
            }
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::LstmBias => {
                let mut t = Tensor::zeros(&spec.shape);
                let d = spec.shape[0] / 4;
                t.data_mut()[d..2 * d].iter_mut().for_each(|v| *v = R::one());
                t
            }
        };
        ps.insert(spec.name, t);
    }
    Ok(ps)
}

/// All-zero parameters of the right shapes.
pub fn zero_params<R: Real>(cfg: &ModelConfig) -> Result<ParamSet<R>> {
    cfg.validate()?;
    let mut ps = ParamSet::new();
    for spec in specs(cfg) {
        ps.insert(spec.name, Tensor::zeros(&spec.shape));
    }
    Ok(ps)
}
