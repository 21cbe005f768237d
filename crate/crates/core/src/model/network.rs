//! Graph construction for the front-end, encoder, attention and decoder.

use sonotrans_tensor::lstm::{lstm_step_preact, LstmWeights};
use sonotrans_tensor::{Graph, Real, Var};

use super::config::{ModelConfig, PADDING, SLICE_STRIDE, STRIDE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LayerWeights {
    pub fw: LstmWeights,
    pub bw: Option<LstmWeights>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub w_dec: Var,
    pub v_enc: Var,
    pub b: Var,
    pub score: Var,
}

/// Parameter nodes of one graph.
#[derive(Clone, Debug)]
pub struct Weights {
    pub conv: Option<[Var; 4]>,
    pub enc: Vec<LayerWeights>,
    pub att: Option<AttentionWeights>,
    pub dec_wy: Var,
    pub dec_wctx: Var,
    pub dec_u: Var,
    pub dec_b: Var,
    pub out_w: Var,
    pub out_b: Var,
    pub quant: Option<(Var, Var)>,
}

fn lstm_weights<R: Real>(g: &mut Graph<'_, R>, prefix: &str) -> Result<LstmWeights> {
    Ok(LstmWeights {
        w: g.param_named(&format!("{prefix}.w"))?,
        u: g.param_named(&format!("{prefix}.u"))?,
        b: g.param_named(&format!("{prefix}.b"))?,
    })
}

pub fn bind<R: Real>(g: &mut Graph<'_, R>, cfg: &ModelConfig) -> Result<Weights> {
    let conv = if cfg.cnn {
        Some([
            g.param_named("conv1.kernel")?,
            g.param_named("conv1.bias")?,
            g.param_named("conv2.kernel")?,
            g.param_named("conv2.bias")?,
        ])
    } else {
        None
    };
    let enc = (0..=cfg.pyramid_layers)
        .map(|l| {
            Ok(LayerWeights {
                fw: lstm_weights(g, &format!("enc.l{l}.fw"))?,
                bw: if cfg.bidirectional {
                    Some(lstm_weights(g, &format!("enc.l{l}.bw"))?)
                } else {
                    None
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let att = if cfg.attention {
        Some(AttentionWeights {
            w_dec: g.param_named("att.w_dec")?,
            v_enc: g.param_named("att.v_enc")?,
            b: g.param_named("att.b")?,
            score: g.param_named("att.score")?,
        })
    } else {
        None
    };
    let quant = if cfg.quant_bins.is_some() {
        Some((g.param_named("quant.w")?, g.param_named("quant.b")?))
    } else {
        None
    };
    Ok(Weights {
        conv,
        enc,
        att,
        dec_wy: g.param_named("dec.w_y")?,
        dec_wctx: g.param_named("dec.w_ctx")?,
        dec_u: g.param_named("dec.u")?,
        dec_b: g.param_named("dec.b")?,
        out_w: g.param_named("out.w")?,
        out_b: g.param_named("out.b")?,
        quant,
    })
}

/// Places a `frames × F` spectrogram on the graph.
pub fn spectrogram_input<R: Real>(
    g: &mut Graph<'_, R>,
    cfg: &ModelConfig,
    data: &[f64],
    frames: usize,
) -> Result<Var> {
    if frames == 0 || data.len() != frames * cfg.freq_bins {
        return Err(Error::Dimension(format!(
            "spectrogram of {} values for {frames} frames of {} bins",
            data.len(),
            cfg.freq_bins
        )));
    }
    Ok(g.constant(
        &[frames, cfg.freq_bins],
        data.iter().map(|&v| R::of(v)).collect(),
    )?)
}

/// `[T, F]` → `[T_conv, d_feat]`: two conv+ReLU blocks flattened channels-last,
/// or every fourth frame when the convolutions are off.
pub fn conv_frontend<R: Real>(
    g: &mut Graph<'_, R>,
    w: &Weights,
    x: Var,
) -> Result<Var> {
    let t = g.shape(x)[0];
    let Some([k1, b1, k2, b2]) = w.conv else {
        let rows = (0..t)
            .step_by(SLICE_STRIDE)
            .map(|i| g.row(x, i))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        return Ok(g.stack_rows(&rows)?);
    };
    let h = g.conv2d(x, k1, STRIDE, PADDING)?;
    let h = g.add_row(h, b1)?;
    let h = g.relu(h);
    let h = g.conv2d(h, k2, STRIDE, PADDING)?;
    let h = g.add_row(h, b2)?;
    let h = g.relu(h);
    let s = g.shape(h).to_vec();
    Ok(g.reshape(h, &[s[0], s[1] * s[2]])?)
}

fn run_direction<R: Real>(
    g: &mut Graph<'_, R>,
    x: Var,
    lw: LstmWeights,
    d: usize,
    reverse: bool,
) -> Result<Var> {
    let t_len = g.shape(x)[0];
    let xw = g.matmul(x, lw.w)?;
    let pre = g.add_row(xw, lw.b)?;
    let zero = g.constant(&[1, d], vec![R::zero(); d])?;
    let (mut h, mut c) = (zero, zero);
    let mut out = vec![zero; t_len];
    for k in 0..t_len {
        let t = if reverse { t_len - 1 - k } else { k };
        let xp = g.row(pre, t)?;
        (h, c) = lstm_step_preact(g, xp, lw.u, h, c)?;
        out[t] = h;
    }
    Ok(g.stack_rows(&out)?)
}

/// One (bi)directional LSTM layer over `[T, D]`.
pub fn blstm_layer<R: Real>(
    g: &mut Graph<'_, R>,
    cfg: &ModelConfig,
    x: Var,
    lw: &LayerWeights,
) -> Result<Var> {
    let fw = run_direction(g, x, lw.fw, cfg.enc_hidden, false)?;
    match lw.bw {
        Some(bw) => {
            let bw = run_direction(g, x, bw, cfg.enc_hidden, true)?;
            Ok(g.concat_cols(&[fw, bw])?)
        }
        None => Ok(fw),
    }
}

/// Concatenates adjacent rows `[h_2i, h_2i+1]`, zero-padding an odd length.
pub fn pair_rows<R: Real>(g: &mut Graph<'_, R>, x: Var) -> Result<Var> {
    let (t, d) = (g.shape(x)[0], g.shape(x)[1]);
    let x = if t % 2 == 1 { g.pad_rows(x, 1) } else { x };
    Ok(g.reshape(x, &[t.div_ceil(2), 2 * d])?)
}

/// Plain BLSTM layer followed by `L_p` pyramid layers.
pub fn pblstm_encode<R: Real>(
    g: &mut Graph<'_, R>,
    cfg: &ModelConfig,
    w: &Weights,
    features: Var,
) -> Result<Var> {
    let mut h = blstm_layer(g, cfg, features, &w.enc[0])?;
    for lw in &w.enc[1..] {
        if cfg.pyramid {
            h = pair_rows(g, h)?;
        }
        h = blstm_layer(g, cfg, h, lw)?;
    }
    Ok(h)
}

/// Front-end and encoder for one spectrogram.
pub fn encode<R: Real>(
    g: &mut Graph<'_, R>,
    cfg: &ModelConfig,
    w: &Weights,
    source: Var,
) -> Result<Var> {
    let feats = conv_frontend(g, w, source)?;
    pblstm_encode(g, cfg, w, feats)
}

/// Final-layer encoder states of a batch, padded to a common length.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[padded_len, enc_dim]` per item; rows past `lengths[i]` are zero.
    pub states: Vec<Var>,
    pub lengths: Vec<usize>,
    pub padded_len: usize,
}

pub fn encode_batch<R: Real>(
    g: &mut Graph<'_, R>,
    cfg: &ModelConfig,
    w: &Weights,
    sources: &[Var],
) -> Result<EncoderOutput> {
    let encoded = sources
        .iter()
        .map(|&s| encode(g, cfg, w, s))
        .collect::<Result<Vec<_>>>()?;
    let lengths: Vec<usize> = encoded.iter().map(|&h| g.shape(h)[0]).collect();
    let padded_len = lengths.iter().copied().max().unwrap_or(0);
    let states = encoded
        .into_iter()
        .zip(&lengths)
        .map(|(h, &n)| if n < padded_len { g.pad_rows(h, padded_len - n) } else { h })
        .collect();
    Ok(EncoderOutput {
        states,
        lengths,
        padded_len,
    })
}

/// Encoder states of one item prepared for repeated attention queries.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMemory {
    pub states: Var,
    pub len: usize,
    /// `V·h_j + b` for every row.
    keys: Option<Var>,
    last: Var,
}

pub fn prepare_attention<R: Real>(
    g: &mut Graph<'_, R>,
    w: &Weights,
    states: Var,
    len: usize,
) -> Result<AttentionMemory> {
    let rows = g.shape(states)[0];
    if len == 0 || len > rows {
        return Err(Error::Dimension(format!(
            "{len} valid encoder states of {rows}"
        )));
    }
    let keys = match &w.att {
        Some(a) => {
            let vh = g.matmul(states, a.v_enc)?;
            Some(g.add_row(vh, a.b)?)
        }
        None => None,
    };
    let last = g.row(states, len - 1)?;
    Ok(AttentionMemory {
        states,
        len,
        keys,
        last,
    })
}

/// `e_j = wᵀ tanh(W s + V h_j + b)` for every encoder row, as `[1, T]`.
pub fn attention_scores<R: Real>(
    g: &mut Graph<'_, R>,
    w: &Weights,
    mem: &AttentionMemory,
    s_prev: Var,
) -> Result<Var> {
    let (Some(a), Some(keys)) = (&w.att, mem.keys) else {
        return Err(Error::Usage("attention is disabled in this model".into()));
    };
    let q = g.matmul(s_prev, a.w_dec)?;
    let pre = g.add_row(keys, q)?;
    let act = g.tanh(pre);
    let e = g.matmul(act, a.score)?;
    let t = g.shape(e)[0];
    Ok(g.reshape(e, &[1, t])?)
}

/// Masked softmax over the valid positions, then `c = Σ α_j h_j`.
pub fn attend_from_scores<R: Real>(
    g: &mut Graph<'_, R>,
    mem: &AttentionMemory,
    scores: Var,
) -> Result<(Var, Var)> {
    let alpha = g.softmax_masked(scores, mem.len)?;
    let c = g.matmul(alpha, mem.states)?;
    Ok((c, alpha))
}

/// Context and alignment row for decoder state `s_prev`. Without attention
/// the context is the last valid encoder state and α is one-hot on it.
pub fn attend<R: Real>(
    g: &mut Graph<'_, R>,
    w: &Weights,
    mem: &AttentionMemory,
    s_prev: Var,
) -> Result<(Var, Var)> {
    if w.att.is_none() {
        let rows = g.shape(mem.states)[0];
        let mut onehot = vec![R::zero(); rows];
        onehot[mem.len - 1] = R::one();
        let alpha = g.constant(&[1, rows], onehot)?;
        return Ok((mem.last, alpha));
    }
    let scores = attention_scores(g, w, mem, s_prev)?;
    attend_from_scores(g, mem, scores)
}

/// Recurrent decoder state between steps.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    /// Context of the previous step (`c_{i-1}`).
    pub context: Var,
    /// Previous frame group, `[1, r·F]`.
    pub y_prev: Var,
}

pub fn initial_state<R: Real>(
    g: &mut Graph<'_, R>,
    cfg: &ModelConfig,
    mem: &AttentionMemory,
) -> Result<DecoderState> {
    let d = cfg.dec_hidden;
    let zero_h = g.constant(&[1, d], vec![R::zero(); d])?;
    let context = if cfg.attention {
        let e = cfg.enc_dim();
        g.constant(&[1, e], vec![R::zero(); e])?
    } else {
        mem.last
    };
    let bw = cfg.block_width();
    let y_prev = g.constant(&[1, bw], vec![R::zero(); bw])?;
    Ok(DecoderState {
        h: zero_h,
        c: zero_h,
        context,
        y_prev,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// `[1, r·F]` values in `[0, 1]`.
    pub block: Var,
    /// `[1, r·F·K]` when the quantized head is present.
    pub logits: Option<Var>,
    pub alpha: Var,
    pub state: DecoderState,
}

fn heads<R: Real>(g: &mut Graph<'_, R>, w: &Weights, sc: Var) -> Result<(Var, Option<Var>)> {
    let o = g.matmul(sc, w.out_w)?;
    let o = g.add_row(o, w.out_b)?;
    let block = g.sigmoid(o);
    let logits = match w.quant {
        Some((qw, qb)) => {
            let l = g.matmul(sc, qw)?;
            Some(g.add_row(l, qb)?)
        }
        None => None,
    };
    Ok((block, logits))
}

/// One decoder step: `c_i` from `s_{i-1}`, LSTM on `[y_{i-1}, c_{i-1}]`, then
/// the heads on `[s_i, c_i]`. The returned state feeds the block back as `y`.
pub fn decoder_step<R: Real>(
    g: &mut Graph<'_, R>,
    w: &Weights,
    mem: &AttentionMemory,
    state: DecoderState,
) -> Result<StepOutput> {
    let (ctx, alpha) = attend(g, w, mem, state.h)?;
    let py = g.matmul(state.y_prev, w.dec_wy)?;
    let py = g.add_row(py, w.dec_b)?;
    let pc = g.matmul(state.context, w.dec_wctx)?;
    let pre = g.add(py, pc)?;
    let (h, c) = lstm_step_preact(g, pre, w.dec_u, state.h, state.c)?;
    let sc = g.concat_cols(&[h, ctx])?;
    let (block, logits) = heads(g, w, sc)?;
    Ok(StepOutput {
        block,
        logits,
        alpha,
        state: DecoderState {
            h,
            c,
            context: ctx,
            y_prev: block,
        },
    })
}

/// How the decoder obtains its previous frame group.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    /// Ground-truth target, `frames × F` row-major.
    TeacherForced { target: &'a [f64], frames: usize },
    /// Own previous output for `frames` output frames.
    FreeRunning { frames: usize },
}

impl Mode<'_> {
    pub fn frames(&self) -> usize {
        match *self {
            Mode::TeacherForced { frames, .. } | Mode::FreeRunning { frames } => frames,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// `[steps·r, F]`; rows at or past the requested length are padding.
    pub frames: Var,
    /// `[steps·r·F, K]` when the quantized head is present.
    pub logits: Option<Var>,
    /// One α row per step (`padded_len` wide).
    pub alignment: Vec<Var>,
    pub steps: usize,
}

/// Runs `ceil(frames / r)` decoder steps. Teacher forcing batches the
/// frame-group and output projections over all steps.
pub fn decode<R: Real>(
    g: &mut Graph<'_, R>,
    cfg: &ModelConfig,
    w: &Weights,
    mem: &AttentionMemory,
    mode: Mode<'_>,
) -> Result<DecoderOutput> {
    let frames = mode.frames();
    if frames == 0 {
        return Err(Error::Dimension("target length must be at least one frame".into()));
    }
    let steps = cfg.decoder_steps(frames);
    let r = cfg.reduction;
    let f = cfg.freq_bins;
    let bw = cfg.block_width();
    let mut state = initial_state(g, cfg, mem)?;
    let mut alignment = Vec::with_capacity(steps);
    let (outputs, logits) = match mode {
        Mode::TeacherForced { target, frames } => {
            if target.len() != frames * f {
                return Err(Error::Dimension(format!(
                    "target of {} values for {frames} frames of {f} bins",
                    target.len()
                )));
            }
            // row i holds frame group i-1; row 0 is the all-zero go block
            let mut yp = vec![R::zero(); steps * bw];
            for i in 1..steps {
                let src = &target[(i - 1) * bw..i * bw];
                for (d, &s) in yp[i * bw..(i + 1) * bw].iter_mut().zip(src) {
                    *d = R::of(s);
                }
            }
            let yp = g.constant(&[steps, bw], yp)?;
            let pre_y = g.matmul(yp, w.dec_wy)?;
            let pre_y = g.add_row(pre_y, w.dec_b)?;
            let mut rows = Vec::with_capacity(steps);
            for i in 0..steps {
                let (ctx, alpha) = attend(g, w, mem, state.h)?;
                let py = g.row(pre_y, i)?;
                let pc = g.matmul(state.context, w.dec_wctx)?;
                let pre = g.add(py, pc)?;
                let (h, c) = lstm_step_preact(g, pre, w.dec_u, state.h, state.c)?;
                rows.push(g.concat_cols(&[h, ctx])?);
                alignment.push(alpha);
                state = DecoderState {
                    h,
                    c,
                    context: ctx,
                    y_prev: state.y_prev,
                };
            }
            let sc = g.stack_rows(&rows)?;
            heads(g, w, sc)?
        }
        Mode::FreeRunning { .. } => {
            let mut blocks = Vec::with_capacity(steps);
            let mut logit_rows = Vec::new();
            for _ in 0..steps {
                let out = decoder_step(g, w, mem, state)?;
                blocks.push(out.block);
                if let Some(l) = out.logits {
                    logit_rows.push(l);
                }
                alignment.push(out.alpha);
                state = out.state;
            }
            let frames_var = g.stack_rows(&blocks)?;
            let logits = if logit_rows.is_empty() {
                None
            } else {
                Some(g.stack_rows(&logit_rows)?)
            };
            (frames_var, logits)
        }
    };
    let frames_var = g.reshape(outputs, &[steps * r, f])?;
    let logits = match (logits, cfg.quant_bins) {
        (Some(l), Some(k)) => Some(g.reshape(l, &[steps * r * f, k])?),
        _ => None,
    };
    Ok(DecoderOutput {
        frames: frames_var,
        logits,
        alignment,
        steps,
    })
}
