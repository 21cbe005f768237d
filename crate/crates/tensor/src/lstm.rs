//! Directional LSTM cell built from graph primitives.
//!
//! Gate layout along the `4d` axis is input, forget, candidate, output.

use crate::error::{Result, TensorError};
use crate::{Graph, Real, Var};

/// Parameter nodes for one LSTM direction: `w [d_in, 4d]`, `u [d, 4d]`, `b [4d]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// One step given the input contribution `x_pre = x·w + b` (shape `[1, 4d]`).
pub fn lstm_step_preact<R: Real>(
    g: &mut Graph<'_, R>,
    x_pre: Var,
    u: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let d = g.value(h_prev).len();
    if g.value(x_pre).len() != 4 * d || g.value(c_prev).len() != d {
        return Err(TensorError::Dimension {
            op: "lstm_cell",
            detail: format!(
                "pre-activation {:?}, h {:?}, c {:?}",
                g.shape(x_pre),
                g.shape(h_prev),
                g.shape(c_prev)
            ),
        });
    }
    let rec = g.matmul(h_prev, u)?;
    let pre = g.add(x_pre, rec)?;
    let i = g.slice_cols(pre, 0, d)?;
    let f = g.slice_cols(pre, d, d)?;
    let cand = g.slice_cols(pre, 2 * d, d)?;
    let o = g.slice_cols(pre, 3 * d, d)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Full cell: `x [1, d_in]`, `h_prev`, `c_prev` `[1, d]`.
pub fn lstm_cell<R: Real>(
    g: &mut Graph<'_, R>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    weights: LstmWeights,
) -> Result<(Var, Var)> {
    let d = g.value(h_prev).len();
    let wshape = g.shape(weights.w).to_vec();
    let ushape = g.shape(weights.u).to_vec();
    if wshape.len() != 2
        || wshape[0] != g.value(x).len()
        || wshape[1] != 4 * d
        || ushape != [d, 4 * d]
        || g.value(weights.b).len() != 4 * d
    {
        return Err(TensorError::Dimension {
            op: "lstm_cell",
            detail: format!(
                "x {:?}, h {:?}, w {wshape:?}, u {ushape:?}, b {:?}",
                g.shape(x),
                g.shape(h_prev),
                g.shape(weights.b)
            ),
        });
    }
    let xw = g.matmul(x, weights.w)?;
    let x_pre = g.add_row(xw, weights.b)?;
    lstm_step_preact(g, x_pre, weights.u, h_prev, c_prev)
}
