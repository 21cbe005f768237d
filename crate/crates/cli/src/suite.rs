//! The 64-bit finite-difference gradient suite behind `gradcheck`.

use rand::Rng;
use sonotrans_core::dsp::Spectrogram;
use sonotrans_core::model::network::{self, DecoderOutput, Mode};
use sonotrans_core::model::{init_params, ModelConfig};
use sonotrans_tensor::lstm::{lstm_cell, LstmWeights};
use sonotrans_tensor::rng::{derive_seed, rng, tag};
use sonotrans_tensor::{
    grad_check_with, GradCheckOptions, GradCheckReport, Graph, ParamSet, Result, Tensor,
    TensorError, Var,
};

/// Checked operations, in report order.
pub const OPS: [&str; 9] = [
    "matmul",
    "conv2d",
    "lstm_cell",
    "softmax",
    "attention",
    "loss_l2",
    "loss_kl",
    "loss_xent",
    "model",
];

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Options of one suite run. `fault` names an op whose analytic gradient is
/// deliberately corrupted, to exercise the failure path.
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seeds: usize,
    pub base_seed: u64,
    pub fault: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seeds: 5,
            base_seed: 0,
            fault: None,
        }
    }
}

fn uniform(r: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect()).expect("shape")
}

/// Zero-valued term whose analytic gradient is one everywhere but whose
/// finite-difference gradient is zero.
fn fault_term(g: &mut Graph<'_, f64>, v: Var) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let frozen = g.constant(&shape, g.value(v).to_vec())?;
    let d = g.sub(v, frozen)?;
    Ok(g.sum(d))
}

/// `sum(v ⊙ weights)`, giving every element a distinct gradient.
fn weighted_sum(g: &mut Graph<'_, f64>, v: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(g.shape(v).to_vec().as_slice(), weights.data().to_vec())?;
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn core_err(e: sonotrans_core::Error) -> TensorError {
    TensorError::Usage(e.to_string())
}

fn tiny_model(quant_bins: Option<usize>) -> ModelConfig {
    ModelConfig {
        freq_bins: 6,
        conv_channels: 2,
        enc_hidden: 4,
        pyramid_layers: 1,
        att_size: 3,
        dec_hidden: 4,
        reduction: 2,
        quant_bins,
        ..ModelConfig::default()
    }
}

fn spectrogram(r: &mut impl Rng, frames: usize, bins: usize) -> Spectrogram {
    let data = (0..frames * bins).map(|_| r.gen::<f64>()).collect();
    Spectrogram::from_normalized(frames, bins, data).expect("values in [0, 1]")
}

fn model_forward(
    g: &mut Graph<'_, f64>,
    cfg: &ModelConfig,
    src: &Spectrogram,
    tgt: &Spectrogram,
) -> Result<DecoderOutput> {
    let w = network::bind(g, cfg).map_err(core_err)?;
    let x = network::spectrogram_input(g, cfg, src.data(), src.frames()).map_err(core_err)?;
    let h = network::encode(g, cfg, &w, x).map_err(core_err)?;
    let len = g.shape(h)[0];
    let mem = network::prepare_attention(g, &w, h, len).map_err(core_err)?;
    let mode = Mode::TeacherForced {
        target: tgt.data(),
        frames: tgt.frames(),
    };
    network::decode(g, cfg, &w, &mem, mode).map_err(core_err)
}

/// One case: the parameters and the scalar objective over them.
type Objective = Box<dyn Fn(&mut Graph<'_, f64>) -> Result<Var>>;

fn case(op: &str, seed: u64) -> Result<(ParamSet<f64>, Objective, Option<usize>)> {
    let mut r = rng(derive_seed(seed, &[tag(op)]));
    let mut ps = ParamSet::new();
    let objective: Objective = match op {
        "matmul" => {
            ps.insert("a", uniform(&mut r, &[3, 4], -1.0, 1.0));
            ps.insert("b", uniform(&mut r, &[4, 5], -1.0, 1.0));
            let c = uniform(&mut r, &[3, 5], -1.0, 1.0);
            Box::new(move |g| {
                let (a, b) = (g.param(0), g.param(1));
                let y = g.matmul(a, b)?;
                weighted_sum(g, y, &c)
            })
        }
        "conv2d" => {
            ps.insert("input", uniform(&mut r, &[9, 8, 2], -1.0, 1.0));
            ps.insert("kernel", uniform(&mut r, &[3, 3, 3, 2], -1.0, 1.0));
            let c = uniform(&mut r, &[5, 8, 3], -1.0, 1.0);
            Box::new(move |g| {
                let (x, k) = (g.param(0), g.param(1));
                let y = g.conv2d(x, k, (2, 1), (1, 1))?;
                weighted_sum(g, y, &c)
            })
        }
        "lstm_cell" => {
            let (d_in, d) = (5, 4);
            ps.insert("x", uniform(&mut r, &[1, d_in], -1.0, 1.0));
            ps.insert("h", uniform(&mut r, &[1, d], -1.0, 1.0));
            ps.insert("c", uniform(&mut r, &[1, d], -1.0, 1.0));
            ps.insert("w", uniform(&mut r, &[d_in, 4 * d], -0.5, 0.5));
            ps.insert("u", uniform(&mut r, &[d, 4 * d], -0.5, 0.5));
            ps.insert("b", uniform(&mut r, &[4 * d], -0.5, 0.5));
            let ch = uniform(&mut r, &[1, d], -1.0, 1.0);
            let cc = uniform(&mut r, &[1, d], -1.0, 1.0);
            Box::new(move |g| {
                let wts = LstmWeights {
                    w: g.param(3),
                    u: g.param(4),
                    b: g.param(5),
                };
                let (x, h0, c0) = (g.param(0), g.param(1), g.param(2));
                let (h, c) = lstm_cell(g, x, h0, c0, wts)?;
                let a = weighted_sum(g, h, &ch)?;
                let b = weighted_sum(g, c, &cc)?;
                g.add(a, b)
            })
        }
        "softmax" => {
            ps.insert("scores", uniform(&mut r, &[3, 6], -2.0, 2.0));
            let c = uniform(&mut r, &[3, 6], -1.0, 1.0);
            Box::new(move |g| {
                let x = g.param(0);
                let y = g.softmax(x)?;
                weighted_sum(g, y, &c)
            })
        }
        "attention" => {
            let cfg = tiny_model(None);
            ps = init_params::<f64>(&cfg, seed).map_err(core_err)?;
            let e = 2 * cfg.enc_hidden;
            ps.insert("probe.states", uniform(&mut r, &[5, e], -1.0, 1.0));
            ps.insert("probe.s_prev", uniform(&mut r, &[1, cfg.dec_hidden], -1.0, 1.0));
            let ca = uniform(&mut r, &[1, 5], -1.0, 1.0);
            let cc = uniform(&mut r, &[1, e], -1.0, 1.0);
            let n = ps.len();
            Box::new(move |g| {
                let w = network::bind(g, &cfg).map_err(core_err)?;
                let (states, s_prev) = (g.param(n - 2), g.param(n - 1));
                // the last row is padding
                let mem = network::prepare_attention(g, &w, states, 4).map_err(core_err)?;
                let scores = network::attention_scores(g, &w, &mem, s_prev).map_err(core_err)?;
                let (ctx, alpha) = network::attend_from_scores(g, &mem, scores).map_err(core_err)?;
                let a = weighted_sum(g, alpha, &ca)?;
                let b = weighted_sum(g, ctx, &cc)?;
                g.add(a, b)
            })
        }
        "loss_l2" | "loss_kl" => {
            ps.insert("logits", uniform(&mut r, &[4, 6], -2.0, 2.0));
            let target: Vec<f64> = (0..24).map(|_| r.gen::<f64>()).collect();
            let rows = [true, true, false, true];
            let kl = op == "loss_kl";
            Box::new(move |g| {
                let x = g.param(0);
                let y = g.sigmoid(x);
                if kl {
                    g.masked_kl(y, &target, &rows, 1e-8)
                } else {
                    g.masked_sse(y, &target, &rows)
                }
            })
        }
        "loss_xent" => {
            ps.insert("logits", uniform(&mut r, &[5, 8], -2.0, 2.0));
            let bins: Vec<usize> = (0..5).map(|_| r.gen_range(0..8)).collect();
            let rows = [true, false, true, true, true];
            Box::new(move |g| {
                let x = g.param(0);
                g.masked_xent(x, &bins, &rows)
            })
        }
        "model" => return model_case(seed),
        _ => return Err(TensorError::Usage(format!("unknown gradient check {op:?}"))),
    };
    Ok((ps, objective, None))
}

// The probe point sits near a fit (small residuals, confident class logits)
// so the loss stays small and central differences stay accurate.
fn model_case(seed: u64) -> Result<(ParamSet<f64>, Objective, Option<usize>)> {
    let quant = (seed % 2 == 1).then_some(3);
    let cfg = tiny_model(quant);
    let mut r = rng(derive_seed(seed, &[tag("model")]));
    let mut ps = init_params::<f64>(&cfg, seed).map_err(core_err)?;
    let src = spectrogram(&mut r, 16, 6);
    let tgt = spectrogram(&mut r, 5, 6);
    let (goal, bins) = {
        let mut g = Graph::with_params(&ps);
        let out = model_forward(&mut g, &cfg, &src, &tgt)?;
        let goal: Vec<f64> = g
            .value(out.frames)
            .iter()
            .map(|p| p + 0.01 * (r.gen::<f64>() - 0.5))
            .collect();
        let bins: Vec<usize> = match out.logits {
            Some(_) => (0..12).map(|_| r.gen_range(0..3)).collect(),
            None => Vec::new(),
        };
        (goal, bins)
    };
    if let Some(qb) = ps.get_mut("quant.b") {
        // the bias is shared by every step
        for (i, &b) in bins.iter().enumerate() {
            qb.data_mut()[i * 3 + b] = 10.0;
        }
    }
    let objective: Objective = Box::new(move |g| {
        let out = model_forward(g, &cfg, &src, &tgt)?;
        let rows = [true, true, true, true, true, false];
        let mut loss = g.masked_sse(out.frames, &goal, &rows)?;
        if let Some(logits) = out.logits {
            let cells: Vec<bool> = (0..36).map(|i| i < 30).collect();
            let shared: Vec<usize> = (0..36).map(|i| bins[i % 12]).collect();
            let xent = g.masked_xent(logits, &shared, &cells)?;
            loss = g.add(loss, xent)?;
        }
        Ok(loss)
    });
    Ok((ps, objective, Some(6)))
}

/// Checks one op at one seed.
pub fn check(op: &str, seed: u64, fault: bool) -> Result<GradCheckReport> {
    let (mut ps, objective, max_elements) = case(op, seed)?;
    let opts = GradCheckOptions {
        eps: EPS,
        tolerance: TOLERANCE,
        max_elements,
        seed,
    };
    grad_check_with(op, &mut ps, &opts, |g| {
        let loss = objective(g)?;
        if fault {
            let p = g.param(0);
            let f = fault_term(g, p)?;
            g.add(loss, f)
        } else {
            Ok(loss)
        }
    })
}

/// Every op over `seeds` consecutive seeds.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<SuiteRow>> {
    if let Some(f) = &opts.fault {
        if !OPS.contains(&f.as_str()) {
            return Err(TensorError::Usage(format!(
                "unknown op {f:?} for fault injection; expected one of {}",
                OPS.join(", ")
            )));
        }
    }
    let mut rows = Vec::new();
    for op in OPS {
        let fault = opts.fault.as_deref() == Some(op);
        for k in 0..opts.seeds as u64 {
            let seed = opts.base_seed + k;
            rows.push(SuiteRow {
                seed,
                report: check(op, seed, fault)?,
            });
        }
    }
    Ok(rows)
}

/// Tab-separated table with one row per (op, seed).
pub fn suite_table(rows: &[SuiteRow]) -> String {
    let mut s = String::from("op\tseed\tmax_rel_error\tstatus\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{:.3e}\t{}\n",
            r.report.op_name,
            r.seed,
            r.report.max_rel_error,
            if r.report.passed { "pass" } else { "FAIL" }
        ));
    }
    s
}
