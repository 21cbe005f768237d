use sonotrans_core::dsp::Spectrogram;
use sonotrans_core::model::network::{self, Mode};
use sonotrans_core::model::{init_params, param_shapes, zero_params, Model, ModelConfig};
use sonotrans_tensor::{grad_check_with, GradCheckOptions, Graph, ParamSet, TensorError};

fn tiny() -> ModelConfig {
    ModelConfig {
        freq_bins: 6,
        conv_channels: 2,
        enc_hidden: 4,
        pyramid_layers: 1,
        att_size: 3,
        dec_hidden: 4,
        reduction: 2,
        ..ModelConfig::default()
    }
}

fn spectrogram(frames: usize, bins: usize, seed: u64) -> Spectrogram {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let data = (0..frames * bins)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    Spectrogram::from_normalized(frames, bins, data).unwrap()
}

// Scalar reference implementation.

struct Ref<'a> {
    ps: &'a ParamSet<f64>,
    cfg: &'a ModelConfig,
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Ref<'_> {
    fn p(&self, name: &str) -> &[f64] {
        self.ps.get(name).unwrap().data()
    }

    fn conv(&self, x: &[Vec<Vec<f64>>], kernel: &str, bias: &str) -> Vec<Vec<Vec<f64>>> {
        let (t_n, f_n, ci) = (x.len(), x[0].len(), x[0][0].len());
        let co = self.cfg.conv_channels;
        let k = self.p(kernel);
        let b = self.p(bias);
        let ot = t_n.div_ceil(2);
        let of = f_n.div_ceil(2);
        let mut out = vec![vec![vec![0.0; co]; of]; ot];
        for (t, row) in out.iter_mut().enumerate() {
            for (f, cell) in row.iter_mut().enumerate() {
                for (o, v) in cell.iter_mut().enumerate() {
                    let mut acc = b[o];
                    for dt in 0..7 {
                        for df in 0..7 {
                            let st = (2 * t + dt) as isize - 3;
                            let sf = (2 * f + df) as isize - 3;
                            if st < 0 || sf < 0 || st as usize >= t_n || sf as usize >= f_n {
                                continue;
                            }
                            for c in 0..ci {
                                acc += k[((o * 7 + dt) * 7 + df) * ci + c]
                                    * x[st as usize][sf as usize][c];
                            }
                        }
                    }
                    *v = acc.max(0.0);
                }
            }
        }
        out
    }

    fn lstm(&self, prefix: &str, xs: &[Vec<f64>], d: usize, reverse: bool) -> Vec<Vec<f64>> {
        let w = self.p(&format!("{prefix}.w"));
        let u = self.p(&format!("{prefix}.u"));
        let b = self.p(&format!("{prefix}.b"));
        let mut h = vec![0.0; d];
        let mut c = vec![0.0; d];
        let mut out = vec![vec![]; xs.len()];
        let order: Vec<usize> = if reverse {
            (0..xs.len()).rev().collect()
        } else {
            (0..xs.len()).collect()
        };
        for t in order {
            let (nh, nc) = cell(w, u, b, &xs[t], &h, &c, d);
            h = nh;
            c = nc;
            out[t] = h.clone();
        }
        out
    }

    fn encode(&self, x: &Spectrogram) -> Vec<Vec<f64>> {
        let cfg = self.cfg;
        let input: Vec<Vec<Vec<f64>>> = (0..x.frames())
            .map(|t| x.frame(t).iter().map(|&v| vec![v]).collect())
            .collect();
        let h1 = self.conv(&input, "conv1.kernel", "conv1.bias");
        let h2 = self.conv(&h1, "conv2.kernel", "conv2.bias");
        let mut h: Vec<Vec<f64>> = h2.iter().map(|r| r.concat()).collect();
        for l in 0..=cfg.pyramid_layers {
            if l > 0 {
                if h.len() % 2 == 1 {
                    h.push(vec![0.0; h[0].len()]);
                }
                h = h.chunks(2).map(|p| p.concat()).collect();
            }
            let fw = self.lstm(&format!("enc.l{l}.fw"), &h, cfg.enc_hidden, false);
            let bw = self.lstm(&format!("enc.l{l}.bw"), &h, cfg.enc_hidden, true);
            h = fw.iter().zip(&bw).map(|(a, b)| [a.clone(), b.clone()].concat()).collect();
        }
        h
    }

    fn attend(&self, hs: &[Vec<f64>], s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = self.cfg.att_size;
        let wd = self.p("att.w_dec");
        let ve = self.p("att.v_enc");
        let b = self.p("att.b");
        let sc = self.p("att.score");
        let e: Vec<f64> = hs
            .iter()
            .map(|h| {
                (0..a)
                    .map(|k| {
                        let mut z = b[k];
                        z += s.iter().enumerate().map(|(i, v)| v * wd[i * a + k]).sum::<f64>();
                        z += h.iter().enumerate().map(|(i, v)| v * ve[i * a + k]).sum::<f64>();
                        sc[k] * z.tanh()
                    })
                    .sum()
            })
            .collect();
        let m = e.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
        let alpha: Vec<f64> = e.iter().map(|v| (v - m).exp() / z).collect();
        let dim = hs[0].len();
        let ctx = (0..dim)
            .map(|j| hs.iter().zip(&alpha).map(|(h, al)| al * h[j]).sum())
            .collect();
        (ctx, alpha)
    }

    /// Returns frames (steps·r rows) and α rows.
    fn decode(&self, hs: &[Vec<f64>], target: Option<&Spectrogram>, frames: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let cfg = self.cfg;
        let (dd, e, bw) = (cfg.dec_hidden, cfg.enc_dim(), cfg.block_width());
        let steps = frames.div_ceil(cfg.reduction);
        let wy = self.p("dec.w_y");
        let wc = self.p("dec.w_ctx");
        let u = self.p("dec.u");
        let b = self.p("dec.b");
        let ow = self.p("out.w");
        let ob = self.p("out.b");
        let mut h = vec![0.0; dd];
        let mut c = vec![0.0; dd];
        let mut ctx_prev = vec![0.0; e];
        let mut y_prev = vec![0.0; bw];
        let mut out = Vec::new();
        let mut alphas = Vec::new();
        for i in 0..steps {
            let (ctx, alpha) = self.attend(hs, &h);
            let mut w = Vec::with_capacity((bw + e) * 4 * dd);
            w.extend_from_slice(wy);
            w.extend_from_slice(wc);
            let x = [y_prev.clone(), ctx_prev.clone()].concat();
            let (nh, nc) = cell(&w, u, b, &x, &h, &c, dd);
            h = nh;
            c = nc;
            let sc = [h.clone(), ctx.clone()].concat();
            let block: Vec<f64> = (0..bw)
                .map(|j| sig(ob[j] + sc.iter().enumerate().map(|(k, v)| v * ow[k * bw + j]).sum::<f64>()))
                .collect();
            y_prev = match target {
                Some(t) => t.data()[i * bw..(i + 1) * bw].to_vec(),
                None => block.clone(),
            };
            out.extend_from_slice(&block);
            ctx_prev = ctx;
            alphas.push(alpha);
        }
        (out, alphas)
    }
}

fn cell(w: &[f64], u: &[f64], b: &[f64], x: &[f64], h: &[f64], c: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let g = 4 * d;
    let pre: Vec<f64> = (0..g)
        .map(|k| {
            b[k] + x.iter().enumerate().map(|(i, v)| v * w[i * g + k]).sum::<f64>()
                + h.iter().enumerate().map(|(i, v)| v * u[i * g + k]).sum::<f64>()
        })
        .collect();
    let mut nh = vec![0.0; d];
    let mut nc = vec![0.0; d];
    for j in 0..d {
        let i = sig(pre[j]);
        let f = sig(pre[d + j]);
        let cand = pre[2 * d + j].tanh();
        let o = sig(pre[3 * d + j]);
        nc[j] = f * c[j] + i * cand;
        nh[j] = o * nc[j].tanh();
    }
    (nh, nc)
}

#[test]
fn forward_matches_scalar_reference() {
    let cfg = tiny();
    let model = Model::<f64>::new(cfg.clone(), 3).unwrap();
    let reference = Ref { ps: &model.params, cfg: &cfg };
    let src = spectrogram(16, 6, 1);
    // 6 target frames fill the 3 steps exactly, so teacher forcing can read every group
    let tgt = spectrogram(6, 6, 2);
    let hs = reference.encode(&src);
    assert_eq!(hs.len(), 2);

    let tf = model
        .forward(&src, Mode::TeacherForced { target: tgt.data(), frames: 6 })
        .unwrap();
    let (want, alphas) = reference.decode(&hs, Some(&tgt), 6);
    for (a, b) in tf.spectrogram.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    for (a, b) in tf.alignment.iter().zip(&alphas) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    let fr = model.forward(&src, Mode::FreeRunning { frames: 5 }).unwrap();
    let (want, _) = reference.decode(&hs, None, 5);
    assert_eq!(fr.steps, 3);
    assert_eq!(fr.spectrogram.frames(), 5);
    for (a, b) in fr.spectrogram.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }

    let emb = model.embed(&src).unwrap();
    for (j, v) in emb.iter().enumerate() {
        assert!((v - (hs[0][j] + hs[1][j]) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn front_end_and_encoder_lengths_on_graph() {
    let cfg = ModelConfig {
        freq_bins: 513,
        ..tiny()
    };
    let ps = zero_params::<f32>(&cfg).unwrap();
    for (t, t_conv) in [(100, 25), (1, 1)] {
        let mut g = Graph::with_params(&ps);
        let w = network::bind(&mut g, &cfg).unwrap();
        let x = network::spectrogram_input(&mut g, &cfg, &vec![0.0; t * 513], t).unwrap();
        let f = network::conv_frontend(&mut g, &w, x).unwrap();
        assert_eq!(g.shape(f), &[t_conv, 2 * 129]);
    }
    let cfg8 = ModelConfig {
        conv_channels: 8,
        ..cfg
    };
    assert_eq!(cfg8.feat_dim(), 1032);
    let lp2 = ModelConfig {
        pyramid_layers: 2,
        ..tiny()
    };
    // T = 28 gives T_conv = 7
    assert_eq!(lp2.conv_len(28), 7);
    let m = Model::<f32>::new(lp2, 0).unwrap();
    let p = m.forward(&spectrogram(28, 6, 4), Mode::FreeRunning { frames: 10 }).unwrap();
    assert_eq!(p.encoder_len, 2);
    assert_eq!(p.steps, 5);
}

#[test]
fn slicing_front_end_without_convolutions() {
    let cfg = ModelConfig {
        cnn: false,
        ..tiny()
    };
    let src = spectrogram(9, 6, 5);
    let ps = init_params::<f64>(&cfg, 1).unwrap();
    let mut g = Graph::with_params(&ps);
    let w = network::bind(&mut g, &cfg).unwrap();
    let x = network::spectrogram_input(&mut g, &cfg, src.data(), 9).unwrap();
    let f = network::conv_frontend(&mut g, &w, x).unwrap();
    assert_eq!(g.shape(f), &[3, 6]);
    assert_eq!(&g.value(f)[6..12], src.frame(4));
}

#[test]
fn decoder_steps_follow_reduction() {
    for r in [1, 2, 3, 5] {
        let cfg = ModelConfig {
            reduction: r,
            ..tiny()
        };
        let m = Model::<f32>::new(cfg, 0).unwrap();
        for frames in [1, 7, 10] {
            let p = m.forward(&spectrogram(8, 6, 1), Mode::FreeRunning { frames }).unwrap();
            assert_eq!(p.steps, frames.div_ceil(r));
            assert_eq!(p.spectrogram.frames(), frames);
        }
    }
}

#[test]
fn zero_parameters_give_half_everywhere() {
    let cfg = tiny();
    let m = Model::<f64>::from_params(cfg.clone(), zero_params(&cfg).unwrap()).unwrap();
    let p = m.forward(&spectrogram(12, 6, 9), Mode::FreeRunning { frames: 4 }).unwrap();
    assert!(p.spectrogram.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    // zero score vector gives uniform attention
    for row in &p.alignment {
        for &a in row {
            assert!((a - 1.0 / row.len() as f64).abs() < 1e-15);
        }
    }
}

#[test]
fn single_encoder_state_gets_all_attention() {
    let m = Model::<f64>::new(tiny(), 8).unwrap();
    let p = m.forward(&spectrogram(4, 6, 2), Mode::FreeRunning { frames: 3 }).unwrap();
    assert_eq!(p.encoder_len, 1);
    assert!(p.alignment.iter().all(|r| r == &vec![1.0]));
}

#[test]
fn attention_normalizes_masks_and_ignores_score_shift() {
    let cfg = tiny();
    let ps = init_params::<f64>(&cfg, 21).unwrap();
    let mut g = Graph::with_params(&ps);
    let w = network::bind(&mut g, &cfg).unwrap();
    let srcs: Vec<_> = [16, 40, 24]
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let s = spectrogram(t, 6, k as u64);
            network::spectrogram_input(&mut g, &cfg, s.data(), t).unwrap()
        })
        .collect();
    let enc = network::encode_batch(&mut g, &cfg, &w, &srcs).unwrap();
    assert_eq!(enc.lengths, vec![2, 5, 3]);
    for (i, &h) in enc.states.iter().enumerate() {
        let mem = network::prepare_attention(&mut g, &w, h, enc.lengths[i]).unwrap();
        let s = g.constant(&[1, 4], vec![0.3, -0.7, 0.2, 0.9]).unwrap();
        let scores = network::attention_scores(&mut g, &w, &mem, s).unwrap();
        let (c, alpha) = network::attend_from_scores(&mut g, &mem, scores).unwrap();
        let a = g.value(alpha).to_vec();
        assert_eq!(a.len(), enc.padded_len);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(a[enc.lengths[i]..].iter().all(|&v| v.abs() < 1e-9));
        let k = g.constant(&[1, enc.padded_len], vec![123.5; enc.padded_len]).unwrap();
        let shifted = g.add(scores, k).unwrap();
        let (c2, alpha2) = network::attend_from_scores(&mut g, &mem, shifted).unwrap();
        for (x, y) in g.value(alpha).iter().zip(g.value(alpha2)) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in g.value(c).iter().zip(g.value(c2)) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn padded_batch_matches_single_items() {
    let cfg = tiny();
    let model = Model::<f32>::new(cfg.clone(), 5).unwrap();
    let sources: Vec<_> = [20, 44, 31].iter().enumerate().map(|(k, &t)| spectrogram(t, 6, 30 + k as u64)).collect();
    let mut g = Graph::with_params(&model.params);
    let w = network::bind(&mut g, &cfg).unwrap();
    let vars: Vec<_> = sources
        .iter()
        .map(|s| network::spectrogram_input(&mut g, &cfg, s.data(), s.frames()).unwrap())
        .collect();
    let enc = network::encode_batch(&mut g, &cfg, &w, &vars).unwrap();
    for (i, s) in sources.iter().enumerate() {
        let mem = network::prepare_attention(&mut g, &w, enc.states[i], enc.lengths[i]).unwrap();
        let out = network::decode(&mut g, &cfg, &w, &mem, Mode::FreeRunning { frames: 7 }).unwrap();
        let single = model.forward(s, Mode::FreeRunning { frames: 7 }).unwrap();
        for (a, b) in g.value(out.frames).iter().zip(single.spectrogram.data()) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }
}

#[test]
fn teacher_forcing_on_own_output_reproduces_free_running() {
    let cfg = ModelConfig {
        reduction: 3,
        ..tiny()
    };
    let m = Model::<f32>::new(cfg, 17).unwrap();
    let src = spectrogram(30, 6, 3);
    let free = m.forward(&src, Mode::FreeRunning { frames: 9 }).unwrap();
    let tf = m
        .forward(&src, Mode::TeacherForced { target: free.spectrogram.data(), frames: 9 })
        .unwrap();
    for (a, b) in free.spectrogram.data().iter().zip(tf.spectrogram.data()) {
        assert!((a - b).abs() < 1e-3);
    }
}

#[test]
fn translate_budget_and_trimming() {
    let m = Model::<f32>::new(tiny(), 2).unwrap();
    let p = m.translate(&spectrogram(10, 6, 1)).unwrap();
    assert!(p.spectrogram.frames() >= 1 && p.spectrogram.frames() <= 15);
    let cfg = tiny();
    let mut ps = zero_params::<f32>(&cfg).unwrap();
    // out.b very negative makes every frame silent; one frame survives
    ps.get_mut("out.b").unwrap().data_mut().iter_mut().for_each(|v| *v = -20.0);
    let silent = Model::from_params(cfg, ps).unwrap();
    let p = silent.translate(&spectrogram(10, 6, 1)).unwrap();
    assert_eq!(p.spectrogram.frames(), 1);
}

#[test]
fn parameter_count_matches_tensors() {
    for bits in 0..32u32 {
        let cfg = ModelConfig {
            cnn: bits & 1 != 0,
            pyramid: bits & 2 != 0,
            bidirectional: bits & 4 != 0,
            attention: bits & 8 != 0,
            quant_bins: (bits & 16 != 0).then_some(4),
            ..tiny()
        };
        let ps = init_params::<f32>(&cfg, 0).unwrap();
        assert_eq!(cfg.count_params().total(), ps.num_scalars(), "{cfg:?}");
        assert_eq!(param_shapes(&cfg).len(), ps.len());
        // every configuration runs
        let m = Model::from_params(cfg, ps).unwrap();
        m.forward(&spectrogram(12, 6, 1), Mode::FreeRunning { frames: 3 }).unwrap();
    }
}

#[test]
fn mismatched_parameters_are_rejected() {
    let cfg = tiny();
    let other = ModelConfig {
        enc_hidden: 5,
        ..tiny()
    };
    assert!(Model::from_params(cfg.clone(), init_params::<f32>(&other, 0).unwrap()).is_err());
    let m = Model::<f32>::new(cfg, 0).unwrap();
    assert!(m.forward(&spectrogram(5, 7, 0), Mode::FreeRunning { frames: 2 }).is_err());
}

fn tiny_forward(
    g: &mut Graph<'_, f64>,
    cfg: &ModelConfig,
    src: &Spectrogram,
    tgt: &Spectrogram,
) -> Result<network::DecoderOutput, TensorError> {
    let err = |e: sonotrans_core::Error| TensorError::Usage(e.to_string());
    let w = network::bind(g, cfg).map_err(err)?;
    let x = network::spectrogram_input(g, cfg, src.data(), src.frames()).map_err(err)?;
    let h = network::encode(g, cfg, &w, x).map_err(err)?;
    let len = g.shape(h)[0];
    let mem = network::prepare_attention(g, &w, h, len).map_err(err)?;
    let mode = Mode::TeacherForced { target: tgt.data(), frames: tgt.frames() };
    network::decode(g, cfg, &w, &mem, mode).map_err(err)
}

// The probe point sits near a fit (small residuals, confident class
// logits) so the loss stays small and central differences stay accurate.
#[test]
fn whole_model_gradients_match_finite_differences() {
    for (seed, quant) in [(4, None), (5, Some(3))] {
        let cfg = ModelConfig {
            quant_bins: quant,
            ..tiny()
        };
        let mut ps = init_params::<f64>(&cfg, seed).unwrap();
        let src = spectrogram(16, 6, seed + 10);
        let tgt = spectrogram(5, 6, seed + 20);
        let (goal, bins) = {
            let mut g = Graph::with_params(&ps);
            let out = tiny_forward(&mut g, &cfg, &src, &tgt).unwrap();
            let noise = spectrogram(6, 6, seed + 30);
            let goal: Vec<f64> = g
                .value(out.frames)
                .iter()
                .zip(noise.data())
                .map(|(p, n)| p + 0.01 * (n - 0.5))
                .collect();
            let bins: Vec<usize> = match out.logits {
                Some(l) => g
                    .value(l)
                    .chunks(3)
                    .enumerate()
                    .map(|(i, row)| (i % 12 + (row[1] > row[0]) as usize) % 3)
                    .collect(),
                None => Vec::new(),
            };
            (goal, bins)
        };
        if let Some(qb) = ps.get_mut("quant.b") {
            // the bias is shared by every step; pick bins from position mod r·F
            for (i, &b) in bins.iter().enumerate().take(12) {
                qb.data_mut()[i * 3 + b] = 10.0;
            }
        }
        let opts = GradCheckOptions {
            max_elements: Some(6),
            seed,
            ..GradCheckOptions::default()
        };
        let report = grad_check_with("model", &mut ps, &opts, |g| {
            let out = tiny_forward(g, &cfg, &src, &tgt)?;
            let rows = [true, true, true, true, true, false];
            let mut loss = g.masked_sse(out.frames, &goal, &rows)?;
            if let Some(logits) = out.logits {
                let rows_q: Vec<bool> = (0..36).map(|i| i < 30).collect();
                let shared: Vec<usize> = (0..36).map(|i| bins[i % 12]).collect();
                let xent = g.masked_xent(logits, &shared, &rows_q)?;
                loss = g.add(loss, xent)?;
            }
            Ok(loss)
        })
        .unwrap();
        assert!(report.passed, "seed {seed}: {report:?}");
    }
}
