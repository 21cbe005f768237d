use proptest::prelude::*;
use rand::Rng;
use sonotrans_tensor::conv::output_len;
use sonotrans_tensor::lstm::{lstm_cell, LstmWeights};
use sonotrans_tensor::rng::rng;
use sonotrans_tensor::{grad_check, Graph, ParamSet, Tensor};

fn random(seed: u64, shape: &[usize], scale: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

/// Direct nested-loop cross-correlation, channels-last.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f64],
    (t, f, ci): (usize, usize, usize),
    k: &[f64],
    (co, kt, kf): (usize, usize, usize),
    (st, sf): (usize, usize),
    (pt, pf): (usize, usize),
) -> Vec<f64> {
    let ot = (t + 2 * pt - kt) / st + 1;
    let of = (f + 2 * pf - kf) / sf + 1;
    let mut out = vec![0.0; ot * of * co];
    for a in 0..ot {
        for b in 0..of {
            for c in 0..co {
                let mut s = 0.0;
                for dt in 0..kt {
                    for df in 0..kf {
                        let ti = (a * st + dt) as i64 - pt as i64;
                        let fi = (b * sf + df) as i64 - pf as i64;
                        if ti < 0 || fi < 0 || ti >= t as i64 || fi >= f as i64 {
                            continue;
                        }
                        for cc in 0..ci {
                            s += x[((ti as usize) * f + fi as usize) * ci + cc]
                                * k[((c * kt + dt) * kf + df) * ci + cc];
                        }
                    }
                }
                out[(a * of + b) * co + c] = s;
            }
        }
    }
    out
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let x = random(1, &[9, 9], 1.0);
    let k = random(2, &[4, 3, 3], 1.0);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let kv = g.input(k.clone());
    let y = g.conv2d(xv, kv, (1, 1), (0, 0)).unwrap();
    let want = conv_oracle(x.data(), (9, 9, 1), k.data(), (4, 3, 3), (1, 1), (0, 0));
    assert_eq!(g.value(y).len(), want.len());
    for (a, b) in g.value(y).iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }

    // strided, padded, multi-channel
    let x = random(3, &[11, 10, 3], 1.0);
    let k = random(4, &[2, 7, 7, 3], 1.0);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let kv = g.input(k.clone());
    let y = g.conv2d(xv, kv, (2, 2), (3, 3)).unwrap();
    assert_eq!(g.shape(y), &[6, 5, 2]);
    let want = conv_oracle(x.data(), (11, 10, 3), k.data(), (2, 7, 7), (2, 2), (3, 3));
    for (a, b) in g.value(y).iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv_output_extent_sweep() {
    for t in [1usize, 2, 7, 16, 33] {
        for k in [1usize, 3, 5, 7] {
            for s in 1..=3 {
                for p in 0..=3 {
                    let mut g = Graph::<f64>::new();
                    let x = g.input(Tensor::zeros(&[t, t + 1]));
                    let kv = g.input(Tensor::zeros(&[1, k, k]));
                    match (g.conv2d(x, kv, (s, s), (p, p)), output_len(t, k, s, p)) {
                        (Ok(y), Some(ot)) => {
                            assert_eq!(g.shape(y)[0], (t + 2 * p - k) / s + 1);
                            assert_eq!(g.shape(y)[0], ot);
                            assert_eq!(g.shape(y)[1], (t + 1 + 2 * p - k) / s + 1);
                        }
                        (Err(_), None) => {}
                        (r, o) => panic!("t={t} k={k} s={s} p={p}: {r:?} vs {o:?}"),
                    }
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_matches_scalar_loop_oracle() {
    let (d_in, d) = (3, 4);
    let w = random(10, &[d_in, 4 * d], 0.5);
    let u = random(11, &[d, 4 * d], 0.5);
    let b = random(12, &[4 * d], 0.5);
    let x = random(13, &[1, d_in], 1.0);
    let h0 = random(14, &[1, d], 0.8);
    let c0 = random(15, &[1, d], 0.8);

    let mut h_want = vec![0.0; d];
    let mut c_want = vec![0.0; d];
    for j in 0..d {
        let pre = |gate: usize| {
            let col = gate * d + j;
            let mut s = b.data()[col];
            for i in 0..d_in {
                s += x.data()[i] * w.data()[i * 4 * d + col];
            }
            for i in 0..d {
                s += h0.data()[i] * u.data()[i * 4 * d + col];
            }
            s
        };
        let (ig, fg, cg, og) = (sigmoid(pre(0)), sigmoid(pre(1)), pre(2).tanh(), sigmoid(pre(3)));
        c_want[j] = fg * c0.data()[j] + ig * cg;
        h_want[j] = og * c_want[j].tanh();
    }

    let mut ps = ParamSet::new();
    ps.insert("w", w);
    ps.insert("u", u);
    ps.insert("b", b);
    let mut g = Graph::with_params(&ps);
    let wts = LstmWeights {
        w: g.param(0),
        u: g.param(1),
        b: g.param(2),
    };
    let (xv, hv, cv) = (g.input(x), g.input(h0), g.input(c0));
    let (h, c) = lstm_cell(&mut g, xv, hv, cv, wts).unwrap();
    for j in 0..d {
        assert!((g.value(h)[j] - h_want[j]).abs() < 1e-10);
        assert!((g.value(c)[j] - c_want[j]).abs() < 1e-10);
        assert!(g.value(h)[j].abs() < 1.0);
    }
}

/// Random fixed weights turn a tensor output into a well-conditioned scalar.
fn weighted_sum(g: &mut Graph<'_, f64>, v: sonotrans_tensor::Var, seed: u64) -> sonotrans_tensor::Var {
    let shape = g.shape(v).to_vec();
    let w = g.input(random(seed, &shape, 1.0));
    let p = g.mul(v, w).unwrap();
    g.sum(p)
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[test]
fn gradcheck_matmul() {
    for seed in SEEDS {
        let mut ps = ParamSet::new();
        ps.insert("a", random(seed, &[3, 4], 1.0));
        ps.insert("b", random(seed + 100, &[4, 2], 1.0));
        let r = grad_check("matmul", &mut ps, 1e-5, |g| {
            let (a, b) = (g.param(0), g.param(1));
            let c = g.matmul(a, b)?;
            Ok(weighted_sum(g, c, seed + 200))
        })
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn gradcheck_conv2d() {
    for seed in SEEDS {
        let mut ps = ParamSet::new();
        ps.insert("x", random(seed, &[7, 6, 2], 1.0));
        ps.insert("k", random(seed + 100, &[3, 3, 3, 2], 1.0));
        let r = grad_check("conv2d", &mut ps, 1e-5, |g| {
            let (x, k) = (g.param(0), g.param(1));
            let y = g.conv2d(x, k, (2, 2), (1, 1))?;
            Ok(weighted_sum(g, y, seed + 200))
        })
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn gradcheck_lstm_cell() {
    for seed in SEEDS {
        let (d_in, d) = (3, 4);
        let mut ps = ParamSet::new();
        ps.insert("w", random(seed, &[d_in, 4 * d], 0.6));
        ps.insert("u", random(seed + 1, &[d, 4 * d], 0.6));
        ps.insert("b", random(seed + 2, &[4 * d], 0.6));
        ps.insert("x", random(seed + 3, &[1, d_in], 1.0));
        ps.insert("h", random(seed + 4, &[1, d], 0.8));
        ps.insert("c", random(seed + 5, &[1, d], 0.8));
        let r = grad_check("lstm_cell", &mut ps, 1e-5, |g| {
            let wts = LstmWeights {
                w: g.param(0),
                u: g.param(1),
                b: g.param(2),
            };
            let (x, h, c) = (g.param(3), g.param(4), g.param(5));
            let (h1, c1) = lstm_cell(g, x, h, c, wts)?;
            let both = g.concat_cols(&[h1, c1])?;
            Ok(weighted_sum(g, both, seed + 6))
        })
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn gradcheck_softmax_and_structural_ops() {
    for seed in SEEDS {
        let mut ps = ParamSet::new();
        ps.insert("s", random(seed, &[3, 5], 2.0));
        ps.insert("v", random(seed + 1, &[5], 1.0));
        let r = grad_check("softmax", &mut ps, 1e-5, |g| {
            let (s, v) = (g.param(0), g.param(1));
            let shifted = g.add_row(s, v)?;
            let sm = g.softmax_masked(shifted, 4)?;
            let top = g.slice_rows(sm, 0, 2)?;
            let cols = g.slice_cols(top, 1, 3)?;
            let padded = g.pad_rows(cols, 1);
            let t = g.tanh(padded);
            let r = g.relu(shifted);
            let stacked = g.stack_rows(&[r, s])?;
            let a = weighted_sum(g, t, seed + 2);
            let b = weighted_sum(g, stacked, seed + 3);
            let sig = g.sigmoid(s);
            let c = weighted_sum(g, sig, seed + 4);
            let ab = g.add(a, b)?;
            let abc = g.sub(ab, c)?;
            Ok(g.scale(abc, 0.7))
        })
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn gradcheck_losses() {
    for seed in SEEDS {
        let mut r = rng(seed + 50);
        let target: Vec<f64> = (0..12).map(|_| r.gen_range(0.0..1.0)).collect();
        let rows = vec![true, false, true];
        let bins: Vec<usize> = (0..4).map(|_| r.gen_range(0..5)).collect();
        let mut ps = ParamSet::new();
        ps.insert("pred", random(seed, &[3, 4], 0.5));
        ps.insert("logits", random(seed + 1, &[4, 5], 2.0));
        let rep = grad_check("losses", &mut ps, 1e-5, |g| {
            let raw = g.param(0);
            let pred = g.sigmoid(raw);
            let sse = g.masked_sse(pred, &target, &rows)?;
            let kl = g.masked_kl(pred, &target, &rows, 1e-8)?;
            let logits = g.param(1);
            let xe = g.masked_xent(logits, &bins, &[true, true, false, true])?;
            let a = g.add(sse, kl)?;
            g.add(a, xe)
        })
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}

proptest! {
    #[test]
    fn softmax_normalizes_and_is_shift_invariant(
        scores in prop::collection::vec(-30.0f64..30.0, 1..20),
        shift in -100.0f64..100.0,
    ) {
        let n = scores.len();
        let mut g = Graph::new();
        let a = g.input(Tensor::from_vec(&[n], scores.clone()).unwrap());
        let b = g.input(Tensor::from_vec(&[n], scores.iter().map(|s| s + shift).collect()).unwrap());
        let sa = g.softmax(a).unwrap();
        let sb = g.softmax(b).unwrap();
        let total: f64 = g.value(sa).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(g.value(sa).iter().all(|&v| v >= 0.0));
        for (x, y) in g.value(sa).iter().zip(g.value(sb)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_is_associative(seed in 0u64..10_000, m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6) {
        let a = random(seed, &[m, k], 1.0);
        let b = random(seed + 1, &[k, n], 1.0);
        let c = random(seed + 2, &[n, p], 1.0);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-8);
    }
}
