use sonotrans_core::corpus::{Example, Tier};
use sonotrans_core::dsp::Spectrogram;
use sonotrans_core::model::network::{self, Mode};
use sonotrans_core::model::{init_params, Model, ModelConfig};
use sonotrans_core::train::{
    batch_indices, batch_objective, config_hash, fit, loss_kl, loss_l2, loss_xent, mixed_loss,
    Checkpoint, Lambdas, LossInputs, TrainConfig, CHECKPOINT_FILE, METRICS_FILE, METRICS_HEADER,
};
use sonotrans_core::Error;
use sonotrans_tensor::rng::rng;
use sonotrans_tensor::{grad_check_with, GradCheckOptions, Graph, ParamSet, Tensor};

use rand::Rng;

fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen::<f64>()).collect()
}

#[test]
fn l2_examples() {
    let y = uniform(12, 1);
    let mask = [true; 3];
    assert_eq!(loss_l2(&y, &y, 4, &mask).unwrap(), 0.0);
    assert_eq!(loss_l2(&[1.0; 12], &[0.0; 12], 4, &mask).unwrap(), 1.0);
    let yh = uniform(12, 2);
    let mut brute = 0.0;
    for i in 0..3 {
        for j in 0..4 {
            brute += (y[i * 4 + j] - yh[i * 4 + j]).powi(2);
        }
    }
    assert!((loss_l2(&y, &yh, 4, &mask).unwrap() - brute / 12.0).abs() < 1e-12);
    // masked row is ignored
    let part = loss_l2(&y, &yh, 4, &[true, false, true]).unwrap();
    let mut b = 0.0;
    for i in [0, 2] {
        for j in 0..4 {
            b += (y[i * 4 + j] - yh[i * 4 + j]).powi(2);
        }
    }
    assert!((part - b / 8.0).abs() < 1e-12);
    assert!(matches!(loss_l2(&y, &yh[..8], 4, &mask), Err(Error::Dimension(_))));
}

#[test]
fn kl_examples() {
    let p = [0.5, 0.5];
    let q = [0.25, 0.75];
    let kl = loss_kl(&p, &q, 2, &[true]).unwrap();
    let hand = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((kl - hand).abs() < 1e-7);
    assert!((kl - 0.14384).abs() < 1e-5);
    let rev = loss_kl(&q, &p, 2, &[true]).unwrap();
    assert!((kl - rev).abs() > 1e-3);
    assert_eq!(loss_kl(&p, &p, 2, &[true]).unwrap(), 0.0);
    // an all-zero frame is handled by the floor
    assert!(loss_kl(&[0.0, 0.0], &[0.0, 0.0], 2, &[true]).unwrap().abs() < 1e-12);
}

#[test]
fn kl_non_negative_and_zero_only_on_equal_frames() {
    for s in 0..1000 {
        let p = uniform(8, 2 * s);
        let q = uniform(8, 2 * s + 1);
        let kl = loss_kl(&p, &q, 8, &[true]).unwrap();
        assert!(kl > 1e-12, "seed {s}: {kl}");
        assert!(loss_kl(&p, &p, 8, &[true]).unwrap() < 1e-12);
    }
}

#[test]
fn xent_examples() {
    let k = 256;
    let uniform_logits = vec![0.0; 2 * k];
    let v = loss_xent(&uniform_logits, k, &[3, 200], &[true, true]).unwrap();
    assert!((v - (256f64).ln()).abs() < 1e-12);
    assert!((v - 5.545).abs() < 1e-3);
    let mut sharp = vec![-1e3; k];
    sharp[7] = 0.0;
    assert!(loss_xent(&sharp, k, &[7], &[true]).unwrap() < 1e-12);
    let mut prev = 0.0;
    for drop in 1..6 {
        let mut l = uniform(k, 4);
        l[9] -= drop as f64;
        let v = loss_xent(&l, k, &[9], &[true]).unwrap();
        assert!(v > prev);
        prev = v;
    }
    assert!(matches!(
        loss_xent(&uniform_logits, k, &[256, 0], &[true, true]),
        Err(Error::Range(_))
    ));
}

#[test]
fn mixed_loss_recombines_components() {
    let y = uniform(20, 5);
    let yh = uniform(20, 6);
    let logits = uniform(20 * 4, 7);
    let bins: Vec<usize> = (0..20).map(|i| i % 4).collect();
    let mask = [true, true, false, true];
    let inputs = LossInputs {
        target: &y,
        prediction: &yh,
        width: 5,
        mask: &mask,
        quantized: Some((&logits, 4, &bins)),
    };
    let l2_only = mixed_loss(&inputs, Lambdas::new(0.0, 1.0, 0.0)).unwrap();
    assert_eq!(l2_only.mixed, l2_only.l2);
    assert!(l2_only.kl > 0.0 && l2_only.xent > 0.0);
    assert_eq!(mixed_loss(&inputs, Lambdas::new(0.0, 0.0, 0.0)).unwrap().mixed, 0.0);
    let lam = Lambdas::new(0.5, 1.0, 0.1);
    let m = mixed_loss(&inputs, lam).unwrap();
    assert!((m.mixed - (0.5 * m.kl + m.l2 + 0.1 * m.xent)).abs() < 1e-12);
    let m2 = mixed_loss(&inputs, Lambdas::new(1.0, 2.0, 0.2)).unwrap();
    assert!((m2.mixed - 2.0 * m.mixed).abs() < 1e-12);
    assert!(matches!(
        mixed_loss(&inputs, Lambdas::new(-0.1, 1.0, 0.0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn graph_losses_pass_gradient_checks() {
    let rows = [true, false, true];
    for seed in 0..5 {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::from_vec(&[3, 4], uniform(12, 10 + seed)).unwrap());
        let target = uniform(12, 20 + seed);
        let bins: Vec<usize> = (0..3).map(|i| (i + seed as usize) % 4).collect();
        let opts = GradCheckOptions {
            seed,
            ..GradCheckOptions::default()
        };
        let sse = grad_check_with("masked_sse", &mut ps, &opts, |g| {
            let x = g.param(0);
            g.masked_sse(x, &target, &rows)
        })
        .unwrap();
        let kl = grad_check_with("masked_kl", &mut ps, &opts, |g| {
            let x = g.param(0);
            g.masked_kl(x, &target, &rows, 1e-8)
        })
        .unwrap();
        let xent = grad_check_with("masked_xent", &mut ps, &opts, |g| {
            let x = g.param(0);
            g.masked_xent(x, &bins, &rows)
        })
        .unwrap();
        for r in [sse, kl, xent] {
            assert!(r.passed, "{r:?}");
        }
    }
}

fn spectrogram(frames: usize, bins: usize, seed: u64) -> Spectrogram {
    Spectrogram::from_normalized(frames, bins, uniform(frames * bins, seed)).unwrap()
}

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

fn examples(n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| Example {
            id: format!("ex{i}"),
            speaker_id: i % 3,
            tier: Tier::Bigram,
            source_words: vec![i],
            target_words: vec![i],
            source: spectrogram(12 + 3 * i, 6, 100 + i as u64),
            target: spectrogram(5 + i, 6, 200 + i as u64),
        })
        .collect()
}

#[test]
fn batch_objective_matches_standalone_losses() {
    let cfg = ModelConfig {
        quant_bins: Some(4),
        ..tiny()
    };
    let params = init_params::<f64>(&cfg, 3).unwrap();
    let data = examples(3);
    let lam = Lambdas::new(0.5, 1.0, 0.1);
    let batch: Vec<&Example> = data.iter().collect();
    let mut g = Graph::with_params(&params);
    let w = network::bind(&mut g, &cfg).unwrap();
    let (loss, br) = batch_objective(&mut g, &cfg, &w, &batch, lam, true).unwrap();
    assert!((g.scalar(loss) - br.mixed).abs() < 1e-12);

    // rebuild the same quantities item by item with the standalone functions
    let (mut sse, mut kl, mut xent, mut frames, mut cells) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for ex in &data {
        let mut g = Graph::with_params(&params);
        let w = network::bind(&mut g, &cfg).unwrap();
        let x = network::spectrogram_input(&mut g, &cfg, ex.source.data(), ex.source.frames()).unwrap();
        let h = network::encode(&mut g, &cfg, &w, x).unwrap();
        let len = g.shape(h)[0];
        let mem = network::prepare_attention(&mut g, &w, h, len).unwrap();
        let t = ex.target.frames();
        let out = network::decode(&mut g, &cfg, &w, &mem, Mode::TeacherForced { target: ex.target.data(), frames: t })
            .unwrap();
        let pred = &g.value(out.frames)[..t * 6];
        let logits = &g.value(out.logits.unwrap())[..t * 6 * 4];
        let bins: Vec<usize> = ex.target.data().iter().map(|&v| ((v * 4.0).floor() as usize).min(3)).collect();
        let mask = vec![true; t];
        let m = mixed_loss(
            &LossInputs {
                target: ex.target.data(),
                prediction: pred,
                width: 6,
                mask: &mask,
                quantized: Some((logits, 4, &bins)),
            },
            lam,
        )
        .unwrap();
        sse += m.l2 * (t * 6) as f64;
        xent += m.xent * (t * 6) as f64;
        kl += m.kl * t as f64;
        frames += t;
        cells += t * 6;
    }
    assert!((br.l2 - sse / cells as f64).abs() < 1e-12);
    assert!((br.kl - kl / frames as f64).abs() < 1e-12);
    assert!((br.xent - xent / cells as f64).abs() < 1e-12);
}

#[test]
fn batch_order_is_a_permutation_per_epoch() {
    let n = 10;
    let mut seen = Vec::new();
    for step in 1..=5 {
        seen.extend(batch_indices(3, step, 2, n));
    }
    let mut sorted = seen.clone();
    sorted.sort();
    assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    assert_eq!(batch_indices(3, 4, 2, n), batch_indices(3, 4, 2, n));
    assert_ne!(batch_indices(3, 1, 4, n), batch_indices(4, 1, 4, n));
}

fn small_train(steps: u64) -> TrainConfig {
    TrainConfig {
        max_steps: steps,
        batch_size: 2,
        learning_rate: 1e-2,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_keep_initialization() {
    let cfg = tiny();
    let out = fit(&cfg, &small_train(0), &examples(4), None, false).unwrap();
    let init = Model::<f32>::new(cfg, 9).unwrap();
    assert_eq!(out.checkpoint.params, init.params);
    assert_eq!(out.checkpoint.step, 0);
    assert!(out.metrics.is_empty());
    assert!(out.checkpoint.adam_m.is_empty());
}

#[test]
fn empty_split_is_a_configuration_error() {
    assert!(matches!(fit(&tiny(), &small_train(3), &[], None, false), Err(Error::Config(_))));
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let cfg = tiny();
    let data = examples(4);
    let a = fit(&cfg, &small_train(40), &data, None, false).unwrap();
    let b = fit(&cfg, &small_train(40), &data, None, false).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.metrics, b.metrics);
    assert!(a.final_l2 < a.start_l2);
}

#[test]
fn resume_continues_metrics_without_duplicates() {
    let cfg = tiny();
    let data = examples(5);
    let full_dir = tempfile::tempdir().unwrap();
    let full = fit(&cfg, &small_train(8), &data, Some(full_dir.path()), false).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let interval = TrainConfig {
        checkpoint_interval: 3,
        ..small_train(5)
    };
    fit(&cfg, &interval, &data, Some(dir.path()), false).unwrap();
    // simulate an interruption after step 3 by restoring that checkpoint
    std::fs::copy(
        dir.path().join("checkpoint-00000003.etck"),
        dir.path().join(CHECKPOINT_FILE),
    )
    .unwrap();
    let resumed = fit(&cfg, &small_train(8), &data, Some(dir.path()), true).unwrap();
    assert_eq!(resumed.metrics.first().unwrap().step, 4);
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 9);
    let steps: Vec<u64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (1..=8).collect::<Vec<_>>());
    assert_eq!(resumed.checkpoint.to_bytes(), full.checkpoint.to_bytes());
    assert_eq!(
        text,
        std::fs::read_to_string(full_dir.path().join(METRICS_FILE)).unwrap()
    );

    // a different config refuses to resume
    let other = TrainConfig {
        learning_rate: 5e-3,
        ..small_train(9)
    };
    match fit(&cfg, &other, &data, Some(dir.path()), true) {
        Err(Error::Config(msg)) => {
            let want = sonotrans_core::hash::to_hex(&config_hash(&cfg, &other));
            assert!(msg.contains(&want), "{msg}");
        }
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_and_integrity() {
    let cfg = tiny();
    let out = fit(&cfg, &small_train(2), &examples(3), None, false).unwrap();
    let ck = out.checkpoint;
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.etck");
    let p2 = dir.path().join("b.etck");
    ck.save(&p1).unwrap();
    let loaded = Checkpoint::load(&p1, Some(&ck.config_hash)).unwrap();
    assert_eq!(loaded, ck);
    loaded.save(&p2).unwrap();
    let bytes = std::fs::read(&p1).unwrap();
    assert_eq!(bytes, std::fs::read(&p2).unwrap());

    let (_, _, step, table) = Checkpoint::read_table(&bytes).unwrap();
    assert_eq!(step, 2);
    assert_eq!(table.len(), 3 * ck.params.len());
    let mut end = 0u64;
    for e in &table {
        let n: usize = e.shape.iter().product();
        let t = if let Some(name) = e.name.strip_prefix("adam.m/") {
            &ck.adam_m[ck.params.index_of(name).unwrap()]
        } else if let Some(name) = e.name.strip_prefix("adam.v/") {
            &ck.adam_v[ck.params.index_of(name).unwrap()]
        } else {
            ck.params.get(&e.name).unwrap()
        };
        let at = e.offset as usize;
        let raw: Vec<f32> = bytes[at..at + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(raw.as_slice(), t.data());
        end = end.max(e.offset + 4 * n as u64);
    }
    assert_eq!(end as usize, bytes.len());

    let wrong = [7u8; 32];
    match Checkpoint::load(&p1, Some(&wrong)) {
        Err(Error::Config(msg)) => {
            assert!(msg.contains(&"07".repeat(32)));
            assert!(msg.contains(&sonotrans_core::hash::to_hex(&ck.config_hash)));
        }
        other => panic!("expected refusal, got {other:?}"),
    }
    for cut in [3, 50, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))));
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Integrity(_))));
    let mut v2 = bytes;
    v2[4] = 2;
    assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Integrity(_))));
}
