use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use sonotrans_tensor::rng::{derive_seed, rng, tag};
use sonotrans_tensor::{Graph, Real, Var};

use super::checkpoint::Checkpoint;
use super::loss::{Lambdas, LossBreakdown, KL_FLOOR};
use super::optim::Adam;
use crate::corpus::Example;
use crate::dsp::quantize_value;
use crate::hash::canonical_hash;
use crate::model::network::{self, Mode, Weights};
use crate::model::{Model, ModelConfig};
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "step,l2,kl,xent,mixed,wall_ms";
pub const CHECKPOINT_FILE: &str = "checkpoint.etck";
pub const SUMMARY_FILE: &str = "summary.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambdas: Lambdas,
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Condition the decoder on ground truth instead of its own output.
    pub teacher_forcing: bool,
    /// Steps between numbered checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Writes `wall_ms = 0`, making metrics files byte-reproducible.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambdas: Lambdas::default(),
            learning_rate: 1e-3,
            grad_clip_norm: 5.0,
            batch_size: 4,
            max_steps: 2000,
            seed: 0,
            teacher_forcing: true,
            checkpoint_interval: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lambdas.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "grad_clip_norm {} must be > 0",
                self.grad_clip_norm
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Keys that change the optimization trajectory. The step budget and
    /// bookkeeping options are excluded.
    pub fn hash_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("train.lambda_kl", self.lambdas.kl.to_string()),
            ("train.lambda_l2", self.lambdas.l2.to_string()),
            ("train.lambda_xent", self.lambdas.xent.to_string()),
            ("train.learning_rate", self.learning_rate.to_string()),
            ("train.grad_clip_norm", self.grad_clip_norm.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.teacher_forcing", self.teacher_forcing.to_string()),
        ]
    }
}

pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> [u8; 32] {
    canonical_hash(model.hash_pairs().into_iter().chain(train.hash_pairs()))
}

/// Example indices of 1-based `step`: consecutive slices of a per-epoch
/// permutation seeded from `(seed, epoch)`.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let start = (step.saturating_sub(1)) as usize * batch;
    let mut cached: Option<(usize, Vec<usize>)> = None;
    (start..start + batch)
        .map(|p| {
            let epoch = p / n;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng(derive_seed(seed, &[tag("epoch"), epoch as u64])));
                cached = Some((epoch, perm));
            }
            cached.as_ref().expect("set above").1[p % n]
        })
        .collect()
}

/// Per-component sums of one batch on the graph.
struct Sums {
    sse: Var,
    kl: Var,
    xent: Option<Var>,
    frames: usize,
    cells: usize,
}

fn padded<R: Real>(data: &[f64], len: usize) -> Vec<R> {
    let mut v: Vec<R> = data.iter().map(|&x| R::of(x)).collect();
    v.resize(len, R::zero());
    v
}

fn item_sums<R: Real>(
    g: &mut Graph<'_, R>,
    cfg: &ModelConfig,
    w: &Weights,
    ex: &Example,
    teacher_forcing: bool,
) -> Result<Sums> {
    let f = cfg.freq_bins;
    let t = ex.target.frames();
    if ex.target.bins() != f {
        return Err(Error::Dimension(format!(
            "{}: target has {} bins, model expects {f}",
            ex.id,
            ex.target.bins()
        )));
    }
    let x = network::spectrogram_input(g, cfg, ex.source.data(), ex.source.frames())?;
    let h = network::encode(g, cfg, w, x)?;
    let len = g.shape(h)[0];
    let mem = network::prepare_attention(g, w, h, len)?;
    let mode = if teacher_forcing {
        Mode::TeacherForced {
            target: ex.target.data(),
            frames: t,
        }
    } else {
        Mode::FreeRunning { frames: t }
    };
    let out = network::decode(g, cfg, w, &mem, mode)?;
    let rows_n = out.steps * cfg.reduction;
    let goal: Vec<R> = padded(ex.target.data(), rows_n * f);
    let rows: Vec<bool> = (0..rows_n).map(|r| r < t).collect();
    let sse = g.masked_sse(out.frames, &goal, &rows)?;
    let kl = g.masked_kl(out.frames, &goal, &rows, R::of(KL_FLOOR))?;
    let xent = match (out.logits, cfg.quant_bins) {
        (Some(logits), Some(k)) => {
            let mut bins = ex
                .target
                .data()
                .iter()
                .map(|&v| quantize_value(v, k))
                .collect::<Result<Vec<_>>>()?;
            bins.resize(rows_n * f, 0);
            let cells: Vec<bool> = (0..rows_n * f).map(|c| c < t * f).collect();
            Some(g.masked_xent(logits, &bins, &cells)?)
        }
        _ => None,
    };
    Ok(Sums {
        sse,
        kl,
        xent,
        frames: t,
        cells: t * f,
    })
}

/// Mixed loss of a batch on the graph, normalized by the batch's valid
/// frame (KL) or cell (L2, cross-entropy) counts.
pub fn batch_objective<R: Real>(
    g: &mut Graph<'_, R>,
    cfg: &ModelConfig,
    w: &Weights,
    batch: &[&Example],
    lambdas: Lambdas,
    teacher_forcing: bool,
) -> Result<(Var, LossBreakdown)> {
    lambdas.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let sums = batch
        .iter()
        .map(|ex| item_sums(g, cfg, w, ex, teacher_forcing))
        .collect::<Result<Vec<_>>>()?;
    let frames: usize = sums.iter().map(|s| s.frames).sum();
    let cells: usize = sums.iter().map(|s| s.cells).sum();
    let total = |g: &mut Graph<'_, R>, pick: &dyn Fn(&Sums) -> Option<Var>| -> Result<Option<Var>> {
        let mut acc: Option<Var> = None;
        for s in &sums {
            if let Some(v) = pick(s) {
                acc = Some(match acc {
                    Some(a) => g.add(a, v)?,
                    None => v,
                });
            }
        }
        Ok(acc)
    };
    let sse = total(g, &|s| Some(s.sse))?.expect("non-empty batch");
    let kl = total(g, &|s| Some(s.kl))?.expect("non-empty batch");
    let xent = total(g, &|s| s.xent)?;
    let l2_mean = g.scale(sse, R::of(1.0 / cells as f64));
    let kl_mean = g.scale(kl, R::of(1.0 / frames as f64));
    let xent_mean = xent.map(|x| g.scale(x, R::of(1.0 / cells as f64)));

    let mut loss = g.scale(l2_mean, R::of(lambdas.l2));
    if lambdas.kl > 0.0 {
        let t = g.scale(kl_mean, R::of(lambdas.kl));
        loss = g.add(loss, t)?;
    }
    if lambdas.xent > 0.0 {
        let Some(x) = xent_mean else {
            return Err(Error::Config(
                "lambda xent > 0 needs a quantized output head (quant_bins)".into(),
            ));
        };
        let t = g.scale(x, R::of(lambdas.xent));
        loss = g.add(loss, t)?;
    }
    let value = |v: Var| g.scalar(v).as_f64();
    let breakdown = LossBreakdown::new(
        value(l2_mean),
        value(kl_mean).max(0.0),
        xent_mean.map_or(0.0, value),
        lambdas,
    )?;
    Ok((loss, breakdown))
}

/// Teacher-forced masked MSE over `examples`.
pub fn evaluate_l2<R: Real>(model: &Model<R>, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let p = model.forward(
            &ex.source,
            Mode::TeacherForced {
                target: ex.target.data(),
                frames: ex.target.frames(),
            },
        )?;
        sum += p
            .spectrogram
            .data()
            .iter()
            .zip(ex.target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        count += ex.target.data().len();
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: LossBreakdown,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{}",
            self.step, l.l2, l.kl, l.xent, l.mixed, self.wall_ms
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    /// Rows produced by this invocation.
    pub metrics: Vec<MetricsRow>,
    /// Full-split teacher-forced MSE before the first and after the last step.
    pub start_l2: f64,
    pub final_l2: f64,
    pub wall: std::time::Duration,
}

impl FitOutcome {
    pub fn model(&self, config: &ModelConfig) -> Result<Model<f32>> {
        Model::from_params(config.clone(), self.checkpoint.params.clone())
    }
}

fn numbered_checkpoint(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint-{step:08}.etck"))
}

/// Keeps the header and rows up to `step`, rewrites the file and returns
/// an append handle.
fn open_metrics(dir: &Path, step: u64) -> Result<std::fs::File> {
    let path = dir.join(METRICS_FILE);
    let mut keep = String::new();
    let _ = writeln!(keep, "{METRICS_HEADER}");
    if step > 0 {
        if let Ok(text) = std::fs::read_to_string(&path) {
            for line in text.lines().skip(1) {
                let s: Option<u64> = line.split(',').next().and_then(|v| v.parse().ok());
                if matches!(s, Some(s) if s <= step) {
                    keep.push_str(line);
                    keep.push('\n');
                }
            }
        }
    }
    std::fs::write(&path, keep).map_err(|e| Error::io(&path, e))?;
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))
}

/// Trains on `data`. With `run_dir`, writes the metrics CSV, numbered and
/// latest checkpoints and a summary; `resume` continues from the latest
/// checkpoint there after verifying its config hash.
pub fn fit(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &[Example],
    run_dir: Option<&Path>,
    resume: bool,
) -> Result<FitOutcome> {
    use std::io::Write as _;

    model_cfg.validate()?;
    train_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if train_cfg.lambdas.xent > 0.0 && model_cfg.quant_bins.is_none() {
        return Err(Error::Config(
            "lambda xent > 0 needs a quantized output head (quant_bins)".into(),
        ));
    }
    let hash = config_hash(model_cfg, train_cfg);
    let latest = run_dir.map(|d| d.join(CHECKPOINT_FILE));
    let (mut model, mut adam, start) = match &latest {
        Some(path) if resume && path.exists() => {
            let ck = Checkpoint::load(path, Some(&hash))?;
            let adam = ck.optimizer(train_cfg.learning_rate, train_cfg.grad_clip_norm)?;
            let step = ck.step;
            (Model::from_params(model_cfg.clone(), ck.params)?, adam, step)
        }
        _ => {
            let model = Model::<f32>::new(model_cfg.clone(), train_cfg.seed)?;
            let adam = Adam::new(&model.params, train_cfg.learning_rate, train_cfg.grad_clip_norm)?;
            (model, adam, 0)
        }
    };
    let mut metrics_file = match run_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            Some(open_metrics(d, start)?)
        }
        None => None,
    };

    let clock = Instant::now();
    let start_l2 = evaluate_l2(&model, data)?;
    let mut rows = Vec::new();
    for step in start + 1..=train_cfg.max_steps {
        let idx = batch_indices(train_cfg.seed, step, train_cfg.batch_size, data.len());
        let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
        let (breakdown, grads) = {
            let mut g = Graph::with_params(&model.params);
            let w = network::bind(&mut g, model_cfg)?;
            let (loss, breakdown) = batch_objective(
                &mut g,
                model_cfg,
                &w,
                &batch,
                train_cfg.lambdas,
                train_cfg.teacher_forcing,
            )?;
            if !g.scalar(loss).is_finite() {
                return Err(Error::Numeric(format!("loss is not finite at step {step}")));
            }
            (breakdown, g.backward(loss)?.into_params())
        };
        adam.step(&mut model.params, &grads)?;
        let row = MetricsRow {
            step,
            loss: breakdown,
            wall_ms: if train_cfg.deterministic {
                0
            } else {
                clock.elapsed().as_millis() as u64
            },
        };
        if let Some(f) = metrics_file.as_mut() {
            writeln!(f, "{}", row.csv_line()).map_err(|e| {
                Error::io(run_dir.expect("file implies dir").join(METRICS_FILE), e)
            })?;
        }
        if step % 100 == 0 {
            log::info!("step {step}: l2 {:.5} mixed {:.5}", breakdown.l2, breakdown.mixed);
        }
        rows.push(row);
        if let (Some(d), true) = (run_dir, train_cfg.checkpoint_interval > 0) {
            if step % train_cfg.checkpoint_interval == 0 {
                let ck = Checkpoint::new(hash, step, model.params.clone(), Some(&adam));
                ck.save(&numbered_checkpoint(d, step))?;
                ck.save(&d.join(CHECKPOINT_FILE))?;
            }
        }
    }
    let final_l2 = evaluate_l2(&model, data)?;
    let step = start.max(train_cfg.max_steps);
    let checkpoint = Checkpoint::new(hash, step, model.params, Some(&adam));
    if let Some(d) = run_dir {
        checkpoint.save(&d.join(CHECKPOINT_FILE))?;
        let summary = format!("steps\t{step}\nstart_l2\t{start_l2}\nfinal_l2\t{final_l2}\n");
        let p = d.join(SUMMARY_FILE);
        std::fs::write(&p, summary).map_err(|e| Error::io(&p, e))?;
    }
    Ok(FitOutcome {
        checkpoint,
        metrics: rows,
        start_l2,
        final_l2,
        wall: clock.elapsed(),
    })
}
