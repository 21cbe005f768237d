//! Subcommand implementations. Each writes its human-readable summary to
//! `log` and returns an error whose kind decides the exit code.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use sonotrans_core::corpus::{
    generate_corpus, load_examples, load_split, read_manifest, CorpusManifest, Split, Tier,
    MANIFEST_FILE,
};
use sonotrans_core::dsp::image::write_spectrogram_png;
use sonotrans_core::dsp::wav::{read_wav, write_wav};
use sonotrans_core::dsp::{griffin_lim, to_spectrogram, InitialPhase};
use sonotrans_core::eval::{
    default_specs, embed_examples, embedding_purity, export_triptychs,
    parse_specs, reconstruction_error, run_ablation, unseen_speaker_eval, write_embeddings_csv,
    REPORT_HEADER,
};
use sonotrans_core::model::{Model, ModelConfig};
use sonotrans_core::train::{config_hash, fit, Checkpoint, TrainConfig, CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE};
use sonotrans_core::{Error, Result};
use sonotrans_tensor::TensorError;

use crate::config::{RunConfig, RUN_CONFIG_FILE};
use crate::suite::{run_suite, suite_table, SuiteOptions};

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Parse { .. } | Error::Protocol(_) => 2,
        Error::Numeric(_) => 4,
        Error::Tensor(TensorError::NonFinite(_)) => 4,
        Error::Tensor(TensorError::Usage(_)) => 2,
        _ => 3,
    }
}

fn is_non_empty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn refuse_non_empty(out: &Path, force: bool) -> Result<()> {
    if is_non_empty_dir(out) && !force {
        return Err(Error::Config(format!(
            "{} is not empty; pass --force to overwrite",
            out.display()
        )));
    }
    Ok(())
}

fn remove_if_exists(p: &Path) -> Result<()> {
    let r = if p.is_dir() {
        std::fs::remove_dir_all(p)
    } else {
        std::fs::remove_file(p)
    };
    match r {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(p, e)),
        _ => Ok(()),
    }
}

fn corpus_root(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Resolves a corpus argument that may name the directory or its manifest.
pub fn manifest_path(corpus: &Path) -> PathBuf {
    if corpus.is_dir() {
        corpus.join(MANIFEST_FILE)
    } else {
        corpus.to_path_buf()
    }
}

fn training_split(hold_out: &[usize]) -> Split {
    if hold_out.is_empty() {
        Split::All
    } else {
        Split::held_out(hold_out.iter().copied()).0
    }
}

pub struct GenCorpusArgs {
    pub config: RunConfig,
    pub out: PathBuf,
    pub jobs: usize,
    pub force: bool,
}

pub fn gen_corpus(args: &GenCorpusArgs, log: &mut dyn Write) -> Result<CorpusManifest> {
    let cfg = args.config.corpus()?;
    refuse_non_empty(&args.out, args.force)?;
    remove_if_exists(&args.out.join("wav"))?;
    remove_if_exists(&args.out.join(MANIFEST_FILE))?;
    create_dir(&args.out)?;
    let m = generate_corpus(&cfg, &args.out, args.jobs)?;
    let mut tiers: BTreeMap<Tier, usize> = BTreeMap::new();
    let mut speakers: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &m.records {
        *tiers.entry(r.tier).or_default() += 1;
        *speakers.entry(r.speaker_id).or_default() += 1;
    }
    let mut s = format!(
        "{} utterances, {} languages, {} speakers, config {}\n",
        m.records.len(),
        m.languages.len(),
        m.speakers.len(),
        m.config_hash
    );
    for (t, n) in &tiers {
        let _ = writeln!(s, "tier {}\t{n}", t.as_str());
    }
    for (sp, n) in &speakers {
        let _ = writeln!(s, "speaker {sp}\t{n}");
    }
    log.write_all(s.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    Ok(m)
}

pub struct TrainArgs {
    pub config: RunConfig,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
    pub force: bool,
    pub deterministic: bool,
}

pub fn train(args: &TrainArgs, log: &mut dyn Write) -> Result<()> {
    let model_cfg = args.config.model()?;
    let train_cfg = args.config.train(args.deterministic)?;
    let hold_out = args.config.hold_out()?;
    let manifest = read_manifest(&args.manifest)?;
    if !args.resume {
        refuse_non_empty(&args.out, args.force)?;
        for f in [METRICS_FILE, CHECKPOINT_FILE, SUMMARY_FILE, RUN_CONFIG_FILE] {
            remove_if_exists(&args.out.join(f))?;
        }
        if let Ok(dir) = std::fs::read_dir(&args.out) {
            for e in dir.flatten() {
                let name = e.file_name().to_string_lossy().to_string();
                if name.starts_with("checkpoint-") && name.ends_with(".etck") {
                    remove_if_exists(&e.path())?;
                }
            }
        }
    }
    create_dir(&args.out)?;
    let data = load_split(
        &corpus_root(&args.manifest),
        &manifest,
        &training_split(&hold_out),
    )?;
    let out = fit(&model_cfg, &train_cfg, &data, Some(&args.out), args.resume)?;
    args.config.save(&args.out.join(RUN_CONFIG_FILE))?;
    writeln!(
        log,
        "trained {} steps on {} utterances: l2 {:.6e} -> {:.6e}",
        out.checkpoint.step,
        data.len(),
        out.start_l2,
        out.final_l2
    )
    .map_err(|e| Error::io("<stdout>", e))
}

/// A trained model with the configuration it was trained under.
pub struct Loaded {
    pub config: RunConfig,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub model: Model<f32>,
}

/// Loads a checkpoint with `config`, or with the `run.cfg` beside it, after
/// checking the checkpoint's configuration hash.
pub fn load_checkpoint(checkpoint: &Path, config: Option<RunConfig>) -> Result<Loaded> {
    let config = match config {
        Some(c) => c,
        None => {
            let dir = checkpoint.parent().unwrap_or_else(|| Path::new("."));
            RunConfig::load(&dir.join(RUN_CONFIG_FILE))?
        }
    };
    let model_config = config.model()?;
    let train_config = config.train(true)?;
    let hash = config_hash(&model_config, &train_config);
    let ck = Checkpoint::load(checkpoint, Some(&hash))?;
    let model = Model::from_params(model_config.clone(), ck.params)?;
    Ok(Loaded {
        config,
        model_config,
        train_config,
        model,
    })
}

pub struct TranslateArgs {
    pub checkpoint: PathBuf,
    pub config: Option<RunConfig>,
    pub input: PathBuf,
    pub output: PathBuf,
    pub gl_iters: usize,
    pub seed: Option<u64>,
    pub emit_spectrograms: bool,
    pub out: Option<PathBuf>,
}

/// Returns the final spectral convergence of the reconstruction.
pub fn translate(args: &TranslateArgs, log: &mut dyn Write) -> Result<f64> {
    let loaded = load_checkpoint(&args.checkpoint, args.config.clone())?;
    let wav = read_wav(&args.input)?;
    let source = to_spectrogram(&wav)?;
    let pred = loaded.model.translate(&source)?;
    let init = args.seed.map_or(InitialPhase::Zero, InitialPhase::Random);
    let gl = griffin_lim(&pred.spectrogram, args.gl_iters, init)?;
    if let Some(dir) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_wav(&args.output, &gl.waveform)?;
    if args.emit_spectrograms {
        let dir = args
            .out
            .clone()
            .or_else(|| args.output.parent().map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        create_dir(&dir)?;
        let stem = args
            .output
            .file_stem()
            .map_or("output".into(), |s| s.to_string_lossy().to_string());
        write_spectrogram_png(&dir.join(format!("{stem}_input.png")), &source)?;
        write_spectrogram_png(&dir.join(format!("{stem}_output.png")), &pred.spectrogram)?;
    }
    let sc = gl.convergence.last().copied().unwrap_or(0.0);
    writeln!(
        log,
        "{} frames -> {} frames, {} samples, spectral convergence {sc:.4e} after {} iterations",
        source.frames(),
        pred.spectrogram.frames(),
        gl.waveform.len(),
        args.gl_iters
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(sc)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: Option<RunConfig>,
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Evaluate on these speakers as unseen; empty evaluates every utterance.
    pub held_out: Vec<usize>,
    pub triptychs: usize,
    pub force: bool,
}

pub const EVAL_FILE: &str = "eval.tsv";
pub const EVAL_REPORT_FILE: &str = "report.csv";
pub const UNSEEN_FILE: &str = "unseen.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const PURITY_FILE: &str = "purity.tsv";

pub fn eval(args: &EvalArgs, log: &mut dyn Write) -> Result<()> {
    let loaded = load_checkpoint(&args.checkpoint, args.config.clone())?;
    let manifest = read_manifest(&args.manifest)?;
    let root = corpus_root(&args.manifest);
    refuse_non_empty(&args.out, args.force)?;
    create_dir(&args.out)?;
    let trained_without = loaded.config.hold_out()?;
    let train_split = training_split(&trained_without);
    let mut table = String::from("split\tutterances\tteacher_forced_mse\tfree_running_mse\n");
    let mut summary = String::new();

    let (eval_records, report_split) = if args.held_out.is_empty() {
        (Split::All.select(&manifest), "all")
    } else {
        (Split::Speakers(args.held_out.iter().copied().collect()).select(&manifest), "held_out")
    };
    if !args.held_out.is_empty() {
        if let Some(s) = args.held_out.iter().find(|s| !trained_without.contains(s)) {
            return Err(Error::Protocol(format!(
                "speaker {s} was part of the training split of this checkpoint"
            )));
        }
        let train_data = load_split(&root, &manifest, &train_split)?;
        let held = load_examples(&root, eval_records.iter().copied())?;
        let r = unseen_speaker_eval(&loaded.model, &train_data, &held, &args.held_out, true)?;
        let tr = reconstruction_error(&loaded.model, &train_data)?;
        let he = reconstruction_error(&loaded.model, &held)?;
        let _ = writeln!(table, "train\t{}\t{:e}\t{:e}", train_data.len(), tr.teacher_forced, tr.free_running);
        let _ = writeln!(table, "held_out\t{}\t{:e}\t{:e}", held.len(), he.teacher_forced, he.free_running);
        let unseen = format!(
            "train_mse\theld_out_mse\tratio\n{:e}\t{:e}\t{}\n",
            r.train_mse, r.held_out_mse, r.ratio
        );
        let p = args.out.join(UNSEEN_FILE);
        std::fs::write(&p, unseen).map_err(|e| Error::io(&p, e))?;
        let n = args.triptychs.min(held.len());
        export_triptychs(&loaded.model, &held[..n], &args.out.join("triptychs"))?;
        let _ = writeln!(
            summary,
            "unseen speakers {:?}: train {:.6e}, held-out {:.6e}, ratio {:.3}",
            args.held_out, r.train_mse, r.held_out_mse, r.ratio
        );
        write_reports(args, &loaded, &held, report_split, &mut summary)?;
    } else {
        let data = load_examples(&root, eval_records.iter().copied())?;
        let e = reconstruction_error(&loaded.model, &data)?;
        let _ = writeln!(table, "all\t{}\t{:e}\t{:e}", data.len(), e.teacher_forced, e.free_running);
        let n = args.triptychs.min(data.len());
        if n > 0 {
            export_triptychs(&loaded.model, &data[..n], &args.out.join("triptychs"))?;
        }
        write_reports(args, &loaded, &data, report_split, &mut summary)?;
    }
    let p = args.out.join(EVAL_FILE);
    std::fs::write(&p, &table).map_err(|e| Error::io(&p, e))?;
    log.write_all(table.as_bytes())
        .and_then(|_| log.write_all(summary.as_bytes()))
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_reports(
    args: &EvalArgs,
    loaded: &Loaded,
    data: &[sonotrans_core::corpus::Example],
    split: &str,
    summary: &mut String,
) -> Result<()> {
    let err = sonotrans_core::train::evaluate_l2(&loaded.model, data)?;
    let report = format!(
        "{REPORT_HEADER}\n{split},{},{err:.6E}\n",
        loaded.model_config.count_params().total()
    );
    let p = args.out.join(EVAL_REPORT_FILE);
    std::fs::write(&p, report).map_err(|e| Error::io(&p, e))?;

    let words: Vec<_> = data
        .iter()
        .filter(|e| e.source_words.len() == 1)
        .cloned()
        .collect();
    let emb = embed_examples(&loaded.model, &words)?;
    write_embeddings_csv(&args.out.join(EMBEDDINGS_FILE), &emb)?;
    match embedding_purity(&emb) {
        Ok(p) => {
            let text = format!(
                "purity\tevaluated\texcluded_words\n{}\t{}\t{}\n",
                p.purity,
                p.evaluated,
                p.excluded_words.len()
            );
            let path = args.out.join(PURITY_FILE);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            let _ = writeln!(summary, "embedding purity {:.4} over {} single-word utterances", p.purity, p.evaluated);
        }
        Err(Error::Config(m)) => log::warn!("no embedding purity: {m}"),
        Err(e) => return Err(e),
    }
    Ok(())
}

pub struct AblateArgs {
    pub config: RunConfig,
    pub manifest: PathBuf,
    pub specs: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: usize,
    pub force: bool,
    pub deterministic: bool,
}

pub fn ablate(args: &AblateArgs, log: &mut dyn Write) -> Result<()> {
    let model_cfg = args.config.model()?;
    let train_cfg = args.config.train(args.deterministic)?;
    let hold_out = args.config.hold_out()?;
    let specs = match &args.specs {
        Some(p) => parse_specs(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => default_specs(),
    };
    let manifest = read_manifest(&args.manifest)?;
    refuse_non_empty(&args.out, args.force)?;
    let root = corpus_root(&args.manifest);
    let train_data = load_split(&root, &manifest, &training_split(&hold_out))?;
    let eval_data = if hold_out.is_empty() {
        train_data.clone()
    } else {
        load_split(&root, &manifest, &Split::Speakers(hold_out.iter().copied().collect()))?
    };
    let report = run_ablation(&model_cfg, &specs, &train_data, &eval_data, &train_cfg, args.jobs)?;
    report.write(&args.out)?;
    args.config.save(&args.out.join(RUN_CONFIG_FILE))?;
    log.write_all(report.csv().as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

pub struct GradcheckArgs {
    pub suite: SuiteOptions,
    pub out: Option<PathBuf>,
}

pub const GRADCHECK_FILE: &str = "gradcheck.tsv";

pub fn gradcheck(args: &GradcheckArgs, log: &mut dyn Write) -> Result<()> {
    let rows = run_suite(&args.suite)?;
    let table = suite_table(&rows);
    log.write_all(table.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let p = dir.join(GRADCHECK_FILE);
        std::fs::write(&p, &table).map_err(|e| Error::io(&p, e))?;
    }
    let mut failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.report.passed)
        .map(|r| r.report.op_name.as_str())
        .collect();
    failed.dedup();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
