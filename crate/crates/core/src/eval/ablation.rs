use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::Example;
use crate::model::{Model, ModelConfig};
use crate::train::{evaluate_l2, fit, Lambdas, TrainConfig, METRICS_HEADER};
use crate::{Error, Result};

pub const REPORT_FILE: &str = "ablation.csv";
pub const REPORT_HEADER: &str = "Method,# Parameters,Error";
pub const BASE_ROW: &str = "Base";

/// Architecture and loss switches varied by the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    pub pyramid: bool,
    pub attention: bool,
    pub bidirectional: bool,
    pub cnn: bool,
    pub reduction: usize,
    pub kl: bool,
}

impl Toggles {
    /// Every component off and one frame per step.
    pub const BASE: Toggles = Toggles {
        pyramid: false,
        attention: false,
        bidirectional: false,
        cnn: false,
        reduction: 1,
        kl: false,
    };

    fn differences(&self, other: &Toggles) -> usize {
        [
            self.pyramid != other.pyramid,
            self.attention != other.attention,
            self.bidirectional != other.bidirectional,
            self.cnn != other.cnn,
            self.reduction != other.reduction,
            self.kl != other.kl,
        ]
        .iter()
        .filter(|&&d| d)
        .count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AblationSpec {
    pub name: String,
    pub toggles: Toggles,
}

impl AblationSpec {
    pub fn base() -> Self {
        AblationSpec {
            name: BASE_ROW.into(),
            toggles: Toggles::BASE,
        }
    }

    /// Model and training configurations of this row. KL rows add the KL
    /// term with weight one to the L2 objective.
    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let t = self.toggles;
        let m = ModelConfig {
            pyramid: t.pyramid,
            attention: t.attention,
            bidirectional: t.bidirectional,
            cnn: t.cnn,
            reduction: t.reduction,
            ..model.clone()
        };
        let mut tr = train.clone();
        tr.lambdas = if t.kl {
            Lambdas::new(1.0, train.lambdas.l2, train.lambdas.xent)
        } else {
            Lambdas::new(0.0, train.lambdas.l2, train.lambdas.xent)
        };
        (m, tr)
    }
}

/// Spec file for the rows compared against the base, one component each.
pub const DEFAULT_SPECS: &str = "\
KL kl=on
Pyramid pyramid=on
Attention attention=on
Bidirectional bidirectional=on
CNN cnn=on
DMO-3 r=3
";

pub fn default_specs() -> Vec<AblationSpec> {
    parse_specs(DEFAULT_SPECS).expect("built-in specs parse")
}

fn parse_switch(v: &str) -> Option<bool> {
    match v {
        "on" | "true" | "1" => Some(true),
        "off" | "false" | "0" => Some(false),
        _ => None,
    }
}

/// One row per line: `Name key=value ...` with keys `pyramid`, `attention`,
/// `bidirectional`, `cnn`, `kl` (`on`/`off`) and `r`. Unset keys keep the
/// base value. `#` starts a comment.
pub fn parse_specs(text: &str) -> Result<Vec<AblationSpec>> {
    let mut specs: Vec<AblationSpec> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            line: n + 1,
            message,
        };
        let mut parts = line.split_whitespace();
        let name = parts.next().expect("non-empty line").to_string();
        let mut t = Toggles::BASE;
        let mut seen: Vec<&str> = Vec::new();
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(format!("expected key=value, found {kv:?}")))?;
            if seen.contains(&k) {
                return Err(Error::Config(format!(
                    "row {name}: toggle {k} given more than once"
                )));
            }
            seen.push(k);
            let switch = || parse_switch(v).ok_or_else(|| perr(format!("{k}: expected on/off, found {v:?}")));
            match k {
                "pyramid" => t.pyramid = switch()?,
                "attention" => t.attention = switch()?,
                "bidirectional" => t.bidirectional = switch()?,
                "cnn" => t.cnn = switch()?,
                "kl" => t.kl = switch()?,
                "r" => {
                    t.reduction = v
                        .parse()
                        .map_err(|_| perr(format!("r: expected a positive integer, found {v:?}")))?
                }
                _ => return Err(perr(format!("unknown toggle {k:?}"))),
            }
        }
        specs.push(AblationSpec { name, toggles: t });
    }
    Ok(specs)
}

/// Rows must be uniquely named, must not reuse the base name and must each
/// differ from the base in exactly one toggle.
pub fn validate_specs(specs: &[AblationSpec]) -> Result<()> {
    for (i, s) in specs.iter().enumerate() {
        if s.name == BASE_ROW || s.name.contains(',') {
            return Err(Error::Config(format!("invalid row name {:?}", s.name)));
        }
        if specs[..i].iter().any(|o| o.name == s.name) {
            return Err(Error::Config(format!("duplicate row {:?}", s.name)));
        }
        if s.toggles.reduction == 0 {
            return Err(Error::Config(format!("row {}: r must be at least 1", s.name)));
        }
        let d = s.toggles.differences(&Toggles::BASE);
        if d != 1 {
            return Err(Error::Config(format!(
                "row {} changes {d} toggles; each row must change exactly one",
                s.name
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub parameters: usize,
    /// Teacher-forced masked MSE on the evaluation split.
    pub error: f64,
    /// Per-step training metrics (the loss curve).
    pub curve: Vec<crate::train::MetricsRow>,
    /// Mean wall-clock per training epoch in milliseconds.
    pub epoch_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn format_error(e: f64) -> String {
    format!("{e:.6E}")
}

impl AblationReport {
    pub fn csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.name, r.parameters, format_error(r.error)));
        }
        s
    }

    /// Writes the report and one `curve_<name>.csv` per row.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(REPORT_FILE);
        std::fs::write(&p, self.csv()).map_err(|e| Error::io(&p, e))?;
        for r in &self.rows {
            let mut s = format!("{METRICS_HEADER}\n");
            for m in &r.curve {
                s.push_str(&m.csv_line());
                s.push('\n');
            }
            let p = dir.join(format!("curve_{}.csv", r.name));
            std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn run_row(
    spec: &AblationSpec,
    model: &ModelConfig,
    train: &TrainConfig,
    train_data: &[Example],
    eval_data: &[Example],
) -> Result<AblationRow> {
    let (m, t) = spec.apply(model, train);
    let clock = Instant::now();
    let out = fit(&m, &t, train_data, None, false)?;
    let elapsed = clock.elapsed().as_secs_f64() * 1000.0;
    let epochs = (t.max_steps as f64 * t.batch_size as f64 / train_data.len() as f64).max(1e-9);
    let trained = Model::from_params(m.clone(), out.checkpoint.params)?;
    Ok(AblationRow {
        name: spec.name.clone(),
        parameters: m.count_params().total(),
        error: evaluate_l2(&trained, eval_data)?,
        curve: out.metrics,
        epoch_ms: elapsed / epochs,
    })
}

/// Trains the base row and every spec with identical seed and budget.
/// Rows run on up to `jobs` threads; each row is deterministic on its own.
pub fn run_ablation(
    base_model: &ModelConfig,
    specs: &[AblationSpec],
    train_data: &[Example],
    eval_data: &[Example],
    train: &TrainConfig,
    jobs: usize,
) -> Result<AblationReport> {
    validate_specs(specs)?;
    let mut all = vec![AblationSpec::base()];
    all.extend(specs.iter().cloned());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    let rows = pool.install(|| {
        all.par_iter()
            .map(|s| run_row(s, base_model, train, train_data, eval_data))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AblationReport { rows })
}
