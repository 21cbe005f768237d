//! Central-difference gradient verification (64-bit only).

use std::collections::BTreeMap;

use rand::seq::index::sample;

use crate::error::{Result, TensorError};
use crate::rng::rng;
use crate::{Graph, ParamSet, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub per_param_errors: BTreeMap<String, f64>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Probe at most this many elements per tensor (seeded subset); `None` probes all.
    pub max_elements: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tolerance: 1e-4,
            max_elements: None,
            seed: 0,
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn grad_check<F>(
    op_name: &str,
    params: &mut ParamSet<f64>,
    eps: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    grad_check_with(op_name, params, &opts, f)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences for every parameter in `params`.
pub fn grad_check_with<F>(
    op_name: &str,
    params: &mut ParamSet<f64>,
    opts: &GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&opts.eps) {
        return Err(TensorError::Usage(format!(
            "eps {} outside [1e-7, 1e-4]",
            opts.eps
        )));
    }
    let analytic = {
        let mut g = Graph::with_params(params);
        let loss = f(&mut g)?;
        g.backward(loss)?.into_params()
    };
    let eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::with_params(ps);
        let loss = f(&mut g)?;
        if g.value(loss).len() != 1 {
            return Err(TensorError::Usage("gradient check needs a scalar".into()));
        }
        Ok(g.scalar(loss))
    };

    let mut per_param = BTreeMap::new();
    let mut max_rel = 0.0f64;
    let mut picker = rng(opts.seed);
    for p in 0..params.len() {
        let name = params.name(p).to_string();
        let n = params.tensor(p).len();
        if let Some(bad) = analytic[p].iter().find(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(format!("{name} (analytic gradient {bad})")));
        }
        let idx: Vec<usize> = match opts.max_elements {
            Some(k) if k < n => {
                let mut v = sample(&mut picker, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for i in idx {
            let orig = params.tensor(p).data()[i];
            params.tensor_mut(p).data_mut()[i] = orig + opts.eps;
            let up = eval(params);
            params.tensor_mut(p).data_mut()[i] = orig - opts.eps;
            let down = eval(params);
            params.tensor_mut(p).data_mut()[i] = orig;
            let (up, down) = (up?, down?);
            if !up.is_finite() || !down.is_finite() {
                return Err(TensorError::NonFinite(format!("{name}[{i}]")));
            }
            let numeric = (up - down) / (2.0 * opts.eps);
            worst = worst.max(relative_error(analytic[p][i], numeric));
        }
        max_rel = max_rel.max(worst);
        per_param.insert(name, worst);
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error: max_rel,
        per_param_errors: per_param,
        passed: max_rel < opts.tolerance,
    })
}
