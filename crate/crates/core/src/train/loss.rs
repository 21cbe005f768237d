use crate::{Error, Result};

/// Floor added to every spectrogram value before per-frame normalization.
pub const KL_FLOOR: f64 = 1e-8;

/// Mixing weights `(λ1, λ2, λ3)` for KL, L2 and cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lambdas {
    pub kl: f64,
    pub l2: f64,
    pub xent: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            kl: 0.0,
            l2: 1.0,
            xent: 0.0,
        }
    }
}

impl Lambdas {
    pub fn new(kl: f64, l2: f64, xent: f64) -> Self {
        Lambdas { kl, l2, xent }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kl", self.kl), ("l2", self.l2), ("xent", self.xent)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("lambda {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn combine(&self, kl: f64, l2: f64, xent: f64) -> f64 {
        self.kl * kl + self.l2 * l2 + self.xent * xent
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l2: f64,
    pub kl: f64,
    pub xent: f64,
    pub mixed: f64,
    pub lambdas: Lambdas,
}

impl LossBreakdown {
    pub fn new(l2: f64, kl: f64, xent: f64, lambdas: Lambdas) -> Result<Self> {
        lambdas.validate()?;
        for (name, v) in [("l2", l2), ("kl", kl), ("xent", xent)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Numeric(format!("{name} loss is {v}")));
            }
        }
        Ok(LossBreakdown {
            l2,
            kl,
            xent,
            mixed: lambdas.combine(kl, l2, xent),
            lambdas,
        })
    }
}

fn check(op: &str, a: usize, b: usize, width: usize, mask: &[bool]) -> Result<()> {
    if a != b || width == 0 || a != mask.len() * width {
        return Err(Error::Dimension(format!(
            "{op}: {a} and {b} values for {} rows of width {width}",
            mask.len()
        )));
    }
    Ok(())
}

/// Mean of `(y − ŷ)²` over the elements of valid rows.
pub fn loss_l2(y: &[f64], y_hat: &[f64], width: usize, mask: &[bool]) -> Result<f64> {
    check("loss_l2", y.len(), y_hat.len(), width, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for j in r * width..(r + 1) * width {
            let d = y[j] - y_hat[j];
            sum += d * d;
        }
        count += width;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Frame-wise `KL(P‖Q)` averaged over valid rows; each row becomes a
/// distribution after adding [`KL_FLOOR`].
pub fn loss_kl(p: &[f64], q: &[f64], width: usize, mask: &[bool]) -> Result<f64> {
    check("loss_kl", p.len(), q.len(), width, mask)?;
    let mut sum = 0.0;
    let mut rows = 0usize;
    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let pr = &p[r * width..(r + 1) * width];
        let qr = &q[r * width..(r + 1) * width];
        let sp: f64 = pr.iter().map(|v| v + KL_FLOOR).sum();
        let sq: f64 = qr.iter().map(|v| v + KL_FLOOR).sum();
        let kl: f64 = pr
            .iter()
            .zip(qr)
            .map(|(a, b)| {
                let pj = (a + KL_FLOOR) / sp;
                let qj = (b + KL_FLOOR) / sq;
                pj * (pj / qj).ln()
            })
            .sum();
        sum += kl.max(0.0);
        rows += 1;
    }
    Ok(if rows == 0 { 0.0 } else { sum / rows as f64 })
}

/// Mean over valid cells of `−log softmax(logits)[bin]`; `logits` holds `k`
/// values per cell.
pub fn loss_xent(logits: &[f64], k: usize, bins: &[usize], mask: &[bool]) -> Result<f64> {
    if k == 0 || logits.len() != bins.len() * k || bins.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "loss_xent: {} logits, {} labels, {} mask entries, K = {k}",
            logits.len(),
            bins.len(),
            mask.len()
        )));
    }
    if let Some(b) = bins.iter().find(|&&b| b >= k) {
        return Err(Error::Range(format!("bin {b} outside [0, {k})")));
    }
    let mut sum = 0.0;
    let mut cells = 0usize;
    for (c, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let row = &logits[c * k..(c + 1) * k];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        sum += mx + z.ln() - row[bins[c]];
        cells += 1;
    }
    Ok(if cells == 0 { 0.0 } else { sum / cells as f64 })
}

/// Everything needed to evaluate the three losses on one prediction.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a> {
    /// Ground truth `Y`.
    pub target: &'a [f64],
    /// Prediction `Ŷ`.
    pub prediction: &'a [f64],
    /// Frame width.
    pub width: usize,
    pub mask: &'a [bool],
    /// `K` logits per cell plus the true bins, when a quantized head exists.
    pub quantized: Option<(&'a [f64], usize, &'a [usize])>,
}

/// All three components plus their λ-weighted sum. Cross-entropy is zero
/// when no quantized head is present.
pub fn mixed_loss(inputs: &LossInputs<'_>, lambdas: Lambdas) -> Result<LossBreakdown> {
    lambdas.validate()?;
    let l2 = loss_l2(inputs.target, inputs.prediction, inputs.width, inputs.mask)?;
    let kl = loss_kl(inputs.prediction, inputs.target, inputs.width, inputs.mask)?;
    let xent = match inputs.quantized {
        Some((logits, k, bins)) => {
            let cells: Vec<bool> = inputs
                .mask
                .iter()
                .flat_map(|&m| std::iter::repeat_n(m, inputs.width))
                .collect();
            loss_xent(logits, k, bins, &cells)?
        }
        None => 0.0,
    };
    LossBreakdown::new(l2, kl, xent, lambdas)
}
