use sonotrans_tensor::Real;

use crate::corpus::Example;
use crate::model::{Model, Mode};
use crate::train::evaluate_l2;
use crate::{Error, Result};

/// Teacher-forced and free-running masked MSE over a split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconstructionError {
    pub teacher_forced: f64,
    pub free_running: f64,
}

/// Free-running masked MSE, decoding exactly as many frames as each target.
pub fn free_running_l2<R: Real>(model: &Model<R>, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let p = model.forward(
            &ex.source,
            Mode::FreeRunning {
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

pub fn reconstruction_error<R: Real>(
    model: &Model<R>,
    examples: &[Example],
) -> Result<ReconstructionError> {
    Ok(ReconstructionError {
        teacher_forced: evaluate_l2(model, examples)?,
        free_running: free_running_l2(model, examples)?,
    })
}
