use std::path::Path;

use sonotrans_tensor::Real;

use crate::corpus::Example;
use crate::dsp::image::write_spectrogram_png;
use crate::model::{Mode, Model};
use crate::train::evaluate_l2;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnseenSpeakerResult {
    pub train_mse: f64,
    pub held_out_mse: f64,
    /// `held_out_mse / train_mse`.
    pub ratio: f64,
}

/// Fails unless the held-out speakers are absent from training and every
/// held-out example belongs to one of them.
pub fn check_speaker_protocol(
    train: &[Example],
    held: &[Example],
    held_out: &[usize],
) -> Result<()> {
    if held_out.is_empty() || held.is_empty() {
        return Err(Error::Protocol("no held-out speakers or utterances".into()));
    }
    if let Some(ex) = train.iter().find(|e| held_out.contains(&e.speaker_id)) {
        return Err(Error::Protocol(format!(
            "held-out speaker {} appears in training utterance {}",
            ex.speaker_id, ex.id
        )));
    }
    if let Some(ex) = held.iter().find(|e| !held_out.contains(&e.speaker_id)) {
        return Err(Error::Protocol(format!(
            "evaluation utterance {} belongs to training speaker {}",
            ex.id, ex.speaker_id
        )));
    }
    Ok(())
}

/// Teacher-forced masked MSE on the training and held-out splits.
/// `check_protocol = false` skips the speaker check, for degenerate controls.
pub fn unseen_speaker_eval<R: Real>(
    model: &Model<R>,
    train: &[Example],
    held: &[Example],
    held_out: &[usize],
    check_protocol: bool,
) -> Result<UnseenSpeakerResult> {
    if check_protocol {
        check_speaker_protocol(train, held, held_out)?;
    }
    let train_mse = evaluate_l2(model, train)?;
    let held_out_mse = evaluate_l2(model, held)?;
    Ok(UnseenSpeakerResult {
        train_mse,
        held_out_mse,
        ratio: held_out_mse / train_mse,
    })
}

/// Writes `{id}_input.png`, `{id}_pred.png` and `{id}_truth.png` for each
/// example, the prediction decoded free-running to the target length.
pub fn export_triptychs<R: Real>(model: &Model<R>, examples: &[Example], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for ex in examples {
        let pred = model.forward(
            &ex.source,
            Mode::FreeRunning {
                frames: ex.target.frames(),
            },
        )?;
        write_spectrogram_png(&dir.join(format!("{}_input.png", ex.id)), &ex.source)?;
        write_spectrogram_png(&dir.join(format!("{}_pred.png", ex.id)), &pred.spectrogram)?;
        write_spectrogram_png(&dir.join(format!("{}_truth.png", ex.id)), &ex.target)?;
    }
    Ok(())
}
