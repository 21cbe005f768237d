//! Reconstruction error, the component ablation, embedding purity and the
//! unseen-speaker protocol.

mod ablation;
mod metrics;
mod purity;
mod unseen;

pub use ablation::{
    default_specs, parse_specs, run_ablation, validate_specs, AblationReport, AblationRow,
    AblationSpec, Toggles, BASE_ROW, DEFAULT_SPECS, REPORT_FILE, REPORT_HEADER,
};
pub use metrics::{free_running_l2, reconstruction_error, ReconstructionError};
pub use purity::{
    chance_purity, embed_examples, embedding_purity, embeddings_csv, purity_of, random_purity_control,
    word_examples, write_embeddings_csv, Embedding, PurityResult, RandomControl,
};
pub use unseen::{
    check_speaker_protocol, export_triptychs, unseen_speaker_eval, UnseenSpeakerResult,
};
