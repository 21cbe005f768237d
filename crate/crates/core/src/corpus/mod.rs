//! Synthetic parallel speech corpus built by concatenating per-word recordings.

mod dataset;
mod generate;
mod lexicon;
mod manifest;
mod render;
mod sentences;

pub use dataset::{load_example, load_examples, load_split, Example, Split};
pub use generate::{
    generate_corpus, plan_corpus, render_pair, CorpusConfig, PlannedUtterance, MANIFEST_FILE,
};
pub use lexicon::{
    build_lexicon, speaker_name, word_name, Lexicon, LexiconConfig, LexiconEntry, Sex, Speaker,
    WordSignature, F0_RANGE, MAX_WORD_MS, MIN_WORD_MS,
};
pub use manifest::{
    manifest_to_string, parse_manifest, read_manifest, write_manifest, CorpusManifest,
    UtteranceRecord,
};
pub use render::{render_utterance, resample_linear, RenderOptions, RenderedUtterance};
pub use sentences::{
    default_templates, reorder, sample_sentences, Pos, SentencePair, SentenceTemplate, Tier,
};
