//! Spoken-language translation on spectrograms.
//!
//! The pipeline is: synthesize a parallel corpus of concatenated word
//! recordings ([`corpus`]), turn audio into normalized log-magnitude
//! spectrograms ([`dsp`]), translate with a convolutional front-end,
//! pyramidal bidirectional LSTM encoder and attention decoder that emits
//! `r` frames per step ([`model`]), train it ([`train`]), score it
//! ([`eval`]) and resynthesize audio with Griffin-Lim.

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod hash;
pub mod model;
pub mod train;

pub use error::{Error, Result};
