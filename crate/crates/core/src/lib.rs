//! Continuous 3-D hand trajectory decoding from multi-channel EEG.
//!
//! The crate covers the whole offline chain: trial I/O and synthetic oracle
//! data ([`dataio`]), filtering and alignment ([`preprocess`]), sLORETA
//! source imaging for channel selection ([`sourceloc`]), the lagged linear
//! baseline ([`mlr`]), wavelet packet features ([`wpd`]), a small
//! deterministic neural engine with the MLP and CNN-LSTM decoders
//! ([`neural`]), correlation and significance testing ([`eval`]), and the
//! pipeline driver behind the `handkin` binary ([`cli`]).

pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod mlr;
pub mod neural;
pub mod preprocess;
pub mod sourceloc;
pub mod wpd;

pub use error::{Error, Result};
