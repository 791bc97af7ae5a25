//! Simulation and analysis toolkit for comparing a classical laser
//! interferometer with a two-photon (path-entangled) phase sensor that is
//! read out by plain intensity detection.
//!
//! The crate is organized bottom-up:
//!
//! - [`state`] and [`photonics`]: the two-photon polarization state, fringe
//!   model, sensitivities and scaling limits.
//! - [`detection`]: Poisson Monte Carlo of the D± detector pair and phase
//!   estimation from the difference channel.
//! - [`spectral`]: averaged-periodogram phase-noise spectra, floor fits and
//!   the classical/quantum enhancement report.
//! - [`audio`]: membrane transducer and the end-to-end microphone pipeline
//!   with SNR analysis.
//! - [`srt`]: psychometric fits, synthetic listeners and paired statistics
//!   of speech-recognition thresholds.
//!
//! Parallel sections go through [`exec::Execution`]; with the default
//! `parallel` feature they run on rayon, otherwise sequentially, and in both
//! cases produce bit-identical output for a given seed.

pub mod audio;
pub mod config;
pub mod detection;
pub mod error;
pub mod exec;
pub mod photonics;
pub mod spectral;
pub mod srt;
pub mod state;

pub use config::{Scheme, SensorConfig};
pub use error::{Error, Result};
pub use exec::Execution;
