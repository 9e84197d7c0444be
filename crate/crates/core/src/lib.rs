//! Link-level simulator and training framework for two-timescale learned
//! hybrid precoding over clustered mmWave MIMO channels.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`] — complex dense matrices, an SVD, and seeded RNG streams.
//! * [`channel`] — clustered geometric channel realizations and dataset
//!   generation, including the Doppler-style delay model.
//! * [`phy`] — the deterministic link math: QAM mapping, pilot observation
//!   models, precoder normalization, the transmit/receive chain, and the
//!   BER/BCE metrics.
//! * [`nngine`] — a minimal reverse-mode engine for dense networks (tape,
//!   layers, Adam, checkpoints, finite-difference verification).
//! * [`twoscale`] — the learned long-term/short-term pipeline: model
//!   definitions, training loops, slot-structured evaluation, and the
//!   generalization adapters.
//! * [`baselines`] — classical reference schemes: Lloyd-Max quantization,
//!   OMP channel estimation, SVD-based hybrid precoding, and the signaling
//!   overhead accounting.
//! * [`harness`] — experiment configs, sweeps, CSV/SVG emission, and the
//!   CLI entry points.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod harness;
pub mod nngine;
pub mod numerics;
pub mod phy;
pub mod twoscale;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
