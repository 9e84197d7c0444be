//! A minimal reverse-mode engine for the dense networks in this project.
//!
//! Organization:
//!
//! - [`tape`] — the real-valued autodiff core: matrix nodes, ops, backward
//! - [`complex`] — complex matrices as node pairs, constant-modulus helpers
//! - [`layers`] — layer specs, initialization, the MLP forward pass
//! - [`store`] — named parameters, Adam, training schedules
//! - [`gradcheck`] — finite-difference certification of every gradient path
//! - [`checkpoint`] — bit-exact persistence of parameters and position
//!
//! Scope is deliberately narrow: dense stacks with batch norm, dropout,
//! residual blocks, and the straight-through binary feedback layer. There
//! is no graph compiler and no parallel execution; a training step builds
//! one tape, walks it backward, and applies one optimizer update. Inference
//! on a frozen store is read-only and freely shareable.

pub mod checkpoint;
pub mod complex;
pub mod gradcheck;
pub mod layers;
pub mod store;
pub mod tape;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_with, save_checkpoint, save_checkpoint_with, SchedulePos,
};
pub use complex::{guard_unit_modulus, register_pair, CNode};
pub use gradcheck::{check_gradients, sample_coords, GradCheckReport, FD_STEP, FD_TOL};
pub use layers::{Activation, ForwardCtx, LayerSpec, Mlp, BN_MOMENTUM};
pub use store::{anneal_slope, AnnealRule, ParameterStore, TrainSchedule};
pub use tape::{hard_sign_value, sigmoid, surrogate_slope, NodeId, Tape};
