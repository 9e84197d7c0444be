//! The learned two-timescale pipeline.
//!
//! A slow loop trains pilots end-to-end, feeds back a handful of hard bits,
//! and steers the analog arrays from a sliding window of recovered channels;
//! a fast loop reuses those beams and keeps only the small equivalent channel
//! current with a much cheaper code. The submodules split along that seam:
//!
//! * [`model`] — dimensions, network stacks, parameter registration, and
//!   checkpointing for the whole pipeline;
//! * [`forward`] — the differentiable signal chains for both timescales,
//!   including reduced-hardware deployment adapters;
//! * [`window`] — the bounded history of recovered channels behind the
//!   analog heads;
//! * [`phases`] — phase/matrix conversions, phase-shifter quantization, and
//!   the slow exponential averaging of deployed beams across frames;
//! * [`train`] — optimization loops: alternating two-timescale training,
//!   the single-timescale ablation, quantized-feedback retraining, and
//!   transfer fine-tuning;
//! * [`eval`] — frame-structured evaluation with feedback-bit accounting.

pub mod eval;
pub mod forward;
pub mod model;
pub mod phases;
pub mod train;
pub mod window;

pub use eval::{evaluate, EvalConfig, EvalReport, Scheme};
pub use forward::{
    bce_targets, soft_bits_rows, ActiveRf, CodeSource, FeatureBlock, ForwardOpts, LongBatch,
    LongForward, PilotArtifacts, ShortBatch, ShortForward,
};
pub use model::{FeedbackMode, ModelConfig, Pipeline, SystemDims};
pub use phases::{
    averaging_gamma, extract_phases, phases_to_analog, quantize_phases, LongTermPhaseState,
};
pub use train::{
    train_single_timescale, train_two_timescale, transfer_finetune, two_step_feedback_training,
    SlotKind, TrainConfig, TrainRecord, TwoStepOutcome,
};
pub use window::SlidingWindow;
