//! Classical reference schemes the learned pipeline is measured against.
//!
//! Four families, mirroring how a conventional limited-feedback system would
//! be built:
//!
//! * [`quantizer`] — Lloyd-Max scalar quantization, the workhorse for both
//!   the parameter-feedback baseline and the two-step feedback-binarization
//!   procedure.
//! * [`omp`] — sparse channel estimation on an angular dictionary, the
//!   conventional way to recover a clustered channel from few pilots.
//! * [`svd`] — hybrid precoding from (estimated or perfect) full CSI by
//!   approximating the SVD beamformers under the constant-modulus
//!   constraint.
//! * [`feedback`] — scalar-quantized physical channel parameters as the
//!   conventional feedback message.
//! * [`overhead`] — exact uplink signaling cost of each scheme, the x-axis
//!   every comparison is plotted against.
//! * [`link`] — the textbook zero-forcing receiver used to turn a classical
//!   design into a bit error rate.

pub mod feedback;
pub mod link;
pub mod omp;
pub mod overhead;
pub mod quantizer;
pub mod svd;

pub use feedback::{parameter_feedback_reconstruct, FeedbackCodebooks};
pub use link::{effective_channel, link_errors, zf_equalize};
pub use omp::{omp_estimate, AngularDictionary, OmpEstimate};
pub use overhead::{signaling_overhead, OverheadDims, OverheadScheme};
pub use quantizer::{lloyd_max_train, ScalarCodebook, MAX_BITS};
pub use svd::{
    max_principal_angle, svd_hybrid_precode, HybridDesign, DEFAULT_ROUNDS, SVD_HYBRID_LABEL,
};
