//! Uplink signaling cost accounting.
//!
//! Every scheme pays a different price to tell the transmitter what it
//! needs: conventional designs feed back quantized channel coefficients
//! (full channel, or the RF-reduced equivalent channel on short slots),
//! learned designs feed back their binary message directly. These counters
//! are exact integers — they are the x-axis of the overhead/performance
//! trade-off plots, so nothing here is approximated.

use crate::{Error, Result};

/// Frame geometry the overhead is counted over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadDims {
    /// Number of frames in the accounting window.
    pub frames: u64,
    /// Slots per frame; the last slot of each frame carries the long-term
    /// (full-dimension) feedback, the rest carry short-term feedback.
    pub slots_per_frame: u64,
    pub n_t: u64,
    pub n_r: u64,
}

/// Which feedback scheme is being priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverheadScheme {
    /// Full CSI fed back every slot, `csi_bits_per_coeff` bits per complex
    /// coefficient.
    ConventionalSingle { csi_bits_per_coeff: u64 },
    /// Full CSI once per frame plus the RF-domain equivalent channel on the
    /// remaining slots.
    ConventionalTwo {
        csi_bits_per_coeff: u64,
        n_rf_tx: u64,
        n_rf_rx: u64,
    },
    /// Learned binary feedback of `feedback_bits` every slot.
    LearnedSingle { feedback_bits: u64 },
    /// Learned long-term feedback once per frame plus a short message on the
    /// remaining slots.
    LearnedTwo {
        feedback_bits: u64,
        short_feedback_bits: u64,
    },
}

/// Total uplink feedback bits for `scheme` over the accounting window.
/// Exact integer arithmetic; an accounting window large enough to overflow
/// 64 bits is reported as a numerical error rather than wrapped.
pub fn signaling_overhead(scheme: OverheadScheme, dims: &OverheadDims) -> Result<u64> {
    if dims.slots_per_frame == 0 {
        return Err(Error::Domain {
            op: "signaling_overhead",
            details: "a frame needs at least one slot".into(),
        });
    }
    if dims.n_t == 0 || dims.n_r == 0 {
        return Err(Error::Domain {
            op: "signaling_overhead",
            details: format!("array sizes {}x{} must be positive", dims.n_r, dims.n_t),
        });
    }
    let short_slots = dims.slots_per_frame - 1;
    let per_frame = match scheme {
        OverheadScheme::ConventionalSingle { csi_bits_per_coeff } => dims
            .slots_per_frame
            .checked_mul(csi_bits_per_coeff)
            .and_then(|b| b.checked_mul(dims.n_r))
            .and_then(|b| b.checked_mul(dims.n_t)),
        OverheadScheme::ConventionalTwo {
            csi_bits_per_coeff,
            n_rf_tx,
            n_rf_rx,
        } => short_slots
            .checked_mul(n_rf_rx)
            .and_then(|b| b.checked_mul(n_rf_tx))
            .and_then(|b| b.checked_add(dims.n_r.checked_mul(dims.n_t)?))
            .and_then(|b| b.checked_mul(csi_bits_per_coeff)),
        OverheadScheme::LearnedSingle { feedback_bits } => {
            dims.slots_per_frame.checked_mul(feedback_bits)
        }
        OverheadScheme::LearnedTwo {
            feedback_bits,
            short_feedback_bits,
        } => short_slots
            .checked_mul(short_feedback_bits)
            .and_then(|b| b.checked_add(feedback_bits)),
    };
    per_frame
        .and_then(|b| b.checked_mul(dims.frames))
        .ok_or_else(|| Error::Numerical("signaling overhead overflows u64".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DIMS: OverheadDims = OverheadDims {
        frames: 10,
        slots_per_frame: 10,
        n_t: 64,
        n_r: 32,
    };

    #[test]
    fn reference_configurations_count_exactly() {
        let conv_single = signaling_overhead(
            OverheadScheme::ConventionalSingle { csi_bits_per_coeff: 4 },
            &DIMS,
        )
        .unwrap();
        assert_eq!(conv_single, 819_200);

        let conv_two = signaling_overhead(
            OverheadScheme::ConventionalTwo {
                csi_bits_per_coeff: 4,
                n_rf_tx: 8,
                n_rf_rx: 4,
            },
            &DIMS,
        )
        .unwrap();
        // 10 frames * 4 bits * (9 slots * 4*8 + 32*64)
        assert_eq!(conv_two, 10 * 4 * (9 * 32 + 2048));

        let learned_single = signaling_overhead(
            OverheadScheme::LearnedSingle { feedback_bits: 64 },
            &DIMS,
        )
        .unwrap();
        assert_eq!(learned_single, 6_400);

        let learned_two = signaling_overhead(
            OverheadScheme::LearnedTwo {
                feedback_bits: 64,
                short_feedback_bits: 16,
            },
            &DIMS,
        )
        .unwrap();
        assert_eq!(learned_two, 2_080);
    }

    #[test]
    fn degenerate_frames_are_rejected() {
        let bad = OverheadDims { slots_per_frame: 0, ..DIMS };
        assert!(signaling_overhead(
            OverheadScheme::LearnedSingle { feedback_bits: 1 },
            &bad
        )
        .is_err());
        let bad = OverheadDims { n_t: 0, ..DIMS };
        assert!(signaling_overhead(
            OverheadScheme::LearnedSingle { feedback_bits: 1 },
            &bad
        )
        .is_err());
    }

    #[test]
    fn overflow_is_an_error_not_a_wraparound() {
        let huge = OverheadDims { frames: u64::MAX, ..DIMS };
        let err = signaling_overhead(
            OverheadScheme::ConventionalSingle { csi_bits_per_coeff: 64 },
            &huge,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "got {err:?}");
    }

    proptest! {
        /// Two-timescale conventional feedback is strictly cheaper than
        /// per-slot full CSI whenever frames have short slots and the RF
        /// domain is smaller than the antenna domain.
        #[test]
        fn reduced_dimension_feedback_is_cheaper(
            frames in 1u64..64,
            slots in 2u64..32,
            bits in 1u64..8,
            n_t in 2u64..64,
            n_r in 2u64..64,
            rf_t in 1u64..8,
            rf_r in 1u64..8,
        ) {
            prop_assume!(rf_t < n_t && rf_r < n_r);
            let dims = OverheadDims { frames, slots_per_frame: slots, n_t, n_r };
            let full = signaling_overhead(
                OverheadScheme::ConventionalSingle { csi_bits_per_coeff: bits },
                &dims,
            ).unwrap();
            let reduced = signaling_overhead(
                OverheadScheme::ConventionalTwo {
                    csi_bits_per_coeff: bits,
                    n_rf_tx: rf_t,
                    n_rf_rx: rf_r,
                },
                &dims,
            ).unwrap();
            prop_assert!(reduced < full, "{reduced} !< {full}");
        }

        /// The learned two-timescale message never costs more than sending
        /// the long message every slot, as long as the short message is the
        /// smaller of the two.
        #[test]
        fn short_messages_never_cost_extra(
            frames in 1u64..64,
            slots in 1u64..32,
            long_bits in 1u64..256,
            short_bits in 1u64..256,
        ) {
            prop_assume!(short_bits <= long_bits);
            let dims = OverheadDims { frames, slots_per_frame: slots, n_t: 16, n_r: 8 };
            let single = signaling_overhead(
                OverheadScheme::LearnedSingle { feedback_bits: long_bits },
                &dims,
            ).unwrap();
            let two = signaling_overhead(
                OverheadScheme::LearnedTwo {
                    feedback_bits: long_bits,
                    short_feedback_bits: short_bits,
                },
                &dims,
            ).unwrap();
            prop_assert!(two <= single, "{two} > {single}");
        }
    }
}
