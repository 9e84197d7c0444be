//! Phase-domain handling for the RF beamforming matrices: materializing
//! constant-modulus matrices from phase vectors, finite-resolution phase
//! shifters, and the slow moving-average that smooths the deployed analog
//! configuration across frames.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::numerics::ComplexMatrix;
use crate::{Error, Result};

/// Builds an `n × n_rf` constant-modulus matrix from a column-major phase
/// vector: entry `(i, j)` has modulus `1/sqrt(n)` and phase `phases[j*n + i]`.
pub fn phases_to_analog(phases: &[f64], n: usize, n_rf: usize) -> Result<ComplexMatrix> {
    if n == 0 || n_rf == 0 {
        return Err(Error::Domain {
            op: "phases_to_analog",
            details: "matrix dimensions must be positive".into(),
        });
    }
    if phases.len() != n * n_rf {
        return Err(Error::Shape {
            op: "phases_to_analog",
            details: format!("expected {} phases for a {}x{} matrix, got {}", n * n_rf, n, n_rf, phases.len()),
        });
    }
    let modulus = 1.0 / (n as f64).sqrt();
    Ok(ComplexMatrix::from_fn(n, n_rf, |i, j| {
        Complex64::from_polar(modulus, phases[j * n + i])
    }))
}

/// Recovers the column-major phase vector of a constant-modulus matrix,
/// wrapped to `[0, 2π)`. Inverse of [`phases_to_analog`] up to wrapping.
pub fn extract_phases(m: &ComplexMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.rows() * m.cols());
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            out.push(m.at(i, j).arg().rem_euclid(TAU));
        }
    }
    out
}

/// Snaps each phase onto the uniform grid `{2πk/2^q : k = 0..2^q-1}` by circular
/// distance. `q = 0` means infinite resolution and returns the input wrapped
/// to `[0, 2π)`. Exact ties resolve to the lower grid index.
pub fn quantize_phases(phases: &[f64], q: u32) -> Vec<f64> {
    if q == 0 {
        return phases.iter().map(|p| p.rem_euclid(TAU)).collect();
    }
    let levels = 1u64 << q;
    let step = TAU / levels as f64;
    phases
        .iter()
        .map(|&p| {
            let wrapped = p.rem_euclid(TAU);
            let k_lo = ((wrapped / step).floor() as u64).min(levels - 1);
            let k_hi = (k_lo + 1) % levels;
            let d_lo = circular_distance(wrapped, k_lo as f64 * step);
            let d_hi = circular_distance(wrapped, k_hi as f64 * step);
            let k = if d_lo < d_hi {
                k_lo
            } else if d_hi < d_lo {
                k_hi
            } else {
                k_lo.min(k_hi)
            };
            k as f64 * step
        })
        .collect()
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % TAU;
    d.min(TAU - d)
}

/// Step size of the long-term moving average at frame `t` (1-based): `t^-0.8`.
/// Decays slowly enough to keep adapting yet fast enough to suppress noise.
pub fn averaging_gamma(frame: u64) -> f64 {
    assert!(frame >= 1, "frame index is 1-based");
    (frame as f64).powf(-0.8)
}

/// The deployed analog configuration: phase vectors for the RF precoder and
/// combiner, smoothed across frames by a decaying moving average. Frame 1
/// adopts the network output outright (`gamma(1) = 1`), so no separate
/// initialization is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTermPhaseState {
    phi_precoder: Vec<f64>,
    phi_combiner: Vec<f64>,
    frame: u64,
}

impl LongTermPhaseState {
    pub fn new(precoder_len: usize, combiner_len: usize) -> Self {
        Self { phi_precoder: vec![0.0; precoder_len], phi_combiner: vec![0.0; combiner_len], frame: 0 }
    }

    /// Restores a state saved mid-run.
    pub fn from_parts(phi_precoder: Vec<f64>, phi_combiner: Vec<f64>, frame: u64) -> Self {
        Self { phi_precoder, phi_combiner, frame }
    }

    pub fn precoder_phases(&self) -> &[f64] {
        &self.phi_precoder
    }

    pub fn combiner_phases(&self) -> &[f64] {
        &self.phi_combiner
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    /// Folds one frame's network proposal into the deployed state:
    /// `phi <- (1-γ_t)·phi + γ_t·proposal` with `γ_t = t^-0.8`.
    pub fn update(&mut self, proposal_precoder: &[f64], proposal_combiner: &[f64]) -> Result<f64> {
        if proposal_precoder.len() != self.phi_precoder.len()
            || proposal_combiner.len() != self.phi_combiner.len()
        {
            return Err(Error::Shape {
                op: "long_term_phase_update",
                details: format!(
                    "proposal lengths ({}, {}) do not match state lengths ({}, {})",
                    proposal_precoder.len(),
                    proposal_combiner.len(),
                    self.phi_precoder.len(),
                    self.phi_combiner.len()
                ),
            });
        }
        if proposal_precoder.iter().chain(proposal_combiner).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite phase proposal in long-term update".into()));
        }
        self.frame += 1;
        let gamma = averaging_gamma(self.frame);
        for (state, &prop) in self.phi_precoder.iter_mut().zip(proposal_precoder) {
            *state = (1.0 - gamma) * *state + gamma * prop;
        }
        for (state, &prop) in self.phi_combiner.iter_mut().zip(proposal_combiner) {
            *state = (1.0 - gamma) * *state + gamma * prop;
        }
        Ok(gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn analog_matrix_has_constant_modulus_and_column_major_layout() {
        let phases: Vec<f64> = (0..6).map(|k| 0.3 * k as f64).collect();
        let m = phases_to_analog(&phases, 3, 2).unwrap();
        let expected_mod = 1.0 / 3f64.sqrt();
        for j in 0..2 {
            for i in 0..3 {
                let e = m.at(i, j);
                assert!((e.norm() - expected_mod).abs() < 1e-12);
                assert!((e.arg() - phases[j * 3 + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_round_trip_is_tight() {
        let phases: Vec<f64> = (0..12).map(|k| (k as f64 * 0.71 + 0.1) % TAU).collect();
        let m = phases_to_analog(&phases, 4, 3).unwrap();
        let back = extract_phases(&m);
        for (a, b) in phases.iter().zip(&back) {
            let d = circular_distance(*a, *b);
            assert!(d < 1e-9, "round trip drifted: {a} vs {b}");
        }
    }

    #[test]
    fn bad_phase_vector_lengths_are_rejected() {
        assert!(phases_to_analog(&[0.0; 5], 3, 2).is_err());
        assert!(phases_to_analog(&[], 0, 2).is_err());
    }

    #[test]
    fn quantizer_snaps_to_grid_and_wraps() {
        let q = 2; // grid {0, π/2, π, 3π/2}
        let out = quantize_phases(&[0.1, std::f64::consts::FRAC_PI_2 + 0.2, -0.1, 7.0], q);
        assert!((out[0] - 0.0).abs() < 1e-12);
        assert!((out[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // -0.1 wraps to 2π - 0.1 which is closest to 0 circularly.
        assert!((out[2] - 0.0).abs() < 1e-12);
        // 7.0 wraps to ~0.717, just under the π/4 midpoint, so it snaps to 0.
        assert!((out[3] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn quantizer_tie_resolves_to_lower_index() {
        // π/2 sits exactly between the two 1-bit levels {0, π}.
        let out = quantize_phases(&[std::f64::consts::FRAC_PI_2], 1);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn zero_bits_means_passthrough_modulo_wrapping() {
        let out = quantize_phases(&[1.234, -1.0, 8.0], 0);
        assert!((out[0] - 1.234).abs() < 1e-15);
        assert!((out[1] - (TAU - 1.0)).abs() < 1e-12);
        assert!((out[2] - (8.0 - TAU)).abs() < 1e-12);
    }

    #[test]
    fn quantizer_output_cardinality_is_bounded() {
        let phases: Vec<f64> = (0..1000).map(|k| k as f64 * 0.0123).collect();
        for q in [1u32, 2, 3] {
            let out = quantize_phases(&phases, q);
            let mut levels: Vec<u64> = out.iter().map(|p| (p / (TAU / (1u64 << q) as f64)).round() as u64).collect();
            levels.sort_unstable();
            levels.dedup();
            assert!(levels.len() <= (1 << q) as usize);
        }
    }

    #[test]
    fn gamma_schedule_has_divergent_sum_and_convergent_square_sum() {
        for t in [1u64, 2, 10, 1000, 1_000_000] {
            let g = averaging_gamma(t);
            assert!(g > 0.0 && g <= 1.0, "gamma out of range at t={t}: {g}");
        }
        assert_eq!(averaging_gamma(1), 1.0);

        let partial = |n: u64, pow: f64| -> f64 { (1..=n).map(|t| (t as f64).powf(pow)).sum() };
        // Σ t^-0.8 grows like N^0.2 / 0.2: the partial sums must keep growing
        // by a wide margin between 1e5 and 1e6 terms.
        let s1_a = partial(100_000, -0.8);
        let s1_b = partial(1_000_000, -0.8);
        assert!(s1_b > 1.5 * s1_a, "step sum should diverge: {s1_a} -> {s1_b}");
        // Σ t^-1.6 converges; the tail past 1e5 terms is tiny.
        let s2_a = partial(100_000, -1.6);
        let s2_b = partial(1_000_000, -1.6);
        assert!(s2_b - s2_a < 1e-2, "square sum tail too large: {}", s2_b - s2_a);
    }

    #[test]
    fn first_update_adopts_the_proposal_exactly() {
        let mut st = LongTermPhaseState::new(3, 2);
        let g = st.update(&[0.5, 1.0, 1.5], &[2.0, 2.5]).unwrap();
        assert_eq!(g, 1.0);
        assert_eq!(st.precoder_phases(), &[0.5, 1.0, 1.5]);
        assert_eq!(st.combiner_phases(), &[2.0, 2.5]);
        assert_eq!(st.frame(), 1);
    }

    #[test]
    fn update_rejects_shape_mismatch_and_non_finite() {
        let mut st = LongTermPhaseState::new(2, 2);
        assert!(st.update(&[0.0], &[0.0, 0.0]).is_err());
        assert!(st.update(&[f64::NAN, 0.0], &[0.0, 0.0]).is_err());
        assert_eq!(st.frame(), 0, "failed updates must not advance the frame counter");
    }

    proptest! {
        // Each update is a strict contraction toward the proposal: the
        // distance to the proposal shrinks by exactly (1-γ).
        #[test]
        fn update_contracts_toward_proposal(
            state in proptest::collection::vec(-10.0f64..10.0, 4),
            prop in proptest::collection::vec(-10.0f64..10.0, 4),
            frame in 1u64..500,
        ) {
            let mut st = LongTermPhaseState::from_parts(state.clone(), vec![0.0], frame - 1);
            let before: f64 = state.iter().zip(&prop).map(|(s, p)| (s - p).powi(2)).sum::<f64>().sqrt();
            let gamma = st.update(&prop, &[0.0]).unwrap();
            let after: f64 = st.precoder_phases().iter().zip(&prop).map(|(s, p)| (s - p).powi(2)).sum::<f64>().sqrt();
            prop_assert!(after <= (1.0 - gamma) * before + 1e-9);
        }
    }
}
